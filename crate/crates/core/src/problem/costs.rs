use crate::error::{Error, Result};
use crate::scalar::{norm_sq, Scalar};

use super::CostMode;

/// `G(z) = (α1/2)‖z − y‖²`
#[derive(Debug, Clone)]
pub struct TerminalCost<T> {
    pub alpha1: T,
    pub target: Vec<T>,
}

impl<T: Scalar> TerminalCost<T> {
    pub fn value(&self, z: &[T]) -> T {
        let sq = z
            .iter()
            .zip(&self.target)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        T::half() * self.alpha1 * sq
    }

    pub fn grad(&self, z: &[T], out: &mut [T]) {
        for ((o, &a), &b) in out.iter_mut().zip(z).zip(&self.target) {
            *o = self.alpha1 * (a - b);
        }
    }
}

/// Normalized isotropic Gaussian density `η(z; μ, σ²I)` in `q = len(μ)` dimensions.
pub fn gaussian_density<T: Scalar>(z: &[T], mean: &[T], variance: T) -> T {
    let q = mean.len() as i32;
    let two_pi = T::two() * T::PI();
    let norm = T::one() / (two_pi.powi(q) * variance.powi(q)).sqrt();
    let r2 = z
        .iter()
        .zip(mean)
        .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    norm * (-r2 / (T::two() * variance)).exp()
}

/// Isotropic Gaussian bump with precomputed normalization.
#[derive(Debug, Clone)]
pub struct Gaussian<T> {
    pub mean: Vec<T>,
    pub variance: T,
    norm: T,
}

impl<T: Scalar> Gaussian<T> {
    pub fn new(mean: Vec<T>, variance: T) -> Result<Self> {
        if !(variance > T::zero()) || !variance.is_finite() {
            return Err(Error::config(format!(
                "gaussian covariance must be positive definite, got variance {variance}"
            )));
        }
        let q = mean.len() as i32;
        let two_pi = T::two() * T::PI();
        let norm = T::one() / (two_pi.powi(q) * variance.powi(q)).sqrt();
        Ok(Self {
            mean,
            variance,
            norm,
        })
    }

    pub fn eval(&self, z: &[T]) -> T {
        let r2 = z
            .iter()
            .zip(&self.mean)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        self.norm * (-r2 / (T::two() * self.variance)).exp()
    }

    /// `out += scale · ∇η(z)`
    pub fn grad_acc(&self, z: &[T], scale: T, out: &mut [T]) {
        let eta = self.eval(z);
        let k = -scale * eta / self.variance;
        for ((o, &a), &b) in out.iter_mut().zip(z).zip(&self.mean) {
            *o += k * (a - b);
        }
    }
}

/// Hard obstacle geometry in agent space.
#[derive(Debug, Clone)]
pub enum Region<T> {
    /// Open ball `‖z − center‖ < radius`.
    Ball { center: Vec<T>, radius: T },
    /// Open axis-aligned box.
    Box { lo: Vec<T>, hi: Vec<T> },
}

impl<T: Scalar> Region<T> {
    pub fn contains(&self, z: &[T]) -> bool {
        match self {
            Region::Ball { center, radius } => {
                let r2 = z
                    .iter()
                    .zip(center)
                    .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
                r2 < *radius * *radius
            }
            Region::Box { lo, hi } => z
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&x, (&l, &h))| x > l && x < h),
        }
    }

    /// Region scaled about its center by `factor` (radius or half-extents).
    pub fn inflated(&self, factor: T) -> Self {
        match self {
            Region::Ball { center, radius } => Region::Ball {
                center: center.clone(),
                radius: *radius * factor,
            },
            Region::Box { lo, hi } => {
                let (lo, hi) = lo
                    .iter()
                    .zip(hi)
                    .map(|(&l, &h)| {
                        let c = T::half() * (l + h);
                        let half = T::half() * (h - l) * factor;
                        (c - half, c + half)
                    })
                    .unzip();
                Region::Box { lo, hi }
            }
        }
    }

    /// True when `other` lies inside `self` (same shape kind only).
    pub fn covers(&self, other: &Region<T>) -> bool {
        match (self, other) {
            (
                Region::Ball { center: c1, radius: r1 },
                Region::Ball { center: c2, radius: r2 },
            ) => {
                let d = c1
                    .iter()
                    .zip(c2)
                    .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
                    .sqrt();
                d + *r2 <= *r1
            }
            (Region::Box { lo: l1, hi: h1 }, Region::Box { lo: l2, hi: h2 }) => l1
                .iter()
                .zip(l2)
                .all(|(&a, &b)| a <= b)
                && h1.iter().zip(h2).all(|(&a, &b)| a >= b),
            _ => false,
        }
    }
}

/// Per-agent obstacle term `Q_i`.
///
/// Without hard regions `Q_i` is the sum of the Gaussians in both modes. With
/// hard regions, validation uses the indicator of the hard set while training
/// uses the Gaussian sum restricted to the (larger) training regions.
#[derive(Debug, Clone, Default)]
pub struct ObstacleSpec<T> {
    pub gaussians: Vec<Gaussian<T>>,
    pub hard_regions: Vec<Region<T>>,
    pub training_regions: Vec<Region<T>>,
}

impl<T: Scalar> ObstacleSpec<T> {
    pub fn soft(gaussians: Vec<Gaussian<T>>) -> Self {
        Self {
            gaussians,
            hard_regions: Vec::new(),
            training_regions: Vec::new(),
        }
    }

    pub fn hard(
        gaussians: Vec<Gaussian<T>>,
        hard_regions: Vec<Region<T>>,
        training_regions: Vec<Region<T>>,
    ) -> Result<Self> {
        if hard_regions.len() != training_regions.len() {
            return Err(Error::config(
                "every hard region needs exactly one training buffer region",
            ));
        }
        for (h, t) in hard_regions.iter().zip(&training_regions) {
            if !t.covers(h) {
                return Err(Error::config(
                    "training buffer region must contain its hard region",
                ));
            }
        }
        Ok(Self {
            gaussians,
            hard_regions,
            training_regions,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty() && self.hard_regions.is_empty()
    }

    pub fn in_hard_region(&self, z: &[T]) -> bool {
        self.hard_regions.iter().any(|r| r.contains(z))
    }

    fn gaussian_sum(&self, z: &[T]) -> T {
        self.gaussians.iter().fold(T::zero(), |acc, g| acc + g.eval(z))
    }

    pub fn agent_cost(&self, z: &[T], mode: CostMode) -> T {
        if self.hard_regions.is_empty() {
            return self.gaussian_sum(z);
        }
        match mode {
            CostMode::Validation => {
                if self.in_hard_region(z) {
                    T::one()
                } else {
                    T::zero()
                }
            }
            CostMode::Training => {
                if self.training_regions.iter().any(|r| r.contains(z)) {
                    self.gaussian_sum(z)
                } else {
                    T::zero()
                }
            }
        }
    }

    /// `out += scale · ∇Q_i(z)` (the indicator contributes zero almost everywhere).
    pub fn agent_grad_acc(&self, z: &[T], mode: CostMode, scale: T, out: &mut [T]) {
        let active = if self.hard_regions.is_empty() {
            true
        } else {
            mode == CostMode::Training && self.training_regions.iter().any(|r| r.contains(z))
        };
        if active {
            for g in &self.gaussians {
                g.grad_acc(z, scale, out);
            }
        }
    }
}

/// Space-bubble interaction between agents.
#[derive(Debug, Clone, Copy)]
pub struct InteractionSpec<T> {
    pub radius: T,
}

impl<T: Scalar> InteractionSpec<T> {
    pub fn new(radius: T) -> Result<Self> {
        if !(radius > T::zero()) {
            return Err(Error::config(format!(
                "interaction radius must be positive, got {radius}"
            )));
        }
        Ok(Self { radius })
    }

    /// `w(a, b)`: Gaussian kernel inside distance `2r`, zero outside.
    /// The jump at exactly `2r` (from `e^{-2}` to 0) is kept as is.
    pub fn pair(&self, a: &[T], b: &[T]) -> T {
        let d2 = a
            .iter()
            .zip(b)
            .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
        let two_r = T::two() * self.radius;
        if d2 < two_r * two_r {
            (-d2 / (T::two() * self.radius * self.radius)).exp()
        } else {
            T::zero()
        }
    }
}

/// `W(z) = Σ_{i≠j} w(z_i, z_j)` over ordered pairs of `q`-dimensional agent blocks.
pub fn interaction_cost<T: Scalar>(z: &[T], agent_dim: usize, spec: &InteractionSpec<T>) -> T {
    let n = z.len() / agent_dim;
    let mut total = T::zero();
    for i in 0..n {
        let zi = &z[i * agent_dim..(i + 1) * agent_dim];
        for j in (i + 1)..n {
            let zj = &z[j * agent_dim..(j + 1) * agent_dim];
            total += spec.pair(zi, zj);
        }
    }
    T::two() * total
}

/// `out += scale · ∇W(z)`
pub(crate) fn interaction_grad_acc<T: Scalar>(
    z: &[T],
    agent_dim: usize,
    spec: &InteractionSpec<T>,
    scale: T,
    out: &mut [T],
) {
    let n = z.len() / agent_dim;
    let inv_r2 = T::one() / (spec.radius * spec.radius);
    for i in 0..n {
        for j in (i + 1)..n {
            let (zi, zj) = (
                &z[i * agent_dim..(i + 1) * agent_dim],
                &z[j * agent_dim..(j + 1) * agent_dim],
            );
            let w = spec.pair(zi, zj);
            if w == T::zero() {
                continue;
            }
            // Both ordered pairs: factor 2.
            let k = -T::two() * scale * w * inv_r2;
            for c in 0..agent_dim {
                let delta = zi[c] - zj[c];
                out[i * agent_dim + c] += k * delta;
                out[j * agent_dim + c] -= k * delta;
            }
        }
    }
}

/// Energy `E_i(u) = c‖u‖² + κ` summed over agents (or the whole control vector).
#[derive(Debug, Clone, Copy)]
pub struct EnergySpec<T> {
    pub quadratic: T,
    /// Constant offset per energy block.
    pub offset: T,
}

impl<T: Scalar> EnergySpec<T> {
    pub fn new(quadratic: T, offset: T) -> Result<Self> {
        if !(quadratic > T::zero()) {
            return Err(Error::config("energy quadratic coefficient must be positive"));
        }
        Ok(Self { quadratic, offset })
    }

    pub fn value(&self, u: &[T], blocks: usize) -> T {
        self.quadratic * norm_sq(u) + self.offset * T::from_usize(blocks).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_peak_matches_direct_formula() {
        // 1 / sqrt((2π)² · 0.2²) = 1 / (0.4π)
        let v = gaussian_density(&[1.0, -1.0], &[1.0, -1.0], 0.2);
        assert!((v - 1.0 / (0.4 * std::f64::consts::PI)).abs() < 1e-14);
        assert!((v - 0.79577).abs() < 1e-5);
    }

    #[test]
    fn density_is_radially_symmetric_and_decays() {
        let mu = [0.3, -0.7];
        let a = gaussian_density(&[0.3 + 0.4, -0.7 - 0.1], &mu, 0.5);
        let b = gaussian_density(&[0.3 - 0.4, -0.7 + 0.1], &mu, 0.5);
        assert_eq!(a, b);
        let mut last = f64::INFINITY;
        for k in 0..40 {
            let v = gaussian_density(&[0.3 + k as f64 * 0.5, -0.7], &mu, 0.5);
            assert!(v <= last);
            last = v;
        }
        assert!(last < 1e-100);
    }

    #[test]
    fn non_positive_variance_is_rejected() {
        assert!(Gaussian::new(vec![0.0, 0.0], 0.0).is_err());
        assert!(Gaussian::new(vec![0.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn gaussian_grad_matches_fd() {
        let g = Gaussian::<f64>::new(vec![0.5, -0.25], 0.3).unwrap();
        let z = [0.1, 0.2];
        let mut grad = [0.0; 2];
        g.grad_acc(&z, 1.0, &mut grad);
        for k in 0..2 {
            let h = 1e-6;
            let mut zp = z;
            let mut zm = z;
            zp[k] += h;
            zm[k] -= h;
            let fd = (g.eval(&zp) - g.eval(&zm)) / (2.0 * h);
            assert!((fd - grad[k]).abs() <= 1e-6 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn coincident_agents_give_two() {
        let spec = InteractionSpec::new(0.5).unwrap();
        assert_eq!(interaction_cost(&[1.0, 1.0, 1.0, 1.0], 2, &spec), 2.0);
    }

    #[test]
    fn agents_at_distance_r() {
        let spec = InteractionSpec::new(0.5).unwrap();
        let w = spec.pair(&[0.0, 0.0], &[0.5, 0.0]);
        assert!((w - (-0.5f64).exp()).abs() < 1e-15);
        assert!((w - 0.60653).abs() < 1e-5);
        let total = interaction_cost(&[0.0, 0.0, 0.5, 0.0], 2, &spec);
        assert!((total - 2.0 * w).abs() < 1e-15);
    }

    #[test]
    fn far_agents_do_not_interact() {
        let spec = InteractionSpec::new(0.5).unwrap();
        assert_eq!(interaction_cost(&[0.0, 0.0, 1.0, 0.0], 2, &spec), 0.0);
        assert_eq!(interaction_cost(&[0.0, 0.0, 3.0, 0.0], 2, &spec), 0.0);
        // Just inside the cutoff the kernel is e^{-2}.
        let w = spec.pair(&[0.0, 0.0], &[1.0 - 1e-12, 0.0]);
        assert!((w - (-2.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn zero_radius_rejected() {
        assert!(InteractionSpec::new(0.0).is_err());
    }

    #[test]
    fn training_buffer_must_cover_hard_region() {
        let hard = Region::Ball {
            center: vec![0.0, 4.0],
            radius: 2.0,
        };
        let small = hard.inflated(0.9);
        assert!(ObstacleSpec::<f64>::hard(vec![], vec![hard.clone()], vec![small]).is_err());
        let big = hard.inflated(1.1);
        assert!(ObstacleSpec::<f64>::hard(vec![], vec![hard], vec![big]).is_ok());
    }

    #[test]
    fn box_inflation_keeps_center() {
        let b = Region::<f64>::Box {
            lo: vec![-2.0, -0.5, 0.0],
            hi: vec![2.0, 0.5, 7.0],
        };
        let Region::Box { lo, hi } = b.inflated(1.1) else {
            unreachable!()
        };
        assert!((lo[0] + 2.2).abs() < 1e-12 && (hi[2] - 7.35).abs() < 1e-12);
        assert!(b.contains(&[0.0, 0.0, 3.0]));
        assert!(!b.contains(&[0.0, 0.6, 3.0]));
    }
}
