//! Value-function model `Φ(s; θ) = wᵀN(s) + ½ sᵀ(AᵀA)s + bᵀs + c` on space-time
//! inputs `s = (x, t) ∈ R^{d+1}`, where `N` is a two-layer residual network
//! `a0 = σ(K0 s + b0)`, `N = a0 + σ(K1 a0 + b1)` with `σ(x) = log(eˣ + e⁻ˣ)`.
//!
//! Besides the value and its input gradient, the model exposes a reverse-mode
//! product for the pair `(Φ, ∇Φ)`: given seeds `(v_Φ, v_∇)` it returns
//! `∂(v_Φ Φ + v_∇·∇Φ)/∂θ` and the matching input gradient (which carries the
//! Hessian-vector product `∇²Φ v_∇`). Training needs both because the rollout
//! is driven by `∇Φ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, Error, Result};
use crate::scalar::{axpy, dot, Scalar};

/// `σ(x) = log(eˣ + e⁻ˣ)`, evaluated as `|x| + log1p(e^{-2|x|})`.
pub fn activation<T: Scalar>(x: T) -> T {
    let ax = x.abs();
    ax + (-T::two() * ax).exp().ln_1p()
}

/// `(σ(x), σ'(x) = tanh(x))` from a single exponential.
#[inline]
fn activation_and_slope<T: Scalar>(x: T) -> (T, T) {
    let ax = x.abs();
    let e = (-T::two() * ax).exp();
    let t = (T::one() - e) / (T::one() + e);
    (ax + (T::one() + e).ln(), if x < T::zero() { -t } else { t })
}

#[inline]
fn slope<T: Scalar>(x: T) -> T {
    let e = (-T::two() * x.abs()).exp();
    let t = (T::one() - e) / (T::one() + e);
    if x < T::zero() {
        -t
    } else {
        t
    }
}

/// Rank of the quadratic term: `min(10, d + 1)`.
pub fn quadratic_rank(d: usize) -> usize {
    10.min(d + 1)
}

/// Number of trainable parameters for state dimension `d` and width `m`.
pub fn param_count(d: usize, m: usize) -> usize {
    let n_in = d + 1;
    let gamma = quadratic_rank(d);
    m + m * n_in + m * m + 2 * m + gamma * n_in + n_in + 1
}

/// Offsets of each parameter group in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub d: usize,
    pub m: usize,
    pub gamma: usize,
    pub w: usize,
    pub k0: usize,
    pub k1: usize,
    pub b0: usize,
    pub b1: usize,
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(d: usize, m: usize) -> Self {
        let n_in = d + 1;
        let gamma = quadratic_rank(d);
        let w = 0;
        let k0 = w + m;
        let k1 = k0 + m * n_in;
        let b0 = k1 + m * m;
        let b1 = b0 + m;
        let a = b1 + m;
        let b = a + gamma * n_in;
        let c = b + n_in;
        let len = c + 1;
        Self {
            d,
            m,
            gamma,
            w,
            k0,
            k1,
            b0,
            b1,
            a,
            b,
            c,
            len,
        }
    }

    pub fn n_in(&self) -> usize {
        self.d + 1
    }
}

/// Scratch buffers for one network evaluation.
#[derive(Debug, Clone)]
pub struct NetWorkspace<T> {
    u0: Vec<T>,
    t0: Vec<T>,
    a0: Vec<T>,
    u1: Vec<T>,
    t1: Vec<T>,
    a1: Vec<T>,
    ax: Vec<T>,
    g_u0: Vec<T>,
    du0: Vec<T>,
    da0: Vec<T>,
    du1: Vec<T>,
    du1_bar: Vec<T>,
    da0_bar: Vec<T>,
    u1_bar: Vec<T>,
    u0_bar: Vec<T>,
    a0_bar: Vec<T>,
    av: Vec<T>,
    /// Whether `a1` is current (only needed for the value `Φ`).
    has_value: bool,
}

impl<T: Scalar> NetWorkspace<T> {
    pub fn new(layout: &Layout) -> Self {
        let m = layout.m;
        let z = |n| vec![T::zero(); n];
        Self {
            u0: z(m),
            t0: z(m),
            a0: z(m),
            u1: z(m),
            t1: z(m),
            a1: z(m),
            ax: z(layout.gamma),
            g_u0: z(m),
            du0: z(m),
            da0: z(m),
            du1: z(m),
            du1_bar: z(m),
            da0_bar: z(m),
            u1_bar: z(m),
            u0_bar: z(m),
            a0_bar: z(m),
            av: z(layout.gamma),
            has_value: false,
        }
    }
}

/// The value network and its flat parameter vector `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet<T> {
    layout: Layout,
    theta: Vec<T>,
}

impl<T: Scalar> ValueNet<T> {
    /// All-zero parameters.
    pub fn zeros(d: usize, m: usize) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::config("value network needs d >= 1 and m >= 1"));
        }
        let layout = Layout::new(d, m);
        Ok(Self {
            theta: vec![T::zero(); layout.len],
            layout,
        })
    }

    pub fn from_params(d: usize, m: usize, theta: Vec<T>) -> Result<Self> {
        let net = Self::zeros(d, m)?;
        check_dim("parameter vector", net.layout.len, theta.len())?;
        Ok(Self {
            layout: net.layout,
            theta,
        })
    }

    /// Deterministic initialization: `K0` ~ N(0, 1/(d+1)), `K1` ~ N(0, 1/m),
    /// `w = 1`, `A` ~ N(0, 0.1²), biases and `c` zero.
    pub fn init(d: usize, m: usize, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(d, m)?;
        let l = net.layout;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k0 = Normal::new(0.0, 1.0 / ((d + 1) as f64).sqrt()).expect("positive std");
        let k1 = Normal::new(0.0, 1.0 / (m as f64).sqrt()).expect("positive std");
        let a = Normal::new(0.0, 0.1).expect("positive std");
        for v in &mut net.theta[l.k0..l.k1] {
            *v = T::lit(k0.sample(&mut rng));
        }
        for v in &mut net.theta[l.k1..l.b0] {
            *v = T::lit(k1.sample(&mut rng));
        }
        for v in &mut net.theta[l.a..l.b] {
            *v = T::lit(a.sample(&mut rng));
        }
        net.theta[l.w..l.w + m].fill(T::one());
        Ok(net)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn state_dim(&self) -> usize {
        self.layout.d
    }

    pub fn width(&self) -> usize {
        self.layout.m
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn params(&self) -> &[T] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.theta
    }

    pub fn workspace(&self) -> NetWorkspace<T> {
        NetWorkspace::new(&self.layout)
    }

    fn group(&self, start: usize, len: usize) -> &[T] {
        &self.theta[start..start + len]
    }

    /// Evaluates the hidden layers and `A s`, caching them in `ws`. Returns `Φ`
    /// when `need_value` is set (zero otherwise).
    fn forward(&self, x: &[T], ws: &mut NetWorkspace<T>, need_value: bool) -> T {
        let l = &self.layout;
        let n_in = l.n_in();
        let k0 = self.group(l.k0, l.m * n_in);
        let k1 = self.group(l.k1, l.m * l.m);
        let b0 = self.group(l.b0, l.m);
        let b1 = self.group(l.b1, l.m);
        let w = self.group(l.w, l.m);
        let a = self.group(l.a, l.gamma * n_in);
        let b = self.group(l.b, n_in);

        for i in 0..l.m {
            let u = dot(&k0[i * n_in..(i + 1) * n_in], x) + b0[i];
            ws.u0[i] = u;
            (ws.a0[i], ws.t0[i]) = activation_and_slope(u);
        }
        for i in 0..l.m {
            let u = dot(&k1[i * l.m..(i + 1) * l.m], &ws.a0) + b1[i];
            ws.u1[i] = u;
            if need_value {
                (ws.a1[i], ws.t1[i]) = activation_and_slope(u);
            } else {
                ws.t1[i] = slope(u);
            }
        }
        for r in 0..l.gamma {
            ws.ax[r] = dot(&a[r * n_in..(r + 1) * n_in], x);
        }
        ws.has_value = need_value;
        if !need_value {
            return T::zero();
        }
        let mut phi = T::zero();
        for i in 0..l.m {
            phi += w[i] * (ws.a0[i] + ws.a1[i]);
        }
        phi + T::half() * dot(&ws.ax, &ws.ax) + dot(b, x) + self.theta[l.c]
    }

    /// Input gradient from the cached forward pass.
    fn gradient_from_cache(&self, ws: &mut NetWorkspace<T>, grad: &mut [T]) {
        let l = &self.layout;
        let n_in = l.n_in();
        let k0 = self.group(l.k0, l.m * n_in);
        let k1 = self.group(l.k1, l.m * l.m);
        let w = self.group(l.w, l.m);
        let a = self.group(l.a, l.gamma * n_in);
        let b = self.group(l.b, n_in);

        // ∂Φ/∂a0 = w + K1ᵀ (tanh(u1) ⊙ w), then through tanh(u0).
        ws.g_u0.copy_from_slice(w);
        for (i, row) in k1.chunks_exact(l.m).enumerate() {
            let s = ws.t1[i] * w[i];
            if s != T::zero() {
                axpy(s, row, &mut ws.g_u0);
            }
        }
        for (g, &t) in ws.g_u0.iter_mut().zip(&ws.t0) {
            *g *= t;
        }
        let grad = &mut grad[..n_in];
        grad.copy_from_slice(b);
        for (row, &s) in k0.chunks_exact(n_in).zip(&ws.g_u0) {
            axpy(s, row, grad);
        }
        for (row, &s) in a.chunks_exact(n_in).zip(&ws.ax) {
            axpy(s, row, grad);
        }
    }

    /// `Φ(s; θ)`
    pub fn phi(&self, x: &[T]) -> Result<T> {
        check_dim("space-time input", self.layout.n_in(), x.len())?;
        let mut ws = self.workspace();
        Ok(self.forward(x, &mut ws, true))
    }

    /// `Φ` and `∇Φ` (first `d` entries: `∇_z Φ`, last: `∂_t Φ`).
    pub fn phi_grad(&self, x: &[T]) -> Result<(T, Vec<T>)> {
        check_dim("space-time input", self.layout.n_in(), x.len())?;
        let mut ws = self.workspace();
        let mut grad = vec![T::zero(); self.layout.n_in()];
        let v = self.phi_grad_with(x, &mut ws, &mut grad);
        Ok((v, grad))
    }

    /// Allocation-free `phi_grad`; `x` and `grad` must have length `d + 1`.
    pub fn phi_grad_with(&self, x: &[T], ws: &mut NetWorkspace<T>, grad: &mut [T]) -> T {
        let v = self.forward(x, ws, true);
        self.gradient_from_cache(ws, grad);
        v
    }

    /// `∇Φ` only; cheaper than [`phi_grad_with`](Self::phi_grad_with).
    pub fn grad_with(&self, x: &[T], ws: &mut NetWorkspace<T>, grad: &mut [T]) {
        self.forward(x, ws, false);
        self.gradient_from_cache(ws, grad);
    }

    /// `∂(v_value Φ + v_grad·∇Φ)/∂θ`.
    pub fn phi_param_adjoint(&self, x: &[T], v_value: T, v_grad: &[T]) -> Result<Vec<T>> {
        let n_in = self.layout.n_in();
        check_dim("space-time input", n_in, x.len())?;
        check_dim("gradient seed", n_in, v_grad.len())?;
        let mut ws = self.workspace();
        let mut theta_bar = vec![T::zero(); self.theta.len()];
        let mut x_bar = vec![T::zero(); n_in];
        self.vjp_with(x, v_value, v_grad, &mut ws, &mut theta_bar, &mut x_bar);
        Ok(theta_bar)
    }

    /// Reverse-mode product for `F = v_value Φ + v_grad·∇Φ` at `x`.
    ///
    /// Accumulates `∂F/∂θ` into `theta_bar` and `∂F/∂x` into `x_bar`.
    pub fn vjp_with(
        &self,
        x: &[T],
        v_value: T,
        v_grad: &[T],
        ws: &mut NetWorkspace<T>,
        theta_bar: &mut [T],
        x_bar: &mut [T],
    ) {
        self.forward(x, ws, v_value != T::zero());
        self.vjp_from_cache(x, v_value, v_grad, ws, theta_bar, x_bar);
    }

    /// Same as [`vjp_with`](Self::vjp_with) but reuses a forward pass already
    /// in `ws` (which must include the value when `sv != 0`).
    pub(crate) fn vjp_from_cache(
        &self,
        x: &[T],
        sv: T,
        v: &[T],
        ws: &mut NetWorkspace<T>,
        theta_bar: &mut [T],
        x_bar: &mut [T],
    ) {
        let l = self.layout;
        let m = l.m;
        let n_in = l.n_in();
        let (k0, k1, w, a, b) = (
            self.group(l.k0, m * n_in),
            self.group(l.k1, m * m),
            self.group(l.w, m),
            self.group(l.a, l.gamma * n_in),
            self.group(l.b, n_in),
        );

        // Tangent pass along v: dN = da0 + tanh(u1) ⊙ K1 da0, da0 = tanh(u0) ⊙ K0 v.
        for i in 0..m {
            ws.du0[i] = dot(&k0[i * n_in..(i + 1) * n_in], v);
            ws.da0[i] = ws.t0[i] * ws.du0[i];
        }
        for i in 0..m {
            ws.du1[i] = dot(&k1[i * m..(i + 1) * m], &ws.da0);
        }
        for r in 0..l.gamma {
            ws.av[r] = dot(&a[r * n_in..(r + 1) * n_in], v);
        }

        // Head: F = sv (wᵀN + ½‖Ax‖² + bᵀx + c) + wᵀdN + (Av)ᵀ(Ax) + bᵀv.
        debug_assert!(sv == T::zero() || ws.has_value);
        for i in 0..m {
            let dn_i = ws.da0[i] + ws.t1[i] * ws.du1[i];
            theta_bar[l.w + i] += dn_i;
            if sv != T::zero() {
                theta_bar[l.w + i] += sv * (ws.a0[i] + ws.a1[i]);
            }
        }
        theta_bar[l.c] += sv;
        for k in 0..n_in {
            theta_bar[l.b + k] += sv * x[k] + v[k];
            x_bar[k] += sv * b[k];
        }
        for r in 0..l.gamma {
            let (ax, av) = (ws.ax[r], ws.av[r]);
            let row = &a[r * n_in..(r + 1) * n_in];
            let bar_row = &mut theta_bar[l.a + r * n_in..l.a + (r + 1) * n_in];
            for k in 0..n_in {
                bar_row[k] += (sv * ax + av) * x[k] + ax * v[k];
                x_bar[k] += (sv * ax + av) * row[k];
            }
        }

        // Reverse through the tangent pass and the primal pass together.
        for i in 0..m {
            let t1 = ws.t1[i];
            ws.du1_bar[i] = w[i] * t1;
            let t1_bar = w[i] * ws.du1[i];
            ws.u1_bar[i] = sv * w[i] * t1 + t1_bar * (T::one() - t1 * t1);
        }
        for j in 0..m {
            ws.da0_bar[j] = w[j];
            ws.a0_bar[j] = sv * w[j];
        }
        for i in 0..m {
            let (dub, ub) = (ws.du1_bar[i], ws.u1_bar[i]);
            let row = &k1[i * m..(i + 1) * m];
            let bar_row = &mut theta_bar[l.k1 + i * m..l.k1 + (i + 1) * m];
            axpy(dub, &ws.da0, bar_row);
            axpy(ub, &ws.a0, bar_row);
            axpy(dub, row, &mut ws.da0_bar);
            axpy(ub, row, &mut ws.a0_bar);
            theta_bar[l.b1 + i] += ub;
        }
        for i in 0..m {
            let t0 = ws.t0[i];
            let du0_bar = ws.da0_bar[i] * t0;
            let t0_bar = ws.da0_bar[i] * ws.du0[i];
            ws.u0_bar[i] = ws.a0_bar[i] * t0 + t0_bar * (T::one() - t0 * t0);
            let (dub, ub) = (du0_bar, ws.u0_bar[i]);
            let row = &k0[i * n_in..(i + 1) * n_in];
            let bar_row = &mut theta_bar[l.k0 + i * n_in..l.k0 + (i + 1) * n_in];
            axpy(dub, v, bar_row);
            axpy(ub, x, bar_row);
            axpy(ub, row, &mut x_bar[..n_in]);
            theta_bar[l.b0 + i] += ub;
        }
    }

    /// Named views of the parameter groups (row-major matrices).
    pub fn groups(&self) -> ParamGroups<'_, T> {
        let l = &self.layout;
        let n_in = l.n_in();
        ParamGroups {
            w: self.group(l.w, l.m),
            k0: self.group(l.k0, l.m * n_in),
            k1: self.group(l.k1, l.m * l.m),
            b0: self.group(l.b0, l.m),
            b1: self.group(l.b1, l.m),
            a: self.group(l.a, l.gamma * n_in),
            b: self.group(l.b, n_in),
            c: self.theta[l.c],
        }
    }

    pub fn from_groups(d: usize, m: usize, g: &ParamGroups<'_, T>) -> Result<Self> {
        let mut net = Self::zeros(d, m)?;
        let l = net.layout;
        let n_in = l.n_in();
        let mut put = |start: usize, len: usize, src: &[T], what: &'static str| -> Result<()> {
            check_dim(what, len, src.len())?;
            net.theta[start..start + len].copy_from_slice(src);
            Ok(())
        };
        put(l.w, l.m, g.w, "w")?;
        put(l.k0, l.m * n_in, g.k0, "K0")?;
        put(l.k1, l.m * l.m, g.k1, "K1")?;
        put(l.b0, l.m, g.b0, "b0")?;
        put(l.b1, l.m, g.b1, "b1")?;
        put(l.a, l.gamma * n_in, g.a, "A")?;
        put(l.b, n_in, g.b, "b")?;
        net.theta[l.c] = g.c;
        Ok(net)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParamGroups<'a, T> {
    pub w: &'a [T],
    pub k0: &'a [T],
    pub k1: &'a [T],
    pub b0: &'a [T],
    pub b1: &'a [T],
    pub a: &'a [T],
    pub b: &'a [T],
    pub c: T,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_at_zero_is_ln2() {
        assert!((activation(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((activation(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn fused_activation_matches_direct_forms() {
        for i in -400..=400 {
            let x = i as f64 * 0.05;
            let (a, t) = activation_and_slope(x);
            assert!((a - activation(x)).abs() <= 1e-15 * (1.0 + a));
            assert!((t - x.tanh()).abs() <= 4.0 * f64::EPSILON);
            assert_eq!(slope(x), t);
        }
        let (_, t) = activation_and_slope(1e-12f64);
        assert!((t - 1e-12).abs() < 1e-15);
    }

    #[test]
    fn activation_does_not_overflow() {
        assert_eq!(activation(1000.0f64), 1000.0);
        assert_eq!(activation(-1000.0f64), 1000.0);
        assert!(activation(500.0f32).is_finite());
    }

    #[test]
    fn constant_net() {
        let mut net = ValueNet::<f64>::zeros(3, 4).unwrap();
        let c = net.layout().c;
        net.params_mut()[c] = 5.0;
        let (v, g) = net.phi_grad(&[0.3, -1.0, 2.0, 0.5]).unwrap();
        assert_eq!(v, 5.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rank_one_quadratic() {
        let mut net = ValueNet::<f64>::zeros(3, 4).unwrap();
        let l = *net.layout();
        // A's first row = e_2
        net.params_mut()[l.a + 2] = 1.0;
        let x = [0.3, -1.0, 2.5, 0.5];
        assert!((net.phi(&x).unwrap() - 0.5 * 2.5 * 2.5).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = ValueNet::<f64>::zeros(3, 4).unwrap();
        assert!(net.phi(&[0.0; 3]).is_err());
        assert!(net.phi_param_adjoint(&[0.0; 4], 1.0, &[0.0; 2]).is_err());
        assert!(ValueNet::<f64>::from_params(3, 4, vec![0.0; 5]).is_err());
    }

    #[test]
    fn layout_matches_param_count() {
        for &(d, m) in &[(4, 32), (4, 16), (24, 32), (150, 512), (12, 128), (1, 1)] {
            assert_eq!(Layout::new(d, m).len, param_count(d, m));
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = ValueNet::<f64>::init(4, 32, 7).unwrap();
        let b = ValueNet::<f64>::init(4, 32, 7).unwrap();
        let c = ValueNet::<f64>::init(4, 32, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let g = a.groups();
        assert!(g.w.iter().all(|&x| x == 1.0));
        assert_eq!(g.c, 0.0);
        assert!(g.b0.iter().chain(g.b1).chain(g.b).all(|&x| x == 0.0));
    }

    #[test]
    fn head_adjoints_are_trivial() {
        let net = ValueNet::<f64>::init(3, 5, 1).unwrap();
        let x = [0.2, -0.4, 0.9, 0.1];
        let l = *net.layout();
        let g = net.phi_param_adjoint(&x, 1.0, &[0.0; 4]).unwrap();
        assert_eq!(g[l.c], 1.0);
        // ∂Φ/∂w = N(x)
        let mut ws = net.workspace();
        net.forward(&x, &mut ws, true);
        for i in 0..l.m {
            assert!((g[l.w + i] - (ws.a0[i] + ws.a1[i])).abs() < 1e-14);
        }
        // v_grad = e_{d+1} → ∂/∂b = e_{d+1}
        let mut e = [0.0; 4];
        e[3] = 1.0;
        let g = net.phi_param_adjoint(&x, 0.0, &e).unwrap();
        assert_eq!(&g[l.b..l.b + 4], &[0.0, 0.0, 0.0, 1.0]);
    }
}
