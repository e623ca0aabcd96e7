use crate::scalar::Scalar;

use super::costs::{EnergySpec, TerminalCost};
use super::ControlProblem;

/// Physical constants of the quadcopter model.
#[derive(Debug, Clone, Copy)]
pub struct QuadcopterParams<T> {
    pub mass: T,
    pub gravity: T,
}

/// Single quadcopter, state `[x y z ψ θ φ v_x v_y v_z v_ψ v_θ v_φ]`,
/// control `[thrust τ_ψ τ_θ τ_φ]`, running cost `L = E(u) = κ + c‖u‖²`.
#[derive(Debug, Clone)]
pub struct QuadcopterProblem<T> {
    pub horizon: T,
    pub terminal: TerminalCost<T>,
    pub energy: EnergySpec<T>,
    pub params: QuadcopterParams<T>,
}

/// Thrust direction components `(f7, f8, f9)` and their partials with respect
/// to `(ψ, θ, φ)`: `d[k][a] = ∂f_k/∂angle_a`.
fn thrust_direction<T: Scalar>(psi: T, theta: T, phi: T) -> ([T; 3], [[T; 3]; 3]) {
    let (sps, cps) = psi.sin_cos();
    let (sth, cth) = theta.sin_cos();
    let (sph, cph) = phi.sin_cos();
    let f7 = sps * sph + cps * sth * cph;
    let f8 = -cps * sph + sps * sth * cph;
    let f9 = cth * cph;
    let d7 = [
        cps * sph - sps * sth * cph,
        cps * cth * cph,
        sps * cph - cps * sth * sph,
    ];
    let d8 = [
        sps * sph + cps * sth * cph,
        sps * cth * cph,
        -cps * cph - sps * sth * sph,
    ];
    let d9 = [T::zero(), -sth * cph, -cth * sph];
    ([f7, f8, f9], [d7, d8, d9])
}

/// First-order quadcopter dynamics `ż = f(z, u)`.
pub fn quadcopter_dynamics<T: Scalar>(z: &[T], u: &[T], params: &QuadcopterParams<T>) -> [T; 12] {
    let mut out = [T::zero(); 12];
    let (f, _) = thrust_direction(z[3], z[4], z[5]);
    out[..6].copy_from_slice(&z[6..12]);
    let a = u[0] / params.mass;
    out[6] = a * f[0];
    out[7] = a * f[1];
    out[8] = a * f[2] - params.gravity;
    out[9..12].copy_from_slice(&u[1..4]);
    out
}

impl<T: Scalar> QuadcopterProblem<T> {
    fn thrust_alignment(&self, z: &[T], p: &[T]) -> (T, [T; 3], [[T; 3]; 3]) {
        let (f, df) = thrust_direction(z[3], z[4], z[5]);
        let s = p[6] * f[0] + p[7] * f[1] + p[8] * f[2];
        (s, f, df)
    }

    /// `1 / (2 c m²)`
    fn gain(&self) -> T {
        let m = self.params.mass;
        T::one() / (T::two() * self.energy.quadratic * m * m)
    }
}

impl<T: Scalar> ControlProblem<T> for QuadcopterProblem<T> {
    fn state_dim(&self) -> usize {
        12
    }

    fn control_dim(&self) -> usize {
        4
    }

    fn horizon(&self) -> T {
        self.horizon
    }

    fn terminal(&self) -> &TerminalCost<T> {
        &self.terminal
    }

    fn hamiltonian(&self, _s: T, z: &[T], p: &[T]) -> T {
        let c = self.energy.quadratic;
        let (s_al, _, _) = self.thrust_alignment(z, p);
        let drift: T = (0..6).fold(T::zero(), |acc, i| acc + z[6 + i] * p[i]);
        let torque = p[9] * p[9] + p[10] * p[10] + p[11] * p[11];
        -self.energy.offset - drift
            + T::half() * self.gain() * s_al * s_al
            + self.params.gravity * p[8]
            + torque / (T::lit(4.0) * c)
    }

    fn hamiltonian_grad_p(&self, _s: T, z: &[T], p: &[T], out: &mut [T]) {
        let c = self.energy.quadratic;
        let (s_al, f, _) = self.thrust_alignment(z, p);
        let k = self.gain();
        for i in 0..6 {
            out[i] = -z[6 + i];
        }
        for j in 0..3 {
            out[6 + j] = k * s_al * f[j];
        }
        out[8] += self.params.gravity;
        for j in 0..3 {
            out[9 + j] = p[9 + j] / (T::two() * c);
        }
    }

    fn hamiltonian_vjp(
        &self,
        _s: T,
        z: &[T],
        p: &[T],
        bar_h: T,
        bar_hp: &[T],
        bar_z: &mut [T],
        bar_p: &mut [T],
    ) {
        let c = self.energy.quadratic;
        let (s_al, f, df) = self.thrust_alignment(z, p);
        let k = self.gain();
        // Seed on the thrust block of ∇_p H projected onto the thrust direction.
        let proj = bar_hp[6] * f[0] + bar_hp[7] * f[1] + bar_hp[8] * f[2];

        for i in 0..6 {
            bar_p[i] -= bar_h * z[6 + i];
            bar_z[6 + i] -= bar_h * p[i] + bar_hp[i];
        }
        for j in 0..3 {
            let hp = k * s_al * f[j] + if j == 2 { self.params.gravity } else { T::zero() };
            bar_p[6 + j] += bar_h * hp + k * f[j] * proj;
            bar_p[9 + j] += (bar_h * p[9 + j] + bar_hp[9 + j]) / (T::two() * c);
        }
        for a in 0..3 {
            let ds = p[6] * df[0][a] + p[7] * df[1][a] + p[8] * df[2][a];
            let dproj = bar_hp[6] * df[0][a] + bar_hp[7] * df[1][a] + bar_hp[8] * df[2][a];
            bar_z[3 + a] += bar_h * k * s_al * ds + k * (ds * proj + s_al * dproj);
        }
    }

    fn feedback_control(&self, _s: T, z: &[T], p: &[T], u: &mut [T]) {
        let c = self.energy.quadratic;
        let (s_al, _, _) = self.thrust_alignment(z, p);
        u[0] = -s_al / (T::two() * c * self.params.mass);
        for j in 0..3 {
            u[1 + j] = -p[9 + j] / (T::two() * c);
        }
    }

    fn dynamics(&self, _s: T, z: &[T], u: &[T], out: &mut [T]) {
        out.copy_from_slice(&quadcopter_dynamics(z, u, &self.params));
    }

    fn dynamics_vjp(&self, _s: T, z: &[T], u: &[T], bar_f: &[T], bar_z: &mut [T], bar_u: &mut [T]) {
        let (f, df) = thrust_direction(z[3], z[4], z[5]);
        let inv_m = T::one() / self.params.mass;
        for i in 0..6 {
            bar_z[6 + i] += bar_f[i];
        }
        bar_u[0] += inv_m * (bar_f[6] * f[0] + bar_f[7] * f[1] + bar_f[8] * f[2]);
        for a in 0..3 {
            let d = bar_f[6] * df[0][a] + bar_f[7] * df[1][a] + bar_f[8] * df[2][a];
            bar_z[3 + a] += u[0] * inv_m * d;
        }
        for j in 0..3 {
            bar_u[1 + j] += bar_f[9 + j];
        }
    }

    fn running_cost(&self, _s: T, _z: &[T], u: &[T]) -> T {
        self.energy.value(u, 1)
    }

    fn running_cost_vjp(&self, _s: T, _z: &[T], u: &[T], bar: T, _bar_z: &mut [T], bar_u: &mut [T]) {
        let k = T::two() * self.energy.quadratic * bar;
        for (bu, &ui) in bar_u.iter_mut().zip(u) {
            *bu += k * ui;
        }
    }
}
