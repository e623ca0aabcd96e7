use crate::scalar::{dot, Scalar};

use super::costs::{interaction_grad_acc, EnergySpec, InteractionSpec, ObstacleSpec, TerminalCost};
use super::{interaction_cost, ControlProblem, CostMode};

/// `n` agents in `R^q` with single-integrator dynamics `ż = u` and
/// `L = Σ_i (c‖u_i‖² + κ) + α2 Q(z) + α3 W(z)`.
///
/// The Hamiltonian is `‖p‖²/(4c) − nκ − α2 Q − α3 W` with feedback `u = −p/(2c)`
/// (for `c = ½`: `½‖p‖² − α2 Q − α3 W` and `u = −p`).
#[derive(Debug, Clone)]
pub struct MultiAgentProblem<T> {
    pub n_agents: usize,
    pub agent_dim: usize,
    pub horizon: T,
    pub terminal: TerminalCost<T>,
    pub alpha2: T,
    pub alpha3: T,
    pub energy: EnergySpec<T>,
    pub obstacles: ObstacleSpec<T>,
    pub interaction: InteractionSpec<T>,
    pub mode: CostMode,
}

impl<T: Scalar> MultiAgentProblem<T> {
    fn agents<'a>(&self, z: &'a [T]) -> impl Iterator<Item = &'a [T]> {
        z.chunks_exact(self.agent_dim)
    }

    pub fn obstacle_cost(&self, z: &[T]) -> T {
        if self.obstacles.is_empty() {
            return T::zero();
        }
        self.agents(z)
            .fold(T::zero(), |acc, zi| acc + self.obstacles.agent_cost(zi, self.mode))
    }

    pub fn interaction_total(&self, z: &[T]) -> T {
        interaction_cost(z, self.agent_dim, &self.interaction)
    }

    /// `α2 Q(z) + α3 W(z)`
    pub fn state_cost(&self, z: &[T]) -> T {
        let mut total = T::zero();
        if self.alpha2 != T::zero() {
            total += self.alpha2 * self.obstacle_cost(z);
        }
        if self.alpha3 != T::zero() {
            total += self.alpha3 * self.interaction_total(z);
        }
        total
    }

    /// `out += scale · ∇(α2 Q + α3 W)`
    pub fn state_cost_grad_acc(&self, z: &[T], scale: T, out: &mut [T]) {
        if self.alpha2 != T::zero() && !self.obstacles.is_empty() {
            let q = self.agent_dim;
            for (i, zi) in z.chunks_exact(q).enumerate() {
                self.obstacles.agent_grad_acc(
                    zi,
                    self.mode,
                    scale * self.alpha2,
                    &mut out[i * q..(i + 1) * q],
                );
            }
        }
        if self.alpha3 != T::zero() {
            interaction_grad_acc(z, self.agent_dim, &self.interaction, scale * self.alpha3, out);
        }
    }

    pub fn max_pair_interaction(&self, z: &[T]) -> T {
        let q = self.agent_dim;
        let mut best = T::zero();
        for i in 0..self.n_agents {
            for j in (i + 1)..self.n_agents {
                let w = self
                    .interaction
                    .pair(&z[i * q..(i + 1) * q], &z[j * q..(j + 1) * q]);
                best = best.max(w);
            }
        }
        best
    }

    pub fn any_agent_in_hard_obstacle(&self, z: &[T]) -> bool {
        self.agents(z).any(|zi| self.obstacles.in_hard_region(zi))
    }

    fn energy_offset_total(&self) -> T {
        self.energy.offset * T::from_usize(self.n_agents).unwrap()
    }
}

impl<T: Scalar> ControlProblem<T> for MultiAgentProblem<T> {
    fn state_dim(&self) -> usize {
        self.n_agents * self.agent_dim
    }

    fn control_dim(&self) -> usize {
        self.n_agents * self.agent_dim
    }

    fn horizon(&self) -> T {
        self.horizon
    }

    fn terminal(&self) -> &TerminalCost<T> {
        &self.terminal
    }

    fn hamiltonian(&self, _s: T, z: &[T], p: &[T]) -> T {
        let c = self.energy.quadratic;
        dot(p, p) / (T::lit(4.0) * c) - self.energy_offset_total() - self.state_cost(z)
    }

    fn hamiltonian_grad_p(&self, _s: T, _z: &[T], p: &[T], out: &mut [T]) {
        let k = T::one() / (T::two() * self.energy.quadratic);
        for (o, &pi) in out.iter_mut().zip(p) {
            *o = k * pi;
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
        let k = T::one() / (T::two() * self.energy.quadratic);
        for ((bp, &pi), &bh) in bar_p.iter_mut().zip(p).zip(bar_hp) {
            *bp += k * (bar_h * pi + bh);
        }
        if bar_h != T::zero() {
            self.state_cost_grad_acc(z, -bar_h, bar_z);
        }
    }

    fn feedback_control(&self, _s: T, _z: &[T], p: &[T], u: &mut [T]) {
        let k = -T::one() / (T::two() * self.energy.quadratic);
        for (ui, &pi) in u.iter_mut().zip(p) {
            *ui = k * pi;
        }
    }

    fn dynamics(&self, _s: T, _z: &[T], u: &[T], out: &mut [T]) {
        out.copy_from_slice(u);
    }

    fn dynamics_vjp(&self, _s: T, _z: &[T], _u: &[T], bar_f: &[T], _bar_z: &mut [T], bar_u: &mut [T]) {
        for (bu, &bf) in bar_u.iter_mut().zip(bar_f) {
            *bu += bf;
        }
    }

    fn running_cost(&self, _s: T, z: &[T], u: &[T]) -> T {
        self.energy.value(u, self.n_agents) + self.state_cost(z)
    }

    fn running_cost_vjp(&self, _s: T, z: &[T], u: &[T], bar: T, bar_z: &mut [T], bar_u: &mut [T]) {
        let k = T::two() * self.energy.quadratic * bar;
        for (bu, &ui) in bar_u.iter_mut().zip(u) {
            *bu += k * ui;
        }
        self.state_cost_grad_acc(z, bar, bar_z);
    }
}
