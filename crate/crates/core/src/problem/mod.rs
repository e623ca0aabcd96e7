//! Optimal-control problem abstraction.
//!
//! A problem supplies its Hamiltonian `H(s, z, p) = sup_u { -p·f(s, z, u) - L(s, z, u) }`
//! in closed form together with the maximizing feedback control and the
//! derivatives needed to differentiate trajectories driven by `∂_s z = -∇_p H`.

mod costs;
mod multi_agent;
mod quadcopter;

pub use costs::{
    gaussian_density, interaction_cost, EnergySpec, Gaussian, InteractionSpec, ObstacleSpec,
    Region, TerminalCost,
};
pub use multi_agent::MultiAgentProblem;
pub use quadcopter::{quadcopter_dynamics, QuadcopterParams, QuadcopterProblem};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Which obstacle model a problem evaluates.
///
/// Hard-obstacle scenarios train against a smooth Gaussian surrogate but are
/// audited against the 0/1 indicator of the true obstacle set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    #[default]
    Training,
    Validation,
}

/// Deterministic finite-horizon control problem with a closed-form Hamiltonian.
///
/// Gradient routines named `*_vjp` accumulate into their output buffers.
pub trait ControlProblem<T: Scalar>: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn horizon(&self) -> T;
    fn terminal(&self) -> &TerminalCost<T>;

    fn terminal_cost(&self, z: &[T]) -> T {
        self.terminal().value(z)
    }

    fn terminal_cost_grad(&self, z: &[T], out: &mut [T]) {
        self.terminal().grad(z, out)
    }

    fn hamiltonian(&self, s: T, z: &[T], p: &[T]) -> T;

    /// `∇_p H(s, z, p)`; the optimal dynamics are `-∇_p H`.
    fn hamiltonian_grad_p(&self, s: T, z: &[T], p: &[T], out: &mut [T]);

    /// Pulls seeds on `H` (scalar) and on `∇_p H` (vector) back to `z` and `p`.
    #[allow(clippy::too_many_arguments)]
    fn hamiltonian_vjp(
        &self,
        s: T,
        z: &[T],
        p: &[T],
        bar_h: T,
        bar_hp: &[T],
        bar_z: &mut [T],
        bar_p: &mut [T],
    );

    /// Maximizer `u*(s, z, p)` of the pre-Hamiltonian.
    fn feedback_control(&self, s: T, z: &[T], p: &[T], u: &mut [T]);

    fn dynamics(&self, s: T, z: &[T], u: &[T], out: &mut [T]);

    #[allow(clippy::too_many_arguments)]
    fn dynamics_vjp(&self, s: T, z: &[T], u: &[T], bar_f: &[T], bar_z: &mut [T], bar_u: &mut [T]);

    fn running_cost(&self, s: T, z: &[T], u: &[T]) -> T;

    #[allow(clippy::too_many_arguments)]
    fn running_cost_vjp(&self, s: T, z: &[T], u: &[T], bar: T, bar_z: &mut [T], bar_u: &mut [T]);
}

/// Any of the shipped problem families.
#[derive(Debug, Clone)]
pub enum Problem<T: Scalar> {
    MultiAgent(MultiAgentProblem<T>),
    Quadcopter(QuadcopterProblem<T>),
}

macro_rules! dispatch {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            Problem::MultiAgent($p) => $e,
            Problem::Quadcopter($p) => $e,
        }
    };
}

impl<T: Scalar> Problem<T> {
    /// Copy of the problem that evaluates obstacle costs in the given mode.
    pub fn with_mode(&self, mode: CostMode) -> Self {
        match self {
            Problem::MultiAgent(p) => Problem::MultiAgent(MultiAgentProblem {
                mode,
                ..p.clone()
            }),
            Problem::Quadcopter(_) => self.clone(),
        }
    }

    pub fn validation(&self) -> Self {
        self.with_mode(CostMode::Validation)
    }

    pub fn as_multi_agent(&self) -> Option<&MultiAgentProblem<T>> {
        match self {
            Problem::MultiAgent(p) => Some(p),
            Problem::Quadcopter(_) => None,
        }
    }

    /// Controls that move the state along a straight line to the target over
    /// `[t0, T]` when the dynamics allow it (hover thrust for the quadcopter).
    pub fn straight_path_control(&self, x0: &[T], t0: T) -> Vec<T> {
        match self {
            Problem::MultiAgent(p) => {
                let span = p.horizon - t0;
                let scale = if span > T::zero() { T::one() / span } else { T::zero() };
                x0.iter()
                    .zip(&p.terminal.target)
                    .map(|(&x, &y)| (y - x) * scale)
                    .collect()
            }
            Problem::Quadcopter(p) => {
                let mut u = vec![T::zero(); 4];
                u[0] = p.params.mass * p.params.gravity;
                u
            }
        }
    }

    /// Largest pairwise interaction value `w` at the state (0 for single-agent problems).
    pub fn max_interaction(&self, z: &[T]) -> T {
        match self {
            Problem::MultiAgent(p) => p.max_pair_interaction(z),
            Problem::Quadcopter(_) => T::zero(),
        }
    }

    /// Whether any agent sits inside a hard obstacle region.
    pub fn in_hard_obstacle(&self, z: &[T]) -> bool {
        match self {
            Problem::MultiAgent(p) => p.any_agent_in_hard_obstacle(z),
            Problem::Quadcopter(_) => false,
        }
    }

    /// Obstacle term `Q(z)` under the problem's current mode.
    pub fn obstacle_cost(&self, z: &[T]) -> T {
        match self {
            Problem::MultiAgent(p) => p.obstacle_cost(z),
            Problem::Quadcopter(_) => T::zero(),
        }
    }

    pub fn interaction_cost(&self, z: &[T]) -> T {
        match self {
            Problem::MultiAgent(p) => p.interaction_total(z),
            Problem::Quadcopter(_) => T::zero(),
        }
    }

    /// Number of agents and per-agent spatial dimension used for plotting.
    pub fn agent_layout(&self) -> (usize, usize) {
        match self {
            Problem::MultiAgent(p) => (p.n_agents, p.agent_dim),
            Problem::Quadcopter(_) => (1, 3),
        }
    }
}

impl<T: Scalar> ControlProblem<T> for Problem<T> {
    fn state_dim(&self) -> usize {
        dispatch!(self, p => p.state_dim())
    }
    fn control_dim(&self) -> usize {
        dispatch!(self, p => p.control_dim())
    }
    fn horizon(&self) -> T {
        dispatch!(self, p => p.horizon())
    }
    fn terminal(&self) -> &TerminalCost<T> {
        dispatch!(self, p => p.terminal())
    }
    fn hamiltonian(&self, s: T, z: &[T], p: &[T]) -> T {
        dispatch!(self, q => q.hamiltonian(s, z, p))
    }
    fn hamiltonian_grad_p(&self, s: T, z: &[T], p: &[T], out: &mut [T]) {
        dispatch!(self, q => q.hamiltonian_grad_p(s, z, p, out))
    }
    fn hamiltonian_vjp(
        &self,
        s: T,
        z: &[T],
        p: &[T],
        bar_h: T,
        bar_hp: &[T],
        bar_z: &mut [T],
        bar_p: &mut [T],
    ) {
        dispatch!(self, q => q.hamiltonian_vjp(s, z, p, bar_h, bar_hp, bar_z, bar_p))
    }
    fn feedback_control(&self, s: T, z: &[T], p: &[T], u: &mut [T]) {
        dispatch!(self, q => q.feedback_control(s, z, p, u))
    }
    fn dynamics(&self, s: T, z: &[T], u: &[T], out: &mut [T]) {
        dispatch!(self, q => q.dynamics(s, z, u, out))
    }
    fn dynamics_vjp(&self, s: T, z: &[T], u: &[T], bar_f: &[T], bar_z: &mut [T], bar_u: &mut [T]) {
        dispatch!(self, q => q.dynamics_vjp(s, z, u, bar_f, bar_z, bar_u))
    }
    fn running_cost(&self, s: T, z: &[T], u: &[T]) -> T {
        dispatch!(self, q => q.running_cost(s, z, u))
    }
    fn running_cost_vjp(&self, s: T, z: &[T], u: &[T], bar: T, bar_z: &mut [T], bar_u: &mut [T]) {
        dispatch!(self, q => q.running_cost_vjp(s, z, u, bar, bar_z, bar_u))
    }
}
