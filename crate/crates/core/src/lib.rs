//! Neural value-function approximation for deterministic finite-horizon
//! optimal control.
//!
//! A network `Φ(z, t; θ)` approximates the value function. Trajectories are
//! generated in feedback form from `∇Φ` and `θ` is trained by differentiating
//! through the resulting rollouts, with optional penalties on the
//! Hamilton-Jacobi-Bellman residual. A direct-transcription solver provides
//! open-loop reference solutions.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision used by the command-line tool.

pub mod adam;
pub mod baseline;
pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod problem;
pub mod rollout;
pub mod scalar;
pub mod scenarios;
pub mod trainer;
pub mod value_net;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Real = f64;
pub type ValueNet64 = value_net::ValueNet<f64>;
pub type ValueNet32 = value_net::ValueNet<f32>;
pub type Problem64 = problem::Problem<f64>;
pub type Problem32 = problem::Problem<f32>;
pub type Scenario64 = scenarios::Scenario<f64>;
