//! Preset problems and their default training settings.
//!
//! Each preset is described by a serializable [`ScenarioParams`] so that a run
//! configuration can override any field before the problem is built.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problem::{
    CostMode, EnergySpec, Gaussian, InteractionSpec, MultiAgentProblem, ObstacleSpec, Problem,
    QuadcopterParams, QuadcopterProblem, Region, TerminalCost,
};
use crate::scalar::{cast_vec, Scalar};
use crate::trainer::{BetaSwitch, LrSchedule, TrainConfig};

/// Number of agent pairs in the largest swap preset.
pub const MAX_SWAP_PAIRS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioId {
    Corridor,
    /// Two agents swapping past two hard disks.
    Swap2,
    /// Twelve agents swapping antipodal positions on a circle.
    Swap12,
    /// The first `k` antipodal pairs of [`ScenarioId::Swap12`].
    SwapK(usize),
    Swarm,
    Quadcopter,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [
        ScenarioId::Corridor,
        ScenarioId::Swap2,
        ScenarioId::Swap12,
        ScenarioId::Swarm,
        ScenarioId::Quadcopter,
    ];

    /// Preset with its default parameters.
    pub fn params(self) -> Result<ScenarioParams> {
        ScenarioParams::preset(self)
    }

    pub fn default_train_config(self) -> TrainConfig {
        default_train_config(self)
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioId::Corridor => f.write_str("corridor"),
            ScenarioId::Swap2 => f.write_str("swap2"),
            ScenarioId::Swap12 => f.write_str("swap12"),
            ScenarioId::SwapK(k) => write!(f, "swap_k{k}"),
            ScenarioId::Swarm => f.write_str("swarm"),
            ScenarioId::Quadcopter => f.write_str("quadcopter"),
        }
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corridor" => Ok(ScenarioId::Corridor),
            "swap2" => Ok(ScenarioId::Swap2),
            "swap12" => Ok(ScenarioId::Swap12),
            "swarm" => Ok(ScenarioId::Swarm),
            "quadcopter" => Ok(ScenarioId::Quadcopter),
            _ => {
                let k = s
                    .strip_prefix("swap_k")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| Error::config(format!("unknown scenario '{s}'")))?;
                if k == 0 || k > MAX_SWAP_PAIRS {
                    return Err(Error::config(format!(
                        "swap_k needs 1 <= k <= {MAX_SWAP_PAIRS}, got {k}"
                    )));
                }
                Ok(ScenarioId::SwapK(k))
            }
        }
    }
}

impl Serialize for ScenarioId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScenarioId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Serializable region description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionParams {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl RegionParams {
    fn build<T: Scalar>(&self, q: usize) -> Result<Region<T>> {
        match self {
            RegionParams::Ball { center, radius } => {
                check_dim("obstacle center", q, center.len())?;
                if !(*radius > 0.0) {
                    return Err(Error::config("obstacle radius must be positive"));
                }
                Ok(Region::Ball {
                    center: cast_vec(center),
                    radius: T::lit(*radius),
                })
            }
            RegionParams::Box { lo, hi } => {
                check_dim("obstacle box", q, lo.len())?;
                check_dim("obstacle box", q, hi.len())?;
                if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
                    return Err(Error::config("obstacle box needs lo < hi"));
                }
                Ok(Region::Box {
                    lo: cast_vec(lo),
                    hi: cast_vec(hi),
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ObstacleParams {
    #[serde(default)]
    pub gaussians: Vec<GaussianParams>,
    /// Hard obstacles, audited with a 0/1 indicator.
    #[serde(default)]
    pub hard: Vec<RegionParams>,
    /// Scale factor (> 1) of the buffer region in which training penalizes hard obstacles.
    #[serde(default = "default_buffer")]
    pub buffer_factor: f64,
}

fn default_buffer() -> f64 {
    1.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsParams {
    MultiAgent {
        agent_dim: usize,
        interaction_radius: f64,
        energy_quadratic: f64,
        energy_offset: f64,
        obstacles: ObstacleParams,
    },
    Quadcopter {
        mass: f64,
        gravity: f64,
        energy_quadratic: f64,
        energy_offset: f64,
    },
}

/// Everything needed to build a problem and its initial-state distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    pub horizon: f64,
    /// `(α1, α2, α3)`: terminal, obstacle and interaction weights.
    pub alpha: [f64; 3],
    pub x0: Vec<f64>,
    pub target: Vec<f64>,
    /// Variance of the isotropic Gaussian initial distribution around `x0`.
    pub rho_variance: f64,
    pub dynamics: DynamicsParams,
}

/// Built problem plus the distribution training samples are drawn from.
#[derive(Debug, Clone)]
pub struct Scenario<T: Scalar> {
    pub problem: Problem<T>,
    pub rho: InitialDistribution<T>,
}

impl ScenarioParams {
    pub fn preset(id: ScenarioId) -> Result<Self> {
        Ok(match id {
            ScenarioId::Corridor => corridor(),
            ScenarioId::Swap2 => swap2(),
            ScenarioId::Swap12 => swap_pairs(MAX_SWAP_PAIRS),
            ScenarioId::SwapK(k) => {
                if k == 0 || k > MAX_SWAP_PAIRS {
                    return Err(Error::config(format!("swap_k needs 1 <= k <= {MAX_SWAP_PAIRS}")));
                }
                swap_pairs(k)
            }
            ScenarioId::Swarm => swarm(),
            ScenarioId::Quadcopter => quadcopter(),
        })
    }

    /// Applies a JSON object of field overrides (merged recursively).
    pub fn with_overrides(&self, overrides: &serde_json::Value) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        merge_json(&mut base, overrides);
        serde_json::from_value(base).map_err(|e| Error::config(format!("scenario override: {e}")))
    }

    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    fn validate(&self) -> Result<()> {
        let d = self.x0.len();
        if d == 0 {
            return Err(Error::config("scenario needs a non-empty initial state"));
        }
        check_dim("target", d, self.target.len())?;
        if !(self.horizon > 0.0) {
            return Err(Error::config("horizon must be positive"));
        }
        if self.alpha.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::config("cost weights must be non-negative"));
        }
        if !(self.rho_variance > 0.0) {
            return Err(Error::config("initial distribution variance must be positive"));
        }
        if self.x0.iter().chain(&self.target).any(|v| !v.is_finite()) {
            return Err(Error::config("initial and target states must be finite"));
        }
        Ok(())
    }

    pub fn build<T: Scalar>(&self) -> Result<Scenario<T>> {
        self.validate()?;
        let d = self.x0.len();
        let [alpha1, alpha2, alpha3] = self.alpha;
        let terminal = TerminalCost {
            alpha1: T::lit(alpha1),
            target: cast_vec(&self.target),
        };
        let horizon = T::lit(self.horizon);
        let problem = match &self.dynamics {
            DynamicsParams::MultiAgent {
                agent_dim,
                interaction_radius,
                energy_quadratic,
                energy_offset,
                obstacles,
            } => {
                let q = *agent_dim;
                if q == 0 || d % q != 0 {
                    return Err(Error::config(format!(
                        "state dimension {d} is not a multiple of agent dimension {q}"
                    )));
                }
                let gaussians = obstacles
                    .gaussians
                    .iter()
                    .map(|g| {
                        check_dim("obstacle mean", q, g.mean.len())?;
                        Gaussian::new(cast_vec(&g.mean), T::lit(g.variance))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let obstacles = if obstacles.hard.is_empty() {
                    ObstacleSpec::soft(gaussians)
                } else {
                    if !(obstacles.buffer_factor >= 1.0) {
                        return Err(Error::config("obstacle buffer factor must be >= 1"));
                    }
                    let hard = obstacles
                        .hard
                        .iter()
                        .map(|r| r.build::<T>(q))
                        .collect::<Result<Vec<_>>>()?;
                    let buffers = hard
                        .iter()
                        .map(|r| r.inflated(T::lit(obstacles.buffer_factor)))
                        .collect();
                    ObstacleSpec::hard(gaussians, hard, buffers)?
                };
                Problem::MultiAgent(MultiAgentProblem {
                    n_agents: d / q,
                    agent_dim: q,
                    horizon,
                    terminal,
                    alpha2: T::lit(alpha2),
                    alpha3: T::lit(alpha3),
                    energy: EnergySpec::new(T::lit(*energy_quadratic), T::lit(*energy_offset))?,
                    obstacles,
                    interaction: InteractionSpec::new(T::lit(*interaction_radius))?,
                    mode: CostMode::Training,
                })
            }
            DynamicsParams::Quadcopter {
                mass,
                gravity,
                energy_quadratic,
                energy_offset,
            } => {
                check_dim("quadcopter state", 12, d)?;
                if !(*mass > 0.0) {
                    return Err(Error::config("quadcopter mass must be positive"));
                }
                Problem::Quadcopter(QuadcopterProblem {
                    horizon,
                    terminal,
                    energy: EnergySpec::new(T::lit(*energy_quadratic), T::lit(*energy_offset))?,
                    params: QuadcopterParams {
                        mass: T::lit(*mass),
                        gravity: T::lit(*gravity),
                    },
                })
            }
        };
        Ok(Scenario {
            problem,
            rho: InitialDistribution::new(cast_vec(&self.x0), T::lit(self.rho_variance))?,
        })
    }
}

/// Builds a preset with default parameters.
pub fn build<T: Scalar>(id: ScenarioId) -> Result<Scenario<T>> {
    ScenarioParams::preset(id)?.build()
}

fn merge_json(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Isotropic Gaussian `N(center, variance·I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDistribution<T> {
    pub center: Vec<T>,
    pub variance: T,
}

impl<T: Scalar> InitialDistribution<T> {
    pub fn new(center: Vec<T>, variance: T) -> Result<Self> {
        if !(variance >= T::zero()) {
            return Err(Error::config("initial distribution variance must be non-negative"));
        }
        Ok(Self { center, variance })
    }

    /// `count` samples, deterministic in `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<Vec<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = self.variance.sqrt();
        (0..count)
            .map(|_| {
                self.center
                    .iter()
                    .map(|&c| {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        c + std * T::lit(n)
                    })
                    .collect()
            })
            .collect()
    }
}

fn multi_agent(
    agent_dim: usize,
    radius: f64,
    obstacles: ObstacleParams,
) -> DynamicsParams {
    DynamicsParams::MultiAgent {
        agent_dim,
        interaction_radius: radius,
        energy_quadratic: 0.5,
        energy_offset: 0.0,
        obstacles,
    }
}

fn corridor() -> ScenarioParams {
    let gaussians = [[-2.5, 0.0], [2.5, 0.0], [-1.5, 0.0], [1.5, 0.0]]
        .iter()
        .map(|m| GaussianParams {
            mean: m.to_vec(),
            variance: 0.2,
        })
        .collect();
    ScenarioParams {
        horizon: 1.0,
        alpha: [100.0, 10_000.0, 300.0],
        x0: vec![-2.0, -2.0, 2.0, -2.0],
        target: vec![2.0, 2.0, -2.0, 2.0],
        rho_variance: 1.0,
        dynamics: multi_agent(
            2,
            0.5,
            ObstacleParams {
                gaussians,
                hard: Vec::new(),
                buffer_factor: default_buffer(),
            },
        ),
    }
}

fn swap2() -> ScenarioParams {
    let centers = [[0.0, 4.0], [0.0, -3.5]];
    ScenarioParams {
        horizon: 1.0,
        alpha: [300.0, 1e6, 1e5],
        x0: vec![10.0, 0.0, -10.0, 0.0],
        target: vec![-10.0, 0.0, 10.0, 0.0],
        rho_variance: 1.0,
        dynamics: multi_agent(
            2,
            0.5,
            ObstacleParams {
                gaussians: centers
                    .iter()
                    .map(|c| GaussianParams {
                        mean: c.to_vec(),
                        variance: 1.0,
                    })
                    .collect(),
                hard: centers
                    .iter()
                    .map(|c| RegionParams::Ball {
                        center: c.to_vec(),
                        radius: 2.0,
                    })
                    .collect(),
                buffer_factor: 1.1,
            },
        ),
    }
}

/// Antipodal pairs on a circle of radius 10: agent `2j` at angle `j·30°`,
/// agent `2j + 1` opposite it. Each agent targets its partner's start.
pub fn swap_layout(pairs: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x0 = Vec::with_capacity(4 * pairs);
    let mut target = Vec::with_capacity(4 * pairs);
    for j in 0..pairs {
        let th = (j as f64) * std::f64::consts::PI / 6.0;
        let (s, c) = th.sin_cos();
        let a = [10.0 * c, 10.0 * s];
        let b = [-a[0], -a[1]];
        x0.extend_from_slice(&a);
        x0.extend_from_slice(&b);
        target.extend_from_slice(&b);
        target.extend_from_slice(&a);
    }
    (x0, target)
}

fn swap_pairs(pairs: usize) -> ScenarioParams {
    let (x0, target) = swap_layout(pairs);
    ScenarioParams {
        horizon: 1.0,
        alpha: [300.0, 0.0, 1e5],
        x0,
        target,
        rho_variance: 1.0,
        dynamics: multi_agent(2, 0.5, ObstacleParams::default()),
    }
}

/// The two swarm obstacles as `(lo, hi)` boxes.
pub const SWARM_PRISMS: [([f64; 3], [f64; 3]); 2] = [
    ([-2.0, -0.5, 0.0], [2.0, 0.5, 7.0]),
    ([2.0, -1.0, 0.0], [4.0, 1.0, 4.0]),
];

const SWARM_BUMP_SPACING: f64 = 0.5;
const SWARM_BUMP_VARIANCE: f64 = 0.25;

/// 50 agents on a 10 × 5 grid in the plane `y = -3` (x spacing 1, heights 1..5),
/// each targeting its mirror image in `y = +3`.
pub fn swarm_layout() -> (Vec<f64>, Vec<f64>) {
    let mut x0 = Vec::with_capacity(150);
    let mut target = Vec::with_capacity(150);
    for zi in 1..=5 {
        for xi in 0..10 {
            let x = -4.5 + xi as f64;
            let z = zi as f64;
            x0.extend_from_slice(&[x, -3.0, z]);
            target.extend_from_slice(&[x, 3.0, z]);
        }
    }
    (x0, target)
}

fn swarm_bumps() -> Vec<GaussianParams> {
    let mut out = Vec::new();
    for (lo, hi) in SWARM_PRISMS {
        let counts: Vec<usize> = (0..3)
            .map(|k| (((hi[k] - lo[k]) / SWARM_BUMP_SPACING).round() as usize).max(1))
            .collect();
        for i in 0..counts[0] {
            for j in 0..counts[1] {
                for k in 0..counts[2] {
                    let idx = [i, j, k];
                    let mean = (0..3)
                        .map(|a| {
                            let step = (hi[a] - lo[a]) / counts[a] as f64;
                            lo[a] + step * (idx[a] as f64 + 0.5)
                        })
                        .collect();
                    out.push(GaussianParams {
                        mean,
                        variance: SWARM_BUMP_VARIANCE,
                    });
                }
            }
        }
    }
    out
}

fn swarm() -> ScenarioParams {
    let (x0, target) = swarm_layout();
    ScenarioParams {
        horizon: 1.0,
        alpha: [900.0, 1e7, 25_000.0],
        x0,
        target,
        rho_variance: 0.25,
        dynamics: multi_agent(
            3,
            0.3,
            ObstacleParams {
                gaussians: swarm_bumps(),
                hard: SWARM_PRISMS
                    .iter()
                    .map(|(lo, hi)| RegionParams::Box {
                        lo: lo.to_vec(),
                        hi: hi.to_vec(),
                    })
                    .collect(),
                buffer_factor: 1.1,
            },
        ),
    }
}

fn quadcopter() -> ScenarioParams {
    let mut x0 = vec![0.0; 12];
    x0[..3].copy_from_slice(&[-1.5, -1.5, -1.5]);
    let mut target = vec![0.0; 12];
    target[..3].copy_from_slice(&[2.0, 2.0, 2.0]);
    ScenarioParams {
        horizon: 1.0,
        alpha: [5000.0, 0.0, 0.0],
        x0,
        target,
        rho_variance: 0.25,
        dynamics: DynamicsParams::Quadcopter {
            mass: 1.0,
            gravity: 9.81,
            energy_quadratic: 1.0,
            energy_offset: 2.0,
        },
    }
}

/// Rate 0.01, divided by 10 every `⌈0.45·max_iters⌉` iterations.
pub fn default_lr_schedule(max_iters: usize) -> LrSchedule {
    let every = ((0.45 * max_iters as f64).ceil() as usize).max(1);
    LrSchedule::step_decay(0.01, 0.1, every, max_iters)
}

/// Default training hyperparameters of each preset.
pub fn default_train_config(id: ScenarioId) -> TrainConfig {
    let base = |width: usize, betas: [f64; 3], n_t: (usize, usize), iters: usize, batch: usize| {
        TrainConfig {
            width,
            betas,
            beta_switch: None,
            batch_size: batch,
            max_iters: iters,
            resample_every: 25,
            lr_schedule: default_lr_schedule(iters),
            n_t_train: n_t.0,
            n_t_val: n_t.1,
            val_every: 25,
            holdout_size: 512,
            weight_decay: 0.0,
            checkpoint_every: None,
            seed: 0,
        }
    };
    match id {
        ScenarioId::Corridor => base(32, [0.02, 0.02, 0.02], (20, 50), 1800, 1024),
        ScenarioId::Swap2 => base(16, [1.0, 1.0, 3.0], (20, 50), 4000, 1024),
        ScenarioId::Swap12 | ScenarioId::SwapK(_) => base(32, [5.0, 2.0, 5.0], (20, 50), 4000, 2048),
        ScenarioId::Swarm => TrainConfig {
            beta_switch: Some(BetaSwitch {
                fraction: 0.7,
                betas: [0.0, 0.0, 0.0],
            }),
            ..base(512, [2.0, 1.0, 3.0], (26, 80), 6000, 1024)
        },
        ScenarioId::Quadcopter => base(128, [0.1, 0.0, 0.0], (26, 50), 6000, 1024),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ControlProblem;

    #[test]
    fn ids_round_trip_through_strings() {
        for id in [
            ScenarioId::Corridor,
            ScenarioId::Swap2,
            ScenarioId::Swap12,
            ScenarioId::SwapK(3),
            ScenarioId::Swarm,
            ScenarioId::Quadcopter,
        ] {
            assert_eq!(id.to_string().parse::<ScenarioId>().unwrap(), id);
        }
        assert!("swap_k0".parse::<ScenarioId>().is_err());
        assert!("swap_k7".parse::<ScenarioId>().is_err());
        assert!("maze".parse::<ScenarioId>().is_err());
    }

    #[test]
    fn preset_dimensions() {
        let dims = [
            (ScenarioId::Corridor, 4, 4),
            (ScenarioId::Swap2, 4, 4),
            (ScenarioId::Swap12, 24, 24),
            (ScenarioId::SwapK(2), 8, 8),
            (ScenarioId::Swarm, 150, 150),
            (ScenarioId::Quadcopter, 12, 4),
        ];
        for (id, d, a) in dims {
            let s = build::<f64>(id).unwrap();
            assert_eq!(s.problem.state_dim(), d, "{id}");
            assert_eq!(s.problem.control_dim(), a, "{id}");
            assert_eq!(s.rho.center.len(), d);
        }
    }

    #[test]
    fn swap_targets_are_partners() {
        let (x0, y) = swap_layout(6);
        for j in 0..6 {
            assert_eq!(&y[4 * j..4 * j + 2], &x0[4 * j + 2..4 * j + 4]);
            let r = (x0[4 * j].powi(2) + x0[4 * j + 1].powi(2)).sqrt();
            assert!((r - 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn swarm_starts_clear_of_prisms() {
        let s = build::<f64>(ScenarioId::Swarm).unwrap();
        let x0 = s.rho.center.clone();
        assert!(!s.problem.in_hard_obstacle(&x0));
        assert!(s.problem.max_interaction(&x0) < 1e-3);
    }

    #[test]
    fn overrides_merge_and_reject_unknown_fields() {
        let p = ScenarioParams::preset(ScenarioId::Corridor).unwrap();
        let q = p
            .with_overrides(&serde_json::json!({"alpha": [1.0, 2.0, 3.0], "dynamics": {"interaction_radius": 0.7}}))
            .unwrap();
        assert_eq!(q.alpha, [1.0, 2.0, 3.0]);
        match q.dynamics {
            DynamicsParams::MultiAgent { interaction_radius, .. } => assert_eq!(interaction_radius, 0.7),
            _ => panic!(),
        }
        assert!(p.with_overrides(&serde_json::json!({"alpah": 1})).is_err());
    }

    #[test]
    fn invalid_params_are_config_errors() {
        let mut p = ScenarioParams::preset(ScenarioId::Corridor).unwrap();
        p.target.pop();
        assert!(p.build::<f64>().unwrap_err().is_config());
        let mut p = ScenarioParams::preset(ScenarioId::Corridor).unwrap();
        p.rho_variance = 0.0;
        assert!(p.build::<f64>().unwrap_err().is_config());
        let mut p = ScenarioParams::preset(ScenarioId::Corridor).unwrap();
        p.x0.push(0.0);
        p.target.push(0.0);
        assert!(p.build::<f64>().unwrap_err().is_config());
    }

    #[test]
    fn sampling_is_deterministic() {
        let rho = InitialDistribution::new(vec![1.0f64, 2.0], 1.0).unwrap();
        assert_eq!(rho.sample(5, 3), rho.sample(5, 3));
        assert_ne!(rho.sample(5, 3), rho.sample(5, 4));
    }

    #[test]
    fn tiny_variance_collapses_to_center() {
        let rho = InitialDistribution::new(vec![-2.0f64, 2.0], 1e-300).unwrap();
        for x in rho.sample(10, 0) {
            assert_eq!(x, vec![-2.0, 2.0]);
        }
    }
}
