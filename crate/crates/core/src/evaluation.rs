//! Comparisons between the feedback policy and the transcription baseline.

use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{self, BaselineConfig, BaselineSolution, Transcription};
use crate::error::{check_dim, Error, Result};
use crate::problem::{ControlProblem, Problem};
use crate::rollout::{integrate, integrate_from, integrate_with_shock, RolloutResult};
use crate::scalar::{to_f64_vec, Scalar};
use crate::scenarios::{self, ScenarioId};
use crate::trainer::{self, TrainConfig};
use crate::value_net::ValueNet;

/// Interaction value above which two bubbles count as overlapping
/// (`e^{-2}`, reached when agents are `2r` apart).
pub const OVERLAP_THRESHOLD: f64 = 0.135_335_283_236_612_7;

/// Validation-mode costs of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub ell: f64,
    pub terminal: f64,
    pub objective: f64,
    pub max_interaction: f64,
    pub collision: bool,
    pub final_state: Vec<f64>,
}

impl CostSummary {
    fn from_states<T: Scalar>(problem: &Problem<T>, ell: T, terminal: T, states: &[Vec<T>]) -> Self {
        let max_interaction = states
            .iter()
            .map(|z| problem.max_interaction(z).to_f64_lossy())
            .fold(0.0, f64::max);
        Self {
            ell: ell.to_f64_lossy(),
            terminal: terminal.to_f64_lossy(),
            objective: (ell + terminal).to_f64_lossy(),
            max_interaction,
            collision: states.iter().any(|z| problem.in_hard_obstacle(z)),
            final_state: states
                .last()
                .map(|z| to_f64_vec(z))
                .unwrap_or_default(),
        }
    }

    pub fn of_rollout<T: Scalar>(problem: &Problem<T>, r: &RolloutResult<T>) -> Self {
        Self::from_states(problem, r.terms.ell, r.terms.terminal, &r.states)
    }

    pub fn of_baseline<T: Scalar>(problem: &Problem<T>, b: &BaselineSolution<T>) -> Self {
        Self::from_states(problem, b.cost.ell, b.cost.terminal, &b.states)
    }
}

/// `(J_nn − J_base) / J_base`
pub fn suboptimality(nn: f64, base: f64) -> f64 {
    (nn - base) / base
}

/// Number of validation steps for a rollout that starts at `t0`.
pub fn steps_from(n_t_val: usize, t0: f64, horizon: f64) -> usize {
    ((n_t_val as f64) * (horizon - t0) / horizon).ceil().max(0.0) as usize
}

/// Rolls the policy out from `(t0, x)` and audits it under validation costs.
pub fn evaluate_point<T: Scalar>(
    net: &ValueNet<T>,
    problem: &Problem<T>,
    x: &[T],
    t0: T,
    n_t_val: usize,
) -> Result<(CostSummary, RolloutResult<T>)> {
    let vp = problem.validation();
    let n = steps_from(n_t_val, t0.to_f64_lossy(), problem.horizon().to_f64_lossy());
    let r = integrate_from(net, &vp, t0, x, n)?;
    Ok((CostSummary::of_rollout(&vp, &r), r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: Option<ScenarioId>,
    pub x0: Vec<f64>,
    pub t0: f64,
    pub n_t: usize,
    pub nn: CostSummary,
    pub baseline: Option<CostSummary>,
    pub suboptimality: Option<f64>,
}

/// Policy cost at `(t0, x)`, optionally against a baseline solve from the same point.
pub fn evaluate<T: Scalar>(
    net: &ValueNet<T>,
    problem: &Problem<T>,
    x: &[T],
    t0: T,
    n_t_val: usize,
    baseline_cfg: Option<&BaselineConfig>,
) -> Result<(EvalReport, RolloutResult<T>)> {
    let (nn, r) = evaluate_point(net, problem, x, t0, n_t_val)?;
    let base = match baseline_cfg {
        Some(cfg) if t0 < problem.horizon() => {
            let n = cfg.steps_from(t0.to_f64_lossy(), problem.horizon().to_f64_lossy());
            let b = baseline::solve_with_steps(problem, x, t0, n, cfg)?;
            Some(CostSummary::of_baseline(&problem.validation(), &b))
        }
        _ => None,
    };
    let sub = base.as_ref().map(|b| suboptimality(nn.objective, b.objective));
    Ok((
        EvalReport {
            scenario: None,
            x0: to_f64_vec(x),
            t0: t0.to_f64_lossy(),
            n_t: r.n_steps(),
            nn,
            baseline: base,
            suboptimality: sub,
        },
        r,
    ))
}

/// A displacement `ξ` applied to the state at time `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShockSpec {
    pub time: f64,
    pub displacement: Vec<f64>,
}

impl ShockSpec {
    /// Uniformly random direction with the given norm.
    pub fn random(d: usize, norm: f64, time: f64, seed: u64) -> Self {
        Self {
            time,
            displacement: random_direction(d, seed).into_iter().map(|v| v * norm).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.displacement.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn random_direction(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockReport {
    /// Shock time snapped to the validation grid.
    pub time: f64,
    pub shock_norm: f64,
    pub shocked_state: Vec<f64>,
    /// Policy cost from the shock time to the horizon.
    pub nn: CostSummary,
    /// Baseline re-solve from the shocked state.
    pub baseline: CostSummary,
    pub suboptimality: f64,
}

/// Deploys the policy from `x0`, applies the shock, and compares the policy's
/// continuation with a fresh baseline solve from the shocked state.
pub fn shock_experiment<T: Scalar>(
    net: &ValueNet<T>,
    problem: &Problem<T>,
    x0: &[T],
    shock: &ShockSpec,
    n_t_val: usize,
    baseline_cfg: &BaselineConfig,
) -> Result<(ShockReport, RolloutResult<T>)> {
    let d = problem.state_dim();
    check_dim("shock displacement", d, shock.displacement.len())?;
    let horizon = problem.horizon().to_f64_lossy();
    if !(0.0..horizon).contains(&shock.time) {
        return Err(Error::config(format!("shock time {} outside [0, {horizon})", shock.time)));
    }
    let vp = problem.validation();
    let k = ((n_t_val as f64) * shock.time / horizon).round() as usize;
    let k = k.min(n_t_val - 1);
    let xi: Vec<T> = shock.displacement.iter().map(|&v| T::lit(v)).collect();
    let r = integrate_with_shock(net, &vp, x0, n_t_val, k, &xi)?;

    let t_s = r.times[k];
    let z_s = r.states[k].clone();
    let nn = CostSummary::from_states(&vp, r.terms.ell - r.ell[k], r.terms.terminal, &r.states[k..]);
    let n_base = baseline_cfg.steps_from(t_s.to_f64_lossy(), horizon);
    let b = baseline::solve_with_steps(problem, &z_s, t_s, n_base, baseline_cfg)?;
    let base = CostSummary::of_baseline(&vp, &b);
    Ok((
        ShockReport {
            time: t_s.to_f64_lossy(),
            shock_norm: shock.norm(),
            shocked_state: to_f64_vec(&z_s),
            suboptimality: suboptimality(nn.objective, base.objective),
            nn,
            baseline: base,
        },
        r,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub resamples: usize,
    /// Subsample size as a fraction of the sample count (drawn without replacement).
    pub fraction: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            fraction: 0.5,
            seed: 0,
        }
    }
}

/// 95% percentile interval of the mean over random subsamples.
pub fn bootstrap_ci(values: &[f64], cfg: &BootstrapConfig) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let k = ((n as f64 * cfg.fraction).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut means: Vec<f64> = (0..cfg.resamples.max(1))
        .map(|_| {
            let idx = sample_indices(&mut rng, n, k);
            idx.iter().map(|i| values[i]).sum::<f64>() / k as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((means.len() - 1) as f64 * p).round() as usize];
    (q(0.025), q(0.975))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub magnitudes: Vec<f64>,
    pub count: usize,
    pub n_t_val: usize,
    pub seed: u64,
    pub baseline: BaselineConfig,
    pub bootstrap: BootstrapConfig,
    /// Interaction value treated as a severe overlap.
    pub overlap_threshold: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            magnitudes: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            count: 100,
            n_t_val: 50,
            seed: 0,
            baseline: BaselineConfig::default(),
            bootstrap: BootstrapConfig::default(),
            overlap_threshold: OVERLAP_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint {
    pub x0: Vec<f64>,
    pub nn: f64,
    pub baseline: f64,
    pub suboptimality: f64,
    pub max_interaction: f64,
    pub nn_collision: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereStats {
    pub magnitude: f64,
    pub mean_suboptimality: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Share of policy trajectories with any positive interaction, in percent.
    pub interaction_pct: f64,
    /// Share with interaction above the overlap threshold, in percent.
    pub overlap_pct: f64,
    pub points: Vec<SpherePoint>,
}

/// Initial points `x0 + ‖ξ‖ ω` with `ω` uniform on the unit sphere; each is
/// evaluated by the policy and by the baseline.
pub fn hypersphere_sweep<T: Scalar>(
    net: &ValueNet<T>,
    problem: &Problem<T>,
    x0: &[T],
    cfg: &SweepConfig,
) -> Result<Vec<SphereStats>> {
    let d = problem.state_dim();
    check_dim("sweep center", d, x0.len())?;
    if cfg.count == 0 {
        return Err(Error::config("sweep needs at least one sample per magnitude"));
    }
    let vp = problem.validation();
    let mut out = Vec::with_capacity(cfg.magnitudes.len());
    for (mi, &mag) in cfg.magnitudes.iter().enumerate() {
        let count = if mag == 0.0 { 1 } else { cfg.count };
        let points: Vec<Result<SpherePoint>> = (0..count)
            .into_par_iter()
            .map(|i| {
                let seed = cfg.seed ^ ((mi as u64) << 32 | i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let dir = random_direction(d, seed);
                let x: Vec<T> = x0
                    .iter()
                    .zip(&dir)
                    .map(|(&c, &w)| c + T::lit(mag * w))
                    .collect();
                let r = integrate(net, &vp, &x, cfg.n_t_val)?;
                let nn = CostSummary::of_rollout(&vp, &r);
                let b = baseline::solve(problem, &x, T::zero(), &cfg.baseline)?;
                let base = CostSummary::of_baseline(&vp, &b);
                Ok(SpherePoint {
                    x0: to_f64_vec(&x),
                    nn: nn.objective,
                    baseline: base.objective,
                    suboptimality: suboptimality(nn.objective, base.objective),
                    max_interaction: nn.max_interaction,
                    nn_collision: nn.collision,
                })
            })
            .collect();
        let points = points.into_iter().collect::<Result<Vec<_>>>()?;
        let subs: Vec<f64> = points.iter().map(|p| p.suboptimality).collect();
        let n = points.len() as f64;
        let (ci_low, ci_high) = bootstrap_ci(&subs, &cfg.bootstrap);
        out.push(SphereStats {
            magnitude: mag,
            mean_suboptimality: subs.iter().sum::<f64>() / n,
            ci_low,
            ci_high,
            interaction_pct: 100.0 * points.iter().filter(|p| p.max_interaction > 0.0).count() as f64 / n,
            overlap_pct: 100.0
                * points
                    .iter()
                    .filter(|p| p.max_interaction > cfg.overlap_threshold)
                    .count() as f64
                / n,
            points,
        });
    }
    Ok(out)
}

/// Least-squares line `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodConfig {
    /// Numbers of agent pairs.
    pub pairs: Vec<usize>,
    /// Candidate widths, tried in increasing order.
    pub widths: Vec<usize>,
    /// Maximum accepted suboptimality at `x0`.
    pub budget: f64,
    /// Training settings shared by every run (the width is replaced).
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodTrial {
    pub width: usize,
    pub params: usize,
    pub nn: f64,
    pub suboptimality: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodPoint {
    pub pairs: usize,
    pub d: usize,
    pub baseline: f64,
    pub chosen_width: Option<usize>,
    pub params: Option<usize>,
    /// Training time of the chosen width.
    pub wall_seconds: Option<f64>,
    pub trials: Vec<CodTrial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodReport {
    pub points: Vec<CodPoint>,
    /// Parameter count against dimension over the points with a chosen width.
    pub fit: Option<LinearFit>,
}

/// For each swap problem size, the smallest width whose trained policy is
/// within the suboptimality budget at `x0`.
pub fn cod_sweep<T: Scalar>(cfg: &CodConfig, progress: &mut dyn FnMut(&CodTrial, usize)) -> Result<CodReport> {
    if cfg.widths.is_empty() {
        return Err(Error::config("width grid is empty"));
    }
    let mut widths = cfg.widths.clone();
    widths.sort_unstable();
    let mut points = Vec::new();
    for &k in &cfg.pairs {
        let sc = scenarios::build::<T>(ScenarioId::SwapK(k))?;
        let d = sc.problem.state_dim();
        let x0 = sc.rho.center.clone();
        let base = baseline::solve(&sc.problem, &x0, T::zero(), &cfg.baseline)?;
        let j_base = base.cost.total.to_f64_lossy();
        let mut point = CodPoint {
            pairs: k,
            d,
            baseline: j_base,
            chosen_width: None,
            params: None,
            wall_seconds: None,
            trials: Vec::new(),
        };
        for &m in &widths {
            let tc = TrainConfig {
                width: m,
                ..cfg.train.clone()
            };
            let start = Instant::now();
            let net = ValueNet::init(d, m, tc.seed)?;
            let outcome = trainer::train(&sc.problem, &sc.rho, &tc, net)?;
            let secs = start.elapsed().as_secs_f64();
            let (nn, _) = evaluate_point(&outcome.net, &sc.problem, &x0, T::zero(), tc.n_t_val)?;
            let trial = CodTrial {
                width: m,
                params: outcome.net.num_params(),
                nn: nn.objective,
                suboptimality: suboptimality(nn.objective, j_base),
                train_seconds: secs,
            };
            progress(&trial, k);
            let ok = trial.suboptimality <= cfg.budget;
            point.trials.push(trial);
            if ok {
                point.chosen_width = Some(m);
                point.params = Some(outcome.net.num_params());
                point.wall_seconds = Some(secs);
                break;
            }
        }
        points.push(point);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter_map(|p| p.params.map(|n| (p.d as f64, n as f64)))
        .unzip();
    Ok(CodReport {
        fit: linear_fit(&xs, &ys),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub n_t: usize,
    pub reps: usize,
    /// Fastest policy cost per RK4 step over the repetitions, in seconds.
    /// Best-of-reps on both sides keeps scheduler noise out of the ratio.
    pub nn_step_seconds: f64,
    /// Coefficient of variation of the per-step cost across repetitions.
    pub nn_step_cv: f64,
    /// Fastest time of 100 transcription objective+gradient evaluations at `n_t = 20`.
    pub baseline_seconds: f64,
    pub ratio: f64,
}

/// Single-threaded comparison of one policy step against the cost of a
/// minimal baseline re-solve.
pub fn timing_harness<T: Scalar>(
    net: &ValueNet<T>,
    problem: &Problem<T>,
    x0: &[T],
    n_t: usize,
    reps: usize,
) -> Result<TimingReport> {
    if n_t == 0 || reps == 0 {
        return Err(Error::config("timing needs n_t >= 1 and reps >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let vp = problem.validation();
        let mut nn_times = Vec::with_capacity(reps);
        // Warm-up run, not timed.
        integrate(net, &vp, x0, n_t)?;
        for _ in 0..reps {
            let start = Instant::now();
            let r = integrate(net, &vp, x0, n_t)?;
            std::hint::black_box(&r);
            nn_times.push(start.elapsed().as_secs_f64() / n_t as f64);
        }

        let tr = Transcription::new(problem, x0, T::zero(), 20)?;
        let a = problem.control_dim();
        let base = problem.straight_path_control(x0, T::zero());
        let u: Vec<T> = (0..tr.n_controls()).map(|i| base[i % a]).collect();
        let mut grad = vec![T::zero(); u.len()];
        let mut base_times = Vec::with_capacity(reps);
        tr.cost_grad(&u, &mut grad)?;
        for _ in 0..reps {
            let start = Instant::now();
            for _ in 0..100 {
                std::hint::black_box(tr.cost_grad(std::hint::black_box(&u), &mut grad)?);
            }
            base_times.push(start.elapsed().as_secs_f64());
        }

        let nn_step = nn_times.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = nn_times.iter().sum::<f64>() / reps as f64;
        let var = nn_times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / reps as f64;
        let baseline_seconds = base_times.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(TimingReport {
            n_t,
            reps,
            nn_step_seconds: nn_step,
            nn_step_cv: var.sqrt() / mean,
            baseline_seconds,
            ratio: baseline_seconds / nn_step,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12 && (f.intercept + 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn bootstrap_interval_brackets_mean() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let (lo, hi) = bootstrap_ci(&v, &BootstrapConfig::default());
        assert!(lo < 49.5 && hi > 49.5);
        assert!(lo > 35.0 && hi < 64.0);
        let (lo, hi) = bootstrap_ci(&[2.0; 10], &BootstrapConfig::default());
        assert_eq!((lo, hi), (2.0, 2.0));
    }

    #[test]
    fn random_directions_are_unit() {
        for seed in 0..5 {
            let v = random_direction(7, seed);
            let n: f64 = v.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn validation_steps_scale_with_remaining_time() {
        assert_eq!(steps_from(50, 0.0, 1.0), 50);
        assert_eq!(steps_from(50, 0.1, 1.0), 45);
        assert_eq!(steps_from(50, 1.0, 1.0), 0);
    }

}
