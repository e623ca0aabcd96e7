//! Direct-transcription reference solver.
//!
//! The control is discretized on `n_t` uniform steps over `[t0, T]`, the state
//! is propagated with forward Euler, and the discrete objective
//! `G(z_N) + h Σ_k L(s_k, z_k, u_k)` is minimized with Adam from several
//! perturbed straight-path initializations.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, LrSchedule};
use crate::error::{check_dim, Error, Result};
use crate::problem::{ControlProblem, Problem};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub n_t: usize,
    pub iters: usize,
    pub lr: f64,
    /// Fraction of the iterations after which the rate drops by 10×.
    pub decay_at: f64,
    /// Standard deviation of the perturbation added to the initial controls.
    pub noise_std: f64,
    pub starts: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            n_t: 50,
            iters: 3000,
            lr: 0.05,
            decay_at: 2.0 / 3.0,
            noise_std: 0.1,
            starts: 5,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.starts == 0 {
            return Err(Error::config("baseline needs n_t >= 1 and starts >= 1"));
        }
        if !(self.lr > 0.0) || !(self.noise_std >= 0.0) || !(0.0..=1.0).contains(&self.decay_at) {
            return Err(Error::config("invalid baseline optimizer settings"));
        }
        Ok(())
    }

    /// Steps for a solve that starts at `t0` instead of 0, keeping the step size.
    pub fn steps_from(&self, t0: f64, horizon: f64) -> usize {
        ((self.n_t as f64) * (horizon - t0) / horizon).ceil().max(1.0) as usize
    }

    fn schedule(&self) -> LrSchedule {
        let at = (self.decay_at * self.iters as f64).ceil() as usize;
        if at == 0 {
            LrSchedule::constant(self.lr * 0.1)
        } else {
            LrSchedule(vec![(0, self.lr), (at, self.lr * 0.1)])
        }
    }
}

/// Cost breakdown of a discrete control sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteCost<T> {
    pub total: T,
    pub ell: T,
    pub terminal: T,
}

/// Forward-Euler transcription of a problem from `(t0, x0)`.
pub struct Transcription<'a, T: Scalar, P: ?Sized> {
    problem: &'a P,
    x0: Vec<T>,
    t0: T,
    n_t: usize,
    h: T,
    d: usize,
    a: usize,
}

impl<'a, T: Scalar, P: ControlProblem<T> + ?Sized> Transcription<'a, T, P> {
    pub fn new(problem: &'a P, x0: &[T], t0: T, n_t: usize) -> Result<Self> {
        let d = problem.state_dim();
        check_dim("initial state", d, x0.len())?;
        let horizon = problem.horizon();
        if n_t == 0 || !(t0 >= T::zero() && t0 < horizon) {
            return Err(Error::config("transcription needs n_t >= 1 and 0 <= t0 < T"));
        }
        Ok(Self {
            problem,
            x0: x0.to_vec(),
            t0,
            n_t,
            h: (horizon - t0) / T::from_usize(n_t).unwrap(),
            d,
            a: problem.control_dim(),
        })
    }

    pub fn n_controls(&self) -> usize {
        self.n_t * self.a
    }

    fn time(&self, k: usize) -> T {
        self.t0 + T::from_usize(k).unwrap() * self.h
    }

    /// States `z_0..z_N` under the controls.
    pub fn states(&self, u: &[T]) -> Vec<Vec<T>> {
        let mut out = Vec::with_capacity(self.n_t + 1);
        let mut z = self.x0.clone();
        let mut f = vec![T::zero(); self.d];
        out.push(z.clone());
        for k in 0..self.n_t {
            let uk = &u[k * self.a..(k + 1) * self.a];
            self.problem.dynamics(self.time(k), &z, uk, &mut f);
            for i in 0..self.d {
                z[i] += self.h * f[i];
            }
            out.push(z.clone());
        }
        out
    }

    pub fn cost(&self, u: &[T]) -> Result<DiscreteCost<T>> {
        check_dim("control sequence", self.n_controls(), u.len())?;
        let states = self.states(u);
        let mut ell = T::zero();
        for k in 0..self.n_t {
            ell += self.h * self.problem.running_cost(self.time(k), &states[k], &u[k * self.a..(k + 1) * self.a]);
        }
        let terminal = self.problem.terminal_cost(&states[self.n_t]);
        Ok(DiscreteCost {
            total: ell + terminal,
            ell,
            terminal,
        })
    }

    /// Objective and its gradient with respect to the controls.
    pub fn cost_grad(&self, u: &[T], grad: &mut [T]) -> Result<T> {
        check_dim("control sequence", self.n_controls(), u.len())?;
        check_dim("control gradient", self.n_controls(), grad.len())?;
        let states = self.states(u);
        let mut total = self.problem.terminal_cost(&states[self.n_t]);
        let mut lam = vec![T::zero(); self.d];
        self.problem.terminal_cost_grad(&states[self.n_t], &mut lam);
        let mut bar_f = vec![T::zero(); self.d];
        let mut bar_z = vec![T::zero(); self.d];
        for k in (0..self.n_t).rev() {
            let s = self.time(k);
            let uk = &u[k * self.a..(k + 1) * self.a];
            let gk = &mut grad[k * self.a..(k + 1) * self.a];
            gk.iter_mut().for_each(|g| *g = T::zero());
            total += self.h * self.problem.running_cost(s, &states[k], uk);
            for i in 0..self.d {
                bar_f[i] = self.h * lam[i];
            }
            bar_z.copy_from_slice(&lam);
            self.problem.dynamics_vjp(s, &states[k], uk, &bar_f, &mut bar_z, gk);
            self.problem.running_cost_vjp(s, &states[k], uk, self.h, &mut bar_z, gk);
            lam.copy_from_slice(&bar_z);
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSolution<T> {
    pub t0: T,
    /// `controls[k]` acts on `[s_k, s_{k+1})`.
    pub controls: Vec<Vec<T>>,
    pub states: Vec<Vec<T>>,
    /// Cost under the training obstacle model (what was minimized).
    pub optimized: DiscreteCost<T>,
    /// Cost under the validation obstacle model.
    pub cost: DiscreteCost<T>,
    /// Best objective reached by each start.
    pub start_objectives: Vec<T>,
    pub max_interaction: T,
    pub collision: bool,
    /// False when the best start was still improving at the end.
    pub converged: bool,
}

impl<T: Scalar> BaselineSolution<T> {
    /// Trajectory in the rollout CSV layout (`s, z…, u…, ell, c_hjt`). `ell` is
    /// the running cost accumulated under validation costs; `c_hjt` is empty and
    /// so is the control on the final row.
    pub fn write_csv<W: Write>(&self, problem: &Problem<T>, out: W) -> Result<()> {
        let vp = problem.validation();
        let n = self.controls.len();
        let d = self.states[0].len();
        let a = problem.control_dim();
        let h = (problem.horizon() - self.t0) / T::from_usize(n.max(1)).unwrap();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["s".to_string()];
        header.extend((0..d).map(|i| format!("z{i}")));
        header.extend((0..a).map(|i| format!("u{i}")));
        header.push("ell".into());
        header.push("c_hjt".into());
        w.write_record(&header)?;
        let mut ell = T::zero();
        for (k, z) in self.states.iter().enumerate() {
            let s = self.t0 + T::from_usize(k).unwrap() * h;
            let mut row = vec![s.to_f64_lossy().to_string()];
            row.extend(z.iter().map(|v| v.to_f64_lossy().to_string()));
            match self.controls.get(k) {
                Some(u) => row.extend(u.iter().map(|v| v.to_f64_lossy().to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), a)),
            }
            row.push(ell.to_f64_lossy().to_string());
            row.push(String::new());
            w.write_record(&row)?;
            if let Some(u) = self.controls.get(k) {
                ell += h * vp.running_cost(s, z, u);
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, problem: &Problem<T>, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(problem, std::io::BufWriter::new(f))
    }
}

/// Minimizes the transcribed objective from `(t0, x0)`.
pub fn solve<T: Scalar>(problem: &Problem<T>, x0: &[T], t0: T, cfg: &BaselineConfig) -> Result<BaselineSolution<T>> {
    solve_with_steps(problem, x0, t0, cfg.n_t, cfg)
}

/// [`solve`] with an explicit number of control intervals.
pub fn solve_with_steps<T: Scalar>(
    problem: &Problem<T>,
    x0: &[T],
    t0: T,
    n_t: usize,
    cfg: &BaselineConfig,
) -> Result<BaselineSolution<T>> {
    cfg.validate()?;
    let tr = Transcription::new(problem, x0, t0, n_t)?;
    let a = problem.control_dim();
    let base = problem.straight_path_control(x0, t0);
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let schedule = cfg.schedule();

    let mut best: Option<(Vec<T>, T, bool)> = None;
    let mut start_objectives = Vec::with_capacity(cfg.starts);
    for start in 0..cfg.starts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(start as u64));
        let mut u: Vec<T> = (0..tr.n_controls())
            .map(|i| {
                let e = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                base[i % a] + T::lit(e)
            })
            .collect();
        let (u_best, j_best, converged) = optimize_start(&tr, &mut u, cfg.iters, &schedule)?;
        start_objectives.push(j_best);
        if best.as_ref().is_none_or(|b| j_best < b.1) {
            best = Some((u_best, j_best, converged));
        }
    }
    let (u, _, converged) = best.expect("at least one start");
    let optimized = tr.cost(&u)?;
    let val_problem = problem.validation();
    let cost = Transcription::new(&val_problem, x0, t0, n_t)?.cost(&u)?;
    let states = tr.states(&u);
    let max_interaction = states
        .iter()
        .map(|z| problem.max_interaction(z))
        .fold(T::zero(), |acc, v| acc.max(v));
    let collision = states.iter().any(|z| problem.in_hard_obstacle(z));
    Ok(BaselineSolution {
        t0,
        controls: u.chunks(a).map(|c| c.to_vec()).collect(),
        states,
        optimized,
        cost,
        start_objectives,
        max_interaction,
        collision,
        converged,
    })
}

/// Runs Adam from `u`; returns the best iterate seen (the initial one included).
fn optimize_start<T: Scalar, P: ControlProblem<T> + ?Sized>(
    tr: &Transcription<'_, T, P>,
    u: &mut [T],
    iters: usize,
    schedule: &LrSchedule,
) -> Result<(Vec<T>, T, bool)> {
    let mut grad = vec![T::zero(); u.len()];
    let mut opt = Adam::new(u.len());
    let j0 = tr.cost_grad(u, &mut grad)?;
    if !j0.is_finite() {
        return Err(Error::NonFinite {
            stage: "baseline initialization",
            time: tr.t0.to_f64_lossy(),
            sample: 0,
        });
    }
    let mut best = (u.to_vec(), j0);
    let check_at = iters - iters / 10;
    let mut j_check = j0;
    let mut j = j0;
    for it in 0..iters {
        if it == check_at {
            j_check = best.1;
        }
        opt.step(u, &grad, T::lit(schedule.rate(it)));
        j = tr.cost_grad(u, &mut grad)?;
        if !j.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            break;
        }
        if j < best.1 {
            best.0.copy_from_slice(u);
            best.1 = j;
        }
    }
    let rel = (j_check - best.1).abs() / best.1.abs().max(T::lit(1e-12));
    let converged = j.is_finite() && rel < T::lit(1e-3);
    Ok((best.0, best.1, converged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{
        CostMode, EnergySpec, InteractionSpec, MultiAgentProblem, ObstacleSpec, TerminalCost,
    };

    /// One agent on a line: `ż = u`, `L = ½u²`, `G = (α/2)(z − y)²`.
    fn line(alpha1: f64, target: f64) -> Problem<f64> {
        Problem::MultiAgent(MultiAgentProblem {
            n_agents: 1,
            agent_dim: 1,
            horizon: 1.0,
            terminal: TerminalCost {
                alpha1,
                target: vec![target],
            },
            alpha2: 0.0,
            alpha3: 0.0,
            energy: EnergySpec::new(0.5, 0.0).unwrap(),
            obstacles: ObstacleSpec::default(),
            interaction: InteractionSpec::new(0.5).unwrap(),
            mode: CostMode::Training,
        })
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = crate::scenarios::build::<f64>(crate::scenarios::ScenarioId::Corridor)
            .unwrap()
            .problem;
        let x0 = [-2.0, -2.0, 2.0, -2.0];
        let tr = Transcription::new(&p, &x0, 0.0, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..tr.n_controls()).map(|_| Normal::new(2.0, 1.0).unwrap().sample(&mut rng)).collect();
        let mut g = vec![0.0; u.len()];
        let j = tr.cost_grad(&u, &mut g).unwrap();
        assert!((j - tr.cost(&u).unwrap().total).abs() < 1e-9 * j.abs().max(1.0));
        for i in 0..u.len() {
            let eps = 1e-6;
            let mut up = u.clone();
            up[i] += eps;
            let mut dn = u.clone();
            dn[i] -= eps;
            let fd = (tr.cost(&up).unwrap().total - tr.cost(&dn).unwrap().total) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn straight_line_optimum() {
        let (alpha, y) = (10.0, 3.0);
        let p = line(alpha, y);
        let cfg = BaselineConfig {
            n_t: 20,
            iters: 1500,
            starts: 2,
            ..Default::default()
        };
        let sol = solve(&p, &[0.0], 0.0, &cfg).unwrap();
        let u_star = alpha * y / (1.0 + alpha);
        for u in &sol.controls {
            assert!((u[0] - u_star).abs() < 1e-3, "{} vs {u_star}", u[0]);
        }
        let j_star = alpha * y * y / (2.0 * (1.0 + alpha));
        assert!((sol.cost.total - j_star).abs() < 1e-4);
        assert!(sol.converged);
    }

    #[test]
    fn never_worse_than_initialization() {
        let p = line(5.0, 1.0);
        let cfg = BaselineConfig {
            n_t: 5,
            iters: 3,
            lr: 10.0,
            noise_std: 0.0,
            starts: 1,
            ..Default::default()
        };
        let sol = solve(&p, &[0.0], 0.0, &cfg).unwrap();
        let tr = Transcription::new(&p, &[0.0], 0.0, 5).unwrap();
        let init = tr.cost(&[1.0; 5]).unwrap().total;
        assert!(sol.optimized.total <= init);
    }

    #[test]
    fn shorter_horizon_keeps_step_size() {
        let cfg = BaselineConfig::default();
        assert_eq!(cfg.steps_from(0.0, 1.0), 50);
        assert_eq!(cfg.steps_from(0.1, 1.0), 45);
        assert_eq!(cfg.steps_from(0.99, 1.0), 1);
    }
}
