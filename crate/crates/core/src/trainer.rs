//! Training loop: minimizes the mean rollout objective over samples from the
//! initial distribution with Adam.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::adam::LrSchedule;
use crate::adam::Adam;
use crate::error::{check_dim, Error, Result};
use crate::problem::{ControlProblem, Problem};
use crate::rollout::{Engine, LossSeed, SampleTerms};
use crate::scalar::Scalar;
use crate::scenarios::InitialDistribution;
use crate::value_net::ValueNet;

/// Samples per parallel work item. Fixed so that reductions are independent
/// of the thread count.
pub const CHUNK: usize = 16;

const HOLDOUT_SEED_SALT: u64 = 0x0DD5_EED5_0F0B_5E7D;

/// Replaces the penalty weights after a fraction of the iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSwitch {
    pub fraction: f64,
    pub betas: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Hidden width `m`.
    pub width: usize,
    /// Penalty weights for `(c_HJt, c_HJfin, c_HJgrad)`.
    pub betas: [f64; 3],
    #[serde(default)]
    pub beta_switch: Option<BetaSwitch>,
    pub batch_size: usize,
    pub max_iters: usize,
    /// Iterations between fresh draws of the training batch.
    pub resample_every: usize,
    pub lr_schedule: LrSchedule,
    pub n_t_train: usize,
    pub n_t_val: usize,
    pub val_every: usize,
    pub holdout_size: usize,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("batch_size", self.batch_size),
            ("max_iters", self.max_iters),
            ("resample_every", self.resample_every),
            ("n_t_train", self.n_t_train),
            ("val_every", self.val_every),
            ("holdout_size", self.holdout_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.n_t_val <= self.n_t_train {
            return Err(Error::config(format!(
                "n_t_val ({}) must exceed n_t_train ({})",
                self.n_t_val, self.n_t_train
            )));
        }
        let betas_ok = |b: &[f64; 3]| b.iter().all(|v| *v >= 0.0 && v.is_finite());
        if !betas_ok(&self.betas) {
            return Err(Error::config("penalty weights must be non-negative"));
        }
        if let Some(sw) = &self.beta_switch {
            if !betas_ok(&sw.betas) || !(0.0..=1.0).contains(&sw.fraction) {
                return Err(Error::config("invalid penalty-weight switch"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::config("checkpoint_every must be positive"));
        }
        self.lr_schedule.validate()
    }

    pub fn betas_at(&self, iter: usize) -> [f64; 3] {
        match &self.beta_switch {
            Some(sw) if (iter as f64) >= sw.fraction * self.max_iters as f64 => sw.betas,
            _ => self.betas,
        }
    }

    /// Seed for the training batch drawn at `iter`.
    pub fn batch_seed(&self, iter: usize) -> u64 {
        let epoch = (iter / self.resample_every) as u64 + 1;
        self.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }

    pub fn holdout_seed(&self) -> u64 {
        self.seed ^ HOLDOUT_SEED_SALT
    }
}

/// Batch-mean objective terms and their parameter gradient.
///
/// `grad` is overwritten with `∂/∂θ mean(seed·terms)` for
/// `seed = (1, 1, β1, β2, β3)`.
pub fn loss_and_grad<T: Scalar, P: ControlProblem<T>>(
    net: &ValueNet<T>,
    problem: &P,
    batch: &[Vec<T>],
    n_t: usize,
    betas: [T; 3],
    grad: &mut [T],
) -> Result<SampleTerms<T>> {
    check_dim("parameter gradient", net.num_params(), grad.len())?;
    if batch.is_empty() || n_t == 0 {
        return Err(Error::config("loss needs a non-empty batch and n_t >= 1"));
    }
    let inv = T::one() / T::from_usize(batch.len()).unwrap();
    let seed = LossSeed::training(betas, inv);
    let n_params = net.num_params();
    let parts: Vec<Result<(SampleTerms<T>, Vec<T>)>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut eng = Engine::new(net, problem)?;
            let mut tape = Vec::new();
            let mut g = vec![T::zero(); n_params];
            let mut terms = SampleTerms::default();
            for (i, x) in chunk.iter().enumerate() {
                let t = eng
                    .adjoint(x, n_t, &seed, &mut tape, &mut g)
                    .map_err(|e| e.with_sample(ci * CHUNK + i))?;
                terms.add(&t);
            }
            Ok((terms, g))
        })
        .collect();
    grad.iter_mut().for_each(|g| *g = T::zero());
    let mut total = SampleTerms::default();
    for part in parts {
        let (t, g) = part?;
        total.add(&t);
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += *b;
        }
    }
    Ok(total.scaled(inv))
}

/// Batch-mean objective without gradients.
pub fn loss<T: Scalar, P: ControlProblem<T>>(
    net: &ValueNet<T>,
    problem: &P,
    batch: &[Vec<T>],
    n_t: usize,
    betas: [T; 3],
) -> Result<(T, SampleTerms<T>)> {
    if batch.is_empty() || n_t == 0 {
        return Err(Error::config("loss needs a non-empty batch and n_t >= 1"));
    }
    let inv = T::one() / T::from_usize(batch.len()).unwrap();
    let parts: Vec<Result<SampleTerms<T>>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut eng = Engine::new(net, problem)?;
            let mut terms = SampleTerms::default();
            for (i, x) in chunk.iter().enumerate() {
                let r = eng
                    .integrate(T::zero(), x, n_t, false)
                    .map_err(|e| e.with_sample(ci * CHUNK + i))?;
                terms.add(&r.terms);
            }
            Ok(terms)
        })
        .collect();
    let mut total = SampleTerms::default();
    for p in parts {
        total.add(&p?);
    }
    let mean = total.scaled(inv);
    Ok((mean.objective(&LossSeed::training(betas, T::one())), mean))
}

/// Holdout statistics of the closed-loop policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    /// Mean of `ℓ + G`.
    pub objective: f64,
    pub ell: f64,
    pub terminal: f64,
    pub c_hjt: f64,
    /// Largest pairwise interaction value seen along any trajectory.
    pub max_interaction: f64,
    /// Largest obstacle cost `Q` seen along any trajectory.
    pub max_obstacle: f64,
    pub collision: bool,
}

/// Rolls out every sample with `n_t` steps and audits the trajectories.
pub fn validate<T: Scalar>(
    net: &ValueNet<T>,
    problem: &Problem<T>,
    samples: &[Vec<T>],
    n_t: usize,
) -> Result<Validation> {
    if samples.is_empty() {
        return Err(Error::config("validation needs at least one sample"));
    }
    let parts: Vec<Result<Validation>> = samples
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut eng = Engine::new(net, problem)?;
            let mut acc = Validation::empty();
            for (i, x) in chunk.iter().enumerate() {
                let r = eng
                    .integrate(T::zero(), x, n_t, true)
                    .map_err(|e| e.with_sample(ci * CHUNK + i))?;
                acc.ell += r.terms.ell.to_f64_lossy();
                acc.terminal += r.terms.terminal.to_f64_lossy();
                acc.c_hjt += r.terms.c_hjt.to_f64_lossy();
                for z in &r.states {
                    acc.max_interaction = acc.max_interaction.max(problem.max_interaction(z).to_f64_lossy());
                    acc.max_obstacle = acc.max_obstacle.max(problem.obstacle_cost(z).to_f64_lossy());
                    acc.collision |= problem.in_hard_obstacle(z);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = Validation::empty();
    for p in parts {
        let p = p?;
        total.ell += p.ell;
        total.terminal += p.terminal;
        total.c_hjt += p.c_hjt;
        total.max_interaction = total.max_interaction.max(p.max_interaction);
        total.max_obstacle = total.max_obstacle.max(p.max_obstacle);
        total.collision |= p.collision;
    }
    let n = samples.len() as f64;
    total.ell /= n;
    total.terminal /= n;
    total.c_hjt /= n;
    total.objective = total.ell + total.terminal;
    Ok(total)
}

impl Validation {
    fn empty() -> Self {
        Self {
            objective: 0.0,
            ell: 0.0,
            terminal: 0.0,
            c_hjt: 0.0,
            max_interaction: 0.0,
            max_obstacle: 0.0,
            collision: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub loss: f64,
    pub ell: f64,
    pub terminal: f64,
    pub c_hjt: f64,
    pub c_hjfin: f64,
    pub c_hjgrad: f64,
    pub lr: f64,
    pub elapsed_s: f64,
    pub validation: Option<Validation>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<IterRecord>,
}

impl TrainLog {
    /// Iterations that carry a validation record.
    pub fn validations(&self) -> impl Iterator<Item = (usize, &Validation)> {
        self.records
            .iter()
            .filter_map(|r| r.validation.as_ref().map(|v| (r.iter, v)))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "iter",
            "loss",
            "ell",
            "terminal",
            "c_hjt",
            "c_hjfin",
            "c_hjgrad",
            "lr",
            "elapsed_s",
            "val_objective",
            "val_ell",
            "val_terminal",
            "val_max_interaction",
            "val_max_obstacle",
            "val_collision",
        ])?;
        for r in &self.records {
            let mut row = vec![
                r.iter.to_string(),
                r.loss.to_string(),
                r.ell.to_string(),
                r.terminal.to_string(),
                r.c_hjt.to_string(),
                r.c_hjfin.to_string(),
                r.c_hjgrad.to_string(),
                r.lr.to_string(),
                r.elapsed_s.to_string(),
            ];
            match &r.validation {
                Some(v) => row.extend([
                    v.objective.to_string(),
                    v.ell.to_string(),
                    v.terminal.to_string(),
                    v.max_interaction.to_string(),
                    v.max_obstacle.to_string(),
                    u8::from(v.collision).to_string(),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 6)),
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    /// A non-finite loss or gradient stopped training; the returned network
    /// holds the last parameters with a finite loss.
    Aborted { iter: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub net: ValueNet<T>,
    pub log: TrainLog,
    pub status: TrainStatus,
    /// Number of completed optimizer steps.
    pub iters: usize,
}

pub enum TrainEvent<'a, T> {
    Iteration(&'a IterRecord),
    Checkpoint { iter: usize, net: &'a ValueNet<T> },
}

/// Trains from `init` with the given configuration.
pub fn train<T: Scalar>(
    problem: &Problem<T>,
    rho: &InitialDistribution<T>,
    cfg: &TrainConfig,
    init: ValueNet<T>,
) -> Result<TrainOutcome<T>> {
    train_with(problem, rho, cfg, init, &mut |_| {})
}

/// [`train`] with a callback for per-iteration records and periodic checkpoints.
pub fn train_with<T: Scalar>(
    problem: &Problem<T>,
    rho: &InitialDistribution<T>,
    cfg: &TrainConfig,
    init: ValueNet<T>,
    observer: &mut dyn FnMut(TrainEvent<'_, T>),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    check_dim("network state dimension", problem.state_dim(), init.state_dim())?;
    check_dim("initial distribution", problem.state_dim(), rho.center.len())?;
    let val_problem = problem.validation();
    let holdout = rho.sample(cfg.holdout_size, cfg.holdout_seed());

    let mut net = init;
    let mut last_good = net.params().to_vec();
    let mut opt = Adam::new(net.num_params());
    let mut grad = vec![T::zero(); net.num_params()];
    let mut log = TrainLog::default();
    let mut batch = Vec::new();
    let start = Instant::now();
    let wd = T::lit(cfg.weight_decay);

    let abort = |net: &mut ValueNet<T>, last_good: &[T], iter: usize, reason: String, log: TrainLog| {
        net.params_mut().copy_from_slice(last_good);
        Ok(TrainOutcome {
            net: net.clone(),
            log,
            status: TrainStatus::Aborted { iter, reason },
            iters: iter,
        })
    };

    for iter in 0..cfg.max_iters {
        if iter % cfg.resample_every == 0 {
            batch = rho.sample(cfg.batch_size, cfg.batch_seed(iter));
        }
        let b = cfg.betas_at(iter);
        let betas = [T::lit(b[0]), T::lit(b[1]), T::lit(b[2])];
        let terms = match loss_and_grad(&net, problem, &batch, cfg.n_t_train, betas, &mut grad) {
            Ok(t) => t,
            Err(e @ Error::NonFinite { .. }) => {
                return abort(&mut net, &last_good, iter, e.to_string(), log);
            }
            Err(e) => return Err(e),
        };
        let loss_val = terms.objective(&LossSeed::training(betas, T::one()));
        if !loss_val.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return abort(&mut net, &last_good, iter, "non-finite loss or gradient".into(), log);
        }
        last_good.copy_from_slice(net.params());

        let validation = if iter % cfg.val_every == 0 {
            match validate(&net, &val_problem, &holdout, cfg.n_t_val) {
                Ok(v) => Some(v),
                Err(e @ Error::NonFinite { .. }) => {
                    return abort(&mut net, &last_good, iter, e.to_string(), log);
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };

        let lr = cfg.lr_schedule.rate(iter);
        if wd > T::zero() {
            for (g, &p) in grad.iter_mut().zip(net.params()) {
                *g += wd * p;
            }
        }
        opt.step(net.params_mut(), &grad, T::lit(lr));

        let rec = IterRecord {
            iter,
            loss: loss_val.to_f64_lossy(),
            ell: terms.ell.to_f64_lossy(),
            terminal: terms.terminal.to_f64_lossy(),
            c_hjt: terms.c_hjt.to_f64_lossy(),
            c_hjfin: terms.c_hjfin.to_f64_lossy(),
            c_hjgrad: terms.c_hjgrad.to_f64_lossy(),
            lr,
            elapsed_s: start.elapsed().as_secs_f64(),
            validation,
        };
        observer(TrainEvent::Iteration(&rec));
        log.records.push(rec);
        if let Some(k) = cfg.checkpoint_every {
            if (iter + 1) % k == 0 {
                observer(TrainEvent::Checkpoint {
                    iter: iter + 1,
                    net: &net,
                });
            }
        }
    }

    // Final validation of the returned parameters.
    let final_val = match validate(&net, &val_problem, &holdout, cfg.n_t_val) {
        Ok(v) => v,
        Err(e @ Error::NonFinite { .. }) => {
            let iters = cfg.max_iters;
            return abort(&mut net, &last_good, iters, e.to_string(), log);
        }
        Err(e) => return Err(e),
    };
    if let Some(last) = log.records.last() {
        let mut rec = last.clone();
        rec.iter = cfg.max_iters;
        rec.validation = Some(final_val);
        rec.elapsed_s = start.elapsed().as_secs_f64();
        log.records.push(rec);
    }
    Ok(TrainOutcome {
        net,
        log,
        status: TrainStatus::Completed,
        iters: cfg.max_iters,
    })
}
