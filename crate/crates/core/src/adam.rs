//! Adam optimizer over a flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Piecewise-constant learning rate: `(first_iteration, rate)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LrSchedule(pub Vec<(usize, f64)>);

impl LrSchedule {
    pub fn constant(rate: f64) -> Self {
        Self(vec![(0, rate)])
    }

    /// `initial`, multiplied by `factor` every `every` iterations up to `max_iters`.
    pub fn step_decay(initial: f64, factor: f64, every: usize, max_iters: usize) -> Self {
        let every = every.max(1);
        let mut steps = vec![(0, initial)];
        let mut rate = initial;
        let mut it = every;
        while it < max_iters {
            rate *= factor;
            steps.push((it, rate));
            it += every;
        }
        Self(steps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.first().map(|s| s.0) != Some(0) {
            return Err(Error::config("learning-rate schedule must start at iteration 0"));
        }
        if self.0.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::config("learning-rate schedule iterations must increase"));
        }
        if self.0.iter().any(|s| !(s.1 > 0.0) || !s.1.is_finite()) {
            return Err(Error::config("learning rates must be positive"));
        }
        Ok(())
    }

    pub fn rate(&self, iter: usize) -> f64 {
        self.0
            .iter()
            .take_while(|(start, _)| *start <= iter)
            .last()
            .map_or(self.0[0].1, |s| s.1)
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = T::zero());
        self.v.iter_mut().for_each(|x| *x = T::zero());
        self.t = 0;
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: T) {
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        let (b1, b2) = (self.beta1, self.beta2);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
