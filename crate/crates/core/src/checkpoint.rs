//! JSON checkpoints of trained value networks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cast_vec, to_f64_vec, Scalar};
use crate::scenarios::ScenarioId;
use crate::trainer::TrainConfig;
use crate::value_net::{quadratic_rank, ParamGroups, ValueNet};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub d: usize,
    pub m: usize,
    pub gamma: usize,
}

/// Parameter groups as flat row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredParams {
    pub w: Vec<f64>,
    #[serde(rename = "K0")]
    pub k0: Vec<f64>,
    #[serde(rename = "K1")]
    pub k1: Vec<f64>,
    pub b0: Vec<f64>,
    pub b1: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub scenario: ScenarioId,
    pub dims: Dims,
    pub params: StoredParams,
    pub train_config: TrainConfig,
    pub seed: u64,
    pub iters: usize,
}

impl Checkpoint {
    pub fn new<T: Scalar>(scenario: ScenarioId, net: &ValueNet<T>, train_config: &TrainConfig, iters: usize) -> Self {
        let g = net.groups();
        let f = to_f64_vec::<T>;
        let l = net.layout();
        Self {
            format_version: FORMAT_VERSION,
            scenario,
            dims: Dims {
                d: l.d,
                m: l.m,
                gamma: l.gamma,
            },
            params: StoredParams {
                w: f(g.w),
                k0: f(g.k0),
                k1: f(g.k1),
                b0: f(g.b0),
                b1: f(g.b1),
                a: f(g.a),
                b: f(g.b),
                c: g.c.to_f64_lossy(),
            },
            train_config: train_config.clone(),
            seed: train_config.seed,
            iters,
        }
    }

    pub fn to_net<T: Scalar>(&self) -> Result<ValueNet<T>> {
        let Dims { d, m, gamma } = self.dims;
        if d == 0 || m == 0 {
            return Err(Error::Checkpoint("dimensions must be positive".into()));
        }
        if gamma != quadratic_rank(d) {
            return Err(Error::Checkpoint(format!(
                "gamma {gamma} does not match state dimension {d}"
            )));
        }
        let p = &self.params;
        let (w, k0, k1, b0, b1, a, b) = (
            cast_vec::<T>(&p.w),
            cast_vec::<T>(&p.k0),
            cast_vec::<T>(&p.k1),
            cast_vec::<T>(&p.b0),
            cast_vec::<T>(&p.b1),
            cast_vec::<T>(&p.a),
            cast_vec::<T>(&p.b),
        );
        ValueNet::from_groups(
            d,
            m,
            &ParamGroups {
                w: &w,
                k0: &k0,
                k1: &k1,
                b0: &b0,
                b1: &b1,
                a: &a,
                b: &b,
                c: T::lit(p.c),
            },
        )
        .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: serde_json::Value =
            serde_json::from_str(s).map_err(|e| Error::Checkpoint(format!("malformed JSON: {e}")))?;
        match raw.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported format_version {v} (expected {FORMAT_VERSION})"
                )))
            }
            None => return Err(Error::Checkpoint("missing format_version".into())),
        }
        let ck: Checkpoint =
            serde_json::from_value(raw).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ck.to_net::<f64>()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let net = ValueNet::<f64>::init(4, 6, 11).unwrap();
        let cfg = ScenarioId::Corridor.default_train_config();
        Checkpoint::new(ScenarioId::Corridor, &net, &cfg, 17)
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let a = ck.to_net::<f64>().unwrap();
        let b = back.to_net::<f64>().unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json().unwrap()).unwrap();
        v["format_version"] = 99.into();
        let err = Checkpoint::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("format_version 99"));
        assert!(err.is_config());
    }

    #[test]
    fn truncated_params_are_rejected() {
        let mut ck = sample();
        ck.params.k1.pop();
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    }

    #[test]
    fn garbage_is_a_checkpoint_error() {
        assert!(matches!(Checkpoint::from_json("{not json"), Err(Error::Checkpoint(_))));
    }
}
