//! Run configuration files and their resolution against scenario presets.

use std::path::{Path, PathBuf};

use oc_core::baseline::BaselineConfig;
use oc_core::evaluation::SweepConfig;
use oc_core::scenarios::{default_lr_schedule, ScenarioId, ScenarioParams};
use oc_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::exit::CliError;

/// One JSON document per run. Every section is a partial object merged over
/// the scenario's defaults, so a fully resolved config is also a valid input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: Option<ScenarioId>,
    /// Training settings (any subset of the training-config fields).
    #[serde(default = "empty_object")]
    pub train: Value,
    /// Scenario parameter overrides (merged recursively).
    #[serde(default = "empty_object")]
    pub overrides: Value,
    #[serde(default = "empty_object")]
    pub baseline: Value,
    #[serde(default = "empty_object")]
    pub sweep: Value,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Seeds every random component when set.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: None,
            train: empty_object(),
            overrides: empty_object(),
            baseline: empty_object(),
            sweep: empty_object(),
            out_dir: None,
            seed: None,
        }
    }
}

/// Fully expanded settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub scenario: ScenarioId,
    pub params: ScenarioParams,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub sweep: SweepConfig,
}

impl Resolved {
    /// The equivalent config file: feeding it back reproduces this run.
    pub fn to_run_config(&self, out_dir: Option<&Path>) -> RunConfig {
        RunConfig {
            scenario: Some(self.scenario),
            train: to_value(&self.train),
            overrides: to_value(&self.params),
            baseline: to_value(&self.baseline),
            sweep: to_value(&self.sweep),
            out_dir: out_dir.map(Path::to_path_buf),
            seed: None,
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config types serialize to JSON")
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn patched<T: Serialize + serde::de::DeserializeOwned>(base: &T, patch: &Value, what: &str) -> Result<T, CliError> {
    if !patch.is_object() {
        return Err(CliError::config(format!("'{what}' must be a JSON object")));
    }
    let mut v = serde_json::to_value(base).map_err(|e| CliError::config(e.to_string()))?;
    merge(&mut v, patch);
    serde_json::from_value(v).map_err(|e| CliError::config(format!("{what}: {e}")))
}

impl RunConfig {
    /// Reads a run config, or the `run_config` embedded in a manifest.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut v: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if let Some(inner) = v.get_mut("run_config") {
            v = inner.take();
        }
        serde_json::from_value(v).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self, fallback: ScenarioId) -> Result<Resolved, CliError> {
        let scenario = self.scenario.unwrap_or(fallback);
        let preset = ScenarioParams::preset(scenario)?;
        let params = preset.with_overrides(&self.overrides)?;
        let mut train: TrainConfig = patched(&scenario.default_train_config(), &self.train, "train")?;
        let mut baseline: BaselineConfig = patched(&BaselineConfig::default(), &self.baseline, "baseline")?;
        let mut sweep: SweepConfig = patched(&SweepConfig::default(), &self.sweep, "sweep")?;
        if let Some(seed) = self.seed {
            train.seed = seed;
            baseline.seed = seed;
            sweep.seed = seed;
            sweep.baseline.seed = seed;
            sweep.bootstrap.seed = seed;
        }
        // Keep the default decay points in step with an overridden length.
        let iters_overridden = self.train.get("max_iters").is_some();
        if iters_overridden && self.train.get("lr_schedule").is_none() {
            train.lr_schedule = default_lr_schedule(train.max_iters);
        }
        train.validate()?;
        baseline.validate()?;
        Ok(Resolved {
            scenario,
            params,
            train,
            baseline,
            sweep,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_to_presets() {
        let r = RunConfig::default().resolve(ScenarioId::Corridor).unwrap();
        assert_eq!(r.train, ScenarioId::Corridor.default_train_config());
        assert_eq!(r.params, ScenarioParams::preset(ScenarioId::Corridor).unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad: Result<RunConfig, _> = serde_json::from_str(r#"{"scenario":"corridor","nope":1}"#);
        assert!(bad.is_err());
        let cfg: RunConfig = serde_json::from_str(r#"{"train":{"widht":3}}"#).unwrap();
        assert!(cfg.resolve(ScenarioId::Corridor).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"scenario":"swap2","train":{"max_iters":40},"seed":7}"#).unwrap();
        let r = cfg.resolve(ScenarioId::Corridor).unwrap();
        assert_eq!(r.train.seed, 7);
        assert_eq!(r.train.lr_schedule.0[1].0, 18);
        let again = r.to_run_config(None).resolve(ScenarioId::Corridor).unwrap();
        assert_eq!(again, r);
    }
}
