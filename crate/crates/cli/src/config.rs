//! Flat, dotted-key experiment configuration.
//!
//! Values resolve in three layers: built-in defaults, then a JSON object from
//! a config file, then `key=value` overrides from the command line. Unknown
//! keys are rejected. The resolved map is what every output file embeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use wiretap_core::neural::TrainSchedule;
use wiretap_core::{ChannelModel, CodeSpec, SystemConfig};

use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every accepted key with its default.
pub fn defaults() -> BTreeMap<String, Value> {
    let pe: Vec<f64> = (0..=10).map(|i| f64::from(i) * 0.05).collect();
    let entries = [
        ("seed", json!(42)),
        ("output", json!("out")),
        ("system.code", json!("hamming74")),
        ("system.k", json!(3)),
        ("system.b", json!(1)),
        ("system.channel", json!("bsc:0.1")),
        ("system.channel_bob", Value::Null),
        ("system.uhf", json!(true)),
        ("system.fresh_hash", json!(false)),
        ("data.count", json!(10_000)),
        ("data.path", Value::Null),
        ("data.with_bob", json!(true)),
        ("estimator", json!("cnbmm")),
        ("checkpoint", Value::Null),
        ("model.widths", json!("desk")),
        ("model.experts", json!(2)),
        ("model.rank", Value::Null),
        ("model.temperature", json!(10.0)),
        ("model.lambda_div", json!(0.01)),
        ("model.lambda_int", json!(1e-6)),
        ("train.curriculum", json!("fixed")),
        ("train.curriculum_start", Value::Null),
        ("train.curriculum_end", Value::Null),
        ("train.curriculum_step", Value::Null),
        ("train.epochs_per_stage", json!(10)),
        ("train.epochs", json!(20)),
        ("train.samples", json!(100_000)),
        ("train.eval_samples", json!(10_000)),
        ("train.batch_size", json!(512)),
        ("train.lr", Value::Null),
        ("train.weight_decay", json!(1e-9)),
        ("train.ema_decay", json!(0.999)),
        ("train.clip_norm", json!(5.0)),
        ("oracle.target", json!("secret")),
        ("oracle.samples", json!(100_000)),
        ("bounds.samples", json!(10_000)),
        ("bounds.grid_points", json!(64)),
        ("bounds.eps_lo", json!(1e-6)),
        ("bounds.eps_hi", json!(0.999)),
        ("bounds.rel_tol", json!(1e-4)),
        ("bounds.h_max_bits", Value::Null),
        ("bounds.h_cond_bits", Value::Null),
        ("design.max_leakage", json!(0.5)),
        ("design.k0", Value::Null),
        ("design.max_iters", json!(32)),
        ("design.retrain", json!("fresh-per-k")),
        ("sweep.axis", json!("pe")),
        ("sweep.values", json!(pe)),
        ("sweep.uhf", json!([true, false])),
        ("sweep.seeds", json!(1)),
        ("sweep.estimators", Value::Null),
        ("sweep.mode", json!("curriculum")),
        ("sweep.ber_samples", json!(20_000)),
    ];
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, Value>,
}

/// Parses an override value as JSON, falling back to a plain string.
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { values: defaults() }
    }
}

impl ExperimentConfig {
    pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> CliResult<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::MissingFile {
                path: path.display().to_string(),
                source,
            })?;
            let parsed: Value = serde_json::from_str(&text)?;
            let Value::Object(map) = parsed else {
                return Err(CliError::Config(format!("{} must hold a JSON object", path.display())));
            };
            for (k, v) in map {
                cfg.set(&k, v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v.clone())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: Value) -> CliResult<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown config key '{key}'"))),
        }
    }

    pub fn with(mut self, key: &str, value: Value) -> CliResult<Self> {
        self.set(key, value)?;
        Ok(self)
    }

    pub fn to_json(&self) -> Value {
        json!(self.values)
    }

    fn raw(&self, key: &str) -> &Value {
        self.values.get(key).unwrap_or_else(|| panic!("config key '{key}' has no default"))
    }

    fn bad(key: &str, want: &str, v: &Value) -> CliError {
        CliError::Config(format!("'{key}' must be {want}, got {v}"))
    }

    pub fn is_null(&self, key: &str) -> bool {
        self.raw(key).is_null()
    }

    pub fn u64(&self, key: &str) -> CliResult<u64> {
        let v = self.raw(key);
        v.as_u64().ok_or_else(|| Self::bad(key, "a nonnegative integer", v))
    }

    pub fn usize(&self, key: &str) -> CliResult<usize> {
        Ok(self.u64(key)? as usize)
    }

    pub fn opt_usize(&self, key: &str) -> CliResult<Option<usize>> {
        if self.is_null(key) {
            Ok(None)
        } else {
            self.usize(key).map(Some)
        }
    }

    pub fn f64(&self, key: &str) -> CliResult<f64> {
        let v = self.raw(key);
        v.as_f64().ok_or_else(|| Self::bad(key, "a number", v))
    }

    pub fn opt_f64(&self, key: &str) -> CliResult<Option<f64>> {
        if self.is_null(key) {
            Ok(None)
        } else {
            self.f64(key).map(Some)
        }
    }

    pub fn bool(&self, key: &str) -> CliResult<bool> {
        let v = self.raw(key);
        v.as_bool().ok_or_else(|| Self::bad(key, "true or false", v))
    }

    pub fn str(&self, key: &str) -> CliResult<&str> {
        let v = self.raw(key);
        v.as_str().ok_or_else(|| Self::bad(key, "a string", v))
    }

    pub fn opt_str(&self, key: &str) -> CliResult<Option<&str>> {
        if self.is_null(key) {
            Ok(None)
        } else {
            self.str(key).map(Some)
        }
    }

    pub fn f64_list(&self, key: &str) -> CliResult<Vec<f64>> {
        let v = self.raw(key);
        let arr = v.as_array().ok_or_else(|| Self::bad(key, "a list of numbers", v))?;
        arr.iter().map(|x| x.as_f64().ok_or_else(|| Self::bad(key, "a list of numbers", v))).collect()
    }

    pub fn bool_list(&self, key: &str) -> CliResult<Vec<bool>> {
        let v = self.raw(key);
        let arr = v.as_array().ok_or_else(|| Self::bad(key, "a list of booleans", v))?;
        arr.iter().map(|x| x.as_bool().ok_or_else(|| Self::bad(key, "a list of booleans", v))).collect()
    }

    pub fn str_list(&self, key: &str) -> CliResult<Option<Vec<String>>> {
        let v = self.raw(key);
        if v.is_null() {
            return Ok(None);
        }
        let arr = v.as_array().ok_or_else(|| Self::bad(key, "a list of strings", v))?;
        arr.iter()
            .map(|x| x.as_str().map(str::to_string).ok_or_else(|| Self::bad(key, "a list of strings", v)))
            .collect::<CliResult<Vec<_>>>()
            .map(Some)
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.u64("seed")
    }

    pub fn output_dir(&self) -> CliResult<PathBuf> {
        Ok(PathBuf::from(self.str("output")?))
    }

    pub fn code(&self) -> CliResult<CodeSpec> {
        Ok(self.str("system.code")?.parse()?)
    }

    pub fn channel(&self) -> CliResult<ChannelModel> {
        Ok(self.str("system.channel")?.parse()?)
    }

    pub fn channel_bob(&self) -> CliResult<ChannelModel> {
        match self.opt_str("system.channel_bob")? {
            Some(s) => Ok(s.parse()?),
            None => self.channel(),
        }
    }

    /// The system described by the `system.*` keys, with Eve's (and, unless
    /// set separately, Bob's) channel replaced by `channel` when given.
    pub fn system_with(&self, channel: Option<ChannelModel>, uhf: Option<bool>, seed: Option<u64>) -> CliResult<SystemConfig> {
        let eve = channel.map_or_else(|| self.channel(), Ok)?;
        let bob = if self.is_null("system.channel_bob") {
            eve
        } else {
            self.channel_bob()?
        };
        let mut sys = SystemConfig::new(
            self.usize("system.k")?,
            self.usize("system.b")?,
            self.code()?,
            eve,
            bob,
            uhf.map_or_else(|| self.bool("system.uhf"), Ok)?,
            seed.map_or_else(|| self.seed(), Ok)?,
        )?;
        sys.fresh_hash_per_record = self.bool("system.fresh_hash")?;
        Ok(sys)
    }

    pub fn system(&self) -> CliResult<SystemConfig> {
        self.system_with(None, None, None)
    }

    /// Channel for one point of the sweep axis.
    pub fn sweep_channel(&self, value: f64) -> CliResult<ChannelModel> {
        Ok(match self.str("sweep.axis")? {
            "pe" => ChannelModel::bsc(value)?,
            "snr" => ChannelModel::awgn_snr_db(value)?,
            other => return Err(CliError::Config(format!("sweep.axis must be 'pe' or 'snr', got '{other}'"))),
        })
    }

    fn base_schedule(&self, channels: Vec<ChannelModel>, estimator: &str) -> CliResult<TrainSchedule> {
        let default_lr = if estimator == "mine" { 1e-5 } else { 1e-3 };
        let s = TrainSchedule {
            channels,
            train_samples: self.usize("train.samples")?,
            eval_samples: self.usize("train.eval_samples")?,
            batch_size: self.usize("train.batch_size")?,
            lr: self.opt_f64("train.lr")?.unwrap_or(default_lr),
            weight_decay: self.f64("train.weight_decay")?,
            ema_decay: self.f64("train.ema_decay")?,
            clip_norm: self.f64("train.clip_norm")?,
        };
        s.validate()?;
        Ok(s)
    }

    /// Training schedule from the `train.*` keys.
    pub fn schedule(&self, estimator: &str) -> CliResult<TrainSchedule> {
        let per_stage = self.usize("train.epochs_per_stage")?;
        let stages = |start: f64, end: f64, step: f64| -> CliResult<(f64, f64, f64)> {
            Ok((
                self.opt_f64("train.curriculum_start")?.unwrap_or(start),
                self.opt_f64("train.curriculum_end")?.unwrap_or(end),
                self.opt_f64("train.curriculum_step")?.unwrap_or(step),
            ))
        };
        let channels = match self.str("train.curriculum")? {
            "fixed" => vec![self.channel()?; self.usize("train.epochs")?],
            "bsc" => {
                let (a, b, s) = stages(0.0, 0.5, 0.05)?;
                TrainSchedule::bsc_curriculum(a, b, s, per_stage)?.channels
            }
            "awgn" => {
                let (a, b, s) = stages(10.0, -10.0, -2.0)?;
                TrainSchedule::awgn_curriculum(a, b, s, per_stage)?.channels
            }
            other => return Err(CliError::Config(format!("unknown curriculum '{other}'"))),
        };
        self.base_schedule(channels, estimator)
    }

    /// Schedule whose stages are the given channels.
    pub fn staged_schedule(&self, stages: &[ChannelModel], estimator: &str) -> CliResult<TrainSchedule> {
        let per_stage = self.usize("train.epochs_per_stage")?;
        let channels = stages.iter().flat_map(|&c| std::iter::repeat_n(c, per_stage)).collect();
        self.base_schedule(channels, estimator)
    }

    /// Fixed-channel schedule of `train.epochs` epochs.
    pub fn fixed_schedule(&self, channel: ChannelModel, estimator: &str) -> CliResult<TrainSchedule> {
        self.base_schedule(vec![channel; self.usize("train.epochs")?], estimator)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"system.k": 2, "system.b": 2, "seed": 5}"#).unwrap();
        let cfg = ExperimentConfig::resolve(Some(&path), &[("seed".into(), parse_value("9"))]).unwrap();
        assert_eq!(cfg.usize("system.k").unwrap(), 2);
        assert_eq!(cfg.seed().unwrap(), 9);
        assert_eq!(cfg.str("system.code").unwrap(), "hamming74");
    }

    #[test]
    fn unknown_keys_and_bad_types_fail() {
        assert!(ExperimentConfig::default().with("system.kk", json!(1)).is_err());
        let cfg = ExperimentConfig::default().with("system.k", json!("three")).unwrap();
        assert!(cfg.usize("system.k").is_err());
        assert_eq!(parse_value("bsc:0.2"), json!("bsc:0.2"));
        assert_eq!(parse_value("[0.1, 0.2]"), json!([0.1, 0.2]));
    }

    #[test]
    fn schedules_follow_keys() {
        let cfg = ExperimentConfig::default().with("train.curriculum", json!("bsc")).unwrap();
        assert_eq!(cfg.schedule("cnbmm").unwrap().epochs(), 110);
        assert_eq!(cfg.schedule("mine").unwrap().lr, 1e-5);
        let cfg = cfg.with("train.curriculum_end", json!(0.2)).unwrap();
        assert_eq!(cfg.schedule("cnbmm").unwrap().epochs(), 50);
        let sys = ExperimentConfig::default().system().unwrap();
        assert_eq!((sys.n(), sys.k, sys.b), (7, 3, 1));
    }
}
