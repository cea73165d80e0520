use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::bounds::MiEstimatorKind;
use crate::decomposition::PathKind;
use crate::error::{Error, Result};

/// Settings for one step-function tracking experiment.
///
/// Every field has a default, so an empty TOML document yields the
/// reference setup: four scalar variables, targets `2, 4, 6, 8, 10` nats,
/// 4000 steps per target on batches of 64, critics with 20 hidden units
/// trained by Adam at `1e-4`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub tc_targets: Vec<f64>,
    pub steps_per_target: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub lr: f64,
    pub smoothing_bandwidth: usize,
    pub eval_batches: usize,
    pub estimators: Vec<MiEstimatorKind>,
    pub paths: Vec<PathKind>,
    pub seed: u64,
    /// Re-initialize every network at the start of each target segment
    /// instead of training one network through all segments.
    pub fresh_networks_per_target: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dim: 4,
            tc_targets: vec![2.0, 4.0, 6.0, 8.0, 10.0],
            steps_per_target: 4000,
            batch_size: 64,
            hidden: 20,
            lr: 1e-4,
            smoothing_bandwidth: 200,
            eval_batches: 100,
            estimators: MiEstimatorKind::ALL.to_vec(),
            paths: PathKind::ALL.to_vec(),
            seed: 0,
            fresh_networks_per_target: false,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dim: Option<usize>,
    tc_targets: Option<Vec<f64>>,
    steps_per_target: Option<usize>,
    batch_size: Option<usize>,
    hidden: Option<usize>,
    lr: Option<f64>,
    smoothing_bandwidth: Option<usize>,
    eval_batches: Option<usize>,
    estimators: Option<Vec<String>>,
    paths: Option<Vec<String>>,
    seed: Option<u64>,
    fresh_networks_per_target: Option<bool>,
}

impl ExperimentConfig {
    /// Parses a flat TOML document; missing keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let d = ExperimentConfig::default();
        let config = ExperimentConfig {
            dim: raw.dim.unwrap_or(d.dim),
            tc_targets: raw.tc_targets.unwrap_or(d.tc_targets),
            steps_per_target: raw.steps_per_target.unwrap_or(d.steps_per_target),
            batch_size: raw.batch_size.unwrap_or(d.batch_size),
            hidden: raw.hidden.unwrap_or(d.hidden),
            lr: raw.lr.unwrap_or(d.lr),
            smoothing_bandwidth: raw.smoothing_bandwidth.unwrap_or(d.smoothing_bandwidth),
            eval_batches: raw.eval_batches.unwrap_or(d.eval_batches),
            estimators: match raw.estimators {
                Some(names) => names
                    .iter()
                    .map(|s| s.parse())
                    .collect::<Result<Vec<_>>>()
                    .map_err(to_config)?,
                None => d.estimators,
            },
            paths: match raw.paths {
                Some(names) => names
                    .iter()
                    .map(|s| s.parse())
                    .collect::<Result<Vec<_>>>()
                    .map_err(to_config)?,
                None => d.paths,
            },
            seed: raw.seed.unwrap_or(d.seed),
            fresh_networks_per_target: raw.fresh_networks_per_target.unwrap_or(d.fresh_networks_per_target),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("steps_per_target", self.steps_per_target),
            ("hidden", self.hidden),
            ("smoothing_bandwidth", self.smoothing_bandwidth),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.eval_batches < 2 {
            return Err(Error::Config("eval_batches must be at least 2".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be a positive number, got {}", self.lr)));
        }
        if self.tc_targets.is_empty() {
            return Err(Error::Config("tc_targets must not be empty".into()));
        }
        if let Some(t) = self.tc_targets.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::Config(format!("tc_targets must be nonnegative, got {t}")));
        }
        if self.tc_targets.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("tc_targets must be nondecreasing".into()));
        }
        if self.dim == 1 && self.tc_targets.iter().any(|&t| t > 0.0) {
            return Err(Error::Config("a single variable only admits tc_targets of 0".into()));
        }
        if self.smoothing_bandwidth > self.steps_per_target {
            return Err(Error::Config(format!(
                "smoothing_bandwidth ({}) must not exceed steps_per_target ({})",
                self.smoothing_bandwidth, self.steps_per_target
            )));
        }
        if self.estimators.is_empty() || self.paths.is_empty() {
            return Err(Error::Config("estimators and paths must not be empty".into()));
        }
        Ok(())
    }
}

fn to_config(e: Error) -> Error {
    match e {
        Error::Parameter(msg) => Error::Config(msg),
        other => other,
    }
}
