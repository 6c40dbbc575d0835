//! Experiment configuration files.
//!
//! A config names the PDE system (other simulation settings default per
//! system), the dataset size, the training schedule and the report settings.
//! Unknown keys are rejected so typos surface before any run; the matching
//! JSON schema ships as [`SCHEMA`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PdeNetModel;
use crate::report::DEFAULT_PRUNE_TOL;
use crate::simulator::{derive_seed, PdeSpec, SystemKind};
use crate::trainer::TrainConfig;

/// JSON schema for [`ExperimentConfig`] files.
pub const SCHEMA: &str = include_str!("../schemas/experiment.schema.json");

/// Simulation settings; omitted values take the system's defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub system: SystemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub internal_dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
}

impl PdeConfig {
    pub fn spec(&self) -> PdeSpec {
        let base = match self.system {
            SystemKind::Burgers { .. } => PdeSpec::burgers(),
            SystemKind::Heat { .. } => PdeSpec::heat(),
            SystemKind::Rcd { .. } => PdeSpec::rcd(),
        };
        PdeSpec {
            system: self.system,
            fine_n: self.fine_n.unwrap_or(base.fine_n),
            coarse_n: self.coarse_n.unwrap_or(base.coarse_n),
            internal_dt: self.internal_dt.unwrap_or(base.internal_dt),
            snapshot_dt: self.snapshot_dt.unwrap_or(base.snapshot_dt),
            horizon: self.horizon.unwrap_or(base.horizon),
            noise: self.noise.unwrap_or(base.noise),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Trajectories written by `simulate`.
    pub samples: usize,
    /// Snapshots per trajectory after the initial one.
    pub snapshots: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            samples: 28,
            snapshots: 9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Test initial conditions for prediction curves.
    pub n_tests: usize,
    /// Prediction horizon; the simulation horizon when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Coefficients at or below this magnitude are treated as zero when
    /// pruning the recovered polynomial.
    pub prune_tol: f64,
    /// Display threshold for printed equations.
    pub display_threshold: f64,
    /// Also write an HTML plot of the prediction bands.
    pub html: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            n_tests: 100,
            horizon: None,
            prune_tol: DEFAULT_PRUNE_TOL,
            display_threshold: 1e-3,
            html: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream is derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub pde: PdeConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    /// `train.seed` is ignored; the master seed is used.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

const DATASET_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const TEST_STREAM: u64 = 3;

impl ExperimentConfig {
    /// Parses and validates a config.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::InvalidArgument(m) | Error::Config(m) => Error::Config(m),
            e => e,
        };
        self.pde.spec().validate().map_err(cfg_err)?;
        self.train.validate().map_err(cfg_err)?;
        if self.dataset.samples == 0 || self.dataset.snapshots == 0 {
            return Err(Error::Config(
                "dataset.samples and dataset.snapshots must be at least 1".into(),
            ));
        }
        if self.report.n_tests == 0 {
            return Err(Error::Config("report.n_tests must be at least 1".into()));
        }
        if let Some(h) = self.report.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config("report.horizon must be positive".into()));
            }
        }
        if !(self.report.prune_tol >= 0.0 && self.report.display_threshold >= 0.0) {
            return Err(Error::Config(
                "report thresholds must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn spec(&self) -> PdeSpec {
        self.pde.spec()
    }

    /// Training settings with the master-derived seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, TRAIN_STREAM),
            ..self.train.clone()
        }
    }

    pub fn dataset_seed(&self) -> u64 {
        derive_seed(self.seed, DATASET_STREAM)
    }

    pub fn test_seed(&self) -> u64 {
        derive_seed(self.seed, TEST_STREAM)
    }

    /// Prediction steps of `snapshot_dt` up to the report horizon.
    pub fn prediction_steps(&self) -> usize {
        let spec = self.spec();
        let h = self.report.horizon.unwrap_or(spec.horizon);
        (h / spec.snapshot_dt).round() as usize
    }

    /// Rejects checkpoints whose grid, components or step differ from this
    /// config.
    pub fn check_model(&self, model: &PdeNetModel) -> Result<()> {
        let spec = self.spec();
        let grid = spec.coarse_grid();
        if !model.grid.matches(&grid) {
            return Err(Error::Config(format!(
                "checkpoint grid {}x{} does not match config grid {}x{}",
                model.grid.nx, model.grid.ny, grid.nx, grid.ny
            )));
        }
        if model.components != spec.system.components() {
            return Err(Error::Config(format!(
                "checkpoint components {:?} do not match system {}",
                model.components,
                spec.system.name()
            )));
        }
        if (model.dt - spec.snapshot_dt).abs() > 1e-12 * spec.snapshot_dt {
            return Err(Error::Config(format!(
                "checkpoint step {} does not match snapshot_dt {}",
                model.dt, spec.snapshot_dt
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_system_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"pde": {"system": {"kind": "heat", "c": 0.1}}}"#)
            .unwrap();
        assert_eq!(cfg.spec(), PdeSpec::heat());
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.report.n_tests, 100);
        assert_eq!(cfg.prediction_steps(), 150);
    }

    #[test]
    fn missing_coefficient_is_named() {
        let err =
            ExperimentConfig::from_json(r#"{"pde": {"system": {"kind": "burgers"}}}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("nu"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_json(
            r#"{"pde": {"system": {"kind": "heat", "c": 0.1}}, "train": {"max_block": 3}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("max_block"), "{err}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let err = ExperimentConfig::from_json(
            r#"{"pde": {"system": {"kind": "heat", "c": 0.1}, "fine_n": 100, "coarse_n": 32}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = ExperimentConfig::from_json(
            r#"{"pde": {"system": {"kind": "rcd", "nu": 0.1, "beta": 1.0}}}"#,
        )
        .unwrap();
        cfg.report.horizon = Some(1.0);
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn schema_lists_every_top_level_key() {
        let schema: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
        let props = schema["properties"].as_object().unwrap();
        let cfg = ExperimentConfig::from_json(r#"{"pde": {"system": {"kind": "heat", "c": 0.1}}}"#)
            .unwrap();
        let value = serde_json::to_value(&cfg).unwrap();
        for key in value.as_object().unwrap().keys() {
            assert!(props.contains_key(key), "schema lacks {key}");
        }
        let train = serde_json::to_value(&cfg.train).unwrap();
        let train_props = schema["$defs"]["train"]["properties"].as_object().unwrap();
        for key in train.as_object().unwrap().keys() {
            assert!(train_props.contains_key(key), "schema lacks train.{key}");
        }
    }

    #[test]
    fn seeds_are_distinct_streams() {
        let cfg = ExperimentConfig::from_json(
            r#"{"seed": 5, "pde": {"system": {"kind": "heat", "c": 0.1}}}"#,
        )
        .unwrap();
        let seeds = [cfg.dataset_seed(), cfg.train_config().seed, cfg.test_seed()];
        assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2] && seeds[0] != seeds[2]);
    }
}
