//! Run configuration read by the `flagellum` binary.
//!
//! Every key is optional; missing keys take the defaults below. Rates use
//! `_rpm` keys, everything else is SI.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::ControlConfig;
use crate::learning::{DatasetSpec, TrainControls};
use crate::params::Preset;
use crate::stepper::{Simulator, StepControls};
use crate::{Error, PhysicalParameters, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base parameter set, used when `physical` is absent.
    pub preset: Preset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub physical: Option<PhysicalParameters>,
    pub solver: StepControls,
    pub control: ControlConfig,
    pub dataset: DatasetSpec,
    pub training: TrainControls,
    pub simulate: SimulateConfig,
    pub calibration: CalibrationConfig,
    pub paths: Paths,
    /// Master seed; overrides the dataset and training seeds.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Desk,
            physical: None,
            solver: StepControls::default(),
            control: ControlConfig::default(),
            dataset: DatasetSpec::default(),
            training: TrainControls::default(),
            simulate: SimulateConfig::default(),
            calibration: CalibrationConfig::default(),
            paths: Paths::default(),
            seed: 0,
        }
    }
}

/// Open-loop run for `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub duration: f64,
    /// Constant rate, used when no profile file is given.
    pub omega_rpm: f64,
    pub interval: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            duration: 100.0,
            omega_rpm: 3.0,
            interval: 0.5,
        }
    }
}

/// Straight run measuring `v_{ω_L}` and the body-frame spin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub transient: f64,
    pub span: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            transient: 50.0,
            span: 86.0,
        }
    }
}

/// Input files. Relative paths are resolved against the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waypoints: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut c: Self = serde_json::from_str(&text).map_err(|e| Error::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if let Some(dir) = path.parent() {
            c.paths.rebase(dir);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn physical(&self) -> PhysicalParameters {
        self.physical
            .unwrap_or_else(|| PhysicalParameters::preset(self.preset))
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.seed,
            ..self.dataset.clone()
        }
    }

    pub fn train_controls(&self) -> TrainControls {
        TrainControls {
            seed: self.seed,
            ..self.training
        }
    }

    pub fn simulator(&self) -> Result<Simulator> {
        Simulator::new(self.physical(), self.solver)
    }

    pub fn validate(&self) -> Result<()> {
        self.physical().validate()?;
        self.solver.validate()?;
        self.control.validate()?;
        self.dataset.validate()?;
        let s = &self.simulate;
        if !(s.duration >= 0.0
            && s.duration.is_finite()
            && s.interval > 0.0
            && s.omega_rpm.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "invalid simulate section {s:?}"
            )));
        }
        let c = &self.calibration;
        if !(c.transient >= 0.0 && c.span > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "invalid calibration section {c:?}"
            )));
        }
        Ok(())
    }
}

impl Paths {
    fn rebase(&mut self, dir: &Path) {
        for p in [
            &mut self.profile,
            &mut self.dataset,
            &mut self.models,
            &mut self.waypoints,
            &mut self.trajectory,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}
