//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slalom_core::controller::PdGains;
use slalom_core::expert::ExpertConfig;
use slalom_core::sim::{build_course, Course, CourseConfig, VehicleParams};
use slalom_core::trace::RolloutConfig;
use slalom_core::training::TrainConfig;

use crate::CliError;

/// Closed-loop campaign settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub count: usize,
    /// km/h
    pub speed_min: f64,
    /// km/h
    pub speed_max: f64,
    /// s; window in which speed changes are placed.
    pub profile_horizon: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self { count: 17, speed_min: 15.0, speed_max: 60.0, profile_horizon: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Feeds every random stage. Required, from here or from `--seed`.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub course: CourseConfig,
    pub vehicle: VehicleParams,
    pub expert: ExpertConfig,
    pub train: TrainConfig,
    pub gains: PdGains,
    pub rollout: RolloutConfig,
    pub trials: TrialConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out_dir: PathBuf::from("out"),
            course: CourseConfig::default(),
            vehicle: VehicleParams::default(),
            expert: ExpertConfig::default(),
            train: TrainConfig::default(),
            gains: PdGains::default(),
            rollout: RolloutConfig::default(),
            trials: TrialConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks every sub-config and builds the course.
    pub fn validate(&self) -> Result<Course, CliError> {
        let cfg = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        let course = build_course(&self.course).map_err(|e| cfg(&e))?;
        self.vehicle.validate().map_err(|e| cfg(&e))?;
        self.expert.validate().map_err(|e| cfg(&e))?;
        self.train.validate().map_err(|e| cfg(&e))?;
        self.gains.validate().map_err(|e| cfg(&e))?;
        if !(self.rollout.dt > 0.0 && self.rollout.max_time > 0.0 && self.rollout.road_half_width > 0.0) {
            return Err(CliError::Config("rollout dt, max_time and road_half_width must be positive".into()));
        }
        let t = &self.trials;
        if !(t.speed_min > 0.0 && t.speed_max >= t.speed_min && t.profile_horizon > 0.0) {
            return Err(CliError::Config(format!(
                "trial speeds [{}, {}] km/h and horizon {} s are not usable",
                t.speed_min, t.speed_max, t.profile_horizon
            )));
        }
        Ok(course)
    }

    /// `--seed` wins over the file; one of them must be given.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64, CliError> {
        let seed = flag.or(self.seed).ok_or_else(|| {
            CliError::Usage("no seed given: pass --seed or set `seed` in the config".into())
        })?;
        self.seed = Some(seed);
        self.train.fit.seed = seed;
        Ok(seed)
    }
}
