//! Batch generation of demonstration runs and the run-level train/test split.

use std::fs;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::driver::{default_presets, DriverPreset, ExecutionConfig, ExpertDriver};
use super::path::{reference_path, PathConfig};
use super::ExpertError;
use crate::controller::PdGains;
use crate::dataset::{samples_from_trace, save_dataset, Sample};
use crate::profile::SpeedProfile;
use crate::sim::{Course, VehicleParams};
use crate::trace::{rollout, RolloutConfig, RunTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub num_runs: usize,
    pub train_runs: usize,
    /// km/h
    pub speed_min: f64,
    /// km/h
    pub speed_max: f64,
    /// s; speed changes are placed within this window from the start.
    pub profile_horizon: f64,
    /// rad/s; accepted runs keep |wheel rate| below this.
    pub steer_rate_cap: f64,
    /// Fraction of attempted runs that may be rejected before giving up.
    pub max_rejection_rate: f64,
    pub presets: Vec<DriverPreset>,
    pub execution: ExecutionConfig,
    pub path: PathConfig,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            num_runs: 573,
            train_runs: 500,
            speed_min: 15.0,
            speed_max: 60.0,
            profile_horizon: 20.0,
            steer_rate_cap: 16.0,
            max_rejection_rate: 0.01,
            presets: default_presets(),
            execution: ExecutionConfig::default(),
            path: PathConfig::default(),
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<(), ExpertError> {
        let bad = |m: String| Err(ExpertError::Config(m));
        if self.num_runs == 0 || self.train_runs == 0 || self.train_runs >= self.num_runs {
            return bad(format!("need 0 < train_runs ({}) < num_runs ({})", self.train_runs, self.num_runs));
        }
        if !(self.speed_min >= 15.0 && self.speed_max <= 60.0 && self.speed_min <= self.speed_max) {
            return bad(format!("speed range [{}, {}] must lie within [15, 60] km/h", self.speed_min, self.speed_max));
        }
        if self.presets.is_empty() {
            return bad("no driver presets".into());
        }
        for p in &self.presets {
            let ok = p.lookahead_time > 0.0
                && p.lookahead_min > 0.0
                && p.smoothing_tau >= 0.0
                && p.noise_amplitude >= 0.0
                && p.noise_tau > 0.0;
            if !ok {
                return bad(format!("preset {:?} has non-positive settings", p.name));
            }
        }
        let e = &self.execution;
        if !(e.command_rate_cap > 0.0 && e.perturbation >= 0.0 && e.perturbation_tau > 0.0) {
            return bad(format!("invalid execution settings {e:?}"));
        }
        if !(self.steer_rate_cap > 0.0 && (0.0..1.0).contains(&self.max_rejection_rate)) {
            return bad("steer_rate_cap must be positive and max_rejection_rate in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub run_id: u32,
    pub preset: String,
    pub split: Split,
    /// Attempts used, counting rejected ones.
    pub attempts: u32,
    pub seed: u64,
    pub profile: SpeedProfile,
    pub samples: usize,
    pub duration_s: f64,
    pub mean_speed_kmh: f64,
    pub peak_wheel_angle: f64,
    pub peak_wheel_rate: f64,
}

/// Everything needed to regenerate the corpus; deliberately free of wall-clock data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub config: ExpertConfig,
    pub dt: f64,
    pub train_runs: Vec<u32>,
    pub test_runs: Vec<u32>,
    pub rejected: usize,
    pub runs: Vec<RunStats>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub manifest: CorpusManifest,
}

impl Corpus {
    /// Writes `train.csv`, `test.csv` and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), ExpertError> {
        fs::create_dir_all(dir)?;
        save_dataset(&dir.join("train.csv"), &self.train)?;
        save_dataset(&dir.join("test.csv"), &self.test)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }
}

/// Seed for one attempt of one run, independent of generation order.
fn attempt_seed(seed: u64, run_id: u32, attempt: u32) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(run_id) << 16) | u64::from(attempt));
    rng.next_u64()
}

fn accepted(trace: &RunTrace, cap: f64) -> Result<(), String> {
    if let Some(f) = &trace.failure {
        return Err(f.clone());
    }
    let rate = trace.peak_wheel_rate();
    if rate >= cap {
        return Err(format!("wheel rate {rate:.2} rad/s above the {cap} rad/s cap"));
    }
    Ok(())
}

/// Drives `num_runs` accepted expert runs and splits them by run.
pub fn generate_corpus(
    cfg: &ExpertConfig,
    course: &Course,
    params: &VehicleParams,
    gains: &PdGains,
    rollout_cfg: &RolloutConfig,
    seed: u64,
) -> Result<Corpus, ExpertError> {
    cfg.validate()?;
    gains.validate()?;
    let path = reference_path(course, params, &cfg.path)?;
    let limit = (cfg.max_rejection_rate * cfg.num_runs as f64).floor() as usize;

    let mut ids: Vec<u32> = (0..cfg.num_runs as u32).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5711));
    let mut train_ids = ids[..cfg.train_runs].to_vec();
    let mut test_ids = ids[cfg.train_runs..].to_vec();
    train_ids.sort_unstable();
    test_ids.sort_unstable();

    let mut rejected = 0;
    let mut runs = Vec::with_capacity(cfg.num_runs);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for run_id in 0..cfg.num_runs as u32 {
        let preset = &cfg.presets[run_id as usize % cfg.presets.len()];
        let split = if train_ids.binary_search(&run_id).is_ok() { Split::Train } else { Split::Test };
        let mut attempt = 0u32;
        let (trace, profile, run_seed) = loop {
            let run_seed = attempt_seed(seed, run_id, attempt);
            let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
            let profile = SpeedProfile::random(&mut rng, cfg.speed_min, cfg.speed_max, cfg.profile_horizon)?;
            let mut driver = ExpertDriver::new(&path, preset.clone(), *params, gains.clone(), cfg.execution, rng.next_u64());
            let trace = rollout(&mut driver, course, params, &profile, rollout_cfg, run_id)?;
            attempt += 1;
            match accepted(&trace, cfg.steer_rate_cap) {
                Ok(()) => break (trace, profile, run_seed),
                Err(why) => {
                    rejected += 1;
                    warn!("run {run_id} attempt {attempt} rejected: {why}");
                    if rejected > limit {
                        return Err(ExpertError::TooManyRejections {
                            rejected,
                            attempts: run_id as usize + rejected,
                            limit,
                        });
                    }
                }
            }
        };
        let n = trace.records.len();
        let mean_speed = trace.records.iter().map(|r| r.state.speed_kmh()).sum::<f64>() / n as f64;
        runs.push(RunStats {
            run_id,
            preset: preset.name.clone(),
            split,
            attempts: attempt,
            seed: run_seed,
            profile,
            samples: n,
            duration_s: trace.records.last().map_or(0.0, |r| r.t),
            mean_speed_kmh: mean_speed,
            peak_wheel_angle: trace.peak_wheel_angle(),
            peak_wheel_rate: trace.peak_wheel_rate(),
        });
        let dest = if split == Split::Train { &mut train } else { &mut test };
        dest.extend(samples_from_trace(&trace));
    }
    info!(
        "corpus: {} runs ({} train / {} test), {} rejected, {} + {} samples",
        cfg.num_runs,
        train_ids.len(),
        test_ids.len(),
        rejected,
        train.len(),
        test.len()
    );
    let manifest = CorpusManifest {
        seed,
        config: cfg.clone(),
        dt: rollout_cfg.dt,
        train_runs: train_ids,
        test_runs: test_ids,
        rejected,
        runs,
    };
    Ok(Corpus { train, test, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_course, CourseConfig};

    fn small(seed: u64) -> Corpus {
        let course = build_course(&CourseConfig::default()).unwrap();
        let cfg = ExpertConfig { num_runs: 12, train_runs: 9, max_rejection_rate: 0.0, ..ExpertConfig::default() };
        generate_corpus(&cfg, &course, &VehicleParams::default(), &PdGains::default(), &RolloutConfig::default(), seed)
            .unwrap()
    }

    #[test]
    fn split_is_by_run_and_disjoint() {
        let c = small(3);
        assert_eq!(c.manifest.train_runs.len(), 9);
        assert_eq!(c.manifest.test_runs.len(), 3);
        let train: std::collections::BTreeSet<u32> = c.train.iter().map(|s| s.run_id).collect();
        let test: std::collections::BTreeSet<u32> = c.test.iter().map(|s| s.run_id).collect();
        assert_eq!(train.len(), 9);
        assert!(train.is_disjoint(&test));
        assert_eq!(c.manifest.rejected, 0);
    }

    #[test]
    fn reproducible() {
        let (a, b) = (small(11), small(11));
        assert_eq!(a.train, b.train);
        assert_eq!(a.manifest, b.manifest);
        assert_ne!(a.train, small(12).train);
    }

    #[test]
    fn config_checks() {
        let bad = ExpertConfig { train_runs: 573, ..ExpertConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ExpertConfig { speed_max: 80.0, ..ExpertConfig::default() };
        assert!(bad.validate().is_err());
    }
}
