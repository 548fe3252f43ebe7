//! Offline and closed-loop metrics, serialized as JSON.

use serde::{Deserialize, Serialize};
use slalom_core::nn::RegressionMetrics;
use slalom_core::profile::SpeedProfile;
use slalom_core::sim::{body_clearance, Course, VehicleParams};
use slalom_core::trace::RunTrace;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineMetrics {
    /// MSE is in normalized target units: wheel angle divided by `target_scale`.
    pub target_scale: f64,
    pub train: Option<RegressionMetrics>,
    pub test: Option<RegressionMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: u32,
    pub profile: SpeedProfile,
    pub completed: bool,
    pub collided: bool,
    pub failure: Option<String>,
    /// s
    pub duration: f64,
    /// rad
    pub peak_wheel_angle: f64,
    /// rad/s; RMS of the wheel rate, lower is smoother.
    pub wheel_rate_rms: f64,
    pub speed_mean_kmh: f64,
    pub speed_min_kmh: f64,
    pub speed_max_kmh: f64,
    /// m; closest approach of the body to a cone surface.
    pub min_clearance: f64,
}

impl TrialMetrics {
    pub fn from_trace(trace: &RunTrace, profile: &SpeedProfile, course: &Course, params: &VehicleParams) -> Self {
        let speeds: Vec<f64> = trace.records.iter().map(|r| r.state.speed_kmh()).collect();
        let n = speeds.len().max(1) as f64;
        Self {
            trial: trace.run_id,
            profile: profile.clone(),
            completed: trace.completed,
            collided: trace.collided,
            failure: trace.failure.clone(),
            duration: trace.records.last().map_or(0.0, |r| r.t),
            peak_wheel_angle: trace.peak_wheel_angle(),
            wheel_rate_rms: trace.wheel_rate_rms(),
            speed_mean_kmh: speeds.iter().sum::<f64>() / n,
            speed_min_kmh: speeds.iter().copied().fold(f64::INFINITY, f64::min),
            speed_max_kmh: speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min_clearance: trace
                .records
                .iter()
                .map(|r| body_clearance(&r.state, params, course))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopMetrics {
    pub trials: usize,
    pub completed: usize,
    pub collisions: usize,
    pub per_trial: Vec<TrialMetrics>,
}

impl ClosedLoopMetrics {
    pub fn new(per_trial: Vec<TrialMetrics>) -> Self {
        Self {
            trials: per_trial.len(),
            completed: per_trial.iter().filter(|t| t.completed).count(),
            collisions: per_trial.iter().filter(|t| t.collided).count(),
            per_trial,
        }
    }

    /// Every trial reached the finish without touching a cone.
    pub fn passed(&self) -> bool {
        self.collisions == 0 && self.completed == self.trials
    }
}

/// Peak |wheel angle| of the pilot and the expert around one lane change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneChangePeak {
    pub index: usize,
    pub x_from: f64,
    pub x_to: f64,
    pub pilot: f64,
    pub expert: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringComparison {
    pub profile: SpeedProfile,
    pub expert_preset: String,
    pub lane_changes: Vec<LaneChangePeak>,
    /// The pilot turned the wheel no further than the expert on some lane change.
    pub pilot_smaller_on_any: bool,
}

/// Stretches of road holding one lane change each: from the middle of the
/// previous cone set (or the start) to the middle of the next one.
pub fn lane_change_windows(course: &Course) -> Vec<(f64, f64)> {
    let mut from = course.start_x;
    course
        .cone_sets
        .iter()
        .map(|s| {
            let mid = 0.5 * (s.x_start + s.x_end);
            let w = (from, mid);
            from = mid;
            w
        })
        .collect()
}

/// Peak |wheel angle| in each window, from `(x, wheel_angle)` samples.
pub fn window_peaks(samples: impl IntoIterator<Item = (f64, f64)> + Clone, windows: &[(f64, f64)]) -> Vec<f64> {
    windows
        .iter()
        .map(|&(a, b)| {
            samples.clone().into_iter().filter(|(x, _)| *x >= a && *x < b).fold(0.0_f64, |m, (_, th)| m.max(th.abs()))
        })
        .collect()
}

pub fn compare_steering(
    pilot: &RunTrace,
    expert: &RunTrace,
    course: &Course,
    profile: &SpeedProfile,
    expert_preset: &str,
) -> SteeringComparison {
    let windows = lane_change_windows(course);
    let xs = |t: &RunTrace| t.records.iter().map(|r| (r.state.x, r.state.wheel_angle)).collect::<Vec<_>>();
    let p = window_peaks(xs(pilot), &windows);
    let e = window_peaks(xs(expert), &windows);
    let lane_changes: Vec<LaneChangePeak> = windows
        .iter()
        .enumerate()
        .map(|(i, &(x_from, x_to))| LaneChangePeak { index: i, x_from, x_to, pilot: p[i], expert: e[i] })
        .collect();
    SteeringComparison {
        profile: profile.clone(),
        expert_preset: expert_preset.to_string(),
        pilot_smaller_on_any: lane_changes.iter().any(|l| l.pilot <= l.expert),
        lane_changes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsReport {
    pub seed: Option<u64>,
    pub offline: Option<OfflineMetrics>,
    pub closed_loop: Option<ClosedLoopMetrics>,
    pub comparison: Option<SteeringComparison>,
}

impl MetricsReport {
    /// Collisions never outnumber trials and every reported number is finite.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |what: &str, v: f64| CliError::Failed(format!("metric {what} is not finite ({v})"));
        if let Some(o) = &self.offline {
            for m in o.train.iter().chain(&o.test) {
                if !m.mse.is_finite() {
                    return Err(bad("mse", m.mse));
                }
                if let Some(r) = m.r2.filter(|r| !r.is_finite()) {
                    return Err(bad("r2", r));
                }
            }
        }
        if let Some(c) = &self.closed_loop {
            if c.collisions > c.trials || c.completed > c.trials {
                return Err(CliError::Failed(format!(
                    "{} collisions / {} completions out of {} trials",
                    c.collisions, c.completed, c.trials
                )));
            }
            for t in &c.per_trial {
                for (what, v) in [
                    ("duration", t.duration),
                    ("peak_wheel_angle", t.peak_wheel_angle),
                    ("wheel_rate_rms", t.wheel_rate_rms),
                    ("speed_mean_kmh", t.speed_mean_kmh),
                    ("speed_min_kmh", t.speed_min_kmh),
                    ("speed_max_kmh", t.speed_max_kmh),
                    ("min_clearance", t.min_clearance),
                ] {
                    if !v.is_finite() {
                        return Err(bad(what, v));
                    }
                }
            }
        }
        if let Some(c) = &self.comparison {
            for l in &c.lane_changes {
                if !(l.pilot.is_finite() && l.expert.is_finite()) {
                    return Err(bad("lane change peak", l.pilot));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use slalom_core::sim::{build_course, CourseConfig};

    #[test]
    fn windows_split_at_set_middles() {
        let c = build_course(&CourseConfig::default()).unwrap();
        assert_eq!(lane_change_windows(&c), vec![(0.0, 40.0), (40.0, 90.0), (90.0, 140.0)]);
    }

    #[test]
    fn peaks_per_window() {
        let w = [(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)];
        let s = vec![(0.2, 0.1), (0.5, -0.4), (1.5, 0.3), (2.5, 0.0)];
        assert_eq!(window_peaks(s, &w), vec![0.4, 0.3, 0.0]);
    }

    #[test]
    fn more_collisions_than_trials_is_invalid() {
        let r = MetricsReport {
            closed_loop: Some(ClosedLoopMetrics { trials: 1, completed: 0, collisions: 2, per_trial: vec![] }),
            ..MetricsReport::default()
        };
        assert!(r.validate().is_err());
        assert!(MetricsReport::default().validate().is_ok());
    }
}
