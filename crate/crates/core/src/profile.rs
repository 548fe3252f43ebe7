//! Longitudinal speed commands. The steering system never sets speed; these
//! profiles are supplied from outside, as a driver's foot on the pedal would be.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("speed range [{lo}, {hi}] km/h is empty or not positive")]
    BadRange { lo: f64, hi: f64 },
    #[error("cannot parse speed profile {0:?} (expected fixed:<km/h>)")]
    Parse(String),
    #[error("profile speed {0} km/h is outside [{1}, {2}]")]
    OutOfRange(f64, f64, f64),
}

/// One smoothed change of level: the command moves by `delta` km/h over
/// `width` seconds centred on `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedStep {
    pub t: f64,
    pub delta: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpeedProfile {
    Fixed { kmh: f64 },
    Steps { base: f64, steps: Vec<SpeedStep>, lo: f64, hi: f64 },
}

/// C¹ ramp from 0 to 1 over `u ∈ [0, 1]`.
fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

impl SpeedProfile {
    /// Commanded speed (km/h) at time `t` (s).
    pub fn speed_at(&self, t: f64) -> f64 {
        match self {
            SpeedProfile::Fixed { kmh } => *kmh,
            SpeedProfile::Steps { base, steps, lo, hi } => {
                let v = steps.iter().fold(*base, |v, s| {
                    v + s.delta * smoothstep((t - s.t) / s.width + 0.5)
                });
                v.clamp(*lo, *hi)
            }
        }
    }

    /// Starting level plus 1 to 3 smoothed steps between fresh uniform levels
    /// in `[lo, hi]`, placed in order within the first `horizon` seconds.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64, horizon: f64) -> Result<Self, ProfileError> {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(ProfileError::BadRange { lo, hi });
        }
        let base = rng.random_range(lo..=hi);
        let n = rng.random_range(1..=3usize);
        let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..horizon.max(1.0))).collect();
        times.sort_by(f64::total_cmp);
        let mut level = base;
        let steps = times
            .into_iter()
            .map(|t| {
                let next = rng.random_range(lo..=hi);
                let step = SpeedStep { t, delta: next - level, width: rng.random_range(1.0..4.0) };
                level = next;
                step
            })
            .collect();
        Ok(SpeedProfile::Steps { base, steps, lo, hi })
    }

    pub fn check_range(&self, lo: f64, hi: f64) -> Result<(), ProfileError> {
        let (a, b) = match self {
            SpeedProfile::Fixed { kmh } => (*kmh, *kmh),
            SpeedProfile::Steps { lo: l, hi: h, .. } => (*l, *h),
        };
        for v in [a, b] {
            if !(v >= lo && v <= hi) {
                return Err(ProfileError::OutOfRange(v, lo, hi));
            }
        }
        Ok(())
    }
}

impl FromStr for SpeedProfile {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let kmh = s
            .strip_prefix("fixed:")
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite() && *v > 0.0)
            .ok_or_else(|| ProfileError::Parse(s.to_string()))?;
        Ok(SpeedProfile::Fixed { kmh })
    }
}

impl fmt::Display for SpeedProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpeedProfile::Fixed { kmh } => write!(f, "fixed:{kmh}"),
            SpeedProfile::Steps { base, steps, .. } => {
                write!(f, "steps from {base:.1} km/h")?;
                for s in steps {
                    write!(f, ", {:+.1} at {:.1} s", s.delta, s.t)?;
                }
                Ok(())
            }
        }
    }
}
