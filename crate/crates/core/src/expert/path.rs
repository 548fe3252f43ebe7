//! The expert's lateral plan: hold the vacant lane beside every cone set and
//! change lanes in the gaps with quintic easing, which keeps the plan C².

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::ExpertError;
use crate::sim::{body_clearance, Course, VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    /// m of road over which one lane change is spread.
    pub blend_length: f64,
    /// m of straight lane-centre driving required before and after each set.
    pub hold_pad: f64,
    /// m; minimum body-to-cone gap along the planned path.
    pub clearance_margin: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self { blend_length: 24.0, hold_pad: 3.0, clearance_margin: 0.6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blend {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

/// `y_ref(x)`: piecewise constant lane centres joined by quintic blends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    pub y_start: f64,
    pub blends: Vec<Blend>,
}

fn ease(u: f64) -> (f64, f64, f64) {
    let u2 = u * u;
    let s = u2 * u * (10.0 - 15.0 * u + 6.0 * u2);
    let ds = 30.0 * u2 * (1.0 - u) * (1.0 - u);
    let d2s = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u);
    (s, ds, d2s)
}

impl ReferencePath {
    /// `(y, dy/dx, d²y/dx²)` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let mut y = self.y_start;
        for b in &self.blends {
            if x <= b.x0 {
                break;
            }
            let len = b.x1 - b.x0;
            if x >= b.x1 {
                y = b.y1;
                continue;
            }
            let (s, ds, d2s) = ease((x - b.x0) / len);
            let h = b.y1 - b.y0;
            return (b.y0 + h * s, h * ds / len, h * d2s / (len * len));
        }
        (y, 0.0, 0.0)
    }

    pub fn y(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    /// Lateral aim at `x_look` for a car at `(x, y)`. Inside a lane change the
    /// aim never points back toward the lane being left: a car already ahead
    /// of the plan holds its offset, up to the centre of the new lane.
    pub fn aim(&self, x: f64, y: f64, x_look: f64) -> f64 {
        let planned = self.y(x_look);
        let Some(b) = self.blends.iter().find(|b| x_look > b.x0 && x < b.x1) else {
            return planned;
        };
        let toward = (b.y1 - b.y0).signum();
        if toward * (y - planned) <= 0.0 {
            planned
        } else if toward * (y - b.y1) > 0.0 {
            b.y1
        } else {
            y
        }
    }

    /// Car placed on the path at `x`, pointing along its tangent.
    pub fn pose_at(&self, x: f64, speed: f64) -> VehicleState {
        let (y, dy, _) = self.eval(x);
        VehicleState { heading: FRAC_PI_2 + dy.atan(), ..VehicleState::aligned(x, y, speed) }
    }
}

/// Plans the lane sequence for `course` and checks it keeps the body at
/// least `clearance_margin` from every cone.
pub fn reference_path(
    course: &Course,
    params: &VehicleParams,
    cfg: &PathConfig,
) -> Result<ReferencePath, ExpertError> {
    if !(cfg.blend_length > 0.0 && cfg.hold_pad >= 0.0 && cfg.clearance_margin >= 0.0) {
        return Err(ExpertError::Config(format!("invalid path settings {cfg:?}")));
    }
    let mut lane = course.start_lane;
    let mut free_from = course.start_x;
    let mut blends = Vec::new();
    for (i, set) in course.cone_sets.iter().enumerate() {
        let want = set.lane.other();
        if want != lane {
            let gap = set.x_start - free_from;
            let needed = cfg.blend_length + 2.0 * cfg.hold_pad;
            if gap < needed {
                return Err(ExpertError::GapTooShort { set_index: i, gap, needed });
            }
            let mid = 0.5 * (free_from + set.x_start);
            blends.push(Blend {
                x0: mid - 0.5 * cfg.blend_length,
                x1: mid + 0.5 * cfg.blend_length,
                y0: course.lane_center(lane),
                y1: course.lane_center(want),
            });
            lane = want;
        }
        free_from = set.x_end;
    }
    let path = ReferencePath { y_start: course.lane_center(course.start_lane), blends };
    let n = ((course.x_finish - course.start_x) / 0.05).ceil() as usize;
    for k in 0..=n {
        let x = course.start_x + k as f64 * 0.05;
        let gap = body_clearance(&path.pose_at(x, 10.0), params, course);
        if gap < cfg.clearance_margin {
            return Err(ExpertError::Clearance { x, gap, margin: cfg.clearance_margin });
        }
    }
    Ok(path)
}
