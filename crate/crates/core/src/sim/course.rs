//! Slalom course: alternating cone sets on a two-lane road, plus the
//! oriented-rectangle collision test against the car body.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::vehicle::{VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lane {
    Left,
    Right,
}

impl Lane {
    pub fn other(self) -> Lane {
        match self {
            Lane::Left => Lane::Right,
            Lane::Right => Lane::Left,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CourseError {
    #[error("course needs at least one cone set")]
    NoSets,
    #[error("cone set {index}: x_end ({x_end}) must exceed x_start ({x_start})")]
    EmptySpan { index: usize, x_start: f64, x_end: f64 },
    #[error("cone set {index} starts at {x_start} before the previous set ends at {prev_end}")]
    Overlap { index: usize, x_start: f64, prev_end: f64 },
    #[error("cone sets {index} and {} are both in the {lane:?} lane; sets must alternate", index - 1)]
    NotAlternating { index: usize, lane: Lane },
    #[error("invalid course geometry: {0}")]
    Geometry(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeSet {
    pub x_start: f64,
    pub x_end: f64,
    pub lane: Lane,
    pub cone_spacing: f64,
    pub cone_radius: f64,
}

impl ConeSet {
    /// Longitudinal positions of the individual cones.
    pub fn cone_xs(&self) -> impl Iterator<Item = f64> + '_ {
        let n = ((self.x_end - self.x_start) / self.cone_spacing + 1e-9).floor() as usize;
        (0..=n).map(move |k| self.x_start + k as f64 * self.cone_spacing)
    }

    pub fn contains_x(&self, x: f64) -> bool {
        x >= self.x_start && x <= self.x_end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Course {
    pub cone_sets: Vec<ConeSet>,
    pub lane_width: f64,
    pub start_x: f64,
    pub start_lane: Lane,
    pub x_finish: f64,
}

impl Course {
    /// Lateral position of a lane centre (left positive).
    pub fn lane_center(&self, lane: Lane) -> f64 {
        match lane {
            Lane::Left => 0.5 * self.lane_width,
            Lane::Right => -0.5 * self.lane_width,
        }
    }

    /// Lane whose centre is closest to `y`.
    pub fn lane_at(&self, y: f64) -> Lane {
        if y >= 0.0 {
            Lane::Left
        } else {
            Lane::Right
        }
    }

    pub fn cone_y(&self, set: &ConeSet) -> f64 {
        self.lane_center(set.lane)
    }

    /// All cones as `(set index, x, y)`.
    pub fn cones(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.cone_sets.iter().enumerate().flat_map(move |(i, set)| {
            let y = self.cone_y(set);
            set.cone_xs().map(move |x| (i, x, y))
        })
    }

    /// Initial state: start lane centre, aligned with the road.
    pub fn start_state(&self, speed: f64) -> VehicleState {
        VehicleState::aligned(self.start_x, self.lane_center(self.start_lane), speed)
    }

    /// Mirror image about the road axis (lanes swapped).
    pub fn mirrored(&self) -> Course {
        let mut c = self.clone();
        c.start_lane = c.start_lane.other();
        for s in &mut c.cone_sets {
            s.lane = s.lane.other();
        }
        c
    }

    fn validate(&self) -> Result<(), CourseError> {
        if self.cone_sets.is_empty() {
            return Err(CourseError::NoSets);
        }
        if !(self.lane_width > 0.0) {
            return Err(CourseError::Geometry(format!(
                "lane_width must be positive, got {}",
                self.lane_width
            )));
        }
        for (index, set) in self.cone_sets.iter().enumerate() {
            if !(set.x_end > set.x_start) {
                return Err(CourseError::EmptySpan {
                    index,
                    x_start: set.x_start,
                    x_end: set.x_end,
                });
            }
            if !(set.cone_spacing > 0.0) || !(set.cone_radius > 0.0) {
                return Err(CourseError::Geometry(format!(
                    "cone set {index}: spacing and radius must be positive"
                )));
            }
            if index > 0 {
                let prev = &self.cone_sets[index - 1];
                if set.x_start <= prev.x_end {
                    return Err(CourseError::Overlap {
                        index,
                        x_start: set.x_start,
                        prev_end: prev.x_end,
                    });
                }
                if set.lane == prev.lane {
                    return Err(CourseError::NotAlternating { index, lane: set.lane });
                }
            }
        }
        let first = &self.cone_sets[0];
        let last = self.cone_sets.last().unwrap();
        if self.start_x >= first.x_start {
            return Err(CourseError::Geometry(format!(
                "start x {} must precede the first cone set at {}",
                self.start_x, first.x_start
            )));
        }
        if self.x_finish <= last.x_end {
            return Err(CourseError::Geometry(format!(
                "finish x {} must follow the last cone set end {}",
                self.x_finish, last.x_end
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeSetSpec {
    pub x_start: f64,
    pub x_end: f64,
    pub lane: Lane,
}

/// Course description as read from config. Either a regular pattern
/// (`num_sets` sets of `set_length` separated by `set_gap`, alternating lanes
/// from `first_lane`) or an explicit `sets` list that overrides the pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CourseConfig {
    pub lane_width: f64,
    pub start_x: f64,
    pub start_lane: Lane,
    pub num_sets: usize,
    pub first_set_start: f64,
    pub set_length: f64,
    pub set_gap: f64,
    pub first_lane: Lane,
    pub cone_spacing: f64,
    pub cone_radius: f64,
    /// Distance from the end of the last set to the finish line.
    pub finish_after: f64,
    pub sets: Option<Vec<ConeSetSpec>>,
}

impl Default for CourseConfig {
    fn default() -> Self {
        Self {
            lane_width: 3.5,
            start_x: 0.0,
            start_lane: Lane::Right,
            num_sets: 3,
            first_set_start: 30.0,
            set_length: 20.0,
            set_gap: 30.0,
            first_lane: Lane::Right,
            cone_spacing: 5.0,
            cone_radius: 0.15,
            finish_after: 30.0,
            sets: None,
        }
    }
}

pub fn build_course(cfg: &CourseConfig) -> Result<Course, CourseError> {
    let specs: Vec<ConeSetSpec> = match &cfg.sets {
        Some(sets) => sets.clone(),
        None => {
            let mut lane = cfg.first_lane;
            (0..cfg.num_sets)
                .map(|i| {
                    let x_start = cfg.first_set_start + i as f64 * (cfg.set_length + cfg.set_gap);
                    let spec = ConeSetSpec { x_start, x_end: x_start + cfg.set_length, lane };
                    lane = lane.other();
                    spec
                })
                .collect()
        }
    };
    let cone_sets: Vec<ConeSet> = specs
        .iter()
        .map(|s| ConeSet {
            x_start: s.x_start,
            x_end: s.x_end,
            lane: s.lane,
            cone_spacing: cfg.cone_spacing,
            cone_radius: cfg.cone_radius,
        })
        .collect();
    let x_finish = cone_sets.last().map_or(0.0, |s| s.x_end) + cfg.finish_after;
    let course = Course {
        cone_sets,
        lane_width: cfg.lane_width,
        start_x: cfg.start_x,
        start_lane: cfg.start_lane,
        x_finish,
    };
    course.validate()?;
    Ok(course)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeHit {
    pub set_index: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CollisionReport {
    pub hit: Option<ConeHit>,
}

impl CollisionReport {
    pub fn is_collision(&self) -> bool {
        self.hit.is_some()
    }
}

/// Distance from a point (in the body frame) to the body rectangle; zero inside.
fn rect_distance(lon: f64, lat: f64, half_len: f64, half_wid: f64) -> f64 {
    let dx = (lon.abs() - half_len).max(0.0);
    let dy = (lat.abs() - half_wid).max(0.0);
    dx.hypot(dy)
}

/// A cone collides when its disc overlaps the car's oriented body rectangle,
/// i.e. its centre is within `cone_radius` of the rectangle.
pub fn check_collision(
    state: &VehicleState,
    params: &VehicleParams,
    course: &Course,
) -> CollisionReport {
    let (fx, fy) = state.forward();
    let half_len = 0.5 * params.body_length;
    let half_wid = 0.5 * params.body_width;
    let reach = half_len.hypot(half_wid);
    for (set_index, set) in course.cone_sets.iter().enumerate() {
        let r = set.cone_radius;
        if state.x + reach + r < set.x_start || state.x - reach - r > set.x_end {
            continue;
        }
        let cy = course.cone_y(set);
        for cx in set.cone_xs() {
            let (dx, dy) = (cx - state.x, cy - state.y);
            let lon = dx * fx + dy * fy;
            let lat = -dx * fy + dy * fx;
            if rect_distance(lon, lat, half_len, half_wid) <= r {
                return CollisionReport { hit: Some(ConeHit { set_index, x: cx, y: cy }) };
            }
        }
    }
    CollisionReport::default()
}

/// Smallest gap (m) between the car body and any cone surface; negative
/// when overlapping. `f64::INFINITY` when no set is within reach.
pub fn body_clearance(state: &VehicleState, params: &VehicleParams, course: &Course) -> f64 {
    let (fx, fy) = state.forward();
    let half_len = 0.5 * params.body_length;
    let half_wid = 0.5 * params.body_width;
    let mut best = f64::INFINITY;
    for (i, cx, cy) in course.cones() {
        let (dx, dy) = (cx - state.x, cy - state.y);
        let lon = dx * fx + dy * fy;
        let lat = -dx * fy + dy * fx;
        let r = course.cone_sets[i].cone_radius;
        best = best.min(rect_distance(lon, lat, half_len, half_wid) - r);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_course_alternates() {
        let c = build_course(&CourseConfig::default()).unwrap();
        let lanes: Vec<Lane> = c.cone_sets.iter().map(|s| s.lane).collect();
        assert_eq!(lanes, vec![Lane::Right, Lane::Left, Lane::Right]);
        assert_eq!(c.cone_sets[0].x_start, 30.0);
        assert_eq!(c.cone_sets[1].x_start, 80.0);
        assert_eq!(c.x_finish, 180.0);
        assert_eq!(c.lane_center(Lane::Left), 1.75);
        assert_eq!(c.cone_sets[0].cone_xs().collect::<Vec<_>>(), vec![30.0, 35.0, 40.0, 45.0, 50.0]);
    }

    #[test]
    fn single_set_course() {
        let cfg = CourseConfig { num_sets: 1, ..Default::default() };
        let c = build_course(&cfg).unwrap();
        assert_eq!(c.cone_sets.len(), 1);
        assert_eq!(c.cone_sets[0].lane, c.start_lane);
    }

    #[test]
    fn rejects_bad_layouts() {
        let overlap = CourseConfig {
            sets: Some(vec![
                ConeSetSpec { x_start: 30.0, x_end: 50.0, lane: Lane::Right },
                ConeSetSpec { x_start: 45.0, x_end: 60.0, lane: Lane::Left },
            ]),
            ..Default::default()
        };
        assert!(matches!(build_course(&overlap), Err(CourseError::Overlap { index: 1, .. })));

        let same = CourseConfig {
            sets: Some(vec![
                ConeSetSpec { x_start: 30.0, x_end: 50.0, lane: Lane::Right },
                ConeSetSpec { x_start: 80.0, x_end: 90.0, lane: Lane::Right },
            ]),
            ..Default::default()
        };
        assert!(matches!(build_course(&same), Err(CourseError::NotAlternating { .. })));

        let none = CourseConfig { num_sets: 0, ..Default::default() };
        assert_eq!(build_course(&none), Err(CourseError::NoSets));

        let empty = CourseConfig { set_length: 0.0, ..Default::default() };
        assert!(matches!(build_course(&empty), Err(CourseError::EmptySpan { .. })));
    }

    #[test]
    fn containment_and_separation() {
        let c = build_course(&CourseConfig::default()).unwrap();
        let p = VehicleParams::default();
        let on_cone = VehicleState::aligned(40.0, -1.75, 10.0);
        let rep = check_collision(&on_cone, &p, &c);
        assert_eq!(rep.hit, Some(ConeHit { set_index: 0, x: 40.0, y: -1.75 }));
        let far = VehicleState::aligned(-20.0, -1.75, 10.0);
        assert!(!check_collision(&far, &p, &c).is_collision());
    }

    #[test]
    fn lateral_boundary() {
        let c = build_course(&CourseConfig::default()).unwrap();
        let p = VehicleParams::default();
        let edge = 0.5 * p.body_width + 0.15;
        let outside = VehicleState::aligned(40.0, -1.75 + edge + 1e-3, 10.0);
        let inside = VehicleState::aligned(40.0, -1.75 + edge - 1e-3, 10.0);
        assert!(!check_collision(&outside, &p, &c).is_collision());
        assert!(check_collision(&inside, &p, &c).is_collision());
    }
}
