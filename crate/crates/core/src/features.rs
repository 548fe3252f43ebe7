//! The seven per-tick steering features and their 5×7 matrix encoding.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{wrap_angle, Course, Lane, VehicleState};

pub const FEATURE_COUNT: usize = 7;
pub const MATRIX_ROWS: usize = 5;
/// Bumped whenever feature definitions or their encoding change.
pub const FEATURE_VERSION: u32 = 1;
pub const STD_FLOOR: f64 = 1e-8;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "f1_turn_state",
    "f2_lateral",
    "f3_long_proximity",
    "f4_speed_kmh",
    "f5_heading",
    "f6_heading_rate",
    "f7_wheel_rate",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("reference cone is {gap} m behind the car (x_ref must not be behind x_car)")]
    NegativeGap { gap: f64 },
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("normalizer has not been fitted")]
    UnfittedNormalizer,
    #[error("cannot fit a normalizer on zero samples")]
    EmptyFit,
    #[error("invalid turn-state code {0} (expected 1, 2 or 3)")]
    BadTurnCode(f64),
    #[error("invalid permutation table: {0}")]
    BadPermutation(String),
}

/// Lateral intent: which way the vacant space lies, or none when running
/// parallel to a cone set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TurnState {
    Left = 1,
    Right = 2,
    Straight = 3,
}

impl TurnState {
    pub fn code(self) -> f64 {
        self as u8 as f64
    }

    pub fn from_code(code: f64) -> Result<Self, FeatureError> {
        match code {
            c if c == 1.0 => Ok(TurnState::Left),
            c if c == 2.0 => Ok(TurnState::Right),
            c if c == 3.0 => Ok(TurnState::Straight),
            c => Err(FeatureError::BadTurnCode(c)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefMode {
    Approaching,
    Abreast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConeInfo {
    pub x_ref: f64,
    pub y_ref: f64,
    pub mode: RefMode,
    /// `None` once past the last set, when the finish line stands in for a set start.
    pub set_index: Option<usize>,
}

/// Picks the point distances are measured to: the start of the next set while
/// approaching it, the end of the set while alongside it (closed interval), or
/// the finish line on the car's current lane after the last set.
pub fn reference_cone(state: &VehicleState, course: &Course) -> ReferenceConeInfo {
    for (i, set) in course.cone_sets.iter().enumerate() {
        let y_ref = course.cone_y(set);
        if state.x < set.x_start {
            return ReferenceConeInfo {
                x_ref: set.x_start,
                y_ref,
                mode: RefMode::Approaching,
                set_index: Some(i),
            };
        }
        if state.x <= set.x_end {
            return ReferenceConeInfo {
                x_ref: set.x_end,
                y_ref,
                mode: RefMode::Abreast,
                set_index: Some(i),
            };
        }
    }
    ReferenceConeInfo {
        x_ref: course.x_finish,
        y_ref: course.lane_center(course.lane_at(state.y)),
        mode: RefMode::Approaching,
        set_index: None,
    }
}

/// Obstacle in the right lane leaves the left lane vacant, hence "turn left".
pub fn turn_state(state: &VehicleState, course: &Course) -> TurnState {
    turn_state_for(&reference_cone(state, course), course)
}

fn turn_state_for(r: &ReferenceConeInfo, course: &Course) -> TurnState {
    match (r.mode, r.set_index) {
        (RefMode::Abreast, _) | (_, None) => TurnState::Straight,
        (RefMode::Approaching, Some(i)) => match course.cone_sets[i].lane {
            Lane::Right => TurnState::Left,
            Lane::Left => TurnState::Right,
        },
    }
}

pub fn lateral_distance(state: &VehicleState, r: &ReferenceConeInfo) -> f64 {
    r.y_ref - state.y
}

/// `1 / (1 + gap)` with the gap in metres; lies in (0, 1].
pub fn longitudinal_proximity(
    state: &VehicleState,
    r: &ReferenceConeInfo,
) -> Result<f64, FeatureError> {
    let gap = r.x_ref - state.x;
    if gap < 0.0 || gap.is_nan() {
        return Err(FeatureError::NegativeGap { gap });
    }
    Ok(1.0 / (1.0 + gap))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub turn_state: TurnState,
    /// m, signed
    pub lateral: f64,
    pub long_proximity: f64,
    pub speed_kmh: f64,
    /// rad from the y-axis
    pub heading: f64,
    /// rad/s
    pub heading_rate: f64,
    /// rad/s
    pub wheel_rate: f64,
}

impl FeatureFrame {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.turn_state.code(),
            self.lateral,
            self.long_proximity,
            self.speed_kmh,
            self.heading,
            self.heading_rate,
            self.wheel_rate,
        ]
    }

    pub fn from_array(v: &[f64; FEATURE_COUNT]) -> Result<Self, FeatureError> {
        Ok(Self {
            turn_state: TurnState::from_code(v[0])?,
            lateral: v[1],
            long_proximity: v[2],
            speed_kmh: v[3],
            heading: v[4],
            heading_rate: v[5],
            wheel_rate: v[6],
        })
    }
}

/// Builds the feature frame for `state`. `prev` is the state one control
/// period earlier, or `None` on the first tick of a run (rates are zero then).
pub fn extract_frame(
    state: &VehicleState,
    prev: Option<&VehicleState>,
    course: &Course,
    dt: f64,
) -> Result<FeatureFrame, FeatureError> {
    if !(dt > 0.0) {
        return Err(FeatureError::BadTimeStep(dt));
    }
    let r = reference_cone(state, course);
    let (heading_rate, wheel_rate) = match prev {
        Some(p) => (wrap_angle(state.heading - p.heading) / dt, state.wheel_rate),
        None => (0.0, 0.0),
    };
    Ok(FeatureFrame {
        turn_state: turn_state_for(&r, course),
        lateral: lateral_distance(state, &r),
        long_proximity: longitudinal_proximity(state, &r)?,
        speed_kmh: state.speed_kmh(),
        heading: state.heading,
        heading_rate,
        wheel_rate,
    })
}

/// Per-feature z-score statistics from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; FEATURE_COUNT],
    pub std: [f64; FEATURE_COUNT],
    /// Number of samples the statistics came from; zero means unfitted.
    pub samples: u64,
}

impl Normalizer {
    pub fn unfitted() -> Self {
        Self { mean: [0.0; FEATURE_COUNT], std: [1.0; FEATURE_COUNT], samples: 0 }
    }

    pub fn is_fitted(&self) -> bool {
        self.samples > 0
    }

    pub fn fit<'a, I>(rows: I) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = &'a [f64; FEATURE_COUNT]>,
    {
        // Welford
        let mut n = 0u64;
        let mut mean = [0.0; FEATURE_COUNT];
        let mut m2 = [0.0; FEATURE_COUNT];
        for row in rows {
            n += 1;
            for k in 0..FEATURE_COUNT {
                let d = row[k] - mean[k];
                mean[k] += d / n as f64;
                m2[k] += d * (row[k] - mean[k]);
            }
        }
        if n == 0 {
            return Err(FeatureError::EmptyFit);
        }
        let mut std = [0.0; FEATURE_COUNT];
        for k in 0..FEATURE_COUNT {
            std[k] = (m2[k] / n as f64).sqrt().max(STD_FLOOR);
        }
        Ok(Self { mean, std, samples: n })
    }

    pub fn normalize(&self, x: &[f64; FEATURE_COUNT]) -> [f64; FEATURE_COUNT] {
        std::array::from_fn(|k| (x[k] - self.mean[k]) / self.std[k])
    }

    pub fn denormalize(&self, z: &[f64; FEATURE_COUNT]) -> [f64; FEATURE_COUNT] {
        std::array::from_fn(|k| z[k] * self.std[k] + self.mean[k])
    }
}

/// Column orderings of the five matrix rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationTable(pub [[usize; FEATURE_COUNT]; MATRIX_ROWS]);

impl PermutationTable {
    /// Row `k` is the feature vector rotated left by `k`.
    pub fn cyclic() -> Self {
        Self(std::array::from_fn(|k| std::array::from_fn(|j| (j + k) % FEATURE_COUNT)))
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        for (r, row) in self.0.iter().enumerate() {
            let mut seen = [false; FEATURE_COUNT];
            for &i in row {
                if i >= FEATURE_COUNT || seen[i] {
                    return Err(FeatureError::BadPermutation(format!(
                        "row {r} is not a permutation of 0..{FEATURE_COUNT}"
                    )));
                }
                seen[i] = true;
            }
        }
        if self.0[0] != std::array::from_fn::<usize, FEATURE_COUNT, _>(|j| j) {
            return Err(FeatureError::BadPermutation("row 0 must be the identity".into()));
        }
        Ok(())
    }
}

impl Default for PermutationTable {
    fn default() -> Self {
        Self::cyclic()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: [[f64; FEATURE_COUNT]; MATRIX_ROWS],
}

impl FeatureMatrix {
    pub fn from_normalized(z: &[f64; FEATURE_COUNT], table: &PermutationTable) -> Self {
        Self { values: std::array::from_fn(|r| std::array::from_fn(|j| z[table.0[r][j]])) }
    }

    /// Row-major copy, the network's `(5, 7, 1)` input layout.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}

pub fn build_matrix(
    frame: &FeatureFrame,
    norm: &Normalizer,
    table: &PermutationTable,
) -> Result<FeatureMatrix, FeatureError> {
    if !norm.is_fitted() {
        return Err(FeatureError::UnfittedNormalizer);
    }
    Ok(FeatureMatrix::from_normalized(&norm.normalize(&frame.to_array()), table))
}

/// Debug dump: one row per frame with raw and normalized features.
pub fn write_feature_dump<W: Write>(
    out: W,
    frames: &[FeatureFrame],
    norm: &Normalizer,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=FEATURE_COUNT).map(|k| format!("f{k}")).collect();
    header.extend((1..=FEATURE_COUNT).map(|k| format!("f{k}_norm")));
    w.write_record(&header)?;
    for f in frames {
        let raw = f.to_array();
        let z = norm.normalize(&raw);
        w.write_record(raw.iter().chain(z.iter()).map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_course, CourseConfig};

    fn course() -> Course {
        build_course(&CourseConfig::default()).unwrap()
    }

    #[test]
    fn reference_modes() {
        let c = course();
        let r = reference_cone(&VehicleState::aligned(10.0, -1.75, 10.0), &c);
        assert_eq!((r.x_ref, r.mode), (30.0, RefMode::Approaching));
        let r = reference_cone(&VehicleState::aligned(40.0, 1.75, 10.0), &c);
        assert_eq!((r.x_ref, r.mode), (50.0, RefMode::Abreast));
        let r = reference_cone(&VehicleState::aligned(30.0, 1.75, 10.0), &c);
        assert_eq!(r.mode, RefMode::Abreast);
        let r = reference_cone(&VehicleState::aligned(160.0, 1.6, 10.0), &c);
        assert_eq!((r.x_ref, r.y_ref, r.set_index), (180.0, 1.75, None));
    }

    #[test]
    fn turn_codes() {
        let c = course();
        let at = |x: f64| turn_state(&VehicleState::aligned(x, 0.0, 10.0), &c);
        assert_eq!(at(10.0), TurnState::Left);
        assert_eq!(at(40.0), TurnState::Straight);
        assert_eq!(at(60.0), TurnState::Right);
        assert_eq!(at(120.0), TurnState::Left);
        assert_eq!(at(170.0), TurnState::Straight);
        assert_eq!(TurnState::Left.code(), 1.0);
        assert_eq!(TurnState::Straight.code(), 3.0);
    }

    #[test]
    fn lateral_signs() {
        let r = |y_ref| ReferenceConeInfo { x_ref: 0.0, y_ref, mode: RefMode::Abreast, set_index: None };
        let s = |y| VehicleState::aligned(0.0, y, 0.0);
        assert_eq!(lateral_distance(&s(-1.75), &r(1.75)), 3.5);
        assert_eq!(lateral_distance(&s(0.4), &r(0.4)), 0.0);
        assert_eq!(lateral_distance(&s(1.75), &r(-1.75)), -3.5);
    }

    #[test]
    fn proximity_values() {
        let r = |x_ref| ReferenceConeInfo { x_ref, y_ref: 0.0, mode: RefMode::Approaching, set_index: Some(0) };
        let s = VehicleState::aligned(0.0, 0.0, 0.0);
        assert_eq!(longitudinal_proximity(&s, &r(0.0)).unwrap(), 1.0);
        assert_eq!(longitudinal_proximity(&s, &r(9.0)).unwrap(), 0.1);
        let far = longitudinal_proximity(&s, &r(999.0)).unwrap();
        assert!(far > 0.0 && (far - 0.001).abs() < 1e-12);
        assert!(matches!(
            longitudinal_proximity(&s, &r(-0.5)),
            Err(FeatureError::NegativeGap { .. })
        ));
    }

    #[test]
    fn frame_rates() {
        let c = course();
        let s0 = VehicleState::aligned(0.0, -1.75, 0.0);
        let f = extract_frame(&s0, None, &c, 1.0 / 30.0).unwrap();
        assert_eq!((f.heading_rate, f.wheel_rate), (0.0, 0.0));

        let mut s1 = VehicleState::aligned(1.0, -1.75, 50.0 / 3.0);
        s1.heading += 0.03;
        s1.wheel_rate = 0.4;
        let f = extract_frame(&s1, Some(&s0), &c, 1.0 / 30.0).unwrap();
        assert!((f.heading_rate - 0.9).abs() < 1e-12);
        assert_eq!(f.wheel_rate, 0.4);
        assert!((f.speed_kmh - 60.0).abs() < 1e-12);
    }

    #[test]
    fn heading_rate_across_wrap() {
        let c = course();
        let mut a = VehicleState::aligned(0.0, -1.75, 5.0);
        let mut b = a;
        a.heading = std::f64::consts::PI - 0.01;
        b.heading = -std::f64::consts::PI + 0.01;
        let f = extract_frame(&b, Some(&a), &c, 0.1).unwrap();
        assert!((f.heading_rate - 0.2).abs() < 1e-9);
    }

    #[test]
    fn matrix_rows() {
        let n = Normalizer { mean: [0.0; 7], std: [1.0; 7], samples: 1 };
        let frame = FeatureFrame::from_array(&[1.0, 2.0, 0.5, 30.0, 1.5, 0.1, -0.2]).unwrap();
        let m = build_matrix(&frame, &n, &PermutationTable::cyclic()).unwrap();
        assert_eq!(m.values[0], frame.to_array());
        assert_eq!(m.values[1][0], 2.0);
        assert_eq!(m.values[4][5], 0.5);
        assert_eq!(m.values[4][6], 30.0);
        assert!(matches!(
            build_matrix(&frame, &Normalizer::unfitted(), &PermutationTable::cyclic()),
            Err(FeatureError::UnfittedNormalizer)
        ));
    }

    #[test]
    fn constant_vector_fills_matrix() {
        let n = Normalizer { mean: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], std: [1.0; 7], samples: 3 };
        let frame = FeatureFrame::from_array(&[2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let m = build_matrix(&frame, &n, &PermutationTable::cyclic()).unwrap();
        assert!(m.values.iter().flatten().all(|&v| v == 1.0));
    }

    #[test]
    fn table_validation() {
        assert!(PermutationTable::cyclic().validate().is_ok());
        let mut t = PermutationTable::cyclic();
        t.0[2][0] = t.0[2][1];
        assert!(t.validate().is_err());
        let mut t = PermutationTable::cyclic();
        t.0.swap(0, 1);
        assert!(t.validate().is_err());
    }

    #[test]
    fn fit_floors_std() {
        let rows = vec![[2.0, 1.0, 0.5, 30.0, 1.5, 0.0, 0.0]; 4];
        let n = Normalizer::fit(&rows).unwrap();
        assert_eq!(n.std[0], STD_FLOOR);
        assert_eq!(n.mean[3], 30.0);
        assert_eq!(Normalizer::fit(std::iter::empty()), Err(FeatureError::EmptyFit));
    }

    #[test]
    fn bad_turn_code() {
        assert!(FeatureFrame::from_array(&[4.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn dump_has_raw_and_normalized_columns() {
        let n = Normalizer { mean: [0.0; 7], std: [2.0; 7], samples: 1 };
        let frame = FeatureFrame::from_array(&[1.0, 2.0, 0.5, 30.0, 1.5, 0.1, -0.2]).unwrap();
        let mut buf = Vec::new();
        write_feature_dump(&mut buf, &[frame], &n).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("f1,f2"));
        assert!(lines.next().unwrap().ends_with(",0.05,-0.1"));
    }
}
