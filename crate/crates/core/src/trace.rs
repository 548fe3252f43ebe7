//! Per-run recordings and the shared fixed-step simulation loop.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControlError;
use crate::features::FeatureFrame;
use crate::profile::SpeedProfile;
use crate::sim::{check_collision, step, Course, StepInput, VehicleParams, VehicleState};

pub const TRACE_HEADER: [&str; 9] =
    ["t", "x", "y", "heading", "speed_kmh", "wheel_angle", "wheel_rate", "torque", "collision_flag"];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("bad header: expected {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub state: VehicleState,
    pub frame: FeatureFrame,
    /// Wheel angle the driver asked for this tick (rad).
    pub target: f64,
    pub torque: f64,
    pub speed_command: f64,
    pub collision: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub run_id: u32,
    pub dt: f64,
    pub records: Vec<TraceRecord>,
    pub completed: bool,
    pub collided: bool,
    /// Why the run stopped early, if it did.
    pub failure: Option<String>,
}

impl RunTrace {
    pub fn peak_wheel_angle(&self) -> f64 {
        self.records.iter().fold(0.0, |m, r| m.max(r.state.wheel_angle.abs()))
    }

    pub fn peak_wheel_rate(&self) -> f64 {
        self.records.iter().fold(0.0, |m, r| m.max(r.state.wheel_rate.abs()))
    }

    pub fn wheel_rate_rms(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let s: f64 = self.records.iter().map(|r| r.state.wheel_rate.powi(2)).sum();
        (s / self.records.len() as f64).sqrt()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TraceError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        for r in &self.records {
            let s = &r.state;
            w.write_record([
                r.t.to_string(),
                s.x.to_string(),
                s.y.to_string(),
                s.heading.to_string(),
                s.speed_kmh().to_string(),
                s.wheel_angle.to_string(),
                s.wheel_rate.to_string(),
                r.torque.to_string(),
                u8::from(r.collision).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One parsed line of a trace CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed_kmh: f64,
    pub wheel_angle: f64,
    pub wheel_rate: f64,
    pub torque: f64,
    pub collision: bool,
}

/// Parses a trace CSV. Row numbers in errors count the header as row 1.
pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>, TraceError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(TraceError::Header {
            expected: TRACE_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| TraceError::Row { row, msg: e.to_string() })?;
        let num = |k: usize| -> Result<f64, TraceError> {
            let raw = rec.get(k).unwrap_or("");
            raw.trim().parse::<f64>().map_err(|_| TraceError::Row {
                row,
                msg: format!("{} = {raw:?} is not a number", TRACE_HEADER[k]),
            })
        };
        let collision = match rec.get(8).map(str::trim) {
            Some("0") => false,
            Some("1") => true,
            other => {
                return Err(TraceError::Row { row, msg: format!("collision_flag = {other:?} (expected 0 or 1)") })
            }
        };
        rows.push(TraceRow {
            t: num(0)?,
            x: num(1)?,
            y: num(2)?,
            heading: num(3)?,
            speed_kmh: num(4)?,
            wheel_angle: num(5)?,
            wheel_rate: num(6)?,
            torque: num(7)?,
            collision,
        });
    }
    Ok(rows)
}

/// What a driver does in one control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub torque: f64,
    pub frame: FeatureFrame,
    pub target: f64,
}

/// Anything that can steer the car one tick at a time.
pub trait Driver {
    fn act(&mut self, state: &VehicleState, course: &Course, speed_command: f64, dt: f64)
        -> Result<Action, ControlError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    /// s
    pub dt: f64,
    /// s; the run fails if the finish is not reached in time.
    pub max_time: f64,
    /// m; |y| beyond this counts as leaving the road.
    pub road_half_width: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self { dt: 1.0 / 30.0, max_time: 90.0, road_half_width: 5.0 }
    }
}

/// Drives from the course start until the finish line, a collision, leaving
/// the road, or the time limit. The trace is kept in every case.
pub fn rollout<D: Driver + ?Sized>(
    driver: &mut D,
    course: &Course,
    params: &VehicleParams,
    profile: &SpeedProfile,
    cfg: &RolloutConfig,
    run_id: u32,
) -> Result<RunTrace, ControlError> {
    if !(cfg.dt > 0.0) {
        return Err(ControlError::BadTimeStep(cfg.dt));
    }
    let mut state = course.start_state(crate::sim::kmh_to_ms(profile.speed_at(0.0)));
    let mut trace =
        RunTrace { run_id, dt: cfg.dt, records: Vec::new(), completed: false, collided: false, failure: None };
    let max_steps = (cfg.max_time / cfg.dt).ceil() as usize;
    for k in 0..=max_steps {
        let t = k as f64 * cfg.dt;
        if state.x >= course.x_finish {
            trace.completed = true;
            return Ok(trace);
        }
        let collision = check_collision(&state, params, course).is_collision();
        let v_cmd = profile.speed_at(t);
        let action = driver.act(&state, course, v_cmd, cfg.dt)?;
        trace.records.push(TraceRecord {
            t,
            state,
            frame: action.frame,
            target: action.target,
            torque: action.torque,
            speed_command: v_cmd,
            collision,
        });
        if collision {
            trace.collided = true;
            trace.failure = Some(format!("cone collision at x = {:.2} m", state.x));
            return Ok(trace);
        }
        if state.y.abs() > cfg.road_half_width {
            trace.failure = Some(format!("left the road at x = {:.2} m, y = {:.2} m", state.x, state.y));
            return Ok(trace);
        }
        state = step(&state, &StepInput { torque: action.torque, speed_command: v_cmd }, params, cfg.dt)?;
    }
    trace.failure = Some(format!("finish not reached within {} s", cfg.max_time));
    Ok(trace)
}
