//! Speed-scheduled PD steering-torque law and the learned pilot built on it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{build_matrix, extract_frame, FeatureError, FeatureFrame, FEATURE_VERSION};
use crate::nn::{CnnModel, NnError, Workspace};
use crate::profile::SpeedProfile;
use crate::sim::{Course, SimError, StepInput, VehicleParams, VehicleState};
use crate::trace::{rollout, Action, Driver, RolloutConfig, RunTrace};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid gains: {0}")]
    BadGains(String),
    #[error("model uses feature version {found}, this build extracts version {expected}")]
    FeatureVersion { found: u32, expected: u32 },
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdGains {
    /// N·m/rad
    pub p: f64,
    /// N·m·s/rad
    pub d: f64,
    /// `(speed km/h, multiplier)` knots, interpolated linearly and held flat
    /// beyond the ends.
    pub schedule: Vec<(f64, f64)>,
    /// N·m
    pub torque_max: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self { p: 10.0, d: 0.8, schedule: vec![(15.0, 1.0), (60.0, 1.6)], torque_max: 15.0 }
    }
}

impl PdGains {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.p > 0.0 && self.d > 0.0 && self.torque_max > 0.0) {
            return Err(ControlError::BadGains(format!(
                "P = {}, D = {}, torque_max = {} must all be positive",
                self.p, self.d, self.torque_max
            )));
        }
        if self.schedule.is_empty() {
            return Err(ControlError::BadGains("empty gain schedule".into()));
        }
        for w in self.schedule.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(ControlError::BadGains("schedule speeds must increase".into()));
            }
        }
        if let Some(&(v, m)) = self.schedule.iter().find(|(v, m)| !(v.is_finite() && *m > 0.0 && m.is_finite())) {
            return Err(ControlError::BadGains(format!("schedule knot ({v}, {m})")));
        }
        Ok(())
    }

    pub fn multiplier(&self, speed_kmh: f64) -> f64 {
        let s = &self.schedule;
        let (first, last) = (s[0], s[s.len() - 1]);
        if speed_kmh <= first.0 {
            return first.1;
        }
        if speed_kmh >= last.0 {
            return last.1;
        }
        let i = s.partition_point(|k| k.0 <= speed_kmh);
        let (a, b) = (s[i - 1], s[i]);
        a.1 + (b.1 - a.1) * (speed_kmh - a.0) / (b.0 - a.0)
    }
}

/// Column torque driving `theta_a` toward `theta_d`. The error is
/// `theta_a - theta_d`; its backward-difference rate is zero on the first
/// tick (`prev_error == None`). The sign makes the torque restoring.
pub fn pd_torque(
    theta_a: f64,
    theta_d: f64,
    prev_error: Option<f64>,
    dt: f64,
    gains: &PdGains,
    speed_kmh: f64,
) -> f64 {
    let e = theta_a - theta_d;
    let e_dot = prev_error.map_or(0.0, |p| (e - p) / dt);
    let k = gains.multiplier(speed_kmh);
    let tau = -k * (gains.p * e + gains.d * e_dot);
    tau.clamp(-gains.torque_max, gains.torque_max)
}

/// Source of the desired steering-wheel angle.
pub trait SteeringPolicy {
    /// Desired angle in rad, already clamped to the column stops.
    fn desired_angle(&mut self, frame: &FeatureFrame, params: &VehicleParams) -> Result<f64, ControlError>;
}

/// Fixed setpoint, for exercising the column loop without a network.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub f64);

impl SteeringPolicy for ConstantPolicy {
    fn desired_angle(&mut self, _: &FeatureFrame, params: &VehicleParams) -> Result<f64, ControlError> {
        Ok(self.0.clamp(-params.wheel_angle_max, params.wheel_angle_max))
    }
}

/// Network output denormalized by the model's target scale and clamped to
/// the column stops.
pub fn desired_angle(
    model: &CnnModel,
    frame: &FeatureFrame,
    ws: &mut Workspace,
    params: &VehicleParams,
) -> Result<f64, ControlError> {
    if model.feature_version != FEATURE_VERSION {
        return Err(ControlError::FeatureVersion { found: model.feature_version, expected: FEATURE_VERSION });
    }
    let m = build_matrix(frame, &model.normalizer, &model.permutations)?;
    let out = model.predict(&m.flatten(), ws) * model.target_scale;
    Ok(out.clamp(-params.wheel_angle_max, params.wheel_angle_max))
}

pub struct CnnPolicy {
    model: CnnModel,
    ws: Workspace,
}

impl CnnPolicy {
    pub fn new(model: CnnModel) -> Result<Self, ControlError> {
        if model.feature_version != FEATURE_VERSION {
            return Err(ControlError::FeatureVersion { found: model.feature_version, expected: FEATURE_VERSION });
        }
        model.validate()?;
        let ws = Workspace::new(&model);
        Ok(Self { model, ws })
    }

    pub fn model(&self) -> &CnnModel {
        &self.model
    }
}

impl SteeringPolicy for CnnPolicy {
    fn desired_angle(&mut self, frame: &FeatureFrame, params: &VehicleParams) -> Result<f64, ControlError> {
        desired_angle(&self.model, frame, &mut self.ws, params)
    }
}

/// One tick of pilot output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotOutput {
    pub input: StepInput,
    pub frame: FeatureFrame,
    pub theta_d: f64,
}

/// Features → policy → PD, with the per-run memory the loop needs.
pub struct Pilot<P> {
    pub policy: P,
    pub gains: PdGains,
    pub params: VehicleParams,
    prev_error: Option<f64>,
    prev_state: Option<VehicleState>,
}

impl<P: SteeringPolicy> Pilot<P> {
    pub fn new(policy: P, gains: PdGains, params: VehicleParams) -> Result<Self, ControlError> {
        gains.validate()?;
        params.validate()?;
        Ok(Self { policy, gains, params, prev_error: None, prev_state: None })
    }

    pub fn reset(&mut self) {
        self.prev_error = None;
        self.prev_state = None;
    }

    /// The speed command is passed through untouched.
    pub fn step(
        &mut self,
        state: &VehicleState,
        course: &Course,
        speed_command: f64,
        dt: f64,
    ) -> Result<PilotOutput, ControlError> {
        if !(dt > 0.0) {
            return Err(ControlError::BadTimeStep(dt));
        }
        let frame = extract_frame(state, self.prev_state.as_ref(), course, dt)?;
        let theta_d = self.policy.desired_angle(&frame, &self.params)?;
        let torque = pd_torque(state.wheel_angle, theta_d, self.prev_error, dt, &self.gains, state.speed_kmh());
        self.prev_error = Some(state.wheel_angle - theta_d);
        self.prev_state = Some(*state);
        Ok(PilotOutput { input: StepInput { torque, speed_command }, frame, theta_d })
    }
}

impl<P: SteeringPolicy> Driver for Pilot<P> {
    fn act(&mut self, state: &VehicleState, course: &Course, v: f64, dt: f64) -> Result<Action, ControlError> {
        let o = self.step(state, course, v, dt)?;
        Ok(Action { torque: o.input.torque, frame: o.frame, target: o.theta_d })
    }
}

/// Drives the course with the learned pilot. Collisions and leaving the road
/// are reported in the trace, not as errors.
pub fn run_closed_loop(
    model: &CnnModel,
    course: &Course,
    profile: &SpeedProfile,
    gains: &PdGains,
    params: &VehicleParams,
    cfg: &RolloutConfig,
    run_id: u32,
) -> Result<RunTrace, ControlError> {
    let mut pilot = Pilot::new(CnnPolicy::new(model.clone())?, gains.clone(), *params)?;
    rollout(&mut pilot, course, params, profile, cfg, run_id)
}
