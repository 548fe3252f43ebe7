//! Scripted expert: pure pursuit on the reference path, smoothed, with a
//! per-driver flavour of noise, executed through the same PD column loop the
//! learned pilot uses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::path::ReferencePath;
use crate::controller::{pd_torque, ControlError, PdGains};
use crate::features::extract_frame;
use crate::sim::{Course, VehicleParams, VehicleState};
use crate::trace::{Action, Driver};

/// One emulated driver's habits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverPreset {
    pub name: String,
    /// s of travel to the pursuit point.
    pub lookahead_time: f64,
    /// m; floor on the pursuit distance.
    pub lookahead_min: f64,
    /// s; first-order smoothing of the raw pursuit command.
    pub smoothing_tau: f64,
    /// rad; stationary std of the driver's own steering wander.
    pub noise_amplitude: f64,
    /// s; correlation time of that wander.
    pub noise_tau: f64,
}

pub fn default_presets() -> Vec<DriverPreset> {
    let p = |name: &str, lookahead_time, lookahead_min, smoothing_tau, noise_amplitude, noise_tau| DriverPreset {
        name: name.to_string(),
        lookahead_time,
        lookahead_min,
        smoothing_tau,
        noise_amplitude,
        noise_tau,
    };
    vec![
        p("calm", 0.75, 7.0, 0.12, 0.010, 1.0),
        p("brisk", 0.55, 6.0, 0.06, 0.015, 0.6),
        p("relaxed", 0.85, 8.0, 0.15, 0.020, 1.2),
        p("fidgety", 0.65, 6.5, 0.08, 0.030, 0.4),
    ]
}

/// Raw pure-pursuit wheel command toward the path one lookahead ahead (see
/// [`ReferencePath::aim`]). Rear-axle geometry: curvature `2·lateral/distance²`
/// to the target point.
pub fn pursuit_command(
    state: &VehicleState,
    path: &ReferencePath,
    preset: &DriverPreset,
    params: &VehicleParams,
) -> f64 {
    let look = (preset.lookahead_time * state.speed).max(preset.lookahead_min);
    let tx = state.x + look;
    let ty = path.aim(state.x, state.y, tx);
    let (fx, fy) = state.forward();
    let (dx, dy) = (tx - state.x, ty - state.y);
    let lateral = -dx * fy + dy * fx;
    let curvature = 2.0 * lateral / (dx * dx + dy * dy);
    let wheel = params.wheel_for_tire((params.wheelbase * curvature).atan());
    wheel.clamp(-params.wheel_angle_max, params.wheel_angle_max)
}

/// Ornstein-Uhlenbeck step with stationary std `sigma`.
fn ou_step(x: f64, sigma: f64, tau: f64, dt: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let a = (-dt / tau).exp();
    let n: f64 = StandardNormal.sample(rng);
    a * x + sigma * (1.0 - a * a).sqrt() * n
}

/// Knobs shared by every expert run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionConfig {
    /// rad/s; slew limit on the expert's command.
    pub command_rate_cap: f64,
    /// rad; std of the perturbation added to the executed setpoint but not to
    /// the recorded target, so demonstrations include recoveries.
    pub perturbation: f64,
    /// s
    pub perturbation_tau: f64,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self { command_rate_cap: 8.0, perturbation: 0.3, perturbation_tau: 1.0 }
    }
}

pub struct ExpertDriver<'a> {
    path: &'a ReferencePath,
    preset: DriverPreset,
    params: VehicleParams,
    gains: PdGains,
    exec: ExecutionConfig,
    rng: ChaCha8Rng,
    command: Option<f64>,
    wander: f64,
    perturb: f64,
    prev_state: Option<VehicleState>,
    prev_error: Option<f64>,
}

impl<'a> ExpertDriver<'a> {
    pub fn new(
        path: &'a ReferencePath,
        preset: DriverPreset,
        params: VehicleParams,
        gains: PdGains,
        exec: ExecutionConfig,
        seed: u64,
    ) -> Self {
        Self {
            path,
            preset,
            params,
            gains,
            exec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            command: None,
            wander: 0.0,
            perturb: 0.0,
            prev_state: None,
            prev_error: None,
        }
    }

    /// Smoothed, rate-limited pursuit command plus the driver's wander (rad).
    pub fn expert_step(&mut self, state: &VehicleState, dt: f64) -> f64 {
        let raw = pursuit_command(state, self.path, &self.preset, &self.params);
        let smoothed = match self.command {
            None => raw,
            Some(prev) => {
                let target = prev + (raw - prev) * dt / (self.preset.smoothing_tau + dt);
                let limit = self.exec.command_rate_cap * dt;
                prev + (target - prev).clamp(-limit, limit)
            }
        };
        self.command = Some(smoothed);
        self.wander = ou_step(self.wander, self.preset.noise_amplitude, self.preset.noise_tau, dt, &mut self.rng);
        (smoothed + self.wander).clamp(-self.params.wheel_angle_max, self.params.wheel_angle_max)
    }
}

impl Driver for ExpertDriver<'_> {
    fn act(&mut self, state: &VehicleState, course: &Course, _v: f64, dt: f64) -> Result<Action, ControlError> {
        let frame = extract_frame(state, self.prev_state.as_ref(), course, dt)?;
        let target = self.expert_step(state, dt);
        self.perturb = ou_step(self.perturb, self.exec.perturbation, self.exec.perturbation_tau, dt, &mut self.rng);
        let setpoint = (target + self.perturb).clamp(-self.params.wheel_angle_max, self.params.wheel_angle_max);
        let torque = pd_torque(state.wheel_angle, setpoint, self.prev_error, dt, &self.gains, state.speed_kmh());
        self.prev_error = Some(state.wheel_angle - setpoint);
        self.prev_state = Some(*state);
        Ok(Action { torque, frame, target })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::path::{reference_path, PathConfig};
    use crate::sim::{build_course, CourseConfig};

    fn setup() -> (Course, ReferencePath) {
        let c = build_course(&CourseConfig::default()).unwrap();
        let p = reference_path(&c, &VehicleParams::default(), &PathConfig::default()).unwrap();
        (c, p)
    }

    #[test]
    fn on_straight_path_command_is_zero() {
        let (c, path) = setup();
        let s = VehicleState::aligned(35.0, c.lane_center(crate::sim::Lane::Left), 12.0);
        let cmd = pursuit_command(&s, &path, &default_presets()[0], &VehicleParams::default());
        assert!(cmd.abs() < 1e-6, "{cmd}");
    }

    #[test]
    fn offset_left_steers_right() {
        let (_, path) = setup();
        let s = VehicleState::aligned(35.0, 2.25, 12.0);
        assert!(pursuit_command(&s, &path, &default_presets()[0], &VehicleParams::default()) < 0.0);
        let s = VehicleState::aligned(35.0, 1.25, 12.0);
        assert!(pursuit_command(&s, &path, &default_presets()[0], &VehicleParams::default()) > 0.0);
    }

    #[test]
    fn same_seed_same_commands() {
        let (_, path) = setup();
        let run = |seed| {
            let mut d = ExpertDriver::new(
                &path,
                default_presets()[3].clone(),
                VehicleParams::default(),
                PdGains::default(),
                ExecutionConfig::default(),
                seed,
            );
            (0..200)
                .map(|k| d.expert_step(&VehicleState::aligned(k as f64 * 0.4, -1.75, 12.0), 1.0 / 30.0))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }
}
