//! Vehicle plant: a damped steering column driving a kinematic bicycle.
//!
//! Pose convention: `x` runs down the road, `y` is lateral with left positive.
//! The heading is measured from the y-axis, counter-clockwise positive, so a
//! car driving straight down the road has `heading == FRAC_PI_2` and its
//! direction of travel is `(cos(heading - π/2), sin(heading - π/2))`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Converts m/s to km/h.
pub fn ms_to_kmh(v: f64) -> f64 {
    v * 3.6
}

pub fn kmh_to_ms(v: f64) -> f64 {
    v / 3.6
}

/// Wraps an angle into `(-π, π]`. Angles already in range are returned untouched.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("invalid vehicle parameter {name} = {value} (must be > 0)")]
    BadParam { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// rad from the y-axis, counter-clockwise positive, wrapped to (-π, π].
    pub heading: f64,
    /// m/s, never negative.
    pub speed: f64,
    /// Steering-wheel angle (rad, left positive).
    pub wheel_angle: f64,
    /// rad/s
    pub wheel_rate: f64,
}

impl VehicleState {
    /// Car at `(x, y)` pointing straight down the road with the wheel centred.
    pub fn aligned(x: f64, y: f64, speed: f64) -> Self {
        Self {
            x,
            y,
            heading: FRAC_PI_2,
            speed,
            wheel_angle: 0.0,
            wheel_rate: 0.0,
        }
    }

    pub fn speed_kmh(&self) -> f64 {
        ms_to_kmh(self.speed)
    }

    /// Angle of travel relative to the road axis (+x), counter-clockwise positive.
    pub fn road_angle(&self) -> f64 {
        self.heading - FRAC_PI_2
    }

    /// Unit vector of the direction of travel.
    pub fn forward(&self) -> (f64, f64) {
        let a = self.road_angle();
        (a.cos(), a.sin())
    }

    fn check_finite(&self) -> Result<(), SimError> {
        for (what, value) in [
            ("x", self.x),
            ("y", self.y),
            ("heading", self.heading),
            ("speed", self.speed),
            ("wheel_angle", self.wheel_angle),
            ("wheel_rate", self.wheel_rate),
        ] {
            if !value.is_finite() {
                return Err(SimError::NonFinite { what, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// m
    pub wheelbase: f64,
    /// Steering-wheel angle divided by this gives the tire angle.
    pub steering_ratio: f64,
    /// kg·m²
    pub column_inertia: f64,
    /// N·m·s/rad
    pub column_damping: f64,
    pub body_length: f64,
    pub body_width: f64,
    /// rad, physical stop of the steering wheel.
    pub wheel_angle_max: f64,
    /// s, first-order lag of the speed toward the commanded speed.
    pub speed_time_constant: f64,
    /// RK4 substeps per control step.
    pub substeps: usize,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.7,
            steering_ratio: 16.0,
            column_inertia: 0.05,
            column_damping: 0.3,
            body_length: 4.5,
            body_width: 1.8,
            wheel_angle_max: 2.5 * PI,
            speed_time_constant: 0.5,
            substeps: 4,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, value) in [
            ("wheelbase", self.wheelbase),
            ("steering_ratio", self.steering_ratio),
            ("column_inertia", self.column_inertia),
            ("column_damping", self.column_damping),
            ("body_length", self.body_length),
            ("body_width", self.body_width),
            ("wheel_angle_max", self.wheel_angle_max),
            ("speed_time_constant", self.speed_time_constant),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(SimError::BadParam { name, value });
            }
        }
        if self.substeps == 0 {
            return Err(SimError::BadParam { name: "substeps", value: 0.0 });
        }
        Ok(())
    }

    /// Tire angle produced by a steering-wheel angle.
    pub fn tire_angle(&self, wheel_angle: f64) -> f64 {
        wheel_angle / self.steering_ratio
    }

    /// Steering-wheel angle needed for a tire angle.
    pub fn wheel_for_tire(&self, tire_angle: f64) -> f64 {
        tire_angle * self.steering_ratio
    }
}

/// Actuation for one control period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInput {
    /// Steering-column torque (N·m).
    pub torque: f64,
    /// Commanded speed (km/h); set externally, never by the steering system.
    pub speed_command: f64,
}

// x, y, road_angle, speed, wheel_angle, wheel_rate
type Deriv = [f64; 6];

fn derivative(s: &Deriv, torque: f64, v_cmd: f64, p: &VehicleParams) -> Deriv {
    let [_, _, angle, speed, wheel, rate] = *s;
    let tire = p.tire_angle(wheel);
    [
        speed * angle.cos(),
        speed * angle.sin(),
        speed * tire.tan() / p.wheelbase,
        (v_cmd - speed) / p.speed_time_constant,
        rate,
        (torque - p.column_damping * rate) / p.column_inertia,
    ]
}

fn axpy(s: &Deriv, k: &Deriv, h: f64) -> Deriv {
    let mut out = *s;
    for (o, d) in out.iter_mut().zip(k) {
        *o += h * d;
    }
    out
}

fn clamp_column(s: &mut Deriv, max: f64) {
    if s[4] > max {
        s[4] = max;
        s[5] = 0.0;
    } else if s[4] < -max {
        s[4] = -max;
        s[5] = 0.0;
    }
}

/// Advances the plant by `dt` seconds holding `input` constant.
pub fn step(
    state: &VehicleState,
    input: &StepInput,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState, SimError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::BadTimeStep(dt));
    }
    state.check_finite()?;
    if !input.torque.is_finite() {
        return Err(SimError::NonFinite { what: "torque", value: input.torque });
    }
    if !input.speed_command.is_finite() {
        return Err(SimError::NonFinite {
            what: "speed_command",
            value: input.speed_command,
        });
    }
    params.validate()?;

    let v_cmd = kmh_to_ms(input.speed_command.max(0.0));
    let h = dt / params.substeps as f64;
    let mut s: Deriv = [
        state.x,
        state.y,
        state.road_angle(),
        state.speed,
        state.wheel_angle,
        state.wheel_rate,
    ];
    for _ in 0..params.substeps {
        let k1 = derivative(&s, input.torque, v_cmd, params);
        let k2 = derivative(&axpy(&s, &k1, h / 2.0), input.torque, v_cmd, params);
        let k3 = derivative(&axpy(&s, &k2, h / 2.0), input.torque, v_cmd, params);
        let k4 = derivative(&axpy(&s, &k3, h), input.torque, v_cmd, params);
        for i in 0..6 {
            s[i] += h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
        }
        clamp_column(&mut s, params.wheel_angle_max);
        s[3] = s[3].max(0.0);
    }

    let next = VehicleState {
        x: s[0],
        y: s[1],
        heading: wrap_angle(s[2] + FRAC_PI_2),
        speed: s[3],
        wheel_angle: s[4],
        wheel_rate: s[5],
    };
    next.check_finite()?;
    Ok(next)
}

/// Kinetic energy stored in the steering column.
pub fn column_energy(state: &VehicleState, params: &VehicleParams) -> f64 {
    0.5 * params.column_inertia * state.wheel_rate * state.wheel_rate
}
