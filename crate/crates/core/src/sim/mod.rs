//! Deterministic plant and course.

mod course;
mod vehicle;

pub use course::{
    body_clearance, build_course, check_collision, CollisionReport, ConeHit, ConeSet, ConeSetSpec, Course,
    CourseConfig, CourseError, Lane,
};
pub use vehicle::{
    column_energy, kmh_to_ms, ms_to_kmh, step, wrap_angle, SimError, StepInput, VehicleParams,
    VehicleState,
};
