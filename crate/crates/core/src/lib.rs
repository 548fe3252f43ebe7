//! Expert-imitating slalom steering: a kinematic plant with a torque-driven
//! steering column, seven handcrafted features encoded as a 5×7 matrix, a
//! small CNN regressor for the desired wheel angle, and a speed-scheduled PD
//! torque loop that closes the circuit.

pub mod controller;
pub mod dataset;
pub mod expert;
pub mod features;
pub mod nn;
pub mod profile;
pub mod sim;
pub mod trace;
pub mod training;
