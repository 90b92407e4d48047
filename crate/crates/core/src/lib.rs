//! Whole-body impedance-coordinative control for a wheel-legged robot.

pub mod dynamics;
pub mod qp;
pub mod wbc;
pub mod impedance;
pub mod icc;
pub mod estimation;
pub mod friction_comp;
pub mod sim;
