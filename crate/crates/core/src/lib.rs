//! Simulation and steering control of a uniflagellar soft robot swimming at
//! low Reynolds number.
//!
//! The robot is a rigid spherical head with one soft helical flagellum. The
//! forward model couples a discrete elastic rod to slender-body
//! hydrodynamics; steering exploits the buckling instability of the
//! flagellum above a threshold rotation rate. The crate provides
//!
//! * [`rod`], [`elastic`], [`hydro`], [`stepper`]: the forward model,
//! * [`trajectory`]: closed-form line fits and maneuver geometry,
//! * [`learning`]: dataset generation and the small neural regressors that
//!   invert the steering dynamics,
//! * [`control`]: the online waypoint-following controller,
//! * [`config`] and [`io`]: file formats used by the `flagellum` binary.

pub mod banded;
pub mod config;
pub mod control;
pub mod elastic;
pub mod error;
pub mod hydro;
pub mod io;
pub mod learning;
pub mod params;
pub mod rod;
pub mod stepper;
pub mod trajectory;

pub use error::{Error, Result};
pub use params::PhysicalParameters;

/// 3-vector used throughout.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3×3 matrix used throughout.
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Revolutions per minute to rad/s.
pub fn rpm_to_rad_s(rpm: f64) -> f64 {
    rpm * std::f64::consts::PI / 30.0
}

/// rad/s to revolutions per minute.
pub fn rad_s_to_rpm(w: f64) -> f64 {
    w * 30.0 / std::f64::consts::PI
}
