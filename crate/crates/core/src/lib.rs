//! Transient stability of power systems with synchronous machines and
//! grid-following converters, and critical clearing time estimation from
//! trajectory sensitivities.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix the scalar to `f64`, which is what the command-line
//! tool uses.

pub mod case;
pub mod cct;
pub mod devices;
pub mod error;
pub mod network;
pub mod scalar;
pub mod sensitivity;
pub mod system;
pub mod tds;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Study = tds::Study<f64>;
pub type Trajectory = tds::Trajectory<f64>;
pub type SystemModel = system::SystemModel<f64>;
pub type SensitivityTrajectory = sensitivity::SensitivityTrajectory<f64>;
