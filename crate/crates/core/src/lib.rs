//! Simulation and analysis toolkit for an atomic magnetometer used as the
//! sensor in a current-noise suppression loop.

pub mod error;
pub mod experiments;
pub mod io;
pub mod lti;
pub mod loopsim;
pub mod magnetometer;
pub mod spectral;
pub mod sysid;

pub use error::{Error, Result};
