//! Simulation and gradient-based design of shaped RF pulses for coupled
//! spin-1/2 systems in NMR spectroscopy.

pub mod analyze;
pub mod detect;
pub mod error;
pub mod grad;
pub mod linalg;
pub mod objective;
pub mod optimize;
pub mod par;
pub mod prop;
pub mod spinsys;

pub use error::{Error, Result};
