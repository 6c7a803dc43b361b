//! Core algorithms for the factored RF channel emulator: scenario geometry,
//! spherical-harmonic antenna and scatter models, fractional-delay filtering,
//! the two emulation engines, and the analysis utilities used by the
//! experiment suite.

pub mod error;
pub mod geom;
pub mod sphharm;
pub mod fdelay;
pub mod scatter;
pub mod analysis;
pub mod emucore;

pub use error::{Error, Result};
pub use num_complex::Complex64;
