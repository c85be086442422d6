//! Pseudospectral simulation, linearization, operator reduction and exact
//! control of periodic hydroelastic waves.

pub mod dno;
pub mod error;
pub mod evolution;
pub mod hum;
pub mod hydro;
pub mod linearization;
pub mod pair;
pub mod reduction;
pub mod spectral;

pub use error::{Error, Result};
pub use pair::StatePair;
pub use spectral::{Depth, Field, GridSpec, C64};
