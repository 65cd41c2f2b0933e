//! Steady periodic waves on a stratified flow with shear and surface tension,
//! computed in conformal strip variables.

pub mod cli;
pub mod continuation;
pub mod error;
pub mod flow;
pub mod io;
pub mod linear;
pub mod residual;
pub mod spectral;

pub use error::{Error, Result};
