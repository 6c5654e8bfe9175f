//! Learning global linear immersions of nonlinear oscillators.

pub mod analysis;
pub mod analytic;
pub mod dynsys;
pub mod error;
pub mod immersion;
pub mod lmopt;
pub mod mlp;
pub mod odeint;

pub use error::{Error, Result};
