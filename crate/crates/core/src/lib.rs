pub mod config;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod inversion;
pub mod io;
pub mod metrics;
pub mod monotonicity;
pub mod protocol;
pub mod sensitivity;
mod skyline;

pub use error::{Error, Result};
