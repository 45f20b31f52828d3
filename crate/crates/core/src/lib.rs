pub mod dataset;
pub mod error;
pub mod geometry;
pub mod greens;
pub mod io;
pub mod forward;
pub mod mie;
pub mod physics;
pub mod special;
pub mod xra;

pub use error::{Error, ErrorCategory, Result};
