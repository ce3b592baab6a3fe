//! Self-supervised interest point detection and description.

pub mod adaptation;
pub mod classical;
pub mod error;
pub mod evalsuite;
pub mod geometry;
pub mod imaging;
pub mod neural;
pub mod parallel;
pub mod points;
pub mod rng;
pub mod synthdata;

pub use error::{Error, Result};
