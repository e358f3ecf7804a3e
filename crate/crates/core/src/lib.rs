//! Per-instance algorithm selection laboratory.

pub mod artifacts;
pub mod bounds;
pub mod distshift;
pub mod error;
pub mod experiments;
pub mod labeling;
pub mod neural;
pub mod plot;
pub mod portfolio;
pub mod problem;
pub mod seed;
pub mod selectors;

pub use error::{Error, Result};
