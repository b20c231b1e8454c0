//! Semi-supervised segmentation with uncertainty-guided superpixel
//! displacement and a mean-teacher training loop.

pub mod data;
pub mod displacement;
pub mod error;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pgm;
pub mod rng;
pub mod superpixel;
pub mod train;

pub use error::{Error, Result};
