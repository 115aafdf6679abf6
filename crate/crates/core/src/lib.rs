//! Radiance-field training on equirectangular (ERP) 360-degree images with
//! distortion-aware and content-aware ray sampling.

pub mod dataset;
pub mod error;
pub mod field;
pub mod geometry;
pub mod image;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod render;
pub mod rng;
pub mod sampling;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};
