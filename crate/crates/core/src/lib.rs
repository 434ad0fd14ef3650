//! Coordinate-based texture inpainting and pose-guided image resynthesis.

pub mod data;
pub mod error;
pub mod gradsuite;
pub mod loss;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod tensor;
pub mod warp;

pub use error::{Error, Result};
