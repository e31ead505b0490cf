//! Saliency-guided detail amplification with polar-coordinate
//! self-supervision for ultra-fine-grained image classification.
//!
//! The numeric core is generic over [`Float`]; training uses `f32` and the
//! gradient oracles use `f64`. Concrete aliases for both live at the crate root.

pub mod backbone;
pub mod data;
pub mod error;
pub mod gae;
pub mod gat;
pub mod instrument;
pub mod nn;
pub mod scalar;
pub mod sda;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Float;

pub type Model32 = trainer::Model<f32>;
pub type Model64 = trainer::Model<f64>;
pub type Trainer32 = trainer::Trainer<f32>;
pub type Checkpoint32 = trainer::Checkpoint<f32>;
pub type FeatureMap32 = ndarray::Array4<f32>;
pub type FeatureMap64 = ndarray::Array4<f64>;
