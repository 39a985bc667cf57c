//! Attention between function spaces and transformer neural operators.
//!
//! The crate is organised bottom-up: [`grid`] samples functions on boxes,
//! [`attention`] and [`spectral`] provide the building blocks,
//! [`models`] assembles the architectures, [`training`] differentiates and
//! fits them and [`datagen`] produces the benchmark problems.

pub mod attention;
pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod grid;
pub mod models;
pub mod spectral;
pub mod training;

pub use attention::{AttentionHeadParams, HeadKind, LinearMap};
pub use error::{Error, Result};
pub use grid::{
    Domain, Grid, GridSpec, PatchLayout, PatchedFunction, PositionEncoding, QuadratureWeights, SampledFunction,
};
pub use spectral::{FourierMultiplier, SmoothingParams};
pub use models::{Activation, ModelConfig, ModelParameters, Variant};
pub use training::{Dataset, Loss, Metrics, Sample, TrainConfig};
