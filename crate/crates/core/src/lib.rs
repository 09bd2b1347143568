//! Patch-based multi-label land-use/land-cover classification from single
//! dates and from monthly time series.
//!
//! Networks, losses and metrics are generic over the scalar type ([`Scalar`],
//! implemented for `f32` and `f64`); the aliases below fix the common choice.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod mapping;
pub mod models;
pub mod nn;
pub mod ontology;
pub mod preprocess;
pub mod raster;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use ontology::{LabelDistribution, Level, Ontology};
pub use scalar::Scalar;

pub type MonoModel32 = models::MonoModel<f32>;
pub type MonoModel64 = models::MonoModel<f64>;
pub type TemporalModel32 = models::TemporalModel<f32>;
pub type TemporalModel64 = models::TemporalModel<f64>;
pub type Model32 = models::Model<f32>;
pub type Model64 = models::Model<f64>;
pub type Distribution32 = ontology::LabelDistribution<f32>;
pub type Distribution64 = ontology::LabelDistribution<f64>;
pub type FeatureSequence32 = models::FeatureSequence<f32>;
pub type Raster32 = raster::Raster<f32>;
