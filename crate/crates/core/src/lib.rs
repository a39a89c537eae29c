//! Entities, storage, synthetic data generation and property testers.

// Range checks written as `!(a < b)` also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod data;
pub mod error;
pub mod float_repr;
pub mod ids;
pub mod model;
pub mod num;
pub mod repo;
pub mod sample;
pub mod store;
pub mod synth;
pub mod testers;

pub use error::{CoreError, Result};
pub use num::Scalar;
pub use sample::{Outcome, PredictError, Prediction, Predictor, Sample};

/// Double-precision instantiations.
pub type Table = synth::Table<f64>;
pub type JointModel = synth::JointDistributionModel<f64>;
pub type Surrogate = synth::SurrogateTree<f64>;

/// Single-precision instantiations.
pub type Table32 = synth::Table<f32>;
pub type JointModel32 = synth::JointDistributionModel<f32>;
pub type Surrogate32 = synth::SurrogateTree<f32>;
