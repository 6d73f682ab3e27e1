//! Hierarchical character-level CNN for log anomaly detection.
//!
//! Raw log corpora are grouped into labeled event sequences ([`ingest`]),
//! encoded character by character and scored by a two-stage convolutional
//! network ([`model`]) built on a small reverse-mode autodiff engine
//! ([`tensor`]). [`mixer`] handles splitting and multi-project composition,
//! [`evolve`] injects sequence-level noise, and [`trainer`] runs training and
//! evaluation.
//!
//! The numeric code is generic over [`Scalar`]; the `*64` aliases below are
//! what the rest of the tooling uses.

pub mod error;
pub mod evolve;
pub mod ingest;
pub mod layers;
pub mod mixer;
pub mod model;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Model64 = model::HierCnn<f64>;
pub type Model32 = model::HierCnn<f32>;
pub type Adam64 = layers::AdamState<f64>;
