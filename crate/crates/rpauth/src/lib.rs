//! Privacy-preserving behavioral authentication via sparse ternary random
//! projection.
//!
//! The pipeline: ingest or synthesize per-user behavioral profiles
//! ([`dataio`], [`synth`]), normalize and oversample them, project each
//! user's rows with a secret ternary matrix ([`projection`]), train a
//! softmax classifier on the projected rows and verify identity claims
//! against it ([`authsys`], [`nn`]). The remaining modules measure what an
//! adversary can get back: linear and learned profile reconstruction
//! ([`attack`]) and a KS-test-based distribution-privacy score
//! ([`privacy`]).
//!
//! All numeric code is generic over [`scalar::Scalar`] (f64 or f32); the
//! aliases below fix the common f64 instantiations, with f32 variants for
//! memory-constrained use.

pub mod attack;
pub mod authsys;
pub mod dataio;
pub mod error;
pub mod mat;
pub mod nn;
pub mod privacy;
pub mod projection;
pub mod scalar;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mat64 = mat::Mat<f64>;
pub type Profile64 = dataio::Profile<f64>;
pub type Dataset64 = dataio::Dataset<f64>;
pub type RandomMatrix64 = projection::RandomMatrix<f64>;
pub type ProjectedProfile64 = projection::ProjectedProfile<f64>;
pub type NeuralNet64 = nn::NeuralNet<f64>;
pub type PredictionVector64 = nn::PredictionVector<f64>;
pub type LabeledRows64 = authsys::LabeledRows<f64>;
pub type Enrollment64 = authsys::Enrollment<f64>;
pub type Claim64 = authsys::Claim<f64>;
pub type ClaimResult64 = authsys::ClaimResult<f64>;
pub type AttackKnowledge64 = attack::AttackKnowledge<f64>;
pub type AttackCorpus64 = attack::AttackCorpus<f64>;

pub type Mat32 = mat::Mat<f32>;
pub type Profile32 = dataio::Profile<f32>;
pub type Dataset32 = dataio::Dataset<f32>;
pub type RandomMatrix32 = projection::RandomMatrix<f32>;
pub type ProjectedProfile32 = projection::ProjectedProfile<f32>;
pub type NeuralNet32 = nn::NeuralNet<f32>;
