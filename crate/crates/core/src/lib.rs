//! Conditional GANs trained from label-noise-corrupted data, together with an
//! exact finite-distribution oracle for the approximation bounds that justify
//! training against a corrupted discriminator.

pub mod channel;
pub mod data;
pub mod diffcomp;
pub mod error;
pub mod experiment;
pub mod findist;
pub mod metrics;
pub mod models;
pub mod recovery;
pub mod seed;
pub mod theory;
pub mod training;

pub use channel::{ChannelAnalysis, ConfusionMatrix};
pub use error::{Error, Result};
pub use findist::{DivergenceKind, FiniteJoint};
