//! Contrastive sequential recommendation.
//!
//! The pipeline runs from raw interaction logs ([`corpus`]) through stochastic
//! sequence augmentation ([`augment`]), a causal Transformer user encoder
//! ([`encoder`]), next-item and contrastive objectives ([`objective`]), Adam
//! training with early stopping ([`trainer`]) to full-catalog ranking metrics
//! ([`evaluator`]). Numeric code is generic over [`Scalar`]; the aliases below
//! fix the precision.

pub mod augment;
pub mod baselines;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod objective;
pub mod scalar;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use evaluator::Scorer;
pub use scalar::Scalar;

pub type Encoder32 = encoder::Encoder<f32>;
pub type Encoder64 = encoder::Encoder<f64>;
pub type EncoderParams32 = encoder::EncoderParams<f32>;
pub type EncoderParams64 = encoder::EncoderParams<f64>;
pub type Trainer32 = trainer::Trainer<f32>;
pub type Trainer64 = trainer::Trainer<f64>;
