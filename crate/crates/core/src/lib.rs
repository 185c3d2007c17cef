//! Probabilistic sentence embeddings.
//!
//! A sentence is represented by a mean vector and a diagonal covariance,
//! estimated from two sample sets: encoder outputs under Monte Carlo dropout
//! (model uncertainty) and outputs of the fixed encoder on augmented copies
//! of the sentence (data uncertainty). The two estimates are averaged.
//!
//! ```
//! use sen2pro::{embed_corpus, distance, DistanceConfig, PipelineConfig};
//!
//! let corpus = vec!["a cat sat on the mat".to_string(), "a dog ran home".to_string()];
//! let emb = embed_corpus(&corpus, &PipelineConfig::default()).unwrap();
//! let d = distance(&emb[0], &emb[1], &DistanceConfig::per_pair());
//! assert!(d.is_finite());
//! ```

pub mod analysis;
pub mod augment;
pub mod distance;
pub mod encoder;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod service;
pub mod synthetic;
pub mod theory;

pub use distance::{combine, distance, similarity_score, AlphaMode, DistanceConfig};
pub use encoder::{EncoderConfig, Pooling, ToyEncoder};
pub use error::{Error, Result};
pub use estimator::estimate;
pub use model::{
    CombinedEmbedding, ProbEmbedding, SampleMode, SampleSet, TheoryReport, UncertaintyMode,
};
pub use pipeline::{embed_corpus, PipelineConfig};
