//! Security-related issue classification.
//!
//! The pipeline learns skip-gram word embeddings from issue and CVE text,
//! turns each document into a fixed-size embedding matrix and trains
//! convolutional text classifiers that separate security-related (SR) issues
//! from everything else.

pub mod architectures;
pub mod corpus;
pub mod embedding;
pub mod evaluator;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod trainer;
