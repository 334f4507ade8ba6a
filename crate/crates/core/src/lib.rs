//! Ensemble orchestration for code-vulnerability classifiers.
//!
//! Bagging (hard and soft voting), AdaBoost/SAMME, stacking with four
//! meta-learner families, and gated stacking that routes each sample to one
//! base model using code features. Base models are either the built-in
//! hashed n-gram softmax learner or external models exchanging JSONL
//! prediction files.

pub mod artifact;
pub mod codefeat;
pub mod ensembles;
pub mod ingest;
pub mod learners;
pub mod linear;
pub mod metamodels;
pub mod metrics;
pub mod prob;
pub mod seed;
pub mod synth;

pub use prob::{argmax_label, validate_prob_vector, Label, PredictionSet, ProbVector};
