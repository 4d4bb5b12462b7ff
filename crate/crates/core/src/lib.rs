//! A CPU reference engine for a ResNet9-style plant leaf disease
//! classifier: tensors with reverse-mode autodiff, layers, Adam with cosine
//! annealing, a directory-per-class image pipeline, classification metrics
//! and a small application layer for training, evaluation and prediction.

pub mod app;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use error::{Error, Result};
pub use nn::{ModelSpec, ResNet9};
pub use tensor::{Rng, Tape, Tensor, Var};
