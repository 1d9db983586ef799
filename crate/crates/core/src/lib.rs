//! ElimiNet: a reading-comprehension model for multiple-choice questions
//! that refines its passage representation by softly eliminating options,
//! built on a small define-by-run autodiff engine.
//!
//! Pipeline: [`encoders`] (BiGRUs over embeddings) → [`interaction`]
//! (gated-attention hops and pooling) → [`elimination`] (gated
//! orthogonal/parallel decomposition against each option) → [`selection`]
//! (bilinear scores). [`model`] wires them together, [`train`] fits them.

pub mod autograd;
pub mod data;
pub mod dropout;
pub mod elimination;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod interaction;
pub mod model;
pub mod params;
pub mod selection;
pub mod tensor;
pub mod trace;
pub mod train;

pub use error::{Error, ErrorClass, Result};
pub use model::{build_model, Model, ModelConfig};
pub use tensor::Tensor;

/// Sizes the global worker pool used for evaluation and gradient
/// accumulation. Must be called before any parallel work starts.
pub fn set_thread_count(n: usize) -> std::result::Result<(), String> {
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}
