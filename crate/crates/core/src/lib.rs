//! Adapter fine-tuning of a frozen multi-head self-attention encoder over
//! functional connectivity matrices.
//!
//! Data flow: BOLD-style recordings ([`connectome::BoldRecording`]) become
//! Pearson connectivity matrices, a trainable [`adapter::Adapter`] widens
//! each ROI row, a frozen [`encoder::Encoder`] mixes ROI tokens with
//! self-attention, and two heads ([`objectives::Heads`]) drive a joint
//! reconstruction + InfoNCE objective. Downstream diagnosis uses a linear
//! SVM over the pooled latent vector ([`classifier`]).

pub mod adapter;
pub mod checkpoint;
pub mod classifier;
pub mod connectome;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod pipeline;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
