//! A small, dependency-light neural-network core in 64-bit floats.
//!
//! Provides row-major matrices, dense layers, an LSTM cell with exact
//! backpropagation through time, softmax/categorical helpers, Adam,
//! finite-difference gradient checking and a versioned checkpoint format.

pub mod adam;
pub mod categorical;
pub mod checkpoint;
pub mod dense;
pub mod gradcheck;
pub mod init;
pub mod lstm;
pub mod matrix;
pub mod params;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use dense::{Activation, DenseLayer, Mlp, MlpCache};
pub use gradcheck::{grad_check, GradCheckReport};
pub use lstm::{LstmCell, LstmState, LstmStepCache};
pub use matrix::Matrix;
pub use params::Params;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("non-finite gradient in block `{block}`")]
    NonFiniteGradient { block: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
