//! Training-free activation sparsity for gate-based MLP inference on CPU.
//!
//! Gate-projection rows are predicted sparse by comparing packed sign bits of
//! the weights and the input (XOR + popcount + an alpha-scaled majority test),
//! and skipped in all three projections. Exact zeros found after the gate
//! projection widen the skip set for the up and down projections.

pub mod bench;
pub mod calibration;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod mlp;
pub mod model_io;
pub mod predictor;
pub mod signpack;
pub mod sparse_linear;
pub mod tensor;

pub use error::{Error, Result};
pub use mlp::{ForwardMode, LayerTrace, MlpLayerWeights, MlpStack, TraceLevel};
pub use predictor::{AlphaSchedule, AlphaX100, SkipMask, ALPHA_NEVER_SKIP_BY_MAJORITY};
pub use signpack::{SignPackedMatrix, SignPackedVector};
pub use tensor::{ActivationThreshold, DenseMatrix, DenseVector};
