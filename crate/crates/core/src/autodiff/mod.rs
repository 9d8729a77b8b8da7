//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! The layer set is closed-world: exactly the operations the retrieval
//! network needs (convolution, batch norm, ReLU, max pooling, residual
//! addition, masked MSE), each with gradient rules verified against
//! central finite differences.

pub mod adam;
pub mod check;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use check::{check_gradients, check_layer, run_suite, GradCheckReport, LayerKind};
pub use init::{conv_fan_in, kaiming_init};
pub use tape::{BnMode, BnRunning, Gradients, Tape, Var};
pub use tensor::{Element, Shape, Tensor};

pub mod init;
