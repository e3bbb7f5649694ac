//! Hand-differentiated feed-forward stack: layers, optimizer, schedule and
//! finite-difference checks.

pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod sequential;
pub mod tensor;

pub use layers::{softmax_cross_entropy, BatchNorm, Dropout, Linear, Mode, Param, Silu};
pub use optim::{cosine_lr, AdamW, AdamWConfig};
pub use sequential::{build_classifier, build_encoder, Layer, Sequential};
pub use tensor::{gemm, matmul, Tensor2D, Transpose};
