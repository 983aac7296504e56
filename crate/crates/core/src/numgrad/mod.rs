//! Minimal dense numerical kernel.
//!
//! Provides row-major 2-D tensors, affine layers with activations, a small
//! reverse-mode gradient tape restricted to the op set the retrieval model
//! needs, cosine similarity/distance, and a central finite-difference
//! gradient checker.
//!
//! Everything is generic over [`Real`] so training and evaluation run in
//! single precision while gradient checks run in double precision.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckResult};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{
    cosine_distance, cosine_similarity, dense_forward, Activation, ParamId, ParamStore,
    ParamTensor, Real, Tensor2,
};
