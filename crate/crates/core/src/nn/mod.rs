//! Dense-network numerical core.

pub mod checkpoint;
pub mod gumbel;
pub mod loss;
pub mod mlp;
pub mod optim;

pub use checkpoint::{Bundle, Checkpoint};
pub use gumbel::{gumbel_softmax_backward, gumbel_softmax_sample, gumbel_softmax_with_noise, sample_gumbel};
pub use loss::{head_loss, loss_and_grad, Label, LossKind};
pub use mlp::{
    argmax, axpy, clip_global_norm, global_norm, heads_from_groups, softmax_in_place, Activation, GradBundle, Head,
    HeadKind, MlpPolicy, Trace,
};
pub use optim::{adam_step, soft_update, AdamState};

use crate::error::Result;
use crate::scalar::Scalar;

/// Single-sample forward pass.
pub fn mlp_forward<S: Scalar>(policy: &MlpPolicy<S>, input: &[S]) -> Result<Vec<S>> {
    policy.forward(input)
}

/// Gradients of `<upstream, output>` with respect to parameters and input.
pub fn mlp_backward<S: Scalar>(policy: &MlpPolicy<S>, input: &[S], upstream: &[S]) -> Result<GradBundle<S>> {
    policy.backward(input, upstream)
}
