//! Small dense networks with explicit reverse-mode gradients.

mod adam;
mod gaussian;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use gaussian::{
    log_one_minus_tanh_sq, sample_squashed, softplus, squashed_log_prob, GaussianAction,
    SquashedSample, LOG_STD_MAX, LOG_STD_MIN,
};
pub use mlp::{actor_head, param_count, Gradients, Mlp, OutputInit, Tape};
