//! A small pre-norm decoder-only transformer over the 258-symbol byte
//! vocabulary, with exact analytic gradients and a prefix-attention hook.

mod checkpoint;
mod forward;
mod gradcheck;
mod params;
mod sample;
mod train;

pub use checkpoint::{
    load_checkpoint, load_params, load_prefix, save_params, save_prefix, Checkpoint,
    CheckpointKind, FORMAT_VERSION, MAGIC,
};
pub use forward::{
    forward_logits, log_likelihood, log_likelihood_masked, loss_and_grads, mean_nll, Gradients,
    LogitsGrid, Trainable, VocabMask,
};
pub(crate) use forward::check_prefix;
pub use gradcheck::{grad_check, grad_check_with, GradCheck, FD_STEP};
pub use params::{init_params, LayerParams, LmConfig, LmParams, INIT_STD};
pub use sample::sample;
pub use train::{clip_grad_norm, train_lm, AdamW, TrainHyper};
