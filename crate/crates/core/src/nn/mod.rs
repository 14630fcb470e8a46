//! A small dense network `m(x, t)` with sinusoidal time embedding, exact
//! reverse-mode gradients and an Adam optimizer.

mod adam;
mod mlp;

pub use adam::{adam_step, Adam, AdamConfig};
pub use mlp::{
    init_params, mlp_backward, mlp_forward, time_embed, Activation, Dense, Mlp, MlpArch, MlpParams,
    Tape,
};
