//! Small reverse-mode autodiff substrate with the layers the policy needs.

mod layers;
mod optim;
mod params;
mod tape;

pub use layers::{
    attention_encode, dense_forward, sinusoidal_positions, Activation, AttentionEncoder, Dense, EncoderConfig, LayerNorm, Mlp,
};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use params::{ParamId, ParameterStore};
pub use tape::{Gradients, Tape, Var};
