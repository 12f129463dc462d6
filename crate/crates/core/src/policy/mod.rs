//! Affordance-conditioned diffusion policy: network, training, persistence
//! of demonstrations and closed-loop execution.

pub mod demo;
mod network;
mod normalize;
mod rollout;
mod train;

pub use network::{
    timestep_embedding, ConditionBatch, Conditioning, ConditioningFeature, PolicyConfig, PolicyNetwork,
};
pub use normalize::Normalizer;
pub use rollout::{rollout, sample_actions, ConditionedPredictor, ContactGuidance, RolloutConfig, RolloutResult};
pub use train::{demo_affordance, DEMO_SNAP_RADIUS, denoising_loss, train, DemoDataset, DemoEpisode, TrainConfig};
