use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::network::{ConditionBatch, Conditioning, PolicyConfig, PolicyNetwork};
use super::normalize::Normalizer;
use crate::affordance::{Affordance, DynamicAffordance, StaticAffordance};
use crate::env::Episode;
use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud};
use crate::nn::{clip_grad_norm, Adam, AdamConfig, Tape};
use crate::sampler::NoiseSchedule;

/// One demonstration prepared for training.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoEpisode {
    pub object_id: String,
    pub clouds: Vec<PointCloud>,
    /// `(cloud index, proprioception history)` per frame.
    pub frames: Vec<(usize, Vec<Vec<f64>>)>,
    pub actions: Vec<Vec<f64>>,
    pub affordance: Affordance,
}

/// Farthest a demonstrated contact may lie from its observed cloud.
pub const DEMO_SNAP_RADIUS: f64 = 0.05;

/// Contact snapped onto the first observed cloud, the trajectory shifted
/// with it and resampled to `points`. Transferred contacts are cloud
/// points too, so training and deployment see the same kind of input.
pub fn demo_affordance(episode: &Episode, points: usize) -> Result<Affordance> {
    let cloud = &episode
        .clouds
        .first()
        .ok_or_else(|| Error::Contract(format!("episode {} has no observations", episode.object_id)))?
        .0;
    let (idx, dist) = KdTree::new(&cloud.points).nearest(&episode.contact)?;
    if dist > DEMO_SNAP_RADIUS {
        return Err(Error::Contract(format!("episode contact is {dist:.4} m from its cloud")));
    }
    let shift = cloud.points[idx] - episode.contact;
    let shifted = episode.trajectory.iter().map(|p| p + shift).collect();
    let traj = DynamicAffordance::new(shifted)?.resample(points)?;
    Affordance::new(StaticAffordance::new(cloud.points[idx])?, traj)
}

impl DemoEpisode {
    pub fn from_episode(episode: &Episode, config: &PolicyConfig) -> Result<Self> {
        if !episode.feasible || episode.frames.is_empty() {
            return Err(Error::Contract(format!("episode {} is not a usable demonstration", episode.object_id)));
        }
        Ok(Self {
            object_id: episode.object_id.clone(),
            clouds: episode.clouds.iter().map(|(c, _)| c.clone()).collect(),
            frames: episode.frames.iter().map(|f| (f.cloud_index, f.proprio.clone())).collect(),
            actions: episode.frames.iter().map(|f| f.action.clone()).collect(),
            affordance: demo_affordance(episode, config.trajectory_points)?,
        })
    }

    /// Actions `frame .. frame + horizon`, repeating the last one past the
    /// end of the episode.
    pub fn chunk(&self, frame: usize, horizon: usize) -> Array2<f64> {
        let n = self.actions[0].len();
        let mut out = Array2::zeros((horizon, n));
        for i in 0..horizon {
            let a = &self.actions[(frame + i).min(self.actions.len() - 1)];
            for (j, v) in a.iter().enumerate() {
                out[[i, j]] = *v;
            }
        }
        out
    }

    pub fn conditioning(&self, frame: usize) -> Conditioning<'_> {
        let (ci, proprio) = &self.frames[frame];
        Conditioning {
            cloud: &self.clouds[*ci],
            proprio,
            affordance: &self.affordance,
        }
    }
}

/// Training episodes plus the action statistics computed from them alone.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub episodes: Vec<DemoEpisode>,
    pub normalizer: Normalizer,
}

impl DemoDataset {
    /// Keeps feasible episodes; fails when none remain.
    pub fn from_episodes(episodes: &[Episode], config: &PolicyConfig) -> Result<Self> {
        let mut kept = Vec::new();
        for ep in episodes {
            if !ep.feasible {
                log::info!("skipping infeasible demonstration {} seed {}", ep.object_id, ep.seed);
                continue;
            }
            kept.push(DemoEpisode::from_episode(ep, config)?);
        }
        Self::new(kept)
    }

    pub fn new(episodes: Vec<DemoEpisode>) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Contract("no demonstrations to train on".into()));
        }
        let normalizer = Normalizer::fit(episodes.iter().flat_map(|e| e.actions.iter().map(|a| a.as_slice())))?;
        Ok(Self { episodes, normalizer })
    }

    pub fn num_frames(&self) -> usize {
        self.episodes.iter().map(|e| e.frames.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Episodes drawn per optimisation step.
    pub episodes_per_batch: usize,
    /// Frames drawn from each of those episodes.
    pub frames_per_episode: usize,
    /// Independent `(k, ε)` draws per sampled frame.
    pub noise_draws: usize,
    pub adam: AdamConfig,
    pub grad_clip: Option<f64>,
    /// Anneal the learning rate to zero along a half cosine.
    pub cosine_decay: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            episodes_per_batch: 8,
            frames_per_episode: 8,
            noise_draws: 1,
            adam: AdamConfig::default(),
            grad_clip: Some(1.0),
            cosine_decay: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn batch_size(&self) -> usize {
        self.episodes_per_batch * self.frames_per_episode
    }
}

/// Mean squared noise-prediction error over a batch of clean rows `a0`,
/// each paired with a uniformly drawn level and fresh Gaussian noise.
/// `predict(a_k, timesteps)` returns the predicted noise rows.
pub fn denoising_loss(
    a0: &Array2<f64>,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
    mut predict: impl FnMut(&Array2<f64>, &[usize]) -> Result<Array2<f64>>,
) -> Result<f64> {
    let (a_k, eps, ts) = noised(a0, schedule, rng);
    let pred = predict(&a_k, &ts)?;
    if pred.dim() != eps.dim() {
        return Err(Error::Contract("predicted noise has the wrong shape".into()));
    }
    Ok((&pred - &eps).mapv(|v| v * v).mean().unwrap_or(0.0))
}

fn noised(a0: &Array2<f64>, schedule: &NoiseSchedule, rng: &mut impl Rng) -> (Array2<f64>, Array2<f64>, Vec<usize>) {
    let (b, w) = a0.dim();
    let ts: Vec<usize> = (0..b).map(|_| rng.random_range(0..schedule.train_steps())).collect();
    let eps = Array2::from_shape_simple_fn((b, w), || rng.sample::<f64, _>(StandardNormal));
    let mut a_k = Array2::zeros((b, w));
    for i in 0..b {
        let ab = schedule.alpha_bar(ts[i]);
        for j in 0..w {
            a_k[[i, j]] = ab.sqrt() * a0[[i, j]] + (1.0 - ab).sqrt() * eps[[i, j]];
        }
    }
    (a_k, eps, ts)
}

/// Behaviour cloning by noise prediction. Returns the mean loss of each
/// epoch; an epoch is `frames / batch` optimisation steps.
pub fn train(
    net: &mut PolicyNetwork,
    data: &DemoDataset,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if cfg.batch_size() == 0 || cfg.noise_draws == 0 {
        return Err(Error::Contract("batch sizes and noise draws must be positive".into()));
    }
    if schedule.train_steps() != net.config.train_steps {
        return Err(Error::Contract("schedule and network disagree on training steps".into()));
    }
    if net.normalizer != data.normalizer {
        return Err(Error::Contract("network normalizer was not fitted on this dataset".into()));
    }
    for ep in &data.episodes {
        for f in 0..ep.frames.len() {
            net.validate_conditioning(&ep.conditioning(f))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&net.store, cfg.adam);
    let steps_per_epoch = data.num_frames().div_ceil(cfg.batch_size()).max(1);
    let horizon = net.config.horizon;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut episode_order: Vec<usize> = Vec::new();
    let total_steps = (cfg.epochs * steps_per_epoch) as f64;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for step in 0..steps_per_epoch {
            if cfg.cosine_decay {
                let progress = (epoch * steps_per_epoch + step) as f64 / total_steps;
                adam.config.lr = cfg.adam.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            }
            if episode_order.len() < cfg.episodes_per_batch {
                let mut fresh: Vec<usize> = (0..data.episodes.len()).collect();
                fresh.shuffle(&mut rng);
                episode_order.extend(fresh);
            }
            let picked: Vec<usize> = episode_order.drain(..cfg.episodes_per_batch.min(episode_order.len())).collect();
            let mut batch = ConditionBatch::new();
            let mut chunks = Vec::new();
            for &e in &picked {
                let ep = &data.episodes[e];
                for _ in 0..cfg.frames_per_episode {
                    let f = rng.random_range(0..ep.frames.len());
                    for _ in 0..cfg.noise_draws {
                        batch.push(ep.conditioning(f));
                        chunks.push(data.normalizer.normalize_chunk(&ep.chunk(f, horizon))?);
                    }
                }
            }
            let a0 = PolicyNetwork::flatten_chunks(&chunks);
            let (a_k, eps, ts) = noised(&a0, schedule, &mut rng);
            let mut tape = Tape::new();
            let cond = net.encode_prepared(&mut tape, &batch)?;
            let x = tape.input(a_k);
            let pred = net.denoise(&mut tape, x, &ts, cond)?;
            let loss = tape.mse(pred, eps);
            let value = tape.value(loss)[[0, 0]];
            if !value.is_finite() {
                return Err(Error::Numerical(format!("loss became {value} at epoch {epoch}, step {step}")));
            }
            let mut grads = tape.backward(loss).for_params(&tape, &net.store);
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut grads, c);
            }
            adam.step(&mut net.store, &grads).map_err(|e| match e {
                Error::PoisonedUpdate(m) => Error::Numerical(format!("epoch {epoch}, step {step}: {m}")),
                other => other,
            })?;
            total += value;
        }
        let mean = total / steps_per_epoch as f64;
        log::info!("epoch {epoch}: loss {mean:.5}");
        curve.push(mean);
    }
    Ok(curve)
}
