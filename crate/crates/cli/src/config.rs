//! Flat `key = value` run configuration with `include <path>` directives.
//!
//! Every key has a default in [`DEFAULTS`]; files only list overrides.
//! The hash covers the fully resolved key set, so two runs with the same
//! hash used identical settings.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use afford_core::affordance::TransferConfig;
use afford_core::env::NoiseLevel;
use afford_core::nn::AdamConfig;
use afford_core::policy::{PolicyConfig, TrainConfig};
use afford_core::sampler::{GuidanceConfig, GuidanceMode};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// `(key, default, description)` for every recognised setting.
pub const DEFAULTS: &[(&str, &str, &str)] = &[
    ("seed", "0", "base seed for collection and evaluation"),
    ("noise", "easy", "noise preset: none, easy, median, hard"),
    ("noise.uniform", "false", "draw x + xi*U(-1,1) instead of the two-sided Gaussian form"),
    ("demos", "100", "drawer demonstrations to collect"),
    ("train_objects", "5", "procedural drawer instances used for demonstrations"),
    ("seen_variation", "0.5", "shape variation of training and seen-split drawers"),
    ("unseen_variation", "0.8", "shape variation of unseen-split objects"),
    ("door_memory_objects", "3", "door instances stored in the affordance memory only"),
    ("eval_episodes", "100", "episodes per evaluation split"),
    ("spatial_episodes", "200", "episodes of the spatial-generalization split"),
    ("spatial.reach_min", "0.44", "closest handle distance for spatial placements, m"),
    ("spatial.reach_max", "0.60", "farthest handle distance for spatial placements, m"),
    ("spatial.bearing", "0.5", "largest handle bearing for spatial placements, rad"),
    ("eval.policy", "network", "network or expert (scripted oracle)"),
    ("policy.horizon", "8", "action chunk length"),
    ("policy.obs_steps", "2", "proprioception history length"),
    ("policy.action_steps", "4", "chunk rows executed before re-planning"),
    ("policy.num_points", "512", "scene cloud size after cropping and downsampling"),
    ("policy.trajectory_points", "32", "resampled affordance trajectory length"),
    ("policy.point_hidden", "32", "hidden width of the per-point encoder"),
    ("policy.feature_dim", "64", "width of scene, state and contact features"),
    ("policy.model_dim", "64", "trajectory encoder width"),
    ("policy.heads", "4", "trajectory encoder attention heads"),
    ("policy.layers", "4", "trajectory encoder layers"),
    ("policy.ffn_dim", "128", "trajectory encoder feed-forward width"),
    ("policy.cond_dim", "256", "fused conditioning width"),
    ("policy.hidden_dim", "256", "noise predictor width"),
    ("policy.blocks", "2", "noise predictor residual blocks"),
    ("policy.time_dim", "64", "timestep embedding width"),
    ("policy.train_steps", "500", "diffusion training levels"),
    ("policy.position_scale", "0.5", "divisor applied to scene and contact coordinates"),
    ("policy.trajectory_scale", "0.2", "divisor applied to contact-relative trajectory tokens"),
    ("network_seed", "1", "parameter initialisation seed"),
    ("train.epochs", "60", "training epochs"),
    ("train.lr", "0.001", "Adam learning rate"),
    ("train.weight_decay", "0.000001", "decoupled weight decay"),
    ("train.episodes_per_batch", "8", "episodes per optimisation step"),
    ("train.frames_per_episode", "8", "frames drawn from each batch episode"),
    ("train.noise_draws", "1", "noise draws per sampled frame"),
    ("train.grad_clip", "1.0", "gradient norm cap, 0 disables"),
    ("train.cosine_decay", "true", "anneal the learning rate along a half cosine"),
    ("train.seed", "0", "batch and noise sampling seed"),
    ("sampler.inference_steps", "10", "DDIM steps"),
    ("sampler.eta", "1.0", "DDIM stochasticity"),
    ("guidance.mode", "spherical", "none, loss or spherical"),
    ("guidance.gamma", "0.1", "loss-guided step size"),
    ("guidance.theta", "0.1", "contact loss activation radius, m"),
    ("guidance.delta_scale", "1.0", "spherical radius as a multiple of sigma_k"),
    ("guidance.min_grad_norm", "0.000000001", "gradients below this skip guidance"),
    ("guidance.stride", "1", "guide every stride-th chain index"),
    ("guidance.full_backprop", "false", "differentiate through the noise predictor"),
    ("rollout.max_steps", "60", "environment steps per evaluation episode"),
    ("transfer.points", "2048", "cloud size used for descriptors and registration"),
    ("transfer.segment_radius", "0.06", "part region-growing radius, m"),
    ("transfer.segment_normal_tol_deg", "60", "part region-growing normal tolerance"),
    ("transfer.segment_max_extent", "0.2", "largest part point distance from the contact, m"),
    ("transfer.icp_max_iter", "60", "part ICP iterations"),
];

/// Resolved key-value settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl Default for RawConfig {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RawConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        cfg.merge_file(path, &mut seen)?;
        Ok(cfg)
    }

    pub fn parse_str(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        cfg.merge_text(text, base, "<inline>", &mut HashSet::new())?;
        Ok(cfg)
    }

    fn merge_file(&mut self, path: &Path, seen: &mut HashSet<PathBuf>) -> Result<(), CliError> {
        let canonical = path
            .canonicalize()
            .map_err(|e| CliError::Config(format!("cannot open config {}: {e}", path.display())))?;
        if !seen.insert(canonical.clone()) {
            return Err(CliError::Config(format!("config include cycle at {}", path.display())));
        }
        let text = fs::read_to_string(&canonical)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = canonical.parent().map(Path::to_path_buf).unwrap_or_default();
        self.merge_text(&text, &base, &path.display().to_string(), seen)?;
        seen.remove(&canonical);
        Ok(())
    }

    fn merge_text(&mut self, text: &str, base: &Path, name: &str, seen: &mut HashSet<PathBuf>) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("include ") {
                self.merge_file(&base.join(rest.trim()), seen)?;
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{name}:{}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| CliError::Config(format!("{name}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown key `{key}`"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[key]
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.get(key)
            .parse()
            .map_err(|_| CliError::Config(format!("invalid value `{}` for `{key}`", self.get(key))))
    }

    /// Canonical `key = value` listing.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPolicy {
    Network,
    Expert,
}

/// Typed view of a [`RawConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub raw: RawConfig,
    pub seed: u64,
    pub noise: NoiseLevel,
    pub demos: usize,
    pub train_objects: usize,
    pub seen_variation: f64,
    pub unseen_variation: f64,
    pub door_memory_objects: usize,
    pub eval_episodes: usize,
    pub spatial_episodes: usize,
    pub spatial_reach: (f64, f64),
    pub spatial_bearing: f64,
    pub eval_policy: EvalPolicy,
    pub policy: PolicyConfig,
    pub network_seed: u64,
    pub train: TrainConfig,
    pub inference_steps: usize,
    pub eta: f64,
    pub guidance: GuidanceConfig,
    pub max_steps: usize,
    pub transfer_points: usize,
    pub transfer: TransferConfig,
}

impl RunConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self, CliError> {
        let r = &raw;
        let mut noise: NoiseLevel = r.parse("noise")?;
        noise.uniform = r.parse("noise.uniform")?;
        let mut meta = Vec::new();
        for (k, _, _) in DEFAULTS {
            if let Some(name) = k.strip_prefix("policy.") {
                meta.push((name.to_string(), r.get(k).to_string()));
            }
        }
        let base = PolicyConfig::default();
        meta.extend([
            ("action_dim".into(), base.action_dim.to_string()),
            ("proprio_dim".into(), base.proprio_dim.to_string()),
            ("use_trajectory".into(), "true".into()),
            ("positional".into(), base.encoder.positional.to_string()),
        ]);
        let policy = PolicyConfig::from_meta(&meta).map_err(|e| CliError::Config(e.to_string()))?;
        policy.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let clip: f64 = r.parse("train.grad_clip")?;
        let train = TrainConfig {
            epochs: r.parse("train.epochs")?,
            episodes_per_batch: r.parse("train.episodes_per_batch")?,
            frames_per_episode: r.parse("train.frames_per_episode")?,
            noise_draws: r.parse("train.noise_draws")?,
            adam: AdamConfig {
                lr: r.parse("train.lr")?,
                weight_decay: r.parse("train.weight_decay")?,
                ..AdamConfig::default()
            },
            grad_clip: (clip > 0.0).then_some(clip),
            cosine_decay: r.parse("train.cosine_decay")?,
            seed: r.parse("train.seed")?,
        };
        let mode: GuidanceMode = r.parse("guidance.mode")?;
        let guidance = GuidanceConfig {
            mode,
            gamma: r.parse("guidance.gamma")?,
            theta: r.parse("guidance.theta")?,
            delta_scale: r.parse("guidance.delta_scale")?,
            min_grad_norm: r.parse("guidance.min_grad_norm")?,
            stride: r.parse("guidance.stride")?,
            full_backprop: r.parse("guidance.full_backprop")?,
        };
        guidance.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let mut transfer = TransferConfig {
            segment_radius: r.parse("transfer.segment_radius")?,
            segment_normal_tol_deg: r.parse("transfer.segment_normal_tol_deg")?,
            segment_max_extent: r.parse("transfer.segment_max_extent")?,
            trajectory_points: policy.trajectory_points,
            ..TransferConfig::default()
        };
        transfer.icp.max_iter = r.parse("transfer.icp_max_iter")?;
        let eval_policy = match r.get("eval.policy") {
            "network" => EvalPolicy::Network,
            "expert" => EvalPolicy::Expert,
            other => return Err(CliError::Config(format!("invalid value `{other}` for `eval.policy`"))),
        };
        let cfg = Self {
            seed: r.parse("seed")?,
            noise,
            demos: r.parse("demos")?,
            train_objects: r.parse("train_objects")?,
            seen_variation: r.parse("seen_variation")?,
            unseen_variation: r.parse("unseen_variation")?,
            door_memory_objects: r.parse("door_memory_objects")?,
            eval_episodes: r.parse("eval_episodes")?,
            spatial_episodes: r.parse("spatial_episodes")?,
            spatial_reach: (r.parse("spatial.reach_min")?, r.parse("spatial.reach_max")?),
            spatial_bearing: r.parse("spatial.bearing")?,
            eval_policy,
            policy,
            network_seed: r.parse("network_seed")?,
            train,
            inference_steps: r.parse("sampler.inference_steps")?,
            eta: r.parse("sampler.eta")?,
            guidance,
            max_steps: r.parse("rollout.max_steps")?,
            transfer_points: r.parse("transfer.points")?,
            transfer,
            raw,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.train_objects == 0 {
            return bad("train_objects must be positive");
        }
        if !(0.0..=1.0).contains(&self.seen_variation) || !(0.0..=1.0).contains(&self.unseen_variation) {
            return bad("variations must lie in [0, 1]");
        }
        if !(self.spatial_reach.0 > 0.0 && self.spatial_reach.0 <= self.spatial_reach.1) || !(self.spatial_bearing >= 0.0) {
            return bad("invalid spatial placement range");
        }
        if self.inference_steps == 0 || self.inference_steps > self.policy.train_steps {
            return bad("sampler.inference_steps must lie in 1..=policy.train_steps");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad("sampler.eta must lie in [0, 1]");
        }
        if self.transfer_points == 0 || self.max_steps == 0 {
            return bad("transfer.points and rollout.max_steps must be positive");
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        self.raw.hash()
    }
}

/// The reference file: every key at its default, with descriptions.
pub fn defaults_text() -> String {
    let mut out = String::from("# Default run configuration. Files passed to --config list overrides only.\n");
    for (k, v, doc) in DEFAULTS {
        let _ = write!(out, "\n# {doc}\n{k} = {v}\n");
    }
    out
}
