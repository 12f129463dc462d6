use std::collections::HashMap;

use ndarray::{Array2, Axis};

use super::normalize::Normalizer;
use crate::affordance::Affordance;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{Activation, AttentionEncoder, Dense, EncoderConfig, LayerNorm, Mlp, ParameterStore, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub horizon: usize,
    pub obs_steps: usize,
    pub action_steps: usize,
    pub num_points: usize,
    pub trajectory_points: usize,
    /// Joint targets plus the gripper command.
    pub action_dim: usize,
    /// Joint positions plus gripper state, per history step.
    pub proprio_dim: usize,
    pub point_hidden: usize,
    pub feature_dim: usize,
    pub encoder: EncoderConfig,
    pub cond_dim: usize,
    pub hidden_dim: usize,
    pub blocks: usize,
    pub time_dim: usize,
    pub train_steps: usize,
    /// Condition on the post-contact trajectory as well as the contact.
    pub use_trajectory: bool,
    /// Meters mapped to one unit for points and contacts.
    pub position_scale: f64,
    /// Meters mapped to one unit for contact-relative trajectory tokens.
    pub trajectory_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            horizon: 8,
            obs_steps: 2,
            action_steps: 4,
            num_points: 512,
            trajectory_points: 32,
            action_dim: 4,
            proprio_dim: 4,
            point_hidden: 32,
            feature_dim: 64,
            encoder: EncoderConfig::default(),
            cond_dim: 256,
            hidden_dim: 256,
            blocks: 2,
            time_dim: 64,
            train_steps: 500,
            use_trajectory: true,
            position_scale: 0.5,
            trajectory_scale: 0.2,
        }
    }
}

macro_rules! meta_fields {
    ($($f:ident),*) => {
        impl PolicyConfig {
            pub fn to_meta(&self) -> Vec<(String, String)> {
                let mut out = vec![$((stringify!($f).to_string(), self.$f.to_string())),*];
                out.push(("model_dim".into(), self.encoder.model_dim.to_string()));
                out.push(("heads".into(), self.encoder.heads.to_string()));
                out.push(("layers".into(), self.encoder.layers.to_string()));
                out.push(("ffn_dim".into(), self.encoder.ffn_dim.to_string()));
                out.push(("positional".into(), self.encoder.positional.to_string()));
                out
            }

            pub fn from_meta(meta: &[(String, String)]) -> Result<Self> {
                let map: HashMap<&str, &str> = meta.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
                fn get<T: std::str::FromStr>(map: &HashMap<&str, &str>, key: &str) -> Result<T> {
                    map.get(key)
                        .ok_or_else(|| Error::Parse(format!("checkpoint lacks `{key}`")))?
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad checkpoint value for `{key}`")))
                }
                Ok(Self {
                    $($f: get(&map, stringify!($f))?,)*
                    encoder: EncoderConfig {
                        model_dim: get(&map, "model_dim")?,
                        heads: get(&map, "heads")?,
                        layers: get(&map, "layers")?,
                        ffn_dim: get(&map, "ffn_dim")?,
                        positional: get(&map, "positional")?,
                    },
                })
            }
        }
    };
}

meta_fields!(
    horizon,
    obs_steps,
    action_steps,
    num_points,
    trajectory_points,
    action_dim,
    proprio_dim,
    point_hidden,
    feature_dim,
    cond_dim,
    hidden_dim,
    blocks,
    time_dim,
    train_steps,
    use_trajectory,
    position_scale,
    trajectory_scale
);

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.horizon,
            self.obs_steps,
            self.action_steps,
            self.num_points,
            self.action_dim,
            self.proprio_dim,
            self.point_hidden,
            self.feature_dim,
            self.cond_dim,
            self.hidden_dim,
            self.time_dim,
            self.train_steps,
        ];
        if positive.contains(&0) || self.trajectory_points < 2 {
            return Err(Error::Contract("policy sizes must be positive (trajectory_points >= 2)".into()));
        }
        if self.action_steps > self.horizon {
            return Err(Error::Contract("action_steps cannot exceed the horizon".into()));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::Contract("time_dim must be even".into()));
        }
        if !(self.position_scale > 0.0 && self.trajectory_scale > 0.0) {
            return Err(Error::Contract("scales must be positive".into()));
        }
        self.encoder.validate()
    }

    pub fn chunk_len(&self) -> usize {
        self.horizon * self.action_dim
    }
}

/// `[sin(t ω_i), cos(t ω_i)]` with `ω_i = 10000^(−i/(dim/2))`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = (-(i as f64) / half as f64 * 10000f64.ln()).exp();
        out[i] = (t as f64 * w).sin();
        out[half + i] = (t as f64 * w).cos();
    }
    out
}

/// Everything the policy conditions on for one decision.
#[derive(Debug, Clone, Copy)]
pub struct Conditioning<'a> {
    pub cloud: &'a PointCloud,
    pub proprio: &'a [Vec<f64>],
    pub affordance: &'a Affordance,
}

/// Output of [`PolicyNetwork::encode_conditions`]: the per-source features
/// and the fused vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningFeature {
    pub scene: Vec<f64>,
    pub state: Vec<f64>,
    pub contact: Vec<f64>,
    pub trajectory: Option<Vec<f64>>,
    pub fused: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Block {
    norm: LayerNorm,
    a: Dense,
    b: Dense,
}

/// Observation, state and affordance encoders feeding a residual MLP noise
/// predictor.
#[derive(Debug, Clone)]
pub struct PolicyNetwork {
    pub config: PolicyConfig,
    pub store: ParameterStore,
    pub normalizer: Normalizer,
    point: Mlp,
    proprio: Mlp,
    contact: Mlp,
    trajectory: Option<AttentionEncoder>,
    fuse: Dense,
    input: Dense,
    blocks: Vec<Block>,
    output: Dense,
}

/// A batch of conditioning inputs with shared clouds and trajectories
/// encoded once.
#[derive(Debug, Default)]
pub struct ConditionBatch<'a> {
    clouds: Vec<&'a PointCloud>,
    cloud_of: Vec<usize>,
    trajectories: Vec<&'a Affordance>,
    trajectory_of: Vec<usize>,
    proprio: Vec<f64>,
    contacts: Vec<f64>,
}

impl<'a> ConditionBatch<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.cloud_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud_of.is_empty()
    }

    /// Appends one row; clouds and affordances are deduplicated by address.
    pub fn push(&mut self, c: Conditioning<'a>) {
        let ci = match self.clouds.iter().position(|x| std::ptr::eq(*x, c.cloud)) {
            Some(i) => i,
            None => {
                self.clouds.push(c.cloud);
                self.clouds.len() - 1
            }
        };
        self.cloud_of.push(ci);
        let ti = match self.trajectories.iter().position(|x| std::ptr::eq(*x, c.affordance)) {
            Some(i) => i,
            None => {
                self.trajectories.push(c.affordance);
                self.trajectories.len() - 1
            }
        };
        self.trajectory_of.push(ti);
        for p in c.proprio {
            for (j, v) in p.iter().enumerate() {
                // The last entry is the gripper state in [0, 1].
                self.proprio.push(if j + 1 == p.len() { 2.0 * v - 1.0 } else { *v });
            }
        }
        self.contacts.extend(c.affordance.contact.contact.iter());
    }
}

impl PolicyNetwork {
    pub fn new(config: PolicyConfig, normalizer: Normalizer, seed: u64) -> Result<Self> {
        config.validate()?;
        if normalizer.dim() != config.action_dim {
            return Err(Error::Contract(format!(
                "normalizer has {} dims, actions have {}",
                normalizer.dim(),
                config.action_dim
            )));
        }
        let mut store = ParameterStore::new(seed);
        let f = config.feature_dim;
        let point = Mlp::new(&mut store, "obs.points", &[3, config.point_hidden, f], Activation::Gelu)?;
        let proprio = Mlp::new(
            &mut store,
            "obs.state",
            &[config.proprio_dim * config.obs_steps, f, f],
            Activation::Linear,
        )?;
        let contact = Mlp::new(&mut store, "aff.contact", &[3, f, f], Activation::Linear)?;
        let trajectory = if config.use_trajectory {
            Some(AttentionEncoder::new(&mut store, "aff.trajectory", 3, config.encoder)?)
        } else {
            None
        };
        let fused_in = 3 * f + trajectory.as_ref().map_or(0, |_| config.encoder.model_dim);
        let fuse = Dense::new(&mut store, "fuse", fused_in, config.cond_dim, Activation::Linear)?;
        let h = config.hidden_dim;
        let input = Dense::new(
            &mut store,
            "den.in",
            config.chunk_len() + config.time_dim + config.cond_dim,
            h,
            Activation::Gelu,
        )?;
        let blocks = (0..config.blocks)
            .map(|i| {
                Ok(Block {
                    norm: LayerNorm::new(&mut store, &format!("den.block{i}.ln"), h)?,
                    a: Dense::new(&mut store, &format!("den.block{i}.a"), h, h, Activation::Gelu)?,
                    b: Dense::new(&mut store, &format!("den.block{i}.b"), h, h, Activation::Linear)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let output = Dense::new(&mut store, "den.out", h, config.chunk_len(), Activation::Linear)?;
        Ok(Self {
            config,
            store,
            normalizer,
            point,
            proprio,
            contact,
            trajectory,
            fuse,
            input,
            blocks,
            output,
        })
    }

    fn check(&self, c: &Conditioning<'_>) -> Result<()> {
        let cfg = &self.config;
        if c.cloud.len() != cfg.num_points {
            return Err(Error::Contract(format!(
                "scene cloud has {} points, policy expects {}",
                c.cloud.len(),
                cfg.num_points
            )));
        }
        if c.proprio.len() != cfg.obs_steps || c.proprio.iter().any(|p| p.len() != cfg.proprio_dim) {
            return Err(Error::Contract(format!(
                "proprioception must be {} steps of {} values",
                cfg.obs_steps, cfg.proprio_dim
            )));
        }
        if cfg.use_trajectory && c.affordance.trajectory.len() != cfg.trajectory_points {
            return Err(Error::Contract(format!(
                "trajectory has {} points, policy expects {}",
                c.affordance.trajectory.len(),
                cfg.trajectory_points
            )));
        }
        Ok(())
    }

    /// Encodes a batch; returns the per-source features and the fused
    /// `batch × cond_dim` conditioning.
    fn encode_parts(&self, tape: &mut Tape, batch: &ConditionBatch<'_>) -> Result<(Vec<Var>, Var)> {
        let cfg = &self.config;
        let n = cfg.num_points;
        let b = batch.len();
        if b == 0 {
            return Err(Error::Contract("empty conditioning batch".into()));
        }
        let s = cfg.position_scale;
        let mut pts = Vec::with_capacity(batch.clouds.len() * n * 3);
        for c in &batch.clouds {
            for p in &c.points {
                pts.extend([p.x / s, p.y / s, p.z / s]);
            }
        }
        let x = tape.input(Array2::from_shape_vec((batch.clouds.len() * n, 3), pts).unwrap());
        let h = self.point.forward(tape, &self.store, x)?;
        let pooled = tape.segment_max(h, n);
        let scene = tape.gather_rows(pooled, &batch.cloud_of);

        let pw = cfg.proprio_dim * cfg.obs_steps;
        let x = tape.input(Array2::from_shape_vec((b, pw), batch.proprio.clone()).unwrap());
        let state = self.proprio.forward(tape, &self.store, x)?;

        let contacts: Vec<f64> = batch.contacts.iter().map(|v| v / s).collect();
        let x = tape.input(Array2::from_shape_vec((b, 3), contacts).unwrap());
        let contact = self.contact.forward(tape, &self.store, x)?;

        let mut parts = vec![scene, state, contact];
        if let Some(enc) = &self.trajectory {
            let m = cfg.trajectory_points;
            let mut tokens = Vec::with_capacity(batch.trajectories.len() * m * 3);
            for aff in &batch.trajectories {
                let c = aff.contact.contact;
                for p in aff.trajectory.points() {
                    let d = (p - c) / cfg.trajectory_scale;
                    tokens.extend([d.x, d.y, d.z]);
                }
            }
            let x = tape.input(Array2::from_shape_vec((batch.trajectories.len() * m, 3), tokens).unwrap());
            let cls = enc.encode(tape, &self.store, x, m)?;
            parts.push(tape.gather_rows(cls, &batch.trajectory_of));
        }
        let cat = tape.concat_cols(&parts);
        let fused = self.fuse.forward(tape, &self.store, cat)?;
        Ok((parts, fused))
    }

    /// Fused `batch × cond_dim` conditioning on the tape.
    pub fn encode_batch(&self, tape: &mut Tape, conds: &[Conditioning<'_>]) -> Result<Var> {
        let mut batch = ConditionBatch::new();
        for c in conds {
            self.check(c)?;
            batch.push(*c);
        }
        Ok(self.encode_parts(tape, &batch)?.1)
    }

    pub(crate) fn encode_prepared(&self, tape: &mut Tape, batch: &ConditionBatch<'_>) -> Result<Var> {
        Ok(self.encode_parts(tape, batch)?.1)
    }

    pub(crate) fn validate_conditioning(&self, c: &Conditioning<'_>) -> Result<()> {
        self.check(c)
    }

    pub fn encode_conditions(&self, c: Conditioning<'_>) -> Result<ConditioningFeature> {
        self.check(&c)?;
        let mut batch = ConditionBatch::new();
        batch.push(c);
        let mut tape = Tape::new();
        let (parts, fused) = self.encode_parts(&mut tape, &batch)?;
        let row = |v: Var| tape.value(v).row(0).to_vec();
        Ok(ConditioningFeature {
            scene: row(parts[0]),
            state: row(parts[1]),
            contact: row(parts[2]),
            trajectory: parts.get(3).map(|v| row(*v)),
            fused: row(fused),
        })
    }

    /// Noise prediction for `batch` flattened chunks `a_k` (rows) at the
    /// given training timesteps.
    pub fn denoise(&self, tape: &mut Tape, a_k: Var, timesteps: &[usize], cond: Var) -> Result<Var> {
        let cfg = &self.config;
        let (b, w) = tape.shape(a_k);
        if w != cfg.chunk_len() || timesteps.len() != b || tape.shape(cond) != (b, cfg.cond_dim) {
            return Err(Error::Contract(format!(
                "denoiser inputs disagree: chunk {b}x{w}, {} timesteps, conditioning {:?}",
                timesteps.len(),
                tape.shape(cond)
            )));
        }
        if let Some(t) = timesteps.iter().find(|&&t| t >= cfg.train_steps) {
            return Err(Error::Contract(format!("timestep {t} outside 0..{}", cfg.train_steps)));
        }
        let mut temb = Array2::zeros((b, cfg.time_dim));
        for (i, &t) in timesteps.iter().enumerate() {
            temb.row_mut(i).assign(&ndarray::Array1::from(timestep_embedding(t, cfg.time_dim)));
        }
        let temb = tape.input(temb);
        let x = tape.concat_cols(&[a_k, temb, cond]);
        let mut h = self.input.forward(tape, &self.store, x)?;
        for blk in &self.blocks {
            let z = blk.norm.forward(tape, &self.store, h);
            let z = blk.a.forward(tape, &self.store, z)?;
            let z = blk.b.forward(tape, &self.store, z)?;
            h = tape.add(h, z);
        }
        self.output.forward(tape, &self.store, h)
    }

    /// Single-chunk noise prediction on plain arrays; `a_k` is `H × n`
    /// (normalized) and `cond` the fused conditioning vector.
    pub fn predict_noise(&self, a_k: &Array2<f64>, timestep: usize, cond: &[f64]) -> Result<Array2<f64>> {
        let (eps, _) = self.predict_with_tape(a_k, timestep, cond, None)?;
        Ok(eps)
    }

    /// Prediction plus, when `v` is given, `(∂ε/∂a_k)ᵀ v`.
    pub fn predict_with_tape(
        &self,
        a_k: &Array2<f64>,
        timestep: usize,
        cond: &[f64],
        v: Option<&Array2<f64>>,
    ) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
        let cfg = &self.config;
        if a_k.dim() != (cfg.horizon, cfg.action_dim) {
            return Err(Error::Contract(format!(
                "chunk is {:?}, policy expects {}x{}",
                a_k.dim(),
                cfg.horizon,
                cfg.action_dim
            )));
        }
        if cond.len() != cfg.cond_dim {
            return Err(Error::Contract(format!("conditioning has {} values, expected {}", cond.len(), cfg.cond_dim)));
        }
        let mut tape = Tape::new();
        let flat = a_k.to_shape((1, cfg.chunk_len())).unwrap().to_owned();
        let x = tape.input(flat);
        let c = tape.input(Array2::from_shape_vec((1, cfg.cond_dim), cond.to_vec()).unwrap());
        let eps = self.denoise(&mut tape, x, &[timestep], c)?;
        let out = tape.value(eps).to_shape((cfg.horizon, cfg.action_dim)).unwrap().to_owned();
        let vjp = match v {
            None => None,
            Some(v) => {
                let col = tape.input(v.to_shape((cfg.chunk_len(), 1)).unwrap().to_owned());
                let dot = tape.matmul(eps, col);
                let grads = tape.backward(dot);
                let g = grads.wrt(x).cloned().unwrap_or_else(|| Array2::zeros((1, cfg.chunk_len())));
                Some(g.to_shape((cfg.horizon, cfg.action_dim)).unwrap().to_owned())
            }
        };
        Ok((out, vjp))
    }

    /// Stacks per-sample `H × n` chunks into `batch × (H·n)` rows.
    pub fn flatten_chunks(chunks: &[Array2<f64>]) -> Array2<f64> {
        let views: Vec<_> = chunks.iter().map(|c| c.to_shape((1, c.len())).unwrap().to_owned()).collect();
        let v: Vec<_> = views.iter().map(|a| a.view()).collect();
        ndarray::concatenate(Axis(0), &v).unwrap()
    }

    /// Writes parameters, architecture and normalization statistics.
    pub fn save(&self, dir: &std::path::Path, extra: &[(String, String)]) -> Result<()> {
        let mut meta = self.config.to_meta();
        meta.push(("normalizer".into(), self.normalizer.to_meta()));
        meta.extend(extra.iter().cloned());
        self.store.save(dir, &meta)
    }

    /// Rebuilds the network described by a checkpoint and returns any extra
    /// metadata entries.
    pub fn load(dir: &std::path::Path) -> Result<(Self, Vec<(String, String)>)> {
        let (stored, meta) = ParameterStore::load(dir)?;
        let config = PolicyConfig::from_meta(&meta)?;
        let norm = meta
            .iter()
            .find(|(k, _)| k == "normalizer")
            .ok_or_else(|| Error::Parse("checkpoint lacks normalization statistics".into()))?;
        let normalizer = Normalizer::from_meta(&norm.1)?;
        let mut net = Self::new(config, normalizer, stored.seed())?;
        net.store.load_values_from(&stored)?;
        let known: Vec<String> = net.config.to_meta().into_iter().map(|(k, _)| k).collect();
        let extra = meta
            .into_iter()
            .filter(|(k, _)| k != "normalizer" && !known.contains(k))
            .collect();
        Ok((net, extra))
    }
}
