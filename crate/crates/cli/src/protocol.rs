//! Object splits, seeding and the per-episode evaluation pipeline:
//! retrieve, transfer, sample, roll out, evaluate.

use std::fmt;
use std::str::FromStr;

use afford_core::affordance::{transfer, Affordance, AffordanceMemory, MemoryEntry};
use afford_core::descriptor::{ObjectMetadata, SyntheticProvider};
use afford_core::env::{
    derive_seed, generate_object, reset, scripted_expert, ArticulatedObject, Category, EnvConfig, Episode,
    ExpertConfig,
};
use afford_core::geometry::Vec3;
use afford_core::policy::{rollout, PolicyNetwork, RolloutConfig};
use afford_core::sampler::{GuidanceMode, NoiseSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{EvalPolicy, RunConfig};
use crate::error::CliError;

const DEMO_STREAM: u64 = 1;
const MEMORY_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 16;
const PLACEMENT_STREAM: u64 = 32;
const SAMPLER_STREAM: u64 = 48;

/// First generator seed of each object family.
const DOOR_MEMORY_BASE: u64 = 100;
const UNSEEN_DRAWER_BASE: u64 = 1000;
const UNSEEN_DOOR_BASE: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    /// Training drawers under fresh noise.
    Seen,
    /// New drawer instances with wider shape and placement variation.
    UnseenInstance,
    /// Doors; only the affordance memory has seen this category.
    UnseenCategory,
    /// Training drawers moved across a wide range of positions.
    Spatial,
}

pub const STANDARD_SPLITS: [Split; 3] = [Split::Seen, Split::UnseenInstance, Split::UnseenCategory];

impl Split {
    fn index(self) -> u64 {
        match self {
            Split::Seen => 0,
            Split::UnseenInstance => 1,
            Split::UnseenCategory => 2,
            Split::Spatial => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Seen => "seen",
            Split::UnseenInstance => "unseen_instance",
            Split::UnseenCategory => "unseen_category",
            Split::Spatial => "spatial",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "seen" => Ok(Split::Seen),
            "unseen_instance" => Ok(Split::UnseenInstance),
            "unseen_category" => Ok(Split::UnseenCategory),
            "spatial" => Ok(Split::Spatial),
            other => Err(CliError::Config(format!("unknown split `{other}`"))),
        }
    }
}

pub fn policy_env(cfg: &RunConfig) -> EnvConfig {
    EnvConfig {
        num_points: cfg.policy.num_points,
        obs_steps: cfg.policy.obs_steps,
        ..EnvConfig::default()
    }
}

/// Same scene, denser cloud: reset noise does not depend on the point
/// count, so both renders show the identical pose.
pub fn transfer_env(cfg: &RunConfig) -> EnvConfig {
    EnvConfig {
        num_points: cfg.transfer_points,
        ..policy_env(cfg)
    }
}

pub fn training_object(cfg: &RunConfig, j: usize) -> Result<ArticulatedObject, CliError> {
    Ok(generate_object(Category::Drawer, j as u64, cfg.seen_variation)?)
}

pub fn eval_object(cfg: &RunConfig, split: Split, i: usize) -> Result<ArticulatedObject, CliError> {
    Ok(match split {
        Split::Seen => training_object(cfg, i % cfg.train_objects)?,
        Split::UnseenInstance => generate_object(Category::Drawer, UNSEEN_DRAWER_BASE + i as u64, cfg.unseen_variation)?,
        Split::UnseenCategory => generate_object(Category::Door, UNSEEN_DOOR_BASE + i as u64, cfg.unseen_variation)?,
        Split::Spatial => {
            let mut obj = training_object(cfg, i % cfg.train_objects)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, PLACEMENT_STREAM), i as u64));
            let (lo, hi) = cfg.spatial_reach;
            let reach = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let b = cfg.spatial_bearing;
            let bearing = if b > 0.0 { rng.random_range(-b..b) } else { 0.0 };
            obj.place(reach, bearing, 0.0);
            obj
        }
    })
}

pub fn demo_seed(cfg: &RunConfig, d: usize) -> u64 {
    derive_seed(derive_seed(cfg.seed, DEMO_STREAM), d as u64)
}

pub fn episode_seed(cfg: &RunConfig, split: Split, i: usize) -> u64 {
    derive_seed(derive_seed(cfg.seed, EVAL_STREAM + split.index()), i as u64)
}

/// Demonstrations plus the memory built alongside them.
#[derive(Debug)]
pub struct Collection {
    pub episodes: Vec<Episode>,
    /// `(demo index, seed, object id, feasible, success)` for every attempt.
    pub attempts: Vec<(usize, u64, String, bool, bool)>,
    pub memory: AffordanceMemory,
}

fn memory_entry(cfg: &RunConfig, obj: &ArticulatedObject, seed: u64, provider: &SyntheticProvider) -> Result<Option<MemoryEntry>, CliError> {
    let (mut st, obs) = reset(obj, &cfg.noise, seed, &transfer_env(cfg))?;
    let ep = scripted_expert(&mut st, obs, &ExpertConfig::default())?;
    if !(ep.feasible && ep.success) {
        return Ok(None);
    }
    let (cloud, canonical) = ep.clouds[0].clone();
    Ok(Some(MemoryEntry::from_demo(
        &ep.task,
        &ep.object_id,
        cloud,
        ObjectMetadata { canonical },
        ep.contact,
        &ep.trajectory,
        provider,
        cfg.policy.trajectory_points,
    )?))
}

/// Drawer demos spread round-robin over the training objects, and a memory
/// holding one entry per training drawer plus the door entries.
pub fn collect(cfg: &RunConfig, provider: &SyntheticProvider) -> Result<Collection, CliError> {
    let env = policy_env(cfg);
    let mut episodes = Vec::new();
    let mut attempts = Vec::new();
    let mut first_seed: Vec<Option<u64>> = vec![None; cfg.train_objects];
    for d in 0..cfg.demos {
        let j = d % cfg.train_objects;
        let obj = training_object(cfg, j)?;
        let seed = demo_seed(cfg, d);
        let (mut st, obs) = reset(&obj, &cfg.noise, seed, &env)?;
        let mut ep = scripted_expert(&mut st, obs, &ExpertConfig::default())?;
        ep.noise = cfg.noise.name();
        attempts.push((d, seed, ep.object_id.clone(), ep.feasible, ep.success));
        if ep.feasible && ep.success {
            first_seed[j].get_or_insert(seed);
            episodes.push(ep);
        } else {
            log::warn!("demo {d} on {} skipped (feasible {}, success {})", ep.object_id, ep.feasible, ep.success);
        }
    }
    if 2 * episodes.len() < cfg.demos {
        return Err(CliError::Data(format!(
            "only {} of {} requested demonstrations succeeded",
            episodes.len(),
            cfg.demos
        )));
    }
    let mut memory = AffordanceMemory::new();
    if cfg.demos == 0 {
        return Ok(Collection { episodes, attempts, memory });
    }
    for (j, seed) in first_seed.iter().enumerate() {
        let Some(seed) = seed else {
            log::warn!("training object {j} has no successful demonstration; no memory entry");
            continue;
        };
        let obj = training_object(cfg, j)?;
        match memory_entry(cfg, &obj, *seed, provider)? {
            Some(e) => memory.push(e),
            None => return Err(CliError::Data(format!("memory demo for {} did not reproduce", obj.id()))),
        }
    }
    for j in 0..cfg.door_memory_objects {
        let obj = generate_object(Category::Door, DOOR_MEMORY_BASE + j as u64, cfg.seen_variation)?;
        let mut added = false;
        for attempt in 0..10u64 {
            let seed = derive_seed(derive_seed(cfg.seed, MEMORY_STREAM), (j as u64) << 8 | attempt);
            if let Some(e) = memory_entry(cfg, &obj, seed, provider)? {
                memory.push(e);
                added = true;
                break;
            }
        }
        if !added {
            return Err(CliError::Data(format!("no successful demonstration for memory object {}", obj.id())));
        }
    }
    Ok(Collection { episodes, attempts, memory })
}

/// An evaluation episode with its transferred affordance, computed once
/// and shared by every policy variant.
#[derive(Debug, Clone)]
pub struct PreparedEpisode {
    pub split: Split,
    pub index: usize,
    pub seed: u64,
    pub object: ArticulatedObject,
    /// Handle centre after reset noise, robot base frame.
    pub handle: Vec3,
    pub affordance: Result<Affordance, String>,
}

pub fn prepare(
    cfg: &RunConfig,
    memory: &AffordanceMemory,
    provider: &SyntheticProvider,
    split: Split,
    index: usize,
) -> Result<PreparedEpisode, CliError> {
    let object = eval_object(cfg, split, index)?;
    let seed = episode_seed(cfg, split, index);
    let (st, obs) = reset(&object, &cfg.noise, seed, &transfer_env(cfg))?;
    let meta = ObjectMetadata {
        canonical: obs.canonical.clone(),
    };
    let affordance = match transfer(memory, object.category.task(), &obs.cloud, &meta, provider, &cfg.transfer) {
        Ok(out) => Ok(out.affordance),
        Err(e) => {
            log::info!("transfer failed on {} seed {seed}: {e}", object.id());
            Err(e.to_string())
        }
    };
    Ok(PreparedEpisode {
        split,
        index,
        seed,
        handle: st.object.handle_position(),
        object,
        affordance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub split: Split,
    pub index: usize,
    pub seed: u64,
    pub task: String,
    pub object_id: String,
    pub handle: Vec3,
    pub success: bool,
    pub grasp: bool,
    pub final_joint_value: f64,
    pub steps: usize,
    pub guided_steps: usize,
    /// Empty unless the episode failed before the rollout.
    pub failure: String,
}

pub fn run_episode(
    cfg: &RunConfig,
    net: Option<&PolicyNetwork>,
    schedule: &NoiseSchedule,
    ep: &PreparedEpisode,
    mode: GuidanceMode,
) -> Result<EpisodeRecord, CliError> {
    let (mut state, obs) = reset(&ep.object, &cfg.noise, ep.seed, &policy_env(cfg))?;
    let mut rec = EpisodeRecord {
        split: ep.split,
        index: ep.index,
        seed: ep.seed,
        task: ep.object.category.task().to_string(),
        object_id: ep.object.id(),
        handle: ep.handle,
        success: false,
        grasp: false,
        final_joint_value: state.object.joint_value,
        steps: 0,
        guided_steps: 0,
        failure: String::new(),
    };
    match (cfg.eval_policy, net) {
        (EvalPolicy::Expert, _) => {
            let demo = scripted_expert(&mut state, obs, &ExpertConfig::default())?;
            rec.success = demo.success;
            rec.grasp = demo.grasp_occurred;
            rec.final_joint_value = demo.final_joint_value;
            rec.steps = demo.frames.len();
            if !demo.feasible {
                rec.failure = "expert infeasible".into();
            }
        }
        (EvalPolicy::Network, None) => return Err(CliError::Data("no policy checkpoint loaded".into())),
        (EvalPolicy::Network, Some(net)) => {
            let affordance = match &ep.affordance {
                Ok(a) => a,
                Err(e) => {
                    rec.failure = format!("transfer: {e}");
                    return Ok(rec);
                }
            };
            let rc = RolloutConfig {
                guidance: afford_core::sampler::GuidanceConfig {
                    mode,
                    ..cfg.guidance.clone()
                },
                eta: cfg.eta,
                max_steps: cfg.max_steps,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ep.seed, SAMPLER_STREAM));
            let out = rollout(net, schedule, &mut state, obs, affordance, &rc, &mut rng)?;
            rec.success = out.success;
            rec.grasp = out.grasp_occurred;
            rec.final_joint_value = out.final_joint_value;
            rec.steps = out.steps;
            rec.guided_steps = out.guidance_log.iter().filter(|r| r.gated).count();
        }
    }
    Ok(rec)
}
