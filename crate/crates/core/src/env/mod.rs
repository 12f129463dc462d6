//! Kinematic testbed: a three-link planar arm with a one-dof gripper facing
//! procedurally generated drawers and doors.

mod expert;
mod objects;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use expert::{scripted_expert, solve_ik, Episode, ExpertConfig, Frame, IkConfig};
pub use objects::{generate_object, ArticulatedObject, Category, NOMINAL_REACH};

use crate::error::{Error, Result};
use crate::geometry::{farthest_point_indices, PointCloud, Vec3};
use crate::sampler::KinematicChain;

/// SplitMix64 finaliser over `base` and a stream tag.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const RENDER_STREAM: u64 = 0x7265_6e64;
const RESET_STREAM: u64 = 0x7265_7365;

/// Perturbation magnitudes ξ for the robot base position, initial joint
/// positions and object position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub robot_position: f64,
    pub robot_dof: f64,
    pub object_position: f64,
    /// Draw `x + ξ·U(−1, 1)` instead of `x + 2ξ·N(0, 1) − ξ`.
    pub uniform: bool,
}

impl NoiseLevel {
    pub const NONE: Self = Self::new(0.0, 0.0, 0.0);
    pub const EASY: Self = Self::new(0.025, 0.025, 0.01);
    pub const MEDIAN: Self = Self::new(0.05, 0.05, 0.05);
    pub const HARD: Self = Self::new(0.1, 0.1, 0.05);

    pub const fn new(robot_position: f64, robot_dof: f64, object_position: f64) -> Self {
        Self {
            robot_position,
            robot_dof,
            object_position,
            uniform: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.robot_position, self.robot_dof, self.object_position]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Contract("noise levels must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        let base = Self::new(self.robot_position, self.robot_dof, self.object_position);
        let preset = [("none", Self::NONE), ("easy", Self::EASY), ("median", Self::MEDIAN), ("hard", Self::HARD)]
            .into_iter()
            .find(|(_, p)| *p == base)
            .map(|(n, _)| n.to_string());
        preset.unwrap_or_else(|| format!("custom({},{},{})", self.robot_position, self.robot_dof, self.object_position))
    }
}

impl FromStr for NoiseLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::NONE),
            "easy" => Ok(Self::EASY),
            "median" | "medium" => Ok(Self::MEDIAN),
            "hard" => Ok(Self::HARD),
            other => Err(Error::Parse(format!("unknown noise level `{other}`"))),
        }
    }
}

impl fmt::Display for NoiseLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// One perturbed value: `x + 2ξ·n − ξ` with `n ~ N(0, 1)`, or `x + ξ·u`
/// with `u ~ U(−1, 1)` when `uniform` is set.
pub fn inject_noise(x: f64, xi: f64, uniform: bool, rng: &mut impl Rng) -> f64 {
    if xi == 0.0 {
        return x;
    }
    if uniform {
        x + xi * rng.random_range(-1.0..=1.0)
    } else {
        let n: f64 = rng.sample(StandardNormal);
        x + 2.0 * xi * n - xi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub num_points: usize,
    pub obs_steps: usize,
    pub grasp_radius: f64,
    /// Per-step joint motion limit, radians.
    pub max_joint_rate: f64,
    /// Half-size of the crop box around the robot base, meters.
    pub crop_half_extent: f64,
    pub camera: Vec3,
    pub initial_q: Vec<f64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            num_points: 512,
            obs_steps: 2,
            grasp_radius: 0.03,
            max_joint_rate: 0.15,
            crop_half_extent: 0.8,
            camera: Vec3::new(0.0, 0.0, 0.5),
            initial_q: vec![-1.2, 2.3, -1.1],
        }
    }
}

/// Scene cloud in the robot base frame plus proprioception history, oldest
/// first. Each proprioception vector is the joint positions followed by
/// the gripper opening.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub cloud: PointCloud,
    /// Canonical chart coordinates aligned with `cloud`.
    pub canonical: Vec<Vec3>,
    pub proprio: Vec<Vec<f64>>,
}

impl Observation {
    pub fn proprio_flat(&self) -> Vec<f64> {
        self.proprio.iter().flatten().copied().collect()
    }

    /// True once any history entry shows a closed gripper.
    pub fn gripper_closed(&self) -> bool {
        self.proprio.iter().any(|p| p.last().is_some_and(|&g| g < 0.5))
    }
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub chain: KinematicChain,
    pub q: Vec<f64>,
    pub gripper: f64,
    pub object: ArticulatedObject,
    pub seed: u64,
    pub config: EnvConfig,
    pub steps: usize,
    pub grasp_occurred: bool,
    /// Set whenever a joint target or initial perturbation was clipped.
    pub clamped: bool,
    history: VecDeque<Vec<f64>>,
    render_cache: Option<(f64, PointCloud, Vec<Vec3>)>,
}

/// Perturbs `object` and the arm per `noise` and returns the first
/// observation. Base-position noise is applied as the opposite shift of the
/// object, since observations live in the base frame.
pub fn reset(object: &ArticulatedObject, noise: &NoiseLevel, seed: u64, config: &EnvConfig) -> Result<(WorldState, Observation)> {
    noise.validate()?;
    let chain = KinematicChain::planar_arm();
    if config.initial_q.len() != chain.dof() {
        return Err(Error::Contract(format!("initial_q needs {} joints", chain.dof())));
    }
    if config.obs_steps == 0 || config.num_points == 0 {
        return Err(Error::Contract("obs_steps and num_points must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, RESET_STREAM));
    let base = Vec3::new(
        inject_noise(0.0, noise.robot_position, noise.uniform, &mut rng),
        inject_noise(0.0, noise.robot_position, noise.uniform, &mut rng),
        0.0,
    );
    let mut q: Vec<f64> = config
        .initial_q
        .iter()
        .map(|&x| inject_noise(x, noise.robot_dof, noise.uniform, &mut rng))
        .collect();
    let mut obj = object.clone();
    let shift = Vec3::new(
        inject_noise(0.0, noise.object_position, noise.uniform, &mut rng),
        inject_noise(0.0, noise.object_position, noise.uniform, &mut rng),
        0.0,
    );
    obj.shift(&(shift - base));
    let clamped = chain.clamp(&mut q);
    if clamped {
        log::debug!("initial joint perturbation clamped for seed {seed}");
    }
    let mut proprio = q.clone();
    proprio.push(1.0);
    let mut state = WorldState {
        chain,
        q,
        gripper: 1.0,
        object: obj,
        seed,
        config: config.clone(),
        steps: 0,
        grasp_occurred: false,
        clamped,
        history: std::iter::repeat_n(proprio, config.obs_steps).collect(),
        render_cache: None,
    };
    let obs = state.observe()?;
    Ok((state, obs))
}

impl WorldState {
    pub fn end_effector(&self) -> Vec3 {
        self.chain.forward_kinematics(&self.q).map(|(p, _)| p).unwrap_or_else(|_| Vec3::zeros())
    }

    pub fn proprio(&self) -> Vec<f64> {
        let mut p = self.q.clone();
        p.push(self.gripper);
        p
    }

    /// Grasp predicate: gripper closed and end effector within
    /// `grasp_radius` of the handle axis.
    pub fn grasping(&self) -> bool {
        self.gripper < 0.5 && self.object.distance_to_handle(&self.end_effector()) <= self.config.grasp_radius
    }

    fn render(&mut self) -> Result<(PointCloud, Vec<Vec3>)> {
        if let Some((v, cloud, canon)) = &self.render_cache {
            if *v == self.object.joint_value {
                return Ok((cloud.clone(), canon.clone()));
            }
        }
        let n = self.config.num_points;
        let seed = derive_seed(self.seed, RENDER_STREAM);
        let (points, canonical) = self.object.sample_surface(4 * n, &self.config.camera, seed)?;
        let h = self.config.crop_half_extent;
        let keep: Vec<usize> = (0..points.len()).filter(|&i| points[i].iter().all(|c| c.abs() <= h)).collect();
        let cropped = PointCloud::new(keep.iter().map(|&i| points[i]).collect());
        let idx = farthest_point_indices(&cropped, n, seed)?;
        let cloud = cropped.select(&idx);
        let canon: Vec<Vec3> = idx.iter().map(|&i| canonical[keep[i]]).collect();
        self.render_cache = Some((self.object.joint_value, cloud.clone(), canon.clone()));
        Ok((cloud, canon))
    }

    pub fn observe(&mut self) -> Result<Observation> {
        let (cloud, canonical) = self.render()?;
        Ok(Observation {
            cloud,
            canonical,
            proprio: self.history.iter().cloned().collect(),
        })
    }

    /// Applies one action row: joint targets move at most `max_joint_rate`
    /// per step, the gripper takes the clamped command, and a grasped handle
    /// follows the end-effector displacement.
    pub fn step(&mut self, action: &[f64]) -> Result<Observation> {
        let dof = self.chain.dof();
        if action.len() != dof + 1 {
            return Err(Error::Contract(format!("action has {} entries, expected {}", action.len(), dof + 1)));
        }
        let mut target: Vec<f64> = action[..dof].to_vec();
        if target.iter().any(|v| !v.is_finite()) {
            target = self.q.clone();
            self.clamped = true;
        }
        self.clamped |= self.chain.clamp(&mut target);
        let before = self.end_effector();
        let rate = self.config.max_joint_rate;
        for (q, t) in self.q.iter_mut().zip(&target) {
            *q += (t - *q).clamp(-rate, rate);
        }
        let g = action[dof];
        self.gripper = if g.is_finite() { g.clamp(0.0, 1.0) } else { self.gripper };
        let after = self.end_effector();
        if self.gripper < 0.5 && self.object.distance_to_handle(&before) <= self.config.grasp_radius {
            self.grasp_occurred = true;
            self.clamped |= self.object.follow(&(after - before));
        }
        self.steps += 1;
        self.history.pop_front();
        self.history.push_back(self.proprio());
        self.observe()
    }

    pub fn success(&self) -> bool {
        evaluate(self.object.category, self.object.joint_value, self.grasp_occurred)
    }
}

/// Drawer: opened at least 0.15 m; door: at least 30°. Both require that
/// the handle was grasped.
pub fn evaluate(category: Category, final_joint_value: f64, grasp_occurred: bool) -> bool {
    grasp_occurred && final_joint_value >= category.success_threshold() - 1e-12
}
