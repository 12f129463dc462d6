use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{Category, Observation, WorldState};
use crate::error::Result;
use crate::geometry::{PointCloud, Vec3};
use crate::sampler::{JointType, KinematicChain};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkConfig {
    pub damping: f64,
    pub max_iter: usize,
    pub position_tol: f64,
    pub heading_tol: f64,
    /// Meters per radian used to weigh heading error against position.
    pub heading_weight: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            damping: 0.02,
            max_iter: 500,
            position_tol: 1e-9,
            heading_tol: 1e-9,
            heading_weight: 0.1,
        }
    }
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Damped least-squares IK for planar position plus heading, starting at
/// `seed`. Returns `None` when the target is not reached within tolerance.
pub fn solve_ik(chain: &KinematicChain, seed: &[f64], target: &Vec3, heading: f64, cfg: &IkConfig) -> Option<Vec<f64>> {
    let mut q = seed.to_vec();
    chain.clamp(&mut q);
    let w = cfg.heading_weight;
    for _ in 0..cfg.max_iter {
        let (p, jac) = chain.forward_kinematics(&q).ok()?;
        let h = chain.heading(&q).ok()?;
        let e = DVector::from_vec(vec![target.x - p.x, target.y - p.y, w * wrap(heading - h)]);
        if e[0].hypot(e[1]) < cfg.position_tol && e[2].abs() < w * cfg.heading_tol {
            return Some(q);
        }
        let mut j = DMatrix::zeros(3, chain.dof());
        for c in 0..chain.dof() {
            j[(0, c)] = jac[(0, c)];
            j[(1, c)] = jac[(1, c)];
            j[(2, c)] = if chain.joints[c].0 == JointType::Revolute { w } else { 0.0 };
        }
        let jjt = &j * j.transpose() + DMatrix::identity(3, 3) * cfg.damping.powi(2);
        let y = jjt.lu().solve(&e)?;
        let dq = j.transpose() * y;
        for (qi, d) in q.iter_mut().zip(dq.iter()) {
            *qi += d;
        }
        chain.clamp(&mut q);
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertConfig {
    /// Largest Cartesian move per approach step, meters.
    pub approach_step: f64,
    pub close_steps: usize,
    pub drawer_pull_step: f64,
    pub drawer_pull: f64,
    /// Hinge angle per door step, radians.
    pub door_pull_step: f64,
    pub door_pull: f64,
    pub hold_steps: usize,
    pub ik: IkConfig,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            approach_step: 0.03,
            close_steps: 2,
            drawer_pull_step: 0.02,
            drawer_pull: 0.20,
            door_pull_step: 0.06,
            door_pull: 0.70,
            hold_steps: 2,
            ik: IkConfig::default(),
        }
    }
}

/// One recorded step: the observation index into [`Episode::clouds`], the
/// proprioception history, and the action taken.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub cloud_index: usize,
    pub proprio: Vec<Vec<f64>>,
    pub action: Vec<f64>,
    pub joint_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub task: String,
    pub object_id: String,
    pub seed: u64,
    pub noise: String,
    pub feasible: bool,
    pub frames: Vec<Frame>,
    /// Distinct observed clouds with their canonical coordinates.
    pub clouds: Vec<(PointCloud, Vec<Vec3>)>,
    /// End-effector position at the grasp.
    pub contact: Vec3,
    /// End-effector path from the grasp to the end of the pull.
    pub trajectory: Vec<Vec3>,
    pub grasp_occurred: bool,
    pub final_joint_value: f64,
    pub success: bool,
}

impl Episode {
    pub fn observation(&self, frame: usize) -> Observation {
        let f = &self.frames[frame];
        let (cloud, canonical) = &self.clouds[f.cloud_index];
        Observation {
            cloud: cloud.clone(),
            canonical: canonical.clone(),
            proprio: f.proprio.clone(),
        }
    }
}

struct Recorder {
    episode: Episode,
    obs: Observation,
}

impl Recorder {
    fn act(&mut self, state: &mut WorldState, action: Vec<f64>) -> Result<()> {
        let same = self.episode.clouds.last().is_some_and(|(c, _)| *c == self.obs.cloud);
        if !same {
            self.episode.clouds.push((self.obs.cloud.clone(), self.obs.canonical.clone()));
        }
        self.episode.frames.push(Frame {
            cloud_index: self.episode.clouds.len() - 1,
            proprio: self.obs.proprio.clone(),
            action: action.clone(),
            joint_value: state.object.joint_value,
        });
        self.obs = state.step(&action)?;
        Ok(())
    }
}

fn inward_heading(normal: &Vec3) -> f64 {
    (-normal.y).atan2(-normal.x)
}

/// Scripted demonstration: straight-line approach to the handle solved by
/// damped least squares, gripper close, then a pull along the drawer axis
/// or the door arc. IK failure marks the episode infeasible.
pub fn scripted_expert(state: &mut WorldState, first: Observation, cfg: &ExpertConfig) -> Result<Episode> {
    let obj = state.object.clone();
    let mut rec = Recorder {
        episode: Episode {
            task: obj.category.task().to_string(),
            object_id: obj.id(),
            seed: state.seed,
            noise: String::new(),
            feasible: true,
            frames: Vec::new(),
            clouds: Vec::new(),
            contact: Vec3::zeros(),
            trajectory: Vec::new(),
            grasp_occurred: false,
            final_joint_value: obj.joint_value,
            success: false,
        },
        obs: first,
    };
    let chain = state.chain.clone();
    let mut q = state.q.clone();
    let start = state.end_effector();
    let start_heading = chain.heading(&q)?;
    let grasp = obj.handle_position();
    let grasp = Vec3::new(grasp.x, grasp.y, 0.0);
    let goal_heading = inward_heading(&obj.panel_normal());
    let n = ((grasp - start).norm() / cfg.approach_step).ceil().max(1.0) as usize;
    let turn = wrap(goal_heading - start_heading);
    let infeasible = |mut rec: Recorder, why: String| {
        log::info!("expert infeasible on {}: {why}", rec.episode.object_id);
        rec.episode.feasible = false;
        Ok(rec.episode)
    };
    for i in 1..=n {
        let f = i as f64 / n as f64;
        let p = start + (grasp - start) * f;
        match solve_ik(&chain, &q, &p, start_heading + turn * f, &cfg.ik) {
            Some(sol) => q = sol,
            None => return infeasible(rec, format!("approach waypoint {i} unreachable")),
        }
        let mut a = q.clone();
        a.push(1.0);
        rec.act(state, a)?;
    }
    for _ in 0..cfg.close_steps {
        let mut a = q.clone();
        a.push(0.0);
        rec.act(state, a)?;
    }
    let contact = state.end_effector();
    rec.episode.contact = contact;
    rec.episode.trajectory.push(contact);
    let v0 = state.object.joint_value;
    let offset = contact - state.object.handle_position();
    let (step, total) = match obj.category {
        Category::Drawer => (cfg.drawer_pull_step, cfg.drawer_pull),
        Category::Door => (cfg.door_pull_step, cfg.door_pull),
    };
    let m = (total / step).ceil() as usize;
    let mut probe = state.object.clone();
    for j in 1..=m {
        let v = v0 + (j as f64 * step).min(total);
        probe.joint_value = v;
        let rotated = match obj.category {
            Category::Drawer => offset,
            Category::Door => {
                let (s, c) = (-(v - v0)).sin_cos();
                Vec3::new(c * offset.x - s * offset.y, s * offset.x + c * offset.y, offset.z)
            }
        };
        let p = probe.handle_position() + rotated;
        let heading = inward_heading(&probe.panel_normal());
        match solve_ik(&chain, &q, &p, heading, &cfg.ik) {
            Some(sol) => q = sol,
            None => return infeasible(rec, format!("pull waypoint {j} unreachable")),
        }
        let mut a = q.clone();
        a.push(0.0);
        rec.act(state, a)?;
        rec.episode.trajectory.push(state.end_effector());
    }
    for _ in 0..cfg.hold_steps {
        let mut a = q.clone();
        a.push(0.0);
        rec.act(state, a)?;
    }
    let mut ep = rec.episode;
    ep.grasp_occurred = state.grasp_occurred;
    ep.final_joint_value = state.object.joint_value;
    ep.success = state.success();
    Ok(ep)
}
