use ndarray::Array2;
use rand::Rng;

use super::network::{Conditioning, PolicyNetwork};
use super::normalize::Normalizer;
use crate::affordance::Affordance;
use crate::env::{Observation, WorldState};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::sampler::{
    adaptive_loss, sample_chain, ActionChunk, GuidanceConfig, GuidanceLoss, GuidanceMode, GuidanceRecord,
    KinematicChain, NoisePredictor, NoiseSchedule,
};

/// The network with its conditioning fixed for one decision; works in
/// normalized action space.
pub struct ConditionedPredictor<'a> {
    pub net: &'a PolicyNetwork,
    pub cond: Vec<f64>,
}

impl NoisePredictor for ConditionedPredictor<'_> {
    fn predict(&self, a_k: &ActionChunk, timestep: usize) -> Result<ActionChunk> {
        self.net.predict_noise(a_k, timestep, &self.cond)
    }

    fn input_vjp(&self, a_k: &ActionChunk, timestep: usize, v: &ActionChunk) -> Result<ActionChunk> {
        let (_, g) = self.net.predict_with_tape(a_k, timestep, &self.cond, Some(v))?;
        Ok(g.expect("vector was supplied"))
    }
}

/// Contact loss evaluated on denormalized joint targets, with its gradient
/// mapped back to normalized coordinates.
pub struct ContactGuidance<'a> {
    pub chain: &'a KinematicChain,
    pub normalizer: &'a Normalizer,
    pub contact: Vec3,
    pub theta: f64,
    pub grasped: bool,
}

impl ContactGuidance<'_> {
    /// The arm moves in a horizontal plane, so the contact is projected onto
    /// it before measuring distances.
    pub fn planar_contact(chain: &KinematicChain, contact: &Vec3) -> Result<Vec3> {
        let (p, _) = chain.forward_kinematics(&vec![0.0; chain.dof()])?;
        Ok(Vec3::new(contact.x, contact.y, p.z))
    }
}

impl GuidanceLoss for ContactGuidance<'_> {
    fn evaluate(&self, a_hat0: &ActionChunk) -> (f64, ActionChunk) {
        let nan = || (f64::NAN, Array2::from_elem(a_hat0.dim(), f64::NAN));
        let Ok(actions) = self.normalizer.denormalize_chunk(a_hat0) else {
            return nan();
        };
        match adaptive_loss(self.chain, &actions, &self.contact, self.theta, self.grasped) {
            Ok((loss, mut grad)) => {
                for (j, mut col) in grad.columns_mut().into_iter().enumerate() {
                    let s = self.normalizer.scale(j);
                    col.iter_mut().for_each(|g| *g *= s);
                }
                (loss, grad)
            }
            Err(_) => nan(),
        }
    }
}

/// Sampling settings for closed-loop execution.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    pub guidance: GuidanceConfig,
    pub eta: f64,
    pub max_steps: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            guidance: GuidanceConfig::default(),
            eta: 1.0,
            max_steps: 60,
        }
    }
}

/// One sampled action chunk in physical units plus the sampler log.
pub fn sample_actions(
    net: &PolicyNetwork,
    schedule: &NoiseSchedule,
    obs: &Observation,
    affordance: &Affordance,
    chain: &KinematicChain,
    cfg: &RolloutConfig,
    rng: &mut impl Rng,
) -> Result<(ActionChunk, Vec<GuidanceRecord>)> {
    if schedule.train_steps() != net.config.train_steps {
        return Err(Error::Contract("schedule and network disagree on training steps".into()));
    }
    let feature = net.encode_conditions(Conditioning {
        cloud: &obs.cloud,
        proprio: &obs.proprio,
        affordance,
    })?;
    let predictor = ConditionedPredictor {
        net,
        cond: feature.fused,
    };
    let guidance = ContactGuidance {
        chain,
        normalizer: &net.normalizer,
        contact: ContactGuidance::planar_contact(chain, &affordance.contact.contact)?,
        theta: cfg.guidance.theta,
        grasped: obs.gripper_closed(),
    };
    let loss: Option<&dyn GuidanceLoss> = match cfg.guidance.mode {
        GuidanceMode::None => None,
        _ => Some(&guidance),
    };
    let shape = (net.config.horizon, net.config.action_dim);
    let out = sample_chain(&predictor, shape, schedule, &cfg.guidance, loss, cfg.eta, rng)?;
    if out.chunk.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("sampled action chunk is not finite".into()));
    }
    Ok((net.normalizer.denormalize_chunk(&out.chunk)?, out.log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub success: bool,
    pub steps: usize,
    pub grasp_occurred: bool,
    pub final_joint_value: f64,
    pub guidance_log: Vec<GuidanceRecord>,
}

/// Receding-horizon execution: sample a chunk, run its first
/// `action_steps` rows, re-plan. Stops on success or after `max_steps`.
pub fn rollout(
    net: &PolicyNetwork,
    schedule: &NoiseSchedule,
    state: &mut WorldState,
    first: Observation,
    affordance: &Affordance,
    cfg: &RolloutConfig,
    rng: &mut impl Rng,
) -> Result<RolloutResult> {
    let mut obs = first;
    let mut log = Vec::new();
    let chain = state.chain.clone();
    while state.steps < cfg.max_steps && !state.success() {
        let (chunk, records) = sample_actions(net, schedule, &obs, affordance, &chain, cfg, rng)?;
        log.extend(records);
        for row in chunk.rows().into_iter().take(net.config.action_steps) {
            obs = state.step(row.as_slice().expect("contiguous chunk"))?;
            if state.success() || state.steps >= cfg.max_steps {
                break;
            }
        }
    }
    Ok(RolloutResult {
        success: state.success(),
        steps: state.steps,
        grasp_occurred: state.grasp_occurred,
        final_joint_value: state.object.joint_value,
        guidance_log: log,
    })
}
