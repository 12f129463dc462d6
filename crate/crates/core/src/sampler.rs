//! Noise schedule, DDIM stepping, affordance guidance and the planar forward
//! kinematics behind the guidance loss.

use std::fmt::Write as _;

use nalgebra::Matrix3xX;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};

/// `horizon × action_dim` matrix of future commands.
pub type ActionChunk = Array2<f64>;

/// Diffusion schedule over `train_steps` levels plus the strided inference
/// chain used by DDIM.
///
/// Chain index 0 is the clean end (`ᾱ = 1`); chain index `k ≥ 1` is the
/// training level `timestep(k)`. Sampling walks `k = K, …, 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    timesteps: Vec<usize>,
    chain: Vec<f64>,
}

impl NoiseSchedule {
    /// Squared-cosine `ᾱ` with per-step β capped at 0.999.
    pub fn cosine(train_steps: usize, inference_steps: usize) -> Result<Self> {
        let f = |u: f64| ((u + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let mut alpha_bar = Vec::with_capacity(train_steps);
        let mut prod = 1.0;
        for t in 0..train_steps {
            let beta = (1.0 - f((t + 1) as f64 / train_steps as f64) / f(t as f64 / train_steps as f64)).min(0.999);
            prod *= 1.0 - beta;
            alpha_bar.push(prod);
        }
        Self::from_alpha_bar(alpha_bar, inference_steps)
    }

    /// Inference levels are `0, s, 2s, …` with stride `s = train / inference`.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>, inference_steps: usize) -> Result<Self> {
        let train_steps = alpha_bar.len();
        if inference_steps == 0 || inference_steps > train_steps {
            return Err(Error::Schedule(format!(
                "{inference_steps} inference steps for {train_steps} training steps"
            )));
        }
        for (t, &a) in alpha_bar.iter().enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Schedule(format!("alpha_bar[{t}] = {a} outside (0, 1]")));
            }
            if t > 0 && a >= alpha_bar[t - 1] {
                return Err(Error::Schedule(format!("alpha_bar not strictly decreasing at {t}")));
            }
        }
        let stride = train_steps / inference_steps;
        let timesteps: Vec<usize> = (0..inference_steps).map(|j| j * stride).collect();
        let mut chain = vec![1.0];
        chain.extend(timesteps.iter().map(|&t| alpha_bar[t]));
        let schedule = Self {
            alpha_bar,
            timesteps,
            chain,
        };
        for k in 1..=inference_steps {
            let s = schedule.sigma(k)?;
            let remaining = 1.0 - schedule.chain[k - 1] - s * s;
            if remaining < -1e-12 {
                return Err(Error::Schedule(format!("1 - alpha_bar - sigma^2 = {remaining} at k={k}")));
            }
        }
        Ok(schedule)
    }

    pub fn train_steps(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn inference_steps(&self) -> usize {
        self.timesteps.len()
    }

    /// `ᾱ` at training level `t`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// `ᾱ` at chain index `k` (0 is clean).
    pub fn chain_alpha(&self, k: usize) -> f64 {
        self.chain[k]
    }

    /// Training level fed to the noise predictor at chain index `k ≥ 1`.
    pub fn timestep(&self, k: usize) -> usize {
        self.timesteps[k - 1]
    }

    pub fn sigma(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.inference_steps() {
            return Err(Error::Schedule(format!("chain index {k} outside 1..={}", self.inference_steps())));
        }
        sigma_from(self.chain[k], self.chain[k - 1])
    }
}

/// `σ_k = √((1−ᾱ_{k−1})/(1−ᾱ_k)) · √(1 − ᾱ_k/ᾱ_{k−1})`.
pub fn sigma_from(alpha_k: f64, alpha_prev: f64) -> Result<f64> {
    if !(alpha_k < alpha_prev) {
        return Err(Error::Schedule(format!(
            "alpha_bar must increase towards the clean end ({alpha_k} >= {alpha_prev})"
        )));
    }
    if alpha_k <= 0.0 || alpha_prev > 1.0 {
        return Err(Error::Schedule(format!("alpha_bar pair ({alpha_k}, {alpha_prev}) outside (0, 1]")));
    }
    Ok(((1.0 - alpha_prev) / (1.0 - alpha_k)).sqrt() * (1.0 - alpha_k / alpha_prev).sqrt())
}

/// `â⁰ = (a_k − √(1−ᾱ_k) ε) / √ᾱ_k`.
pub fn estimate_clean(a_k: &ActionChunk, eps_pred: &ActionChunk, alpha_bar_k: f64) -> Result<ActionChunk> {
    if !(alpha_bar_k > 0.0 && alpha_bar_k <= 1.0) {
        return Err(Error::Contract(format!("alpha_bar {alpha_bar_k} outside (0, 1]")));
    }
    check_same_shape(a_k, eps_pred)?;
    let (sa, sn) = (alpha_bar_k.sqrt(), (1.0 - alpha_bar_k).sqrt());
    Ok((a_k - &(eps_pred * sn)) / sa)
}

/// Forward diffusion `a_k = √ᾱ a⁰ + √(1−ᾱ) ε`.
pub fn add_noise(a0: &ActionChunk, eps: &ActionChunk, alpha_bar: f64) -> ActionChunk {
    a0 * alpha_bar.sqrt() + eps * (1.0 - alpha_bar).sqrt()
}

fn check_same_shape(a: &ActionChunk, b: &ActionChunk) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!("shape {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Deterministic part of the DDIM update with stochastic scale
/// `σ = η σ_k`: `√ᾱ_{k−1} â⁰ + √(1−ᾱ_{k−1}−σ²) ε`.
pub fn ddim_mean(
    schedule: &NoiseSchedule,
    k: usize,
    a_k: &ActionChunk,
    eps_pred: &ActionChunk,
    eta: f64,
) -> Result<ActionChunk> {
    let sigma = eta * schedule.sigma(k)?;
    let (ak, ap) = (schedule.chain_alpha(k), schedule.chain_alpha(k - 1));
    let a0 = estimate_clean(a_k, eps_pred, ak)?;
    let dir = (1.0 - ap - sigma * sigma).max(0.0).sqrt();
    Ok(a0 * ap.sqrt() + eps_pred * dir)
}

fn standard_normal(shape: (usize, usize), rng: &mut impl Rng) -> ActionChunk {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

/// One DDIM update from chain index `k` to `k − 1`. Noise is drawn only when
/// `η σ_k > 0`, so deterministic stepping leaves `rng` untouched.
pub fn ddim_step(
    schedule: &NoiseSchedule,
    k: usize,
    a_k: &ActionChunk,
    eps_pred: &ActionChunk,
    eta: f64,
    rng: &mut impl Rng,
) -> Result<ActionChunk> {
    let sigma = eta * schedule.sigma(k)?;
    let mean = ddim_mean(schedule, k, a_k, eps_pred, eta)?;
    if sigma > 0.0 {
        Ok(mean + standard_normal(a_k.dim(), rng) * sigma)
    } else {
        Ok(mean)
    }
}

/// A differentiable objective on the clean-action estimate.
pub trait GuidanceLoss {
    /// Loss and gradient with respect to `â⁰`.
    fn evaluate(&self, a_hat0: &ActionChunk) -> (f64, ActionChunk);
}

impl<F: Fn(&ActionChunk) -> (f64, ActionChunk)> GuidanceLoss for F {
    fn evaluate(&self, a_hat0: &ActionChunk) -> (f64, ActionChunk) {
        self(a_hat0)
    }
}

/// Instrumentation for one sampling step.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRecord {
    pub k: usize,
    pub gated: bool,
    pub loss: f64,
    pub grad_norm: f64,
    pub displacement_norm: f64,
}

pub fn guidance_log_text(records: &[GuidanceRecord]) -> String {
    let mut out = String::from("k\tgated\tloss\tgrad_norm\tdisplacement_norm\n");
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.9e}\t{:.9e}\t{:.9e}",
            r.k, r.gated as u8, r.loss, r.grad_norm, r.displacement_norm
        );
    }
    out
}

fn norm(a: &ActionChunk) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Frozen-predictor gradient `∇_{a_k} L = ∇_{â⁰} L / √ᾱ_k`, plus the loss.
fn guidance_gradient(
    schedule: &NoiseSchedule,
    k: usize,
    a_k: &ActionChunk,
    eps_pred: &ActionChunk,
    loss_fn: &dyn GuidanceLoss,
) -> Result<(f64, ActionChunk)> {
    let ak = schedule.chain_alpha(k);
    let a0 = estimate_clean(a_k, eps_pred, ak)?;
    let (loss, grad0) = loss_fn.evaluate(&a0);
    check_same_shape(a_k, &grad0)?;
    Ok((loss, grad0 / ak.sqrt()))
}

/// DDIM step followed by `− γ ∇_{a_k} L(â⁰(a_k))`. A non-finite gradient
/// skips the correction and leaves the record ungated.
#[allow(clippy::too_many_arguments)]
pub fn guided_step_loss(
    schedule: &NoiseSchedule,
    k: usize,
    a_k: &ActionChunk,
    eps_pred: &ActionChunk,
    loss_fn: &dyn GuidanceLoss,
    gamma: f64,
    eta: f64,
    rng: &mut impl Rng,
) -> Result<(ActionChunk, GuidanceRecord)> {
    let (loss, grad) = guidance_gradient(schedule, k, a_k, eps_pred, loss_fn)?;
    loss_from_gradient(schedule, k, a_k, eps_pred, loss, grad, gamma, eta, rng)
}

#[allow(clippy::too_many_arguments)]
fn loss_from_gradient(
    schedule: &NoiseSchedule,
    k: usize,
    a_k: &ActionChunk,
    eps_pred: &ActionChunk,
    loss: f64,
    grad: ActionChunk,
    gamma: f64,
    eta: f64,
    rng: &mut impl Rng,
) -> Result<(ActionChunk, GuidanceRecord)> {
    let grad_norm = norm(&grad);
    let base = ddim_step(schedule, k, a_k, eps_pred, eta, rng)?;
    let usable = loss.is_finite() && grad_norm.is_finite();
    if !usable {
        log::warn!("guidance skipped at k={k}: non-finite loss or gradient");
    }
    let gated = usable && gamma > 0.0 && grad_norm > 0.0;
    let mut record = GuidanceRecord {
        k,
        gated,
        loss,
        grad_norm,
        displacement_norm: 0.0,
    };
    if !gated {
        return Ok((base, record));
    }
    record.displacement_norm = gamma * grad_norm;
    Ok((base - grad * gamma, record))
}

/// Guidance of fixed radius: `μ_θ − √n δ_k g/‖g‖` with `δ_k = delta_scale σ_k`
/// and `n` the number of action entries. Gradients below `min_grad_norm`
/// fall back to the ordinary DDIM step.
#[allow(clippy::too_many_arguments)]
pub fn guided_step_spherical(
    schedule: &NoiseSchedule,
    k: usize,
    a_k: &ActionChunk,
    eps_pred: &ActionChunk,
    loss_fn: &dyn GuidanceLoss,
    delta_scale: f64,
    min_grad_norm: f64,
    eta: f64,
    rng: &mut impl Rng,
) -> Result<(ActionChunk, GuidanceRecord)> {
    let (loss, grad) = guidance_gradient(schedule, k, a_k, eps_pred, loss_fn)?;
    spherical_from_gradient(schedule, k, a_k, eps_pred, loss, grad, delta_scale, min_grad_norm, eta, rng)
}

#[allow(clippy::too_many_arguments)]
fn spherical_from_gradient(
    schedule: &NoiseSchedule,
    k: usize,
    a_k: &ActionChunk,
    eps_pred: &ActionChunk,
    loss: f64,
    grad: ActionChunk,
    delta_scale: f64,
    min_grad_norm: f64,
    eta: f64,
    rng: &mut impl Rng,
) -> Result<(ActionChunk, GuidanceRecord)> {
    let grad_norm = norm(&grad);
    let mut record = GuidanceRecord {
        k,
        gated: false,
        loss,
        grad_norm,
        displacement_norm: 0.0,
    };
    if !(grad_norm.is_finite() && grad_norm >= min_grad_norm && grad_norm > 0.0) {
        return Ok((ddim_step(schedule, k, a_k, eps_pred, eta, rng)?, record));
    }
    let mu = ddim_mean(schedule, k, a_k, eps_pred, eta)?;
    let radius = (a_k.len() as f64).sqrt() * delta_scale * schedule.sigma(k)?;
    record.gated = true;
    record.displacement_norm = radius;
    Ok((mu - grad * (radius / grad_norm), record))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceMode {
    None,
    LossGuided,
    Spherical,
}

impl std::str::FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "loss" | "loss_guided" => Ok(Self::LossGuided),
            "spherical" => Ok(Self::Spherical),
            other => Err(Error::Parse(format!("unknown guidance mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::LossGuided => "loss",
            Self::Spherical => "spherical",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub gamma: f64,
    /// Activation radius of the contact loss, meters.
    pub theta: f64,
    pub delta_scale: f64,
    pub min_grad_norm: f64,
    /// Apply guidance on every `stride`-th chain index.
    pub stride: usize,
    /// Differentiate through the noise predictor instead of freezing it.
    pub full_backprop: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            mode: GuidanceMode::None,
            gamma: 0.1,
            theta: 0.1,
            delta_scale: 1.0,
            min_grad_norm: 1e-9,
            stride: 1,
            full_backprop: false,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode != GuidanceMode::None && !(self.theta > 0.0) {
            return Err(Error::Contract("guidance theta must be positive".into()));
        }
        if self.gamma < 0.0 || !(self.delta_scale > 0.0) || self.stride == 0 {
            return Err(Error::Contract("invalid guidance gamma, delta_scale or stride".into()));
        }
        Ok(())
    }
}

/// Anything that predicts diffusion noise for a fixed conditioning.
pub trait NoisePredictor {
    fn predict(&self, a_k: &ActionChunk, timestep: usize) -> Result<ActionChunk>;

    /// `(∂ε/∂a_k)ᵀ v`, needed only for full-backprop guidance.
    fn input_vjp(&self, _a_k: &ActionChunk, _timestep: usize, _v: &ActionChunk) -> Result<ActionChunk> {
        Err(Error::Contract("noise predictor does not expose input gradients".into()))
    }
}

impl<F: Fn(&ActionChunk, usize) -> Result<ActionChunk>> NoisePredictor for F {
    fn predict(&self, a_k: &ActionChunk, timestep: usize) -> Result<ActionChunk> {
        self(a_k, timestep)
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub chunk: ActionChunk,
    pub log: Vec<GuidanceRecord>,
}

/// Runs the full chain from `a^K ~ N(0, I)` of the given shape. `loss` is
/// only consulted when guidance is enabled.
pub fn sample_chain(
    predictor: &dyn NoisePredictor,
    shape: (usize, usize),
    schedule: &NoiseSchedule,
    guidance: &GuidanceConfig,
    loss: Option<&dyn GuidanceLoss>,
    eta: f64,
    rng: &mut impl Rng,
) -> Result<SampleOutput> {
    guidance.validate()?;
    let mut a = standard_normal(shape, rng);
    let mut log = Vec::with_capacity(schedule.inference_steps());
    for k in (1..=schedule.inference_steps()).rev() {
        let t = schedule.timestep(k);
        let eps = predictor.predict(&a, t).map_err(|e| Error::Stage {
            stage: format!("denoising step k={k}"),
            source: Box::new(e),
        })?;
        let active = match loss {
            Some(l) if guidance.mode != GuidanceMode::None && k % guidance.stride == 0 => Some(l),
            _ => None,
        };
        let (next, record) = match active {
            None => (
                ddim_step(schedule, k, &a, &eps, eta, rng)?,
                GuidanceRecord {
                    k,
                    gated: false,
                    loss: 0.0,
                    grad_norm: 0.0,
                    displacement_norm: 0.0,
                },
            ),
            Some(l) => {
                let (value, grad) = if guidance.full_backprop {
                    full_gradient(schedule, k, &a, &eps, t, predictor, l)?
                } else {
                    guidance_gradient(schedule, k, &a, &eps, l)?
                };
                match guidance.mode {
                    GuidanceMode::Spherical => spherical_from_gradient(
                        schedule,
                        k,
                        &a,
                        &eps,
                        value,
                        grad,
                        guidance.delta_scale,
                        guidance.min_grad_norm,
                        eta,
                        rng,
                    )?,
                    _ => loss_from_gradient(schedule, k, &a, &eps, value, grad, guidance.gamma, eta, rng)?,
                }
            }
        };
        log.push(record);
        a = next;
    }
    Ok(SampleOutput { chunk: a, log })
}

fn full_gradient(
    schedule: &NoiseSchedule,
    k: usize,
    a_k: &ActionChunk,
    eps: &ActionChunk,
    t: usize,
    predictor: &dyn NoisePredictor,
    loss_fn: &dyn GuidanceLoss,
) -> Result<(f64, ActionChunk)> {
    let ak = schedule.chain_alpha(k);
    let a0 = estimate_clean(a_k, eps, ak)?;
    let (loss, g0) = loss_fn.evaluate(&a0);
    let through_eps = predictor.input_vjp(a_k, t, &g0)?;
    Ok((loss, (g0 - through_eps * (1.0 - ak).sqrt()) / ak.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointType {
    Revolute,
    Prismatic,
}

/// Serial chain moving in the base frame's xy-plane. A revolute joint turns
/// the heading then advances by its link length; a prismatic joint advances
/// by `length + q` along the current heading.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub joints: Vec<(JointType, f64)>,
    pub limits: Vec<(f64, f64)>,
    pub base: RigidTransform,
}

impl KinematicChain {
    pub fn new(joints: Vec<(JointType, f64)>, limits: Vec<(f64, f64)>, base: RigidTransform) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Contract("kinematic chain needs at least one joint".into()));
        }
        if joints.iter().any(|&(_, l)| !(l > 0.0)) {
            return Err(Error::Contract("link lengths must be positive".into()));
        }
        if limits.len() != joints.len() || limits.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::Contract("one ordered limit pair per joint required".into()));
        }
        Ok(Self { joints, limits, base })
    }

    pub fn revolute(lengths: &[f64]) -> Result<Self> {
        Self::new(
            lengths.iter().map(|&l| (JointType::Revolute, l)).collect(),
            vec![(-std::f64::consts::PI, std::f64::consts::PI); lengths.len()],
            RigidTransform::identity(),
        )
    }

    /// The three-link arm used by the environment.
    pub fn planar_arm() -> Self {
        Self::new(
            vec![
                (JointType::Revolute, 0.35),
                (JointType::Revolute, 0.30),
                (JointType::Revolute, 0.12),
            ],
            vec![(-2.9, 2.9), (-2.9, 2.9), (-2.9, 2.9)],
            RigidTransform::identity(),
        )
        .expect("valid arm")
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn clamp(&self, q: &mut [f64]) -> bool {
        let mut clamped = false;
        for (v, &(lo, hi)) in q.iter_mut().zip(&self.limits) {
            let c = v.clamp(lo, hi);
            clamped |= c != *v;
            *v = c;
        }
        clamped
    }

    fn check(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::Contract(format!("{} joint values for a {}-dof chain", q.len(), self.dof())));
        }
        Ok(())
    }

    /// Planar heading of the last link in the base frame.
    pub fn heading(&self, q: &[f64]) -> Result<f64> {
        self.check(q)?;
        Ok(self
            .joints
            .iter()
            .zip(q)
            .filter(|((ty, _), _)| *ty == JointType::Revolute)
            .map(|(_, v)| v)
            .sum())
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Result<(Vec3, Matrix3xX<f64>)> {
        self.check(q)?;
        let mut heading = 0.0;
        let mut p = Vec3::zeros();
        // Position before each joint's link and the heading after it.
        let mut frames = Vec::with_capacity(self.dof());
        for (&(ty, len), &v) in self.joints.iter().zip(q) {
            if ty == JointType::Revolute {
                heading += v;
            }
            frames.push((p, heading));
            let reach = if ty == JointType::Prismatic { len + v } else { len };
            p += Vec3::new(heading.cos(), heading.sin(), 0.0) * reach;
        }
        let mut jac = Matrix3xX::zeros(self.dof());
        for (j, (&(ty, _), &(origin, h))) in self.joints.iter().zip(&frames).enumerate() {
            let col = match ty {
                JointType::Revolute => Vec3::z().cross(&(p - origin)),
                JointType::Prismatic => Vec3::new(h.cos(), h.sin(), 0.0),
            };
            jac.set_column(j, &self.base.rotate(&col));
        }
        Ok((self.base.apply(&p), jac))
    }
}

/// Contact loss over an action chunk whose first `dof` columns are joint
/// positions: the mean of `‖FK(q_i) − c‖` over steps closer than `theta`,
/// zero when no step qualifies or the gripper has already grasped.
pub fn adaptive_loss(
    chain: &KinematicChain,
    a_hat0: &ActionChunk,
    contact: &Vec3,
    theta: f64,
    grasped: bool,
) -> Result<(f64, ActionChunk)> {
    let dof = chain.dof();
    if a_hat0.ncols() < dof {
        return Err(Error::Contract(format!(
            "action chunk has {} columns, chain needs {dof}",
            a_hat0.ncols()
        )));
    }
    let mut grad = Array2::zeros(a_hat0.dim());
    if grasped {
        return Ok((0.0, grad));
    }
    let mut active = Vec::new();
    for (i, row) in a_hat0.rows().into_iter().enumerate() {
        let q: Vec<f64> = row.iter().take(dof).copied().collect();
        let (p, jac) = chain.forward_kinematics(&q)?;
        let diff = p - contact;
        let d = diff.norm();
        if d < theta {
            active.push((i, d, diff, jac));
        }
    }
    if active.is_empty() {
        return Ok((0.0, grad));
    }
    let m = active.len() as f64;
    let loss = active.iter().map(|a| a.1).sum::<f64>() / m;
    for (i, d, diff, jac) in active {
        if d > 0.0 {
            let g = jac.transpose() * (diff / (d * m));
            for j in 0..dof {
                grad[[i, j]] = g[j];
            }
        }
    }
    Ok((loss, grad))
}
