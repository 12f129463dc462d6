use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector6};

use super::{KdTree, PointCloud, RigidTransform, Vec3};
use crate::error::{Error, Result};

/// Settings for [`icp_point_to_plane`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpConfig {
    pub max_iter: usize,
    /// Stop once an accepted step lowers the mean squared residual by less
    /// than this amount.
    pub tol: f64,
    /// Pairs farther apart than `rejection_factor × median pair distance`
    /// are dropped from the correspondence set.
    pub rejection_factor: f64,
    /// Optional hard cap on pair distance.
    pub max_correspondence_distance: Option<f64>,
    /// A run only reports `converged` when its final residual is at or below
    /// this value (mean squared point-to-plane distance, m²).
    pub residual_threshold: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iter: 60,
            tol: 1e-14,
            rejection_factor: 3.0,
            max_correspondence_distance: None,
            residual_threshold: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    /// Maps source points onto the target.
    pub transform: RigidTransform,
    /// Mean squared point-to-plane error over `correspondences`.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Residual after each accepted iterate, starting with the initial one.
    pub history: Vec<f64>,
    /// Final `(source index, target index)` pairs.
    pub correspondences: Vec<(usize, usize)>,
}

const MIN_PAIRS: usize = 6;
const MIN_POINTS: usize = 10;

/// Rigid registration of `source` onto `target` minimising
/// `Σ [(p − T q) · n_p]²` over nearest-neighbour pairs `(p ∈ target, q ∈ source)`.
///
/// Each iteration linearises the rotation, solves the 6×6 normal equations
/// (Cholesky, eigen pseudo-inverse when ill-conditioned) and backtracks until
/// the re-associated residual does not increase.
pub fn icp_point_to_plane(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    config: &IcpConfig,
) -> Result<IcpResult> {
    let normals = target
        .normals
        .as_ref()
        .ok_or_else(|| Error::Contract("point-to-plane ICP needs target normals".into()))?;
    if source.len() < MIN_POINTS || target.len() < MIN_POINTS {
        return Err(Error::Size(format!(
            "ICP needs at least {MIN_POINTS} points per cloud (source {}, target {})",
            source.len(),
            target.len()
        )));
    }
    check_not_collinear(&target.points)?;

    let tree = KdTree::new(&target.points);
    let assoc = |t: &RigidTransform| -> (Vec<(usize, usize)>, f64) {
        let pairs = associate(&tree, &source.points, t, config);
        let res = mean_residual(&source.points, &target.points, normals, t, &pairs);
        (pairs, res)
    };

    let mut transform = *init;
    let (mut pairs, mut residual) = assoc(&transform);
    let mut history = vec![residual];
    let mut iterations = 0;
    let mut settled = false;

    if pairs.len() >= MIN_PAIRS {
        for _ in 0..config.max_iter {
            iterations += 1;
            let (jtj, jtr) = normal_equations(&source.points, &target.points, normals, &transform, &pairs);
            let xi = solve_normal_equations(&jtj, &(-jtr))?;
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..10 {
                let delta = RigidTransform::from_rotation_vector(
                    Vec3::new(xi[0], xi[1], xi[2]) * step,
                    Vec3::new(xi[3], xi[4], xi[5]) * step,
                );
                let candidate = delta.compose(&transform).orthonormalized();
                let (cand_pairs, cand_res) = assoc(&candidate);
                if cand_pairs.len() >= MIN_PAIRS && cand_res <= residual {
                    accepted = Some((candidate, cand_pairs, cand_res));
                    break;
                }
                step *= 0.5;
            }
            let Some((candidate, cand_pairs, cand_res)) = accepted else {
                settled = true;
                break;
            };
            let decrease = residual - cand_res;
            transform = candidate;
            pairs = cand_pairs;
            residual = cand_res;
            history.push(residual);
            if decrease < config.tol {
                settled = true;
                break;
            }
        }
    }
    let finished = settled || iterations == config.max_iter;
    let converged =
        pairs.len() >= MIN_PAIRS && finished && residual.is_finite() && residual <= config.residual_threshold;
    Ok(IcpResult {
        transform,
        residual,
        converged,
        iterations,
        history,
        correspondences: pairs,
    })
}

/// Mean squared point-to-plane error of `transform` over a fixed pair set.
pub fn point_to_plane_objective(
    source: &PointCloud,
    target: &PointCloud,
    transform: &RigidTransform,
    pairs: &[(usize, usize)],
) -> Result<f64> {
    let normals = target
        .normals
        .as_ref()
        .ok_or_else(|| Error::Contract("target normals required".into()))?;
    Ok(mean_residual(&source.points, &target.points, normals, transform, pairs))
}

fn check_not_collinear(points: &[Vec3]) -> Result<()> {
    let mean = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 0.0 || ev[1] <= ev[0] * 1e-12 {
        return Err(Error::Singular("target cloud is degenerate (collinear or a single point)".into()));
    }
    Ok(())
}

fn associate(
    tree: &KdTree<'_>,
    source: &[Vec3],
    transform: &RigidTransform,
    config: &IcpConfig,
) -> Vec<(usize, usize)> {
    let mut raw: Vec<(usize, usize, f64)> = source
        .iter()
        .enumerate()
        .filter_map(|(i, q)| tree.nearest(&transform.apply(q)).ok().map(|(j, d)| (i, j, d)))
        .collect();
    if raw.is_empty() {
        return Vec::new();
    }
    let mut dists: Vec<f64> = raw.iter().map(|r| r.2).collect();
    let mid = dists.len() / 2;
    dists.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let mut cutoff = (config.rejection_factor * dists[mid]).max(1e-12);
    if let Some(max_d) = config.max_correspondence_distance {
        cutoff = cutoff.min(max_d);
    }
    raw.retain(|r| r.2 <= cutoff);
    raw.into_iter().map(|(i, j, _)| (i, j)).collect()
}

fn mean_residual(
    source: &[Vec3],
    target: &[Vec3],
    normals: &[Vec3],
    transform: &RigidTransform,
    pairs: &[(usize, usize)],
) -> f64 {
    if pairs.is_empty() {
        return f64::INFINITY;
    }
    let sum: f64 = pairs
        .iter()
        .map(|&(i, j)| {
            let r = (target[j] - transform.apply(&source[i])).dot(&normals[j]);
            r * r
        })
        .sum();
    sum / pairs.len() as f64
}

fn normal_equations(
    source: &[Vec3],
    target: &[Vec3],
    normals: &[Vec3],
    transform: &RigidTransform,
    pairs: &[(usize, usize)],
) -> (Matrix6<f64>, Vector6<f64>) {
    let mut jtj = Matrix6::zeros();
    let mut jtr = Vector6::zeros();
    for &(i, j) in pairs {
        let s = transform.apply(&source[i]);
        let n = normals[j];
        // r(ξ) ≈ (s − p)·n + (s × n)·ω + n·δt
        let r = (s - target[j]).dot(&n);
        let c = s.cross(&n);
        let row = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
        jtj += row * row.transpose();
        jtr += row * r;
    }
    (jtj, jtr)
}

fn solve_normal_equations(a: &Matrix6<f64>, b: &Vector6<f64>) -> Result<Vector6<f64>> {
    let scale = a.diagonal().amax();
    if scale <= 0.0 || !scale.is_finite() {
        return Err(Error::Singular("ICP normal equations are zero".into()));
    }
    if let Some(chol) = a.cholesky() {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = (diag.min(), diag.max());
        if lo > 0.0 && (hi / lo).powi(2) < 1e10 {
            return Ok(chol.solve(b));
        }
    }
    // Ill-conditioned: minimum-norm solution on the well-determined subspace.
    let eig = SymmetricEigen::new(*a);
    let lmax = eig.eigenvalues.amax();
    let mut x = Vector6::zeros();
    for k in 0..6 {
        let l = eig.eigenvalues[k];
        if l > lmax * 1e-10 {
            let v = eig.eigenvectors.column(k);
            x += v * (v.dot(b) / l);
        }
    }
    Ok(x)
}
