//! Per-point semantic features, feature correspondence and contact-prompted
//! part segmentation.
//!
//! [`SyntheticProvider`] produces features from object-intrinsic (canonical)
//! coordinates, so two instances of a category agree wherever their canonical
//! charts agree. Real descriptor backends plug in through
//! [`DescriptorProvider`].

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::io::{format_real, parse_reals};
use crate::geometry::{estimate_normals_with_curvature, KdTree, PointCloud, Vec3};

/// One feature vector per point of an associated cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    features: Vec<Vec<f64>>,
    dim: usize,
}

impl FeatureField {
    pub fn new(features: Vec<Vec<f64>>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Contract("feature dimension must be positive".into()));
        }
        for (i, f) in features.iter().enumerate() {
            if f.len() != dim {
                return Err(Error::Contract(format!("feature {i} has dim {} != {dim}", f.len())));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract(format!("feature {i} is not finite")));
            }
        }
        Ok(Self { features, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    /// Mean feature over all points.
    pub fn pooled_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for f in &self.features {
            for (o, v) in out.iter_mut().zip(f) {
                *o += v;
            }
        }
        let n = self.features.len().max(1) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("ff {} {}\n", self.len(), self.dim);
        for f in &self.features {
            let line: Vec<String> = f.iter().map(|v| format_real(*v)).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty feature file".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 || h[0] != "ff" {
            return Err(Error::Parse(format!("bad feature header `{header}`")));
        }
        let count: usize = h[1].parse().map_err(|_| Error::Parse("bad count".into()))?;
        let dim: usize = h[2].parse().map_err(|_| Error::Parse("bad dim".into()))?;
        let mut features = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines.next().ok_or_else(|| Error::Parse("truncated feature file".into()))?;
            features.push(parse_reals(line)?);
        }
        Self::new(features, dim)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Per-object side information a provider may consume.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectMetadata {
    /// Object-intrinsic coordinates aligned with the cloud's points.
    pub canonical: Vec<Vec3>,
}

pub trait DescriptorProvider {
    /// Deterministic given `(cloud, metadata)` and the provider's own seed.
    fn compute(&self, cloud: &PointCloud, metadata: &ObjectMetadata) -> Result<FeatureField>;
}

/// Random-Fourier features of `[canonical / ℓ, w_n · normal, w_κ · curvature]`.
///
/// Cosine similarity between two such features approximates a Gaussian
/// kernel on the inputs, so matching is sharply peaked at equal canonical
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProvider {
    pub dim: usize,
    pub noise_sigma: f64,
    /// Seeds the fixed projection shared by every cloud.
    pub projection_seed: u64,
    /// Seeds the per-call perturbation.
    pub noise_seed: u64,
    pub canonical_length: f64,
    pub normal_weight: f64,
    pub curvature_weight: f64,
    pub neighbours: usize,
}

impl Default for SyntheticProvider {
    fn default() -> Self {
        Self {
            dim: 256,
            noise_sigma: 0.0,
            projection_seed: 0x5eed_f00d,
            noise_seed: 0,
            canonical_length: 0.15,
            normal_weight: 0.2,
            curvature_weight: 1.0,
            neighbours: 10,
        }
    }
}

const INPUT_DIM: usize = 7;

impl SyntheticProvider {
    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        self.noise_sigma = sigma;
        self.noise_seed = seed;
        self
    }

    fn projection(&self) -> (Vec<[f64; INPUT_DIM]>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.projection_seed);
        let w = (0..self.dim)
            .map(|_| {
                let mut row = [0.0; INPUT_DIM];
                row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                row
            })
            .collect();
        let b = (0..self.dim)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        (w, b)
    }
}

impl DescriptorProvider for SyntheticProvider {
    fn compute(&self, cloud: &PointCloud, metadata: &ObjectMetadata) -> Result<FeatureField> {
        if metadata.canonical.len() != cloud.len() {
            return Err(Error::Contract(format!(
                "{} canonical coordinates for {} points",
                metadata.canonical.len(),
                cloud.len()
            )));
        }
        if cloud.is_empty() {
            return FeatureField::new(Vec::new(), self.dim);
        }
        let k = self.neighbours.min(cloud.len().saturating_sub(1)).max(1);
        let (normals, curvature) = if cloud.len() > k {
            let (c, curv) = outward_normals(cloud, k)?;
            (c.normals.unwrap(), curv)
        } else {
            (vec![Vec3::z(); cloud.len()], vec![0.0; cloud.len()])
        };
        let (w, b) = self.projection();
        let amp = (2.0 / self.dim as f64).sqrt();
        let mut noise_rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        let features = (0..cloud.len())
            .map(|i| {
                let u = metadata.canonical[i] / self.canonical_length;
                let n = normals[i] * self.normal_weight;
                let x = [u.x, u.y, u.z, n.x, n.y, n.z, curvature[i] * self.curvature_weight];
                (0..self.dim)
                    .map(|j| {
                        let proj: f64 = w[j].iter().zip(&x).map(|(a, c)| a * c).sum();
                        let mut v = amp * (proj + b[j]).cos();
                        if self.noise_sigma > 0.0 {
                            v += self.noise_sigma * noise_rng.sample::<f64, _>(StandardNormal);
                        }
                        v
                    })
                    .collect()
            })
            .collect();
        FeatureField::new(features, self.dim)
    }
}

/// Functional form of [`SyntheticProvider`] with default weights.
pub fn synthetic_provider(
    cloud: &PointCloud,
    canonical_coords: &[Vec3],
    noise_sigma: f64,
    seed: u64,
) -> Result<FeatureField> {
    SyntheticProvider::default().with_noise(noise_sigma, seed).compute(
        cloud,
        &ObjectMetadata {
            canonical: canonical_coords.to_vec(),
        },
    )
}

/// Normals oriented away from the cloud centroid, plus curvature proxy.
pub(crate) fn outward_normals(cloud: &PointCloud, k: usize) -> Result<(PointCloud, Vec<f64>)> {
    let center = cloud.centroid();
    let (mut out, curv) = estimate_normals_with_curvature(cloud, k, &center)?;
    // Facing the centroid means pointing inward; flip all of them.
    if let Some(ns) = out.normals.as_mut() {
        ns.iter_mut().for_each(|n| *n = -*n);
    }
    Ok((out, curv))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Target point whose feature has the highest cosine similarity with the
/// source feature at `source_index`; lowest index wins ties.
pub fn correspond(
    source_field: &FeatureField,
    source_index: usize,
    target_field: &FeatureField,
) -> Result<(usize, f64)> {
    if source_field.dim() != target_field.dim() {
        return Err(Error::Contract(format!(
            "feature dims differ: {} vs {}",
            source_field.dim(),
            target_field.dim()
        )));
    }
    if source_index >= source_field.len() {
        return Err(Error::Contract(format!("source index {source_index} out of range")));
    }
    if target_field.is_empty() {
        return Err(Error::Contract("empty target field".into()));
    }
    let query = source_field.get(source_index);
    let is_zero = |f: &[f64]| f.iter().all(|v| *v == 0.0);
    if is_zero(query) {
        return Err(Error::Contract("zero-norm source feature".into()));
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (j, f) in target_field.features().iter().enumerate() {
        if is_zero(f) {
            return Err(Error::Contract(format!("zero-norm target feature {j}")));
        }
        let s = cosine(query, f);
        if s > best.1 {
            best = (j, s);
        }
    }
    Ok(best)
}

/// Region growing from the point nearest `prompt`: neighbours within
/// `radius` join while their normal stays within `normal_angle_tol_deg` of
/// the region's running mean normal, which starts as the mean normal of the
/// seed's neighbourhood. Returns the segment (input order
/// preserved, carrying the normals used for growing) and the selected
/// indices.
///
/// Clouds without normals get outward-oriented normals estimated first.
pub fn segment_part(
    cloud: &PointCloud,
    prompt: &Vec3,
    radius: f64,
    normal_angle_tol_deg: f64,
) -> Result<(PointCloud, Vec<usize>)> {
    segment_part_within(cloud, prompt, radius, normal_angle_tol_deg, f64::INFINITY)
}

/// [`segment_part`] restricted to points within `max_extent` of the seed,
/// so growth across a large flat face stays local to the prompt.
pub fn segment_part_within(
    cloud: &PointCloud,
    prompt: &Vec3,
    radius: f64,
    normal_angle_tol_deg: f64,
    max_extent: f64,
) -> Result<(PointCloud, Vec<usize>)> {
    if cloud.is_empty() {
        return Err(Error::Contract("segmentation of an empty cloud".into()));
    }
    if radius <= 0.0 || !(max_extent > 0.0) {
        return Err(Error::Contract("segmentation radius and extent must be positive".into()));
    }
    let tree = KdTree::new(&cloud.points);
    let (seed, dist) = tree.nearest(prompt)?;
    if dist > radius {
        return Err(Error::EmptySegment(format!(
            "prompt is {dist:.4} m from the cloud, beyond radius {radius}"
        )));
    }
    let normals: Vec<Vec3> = match &cloud.normals {
        Some(ns) => ns.clone(),
        None if cloud.len() > 10 => outward_normals(cloud, 10)?.0.normals.unwrap(),
        None => vec![Vec3::z(); cloud.len()],
    };
    let cos_tol = normal_angle_tol_deg.to_radians().cos();
    let mut in_region = vec![false; cloud.len()];
    in_region[seed] = true;
    // A lone seed normal is unreliable on thin parts; start from the
    // neighbourhood mean instead.
    let mut normal_sum: Vec3 = tree.within_radius(&cloud.points[seed], radius).iter().map(|&j| normals[j]).sum();
    if normal_sum.norm() < 1e-12 {
        normal_sum = normals[seed];
    }
    let mut queue = VecDeque::from([seed]);
    while let Some(i) = queue.pop_front() {
        for j in tree.within_radius(&cloud.points[i], radius) {
            if in_region[j] || (cloud.points[j] - cloud.points[seed]).norm() > max_extent {
                continue;
            }
            let mean = normal_sum / normal_sum.norm().max(1e-300);
            if normals[j].dot(&mean) >= cos_tol {
                in_region[j] = true;
                normal_sum += normals[j];
                queue.push_back(j);
            }
        }
    }
    let indices: Vec<usize> = (0..cloud.len()).filter(|&i| in_region[i]).collect();
    let segment = PointCloud::with_normals(
        indices.iter().map(|&i| cloud.points[i]).collect(),
        indices.iter().map(|&i| normals[i]).collect(),
    )?;
    Ok((segment, indices))
}
