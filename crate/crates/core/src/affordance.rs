//! Affordance memory and transfer of contact points and post-contact
//! trajectories onto new objects.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::descriptor::{correspond, segment_part_within, DescriptorProvider, FeatureField, ObjectMetadata};
use crate::error::{Error, Result, StageExt};
use crate::geometry::io::{format_real, read_point_cloud, write_point_cloud};
use nalgebra::Rotation3;

use crate::geometry::{estimate_normals, icp_point_to_plane, IcpConfig, KdTree, PointCloud, RigidTransform, Vec3};

pub const DEFAULT_MAX_STEP: f64 = 0.1;
/// Largest allowed gap between a contact and the first trajectory point.
pub const CONTACT_EPSILON: f64 = 0.02;
/// Stored contacts must lie this close to their object cloud.
pub const CONTACT_SNAP_RADIUS: f64 = 0.02;
pub const DEFAULT_TRAJECTORY_POINTS: usize = 32;

fn finite(p: &Vec3) -> bool {
    p.iter().all(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticAffordance {
    pub contact: Vec3,
}

impl StaticAffordance {
    pub fn new(contact: Vec3) -> Result<Self> {
        if !finite(&contact) {
            return Err(Error::Contract("non-finite contact point".into()));
        }
        Ok(Self { contact })
    }
}

/// Ordered post-contact end-effector path.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicAffordance {
    points: Vec<Vec3>,
}

impl DynamicAffordance {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        Self::with_max_step(points, DEFAULT_MAX_STEP)
    }

    pub fn with_max_step(points: Vec<Vec3>, max_step: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Contract(format!("trajectory needs at least 2 points, got {}", points.len())));
        }
        if !points.iter().all(finite) {
            return Err(Error::Contract("non-finite trajectory point".into()));
        }
        if let Some(i) = points.windows(2).position(|w| (w[1] - w[0]).norm() > max_step) {
            return Err(Error::Contract(format!(
                "trajectory step {i} is {:.4} m, above the {max_step} m bound",
                (points[i + 1] - points[i]).norm()
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> Vec3 {
        self.points[0]
    }

    pub fn end(&self) -> Vec3 {
        self.points[self.points.len() - 1]
    }

    /// Arc length in meters.
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// `n` points evenly spaced in arc length, keeping both endpoints.
    pub fn resample(&self, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Contract("resampling needs at least 2 points".into()));
        }
        let mut cum = vec![0.0];
        for w in self.points.windows(2) {
            cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
        }
        let total = *cum.last().unwrap();
        let mut out = Vec::with_capacity(n);
        let mut seg = 0;
        for i in 0..n {
            let s = total * i as f64 / (n - 1) as f64;
            while seg + 2 < cum.len() && cum[seg + 1] < s {
                seg += 1;
            }
            let span = cum[seg + 1] - cum[seg];
            let f = if span > 0.0 { ((s - cum[seg]) / span).clamp(0.0, 1.0) } else { 0.0 };
            out.push(self.points[seg] + (self.points[seg + 1] - self.points[seg]) * f);
        }
        out[n - 1] = self.end();
        Ok(Self { points: out })
    }
}

/// Contact point paired with the trajectory that leaves it.
#[derive(Debug, Clone, PartialEq)]
pub struct Affordance {
    pub contact: StaticAffordance,
    pub trajectory: DynamicAffordance,
}

impl Affordance {
    pub fn new(contact: StaticAffordance, trajectory: DynamicAffordance) -> Result<Self> {
        let gap = (trajectory.start() - contact.contact).norm();
        if gap > CONTACT_EPSILON {
            return Err(Error::Contract(format!(
                "trajectory starts {gap:.4} m from the contact (limit {CONTACT_EPSILON})"
            )));
        }
        Ok(Self { contact, trajectory })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let c = self.contact.contact;
        let _ = writeln!(out, "contact {} {} {}", format_real(c.x), format_real(c.y), format_real(c.z));
        let _ = writeln!(out, "traj {}", self.trajectory.len());
        for p in self.trajectory.points() {
            let _ = writeln!(out, "{} {} {}", format_real(p.x), format_real(p.y), format_real(p.z));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let bad = |what: &str| Error::Parse(format!("affordance file: {what}"));
        let parse3 = |fields: &[&str]| -> Result<Vec3> {
            if fields.len() != 3 {
                return Err(bad("expected three coordinates"));
            }
            let v: Vec<f64> = fields
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| bad(&format!("bad number `{f}`"))))
                .collect::<Result<_>>()?;
            Ok(Vec3::new(v[0], v[1], v[2]))
        };
        let head: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if head.first() != Some(&"contact") {
            return Err(bad("missing `contact` line"));
        }
        let contact = parse3(&head[1..])?;
        let traj: Vec<&str> = lines.next().ok_or_else(|| bad("missing `traj` line"))?.split_whitespace().collect();
        if traj.len() != 2 || traj[0] != "traj" {
            return Err(bad("bad `traj` line"));
        }
        let n: usize = traj[1].parse().map_err(|_| bad("bad trajectory length"))?;
        let points = lines
            .by_ref()
            .take(n)
            .map(|l| parse3(&l.split_whitespace().collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        if points.len() != n || lines.next().is_some() {
            return Err(bad(&format!("expected exactly {n} trajectory points")));
        }
        Self::new(StaticAffordance::new(contact)?, DynamicAffordance::new(points)?)
    }
}

/// `(T, Φ, z, P)`: task, affordance, appearance vector and object cloud,
/// plus the canonical coordinates a descriptor provider needs.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub task: String,
    pub object_id: String,
    pub affordance: Affordance,
    pub appearance: Vec<f64>,
    pub cloud: PointCloud,
    pub metadata: ObjectMetadata,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl MemoryEntry {
    pub fn new(
        task: &str,
        object_id: &str,
        affordance: Affordance,
        appearance: Vec<f64>,
        cloud: PointCloud,
        metadata: ObjectMetadata,
    ) -> Result<Self> {
        if task.trim().is_empty() || task.contains(char::is_whitespace) {
            return Err(Error::Contract(format!("invalid task name `{task}`")));
        }
        if !appearance.iter().all(|v| v.is_finite()) || norm(&appearance) == 0.0 {
            return Err(Error::Contract("appearance must be finite with nonzero norm".into()));
        }
        if metadata.canonical.len() != cloud.len() {
            return Err(Error::Contract("canonical coordinates do not match the cloud".into()));
        }
        Ok(Self {
            task: task.to_string(),
            object_id: object_id.to_string(),
            affordance,
            appearance,
            cloud,
            metadata,
        })
    }

    /// Builds an entry from a demonstration: the contact snaps to the
    /// nearest cloud point, the trajectory is resampled to
    /// `trajectory_points`, and the appearance is the pooled descriptor.
    #[allow(clippy::too_many_arguments)]
    pub fn from_demo(
        task: &str,
        object_id: &str,
        cloud: PointCloud,
        metadata: ObjectMetadata,
        contact: Vec3,
        trajectory: &[Vec3],
        provider: &dyn DescriptorProvider,
        trajectory_points: usize,
    ) -> Result<Self> {
        let (idx, dist) = KdTree::new(&cloud.points).nearest(&contact)?;
        if dist > CONTACT_SNAP_RADIUS {
            return Err(Error::Contract(format!("demo contact is {dist:.4} m from the object cloud")));
        }
        let traj = DynamicAffordance::new(trajectory.to_vec())?.resample(trajectory_points)?;
        let affordance = Affordance::new(StaticAffordance::new(cloud.points[idx])?, traj)?;
        let appearance = provider.compute(&cloud, &metadata)?.pooled_mean();
        Self::new(task, object_id, affordance, appearance, cloud, metadata)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffordanceMemory {
    entries: Vec<MemoryEntry>,
}

const MANIFEST: &str = "manifest.txt";

impl AffordanceMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: MemoryEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index of the `task` entry whose appearance has the highest cosine
    /// similarity with `query`; the earliest entry wins ties.
    pub fn retrieve_index(&self, task: &str, query: &[f64]) -> Result<(usize, f64)> {
        if norm(query) == 0.0 || !query.iter().all(|v| v.is_finite()) {
            return Err(Error::Contract("query appearance must be finite and nonzero".into()));
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate().filter(|(_, e)| e.task == task) {
            if e.appearance.len() != query.len() {
                return Err(Error::Contract(format!(
                    "query has dim {}, entry {} has {}",
                    query.len(),
                    e.object_id,
                    e.appearance.len()
                )));
            }
            let s = cosine(&e.appearance, query);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.ok_or_else(|| Error::NotFound(format!("no memory entry for task `{task}`")))
    }

    pub fn retrieve(&self, task: &str, query: &[f64]) -> Result<&MemoryEntry> {
        self.retrieve_index(task, query).map(|(i, _)| &self.entries[i])
    }

    /// One directory per entry plus a `<task> <dir>` manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            let name = format!("{i:03}_{}", e.object_id);
            let sub = dir.join(&name);
            fs::create_dir_all(&sub)?;
            write_point_cloud(&sub.join("cloud.pc"), &e.cloud)?;
            write_point_cloud(&sub.join("canonical.pc"), &PointCloud::new(e.metadata.canonical.clone()))?;
            fs::write(sub.join("affordance.txt"), e.affordance.to_text())?;
            let mut app = format!("appearance {}\n", e.appearance.len());
            for v in &e.appearance {
                let _ = writeln!(app, "{}", format_real(*v));
            }
            fs::write(sub.join("appearance.txt"), app)?;
            let _ = writeln!(manifest, "{} {name}", e.task);
        }
        fs::write(dir.join(MANIFEST), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(dir.join(MANIFEST))?;
        let mut memory = Self::new();
        for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [task, name] = fields[..] else {
                return Err(Error::Parse(format!("bad manifest line `{line}`")));
            };
            let sub = dir.join(name);
            let object_id = name.split_once('_').map_or(name, |(_, id)| id);
            let cloud = read_point_cloud(&sub.join("cloud.pc"))?;
            let canonical = read_point_cloud(&sub.join("canonical.pc"))?.points;
            let affordance = Affordance::from_text(&fs::read_to_string(sub.join("affordance.txt"))?)?;
            let appearance = parse_appearance(&fs::read_to_string(sub.join("appearance.txt"))?)?;
            memory.push(MemoryEntry::new(
                task,
                object_id,
                affordance,
                appearance,
                cloud,
                ObjectMetadata { canonical },
            )?);
        }
        Ok(memory)
    }
}

fn parse_appearance(text: &str) -> Result<Vec<f64>> {
    let mut tokens = text.split_whitespace();
    if tokens.next() != Some("appearance") {
        return Err(Error::Parse("appearance file lacks its header".into()));
    }
    let n: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse("bad appearance length".into()))?;
    let values: Vec<f64> = tokens
        .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad appearance value `{t}`"))))
        .collect::<Result<_>>()?;
    if values.len() != n {
        return Err(Error::Parse(format!("expected {n} appearance values, got {}", values.len())));
    }
    Ok(values)
}

fn transfer_static_with_fields(
    source: &MemoryEntry,
    source_field: &FeatureField,
    target_cloud: &PointCloud,
    target_field: &FeatureField,
) -> Result<StaticAffordance> {
    let contact = source.affordance.contact.contact;
    let (idx, dist) = KdTree::new(&source.cloud.points).nearest(&contact)?;
    if dist > CONTACT_SNAP_RADIUS {
        return Err(Error::Contract(format!("stored contact is {dist:.4} m from its cloud")));
    }
    let (j, _) = correspond(source_field, idx, target_field)?;
    StaticAffordance::new(target_cloud.points[j])
}

/// Moves the stored contact onto `target_cloud` by descriptor matching.
pub fn transfer_static(
    source: &MemoryEntry,
    target_cloud: &PointCloud,
    target_metadata: &ObjectMetadata,
    provider: &dyn DescriptorProvider,
) -> Result<StaticAffordance> {
    let fs = provider.compute(&source.cloud, &source.metadata)?;
    let ft = provider.compute(target_cloud, target_metadata)?;
    transfer_static_with_fields(source, &fs, target_cloud, &ft)
}

pub fn estimate_translation(c_source: &StaticAffordance, c_target: &StaticAffordance) -> Vec3 {
    c_target.contact - c_source.contact
}

const PART_NORMAL_NEIGHBOURS: usize = 10;
const PART_TURNS: usize = 36;
/// Fraction of nearest-neighbour distances kept when scoring a fit, so
/// border regions present in only one part do not decide the rotation.
const SCORE_KEEP: f64 = 0.8;

fn trimmed_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = ((v.len() as f64 * SCORE_KEEP).ceil() as usize).clamp(1, v.len());
    v[..n].iter().sum::<f64>() / n as f64
}

/// Rotation taking the source part onto the target part, from
/// point-to-plane ICP after each part is centered on its contact.
///
/// Point-to-plane error cannot see rotation within a flat face, so ICP
/// runs from several starts: the identity, and the rotation aligning the
/// parts' mean normals followed by a 10 degree grid of turns about that normal, refined in
/// 1 degree steps around the best turn. The fit with the smallest trimmed two-way point-to-point distance
/// wins. The ICP
/// translation is discarded.
pub fn estimate_rotation(
    source_part: &PointCloud,
    target_part: &PointCloud,
    c_source: &StaticAffordance,
    c_target: &StaticAffordance,
    config: &IcpConfig,
) -> Result<RigidTransform> {
    if source_part.len() < 10 || target_part.len() < 10 {
        return Err(Error::Size(format!(
            "part registration needs 10 points per part (source {}, target {})",
            source_part.len(),
            target_part.len()
        )));
    }
    let src = source_part.translated(&-c_source.contact);
    let mut tgt = target_part.translated(&-c_target.contact);
    if !tgt.has_normals() {
        // Orientation does not matter for point-to-plane residuals.
        tgt = estimate_normals(&tgt, PART_NORMAL_NEIGHBOURS, &Vec3::zeros())?;
    }
    let tree = KdTree::new(&tgt.points);
    let fit_from = |start: &RigidTransform| -> Result<(f64, RigidTransform)> {
        let fit = icp_point_to_plane(&src, &tgt, start, config)?;
        let moved: Vec<Vec3> = src.points.iter().map(|p| fit.transform.apply(p)).collect();
        let back = KdTree::new(&moved);
        let mut forward = Vec::with_capacity(moved.len());
        for p in &moved {
            forward.push(tree.nearest(p)?.1.powi(2));
        }
        let mut reverse = Vec::with_capacity(tgt.len());
        for q in &tgt.points {
            reverse.push(back.nearest(q)?.1.powi(2));
        }
        Ok((trimmed_mean(forward) + trimmed_mean(reverse), fit.transform))
    };
    let mut best = fit_from(&RigidTransform::identity())?;
    if let (Some(ns), Some(nt)) = (&src.normals, &tgt.normals) {
        let (ms, mt): (Vec3, Vec3) = (ns.iter().sum(), nt.iter().sum());
        if let (true, Some(align)) = (ms.norm() > 1e-9 && mt.norm() > 1e-9, Rotation3::rotation_between(&ms, &mt)) {
            let axis = nalgebra::Unit::new_normalize(mt);
            let turned = |deg: f64| RigidTransform::rotation_only(*(Rotation3::from_axis_angle(&axis, deg.to_radians()) * align).matrix());
            let mut coarse: Option<(f64, f64, RigidTransform)> = None;
            for i in 0..PART_TURNS {
                let deg = i as f64 * 360.0 / PART_TURNS as f64;
                let (score, t) = fit_from(&turned(deg))?;
                if coarse.as_ref().is_none_or(|c| score < c.0) {
                    coarse = Some((score, deg, t));
                }
            }
            let (mut score, deg, mut t) = coarse.expect("at least one turn");
            let step = 360.0 / PART_TURNS as f64;
            for d in 1..(step as i64) {
                for sign in [-1.0, 1.0] {
                    let cand = fit_from(&turned(deg + sign * d as f64))?;
                    if cand.0 < score {
                        (score, t) = cand;
                    }
                }
            }
            if score < best.0 {
                best = (score, t);
            }
        }
    }
    let (_, transform) = best;
    Ok(RigidTransform::rotation_only(transform.rotation))
}

/// `τ_i ↦ R(τ_i − c_s) + c_s + t`.
pub fn transfer_dynamic(
    source: &DynamicAffordance,
    rotation: &RigidTransform,
    translation: &Vec3,
    c_source: &StaticAffordance,
) -> DynamicAffordance {
    let c = c_source.contact;
    DynamicAffordance {
        points: source.points.iter().map(|p| rotation.rotate(&(p - c)) + c + translation).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    /// Neighbourhood radius for part region growing, meters.
    pub segment_radius: f64,
    pub segment_normal_tol_deg: f64,
    /// Largest distance of a part point from the contact, meters.
    pub segment_max_extent: f64,
    pub icp: IcpConfig,
    pub trajectory_points: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            segment_radius: 0.06,
            segment_normal_tol_deg: 60.0,
            segment_max_extent: 0.2,
            icp: IcpConfig::default(),
            trajectory_points: DEFAULT_TRAJECTORY_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome {
    pub affordance: Affordance,
    /// Position of the retrieved entry in the memory.
    pub source_index: usize,
    pub similarity: f64,
    pub rotation: RigidTransform,
    pub translation: Vec3,
    pub source_part_size: usize,
    pub target_part_size: usize,
}

/// Retrieval, contact matching, part segmentation on both clouds, part
/// registration and trajectory mapping. Errors carry the failing stage.
pub fn transfer(
    memory: &AffordanceMemory,
    task: &str,
    target_cloud: &PointCloud,
    target_metadata: &ObjectMetadata,
    provider: &dyn DescriptorProvider,
    config: &TransferConfig,
) -> Result<TransferOutcome> {
    let ft = provider.compute(target_cloud, target_metadata).stage("target descriptors")?;
    let (source_index, similarity) = memory.retrieve_index(task, &ft.pooled_mean()).stage("retrieve")?;
    let source = &memory.entries[source_index];
    let fs = provider.compute(&source.cloud, &source.metadata).stage("source descriptors")?;
    let c_s = source.affordance.contact;
    let c_t = transfer_static_with_fields(source, &fs, target_cloud, &ft).stage("transfer_static")?;
    let (r, tol, ext) = (config.segment_radius, config.segment_normal_tol_deg, config.segment_max_extent);
    let (sp, _) = segment_part_within(&source.cloud, &c_s.contact, r, tol, ext).stage("segment source part")?;
    let (tp, _) = segment_part_within(target_cloud, &c_t.contact, r, tol, ext).stage("segment target part")?;
    let rotation = estimate_rotation(&sp, &tp, &c_s, &c_t, &config.icp).stage("estimate_rotation")?;
    let translation = estimate_translation(&c_s, &c_t);
    let trajectory = transfer_dynamic(&source.affordance.trajectory, &rotation, &translation, &c_s)
        .resample(config.trajectory_points)
        .stage("transfer_dynamic")?;
    let affordance = Affordance::new(c_t, trajectory).stage("transfer_dynamic")?;
    log::debug!(
        "transferred {} from {} (cos {similarity:.4}, {} / {} part points, {:.2} deg)",
        task,
        source.object_id,
        sp.len(),
        tp.len(),
        rotation.rotation_angle().to_degrees()
    );
    Ok(TransferOutcome {
        affordance,
        source_index,
        similarity,
        rotation,
        translation,
        source_part_size: sp.len(),
        target_part_size: tp.len(),
    })
}
