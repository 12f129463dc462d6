//! Tab-separated result tables. Every file opens with `#` lines carrying
//! the config hash and base seed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use afford_core::geometry::io::format_real;

use crate::error::CliError;
use crate::protocol::EpisodeRecord;

/// 95% Wilson score interval.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = n as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub fn preamble(hash: &str, seed: u64) -> String {
    format!("# config_hash {hash}\n# seed {seed}\n")
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Reads a table written by this module: `#` lines skipped, header
/// returned separately.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{} has no header", path.display())))?
        .split('\t')
        .map(str::to_string)
        .collect::<Vec<_>>();
    let rows = lines.map(|l| l.split('\t').map(str::to_string).collect::<Vec<_>>()).collect::<Vec<_>>();
    if rows.iter().any(|r| r.len() != header.len()) {
        return Err(CliError::Data(format!("{} has ragged rows", path.display())));
    }
    Ok((header, rows))
}

pub fn episodes_table(records: &[EpisodeRecord]) -> String {
    let mut out = String::from(
        "split\tindex\tseed\ttask\tobject\thandle_x\thandle_y\tsuccess\tgrasp\tfinal_joint\tsteps\tguided_steps\tfailure\n",
    );
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.split,
            r.index,
            r.seed,
            r.task,
            r.object_id,
            format_real(r.handle.x),
            format_real(r.handle.y),
            u8::from(r.success),
            u8::from(r.grasp),
            format_real(r.final_joint_value),
            r.steps,
            r.guided_steps,
            if r.failure.is_empty() { "-".to_string() } else { r.failure.replace(['\t', '\n'], " ") },
        );
    }
    out
}

/// One summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub label: String,
    pub split: String,
    pub episodes: usize,
    pub successes: usize,
    pub transfer_failures: usize,
}

impl RateRow {
    pub fn from_records(label: &str, split: &str, records: &[&EpisodeRecord]) -> Self {
        Self {
            label: label.to_string(),
            split: split.to_string(),
            episodes: records.len(),
            successes: records.iter().filter(|r| r.success).count(),
            transfer_failures: records.iter().filter(|r| r.failure.starts_with("transfer")).count(),
        }
    }

    pub fn rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.successes as f64 / self.episodes as f64
        }
    }
}

pub fn rates_table(rows: &[RateRow]) -> String {
    let mut out = String::from("variant\tsplit\tepisodes\tsuccesses\trate\tci_low\tci_high\ttransfer_failures\n");
    for r in rows {
        let (lo, hi) = wilson_interval(r.successes, r.episodes);
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}",
            r.label,
            r.split,
            r.episodes,
            r.successes,
            r.rate(),
            lo,
            hi,
            r.transfer_failures
        );
    }
    out
}

/// Area of the convex hull of planar points (monotone chain); zero for
/// fewer than three non-collinear points.
pub fn convex_hull_area(points: &[(f64, f64)]) -> f64 {
    let mut p: Vec<(f64, f64)> = points.to_vec();
    p.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    p.dedup();
    if p.len() < 3 {
        return 0.0;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    let n = hull.len();
    (0..n)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
        / 2.0
}
