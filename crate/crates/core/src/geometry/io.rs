//! Plain-text point-cloud files.
//!
//! ```text
//! pc <count> <has_normals:0|1>
//! x y z [nx ny nz]
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{PointCloud, Vec3};
use crate::error::{Error, Result};

pub fn format_real(v: f64) -> String {
    format!("{v:.12e}")
}

pub fn write_point_cloud_string(cloud: &PointCloud) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "pc {} {}", cloud.len(), u8::from(cloud.has_normals()));
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{} {} {}", format_real(p.x), format_real(p.y), format_real(p.z));
        if let Some(ns) = &cloud.normals {
            let n = ns[i];
            let _ = write!(out, " {} {} {}", format_real(n.x), format_real(n.y), format_real(n.z));
        }
        out.push('\n');
    }
    out
}

pub fn parse_point_cloud(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty point-cloud file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 || fields[0] != "pc" {
        return Err(Error::Parse(format!("bad point-cloud header `{header}`")));
    }
    let count: usize = fields[1].parse().map_err(|_| Error::Parse("bad point count".into()))?;
    let has_normals = match fields[2] {
        "0" => false,
        "1" => true,
        other => return Err(Error::Parse(format!("bad normals flag `{other}`"))),
    };
    let width = if has_normals { 6 } else { 3 };
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(if has_normals { count } else { 0 });
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| Error::Parse("truncated point-cloud file".into()))?;
        let v = parse_reals(line)?;
        if v.len() != width {
            return Err(Error::Parse(format!("expected {width} values, got `{line}`")));
        }
        points.push(Vec3::new(v[0], v[1], v[2]));
        if has_normals {
            normals.push(Vec3::new(v[3], v[4], v[5]));
        }
    }
    if has_normals {
        PointCloud::with_normals(points, normals)
    } else {
        Ok(PointCloud::new(points))
    }
}

pub(crate) fn parse_reals(line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad real `{t}`"))))
        .collect()
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, write_point_cloud_string(cloud))?;
    Ok(())
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    parse_point_cloud(&std::fs::read_to_string(path)?)
}
