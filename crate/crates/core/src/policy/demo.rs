//! Demonstration episodes on disk.
//!
//! ```text
//! <dir>/episode.txt
//!     task drawer_open
//!     object drawer-0003
//!     seed 17
//!     noise easy
//!     feasible 1
//!     success 1
//!     grasp 1
//!     final_joint 2.0e-1
//!     contact x y z
//!     trajectory N
//!     x y z            (N lines)
//!     frames M
//!     f <cloud> <joint_value> p <proprio...> a <action...>   (M lines)
//! <dir>/clouds/NNN.pc, <dir>/clouds/NNN.canonical.pc
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::env::{Episode, Frame};
use crate::error::{Error, Result};
use crate::geometry::io::{format_real, read_point_cloud, write_point_cloud};
use crate::geometry::{PointCloud, Vec3};

const EPISODE_FILE: &str = "episode.txt";

fn vec_text(v: &Vec3) -> String {
    format!("{} {} {}", format_real(v.x), format_real(v.y), format_real(v.z))
}

pub fn save_episode(dir: &Path, ep: &Episode) -> Result<()> {
    let clouds = dir.join("clouds");
    fs::create_dir_all(&clouds)?;
    for (i, (cloud, canon)) in ep.clouds.iter().enumerate() {
        write_point_cloud(&clouds.join(format!("{i:03}.pc")), cloud)?;
        write_point_cloud(&clouds.join(format!("{i:03}.canonical.pc")), &PointCloud::new(canon.clone()))?;
    }
    let mut out = String::new();
    let _ = writeln!(out, "task {}", ep.task);
    let _ = writeln!(out, "object {}", ep.object_id);
    let _ = writeln!(out, "seed {}", ep.seed);
    let _ = writeln!(out, "noise {}", if ep.noise.is_empty() { "-" } else { &ep.noise });
    let _ = writeln!(out, "feasible {}", u8::from(ep.feasible));
    let _ = writeln!(out, "success {}", u8::from(ep.success));
    let _ = writeln!(out, "grasp {}", u8::from(ep.grasp_occurred));
    let _ = writeln!(out, "final_joint {}", format_real(ep.final_joint_value));
    let _ = writeln!(out, "clouds {}", ep.clouds.len());
    let _ = writeln!(out, "contact {}", vec_text(&ep.contact));
    let _ = writeln!(out, "trajectory {}", ep.trajectory.len());
    for p in &ep.trajectory {
        let _ = writeln!(out, "{}", vec_text(p));
    }
    let _ = writeln!(out, "frames {}", ep.frames.len());
    for f in &ep.frames {
        let _ = write!(out, "f {} {} p", f.cloud_index, format_real(f.joint_value));
        for v in f.proprio.iter().flatten() {
            let _ = write!(out, " {}", format_real(*v));
        }
        let _ = write!(out, " / {} a", f.proprio.len());
        for v in &f.action {
            let _ = write!(out, " {}", format_real(*v));
        }
        out.push('\n');
    }
    fs::write(dir.join(EPISODE_FILE), out)?;
    Ok(())
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse(format!("bad number `{s}`")))
}

fn parse_vec(fields: &[&str]) -> Result<Vec3> {
    match fields {
        [x, y, z] => Ok(Vec3::new(parse_f64(x)?, parse_f64(y)?, parse_f64(z)?)),
        _ => Err(Error::Parse(format!("expected three coordinates, got {}", fields.len()))),
    }
}

fn parse_frame(line: &str) -> Result<Frame> {
    let bad = || Error::Parse(format!("bad frame line `{line}`"));
    let t: Vec<&str> = line.split_whitespace().collect();
    if t.len() < 4 || t[0] != "f" || t[3] != "p" {
        return Err(bad());
    }
    let cloud_index = t[1].parse().map_err(|_| bad())?;
    let joint_value = parse_f64(t[2])?;
    let slash = t.iter().position(|x| *x == "/").ok_or_else(bad)?;
    let steps: usize = t.get(slash + 1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    if t.get(slash + 2) != Some(&"a") {
        return Err(bad());
    }
    let flat = t[4..slash].iter().map(|s| parse_f64(s)).collect::<Result<Vec<_>>>()?;
    if steps == 0 || flat.len() % steps != 0 {
        return Err(bad());
    }
    let proprio = flat.chunks(flat.len() / steps).map(|c| c.to_vec()).collect();
    let action = t[slash + 3..].iter().map(|s| parse_f64(s)).collect::<Result<Vec<_>>>()?;
    Ok(Frame {
        cloud_index,
        proprio,
        action,
        joint_value,
    })
}

pub fn load_episode(dir: &Path) -> Result<Episode> {
    let text = fs::read_to_string(dir.join(EPISODE_FILE))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let mut header: HashMap<String, Vec<String>> = HashMap::new();
    let mut trajectory = Vec::new();
    let mut frames = Vec::new();
    while let Some(line) = lines.next() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t[0] {
            "trajectory" => {
                let n: usize = t.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse("bad trajectory count".into()))?;
                for _ in 0..n {
                    let l = lines.next().ok_or_else(|| Error::Parse("truncated trajectory".into()))?;
                    trajectory.push(parse_vec(&l.split_whitespace().collect::<Vec<_>>())?);
                }
            }
            "frames" => {
                let n: usize = t.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse("bad frame count".into()))?;
                for _ in 0..n {
                    frames.push(parse_frame(lines.next().ok_or_else(|| Error::Parse("truncated frames".into()))?)?);
                }
            }
            key => {
                header.insert(key.to_string(), t[1..].iter().map(|s| s.to_string()).collect());
            }
        }
    }
    let field = |k: &str| -> Result<&Vec<String>> {
        header.get(k).filter(|v| !v.is_empty()).ok_or_else(|| Error::Parse(format!("episode lacks `{k}`")))
    };
    let one = |k: &str| -> Result<String> { Ok(field(k)?[0].clone()) };
    let flag = |k: &str| -> Result<bool> {
        match one(k)?.as_str() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::Parse(format!("bad flag `{other}` for `{k}`"))),
        }
    };
    let n_clouds: usize = one("clouds")?.parse().map_err(|_| Error::Parse("bad cloud count".into()))?;
    let mut clouds = Vec::with_capacity(n_clouds);
    for i in 0..n_clouds {
        let cloud = read_point_cloud(&dir.join("clouds").join(format!("{i:03}.pc")))?;
        let canon = read_point_cloud(&dir.join("clouds").join(format!("{i:03}.canonical.pc")))?.points;
        if canon.len() != cloud.len() {
            return Err(Error::Parse(format!("cloud {i} and its canonical coordinates differ in size")));
        }
        clouds.push((cloud, canon));
    }
    if let Some(f) = frames.iter().find(|f| f.cloud_index >= n_clouds) {
        return Err(Error::Parse(format!("frame references missing cloud {}", f.cloud_index)));
    }
    let contact_fields: Vec<&str> = field("contact")?.iter().map(|s| s.as_str()).collect();
    let noise = one("noise")?;
    Ok(Episode {
        task: one("task")?,
        object_id: one("object")?,
        seed: one("seed")?.parse().map_err(|_| Error::Parse("bad seed".into()))?,
        noise: if noise == "-" { String::new() } else { noise },
        feasible: flag("feasible")?,
        frames,
        clouds,
        contact: parse_vec(&contact_fields)?,
        trajectory,
        grasp_occurred: flag("grasp")?,
        final_joint_value: parse_f64(&one("final_joint")?)?,
        success: flag("success")?,
    })
}

/// Writes `episodes` as `<dir>/NNNN/`; returns the number written.
pub fn save_episodes(dir: &Path, episodes: &[Episode]) -> Result<usize> {
    fs::create_dir_all(dir)?;
    for (i, ep) in episodes.iter().enumerate() {
        save_episode(&dir.join(format!("{i:04}")), ep)?;
    }
    Ok(episodes.len())
}

/// Reads every episode directory under `dir` in name order.
pub fn load_episodes(dir: &Path) -> Result<Vec<Episode>> {
    let mut names: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join(EPISODE_FILE).is_file())
        .map(|e| e.path())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::NotFound(format!("no episodes under {}", dir.display())));
    }
    names.iter().map(|p| load_episode(p)).collect()
}
