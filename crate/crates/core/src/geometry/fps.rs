use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PointCloud;
use crate::error::{Error, Result};

/// Max-min downsampling to `n` points. The first pick is drawn from `seed`;
/// later picks maximise the distance to the selected set, lowest index on
/// ties. Output order is selection order.
pub fn farthest_point_sampling(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    Ok(cloud.select(&farthest_point_indices(cloud, n, seed)?))
}

pub fn farthest_point_indices(cloud: &PointCloud, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > cloud.len() {
        return Err(Error::Size(format!(
            "cannot sample {n} points from a cloud of {}",
            cloud.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let pts = &cloud.points;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..pts.len());
    let mut selected = Vec::with_capacity(n);
    selected.push(first);
    let mut min_d2: Vec<f64> = pts.iter().map(|p| (p - pts[first]).norm_squared()).collect();
    min_d2[first] = -1.0;
    while selected.len() < n {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        selected.push(best);
        min_d2[best] = -1.0;
        let pb = pts[best];
        for (i, d) in min_d2.iter_mut().enumerate() {
            if *d >= 0.0 {
                let nd = (pts[i] - pb).norm_squared();
                if nd < *d {
                    *d = nd;
                }
            }
        }
    }
    Ok(selected)
}
