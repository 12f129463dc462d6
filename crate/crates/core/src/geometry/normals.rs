use nalgebra::{Matrix3, SymmetricEigen};

use super::{KdTree, PointCloud, Vec3};
use crate::error::{Error, Result};

/// Per-point normals from the smallest eigenvector of the k-NN covariance,
/// oriented towards `viewpoint`.
pub fn estimate_normals(cloud: &PointCloud, k: usize, viewpoint: &Vec3) -> Result<PointCloud> {
    estimate_normals_with_curvature(cloud, k, viewpoint).map(|(c, _)| c)
}

/// Like [`estimate_normals`], also returning the surface-variation proxy
/// `λ_min / (λ_0 + λ_1 + λ_2)` of each neighbourhood.
pub fn estimate_normals_with_curvature(
    cloud: &PointCloud,
    k: usize,
    viewpoint: &Vec3,
) -> Result<(PointCloud, Vec<f64>)> {
    if k == 0 {
        return Err(Error::Contract("neighbourhood size must be positive".into()));
    }
    if cloud.len() < k + 1 {
        return Err(Error::Size(format!(
            "normal estimation with k={k} needs at least {} points, got {}",
            k + 1,
            cloud.len()
        )));
    }
    let tree = KdTree::new(&cloud.points);
    let mut normals = Vec::with_capacity(cloud.len());
    let mut curvature = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let neigh = tree.k_nearest(p, k + 1);
        let mean = neigh.iter().map(|&(i, _)| cloud.points[i]).sum::<Vec3>() / neigh.len() as f64;
        let mut cov = Matrix3::zeros();
        for &(i, _) in &neigh {
            let d = cloud.points[i] - mean;
            cov += d * d.transpose();
        }
        cov /= neigh.len() as f64;
        let eig = SymmetricEigen::new(cov);
        let imin = eig.eigenvalues.imin();
        let mut n: Vec3 = eig.eigenvectors.column(imin).into_owned();
        n /= n.norm();
        if n.dot(&(viewpoint - p)) < 0.0 {
            n = -n;
        }
        let total = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum::<f64>();
        curvature.push(if total > 0.0 {
            eig.eigenvalues[imin].max(0.0) / total
        } else {
            0.0
        });
        normals.push(n);
    }
    Ok((PointCloud::with_normals(cloud.points.clone(), normals)?, curvature))
}
