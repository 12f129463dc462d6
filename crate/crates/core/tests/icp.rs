use afford_core::geometry::*;
use afford_core::Error;
use afford_core::geometry::estimate_normals;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Bumpy closed surface without rotational symmetry.
fn blob(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let theta = z.acos();
            let r = 0.2 * (1.0 + 0.25 * (2.0 * theta).sin() * (3.0 * phi).cos() + 0.2 * theta.cos() + 0.1 * phi.sin());
            let s = (1.0 - z * z).sqrt();
            Vec3::new(1.3 * r * s * phi.cos(), r * s * phi.sin(), 0.8 * r * z)
        })
        .collect();
    PointCloud::new(pts)
}

fn with_normals(c: &PointCloud) -> PointCloud {
    let center = c.centroid();
    let mut out = estimate_normals(c, 12, &Vec3::zeros()).unwrap();
    // Outward orientation for a closed blob.
    for (p, n) in out.points.iter().zip(out.normals.as_mut().unwrap()) {
        if n.dot(&(p - center)) < 0.0 {
            *n = -*n;
        }
    }
    out
}

#[test]
fn identity_on_identical_clouds() {
    let src = blob(300, 1);
    let tgt = with_normals(&src);
    let res = icp_point_to_plane(&src, &tgt, &RigidTransform::identity(), &IcpConfig::default()).unwrap();
    assert!(res.transform.rotation_angle() < 1e-6);
    assert!(res.transform.translation.norm() < 1e-6);
    assert!(res.residual < 1e-10);
    assert!(res.converged);
}

#[test]
fn recovers_known_transform() {
    let src = blob(500, 2);
    let truth = RigidTransform::from_axis_angle(Vec3::z(), 20f64.to_radians(), Vec3::new(0.05, 0.0, 0.0));
    let tgt = with_normals(&src.transformed(&truth));
    let res = icp_point_to_plane(&src, &tgt, &RigidTransform::identity(), &IcpConfig::default()).unwrap();
    assert!(res.transform.rotation_distance(&truth) < 1e-3);
    assert!((res.transform.translation - truth.translation).norm() < 1e-3);
    assert!(res.converged);
}

#[test]
fn residual_history_is_monotone_and_matches_direct_objective() {
    let src = blob(400, 3);
    let truth = RigidTransform::from_axis_angle(Vec3::new(1.0, 2.0, 0.5), 0.5, Vec3::new(0.03, -0.04, 0.02));
    let tgt = with_normals(&blob(400, 4).transformed(&truth));
    let res = icp_point_to_plane(&src, &tgt, &RigidTransform::identity(), &IcpConfig::default()).unwrap();
    for w in res.history.windows(2) {
        assert!(w[1] <= w[0], "{:?}", res.history);
    }
    // Independent evaluation of the objective on the final pair set.
    let ns = tgt.normals.as_ref().unwrap();
    let direct: f64 = res
        .correspondences
        .iter()
        .map(|&(i, j)| {
            let q = res.transform.rotation * src.points[i] + res.transform.translation;
            let e = (tgt.points[j] - q).dot(&ns[j]);
            e * e
        })
        .sum::<f64>()
        / res.correspondences.len() as f64;
    assert!((direct - res.residual).abs() <= 1e-9 * res.residual.max(1e-300));
}

#[test]
fn far_disjoint_clouds_do_not_converge() {
    let src = blob(200, 5).translated(&Vec3::new(10.0, 0.0, 0.0));
    // Planar patch target: no rigid motion makes a 3-D blob planar.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let plane: Vec<Vec3> = (0..200)
        .map(|_| Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0))
        .collect();
    let tgt = estimate_normals(&PointCloud::new(plane), 8, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
    let res = icp_point_to_plane(&src, &tgt, &RigidTransform::identity(), &IcpConfig::default()).unwrap();
    assert!(!res.converged || res.residual > IcpConfig::default().residual_threshold);
    assert!(!res.converged);
}

#[test]
fn contract_errors() {
    let src = blob(50, 7);
    assert!(matches!(
        icp_point_to_plane(&src, &src, &RigidTransform::identity(), &IcpConfig::default()),
        Err(Error::Contract(_))
    ));
    let line: Vec<Vec3> = (0..20).map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
    let normals = vec![Vec3::z(); 20];
    let tgt = PointCloud::with_normals(line, normals).unwrap();
    assert!(matches!(
        icp_point_to_plane(&src, &tgt, &RigidTransform::identity(), &IcpConfig::default()),
        Err(Error::Singular(_))
    ));
    let small = PointCloud::new(src.points[..5].to_vec());
    assert!(matches!(
        icp_point_to_plane(&small, &with_normals(&src), &RigidTransform::identity(), &IcpConfig::default()),
        Err(Error::Size(_))
    ));
}
