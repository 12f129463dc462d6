use afford_core::geometry::*;
use afford_core::Error;

#[test]
fn plane_normals_face_viewpoint() {
    let pts = (0..100)
        .map(|i| Vec3::new((i % 10) as f64 * 0.1, (i / 10) as f64 * 0.1, 0.0))
        .collect();
    let out = estimate_normals(&PointCloud::new(pts), 8, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
    for n in out.normals.unwrap() {
        assert!((n - Vec3::z()).amax() < 1e-6, "{n:?}");
    }
}

#[test]
fn sphere_normals_are_radial() {
    // Fibonacci lattice: quasi-uniform 500 points on the unit sphere.
    let n = 500;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let pts: Vec<Vec3> = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect();
    let vp = Vec3::new(0.0, 0.0, 10.0);
    let out = estimate_normals(&PointCloud::new(pts.clone()), 10, &vp).unwrap();
    for (p, n) in pts.iter().zip(out.normals.unwrap()) {
        let angle = n.dot(p).abs().clamp(-1.0, 1.0).acos().to_degrees();
        assert!(angle < 5.0, "angle {angle} at {p:?}");
        // Orientation follows the viewpoint wherever it is unambiguous.
        let facing = p.dot(&(vp - p));
        if facing.abs() > 0.1 {
            assert_eq!(n.dot(p) > 0.0, facing > 0.0);
        }
    }
}

#[test]
fn too_few_points() {
    let cloud = PointCloud::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()]);
    assert!(matches!(
        estimate_normals(&cloud, 5, &Vec3::zeros()),
        Err(Error::Size(_))
    ));
}
