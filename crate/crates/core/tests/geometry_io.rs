use afford_core::geometry::io::*;
use afford_core::geometry::{PointCloud, Vec3};
use proptest::prelude::*;

proptest! {
    #[test]
    fn round_trip(pts in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 0..30),
                  with_normals in any::<bool>()) {
        let points: Vec<Vec3> = pts.iter().map(|p| Vec3::from(*p)).collect();
        let cloud = if with_normals {
            let ns = points.iter().map(|p| {
                let n = p + Vec3::new(0.5, 0.25, 0.125);
                n / n.norm()
            }).collect();
            PointCloud::with_normals(points, ns).unwrap()
        } else {
            PointCloud::new(points)
        };
        let back = parse_point_cloud(&write_point_cloud_string(&cloud)).unwrap();
        prop_assert_eq!(back.len(), cloud.len());
        for (a, b) in back.points.iter().zip(&cloud.points) {
            prop_assert!((a - b).amax() <= 1e-11 * b.amax().max(1.0));
        }
    }
}

#[test]
fn rejects_bad_header() {
    assert!(parse_point_cloud("cloud 3 0\n").is_err());
    assert!(parse_point_cloud("pc 2 0\n1 2 3\n").is_err());
}
