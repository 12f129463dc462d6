use afford_core::descriptor::*;
use afford_core::geometry::{PointCloud, RigidTransform, Vec3};
use afford_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rand::seq::SliceRandom;

fn grid_box(n: usize) -> (PointCloud, Vec<Vec3>) {
    // Box surface sampled at cell centres (no shared edge points);
    // canonical = position.
    let mut pts = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let (a, b) = ((i as f64 + 0.5) / n as f64 - 0.5, (j as f64 + 0.5) / n as f64 - 0.5);
            pts.push(Vec3::new(a, b, 0.5));
            pts.push(Vec3::new(a, b, -0.5));
            pts.push(Vec3::new(0.5, a, b));
            pts.push(Vec3::new(-0.5, a, b));
        }
    }
    let canon = pts.clone();
    (PointCloud::new(pts), canon)
}

fn random_field(n: usize, dim: usize, seed: u64) -> FeatureField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureField::new(
        (0..n).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect(),
        dim,
    )
    .unwrap()
}

#[test]
fn self_correspondence() {
    let f = random_field(50, 8, 1);
    for i in 0..50 {
        let (j, s) = correspond(&f, i, &f).unwrap();
        assert_eq!(j, i);
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn recovers_permutation_both_ways() {
    let f = random_field(200, 16, 2);
    let mut perm: Vec<usize> = (0..200).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    // target[perm[i]] = source[i]
    let mut tgt = vec![Vec::new(); 200];
    for (i, &p) in perm.iter().enumerate() {
        tgt[p] = f.get(i).to_vec();
    }
    let g = FeatureField::new(tgt, 16).unwrap();
    let mut round_trip = 0;
    for i in 0..200 {
        let (j, _) = correspond(&f, i, &g).unwrap();
        assert_eq!(j, perm[i]);
        if correspond(&g, j, &f).unwrap().0 == i {
            round_trip += 1;
        }
    }
    assert!(round_trip >= 198);
}

#[test]
fn matches_exhaustive_scan() {
    let f = random_field(200, 12, 4);
    let g = random_field(200, 12, 5);
    for i in 0..200 {
        let q = f.get(i);
        let mut best = (0, f64::NEG_INFINITY);
        for j in 0..200 {
            let t = g.get(j);
            let c = q.iter().zip(t).map(|(a, b)| a * b).sum::<f64>()
                / (q.iter().map(|a| a * a).sum::<f64>().sqrt() * t.iter().map(|a| a * a).sum::<f64>().sqrt());
            if c > best.1 {
                best = (j, c);
            }
        }
        assert_eq!(correspond(&f, i, &g).unwrap().0, best.0);
    }
}

#[test]
fn correspondence_contract_errors() {
    let f = random_field(5, 4, 1);
    let g = random_field(5, 3, 1);
    assert!(matches!(correspond(&f, 0, &g), Err(Error::Contract(_))));
    assert!(matches!(correspond(&f, 9, &f), Err(Error::Contract(_))));
    let z = FeatureField::new(vec![vec![0.0; 4]; 2], 4).unwrap();
    assert!(matches!(correspond(&z, 0, &f), Err(Error::Contract(_))));
}

#[test]
fn noiseless_provider_maps_identity() {
    let (cloud, canon) = grid_box(8);
    let a = synthetic_provider(&cloud, &canon, 0.0, 1).unwrap();
    let b = synthetic_provider(&cloud, &canon, 0.0, 2).unwrap();
    for i in 0..cloud.len() {
        assert_eq!(correspond(&a, i, &b).unwrap().0, i);
    }
}

#[test]
fn provider_is_deterministic_and_checks_lengths() {
    let (cloud, canon) = grid_box(6);
    let a = synthetic_provider(&cloud, &canon, 0.3, 9).unwrap();
    let b = synthetic_provider(&cloud, &canon, 0.3, 9).unwrap();
    assert_eq!(a, b);
    assert!(matches!(
        synthetic_provider(&cloud, &canon[1..], 0.0, 0),
        Err(Error::Contract(_))
    ));
}

#[test]
fn equal_canonical_coords_are_highly_similar() {
    let (cloud, canon) = grid_box(8);
    let rotated = cloud.transformed(&RigidTransform::from_axis_angle(Vec3::z(), 0.4, Vec3::new(1.0, 0.0, 0.0)));
    let a = synthetic_provider(&cloud, &canon, 0.0, 0).unwrap();
    let b = synthetic_provider(&rotated, &canon, 0.0, 0).unwrap();
    let mean: f64 = (0..cloud.len()).map(|i| cosine(a.get(i), b.get(i))).sum::<f64>() / cloud.len() as f64;
    assert!(mean > 0.99, "mean cosine {mean}");
}

#[test]
fn scaled_instance_handle_correspondence() {
    // Drawer-like box with a handle block; second instance scaled by 1.3
    // with identical canonical coordinates.
    let (mut cloud, mut canon) = grid_box(10);
    let handle_start = cloud.len();
    for i in 0..5 {
        for j in 0..3 {
            let p = Vec3::new(-0.1 + 0.05 * i as f64, 0.62, -0.02 + 0.02 * j as f64);
            cloud.points.push(p);
            canon.push(p + Vec3::new(0.0, 1.0, 0.0));
        }
    }
    let scaled = PointCloud::new(cloud.points.iter().map(|p| p * 1.3).collect());
    let a = synthetic_provider(&cloud, &canon, 0.0, 0).unwrap();
    let b = synthetic_provider(&scaled, &canon, 0.0, 0).unwrap();
    let diameter = scaled.diameter();
    for h in handle_start..cloud.len() {
        let (j, _) = correspond(&a, h, &b).unwrap();
        let err = (scaled.points[j] - scaled.points[h]).norm();
        assert!(err < 0.02 * diameter, "handle point {h}: error {err}");
    }
}

#[test]
fn noise_degrades_accuracy_monotonically() {
    let (cloud, canon) = grid_box(8);
    let clean = synthetic_provider(&cloud, &canon, 0.0, 0).unwrap();
    let feature_norm = clean.get(0).iter().map(|v| v * v).sum::<f64>().sqrt();
    let accuracy = |sigma: f64| {
        let a = synthetic_provider(&cloud, &canon, sigma, 11).unwrap();
        let b = synthetic_provider(&cloud, &canon, sigma, 12).unwrap();
        (0..cloud.len()).filter(|&i| correspond(&a, i, &b).unwrap().0 == i).count() as f64 / cloud.len() as f64
    };
    let accs: Vec<f64> = [0.02, 0.1, 10.0 * feature_norm].iter().map(|&s| accuracy(s)).collect();
    assert!(accs[0] > accs[1] && accs[1] > accs[2], "{accs:?}");
    // Chance is 1/len; allow a small multiple of it.
    assert!(accs[2] < 10.0 / cloud.len() as f64, "{accs:?}");
}

fn l_shape() -> (PointCloud, Vec<bool>) {
    let mut pts = Vec::new();
    let mut on_floor = Vec::new();
    let step = 0.05;
    for i in 0..=20 {
        for j in 0..=20 {
            pts.push(Vec3::new(i as f64 * step, j as f64 * step, 0.0));
            on_floor.push(true);
        }
    }
    for j in 0..=20 {
        for k in 1..=20 {
            pts.push(Vec3::new(0.0, j as f64 * step, k as f64 * step));
            on_floor.push(false);
        }
    }
    (PointCloud::new(pts), on_floor)
}

#[test]
fn segments_planar_face_of_l_shape() {
    let (cloud, on_floor) = l_shape();
    let radius = 0.08;
    let (_, idx) = segment_part(&cloud, &Vec3::new(0.6, 0.5, 0.0), radius, 30.0).unwrap();
    let chosen: std::collections::HashSet<usize> = idx.iter().copied().collect();
    for (i, p) in cloud.points.iter().enumerate() {
        let near_edge = p.x <= radius && p.z <= radius;
        if near_edge {
            continue;
        }
        assert_eq!(chosen.contains(&i), on_floor[i], "point {i} at {p:?}");
    }
    assert!(idx.windows(2).all(|w| w[0] < w[1]));
    // Connected under the radius graph.
    assert!(is_connected(&cloud.select(&idx), radius));
}

fn is_connected(cloud: &PointCloud, radius: f64) -> bool {
    let n = cloud.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (cloud.points[i] - cloud.points[j]).norm() <= radius {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let root = find(&mut parent, 0);
    (0..n).all(|i| find(&mut parent, i) == root)
}

#[test]
fn isolated_point_and_off_cloud_prompt() {
    let (mut cloud, _) = l_shape();
    cloud.points.push(Vec3::new(5.0, 5.0, 5.0));
    let last = cloud.len() - 1;
    let (seg, idx) = segment_part(&cloud, &Vec3::new(5.0, 5.0, 5.01), 0.02, 30.0).unwrap();
    assert_eq!(idx, vec![last]);
    assert_eq!(seg.len(), 1);
    assert!(matches!(
        segment_part(&cloud, &Vec3::new(-3.0, 0.0, 0.0), 0.1, 30.0),
        Err(Error::EmptySegment(_))
    ));
}

#[test]
fn feature_file_round_trip() {
    let f = random_field(7, 5, 8);
    let back = FeatureField::from_text(&f.to_text()).unwrap();
    for i in 0..7 {
        for (a, b) in back.get(i).iter().zip(f.get(i)) {
            assert!((a - b).abs() < 1e-11);
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}
