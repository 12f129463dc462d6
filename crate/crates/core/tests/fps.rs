use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use afford_core::geometry::*;
use afford_core::Error;
use afford_core::geometry::Vec3;

fn min_pairwise(points: &[Vec3]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            m = m.min((points[i] - points[j]).norm());
        }
    }
    m
}

#[test]
fn full_sample_is_permutation() {
    let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new(i as f64, (i * i) as f64, 0.0)).collect();
    let idx = farthest_point_indices(&PointCloud::new(pts), 20, 4).unwrap();
    let mut sorted = idx.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..20).collect::<Vec<_>>());
}

#[test]
fn square_corners_win_from_any_corner_start() {
    let pts = vec![
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(1.0, 1.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.5, 0.5, 0.0),
    ];
    let cloud = PointCloud::new(pts);
    let mut corner_starts = 0;
    for seed in 0..64 {
        let idx = farthest_point_indices(&cloud, 4, seed).unwrap();
        if idx[0] == 4 {
            continue;
        }
        corner_starts += 1;
        let mut s = idx.clone();
        s.sort_unstable();
        assert_eq!(s, vec![0, 1, 2, 3], "seed {seed}");
    }
    assert!(corner_starts > 0);
}

#[test]
fn deterministic_and_size_checked() {
    let pts: Vec<Vec3> = (0..50).map(|i| Vec3::new((i as f64).sin(), (i as f64).cos(), i as f64 * 0.01)).collect();
    let cloud = PointCloud::new(pts);
    assert_eq!(
        farthest_point_sampling(&cloud, 10, 3).unwrap(),
        farthest_point_sampling(&cloud, 10, 3).unwrap()
    );
    assert!(matches!(farthest_point_sampling(&cloud, 51, 0), Err(Error::Size(_))));
}

#[test]
fn spread_beats_random_subsets() {
    use rand::seq::index::sample;
    let mut wins = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let pts: Vec<Vec3> = (0..400).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let cloud = PointCloud::new(pts.clone());
        let fps = farthest_point_sampling(&cloud, 32, trial).unwrap();
        let rand_idx = sample(&mut rng, pts.len(), 32);
        let rand_pts: Vec<Vec3> = rand_idx.iter().map(|i| pts[i]).collect();
        if min_pairwise(&fps.points) >= min_pairwise(&rand_pts) {
            wins += 1;
        }
    }
    assert!(wins >= 95, "fps won only {wins}/100");
}
