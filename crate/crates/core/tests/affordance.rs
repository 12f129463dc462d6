use proptest::prelude::*;

use afford_core::affordance::*;
use afford_core::geometry::{IcpConfig, PointCloud, RigidTransform, Vec3};
use afford_core::descriptor::{segment_part_within, ObjectMetadata, SyntheticProvider};
use afford_core::env::{generate_object, reset, scripted_expert, ArticulatedObject, Category, EnvConfig, ExpertConfig};
use afford_core::env::NoiseLevel;
use afford_core::Error;

fn line(n: usize, step: f64) -> Vec<Vec3> {
    (0..n).map(|i| Vec3::new(i as f64 * step, 0.0, 0.0)).collect()
}

fn dummy_entry(task: &str, appearance: Vec<f64>) -> MemoryEntry {
    let cloud = PointCloud::new(vec![Vec3::zeros(), Vec3::x()]);
    let canonical = cloud.points.clone();
    let aff = Affordance::new(StaticAffordance::new(Vec3::zeros()).unwrap(), DynamicAffordance::new(line(3, 0.05)).unwrap())
        .unwrap();
    MemoryEntry::new(task, "obj", aff, appearance, cloud, ObjectMetadata { canonical }).unwrap()
}

/// Demonstration entry and the expert trajectory for a generated object.
fn demo(obj: &ArticulatedObject, num_points: usize) -> (MemoryEntry, Vec<Vec3>) {
    let cfg = EnvConfig {
        num_points,
        ..EnvConfig::default()
    };
    let (mut st, obs) = reset(obj, &NoiseLevel::NONE, 0, &cfg).unwrap();
    let first = obs.clone();
    let ep = scripted_expert(&mut st, obs, &ExpertConfig::default()).unwrap();
    assert!(ep.success);
    let entry = MemoryEntry::from_demo(
        obj.category.task(),
        &obj.id(),
        first.cloud,
        ObjectMetadata {
            canonical: first.canonical,
        },
        ep.contact,
        &ep.trajectory,
        &SyntheticProvider::default(),
        DEFAULT_TRAJECTORY_POINTS,
    )
    .unwrap();
    (entry, ep.trajectory)
}

fn drawer(seed: u64) -> ArticulatedObject {
    generate_object(Category::Drawer, seed, 0.5).unwrap()
}

#[test]
fn dynamic_affordance_invariants() {
    assert!(DynamicAffordance::new(vec![Vec3::zeros()]).is_err());
    assert!(DynamicAffordance::new(line(3, 0.2)).is_err());
    assert!(DynamicAffordance::new(vec![Vec3::zeros(), Vec3::new(f64::NAN, 0.0, 0.0)]).is_err());
    assert!(DynamicAffordance::with_max_step(line(3, 0.2), 0.25).is_ok());
    let traj = DynamicAffordance::new(line(3, 0.05)).unwrap();
    let far = StaticAffordance::new(Vec3::new(0.0, 0.03, 0.0)).unwrap();
    assert!(Affordance::new(far, traj).is_err());
}

#[test]
fn resampling_is_even_in_arc_length() {
    let pts = vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.1, 0.05, 0.0)];
    let r = DynamicAffordance::new(pts).unwrap().resample(4).unwrap();
    let expect = [Vec3::zeros(), Vec3::new(0.05, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.1, 0.05, 0.0)];
    for (a, b) in r.points().iter().zip(&expect) {
        assert!((a - b).norm() < 1e-12, "{a} vs {b}");
    }
    assert!((r.length() - 0.15).abs() < 1e-12);
}

#[test]
fn retrieve_exact_and_cosine_cases() {
    let mut m = AffordanceMemory::new();
    m.push(dummy_entry("pull_drawer", vec![1.0, 0.0]));
    m.push(dummy_entry("pull_drawer", vec![0.0, 1.0]));
    assert!(std::ptr::eq(m.retrieve("pull_drawer", &[0.0, 1.0]).unwrap(), &m.entries()[1]));
    // cos((0.9, 0.1), (1, 0)) = 0.9 / √0.82 and cos(·, (0, 1)) = 0.1 / √0.82.
    let (c0, c1) = (0.9 / 0.82f64.sqrt(), 0.1 / 0.82f64.sqrt());
    assert!((c0 - 0.994).abs() < 1e-3 && (c1 - 0.110).abs() < 1e-3);
    let (i, s) = m.retrieve_index("pull_drawer", &[0.9, 0.1]).unwrap();
    assert_eq!(i, 0);
    assert!((s - c0).abs() < 1e-12);
}

#[test]
fn retrieve_errors() {
    let mut m = AffordanceMemory::new();
    m.push(dummy_entry("pull_drawer", vec![1.0, 0.0]));
    assert!(matches!(m.retrieve("open_door", &[1.0, 0.0]), Err(Error::NotFound(_))));
    assert!(matches!(m.retrieve("pull_drawer", &[0.0, 0.0]), Err(Error::Contract(_))));
    assert!(matches!(m.retrieve("pull_drawer", &[1.0]), Err(Error::Contract(_))));
}

#[test]
fn retrieve_ties_go_to_the_earliest_entry() {
    let mut m = AffordanceMemory::new();
    m.push(dummy_entry("pull_drawer", vec![1.0, 1.0]));
    m.push(dummy_entry("open_door", vec![1.0, 0.0]));
    m.push(dummy_entry("pull_drawer", vec![2.0, 2.0]));
    assert_eq!(m.retrieve_index("pull_drawer", &[3.0, 3.0]).unwrap().0, 0);
}

#[test]
fn entry_rejects_zero_appearance() {
    let cloud = PointCloud::new(vec![Vec3::zeros()]);
    let aff = Affordance::new(StaticAffordance::new(Vec3::zeros()).unwrap(), DynamicAffordance::new(line(2, 0.05)).unwrap())
        .unwrap();
    let meta = ObjectMetadata {
        canonical: vec![Vec3::zeros()],
    };
    assert!(MemoryEntry::new("t", "o", aff.clone(), vec![0.0, 0.0], cloud.clone(), meta.clone()).is_err());
    assert!(MemoryEntry::new("", "o", aff, vec![1.0], cloud, meta).is_err());
}

proptest! {
    #[test]
    fn retrieve_is_scale_invariant(
        apps in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..6),
        q in prop::collection::vec(-1.0f64..1.0, 4),
        lambda in 1e-3f64..1e3,
    ) {
        prop_assume!(apps.iter().all(|a| norm(a) > 1e-6) && norm(&q) > 1e-6);
        let mut m = AffordanceMemory::new();
        for a in apps {
            m.push(dummy_entry("t", a));
        }
        let scaled: Vec<f64> = q.iter().map(|v| v * lambda).collect();
        prop_assert_eq!(m.retrieve_index("t", &q).unwrap().0, m.retrieve_index("t", &scaled).unwrap().0);
    }

    #[test]
    fn transfer_dynamic_is_rigid(
        steps in prop::collection::vec((-0.05f64..0.05, -0.05f64..0.05, -0.05f64..0.05), 1..10),
        axis in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
        angle in -3.0f64..3.0,
        t in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
    ) {
        let mut pts = vec![Vec3::new(0.3, -0.1, 0.2)];
        for s in steps {
            let last = *pts.last().unwrap();
            pts.push(last + Vec3::new(s.0, s.1, s.2));
        }
        let traj = DynamicAffordance::new(pts).unwrap();
        let c = StaticAffordance::new(traj.start()).unwrap();
        let r = RigidTransform::from_axis_angle(Vec3::new(axis.0, axis.1, axis.2), angle, Vec3::zeros());
        let t = Vec3::new(t.0, t.1, t.2);
        let out = transfer_dynamic(&traj, &r, &t, &c);
        for i in 0..traj.len() {
            for j in 0..traj.len() {
                let a = (traj.points()[i] - traj.points()[j]).norm();
                let b = (out.points()[i] - out.points()[j]).norm();
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
        prop_assert!((out.start() - (c.contact + t)).norm() < 1e-12);
    }
}

#[test]
fn translation_examples() {
    let z = StaticAffordance::new(Vec3::zeros()).unwrap();
    let c = StaticAffordance::new(Vec3::new(0.1, -0.2, 0.3)).unwrap();
    assert_eq!(estimate_translation(&c, &c), Vec3::zeros());
    assert_eq!(estimate_translation(&z, &c), Vec3::new(0.1, -0.2, 0.3));
    assert_eq!(z.contact + estimate_translation(&z, &c), c.contact);
}

#[test]
fn transfer_dynamic_examples() {
    let traj = DynamicAffordance::new(vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.05, 0.0, 0.0)]).unwrap();
    let c = StaticAffordance::new(Vec3::new(1.0, 0.0, 0.0)).unwrap();
    let id = RigidTransform::identity();
    assert_eq!(transfer_dynamic(&traj, &id, &Vec3::zeros(), &c), traj);
    let shifted = transfer_dynamic(&traj, &id, &Vec3::new(0.2, 0.0, 0.0), &c);
    assert!((shifted.points()[1] - Vec3::new(1.25, 0.0, 0.0)).norm() < 1e-12);
    let quarter = RigidTransform::from_axis_angle(Vec3::z(), std::f64::consts::FRAC_PI_2, Vec3::zeros());
    let t = Vec3::new(0.0, 0.5, 0.0);
    let out = transfer_dynamic(&traj, &quarter, &t, &c);
    // Hand-computed: start at (1, 0.5, 0), pull direction +x becomes +y.
    assert!((out.points()[0] - Vec3::new(1.0, 0.5, 0.0)).norm() < 1e-12);
    assert!((out.points()[1] - Vec3::new(1.0, 0.55, 0.0)).norm() < 1e-12);
}

#[test]
fn static_transfer_onto_the_same_cloud() {
    let (entry, _) = demo(&drawer(0), 512);
    let meta = entry.metadata.clone();
    let c = transfer_static(&entry, &entry.cloud, &meta, &SyntheticProvider::default()).unwrap();
    assert_eq!(c.contact, entry.affordance.contact.contact);
}

#[test]
fn static_transfer_follows_a_rigid_motion() {
    let (entry, _) = demo(&drawer(1), 512);
    let motion = RigidTransform::from_axis_angle(Vec3::new(0.2, 0.1, 1.0), 0.7, Vec3::new(0.3, -0.2, 0.1));
    let target = entry.cloud.transformed(&motion);
    let c = transfer_static(&entry, &target, &entry.metadata, &SyntheticProvider::default()).unwrap();
    let truth = motion.apply(&entry.affordance.contact.contact);
    assert!((c.contact - truth).norm() < 0.01 * entry.cloud.diameter());
}

#[test]
fn static_transfer_lands_on_the_handle_of_a_scaled_instance() {
    let (entry, _) = demo(&drawer(2), 512);
    let scaled = PointCloud::new(entry.cloud.points.iter().map(|p| p * 1.5).collect());
    let c = transfer_static(&entry, &scaled, &entry.metadata, &SyntheticProvider::default()).unwrap();
    let idx = scaled.points.iter().position(|p| *p == c.contact).unwrap();
    // Canonical x in [4, 5] labels handle points.
    assert!(entry.metadata.canonical[idx].x >= 4.0);
}

#[test]
fn static_transfer_rejects_a_detached_contact() {
    let (mut entry, _) = demo(&drawer(0), 512);
    let far = entry.affordance.contact.contact + Vec3::new(0.0, 0.0, 0.5);
    entry.affordance.contact = StaticAffordance::new(far).unwrap();
    let meta = entry.metadata.clone();
    assert!(transfer_static(&entry, &entry.cloud, &meta, &SyntheticProvider::default()).is_err());
}

fn handle_part(entry: &MemoryEntry) -> PointCloud {
    let cfg = TransferConfig::default();
    segment_part_within(&entry.cloud, &entry.affordance.contact.contact, cfg.segment_radius, cfg.segment_normal_tol_deg, cfg.segment_max_extent)
        .unwrap()
        .0
}

#[test]
fn rotation_of_identical_parts_is_identity() {
    let (entry, _) = demo(&drawer(3), 512);
    let part = handle_part(&entry);
    let c = entry.affordance.contact;
    let r = estimate_rotation(&part, &part, &c, &c, &IcpConfig::default()).unwrap();
    assert!(r.rotation_angle() < 1e-4);
    assert_eq!(r.translation, Vec3::zeros());
}

#[test]
fn rotation_about_the_handle_axis_is_recovered() {
    let obj = drawer(3);
    let (entry, _) = demo(&obj, 512);
    let part = handle_part(&entry);
    let c = entry.affordance.contact;
    let axis = obj.handle_axis();
    let angle = 25f64.to_radians();
    let about = RigidTransform::from_axis_angle(axis, angle, Vec3::zeros());
    let truth = RigidTransform::from_axis_angle(axis, angle, c.contact - about.rotate(&c.contact));
    let target = PointCloud::new(part.points.iter().map(|p| truth.apply(p)).collect());
    let r = estimate_rotation(&part, &target, &c, &c, &IcpConfig::default()).unwrap();
    assert!(r.rotation_distance(&about) < 1e-2, "{}", r.rotation_distance(&about));
}

#[test]
fn rotation_needs_ten_points() {
    let small = PointCloud::new(line(5, 0.01));
    let c = StaticAffordance::new(Vec3::zeros()).unwrap();
    assert!(matches!(estimate_rotation(&small, &small, &c, &c, &IcpConfig::default()), Err(Error::Size(_))));
}

#[test]
fn self_transfer_reproduces_the_stored_affordance() {
    let (entry, _) = demo(&drawer(4), 512);
    let mut m = AffordanceMemory::new();
    m.push(entry.clone());
    let out = transfer(&m, "pull_drawer", &entry.cloud, &entry.metadata, &SyntheticProvider::default(), &TransferConfig::default())
        .unwrap();
    assert!((out.affordance.contact.contact - entry.affordance.contact.contact).norm() < 1e-3);
    for (a, b) in out.affordance.trajectory.points().iter().zip(entry.affordance.trajectory.points()) {
        assert!((a - b).norm() < 1e-3);
    }
}

#[test]
fn cross_instance_transfer_hits_the_expert_endpoint() {
    let points = 2048;
    let mut m = AffordanceMemory::new();
    for seed in 0..3 {
        m.push(demo(&drawer(seed), points).0);
    }
    let (target, truth) = demo(&drawer(3), points);
    let out = transfer(&m, "pull_drawer", &target.cloud, &target.metadata, &SyntheticProvider::default(), &TransferConfig::default())
        .unwrap();
    let pull = (truth[truth.len() - 1] - truth[0]).norm();
    let err = (out.affordance.trajectory.end() - truth[truth.len() - 1]).norm();
    assert!(err < 0.05 * pull, "endpoint error {err:.4} m on a {pull:.3} m pull");
}

#[test]
fn unseen_task_reports_the_retrieval_stage() {
    let (entry, _) = demo(&drawer(0), 512);
    let mut m = AffordanceMemory::new();
    m.push(entry.clone());
    let err = transfer(&m, "open_door", &entry.cloud, &entry.metadata, &SyntheticProvider::default(), &TransferConfig::default())
        .unwrap_err();
    assert!(matches!(&err, Error::Stage { stage, .. } if stage == "retrieve"));
    assert!(matches!(err.root(), Error::NotFound(_)));
}

#[test]
fn memory_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = AffordanceMemory::new();
    m.push(demo(&drawer(0), 512).0);
    m.push(demo(&generate_object(Category::Door, 7, 0.5).unwrap(), 512).0);
    m.save(dir.path()).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().next().unwrap(), "pull_drawer 000_drawer-0000");
    let back = AffordanceMemory::load(dir.path()).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in back.entries().iter().zip(m.entries()) {
        assert_eq!((&a.task, &a.object_id), (&b.task, &b.object_id));
        assert!((a.affordance.contact.contact - b.affordance.contact.contact).norm() < 1e-9);
        assert!(a.appearance.iter().zip(&b.appearance).all(|(x, y)| (x - y).abs() < 1e-9));
        assert_eq!(a.cloud.len(), b.cloud.len());
    }
}

#[test]
fn affordance_file_errors() {
    assert!(Affordance::from_text("").is_err());
    assert!(Affordance::from_text("contact 0 0 0\ntraj 3\n0 0 0\n0.05 0 0\n").is_err());
    assert!(Affordance::from_text("contact 0 0 0\ntraj 2\n0 0 0\n0.05 0 x\n").is_err());
    let ok = Affordance::from_text("contact 0 0 0\ntraj 2\n0 0 0\n0.05 0 0\n").unwrap();
    assert_eq!(ok.trajectory.len(), 2);
    assert_eq!(Affordance::from_text(&ok.to_text()).unwrap(), ok);
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
