use afford_core::geometry::*;
use nalgebra::Matrix3;
use proptest::prelude::*;
use std::f64::consts::FRAC_PI_2;

fn arb_transform() -> impl Strategy<Value = RigidTransform> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        0.0f64..3.1,
        prop::array::uniform3(-2.0f64..2.0),
    )
        .prop_map(|(axis, angle, t)| {
            let axis = Vec3::from(axis);
            let axis = if axis.norm() < 1e-3 { Vec3::z() } else { axis };
            RigidTransform::from_axis_angle(axis, angle, Vec3::from(t))
        })
}

#[test]
fn identity_leaves_points() {
    let pts = vec![Vec3::new(1.0, -2.0, 3.5), Vec3::new(0.0, 0.1, 0.2)];
    assert_eq!(apply_transform(&RigidTransform::identity(), &pts), pts);
}

#[test]
fn quarter_turn_about_z() {
    let t = RigidTransform::from_axis_angle(Vec3::z(), FRAC_PI_2, Vec3::zeros());
    let out = apply_transform(&t, &[Vec3::x()]);
    assert!((out[0] - Vec3::y()).amax() < 1e-9);
}

#[test]
fn rejects_non_rotation() {
    let mut m = Matrix3::identity();
    m[(0, 0)] = -1.0;
    assert!(RigidTransform::new(m, Vec3::zeros()).is_err());
    assert!(RigidTransform::new(Matrix3::identity() * 1.01, Vec3::zeros()).is_err());
}

#[test]
fn small_angles_are_precise() {
    let t = RigidTransform::from_axis_angle(Vec3::x(), 1e-7, Vec3::zeros());
    assert!((t.rotation_angle() - 1e-7).abs() < 1e-15);
}

proptest! {
    #[test]
    fn composition_matches_sequential(a in arb_transform(), b in arb_transform(),
                                      p in prop::array::uniform3(-1.0f64..1.0)) {
        let p = Vec3::from(p);
        let seq = b.apply(&a.apply(&p));
        let comp = b.compose(&a).apply(&p);
        prop_assert!((seq - comp).amax() < 1e-9);
        let r = b.compose(&a).rotation;
        prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_round_trip(a in arb_transform(), p in prop::array::uniform3(-1.0f64..1.0)) {
        let p = Vec3::from(p);
        prop_assert!((a.inverse().apply(&a.apply(&p)) - p).amax() < 1e-9);
    }
}
