use std::f64::consts::PI;

use nalgebra::{Matrix4, Rotation3, Unit, Vector3, Vector4};
use osmscan::geometry::{
    chain_to_world, normalize_angle, se3_exp, se3_log, so3_exp, wrap_two_pi, LidarMount,
};
use osmscan::{PoseSE3, TwistSE3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_twist(rng: &mut ChaCha8Rng) -> TwistSE3 {
    let angle = rng.random_range(0.0..PI - 1e-3);
    let w = random_unit(rng) * angle;
    let v = Vector3::new(
        rng.random_range(-50.0..50.0),
        rng.random_range(-50.0..50.0),
        rng.random_range(-5.0..5.0),
    );
    TwistSE3::new(v, w)
}

/// Homogeneous matrix built from an axis-angle rotation independently of
/// the library's exponential map.
fn homogeneous(axis_angle: &Vector3<f64>, t: &Vector3<f64>) -> Matrix4<f64> {
    let angle = axis_angle.norm();
    let r = if angle == 0.0 {
        Rotation3::identity()
    } else {
        Rotation3::from_axis_angle(&Unit::new_normalize(*axis_angle), angle)
    };
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r.matrix());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

#[test]
fn exp_log_round_trip_on_random_poses() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let xi = random_twist(&mut rng);
        let pose = se3_exp(&xi);
        let back = se3_log(&pose).expect("away from the pi branch");
        worst = worst.max((back.to_vector() - xi.to_vector()).abs().max());
        let again = se3_exp(&back);
        worst = worst.max((again.to_homogeneous() - pose.to_homogeneous()).abs().max());
    }
    assert!(worst < 1e-9, "worst entry error {worst:e}");
}

#[test]
fn exp_matches_axis_angle_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let w = random_unit(&mut rng) * rng.random_range(0.0..3.0);
        let oracle = homogeneous(&w, &Vector3::zeros());
        let r = so3_exp(&w);
        assert!((r.matrix() - oracle.fixed_view::<3, 3>(0, 0)).abs().max() < 1e-12);
    }
}

#[test]
fn chain_to_world_equals_matrix_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..500 {
        let mount_aa = random_unit(&mut rng) * rng.random_range(0.0..1.0);
        let mount_t = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        let base_aa = random_unit(&mut rng) * rng.random_range(0.0..3.0);
        let base_t = Vector3::new(
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
            rng.random_range(-5.0..5.0),
        );
        let theta = rng.random_range(-10.0..10.0);
        let p = Vector3::new(
            rng.random_range(-40.0..40.0),
            rng.random_range(-40.0..40.0),
            rng.random_range(-10.0..10.0),
        );

        let mount = LidarMount {
            rotation: so3_exp(&mount_aa),
            translation: mount_t,
        };
        let base = PoseSE3::new(so3_exp(&base_aa), base_t);
        let got = chain_to_world(&p, theta, &mount, &base);

        let motor = homogeneous(&Vector3::new(0.0, 0.0, theta), &Vector3::zeros());
        let oracle = homogeneous(&base_aa, &base_t)
            * motor
            * homogeneous(&mount_aa, &mount_t)
            * Vector4::new(p.x, p.y, p.z, 1.0);
        let err = (got - oracle.xyz()).norm();
        assert!(err < 1e-9 * (1.0 + oracle.xyz().norm()), "error {err:e}");
    }
}

#[test]
fn identity_mount_at_zero_angle_looks_along_base_x() {
    let base = PoseSE3::from_yaw(0.5, Vector3::new(1.0, 2.0, 3.0));
    let got = chain_to_world(&Vector3::x(), 0.0, &LidarMount::default(), &base);
    let want = Vector3::new(1.0 + 0.5f64.cos(), 2.0 + 0.5f64.sin(), 3.0);
    assert!((got - want).norm() < 1e-12);
}

#[test]
fn angle_wrapping_ranges() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..1000 {
        let a = rng.random_range(-100.0..100.0);
        let n = normalize_angle(a);
        let w = wrap_two_pi(a);
        assert!((-PI..PI).contains(&n));
        assert!((0.0..2.0 * PI).contains(&w));
        assert!(
            ((a - n) / (2.0 * PI))
                .fract()
                .abs()
                .min(1.0 - ((a - n) / (2.0 * PI)).fract().abs())
                < 1e-9
        );
        assert!((normalize_angle(w) - n).abs() < 1e-9);
    }
}
