use nalgebra::{SymmetricEigen, Vector3};
use osmscan::geometry::{se3_exp, se3_log};
use osmscan::odometry::{
    estimate_normals, register_scan, update_local_map, LocalMap, Odometry, OdometryConfig,
};
use osmscan::scene_sim::{campus, simulate_frame, LidarModel};
use osmscan::{CloudPoint, PoseSE3, TwistSE3, WeightedCloud};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Map built from scans taken all around `pose` at several motor angles.
fn surround_map(pose: &PoseSE3, model: &LidarModel, cfg: &OdometryConfig) -> LocalMap {
    let mut map = LocalMap::from_config(cfg);
    for k in 0..12 {
        let theta = k as f64 * std::f64::consts::TAU / 12.0;
        let sensor = pose * &model.mount.sensor_in_base(theta);
        let scan = simulate_frame(&campus().scene, model, pose, theta, 100 + k).unwrap();
        update_local_map(&mut map, &scan.transformed(&sensor), pose);
    }
    map
}

/// Base-frame scan at motor angle `theta` with estimated normals.
fn base_scan(
    pose: &PoseSE3,
    model: &LidarModel,
    cfg: &OdometryConfig,
    theta: f64,
    seed: u64,
) -> WeightedCloud {
    let in_base = model.mount.sensor_in_base(theta);
    let scan = simulate_frame(&campus().scene, model, pose, theta, seed)
        .unwrap()
        .transformed(&in_base);
    estimate_normals(
        &scan,
        cfg.normal_neighbors,
        &in_base.translation,
        cfg.max_curvature,
    )
    .unwrap()
}

#[test]
fn registration_recovers_a_perturbed_pose() {
    let b = campus();
    let model = LidarModel {
        rays_per_frame: 4000,
        ..LidarModel::default()
    };
    let cfg = OdometryConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for &idx in &[60usize, 200, 420] {
        let truth = b.trajectory[idx].pose;
        let map = surround_map(&truth, &model, &cfg);
        let scan = base_scan(&truth, &model, &cfg, 0.7 + idx as f64, 7 + idx as u64);
        let v = Vector3::new(
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.05..0.05),
        );
        let w = Vector3::new(0.0, 0.0, rng.random_range(-0.02..0.02));
        let init = &truth * &se3_exp(&TwistSE3::new(v, w));
        let reg = register_scan(&scan, &map, &init, &cfg).unwrap();
        assert!(!reg.diverged);
        let err = se3_log(&(&truth.inverse() * &reg.pose)).unwrap();
        assert!(
            err.v.norm() < 0.05,
            "frame {idx}: translation error {}",
            err.v.norm()
        );
        assert!(
            err.w.norm() < 0.005,
            "frame {idx}: rotation error {}",
            err.w.norm()
        );
        for (c0, c1) in &reg.cost_history {
            assert!(c1 <= c0);
        }
    }
}

/// Two parallel walls and a floor, sampled on a grid, with inward normals.
fn corridor_cloud(step: f64, offset: f64) -> WeightedCloud {
    let mut cloud = WeightedCloud::new();
    let n = (40.0 / step) as usize;
    for i in 0..n {
        let x = -20.0 + offset + i as f64 * step;
        for j in 0..(4.0 / step) as usize {
            let z = -1.0 + offset + j as f64 * step;
            cloud.push(CloudPoint::local(
                Vector3::new(x, -3.0, z),
                Some(Vector3::y()),
            ));
            cloud.push(CloudPoint::local(
                Vector3::new(x, 3.0, z),
                Some(-Vector3::y()),
            ));
        }
        for j in 0..(6.0 / step) as usize {
            let y = -3.0 + offset + j as f64 * step;
            cloud.push(CloudPoint::local(
                Vector3::new(x, y, -1.0),
                Some(Vector3::z()),
            ));
        }
    }
    cloud
}

#[test]
fn corridor_leaves_the_axis_unconstrained() {
    let cfg = OdometryConfig::default();
    let mut map = LocalMap::from_config(&cfg);
    update_local_map(&mut map, &corridor_cloud(0.3, 0.0), &PoseSE3::identity());
    let scan: WeightedCloud = corridor_cloud(0.5, 0.13)
        .iter()
        .filter(|p| p.position.x.abs() < 10.0)
        .copied()
        .collect();
    let init = PoseSE3::from_translation(Vector3::new(0.5, 0.2, 0.1));
    let reg = register_scan(&scan, &map, &init, &cfg).unwrap();

    let eig = SymmetricEigen::new(reg.lambda);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    assert!(min.abs() < 1e-6 * max, "smallest eigenvalue {min} of {max}");
    let i = eig.eigenvalues.imin();
    let axis = eig.eigenvectors.column(i);
    assert!(
        axis[3].abs() > 1.0 - 1e-9,
        "null direction {axis:?} is the corridor translation"
    );

    // Constrained axes are corrected; the corridor axis keeps its guess.
    assert!(reg.pose.translation.y.abs() < 0.02);
    assert!(reg.pose.translation.z.abs() < 0.02);
    assert!((reg.pose.translation.x - 0.5).abs() < 1e-9);
}

#[test]
fn odometry_tracks_the_campus_start() {
    let b = campus();
    let model = LidarModel::default();
    let cfg = OdometryConfig::default();
    let mut odo = Odometry::new(cfg, b.trajectory[0].pose);
    let mut worst: f64 = 0.0;
    for (k, s) in b.trajectory.iter().take(60).enumerate() {
        let theta = 0.3 * k as f64;
        let in_base = model.mount.sensor_in_base(theta);
        let scan = simulate_frame(&b.scene, &model, &s.pose, theta, k as u64)
            .unwrap()
            .transformed(&in_base);
        let reg = odo.process(&scan, &in_base.translation).unwrap();
        worst = worst.max((reg.pose.translation - s.pose.translation).norm());
    }
    assert!(worst < 0.3, "drift {worst}");
}
