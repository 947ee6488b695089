use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{compute_ape, ExperimentConfig, Strategy, TrajectoryErrorReport};
use crate::cloud::WeightedCloud;
use crate::error::{Error, Result, ResultExt};
use crate::fusion::{
    aggregate_corrections, apply_feedback, write_fusion_header, CorrectionState, OsmAlignment,
    PriorIndex,
};
use crate::geometry::PoseSE3;
use crate::mpc::{step_controller, ControllerState};
use crate::observability::{build_score_table, interp_score, ScoreTable};
use crate::odometry::{estimate_normals, Odometry};
use crate::osm_prior::{
    build_prior, clip_prior, load_dem, parse_osm, write_osm, DemGrid, OsmFootprint,
};
use crate::pano_depth::{fuse_clouds, project_pano, voxel_downsample};
use crate::scene_sim::{
    builtin_scene, dropout_footprints, read_trajectory, simulate_frame, write_trajectory, Scene,
    TrajectorySample,
};

/// Scene, ground truth, full footprint set and terrain of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentInputs {
    pub scene: Scene,
    pub trajectory: Vec<TrajectorySample>,
    pub footprints: Vec<OsmFootprint>,
    pub dem: DemGrid,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

/// Loads a builtin scene or the scene, trajectory, OSM and terrain files
/// named by the config. Builtin footprints pass through OSM XML so both
/// paths share the parser.
pub fn load_inputs(cfg: &ExperimentConfig) -> Result<ExperimentInputs> {
    if let Some(scene_file) = &cfg.scene_file {
        let field = |p: &Option<std::path::PathBuf>| p.clone().expect("validated");
        let scene = Scene::read_text(open(scene_file)?).in_module("scene_sim")?;
        let trajectory =
            read_trajectory(open(&field(&cfg.trajectory_file))?).in_module("scene_sim")?;
        let osm = fs::read(field(&cfg.osm_file))?;
        let footprints = parse_osm(&osm, &cfg.origin)
            .in_module("osm_prior")?
            .footprints;
        let dem = load_dem(&fs::read(field(&cfg.dem_file))?).in_module("osm_prior")?;
        return Ok(ExperimentInputs {
            scene,
            trajectory,
            footprints,
            dem,
        });
    }
    let b = builtin_scene(&cfg.scene).in_module("scene_sim")?;
    let xml = write_osm(b.scene.footprints(), &cfg.origin);
    let footprints = parse_osm(xml.as_bytes(), &cfg.origin)
        .in_module("osm_prior")?
        .footprints;
    Ok(ExperimentInputs {
        scene: b.scene,
        trajectory: b.trajectory,
        footprints,
        dem: b.dem,
    })
}

/// One control period: `J`, `U` and `P` are NaN for the baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerRow {
    pub t: f64,
    pub theta: f64,
    pub omega: f64,
    pub objective: f64,
    pub u: f64,
    pub p: f64,
}

/// One prior alignment attempt; errors are NaN when alignment failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionRow {
    pub k: usize,
    pub e_t: f64,
    pub e_r: f64,
    pub e: f64,
    pub accepted: bool,
    pub w: f64,
    pub s_t: f64,
    pub s_r: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub strategy: Strategy,
    pub ground_truth: Vec<TrajectorySample>,
    /// Raw odometry.
    pub estimated: Vec<TrajectorySample>,
    /// Odometry with the prior correction applied.
    pub corrected: Vec<TrajectorySample>,
    pub controller_log: Vec<ControllerRow>,
    pub fusion_log: Vec<FusionRow>,
    pub report_estimated: TrajectoryErrorReport,
    pub report_corrected: TrajectoryErrorReport,
}

fn frame_seed(seed: u64, k: usize) -> u64 {
    let mut z = seed.wrapping_add((k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn score_table(
    cfg: &ExperimentConfig,
    odo: &Odometry,
    corr: &CorrectionState,
    prior: &WeightedCloud,
    view: &PoseSE3,
) -> Result<ScoreTable> {
    let local = odo.map.to_cloud().transformed(&corr.t_corr);
    let prior_fov = clip_prior(prior, &view.translation, cfg.prior_radius);
    let fused = voxel_downsample(&fuse_clouds(&local, &prior_fov), cfg.pano.voxel)
        .in_module("pano_depth")?;
    let pano = project_pano(
        &fused,
        view,
        cfg.pano.width,
        cfg.pano.height,
        &cfg.pano.bounds,
    )
    .in_module("pano_depth")?;
    build_score_table(
        &pano,
        cfg.observability.delta_theta,
        cfg.lidar.h_fov,
        cfg.observability.epsilon,
    )
    .in_module("observability")
}

/// Runs the closed loop over the whole trajectory: simulate at the current
/// motor angle, register, correct against the prior every fusion period
/// and pick the next motor speed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    run_with_inputs(cfg, &inputs)
}

pub(crate) fn run_with_inputs(
    cfg: &ExperimentConfig,
    inputs: &ExperimentInputs,
) -> Result<ExperimentResult> {
    let gt: Vec<TrajectorySample> = match cfg.max_frames {
        Some(n) => inputs.trajectory.iter().take(n).copied().collect(),
        None => inputs.trajectory.clone(),
    };
    let first = gt
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty trajectory".into()).in_module("scene_sim"))?;
    let kept =
        dropout_footprints(&inputs.footprints, cfg.osm_dropout, cfg.seed).in_module("osm_prior")?;
    let prior = build_prior(
        &kept,
        &inputs.dem,
        cfg.prior.facade_spacing,
        cfg.prior.ground_spacing,
    )
    .in_module("osm_prior")?;
    let index = PriorIndex::new(&prior);

    let period = cfg.lidar.frame_period();
    let mut odo = Odometry::new(cfg.odometry, first.pose);
    let mut corr = CorrectionState::new(&cfg.fusion);
    let mut ctrl = ControllerState {
        theta: cfg.initial_theta,
        ..ControllerState::default()
    };
    let mut table: Option<ScoreTable> = None;
    let mut estimated = Vec::with_capacity(gt.len());
    let mut corrected = Vec::with_capacity(gt.len());
    let mut controller_log = Vec::with_capacity(gt.len());
    let mut fusion_log = Vec::new();

    for (k, sample) in gt.iter().enumerate() {
        let theta = ctrl.theta;
        let scan = simulate_frame(
            &inputs.scene,
            &cfg.lidar,
            &sample.pose,
            theta,
            frame_seed(cfg.seed, k),
        )
        .in_module("scene_sim")?;
        let sensor = cfg.lidar.mount.sensor_in_base(theta);
        let scan_base = scan.transformed(&sensor);
        let reg = odo
            .process(&scan_base, &sensor.translation)
            .in_module("odometry")?;

        if cfg.fusion_enabled && k > 0 && k % cfg.fusion.period == 0 {
            let current = corr.correct(&reg.pose);
            let with_normals = estimate_normals(
                &scan_base,
                cfg.odometry.normal_neighbors,
                &sensor.translation,
                cfg.odometry.max_curvature,
            );
            let attempt = with_normals.ok().and_then(|s| {
                index.align(&s.transformed(&current), &PoseSE3::identity(), &cfg.fusion)
            });
            let mut row = FusionRow {
                k,
                e_t: f64::NAN,
                e_r: f64::NAN,
                e: f64::NAN,
                accepted: false,
                w: f64::NAN,
                s_t: 0.0,
                s_r: 0.0,
            };
            if let Some(m) = attempt {
                let t_osm = &m.transform * &current;
                let a = OsmAlignment::new(k, &current, &t_osm, m.reliability, &cfg.fusion)
                    .in_module("fusion")?;
                row = FusionRow {
                    e_t: a.e_t,
                    e_r: a.e_r,
                    e: a.e,
                    accepted: a.accepted,
                    w: a.weight(),
                    ..row
                };
                corr.push(a);
            }
            if let Some(agg) = aggregate_corrections(&corr.window_slice(), &cfg.fusion) {
                let s_t = agg.s_t.unwrap_or_else(Vector3::zeros);
                let s_r = match agg.s_r {
                    Some(s) if cfg.fusion.rotation_feedback => s,
                    _ => Vector3::zeros(),
                };
                row.s_t = s_t.norm();
                row.s_r = s_r.norm();
                corr = apply_feedback(&corr, &s_t, &s_r, &cfg.fusion, k);
            }
            fusion_log.push(row);
        }

        let current = corr.correct(&reg.pose);
        estimated.push(TrajectorySample {
            time: sample.time,
            pose: reg.pose,
        });
        corrected.push(TrajectorySample {
            time: sample.time,
            pose: current,
        });

        let row = match cfg.strategy {
            Strategy::Static => ControllerRow {
                t: sample.time,
                theta,
                omega: 0.0,
                objective: f64::NAN,
                u: f64::NAN,
                p: f64::NAN,
            },
            Strategy::Constant(w) => ControllerRow {
                t: sample.time,
                theta,
                omega: w,
                objective: f64::NAN,
                u: f64::NAN,
                p: f64::NAN,
            },
            Strategy::Adaptive => {
                if table.is_none() || k % cfg.control_period == 0 {
                    table = Some(score_table(cfg, &odo, &corr, &prior, &current)?);
                }
                let t = table.as_ref().expect("built above");
                let step = step_controller(&ctrl, t, &cfg.mpc).in_module("mpc")?;
                let s = interp_score(t, theta);
                ctrl.warm = step.next.warm;
                ControllerRow {
                    t: sample.time,
                    theta,
                    omega: step.omega,
                    objective: step.plan.objective,
                    u: s.u,
                    p: s.p,
                }
            }
        };
        ctrl.theta = theta + row.omega * period;
        controller_log.push(row);
    }

    let tol = 0.5 * period;
    let report_estimated = compute_ape(&estimated, &gt, tol)?;
    let report_corrected = compute_ape(&corrected, &gt, tol)?;
    Ok(ExperimentResult {
        strategy: cfg.strategy,
        ground_truth: gt,
        estimated,
        corrected,
        controller_log,
        fusion_log,
        report_estimated,
        report_corrected,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub(crate) fn write_report_row<W: Write>(
    out: &mut W,
    label: &str,
    r: &TrajectoryErrorReport,
) -> std::io::Result<()> {
    writeln!(
        out,
        "{label},{},{:.9},{:.9},{:.9},{:.9}",
        r.len(),
        r.mean_ape,
        r.rmse.x,
        r.rmse.y,
        r.rmse.z
    )
}

impl ExperimentResult {
    /// Writes the trajectories, the APE report and both logs into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut f = create(dir, "trajectory_est.txt")?;
        write_trajectory(&self.estimated, &mut f)?;
        f.flush()?;
        let mut f = create(dir, "trajectory_corrected.txt")?;
        write_trajectory(&self.corrected, &mut f)?;
        f.flush()?;

        let mut f = create(dir, "ape_report.csv")?;
        writeln!(f, "trajectory,frames,mean_ape,rmse_x,rmse_y,rmse_z")?;
        write_report_row(&mut f, "estimated", &self.report_estimated)?;
        write_report_row(&mut f, "corrected", &self.report_corrected)?;
        f.flush()?;

        let mut f = create(dir, "controller_log.csv")?;
        writeln!(f, "t,theta,omega_applied,J,U_at_theta,P_at_theta")?;
        for r in &self.controller_log {
            writeln!(
                f,
                "{:.6},{:.9},{:.9},{:.9},{:.9},{:.9}",
                r.t, r.theta, r.omega, r.objective, r.u, r.p
            )?;
        }
        f.flush()?;

        let mut f = create(dir, "fusion_log.csv")?;
        write_fusion_header(&mut f)?;
        for r in &self.fusion_log {
            writeln!(
                f,
                "{},{:.9},{:.9},{:.9},{},{:.9},{:.9},{:.9}",
                r.k, r.e_t, r.e_r, r.e, r.accepted as u8, r.w, r.s_t, r.s_r
            )?;
        }
        f.flush()?;
        Ok(())
    }
}
