//! Point-to-plane scan-matching odometry over a voxel-hashed local map.

use indexmap::IndexMap;
use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::cloud::{CloudPoint, PointClass, WeightedCloud};
use crate::error::{Error, Result};
use crate::geometry::{se3_exp, se3_log, so3_exp, PoseSE3};
use crate::observability::{accumulate_info, point_jacobian, InfoMatrix};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdometryConfig {
    /// Huber threshold on point-to-plane residuals (m).
    pub huber: f64,
    /// Maximum correspondence distance (m).
    pub gate: f64,
    pub max_iterations: usize,
    /// Step norm below which the registration has converged.
    pub tolerance: f64,
    pub min_correspondences: usize,
    pub voxel: f64,
    pub horizon: f64,
    pub capacity: usize,
    pub normal_neighbors: usize,
    /// Largest surface variation `l_min / (l_0 + l_1 + l_2)` accepted for a
    /// normal.
    pub max_curvature: f64,
    /// Directions whose information per correspondence falls below this
    /// fraction are treated as unconstrained: no update is taken along them.
    pub degeneracy_fraction: f64,
    /// Length (m) converting rotations to translations when comparing
    /// information across the two blocks.
    pub degeneracy_length: f64,
    /// Map points fitted to each correspondence plane.
    pub plane_neighbors: usize,
    /// Largest distance of a fitted map point from its plane (m).
    pub plane_tolerance: f64,
    /// Smallest `l_mid / l_max` of the fitted map points; rejects nearly
    /// collinear neighbourhoods whose normal is ill-defined.
    pub min_flatness: f64,
    /// Smallest `|n_scan . n_map|` of a correspondence; scan points without
    /// a normal are not matched.
    pub normal_agreement: f64,
    /// Frames spanned by the constant-velocity estimate; 1 extrapolates the
    /// last two poses.
    pub velocity_window: usize,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self {
            huber: 0.1,
            gate: 1.0,
            max_iterations: 15,
            tolerance: 1e-6,
            min_correspondences: 10,
            voxel: 0.3,
            horizon: 80.0,
            capacity: 200_000,
            normal_neighbors: 8,
            max_curvature: 0.05,
            degeneracy_fraction: 0.005,
            degeneracy_length: 10.0,
            plane_neighbors: 5,
            plane_tolerance: 0.05,
            min_flatness: 0.1,
            normal_agreement: 0.95,
            velocity_window: 5,
        }
    }
}

/// Best-fit plane normal, surface variation `l_min / sum(l)` and flatness
/// `l_mid / l_max` of the points' covariance.
fn plane_fit(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, f64, f64)> {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let cov = points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    }) / n;
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l0, l1, l2) = (
        eig.eigenvalues[idx[0]],
        eig.eigenvalues[idx[1]],
        eig.eigenvalues[idx[2]],
    );
    if !(l1 > 1e-9 * l2.max(f64::MIN_POSITIVE)) {
        return None;
    }
    let normal = eig.eigenvectors.column(idx[0]).normalize();
    Some((normal, l0.max(0.0) / (l0 + l1 + l2), l1 / l2))
}

/// Normals from the smallest principal axis of each point's `k` nearest
/// neighbours, turned toward `viewpoint`. Points with a collinear or too
/// curved neighbourhood get no normal.
pub fn estimate_normals(
    cloud: &WeightedCloud,
    k: usize,
    viewpoint: &Vector3<f64>,
    max_curvature: f64,
) -> Result<WeightedCloud> {
    if k < 3 || k > cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "{k} neighbours requested from {} points",
            cloud.len()
        )));
    }
    let tree = KdTree::build(cloud.iter().map(|p| p.position).collect());
    Ok(cloud
        .iter()
        .map(|p| {
            let nbrs: Vec<Vector3<f64>> = tree
                .knn(&p.position, k)
                .iter()
                .map(|&(i, _)| *tree.point(i))
                .collect();
            let normal = plane_fit(&nbrs)
                .filter(|&(_, c, _)| c <= max_curvature)
                .map(|(n, _, _)| {
                    if n.dot(&(viewpoint - p.position)) < 0.0 {
                        -n
                    } else {
                        n
                    }
                });
            CloudPoint { normal, ..*p }
        })
        .collect())
}

/// Sparse local map: at most one point per voxel, bounded around the
/// latest pose and by a FIFO capacity.
#[derive(Debug, Clone)]
pub struct LocalMap {
    voxel: f64,
    horizon: f64,
    capacity: usize,
    cells: IndexMap<[i64; 3], CloudPoint>,
    tree: KdTree,
}

impl LocalMap {
    pub fn new(voxel: f64, horizon: f64, capacity: usize) -> Self {
        Self {
            voxel,
            horizon,
            capacity,
            cells: IndexMap::new(),
            tree: KdTree::build(Vec::new()),
        }
    }

    pub fn from_config(cfg: &OdometryConfig) -> Self {
        Self::new(cfg.voxel, cfg.horizon, cfg.capacity)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn voxel_of(&self, p: &Vector3<f64>) -> [i64; 3] {
        let v = self.voxel;
        [
            (p.x / v).floor() as i64,
            (p.y / v).floor() as i64,
            (p.z / v).floor() as i64,
        ]
    }

    pub fn voxels(&self) -> impl Iterator<Item = &[i64; 3]> {
        self.cells.keys()
    }

    pub fn points(&self) -> impl Iterator<Item = &CloudPoint> {
        self.cells.values()
    }

    pub fn to_cloud(&self) -> WeightedCloud {
        self.cells.values().copied().collect()
    }

    /// Up to `k` nearest map points, closest first, with squared distances.
    pub fn knn(&self, q: &Vector3<f64>, k: usize) -> Vec<(&CloudPoint, f64)> {
        self.tree
            .knn(q, k)
            .into_iter()
            .map(|(i, d2)| (&self.cells[i], d2))
            .collect()
    }

    /// Nearest map point, with its squared distance.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(&CloudPoint, f64)> {
        self.tree.nearest(q).map(|(i, d2)| (&self.cells[i], d2))
    }
}

/// Inserts world-frame points into vacant voxels, then evicts points beyond
/// the horizon of `pose` and the oldest points above capacity.
pub fn update_local_map(map: &mut LocalMap, scan_world: &WeightedCloud, pose: &PoseSE3) {
    for p in scan_world {
        let key = map.voxel_of(&p.position);
        map.cells.entry(key).or_insert(CloudPoint {
            class: PointClass::Local,
            ..*p
        });
    }
    let center = pose.translation;
    let r2 = map.horizon * map.horizon;
    map.cells
        .retain(|_, p| (p.position - center).norm_squared() <= r2);
    if map.cells.len() > map.capacity {
        let excess = map.cells.len() - map.capacity;
        map.cells.drain(..excess);
    }
    map.tree = KdTree::build(map.cells.values().map(|p| p.position).collect());
}

/// Point-to-plane target of one scan point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Scan point in the frame being registered.
    pub source: Vector3<f64>,
    pub target: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// Reliability of the target, scaling its residual row by `sqrt(w)`.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub pose: PoseSE3,
    pub converged: bool,
    /// Fewer than the minimum number of correspondences; `pose` is the
    /// initial guess.
    pub diverged: bool,
    pub iterations: usize,
    /// Unweighted information of the final correspondence set.
    pub lambda: InfoMatrix,
    pub correspondences: Vec<Correspondence>,
    /// Robust cost before and after each iteration's accepted step, on that
    /// iteration's correspondences.
    pub cost_history: Vec<(f64, f64)>,
}

fn huber_cost(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn robust_cost(corr: &[Correspondence], pose: &PoseSE3, delta: f64) -> f64 {
    corr.iter()
        .map(|c| {
            c.weight
                * huber_cost(
                    c.normal.dot(&(pose.transform_point(&c.source) - c.target)),
                    delta,
                )
        })
        .sum()
}

/// Left update `R <- exp(w) R`, `t <- t + v` used by the registration.
pub fn apply_increment(pose: &PoseSE3, delta: &Vector6<f64>) -> PoseSE3 {
    let w = Vector3::new(delta[0], delta[1], delta[2]);
    let v = Vector3::new(delta[3], delta[4], delta[5]);
    let mut rotation = so3_exp(&w) * pose.rotation;
    rotation.renormalize();
    PoseSE3::new(rotation, pose.translation + v)
}

/// `-(H + damping I)^-1 g` restricted to the eigen-directions of `H` whose
/// eigenvalue reaches `min_eigenvalue`; the others keep the initial guess.
fn damped_step(
    eig: &SymmetricEigen<f64, nalgebra::U6>,
    g: &Vector6<f64>,
    damping: f64,
    min_eigenvalue: f64,
) -> Vector6<f64> {
    let mut delta = Vector6::zeros();
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l >= min_eigenvalue && l > 0.0 {
            let v = eig.eigenvectors.column(i);
            delta -= v * (v.dot(g) / (l + damping));
        }
    }
    delta
}

/// Robust Gauss-Newton with Levenberg damping over correspondences found by
/// `find(pose, i, world_point)` for scan point `i`. Each accepted step lowers
/// the robust cost on its correspondences.
pub fn register_points<F>(
    scan: &[Vector3<f64>],
    init: &PoseSE3,
    cfg: &OdometryConfig,
    mut find: F,
) -> Registration
where
    F: FnMut(&PoseSE3, usize, &Vector3<f64>) -> Option<(Vector3<f64>, Vector3<f64>, f64)>,
{
    let gather = |pose: &PoseSE3, find: &mut F| -> Vec<Correspondence> {
        scan.iter()
            .enumerate()
            .filter_map(|(i, p)| {
                find(pose, i, &pose.transform_point(p)).map(|(target, normal, weight)| {
                    Correspondence {
                        source: *p,
                        target,
                        normal,
                        weight,
                    }
                })
            })
            .collect()
    };
    let mut pose = *init;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut corr = gather(&pose, &mut find);
    if corr.len() < cfg.min_correspondences {
        return Registration {
            pose: *init,
            converged: false,
            diverged: true,
            iterations: 0,
            lambda: InfoMatrix::zeros(),
            correspondences: corr,
            cost_history: history,
        };
    }
    let mut mu = 1e-6;
    while iterations < cfg.max_iterations {
        iterations += 1;
        // Rotations scaled by the degeneracy length so both blocks share units.
        let scale_of = |i: usize| {
            if i < 3 {
                1.0 / cfg.degeneracy_length
            } else {
                1.0
            }
        };
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        let mut wsum = 0.0;
        for c in &corr {
            let rp = pose.rotation * c.source;
            let r = c.normal.dot(&(rp + pose.translation - c.target));
            let j = point_jacobian(&c.source, &c.normal, &pose.rotation).expect("unit normal");
            let js = Vector6::from_fn(|i, _| j[i] * scale_of(i));
            let w = c.weight
                * if r.abs() <= cfg.huber {
                    1.0
                } else {
                    cfg.huber / r.abs()
                };
            h += js * js.transpose() * w;
            g += js * (w * r);
            wsum += w;
        }
        let cost0 = robust_cost(&corr, &pose, cfg.huber);
        let eig = SymmetricEigen::new(h);
        let scale = eig.eigenvalues.max().max(1e-12);
        let min_info = cfg.degeneracy_fraction * wsum;
        let mut step = None;
        for _ in 0..12 {
            let delta = damped_step(&eig, &g, mu * scale, min_info);
            let delta = Vector6::from_fn(|i, _| delta[i] * scale_of(i));
            let cand = apply_increment(&pose, &delta);
            let cost1 = robust_cost(&corr, &cand, cfg.huber);
            if cost1 <= cost0 {
                mu = (mu * 0.3).max(1e-9);
                step = Some((cand, delta.norm(), cost1));
                break;
            }
            mu *= 10.0;
        }
        let Some((cand, norm, cost1)) = step else {
            history.push((cost0, cost0));
            converged = true;
            break;
        };
        history.push((cost0, cost1));
        pose = cand;
        if norm < cfg.tolerance {
            converged = true;
            break;
        }
        corr = gather(&pose, &mut find);
        if corr.len() < cfg.min_correspondences {
            break;
        }
    }
    let rows: Vec<_> = corr
        .iter()
        .map(|c| point_jacobian(&c.source, &c.normal, &pose.rotation).expect("unit normal"))
        .collect();
    Registration {
        pose,
        converged,
        diverged: false,
        iterations,
        lambda: accumulate_info(&rows),
        correspondences: corr,
        cost_history: history,
    }
}

/// Registers a scan (in the frame whose pose is sought) against the local
/// map, starting from `init`.
pub fn register_scan(
    scan: &WeightedCloud,
    map: &LocalMap,
    init: &PoseSE3,
    cfg: &OdometryConfig,
) -> Result<Registration> {
    if map.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot register against an empty map".into(),
        ));
    }
    let pts: Vec<Vector3<f64>> = scan.iter().map(|p| p.position).collect();
    let gate2 = cfg.gate * cfg.gate;
    let k = cfg.plane_neighbors.max(3);
    Ok(register_points(&pts, init, cfg, |pose, i, q| {
        let nn = map.knn(q, k);
        if nn.len() < k || nn.iter().any(|&(_, d2)| d2 > gate2) {
            return None;
        }
        let members: Vec<Vector3<f64>> = nn.iter().map(|(p, _)| p.position).collect();
        let (normal, _, flatness) = plane_fit(&members)?;
        if flatness < cfg.min_flatness {
            return None;
        }
        let n = scan.points[i].normal?;
        if (pose.rotation * n).dot(&normal).abs() < cfg.normal_agreement {
            return None;
        }
        let centroid = members.iter().sum::<Vector3<f64>>() / k as f64;
        let in_plane = |v: Vector3<f64>| (v - normal * normal.dot(&v)).norm();
        // The query must fall inside the patch, not extrapolate beyond it.
        let reach = members
            .iter()
            .map(|m| in_plane(m - centroid))
            .fold(0.0, f64::max);
        (in_plane(q - centroid) <= reach
            && members
                .iter()
                .all(|m| normal.dot(&(m - centroid)).abs() <= cfg.plane_tolerance))
        .then_some((centroid, normal, 1.0))
    }))
}

/// Odometry state: the local map and the pose history of the odometry
/// frame.
#[derive(Debug, Clone)]
pub struct Odometry {
    pub cfg: OdometryConfig,
    pub map: LocalMap,
    poses: Vec<PoseSE3>,
}

impl Odometry {
    pub fn new(cfg: OdometryConfig, initial: PoseSE3) -> Self {
        Self {
            cfg,
            map: LocalMap::from_config(&cfg),
            poses: vec![initial],
        }
    }

    pub fn latest(&self) -> &PoseSE3 {
        self.poses
            .last()
            .expect("history starts with the initial pose")
    }

    /// Constant-velocity extrapolation: the mean per-frame body twist over
    /// the last `velocity_window` frames applied once more.
    pub fn predict(&self) -> PoseSE3 {
        let n = self.poses.len();
        let m = self.cfg.velocity_window.max(1).min(n - 1);
        let b = &self.poses[n - 1];
        if m == 0 {
            return *b;
        }
        let a = &self.poses[n - 1 - m];
        match se3_log(&(&a.inverse() * b)) {
            Ok(xi) => b * &se3_exp(&xi.scale(1.0 / m as f64)),
            Err(_) => *b,
        }
    }

    /// Estimates normals of a base-frame scan taken from `sensor_origin`,
    /// registers it and inserts it into the map. A scan arriving at an empty
    /// map only seeds it at the predicted pose.
    pub fn process(
        &mut self,
        scan_base: &WeightedCloud,
        sensor_origin: &Vector3<f64>,
    ) -> Result<Registration> {
        let scan = if scan_base.len() >= self.cfg.normal_neighbors {
            estimate_normals(
                scan_base,
                self.cfg.normal_neighbors,
                sensor_origin,
                self.cfg.max_curvature,
            )?
        } else {
            scan_base.clone()
        };
        let reg = if self.map.is_empty() {
            let pose = self.predict();
            Registration {
                pose,
                converged: true,
                diverged: false,
                iterations: 0,
                lambda: InfoMatrix::zeros(),
                correspondences: Vec::new(),
                cost_history: Vec::new(),
            }
        } else {
            let init = self.predict();
            register_scan(&scan, &self.map, &init, &self.cfg)?
        };
        let with_normals: WeightedCloud = scan
            .iter()
            .filter(|p| p.normal.is_some())
            .copied()
            .collect();
        update_local_map(
            &mut self.map,
            &with_normals.transformed(&reg.pose),
            &reg.pose,
        );
        self.poses.push(reg.pose);
        Ok(reg)
    }
}
