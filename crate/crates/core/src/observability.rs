//! A-optimal observability of point-to-plane constraints per motor angle,
//! pre-sampled on an angular grid and interpolated.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{Matrix6, RowVector6, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, skew, wrap_two_pi, RotationMatrix};
use crate::pano_depth::{unproject_pixel, PanoDepthImage};

/// 6x6 information matrix; rows/columns 0..3 rotation, 3..6 translation.
pub type InfoMatrix = Matrix6<f64>;

/// Relative eigenvalue floor under which an unregularized matrix counts as
/// singular.
const SINGULAR_TOL: f64 = 1e-12;

/// `[ (R p) x n , n ]`.
pub fn point_jacobian(
    p: &Vector3<f64>,
    n: &Vector3<f64>,
    r: &RotationMatrix,
) -> Result<RowVector6<f64>> {
    if (n.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "normal {n:?} is not unit length"
        )));
    }
    let rot = skew(&(r * p)) * n;
    Ok(RowVector6::new(rot.x, rot.y, rot.z, n.x, n.y, n.z))
}

/// `sum_i J_i^T J_i`.
pub fn accumulate_info(rows: &[RowVector6<f64>]) -> InfoMatrix {
    rows.iter()
        .fold(InfoMatrix::zeros(), |acc, j| acc + j.transpose() * j)
}

/// `tr((L + eps I)^-1)`; infinite when the regularized matrix is singular.
pub fn a_opt_score(lambda: &InfoMatrix, epsilon: f64) -> f64 {
    let m = lambda + InfoMatrix::identity() * epsilon;
    let eig = SymmetricEigen::new(m);
    let max = eig.eigenvalues.max().abs().max(f64::MIN_POSITIVE);
    let min = eig.eigenvalues.min();
    if !(min > SINGULAR_TOL * max.max(1.0)) {
        return f64::INFINITY;
    }
    match m.cholesky() {
        Some(ch) => ch.inverse().trace(),
        None => f64::INFINITY,
    }
}

/// Largest A-optimal score a regularized matrix can reach, `6 / eps`.
pub fn score_cap(epsilon: f64) -> f64 {
    6.0 / epsilon
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    /// Sensor-derived local map: uncertainty `U`.
    Local,
    /// Map prior: utility `P`.
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservabilityConfig {
    /// Grid step of the score table (rad).
    pub delta_theta: f64,
    /// Regularizer added to every information matrix.
    pub epsilon: f64,
}

impl Default for ObservabilityConfig {
    fn default() -> Self {
        Self {
            delta_theta: 10f64.to_radians(),
            epsilon: 1e-3,
        }
    }
}

/// Per-column information of both sources, the building block of every
/// sector score.
#[derive(Debug, Clone)]
pub struct ColumnInfo {
    azimuth: Vec<f64>,
    local: Vec<InfoMatrix>,
    prior: Vec<InfoMatrix>,
    local_count: Vec<usize>,
    prior_count: Vec<usize>,
}

impl ColumnInfo {
    pub fn from_pano(pano: &PanoDepthImage) -> Self {
        let w = pano.width;
        let mut info = ColumnInfo {
            azimuth: (0..w).map(|u| pano.column_azimuth(u)).collect(),
            local: vec![InfoMatrix::zeros(); w],
            prior: vec![InfoMatrix::zeros(); w],
            local_count: vec![0; w],
            prior_count: vec![0; w],
        };
        let id = RotationMatrix::identity();
        for v in 0..pano.height {
            for u in 0..w {
                let Some(pt) = unproject_pixel(pano, u, v) else {
                    continue;
                };
                let px = pano.pixel(u, v);
                // A radial fallback normal says nothing about the surface, so
                // the pixel occupies the sector without adding information.
                let info_of = |w: f64| match pt.radial_normal {
                    true => InfoMatrix::zeros(),
                    false => {
                        let row =
                            point_jacobian(&pt.position, &pt.normal, &id).expect("unit normal");
                        row.transpose() * row * w
                    }
                };
                if px.class.is_prior() {
                    info.prior[u] += info_of(px.weight);
                    info.prior_count[u] += 1;
                } else {
                    info.local[u] += info_of(1.0);
                    info.local_count[u] += 1;
                }
            }
        }
        info
    }

    /// Information of a source over columns centred within `fov / 2` of
    /// `theta`, with the number of contributing pixels.
    pub fn sector(&self, theta: f64, sensor_fov: f64, source: ScoreSource) -> (InfoMatrix, usize) {
        let (mats, counts) = match source {
            ScoreSource::Local => (&self.local, &self.local_count),
            ScoreSource::Prior => (&self.prior, &self.prior_count),
        };
        let mut sum = InfoMatrix::zeros();
        let mut n = 0;
        for (u, &a) in self.azimuth.iter().enumerate() {
            if normalize_angle(a - theta).abs() <= 0.5 * sensor_fov {
                sum += mats[u];
                n += counts[u];
            }
        }
        (sum, n)
    }

    fn score(&self, theta: f64, sensor_fov: f64, source: ScoreSource, epsilon: f64) -> f64 {
        let (lambda, n) = self.sector(theta, sensor_fov, source);
        match source {
            ScoreSource::Local if n == 0 => f64::INFINITY,
            ScoreSource::Local => a_opt_score(&lambda, epsilon),
            ScoreSource::Prior if n == 0 => 0.0,
            ScoreSource::Prior => prior_utility(&lambda, epsilon),
        }
    }
}

/// `s_max - min(tr((L + eps I)^-1), s_max)` with `s_max = 6 / eps`: richer
/// prior geometry scores higher.
pub fn prior_utility(lambda_prior: &InfoMatrix, epsilon: f64) -> f64 {
    let cap = score_cap(epsilon);
    cap - a_opt_score(lambda_prior, epsilon).min(cap)
}

/// Raw `tr((L + eps I)^-1)` of the prior points in a sector.
pub fn prior_trace(pano: &PanoDepthImage, theta: f64, sensor_fov: f64, epsilon: f64) -> f64 {
    let (lambda, _) = ColumnInfo::from_pano(pano).sector(theta, sensor_fov, ScoreSource::Prior);
    a_opt_score(&lambda, epsilon)
}

/// `U(theta)` (lower is better, infinite for an empty sector) or `P(theta)`
/// (higher is better, zero for an empty sector).
pub fn score_direction(
    pano: &PanoDepthImage,
    theta: f64,
    sensor_fov: f64,
    source: ScoreSource,
    epsilon: f64,
) -> f64 {
    ColumnInfo::from_pano(pano).score(theta, sensor_fov, source, epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreSample {
    pub u: f64,
    pub p: f64,
}

/// `U` and `P` at `theta_k = k * delta_theta` for one full turn.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub delta_theta: f64,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
}

impl ScoreTable {
    pub fn new(delta_theta: f64, u: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        let n = grid_size(delta_theta)?;
        if u.len() != n || p.len() != n {
            return Err(Error::InvalidArgument(format!(
                "score table needs {n} entries per source"
            )));
        }
        if u.iter().chain(&p).any(|x| x.is_nan()) {
            return Err(Error::InvalidArgument("score table contains NaN".into()));
        }
        Ok(Self { delta_theta, u, p })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn angle(&self, k: usize) -> f64 {
        k as f64 * self.delta_theta
    }

    /// Every `U` entry is the empty-sector sentinel.
    pub fn is_degenerate(&self) -> bool {
        self.u.iter().all(|u| u.is_infinite())
    }

    /// Copy with `U` entries limited to `cap` (turns sentinels finite).
    pub fn capped(&self, cap: f64) -> Self {
        Self {
            delta_theta: self.delta_theta,
            u: self.u.iter().map(|u| u.min(cap)).collect(),
            p: self.p.clone(),
        }
    }

    /// Writes `theta_deg,U,P` with a header row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "theta_deg,U,P")?;
        for k in 0..self.len() {
            writeln!(
                out,
                "{},{},{}",
                self.angle(k).to_degrees(),
                self.u[k],
                self.p[k]
            )?;
        }
        Ok(())
    }
}

fn grid_size(delta_theta: f64) -> Result<usize> {
    if !(delta_theta > 0.0 && delta_theta <= TAU) {
        return Err(Error::InvalidArgument(format!(
            "grid step {delta_theta} must be in (0, 2pi]"
        )));
    }
    let n = (TAU / delta_theta).round();
    if (n * delta_theta - TAU).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "grid step {delta_theta} does not divide a full turn"
        )));
    }
    Ok(n as usize)
}

/// Scores both sources at every grid angle.
pub fn build_score_table(
    pano: &PanoDepthImage,
    delta_theta: f64,
    sensor_fov: f64,
    epsilon: f64,
) -> Result<ScoreTable> {
    let n = grid_size(delta_theta)?;
    let cols = ColumnInfo::from_pano(pano);
    let angles: Vec<f64> = (0..n).map(|k| k as f64 * delta_theta).collect();
    let u = angles
        .iter()
        .map(|&a| cols.score(a, sensor_fov, ScoreSource::Local, epsilon))
        .collect();
    let p = angles
        .iter()
        .map(|&a| cols.score(a, sensor_fov, ScoreSource::Prior, epsilon))
        .collect();
    ScoreTable::new(delta_theta, u, p)
}

fn knots(table: &ScoreTable, theta: f64) -> (usize, usize, f64) {
    let n = table.len();
    let x = wrap_two_pi(theta) / table.delta_theta;
    let k = x.floor();
    let xi = x - k;
    let k = (k as usize) % n;
    (k, (k + 1) % n, xi)
}

fn lerp(a: f64, b: f64, xi: f64) -> f64 {
    if a.is_infinite() || b.is_infinite() {
        return f64::INFINITY;
    }
    (1.0 - xi) * a + xi * b
}

/// `(1 - xi) U_k + xi U_{k+1}` with `k = floor(theta / dtheta)`, wrapping.
pub fn interp_score(table: &ScoreTable, theta: f64) -> ScoreSample {
    let (k, k1, xi) = knots(table, theta);
    ScoreSample {
        u: lerp(table.u[k], table.u[k1], xi),
        p: lerp(table.p[k], table.p[k1], xi),
    }
}

/// Slopes `dU/dtheta`, `dP/dtheta` of the interpolant; right-hand at knots.
pub fn interp_slope(table: &ScoreTable, theta: f64) -> ScoreSample {
    let (k, k1, _) = knots(table, theta);
    ScoreSample {
        u: (table.u[k1] - table.u[k]) / table.delta_theta,
        p: (table.p[k1] - table.p[k]) / table.delta_theta,
    }
}
