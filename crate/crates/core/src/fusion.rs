//! Low-rate alignment of scans to the map prior and gated, saturated drift
//! correction of the odometry output.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cloud::WeightedCloud;
use crate::error::{Error, Result};
use crate::geometry::{se3_exp, se3_log, PoseSE3, TwistSE3};
use crate::odometry::{register_points, OdometryConfig};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub sigma_t: f64,
    pub sigma_r: f64,
    /// Rotation-vs-translation balance of the normalized error.
    pub lambda: f64,
    /// Gate on the normalized error.
    pub tau_g: f64,
    pub window: usize,
    /// Translation saturation (m).
    pub rho_t: f64,
    /// Rotation saturation (rad).
    pub rho_r: f64,
    /// Feedback step in `(0, 1]`.
    pub eta: f64,
    /// Frames between feedback injections.
    pub period: usize,
    /// Feed the rotational part back as well as the translational one.
    pub rotation_feedback: bool,
    /// Correspondence gate of the prior alignment (m).
    pub align_gate: f64,
    pub align_iterations: usize,
    pub align_tolerance: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            sigma_t: 0.5,
            sigma_r: 0.05,
            lambda: 1.0,
            tau_g: 3.0,
            window: 10,
            rho_t: 0.3,
            rho_r: 0.03,
            eta: 0.3,
            period: 10,
            rotation_feedback: false,
            align_gate: 1.5,
            align_iterations: 20,
            align_tolerance: 1e-5,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_t > 0.0
            && self.sigma_r > 0.0
            && self.lambda >= 0.0
            && self.tau_g > 0.0
            && self.window > 0
            && self.rho_t > 0.0
            && self.rho_r > 0.0
            && (0.0..=1.0).contains(&self.eta)
            && self.period > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid fusion configuration {self:?}"
            )))
        }
    }

    fn align_params(&self) -> OdometryConfig {
        OdometryConfig {
            gate: self.align_gate,
            max_iterations: self.align_iterations,
            tolerance: self.align_tolerance,
            ..OdometryConfig::default()
        }
    }
}

/// Prior points with normals, indexed for alignment.
#[derive(Debug, Clone)]
pub struct PriorIndex {
    cloud: WeightedCloud,
    tree: KdTree,
}

impl PriorIndex {
    pub fn new(prior: &WeightedCloud) -> Self {
        let cloud: WeightedCloud = prior
            .iter()
            .filter(|p| p.normal.is_some() && p.class.is_prior())
            .copied()
            .collect();
        let tree = KdTree::build(cloud.iter().map(|p| p.position).collect());
        Self { cloud, tree }
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    /// Transform taking the world-frame scan onto the prior, starting from
    /// `init`; `None` unless the registration converged. Scan points with a
    /// normal are only matched to prior points of a similar orientation.
    pub fn align(
        &self,
        scan_world: &WeightedCloud,
        init: &PoseSE3,
        cfg: &FusionConfig,
    ) -> Option<PriorMatch> {
        if self.is_empty() {
            return None;
        }
        let params = cfg.align_params();
        let gate2 = params.gate * params.gate;
        let pts: Vec<Vector3<f64>> = scan_world.iter().map(|p| p.position).collect();
        let reg = register_points(&pts, init, &params, |pose, i, q| {
            let (j, d2) = self.tree.nearest(q)?;
            let p = &self.cloud.points[j];
            let normal = p.normal.expect("indexed points have normals");
            let agrees = scan_world.points[i]
                .normal
                .is_none_or(|n| (pose.rotation * n).dot(&normal).abs() >= params.normal_agreement);
            (d2 <= gate2 && agrees).then_some((p.position, normal, p.weight))
        });
        if !reg.converged || reg.diverged {
            return None;
        }
        let n = reg.correspondences.len();
        let reliability = reg.correspondences.iter().map(|c| c.weight).sum::<f64>() / n as f64;
        Some(PriorMatch {
            transform: reg.pose,
            reliability,
            correspondences: n,
        })
    }
}

/// Converged alignment against the prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorMatch {
    /// Correction taking the scan onto the prior.
    pub transform: PoseSE3,
    /// Mean reliability of the matched prior points.
    pub reliability: f64,
    pub correspondences: usize,
}

/// Point-to-plane alignment of a world-frame scan to the prior, rows
/// weighted by the prior reliability.
pub fn align_to_prior(
    scan_world: &WeightedCloud,
    prior: &WeightedCloud,
    init: &PoseSE3,
    cfg: &FusionConfig,
) -> Option<PoseSE3> {
    PriorIndex::new(prior)
        .align(scan_world, init, cfg)
        .map(|m| m.transform)
}

/// `xi = Log((T_osm)^-1 T_lo)`.
pub fn compute_residual(t_lo: &PoseSE3, t_osm: &PoseSE3) -> Result<TwistSE3> {
    Ok(se3_log(&(&t_osm.inverse() * t_lo))?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateResult {
    pub e_t: f64,
    pub e_r: f64,
    pub e: f64,
    pub accepted: bool,
    pub reliability: f64,
}

/// `e = sqrt((e_t^2 + lambda e_r^2) / (1 + lambda))`, accepted when `e <= tau_g`.
pub fn gate(xi: &TwistSE3, cfg: &FusionConfig, w_osm: f64) -> GateResult {
    let e_t = xi.v.norm() / cfg.sigma_t;
    let e_r = xi.w.norm() / cfg.sigma_r;
    let e = ((e_t * e_t + cfg.lambda * e_r * e_r) / (1.0 + cfg.lambda)).sqrt();
    GateResult {
        e_t,
        e_r,
        e,
        accepted: e <= cfg.tau_g,
        reliability: w_osm,
    }
}

/// Huber weight with unit threshold.
pub fn huber_weight(e: f64) -> f64 {
    if e <= 1.0 {
        1.0
    } else {
        1.0 / e
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OsmAlignment {
    pub k: usize,
    pub t_osm: PoseSE3,
    /// `Log((T_osm)^-1 T_lo)`.
    pub residual: TwistSE3,
    /// World-frame twist moving the current estimate toward the prior
    /// alignment; same norms as `residual` per block.
    pub correction: TwistSE3,
    pub e_t: f64,
    pub e_r: f64,
    pub e: f64,
    pub reliability: f64,
    pub accepted: bool,
}

impl OsmAlignment {
    /// Residual, gate and world-frame correction of an alignment at frame `k`.
    pub fn new(
        k: usize,
        t_lo: &PoseSE3,
        t_osm: &PoseSE3,
        w_osm: f64,
        cfg: &FusionConfig,
    ) -> Result<Self> {
        let residual = compute_residual(t_lo, t_osm)?;
        let g = gate(&residual, cfg, w_osm);
        let r = t_lo.rotation;
        let correction = TwistSE3::new(-(r * residual.v), -(r * residual.w));
        Ok(Self {
            k,
            t_osm: *t_osm,
            residual,
            correction,
            e_t: g.e_t,
            e_r: g.e_r,
            e: g.e,
            reliability: w_osm,
            accepted: g.accepted,
        })
    }

    /// Effective weight `w_osm * w_H(e)`.
    pub fn weight(&self) -> f64 {
        self.reliability * huber_weight(self.e)
    }
}

/// Saturated translational and rotational corrections; a part is `None`
/// when its weighted direction sum vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub s_t: Option<Vector3<f64>>,
    pub s_r: Option<Vector3<f64>>,
}

fn saturated_mean(items: &[(Vector3<f64>, f64)], rho: f64) -> Option<Vector3<f64>> {
    let sum: Vector3<f64> = items.iter().map(|(v, w)| v * *w).sum();
    let norm = sum.norm();
    if norm < 1e-12 {
        return None;
    }
    let wsum: f64 = items.iter().map(|(_, w)| w).sum();
    let m = items.iter().map(|(v, w)| v.norm() * w).sum::<f64>() / wsum;
    Some(sum / norm * m.min(rho))
}

/// Aggregates weighted twists: normalized weighted direction times the
/// weighted mean magnitude, clamped to the saturation radius.
pub fn aggregate_twists(items: &[(TwistSE3, f64)], cfg: &FusionConfig) -> Option<Aggregate> {
    if items.is_empty() {
        return None;
    }
    let t: Vec<_> = items.iter().map(|(x, w)| (x.v, *w)).collect();
    let r: Vec<_> = items.iter().map(|(x, w)| (x.w, *w)).collect();
    Some(Aggregate {
        s_t: saturated_mean(&t, cfg.rho_t),
        s_r: saturated_mean(&r, cfg.rho_r),
    })
}

/// Aggregates the residuals of the accepted alignments in the window.
pub fn aggregate_window(window: &[OsmAlignment], cfg: &FusionConfig) -> Option<Aggregate> {
    let items: Vec<_> = window
        .iter()
        .filter(|a| a.accepted)
        .map(|a| (a.residual, a.weight()))
        .collect();
    aggregate_twists(&items, cfg)
}

/// Aggregates the world-frame corrections of the accepted alignments.
pub fn aggregate_corrections(window: &[OsmAlignment], cfg: &FusionConfig) -> Option<Aggregate> {
    let items: Vec<_> = window
        .iter()
        .filter(|a| a.accepted)
        .map(|a| (a.correction, a.weight()))
        .collect();
    aggregate_twists(&items, cfg)
}

/// Accumulated correction and the window of recent accepted alignments.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionState {
    pub t_corr: PoseSE3,
    pub window: VecDeque<OsmAlignment>,
    capacity: usize,
}

impl CorrectionState {
    pub fn new(cfg: &FusionConfig) -> Self {
        Self {
            t_corr: PoseSE3::identity(),
            window: VecDeque::with_capacity(cfg.window),
            capacity: cfg.window,
        }
    }

    /// Appends an accepted alignment, dropping the oldest beyond capacity.
    /// Rejected alignments are ignored. Returns whether it entered.
    pub fn push(&mut self, a: OsmAlignment) -> bool {
        if !a.accepted {
            return false;
        }
        self.window.push_back(a);
        while self.window.len() > self.capacity {
            self.window.pop_front();
        }
        true
    }

    pub fn window_slice(&self) -> Vec<OsmAlignment> {
        self.window.iter().copied().collect()
    }

    /// Corrected pose `T_corr * T_lo`.
    pub fn correct(&self, t_lo: &PoseSE3) -> PoseSE3 {
        &self.t_corr * t_lo
    }
}

/// `T_corr <- exp(eta [s_t; s_r]) T_corr` on frames that are multiples of
/// the feedback period; otherwise unchanged.
pub fn apply_feedback(
    state: &CorrectionState,
    s_t: &Vector3<f64>,
    s_r: &Vector3<f64>,
    cfg: &FusionConfig,
    frame_index: usize,
) -> CorrectionState {
    let mut next = state.clone();
    if frame_index % cfg.period != 0 {
        return next;
    }
    let xi = TwistSE3::new(s_t * cfg.eta, s_r * cfg.eta);
    next.t_corr = &se3_exp(&xi) * &state.t_corr;
    next
}

/// Writes the fusion log header.
pub fn write_fusion_header<W: Write>(mut out: W) -> std::io::Result<()> {
    writeln!(out, "k,e_t,e_r,e,accepted,w,||s_t||,||s_r||")
}
