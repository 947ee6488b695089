//! Receding-horizon motor speed control over the interpolated score table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observability::{interp_score, interp_slope, score_cap, ScoreTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Weight of the odometry uncertainty term.
    pub alpha: f64,
    /// Weight of the speed smoothness term.
    pub beta: f64,
    /// Weight of the prior utility term.
    pub gamma: f64,
    pub omega_ref: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub iterations: usize,
    /// Regularizer of the scores; sentinels are capped at `6 / epsilon`.
    pub epsilon: f64,
    /// Speed levels of the lattice searched exactly to seed the descent.
    pub lattice_levels: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.1,
            alpha: 1.0,
            beta: 0.1,
            gamma: 1.0,
            omega_ref: 3.0,
            omega_min: 0.5,
            omega_max: 12.0,
            iterations: 30,
            epsilon: 1e-3,
            lattice_levels: 48,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.horizon >= 1
            && self.dt > 0.0
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && self.gamma >= 0.0
            && self.omega_min >= 0.0
            && self.omega_min <= self.omega_ref
            && self.omega_ref <= self.omega_max
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid MPC configuration {self:?}"
            )))
        }
    }

    fn clamp(&self, w: f64) -> f64 {
        w.clamp(self.omega_min, self.omega_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotorPlan {
    /// `omega_0 .. omega_{N-1}`.
    pub speeds: Vec<f64>,
    /// `theta_1 .. theta_N`, unwrapped.
    pub angles: Vec<f64>,
    pub objective: f64,
    /// Set when the table carried no usable information and the plan fell
    /// back to the warm start or the reference speed.
    pub degraded: bool,
}

impl MotorPlan {
    fn from_speeds(speeds: Vec<f64>, theta0: f64, table: &ScoreTable, cfg: &MpcConfig) -> Self {
        let angles = predict_angles(theta0, &speeds, cfg.dt);
        let objective = evaluate_objective(&speeds, theta0, table, cfg);
        Self {
            speeds,
            angles,
            objective,
            degraded: false,
        }
    }

    /// Drops the first control and repeats the last one.
    pub fn shifted(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.speeds.iter().skip(1).copied().collect();
        s.push(*self.speeds.last().expect("plan is non-empty"));
        s
    }
}

/// `theta_{i+1} = theta_i + omega_i dt`.
pub fn predict_angles(theta0: f64, speeds: &[f64], dt: f64) -> Vec<f64> {
    let mut theta = theta0;
    speeds
        .iter()
        .map(|w| {
            theta += w * dt;
            theta
        })
        .collect()
}

/// `J = alpha sum U(theta_i) + beta sum (omega_i - omega_ref)^2 - gamma sum P(theta_i)`,
/// scores over `theta_1..theta_N`, smoothness over `omega_0..omega_{N-1}`.
pub fn evaluate_objective(speeds: &[f64], theta0: f64, table: &ScoreTable, cfg: &MpcConfig) -> f64 {
    let mut theta = theta0;
    let mut j = 0.0;
    for &w in speeds {
        theta += w * cfg.dt;
        let s = interp_score(table, theta);
        j += cfg.alpha * s.u - cfg.gamma * s.p + cfg.beta * (w - cfg.omega_ref).powi(2);
    }
    j
}

/// `dJ/domega_i = 2 beta (omega_i - omega_ref) + dt sum_{j > i} (alpha U'(theta_j) - gamma P'(theta_j))`.
pub fn objective_gradient(
    speeds: &[f64],
    theta0: f64,
    table: &ScoreTable,
    cfg: &MpcConfig,
) -> Vec<f64> {
    let angles = predict_angles(theta0, speeds, cfg.dt);
    let n = speeds.len();
    let mut tail = 0.0;
    let mut g = vec![0.0; n];
    for i in (0..n).rev() {
        let s = interp_slope(table, angles[i]);
        tail += cfg.alpha * s.u - cfg.gamma * s.p;
        g[i] = 2.0 * cfg.beta * (speeds[i] - cfg.omega_ref) + cfg.dt * tail;
    }
    g
}

/// Projected gradient descent with backtracking from one start.
fn descend(
    mut w: Vec<f64>,
    mut j: f64,
    theta0: f64,
    table: &ScoreTable,
    cfg: &MpcConfig,
) -> (Vec<f64>, f64) {
    const ARMIJO: f64 = 1e-4;
    let span = (cfg.omega_max - cfg.omega_min).max(1e-9);
    for _ in 0..cfg.iterations {
        let g = objective_gradient(&w, theta0, table, cfg);
        let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if !(gmax > 0.0) || !gmax.is_finite() {
            break;
        }
        let mut step = span / gmax;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = w
                .iter()
                .zip(&g)
                .map(|(wi, gi)| cfg.clamp(wi - step * gi))
                .collect();
            let decrease: f64 = g
                .iter()
                .zip(cand.iter().zip(&w))
                .map(|(gi, (c, wi))| gi * (wi - c))
                .sum();
            if decrease <= 0.0 {
                break;
            }
            let jc = evaluate_objective(&cand, theta0, table, cfg);
            if jc <= j - ARMIJO * decrease {
                w = cand;
                j = jc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (w, j)
}

/// Exact minimizer over speeds restricted to `lattice_levels + 1` evenly
/// spaced values. Angles then live on a lattice too, so the horizon is a
/// shortest-path problem over at most `N * levels + 1` angle states.
fn lattice_plan(theta0: f64, table: &ScoreTable, cfg: &MpcConfig) -> Vec<f64> {
    let m = cfg.lattice_levels;
    let n = cfg.horizon;
    let delta = (cfg.omega_max - cfg.omega_min) / m as f64;
    let speed = |l: usize| {
        if l == m {
            cfg.omega_max
        } else {
            cfg.omega_min + delta * l as f64
        }
    };
    // cost[s]: best cost of reaching cumulative lattice offset s.
    let mut cost = vec![0.0f64];
    let mut choice: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut next = vec![f64::INFINITY; (i + 1) * m + 1];
        let mut arg = vec![0usize; next.len()];
        for (s, &c) in cost.iter().enumerate() {
            for l in 0..=m {
                let w = speed(l);
                let theta =
                    theta0 + cfg.dt * ((i + 1) as f64 * cfg.omega_min + delta * (s + l) as f64);
                let sc = interp_score(table, theta);
                let total = c + cfg.alpha * sc.u - cfg.gamma * sc.p
                    + cfg.beta * (w - cfg.omega_ref).powi(2);
                if total < next[s + l] {
                    next[s + l] = total;
                    arg[s + l] = l;
                }
            }
        }
        cost = next;
        choice.push(arg);
    }
    let mut s = (0..cost.len())
        .min_by(|&a, &b| cost[a].total_cmp(&cost[b]))
        .expect("lattice is non-empty");
    let mut levels = vec![0usize; n];
    for i in (0..n).rev() {
        levels[i] = choice[i][s];
        s -= levels[i];
    }
    levels.into_iter().map(speed).collect()
}

/// Optimizes the speed sequence by projected gradient descent from the
/// warm start (or the reference speed) and from the exact lattice optimum,
/// keeping the best result. The returned objective never exceeds that of
/// the warm start.
pub fn solve(
    theta0: f64,
    warm: Option<&[f64]>,
    table: &ScoreTable,
    cfg: &MpcConfig,
) -> Result<MotorPlan> {
    cfg.validate()?;
    let n = cfg.horizon;
    let warm: Vec<f64> = match warm {
        Some(w) if w.len() == n => w.iter().map(|&x| cfg.clamp(x)).collect(),
        Some(w) => {
            return Err(Error::InvalidArgument(format!(
                "warm start has {} speeds, horizon is {n}",
                w.len()
            )));
        }
        None => vec![cfg.omega_ref; n],
    };
    if table.is_degenerate() {
        let mut plan =
            MotorPlan::from_speeds(warm, theta0, &table.capped(score_cap(cfg.epsilon)), cfg);
        plan.degraded = true;
        return Ok(plan);
    }
    let table = table.capped(score_cap(cfg.epsilon));

    let mut starts = vec![warm, vec![cfg.omega_ref; n]];
    if cfg.lattice_levels > 0 {
        starts.push(lattice_plan(theta0, &table, cfg));
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        let j0 = evaluate_objective(&start, theta0, &table, cfg);
        let (w, j) = descend(start, j0, theta0, &table, cfg);
        if best.as_ref().is_none_or(|b| j < b.1) {
            best = Some((w, j));
        }
    }
    let (speeds, _) = best.expect("at least one start");
    Ok(MotorPlan::from_speeds(speeds, theta0, &table, cfg))
}

/// Motor angle and the warm start for the next solve.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControllerState {
    pub theta: f64,
    pub warm: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    pub omega: f64,
    pub plan: MotorPlan,
    pub next: ControllerState,
}

/// Solves, applies the first control and shifts the plan for warm starting.
pub fn step_controller(
    state: &ControllerState,
    table: &ScoreTable,
    cfg: &MpcConfig,
) -> Result<ControlStep> {
    let plan = solve(state.theta, state.warm.as_deref(), table, cfg)?;
    let omega = plan.speeds[0];
    let next = ControllerState {
        theta: state.theta + omega * cfg.dt,
        warm: Some(plan.shifted()),
    };
    Ok(ControlStep { omega, plan, next })
}
