use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene_sim::TrajectorySample;

/// Translational error of an estimate against the reference, without any
/// alignment: both share the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryErrorReport {
    pub mean_ape: f64,
    /// Per-axis RMSE (x, y, z).
    pub rmse: Vector3<f64>,
    /// `(time, estimate - reference)` per associated frame, by time.
    pub errors: Vec<(f64, Vector3<f64>)>,
}

impl TrajectoryErrorReport {
    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn max_error(&self) -> f64 {
        self.errors
            .iter()
            .map(|(_, e)| e.norm())
            .fold(0.0, f64::max)
    }
}

fn sorted(samples: &[TrajectorySample]) -> Vec<TrajectorySample> {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.time.total_cmp(&b.time));
    v
}

/// Associates every estimated sample with the nearest reference timestamp
/// within `tolerance` and reports the position errors.
pub fn compute_ape(
    estimated: &[TrajectorySample],
    reference: &[TrajectorySample],
    tolerance: f64,
) -> Result<TrajectoryErrorReport> {
    let est = sorted(estimated);
    let gt = sorted(reference);
    let mut errors = Vec::new();
    for s in &est {
        let i = gt.partition_point(|g| g.time < s.time);
        let best = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| gt.get(j))
            .min_by(|a, b| (a.time - s.time).abs().total_cmp(&(b.time - s.time).abs()));
        if let Some(g) = best.filter(|g| (g.time - s.time).abs() <= tolerance) {
            errors.push((s.time, s.pose.translation - g.pose.translation));
        }
    }
    if errors.len() < 2 {
        return Err(Error::Evaluation(format!(
            "only {} associated pose pairs",
            errors.len()
        )));
    }
    let n = errors.len() as f64;
    let mean_ape = errors.iter().map(|(_, e)| e.norm()).sum::<f64>() / n;
    let rmse = (errors
        .iter()
        .map(|(_, e)| e.component_mul(e))
        .sum::<Vector3<f64>>()
        / n)
        .map(f64::sqrt);
    Ok(TrajectoryErrorReport {
        mean_ape,
        rmse,
        errors,
    })
}
