use std::fmt::Write as _;
use std::io::Write;
use std::thread;

use super::pipeline::{run_with_inputs, write_report_row};
use super::{load_inputs, ExperimentConfig, ExperimentResult, TrajectoryErrorReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct StrategyReport {
    pub label: String,
    pub report: TrajectoryErrorReport,
}

/// Reports of a strategy sweep over one scene and seed.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub reports: Vec<StrategyReport>,
}

impl Comparison {
    /// `ratios[i][j] = APE_i / APE_j`.
    pub fn ratios(&self) -> Vec<Vec<f64>> {
        self.reports
            .iter()
            .map(|a| {
                self.reports
                    .iter()
                    .map(|b| a.report.mean_ape / b.report.mean_ape)
                    .collect()
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "strategy,frames,mean_ape,rmse_x,rmse_y,rmse_z")?;
        for r in &self.reports {
            write!(out, ",ratio_to_{}", r.label)?;
        }
        writeln!(out)?;
        for (r, row) in self.reports.iter().zip(self.ratios()) {
            let mut line = Vec::new();
            write_report_row(&mut line, &r.label, &r.report)?;
            out.write_all(&line[..line.len() - 1])?;
            for x in row {
                write!(out, ",{x:.6}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Human-readable table with the ratio to every other strategy.
    pub fn table(&self) -> String {
        let w = self
            .reports
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(8)
            .max(8);
        let mut s = format!(
            "{:<w$}  {:>9}  {:>8}  {:>8}  {:>8}",
            "strategy", "mean APE", "RMSE x", "RMSE y", "RMSE z"
        );
        for r in &self.reports {
            let _ = write!(s, "  {:>w$}", format!("/{}", r.label));
        }
        s.push('\n');
        for (r, row) in self.reports.iter().zip(self.ratios()) {
            let e = &r.report;
            let _ = write!(
                s,
                "{:<w$}  {:>9.3}  {:>8.3}  {:>8.3}  {:>8.3}",
                r.label, e.mean_ape, e.rmse.x, e.rmse.y, e.rmse.z
            );
            for x in row {
                let _ = write!(s, "  {x:>w$.3}");
            }
            s.push('\n');
        }
        s
    }
}

fn same_inputs(a: &ExperimentConfig, b: &ExperimentConfig) -> bool {
    a.scene == b.scene
        && a.scene_file == b.scene_file
        && a.trajectory_file == b.trajectory_file
        && a.osm_file == b.osm_file
        && a.dem_file == b.dem_file
        && a.origin == b.origin
        && a.seed == b.seed
}

/// Runs every configuration on its own thread and reports the corrected
/// trajectory errors in input order.
pub fn compare_strategies(cfgs: &[ExperimentConfig]) -> Result<Comparison> {
    let (full, _) = compare_with_results(cfgs)?;
    Ok(full)
}

/// As [`compare_strategies`], also returning every run.
pub fn compare_with_results(
    cfgs: &[ExperimentConfig],
) -> Result<(Comparison, Vec<ExperimentResult>)> {
    let first = cfgs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no configurations to compare".into()))?;
    if !cfgs.iter().all(|c| same_inputs(first, c)) {
        return Err(Error::InvalidArgument(
            "compared runs must share scene, trajectory and seed".into(),
        ));
    }
    for c in cfgs {
        c.validate()?;
    }
    let inputs = load_inputs(first)?;
    let results: Vec<Result<ExperimentResult>> = thread::scope(|scope| {
        let handles: Vec<_> = cfgs
            .iter()
            .map(|c| scope.spawn(|| run_with_inputs(c, &inputs)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let reports = cfgs
        .iter()
        .zip(&results)
        .map(|(c, r)| StrategyReport {
            label: label(c),
            report: r.report_corrected.clone(),
        })
        .collect();
    Ok((Comparison { reports }, results))
}

fn label(c: &ExperimentConfig) -> String {
    if c.osm_dropout > 0.0 {
        format!("{}@dropout{}", c.strategy, c.osm_dropout)
    } else {
        c.strategy.to_string()
    }
}
