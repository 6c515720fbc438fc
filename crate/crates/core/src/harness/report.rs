//! CSV outputs of the harness. Every file has a header row.
//!
//! * `eval_grid.csv`: `theta1,theta2,algorithm,run,discounted_return,undiscounted_return,regret,final_inference_error`
//!   with returns summed over all episodes of the run and `regret` the run's mean per-episode regret.
//! * `episode_curves.csv`: `algorithm,episode,mean_regret,worst_regret,mean_return,worst_return,mean_inference_error,worst_inference_error`.
//! * `inference_trace.csv`: `theta1_test,theta2_test,run,episode,theta1_est,theta2_est,error_norm`,
//!   the estimate used in each episode (taken from the first algorithm's runs).
//! * `bounds_report.csv`: `trial_id,check,eps_r,eps_p,measured_gap,bound,pass`.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::parametric::ThetaVector;

use super::grid::{episode_curves, EvalGridReport};
use super::verify::BoundsReport;

pub const EVAL_GRID_HEADER: [&str; 8] = [
    "theta1",
    "theta2",
    "algorithm",
    "run",
    "discounted_return",
    "undiscounted_return",
    "regret",
    "final_inference_error",
];
pub const EPISODE_CURVES_HEADER: [&str; 8] = [
    "algorithm",
    "episode",
    "mean_regret",
    "worst_regret",
    "mean_return",
    "worst_return",
    "mean_inference_error",
    "worst_inference_error",
];
pub const INFERENCE_TRACE_HEADER: [&str; 7] =
    ["theta1_test", "theta2_test", "run", "episode", "theta1_est", "theta2_est", "error_norm"];
pub const BOUNDS_HEADER: [&str; 7] = ["trial_id", "check", "eps_r", "eps_p", "measured_gap", "bound", "pass"];

fn coord(t: &ThetaVector, i: usize) -> String {
    t.0.get(i).map(f64::to_string).unwrap_or_default()
}

pub fn write_eval_grid<W: Write>(report: &EvalGridReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVAL_GRID_HEADER)?;
    let mut run_index = std::collections::HashMap::new();
    for r in &report.records {
        let key = (r.algorithm.clone(), format!("{:?}", r.theta_test.0));
        let run = run_index.entry(key).or_insert(0usize);
        w.write_record([
            coord(&r.theta_test, 0),
            coord(&r.theta_test, 1),
            r.algorithm.clone(),
            run.to_string(),
            r.total_discounted_return.to_string(),
            r.per_episode_undiscounted.iter().sum::<f64>().to_string(),
            r.mean_regret().to_string(),
            r.final_inference_error.to_string(),
        ])?;
        *run += 1;
    }
    w.flush()?;
    Ok(())
}

pub fn write_episode_curves<W: Write>(report: &EvalGridReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EPISODE_CURVES_HEADER)?;
    for p in episode_curves(report) {
        w.write_record([
            p.algorithm,
            p.episode.to_string(),
            p.mean_regret.to_string(),
            p.worst_regret.to_string(),
            p.mean_return.to_string(),
            p.worst_return.to_string(),
            p.mean_inference_error.to_string(),
            p.worst_inference_error.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_inference_trace<W: Write>(report: &EvalGridReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(INFERENCE_TRACE_HEADER)?;
    if let Some(first) = report.algorithms.first() {
        let mut run_index = std::collections::HashMap::new();
        for r in report.records_for(first) {
            let run = run_index.entry(format!("{:?}", r.theta_test.0)).or_insert(0usize);
            for (e, (t, err)) in r.theta_trace.iter().zip(&r.inference_error).enumerate() {
                w.write_record([
                    coord(&r.theta_test, 0),
                    coord(&r.theta_test, 1),
                    run.to_string(),
                    (e + 1).to_string(),
                    coord(t, 0),
                    coord(t, 1),
                    err.to_string(),
                ])?;
            }
            *run += 1;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_bounds_report<W: Write>(report: &BoundsReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BOUNDS_HEADER)?;
    for r in &report.rows {
        w.write_record([
            r.trial_id.to_string(),
            r.check.clone(),
            r.eps_r.to_string(),
            r.eps_p.to_string(),
            r.measured_gap.to_string(),
            r.bound.to_string(),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `eval_grid.csv`, `episode_curves.csv` and `inference_trace.csv` into `dir`.
pub fn write_eval_outputs(report: &EvalGridReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_eval_grid(report, std::fs::File::create(dir.join("eval_grid.csv"))?)?;
    write_episode_curves(report, std::fs::File::create(dir.join("episode_curves.csv"))?)?;
    write_inference_trace(report, std::fs::File::create(dir.join("inference_trace.csv"))?)?;
    Ok(())
}
