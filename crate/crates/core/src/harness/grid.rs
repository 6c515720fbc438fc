//! Evaluation of every algorithm over a grid of true types.

use serde::{Deserialize, Serialize};

use crate::dqn::MlpNetwork;
use crate::error::{Error, Result};
use crate::mdp::StochasticPolicy;
use crate::par::{self, Execution};
use crate::parametric::{MdpFamily, ThetaVector};
use crate::pool::PolicyPool;
use crate::seed;

use super::baselines::{fixed_baselines, random_type_policy};
use super::test_phase::{mean, Estimator, PolicyHandle, TestCell, TestRunRecord};

/// Seed-path tag for the random-type draw of a run.
const RANDOM_TYPE_TAG: u64 = 0x5241_4e44;

#[derive(Debug, Clone)]
pub enum AlgorithmSpec {
    Pool(PolicyPool),
    Dqn(MlpNetwork),
    Fixed(StochasticPolicy),
    /// Best response to a fresh uniform type draw per run.
    RandomType,
    Oracle,
}

#[derive(Debug, Clone)]
pub struct Algorithm {
    pub name: String,
    pub spec: AlgorithmSpec,
}

impl Algorithm {
    pub fn new(name: impl Into<String>, spec: AlgorithmSpec) -> Self {
        Self { name: name.into(), spec }
    }
}

/// `adaptive` followed by FixedBest, FixedMM, Rand and Oracle, with the fixed
/// baselines chosen over `candidates`.
pub fn with_baselines(
    family: &dyn MdpFamily,
    mut adaptive: Vec<Algorithm>,
    candidates: &[ThetaVector],
    exec: Execution,
) -> Result<Vec<Algorithm>> {
    let (best, minimax) = fixed_baselines(family, candidates, exec)?;
    adaptive.push(Algorithm::new("FixedBest", AlgorithmSpec::Fixed(best.policy)));
    adaptive.push(Algorithm::new("FixedMM", AlgorithmSpec::Fixed(minimax.policy)));
    adaptive.push(Algorithm::new("Rand", AlgorithmSpec::RandomType));
    adaptive.push(Algorithm::new("Oracle", AlgorithmSpec::Oracle));
    Ok(adaptive)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub resolution: f64,
    pub runs: usize,
    pub episodes: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Initial estimate; the centre of `Θ` when absent.
    pub theta0: Option<ThetaVector>,
    pub seed: u64,
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Err(Error::Config { field: format!("evaluation.{field}"), message: message.into() });
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return bad("resolution", "must be positive");
        }
        if self.runs == 0 {
            return bad("runs", "must be positive");
        }
        if self.episodes == 0 {
            return bad("episodes", "must be positive");
        }
        if self.steps == 0 {
            return bad("steps", "must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        Ok(())
    }
}

/// Regret of one algorithm at one grid cell, aggregated over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub algorithm: String,
    /// Mean over runs of each run's mean per-episode regret.
    pub mean_regret: f64,
    /// 90th percentile (nearest rank) of the per-run mean regrets.
    pub p90_regret: f64,
    pub mean_final_inference_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    /// Largest cell mean regret.
    pub worst_case: f64,
    /// Mean of the cell mean regrets.
    pub average_case: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: usize,
    pub algorithm: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGridReport {
    pub grid: Vec<ThetaVector>,
    pub algorithms: Vec<String>,
    pub runs: usize,
    /// Ordered by cell, then algorithm, then run.
    pub records: Vec<TestRunRecord>,
    pub cells: Vec<CellSummary>,
    pub summaries: Vec<AlgorithmSummary>,
    pub failures: Vec<CellFailure>,
}

impl EvalGridReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn summary(&self, algorithm: &str) -> Option<&AlgorithmSummary> {
        self.summaries.iter().find(|s| s.algorithm == algorithm)
    }

    pub fn records_for<'a>(&'a self, algorithm: &'a str) -> impl Iterator<Item = &'a TestRunRecord> + 'a {
        self.records.iter().filter(move |r| r.algorithm == algorithm)
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

type CellOutcome = (Vec<TestRunRecord>, Vec<CellFailure>);

fn run_cell(
    family: &dyn MdpFamily,
    algorithms: &[Algorithm],
    settings: &EvalSettings,
    cell: usize,
    theta: &ThetaVector,
    theta0: &ThetaVector,
) -> CellOutcome {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let fail = |alg: &str, e: Error| CellFailure { cell, algorithm: alg.to_string(), message: e.to_string() };
    let test_cell = match TestCell::new(family, theta) {
        Ok(c) => c,
        Err(e) => {
            failures.push(fail("*", e));
            return (records, failures);
        }
    };
    for alg in algorithms {
        for run in 0..settings.runs {
            let run_seed = seed::derive(settings.seed, &[cell as u64, run as u64]);
            let outcome = (|| -> Result<TestRunRecord> {
                let estimator = Estimator::for_family(family, theta0.clone(), settings.learning_rate)?;
                let random_policy;
                let handle = match &alg.spec {
                    AlgorithmSpec::Pool(p) => PolicyHandle::Pool(p),
                    AlgorithmSpec::Dqn(n) => PolicyHandle::Dqn(n),
                    AlgorithmSpec::Fixed(p) => PolicyHandle::Fixed(p),
                    AlgorithmSpec::Oracle => PolicyHandle::Oracle,
                    AlgorithmSpec::RandomType => {
                        let s = seed::derive(settings.seed, &[cell as u64, run as u64, RANDOM_TYPE_TAG]);
                        random_policy = random_type_policy(family, s)?.1;
                        PolicyHandle::Fixed(&random_policy)
                    }
                };
                test_cell.run(&alg.name, handle, estimator, settings.episodes, settings.steps, run_seed)
            })();
            match outcome {
                Ok(r) => records.push(r),
                Err(e) => failures.push(fail(&alg.name, e)),
            }
        }
    }
    (records, failures)
}

/// Runs every algorithm `runs` times on every cell of the `resolution` grid.
/// Cells run in parallel; results are gathered in grid order.
pub fn evaluate_grid(
    family: &dyn MdpFamily,
    algorithms: &[Algorithm],
    settings: &EvalSettings,
    exec: Execution,
) -> Result<EvalGridReport> {
    settings.validate()?;
    let grid = family.space().grid(settings.resolution)?;
    evaluate_points(family, algorithms, settings, &grid, exec)
}

/// As [`evaluate_grid`] on an explicit list of true types.
pub fn evaluate_points(
    family: &dyn MdpFamily,
    algorithms: &[Algorithm],
    settings: &EvalSettings,
    grid: &[ThetaVector],
    exec: Execution,
) -> Result<EvalGridReport> {
    settings.validate()?;
    if algorithms.is_empty() {
        return Err(Error::Config { field: "evaluation.algorithms".into(), message: "no algorithms selected".into() });
    }
    let theta0 = match &settings.theta0 {
        Some(t) => t.clone(),
        None => family.space().center(),
    };
    family.space().check(&theta0)?;

    let indexed: Vec<(usize, &ThetaVector)> = grid.iter().enumerate().collect();
    let outcomes = par::map(exec, &indexed, |&(cell, theta)| run_cell(family, algorithms, settings, cell, theta, &theta0));

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in outcomes {
        records.extend(r);
        failures.extend(f);
    }

    let names: Vec<String> = algorithms.iter().map(|a| a.name.clone()).collect();
    let mut cells = Vec::new();
    for (cell, theta) in grid.iter().enumerate() {
        for name in &names {
            let runs: Vec<&TestRunRecord> =
                records.iter().filter(|r| &r.algorithm == name && &r.theta_test == theta).collect();
            if runs.is_empty() {
                continue;
            }
            let mut regrets: Vec<f64> = runs.iter().map(|r| r.mean_regret()).collect();
            let finals: Vec<f64> = runs.iter().map(|r| r.final_inference_error).collect();
            let mean_regret = mean(&regrets);
            regrets.sort_by(f64::total_cmp);
            cells.push(CellSummary {
                cell,
                algorithm: name.clone(),
                mean_regret,
                p90_regret: percentile(&regrets, 0.9),
                mean_final_inference_error: mean(&finals),
            });
        }
    }
    let summaries = names
        .iter()
        .map(|name| {
            let per_cell: Vec<f64> = cells.iter().filter(|c| &c.algorithm == name).map(|c| c.mean_regret).collect();
            AlgorithmSummary {
                algorithm: name.clone(),
                worst_case: per_cell.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                average_case: mean(&per_cell),
            }
        })
        .collect();

    Ok(EvalGridReport { grid: grid.to_vec(), algorithms: names, runs: settings.runs, records, cells, summaries, failures })
}

/// Per-episode regret and inference error of one algorithm across all cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeCurvePoint {
    pub algorithm: String,
    pub episode: usize,
    pub mean_regret: f64,
    /// Largest over cells of the run-averaged regret at this episode.
    pub worst_regret: f64,
    pub mean_return: f64,
    /// Smallest over cells of the run-averaged discounted return.
    pub worst_return: f64,
    pub mean_inference_error: f64,
    pub worst_inference_error: f64,
}

pub fn episode_curves(report: &EvalGridReport) -> Vec<EpisodeCurvePoint> {
    let mut out = Vec::new();
    for name in &report.algorithms {
        let by_cell: Vec<Vec<&TestRunRecord>> = report
            .grid
            .iter()
            .map(|theta| report.records.iter().filter(|r| &r.algorithm == name && &r.theta_test == theta).collect())
            .filter(|v: &Vec<&TestRunRecord>| !v.is_empty())
            .collect();
        let Some(episodes) = by_cell.first().and_then(|c| c.first()).map(|r| r.episodes) else {
            continue;
        };
        for e in 0..episodes {
            let avg = |runs: &[&TestRunRecord], f: fn(&TestRunRecord) -> &Vec<f64>| {
                runs.iter().map(|r| f(r)[e]).sum::<f64>() / runs.len() as f64
            };
            let regret: Vec<f64> = by_cell.iter().map(|c| avg(c, |r| &r.per_episode_regret)).collect();
            let ret: Vec<f64> = by_cell.iter().map(|c| avg(c, |r| &r.per_episode_return)).collect();
            let err: Vec<f64> = by_cell.iter().map(|c| avg(c, |r| &r.inference_error)).collect();
            out.push(EpisodeCurvePoint {
                algorithm: name.clone(),
                episode: e + 1,
                mean_regret: mean(&regret),
                worst_regret: regret.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean_return: mean(&ret),
                worst_return: ret.iter().copied().fold(f64::INFINITY, f64::min),
                mean_inference_error: mean(&err),
                worst_inference_error: err.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    out
}
