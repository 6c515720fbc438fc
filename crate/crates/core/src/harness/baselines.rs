//! Non-adaptive baselines: fixed minimax, fixed average-best and random-type policies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{total_return, value_iteration, StochasticPolicy, DEFAULT_VI_TOL};
use crate::par::{self, Execution};
use crate::parametric::{MdpFamily, ThetaVector};
use crate::seed;

/// Mixture weights tried between pairs of candidates on two-action instances.
pub const MIXTURE_STEP: f64 = 0.01;

/// A fixed policy together with its regret profile over the candidate types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedChoice {
    pub policy: StochasticPolicy,
    /// Candidate whose best response this is; `None` for mixtures.
    pub theta: Option<ThetaVector>,
    /// `(i, j, w)`: `w · π*_i + (1 − w) · π*_j`.
    pub mixture: Option<(usize, usize, f64)>,
    pub worst_regret: f64,
    pub mean_regret: f64,
}

/// Exact optimal returns and best responses for every candidate type.
pub struct CandidateTable<'f> {
    family: &'f dyn MdpFamily,
    pub thetas: Vec<ThetaVector>,
    pub best_responses: Vec<StochasticPolicy>,
    pub optimal_returns: Vec<f64>,
}

impl<'f> CandidateTable<'f> {
    pub fn new(family: &'f dyn MdpFamily, thetas: &[ThetaVector], exec: Execution) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::Domain("need at least one candidate type".into()));
        }
        let solved = par::map(exec, thetas, |t| -> Result<(StochasticPolicy, f64)> {
            let inst = family.build(t)?;
            let (_, pi) = value_iteration(&inst.mdp, DEFAULT_VI_TOL)?;
            let j = total_return(&inst.mdp, &pi)?;
            Ok((pi, j))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let (best_responses, optimal_returns) = solved.into_iter().unzip();
        Ok(Self { family, thetas: thetas.to_vec(), best_responses, optimal_returns })
    }

    /// Regret of `policy` at every candidate type.
    pub fn regrets(&self, policy: &StochasticPolicy, exec: Execution) -> Result<Vec<f64>> {
        let idx: Vec<usize> = (0..self.thetas.len()).collect();
        par::map(exec, &idx, |&k| -> Result<f64> {
            let inst = self.family.build(&self.thetas[k])?;
            Ok(self.optimal_returns[k] - total_return(&inst.mdp, policy)?)
        })
        .into_iter()
        .collect()
    }

    /// `regret[i][k]`: regret of `π*_i` at candidate `k`.
    pub fn regret_matrix(&self, exec: Execution) -> Result<Vec<Vec<f64>>> {
        let instances = par::map(exec, &self.thetas, |t| self.family.build(t).map(|i| i.mdp))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        par::map(exec, &self.best_responses, |pi| -> Result<Vec<f64>> {
            instances
                .iter()
                .zip(&self.optimal_returns)
                .map(|(m, j)| Ok(j - total_return(m, pi)?))
                .collect()
        })
        .into_iter()
        .collect()
    }
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn choose(
    table: &CandidateTable<'_>,
    matrix: &[Vec<f64>],
    score: fn(&[f64]) -> f64,
    exec: Execution,
) -> Result<FixedChoice> {
    let mut best = 0;
    for i in 1..matrix.len() {
        if score(&matrix[i]) < score(&matrix[best]) {
            best = i;
        }
    }
    let mut choice = FixedChoice {
        policy: table.best_responses[best].clone(),
        theta: Some(table.thetas[best].clone()),
        mixture: None,
        worst_regret: max_of(&matrix[best]),
        mean_regret: mean_of(&matrix[best]),
    };
    // On two-action instances mixtures of two best responses can beat every pure one.
    if table.family.n_actions() == 2 && table.thetas.len() > 1 {
        let steps = (1.0 / MIXTURE_STEP).round() as usize;
        let mut current = score(&matrix[best]);
        for i in 0..table.thetas.len() {
            for j in i + 1..table.thetas.len() {
                for k in 1..steps {
                    let w = k as f64 * MIXTURE_STEP;
                    let mixed = table.best_responses[i].mix(&table.best_responses[j], w)?;
                    let regrets = table.regrets(&mixed, exec)?;
                    if score(&regrets) < current - 1e-12 {
                        current = score(&regrets);
                        choice = FixedChoice {
                            policy: mixed,
                            theta: None,
                            mixture: Some((i, j, w)),
                            worst_regret: max_of(&regrets),
                            mean_regret: mean_of(&regrets),
                        };
                    }
                }
            }
        }
    }
    Ok(choice)
}

/// The fixed policy minimizing the worst regret over `candidates`.
pub fn fixed_minimax_policy(family: &dyn MdpFamily, candidates: &[ThetaVector], exec: Execution) -> Result<FixedChoice> {
    let table = CandidateTable::new(family, candidates, exec)?;
    let matrix = table.regret_matrix(exec)?;
    choose(&table, &matrix, max_of, exec)
}

/// The fixed policy minimizing the mean regret over `candidates`.
pub fn fixed_best_policy(family: &dyn MdpFamily, candidates: &[ThetaVector], exec: Execution) -> Result<FixedChoice> {
    let table = CandidateTable::new(family, candidates, exec)?;
    let matrix = table.regret_matrix(exec)?;
    choose(&table, &matrix, mean_of, exec)
}

/// Both fixed baselines from a single regret matrix.
pub fn fixed_baselines(
    family: &dyn MdpFamily,
    candidates: &[ThetaVector],
    exec: Execution,
) -> Result<(FixedChoice, FixedChoice)> {
    let table = CandidateTable::new(family, candidates, exec)?;
    let matrix = table.regret_matrix(exec)?;
    Ok((choose(&table, &matrix, mean_of, exec)?, choose(&table, &matrix, max_of, exec)?))
}

/// Best response to a type drawn uniformly from `Θ`.
pub fn random_type_policy(family: &dyn MdpFamily, seed: u64) -> Result<(ThetaVector, StochasticPolicy)> {
    let mut rng = seed::rng(seed, &[]);
    let theta = family.space().sample(&mut rng);
    let inst = family.build(&theta)?;
    let (_, pi) = value_iteration(&inst.mdp, DEFAULT_VI_TOL)?;
    Ok((theta, pi))
}
