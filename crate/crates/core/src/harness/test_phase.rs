//! The test-phase loop: observe, infer, act, with inference updated at episode ends.

use serde::{Deserialize, Serialize};

use crate::dqn::MlpNetwork;
use crate::error::{Error, Result};
use crate::inference::{episode_update, AgentModel, InferenceState};
use crate::mdp::{sample_index, total_return, value_iteration, StochasticPolicy, DEFAULT_VI_TOL};
use crate::parametric::{FamilyInstance, MdpFamily, ThetaVector};
use crate::pool::PolicyPool;
use crate::seed;

/// How the acting agent chooses its policy given the current type estimate.
#[derive(Debug, Clone, Copy)]
pub enum PolicyHandle<'a> {
    Pool(&'a PolicyPool),
    Dqn(&'a MlpNetwork),
    Fixed(&'a StochasticPolicy),
    /// Best response to the true type.
    Oracle,
}

/// Source of the type estimate `θ_t`.
#[derive(Clone)]
pub enum Estimator<'a> {
    Mce { state: InferenceState, model: &'a dyn AgentModel },
    /// Frequency of `action` among observations at `state`; `θ₀` until it is observed.
    ActionFrequency { state: usize, action: usize, hits: usize, total: usize, theta0: ThetaVector },
    Fixed(ThetaVector),
}

impl<'a> Estimator<'a> {
    /// Sequential MCE-IRL when the family exposes an agent model, otherwise the
    /// estimate stays at `θ₀`.
    pub fn for_family(family: &'a dyn MdpFamily, theta0: ThetaVector, learning_rate: f64) -> Result<Self> {
        match family.agent_model() {
            Some(model) => Ok(Estimator::Mce {
                state: InferenceState::new(theta0, learning_rate, family.space().clone())?,
                model,
            }),
            None => {
                family.space().check(&theta0)?;
                Ok(Estimator::Fixed(theta0))
            }
        }
    }

    pub fn estimate(&self) -> ThetaVector {
        match self {
            Estimator::Mce { state, .. } => state.theta_est.clone(),
            Estimator::ActionFrequency { hits, total, theta0, .. } => {
                if *total == 0 {
                    theta0.clone()
                } else {
                    ThetaVector(vec![*hits as f64 / *total as f64])
                }
            }
            Estimator::Fixed(t) => t.clone(),
        }
    }

    /// Incorporates one completed episode of observed-agent `(state, action)` pairs.
    pub fn observe_episode(&mut self, episode: &[(usize, usize)]) -> Result<()> {
        match self {
            Estimator::Mce { state, model } => {
                *state = episode_update(state, episode, *model)?;
            }
            Estimator::ActionFrequency { state, action, hits, total, .. } => {
                for &(_, a) in episode.iter().filter(|&&(s, _)| s == *state) {
                    *total += 1;
                    *hits += usize::from(a == *action);
                }
            }
            Estimator::Fixed(_) => {}
        }
        Ok(())
    }
}

/// One simulated test phase against a fixed true type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRunRecord {
    pub theta_test: ThetaVector,
    pub algorithm: String,
    pub seed: u64,
    pub episodes: usize,
    /// Discounted return of each episode from its start state.
    pub per_episode_return: Vec<f64>,
    pub per_episode_undiscounted: Vec<f64>,
    /// `J_θ(π*_θ) − J_θ(π_t)` for the policy used in each episode, computed exactly.
    pub per_episode_regret: Vec<f64>,
    /// `‖θ_t − θ_test‖` for the estimate used in each episode.
    pub inference_error: Vec<f64>,
    /// Estimate used in each episode.
    pub theta_trace: Vec<ThetaVector>,
    /// Error of the estimate after the last update.
    pub final_inference_error: f64,
    pub total_discounted_return: f64,
    pub optimal_return: f64,
}

impl TestRunRecord {
    pub fn mean_regret(&self) -> f64 {
        mean(&self.per_episode_regret)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Exact quantities for one true type, shared by every algorithm run against it.
pub struct TestCell<'f> {
    pub family: &'f dyn MdpFamily,
    pub instance: FamilyInstance,
    pub best_response: StochasticPolicy,
    pub optimal_return: f64,
}

impl<'f> TestCell<'f> {
    pub fn new(family: &'f dyn MdpFamily, theta_test: &ThetaVector) -> Result<Self> {
        let instance = family.build(theta_test)?;
        let (_, best_response) = value_iteration(&instance.mdp, DEFAULT_VI_TOL)?;
        let optimal_return = total_return(&instance.mdp, &best_response)?;
        Ok(Self { family, instance, best_response, optimal_return })
    }

    pub fn theta(&self) -> &ThetaVector {
        &self.instance.theta
    }

    pub fn regret(&self, policy: &StochasticPolicy) -> Result<f64> {
        Ok(self.optimal_return - total_return(&self.instance.mdp, policy)?)
    }

    fn policy_for(&self, handle: PolicyHandle<'_>, theta: &ThetaVector) -> Result<StochasticPolicy> {
        match handle {
            PolicyHandle::Pool(pool) => {
                if pool.is_empty() {
                    return Err(Error::Artifact("empty policy pool".into()));
                }
                Ok(pool.policy_for(theta).clone())
            }
            PolicyHandle::Dqn(net) => {
                let actions = (0..self.family.n_states())
                    .map(|s| net.act(self.family, s, theta))
                    .collect::<Result<Vec<_>>>()?;
                StochasticPolicy::deterministic(self.family.n_actions(), &actions)
            }
            PolicyHandle::Fixed(p) => Ok(p.clone()),
            PolicyHandle::Oracle => Ok(self.best_response.clone()),
        }
    }

    /// Runs `episodes` episodes of `steps` steps. The observed agent draws from
    /// its own random stream so that its trajectory is the same for every handle
    /// under a given seed.
    pub fn run(
        &self,
        algorithm: &str,
        handle: PolicyHandle<'_>,
        mut estimator: Estimator<'_>,
        episodes: usize,
        steps: usize,
        seed: u64,
    ) -> Result<TestRunRecord> {
        let mdp = &self.instance.mdp;
        let x_policy = &self.instance.x_policy;
        let gamma = mdp.discount();
        let theta_test = self.theta();
        let mut rng_x = seed::rng(seed, &[0]);
        let mut rng_y = seed::rng(seed, &[1]);
        let mut rng_start = seed::rng(seed, &[2]);

        let mut rec = TestRunRecord {
            theta_test: theta_test.clone(),
            algorithm: algorithm.to_string(),
            seed,
            episodes,
            per_episode_return: Vec::with_capacity(episodes),
            per_episode_undiscounted: Vec::with_capacity(episodes),
            per_episode_regret: Vec::with_capacity(episodes),
            inference_error: Vec::with_capacity(episodes),
            theta_trace: Vec::with_capacity(episodes),
            final_inference_error: 0.0,
            total_discounted_return: 0.0,
            optimal_return: self.optimal_return,
        };
        let mut last: Option<(StochasticPolicy, f64)> = None;
        let mut observed = Vec::with_capacity(steps);

        for _ in 0..episodes {
            let theta_t = estimator.estimate();
            let policy = self.policy_for(handle, &theta_t)?;
            let regret = match &last {
                Some((p, r)) if *p == policy => *r,
                _ => self.regret(&policy)?,
            };

            let mut s = sample_index(mdp.initial_dist(), &mut rng_start);
            let (mut disc, mut undisc, mut w) = (0.0, 0.0, 1.0);
            observed.clear();
            for _ in 0..steps {
                let b = x_policy.sample(s, &mut rng_x);
                let a = policy.sample(s, &mut rng_y);
                let r = mdp.reward(s, a);
                disc += w * r;
                undisc += r;
                w *= gamma;
                observed.push((self.family.x_state(s), b));
                s = self.family.sample_step(s, a, b, &mut rng_x, &mut rng_y);
            }
            if !disc.is_finite() {
                return Err(Error::Domain("non-finite return".into()));
            }
            rec.per_episode_return.push(disc);
            rec.per_episode_undiscounted.push(undisc);
            rec.per_episode_regret.push(regret);
            rec.inference_error.push(theta_t.distance(theta_test));
            rec.theta_trace.push(theta_t);
            rec.total_discounted_return += disc;
            if !observed.is_empty() {
                estimator.observe_episode(&observed)?;
            }
            last = Some((policy, regret));
        }
        rec.final_inference_error = estimator.estimate().distance(theta_test);
        Ok(rec)
    }
}

/// Convenience wrapper building the cell for a single run.
pub fn run_test_phase(
    family: &dyn MdpFamily,
    theta_test: &ThetaVector,
    algorithm: &str,
    handle: PolicyHandle<'_>,
    estimator: Estimator<'_>,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<TestRunRecord> {
    TestCell::new(family, theta_test)?.run(algorithm, handle, estimator, episodes, steps, seed)
}
