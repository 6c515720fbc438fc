//! Two-state instance on which every fixed policy has regret close to `r_max / (1 − γ)`.
//!
//! From `gold`, the next state is `gold` iff both agents pick the same action;
//! otherwise play moves to the absorbing `end`. The observed agent's type
//! `θ ∈ [0, 1]` is its probability of picking the second action at `gold`, so
//! `θ = 0` and `θ = 1` are the two committed types.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::mdp::StochasticPolicy;
use crate::parametric::{MdpFamily, ParamSpace, ThetaVector, TwoAgentDynamics};

pub const GOLD: usize = 0;
pub const END: usize = 1;

#[derive(Debug, Clone)]
pub struct WorstCasePair {
    gamma: f64,
    r_max: f64,
    space: ParamSpace,
}

pub fn build_worstcase_pair(gamma: f64, r_max: f64) -> Result<WorstCasePair> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!("discount {gamma} not in [0, 1)")));
    }
    if r_max.is_nan() || r_max <= 0.0 {
        return Err(Error::Domain(format!("r_max {r_max} must be positive")));
    }
    Ok(WorstCasePair { gamma, r_max, space: ParamSpace::cube(1, 0.0, 1.0)? })
}

impl WorstCasePair {
    /// Type that always picks the first action at `gold`.
    pub fn theta1() -> ThetaVector {
        ThetaVector(vec![0.0])
    }

    /// Type that always picks the second action at `gold`.
    pub fn theta2() -> ThetaVector {
        ThetaVector(vec![1.0])
    }

    pub fn types() -> Vec<ThetaVector> {
        vec![Self::theta1(), Self::theta2()]
    }

    /// Policy taking the first action at `gold` with probability `p`.
    pub fn gold_policy(p: f64) -> Result<StochasticPolicy> {
        StochasticPolicy::new(2, 2, vec![p, 1.0 - p, 1.0, 0.0])
    }
}

impl MdpFamily for WorstCasePair {
    fn name(&self) -> String {
        "worst-case-pair".into()
    }

    fn space(&self) -> &ParamSpace {
        &self.space
    }

    fn n_states(&self) -> usize {
        2
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn n_x_actions(&self) -> usize {
        2
    }

    fn discount(&self) -> f64 {
        self.gamma
    }

    fn initial_dist(&self) -> Vec<f64> {
        vec![1.0, 0.0]
    }

    fn rewards(&self, theta: &ThetaVector) -> Result<Vec<f64>> {
        self.space.check(theta)?;
        Ok(vec![self.r_max, self.r_max, 0.0, 0.0])
    }

    fn reward_range(&self) -> (f64, f64) {
        (0.0, self.r_max)
    }

    fn x_policy(&self, theta: &ThetaVector) -> Result<StochasticPolicy> {
        self.space.check(theta)?;
        let q = theta.0[0];
        StochasticPolicy::new(2, 2, vec![1.0 - q, q, 0.5, 0.5])
    }

    fn two_agent_dynamics(&self) -> TwoAgentDynamics {
        let mut t = Vec::with_capacity(16);
        for s in [GOLD, END] {
            for a in 0..2 {
                for b in 0..2 {
                    let stay = s == GOLD && a == b;
                    t.extend_from_slice(if stay { &[1.0, 0.0] } else { &[0.0, 1.0] });
                }
            }
        }
        TwoAgentDynamics::new(2, 2, 2, t).expect("deterministic kernel")
    }

    fn sample_step(&self, s: usize, a: usize, b: usize, _rng_x: &mut dyn RngCore, _rng_y: &mut dyn RngCore) -> usize {
        if s == GOLD && a == b {
            GOLD
        } else {
            END
        }
    }

    fn x_state(&self, s: usize) -> usize {
        s
    }

    fn augmented_input(&self, s: usize, theta: &ThetaVector) -> Vec<f64> {
        let mut v = vec![0.0, 0.0, theta.0[0]];
        v[s] = 1.0;
        v
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "worst_case", "gamma": self.gamma, "r_max": self.r_max })
    }

    fn finite_types(&self) -> Option<Vec<ThetaVector>> {
        Some(Self::types())
    }
}
