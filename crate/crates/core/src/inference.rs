//! Sequential maximum-causal-entropy IRL over the observed agent's trajectory.
//!
//! The estimate is updated once per episode by a projected stochastic gradient
//! step on the MCE log-likelihood: empirical discounted feature counts minus
//! the counts expected under the soft-Bellman policy of the current estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{soft_value_iteration, softmax_policy, state_occupancy, StochasticPolicy, TabularMdp};
use crate::parametric::{ParamSpace, ThetaVector};

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;

/// What the inference module knows about the observed agent: its single-agent
/// MDP `Mˣ(θ)`, a state feature map and the soft-Bellman temperature.
pub trait AgentModel: Send + Sync {
    fn x_mdp(&self, theta: &ThetaVector) -> Result<TabularMdp>;
    /// Feature vector per observed-agent state.
    fn features(&self) -> &[Vec<f64>];
    fn temperature(&self) -> f64;

    /// Soft-Bellman policy on the observed agent's own states.
    fn soft_policy(&self, theta: &ThetaVector) -> Result<StochasticPolicy> {
        let mdp = self.x_mdp(theta)?;
        let sol = soft_value_iteration(&mdp, self.temperature(), None)?;
        Ok(softmax_policy(&sol.q, self.temperature()))
    }
}

/// `(state, action)` pairs of the observed agent, split into episodes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationHistory {
    steps: Vec<(usize, usize)>,
    episode_boundaries: Vec<usize>,
}

impl ObservationHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, state: usize, action: usize) {
        self.steps.push((state, action));
    }

    /// Closes the current episode; a no-op if it is empty.
    pub fn end_episode(&mut self) {
        let last = self.episode_boundaries.last().copied().unwrap_or(0);
        if self.steps.len() > last {
            self.episode_boundaries.push(self.steps.len());
        }
    }

    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    pub fn episode_boundaries(&self) -> &[usize] {
        &self.episode_boundaries
    }

    /// Completed episodes in order.
    pub fn episodes(&self) -> impl Iterator<Item = &[(usize, usize)]> {
        let mut start = 0;
        self.episode_boundaries.iter().map(move |&end| {
            let ep = &self.steps[start..end];
            start = end;
            ep
        })
    }
}

/// Current estimate `θ_t` and SGD settings.
#[derive(Debug, Clone)]
pub struct InferenceState {
    pub theta_est: ThetaVector,
    pub learning_rate: f64,
    pub space: ParamSpace,
    pub episodes_seen: usize,
    /// Match expected counts to the episode's own length instead of the infinite horizon.
    pub horizon_matched: bool,
    warm_values: Option<Vec<f64>>,
}

impl InferenceState {
    pub fn new(theta0: ThetaVector, learning_rate: f64, space: ParamSpace) -> Result<Self> {
        if learning_rate.is_nan() || learning_rate <= 0.0 {
            return Err(Error::Domain(format!("learning rate {learning_rate} must be positive")));
        }
        space.check(&theta0)?;
        Ok(Self {
            theta_est: theta0,
            learning_rate,
            space,
            episodes_seen: 0,
            horizon_matched: true,
            warm_values: None,
        })
    }

    /// `θ₀ = 0`, `η = 0.001`.
    pub fn with_defaults(space: ParamSpace) -> Result<Self> {
        let zero = ThetaVector(vec![0.0; space.dim()]);
        Self::new(space.project(&zero), DEFAULT_LEARNING_RATE, space)
    }
}

/// Componentwise clamp of `theta` into `space`.
pub fn project_box(theta: &ThetaVector, space: &ParamSpace) -> Result<ThetaVector> {
    if theta.dim() != space.dim() {
        return Err(Error::Dimension(format!(
            "theta has dimension {}, space has {}",
            theta.dim(),
            space.dim()
        )));
    }
    Ok(space.project(theta))
}

fn weighted_features(occupancy: &[f64], features: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    if features.len() != occupancy.len() {
        return Err(Error::Dimension(format!(
            "feature map covers {} states, MDP has {}",
            features.len(),
            occupancy.len()
        )));
    }
    let mut out = vec![0.0; dim];
    for (d, phi) in occupancy.iter().zip(features) {
        for (o, f) in out.iter_mut().zip(phi) {
            *o += d * f;
        }
    }
    Ok(out)
}

/// `Σ_s d_γ(s) φ(s)` with `d_γ` the discounted occupancy from `start`.
pub fn expected_feature_counts(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    start: usize,
    features: &[Vec<f64>],
) -> Result<Vec<f64>> {
    expected_feature_counts_horizon(mdp, policy, start, features, None)
}

/// As [`expected_feature_counts`], optionally truncated after `horizon` steps.
pub fn expected_feature_counts_horizon(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    start: usize,
    features: &[Vec<f64>],
    horizon: Option<usize>,
) -> Result<Vec<f64>> {
    if start >= mdp.n_states() {
        return Err(Error::Dimension(format!("start state {start} out of range")));
    }
    let mut init = vec![0.0; mdp.n_states()];
    init[start] = 1.0;
    let occ = state_occupancy(mdp, policy, &init, horizon)?;
    let dim = features.first().map_or(0, Vec::len);
    weighted_features(&occ, features, dim)
}

/// `Σ_τ γ^τ φ(s_τ)` along one episode.
pub fn empirical_feature_counts(episode: &[(usize, usize)], features: &[Vec<f64>], gamma: f64) -> Result<Vec<f64>> {
    let dim = features.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    let mut w = 1.0;
    for &(s, _) in episode {
        let phi = features
            .get(s)
            .ok_or_else(|| Error::Dimension(format!("observed state {s} has no features")))?;
        for (o, f) in out.iter_mut().zip(phi) {
            *o += w * f;
        }
        w *= gamma;
    }
    Ok(out)
}

/// Gradient of the MCE log-likelihood for one episode at the current estimate.
pub fn episode_gradient(state: &mut InferenceState, episode: &[(usize, usize)], model: &dyn AgentModel) -> Result<Vec<f64>> {
    if episode.is_empty() {
        return Err(Error::Domain("episode has no observations".into()));
    }
    let mdp = model.x_mdp(&state.theta_est)?;
    let temp = model.temperature();
    let sol = soft_value_iteration(&mdp, temp, state.warm_values.as_deref())?;
    let policy = softmax_policy(&sol.q, temp);
    state.warm_values = Some(sol.v.values);
    let horizon = state.horizon_matched.then_some(episode.len());
    let expected = expected_feature_counts_horizon(&mdp, &policy, episode[0].0, model.features(), horizon)?;
    let empirical = empirical_feature_counts(episode, model.features(), mdp.discount())?;
    Ok(empirical.iter().zip(&expected).map(|(e, m)| e - m).collect())
}

/// One projected SGD step from a completed episode.
pub fn episode_update(state: &InferenceState, episode: &[(usize, usize)], model: &dyn AgentModel) -> Result<InferenceState> {
    let mut next = state.clone();
    let grad = episode_gradient(&mut next, episode, model)?;
    if grad.len() != next.theta_est.dim() {
        return Err(Error::Dimension(format!(
            "feature dimension {} differs from theta dimension {}",
            grad.len(),
            next.theta_est.dim()
        )));
    }
    let stepped = ThetaVector(
        next.theta_est
            .0
            .iter()
            .zip(&grad)
            .map(|(t, g)| t + next.learning_rate * g)
            .collect(),
    );
    next.theta_est = project_box(&stepped, &next.space)?;
    next.episodes_seen += 1;
    Ok(next)
}

/// Replays every completed episode of `history`; with none, the initial estimate is returned.
pub fn infer(initial: &InferenceState, history: &ObservationHistory, model: &dyn AgentModel) -> Result<InferenceState> {
    let mut state = initial.clone();
    for ep in history.episodes() {
        state = episode_update(&state, ep, model)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::testutil::{random_mdp, random_policy};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Two states: state 0 carries feature 1; action 0 stays, action 1 switches.
    struct Chain {
        features: Vec<Vec<f64>>,
    }

    impl AgentModel for Chain {
        fn x_mdp(&self, theta: &ThetaVector) -> Result<TabularMdp> {
            TabularMdp::new(
                2,
                2,
                vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
                vec![theta.0[0], theta.0[0], 0.0, 0.0],
                0.9,
                vec![1.0, 0.0],
            )
        }
        fn features(&self) -> &[Vec<f64>] {
            &self.features
        }
        fn temperature(&self) -> f64 {
            1.0
        }
    }

    fn chain() -> Chain {
        Chain { features: vec![vec![1.0], vec![0.0]] }
    }

    #[test]
    fn history_episodes() {
        let mut h = ObservationHistory::new();
        h.push(0, 1);
        h.push(1, 0);
        h.end_episode();
        h.end_episode();
        h.push(2, 2);
        h.end_episode();
        let eps: Vec<_> = h.episodes().collect();
        assert_eq!(eps, vec![&[(0, 1), (1, 0)][..], &[(2, 2)][..]]);
        assert_eq!(h.episode_boundaries(), &[2, 3]);
    }

    #[test]
    fn zero_episodes_keep_theta0() {
        let space = ParamSpace::cube(1, -1.0, 1.0).unwrap();
        let init = InferenceState::with_defaults(space).unwrap();
        let out = infer(&init, &ObservationHistory::new(), &chain()).unwrap();
        assert_eq!(out.theta_est.0, vec![0.0]);
        assert_eq!(out.episodes_seen, 0);
    }

    #[test]
    fn empty_episode_is_rejected() {
        let space = ParamSpace::cube(1, -1.0, 1.0).unwrap();
        let init = InferenceState::with_defaults(space).unwrap();
        assert!(matches!(episode_update(&init, &[], &chain()), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_feature_step_moves_against_expectation() {
        let space = ParamSpace::cube(1, -1.0, 1.0).unwrap();
        let mut init = InferenceState::with_defaults(space).unwrap();
        init.horizon_matched = false;
        let model = chain();
        let mdp = model.x_mdp(&init.theta_est).unwrap();
        let pol = model.soft_policy(&init.theta_est).unwrap();
        let e = expected_feature_counts(&mdp, &pol, 1, model.features()).unwrap();
        assert!(e[0] > 0.0);
        // one observation at the featureless state: the empirical term vanishes
        let out = episode_update(&init, &[(1, 0)], &model).unwrap();
        assert_abs_diff_eq!(out.theta_est.0[0], -init.learning_rate * e[0], epsilon = 1e-12);

        // over a one-step horizon the model expects exactly φ(s₀) = 0
        init.horizon_matched = true;
        let out = episode_update(&init, &[(1, 0)], &model).unwrap();
        assert_eq!(out.theta_est.0[0], 0.0);
    }

    #[test]
    fn self_loop_counts_are_geometric() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![0.0], 0.9, vec![1.0]).unwrap();
        let pol = StochasticPolicy::uniform(1, 1);
        let c = expected_feature_counts(&mdp, &pol, 0, &[vec![1.0]]).unwrap();
        assert_abs_diff_eq!(c[0], 10.0, epsilon = 1e-10);
    }

    #[test]
    fn absorbing_zero_features() {
        let mdp = TabularMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![0.0; 2], 0.9, vec![1.0, 0.0]).unwrap();
        let pol = StochasticPolicy::uniform(2, 1);
        let c = expected_feature_counts(&mdp, &pol, 0, &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn expected_counts_match_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let gamma = 0.8;
        let mdp = random_mdp(6, 3, gamma, &mut rng);
        let pol = random_policy(6, 3, &mut rng);
        let features: Vec<Vec<f64>> = (0..6).map(|s| vec![(s % 2) as f64, (s == 3) as u8 as f64]).collect();
        let exact = expected_feature_counts(&mdp, &pol, 0, &features).unwrap();
        let horizon = (1e-8f64.ln() / gamma.ln()).ceil() as usize;
        let n = 1_000_000 / horizon;
        let mut sums = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let (mut s, mut w, mut acc) = (0, 1.0, [0.0; 2]);
            for _ in 0..horizon {
                for k in 0..2 {
                    acc[k] += w * features[s][k];
                }
                let a = pol.sample(s, &mut rng);
                s = mdp.sample_next(s, a, &mut rng);
                w *= gamma;
            }
            for k in 0..2 {
                sums[k] += acc[k];
                sq[k] += acc[k] * acc[k];
            }
        }
        for k in 0..2 {
            let mean = sums[k] / n as f64;
            let se = ((sq[k] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - exact[k]).abs() <= 3.0 * se, "feature {k}: mc {mean} exact {}", exact[k]);
        }
    }

    #[test]
    fn estimate_stays_in_box() {
        let space = ParamSpace::cube(1, -1.0, 1.0).unwrap();
        let mut st = InferenceState::new(ThetaVector(vec![0.99]), 0.5, space).unwrap();
        for _ in 0..20 {
            st = episode_update(&st, &[(0, 0); 30], &chain()).unwrap();
            assert!(st.space.contains(&st.theta_est));
        }
        assert_eq!(st.theta_est.0[0], 1.0);
    }

    #[test]
    fn rejects_bad_learning_rate() {
        let space = ParamSpace::cube(1, -1.0, 1.0).unwrap();
        assert!(InferenceState::new(ThetaVector(vec![0.0]), 0.0, space).is_err());
    }
}
