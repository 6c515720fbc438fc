//! Parametric MDP families `M(θ)`: two-agent dynamics, marginalization,
//! smoothness constants and the suboptimality bounds built on them.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::AgentModel;
use crate::mdp::{
    kl_divergence, l1_distance, policy_l1_distance, StochasticPolicy, TabularMdp, PROB_TOL,
};

/// Type parameter of the observed agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThetaVector(pub Vec<f64>);

impl ThetaVector {
    pub fn new(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &ThetaVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for ThetaVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Axis-aligned box `Θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Dimension("box bounds must be nonempty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::Domain(format!("lower {lower:?} exceeds upper {upper:?}")));
        }
        Ok(Self { lower, upper })
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &ThetaVector) -> bool {
        theta.dim() == self.dim()
            && theta
                .0
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *l - 1e-12 <= *x && *x <= *u + 1e-12)
    }

    pub fn check(&self, theta: &ThetaVector) -> Result<()> {
        if theta.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "theta has dimension {}, space has {}",
                theta.dim(),
                self.dim()
            )));
        }
        if !self.contains(theta) {
            return Err(Error::Domain(format!("theta {:?} outside the parameter box", theta.0)));
        }
        Ok(())
    }

    pub fn center(&self) -> ThetaVector {
        ThetaVector(self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect())
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    /// Number of points per axis for a grid with spacing at most `spacing`
    /// that includes both endpoints.
    pub fn points_per_axis(&self, axis: usize, spacing: f64) -> usize {
        let width = self.upper[axis] - self.lower[axis];
        if width == 0.0 {
            return 1;
        }
        // round first so 2 / 0.1 lands on 20, not 20.000000000000004
        let intervals = (width / spacing * 1e9).round() / 1e9;
        intervals.ceil() as usize + 1
    }

    /// Inclusive grid with per-axis spacing at most `spacing`, first axis slowest.
    pub fn grid(&self, spacing: f64) -> Result<Vec<ThetaVector>> {
        self.grid_capped(spacing, usize::MAX)
    }

    pub fn grid_capped(&self, spacing: f64, cap: usize) -> Result<Vec<ThetaVector>> {
        if spacing.is_nan() || spacing <= 0.0 {
            return Err(Error::Domain(format!("grid spacing {spacing} must be positive")));
        }
        let counts: Vec<usize> = (0..self.dim()).map(|i| self.points_per_axis(i, spacing)).collect();
        let total = counts.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c)).unwrap_or(usize::MAX);
        if total > cap {
            return Err(Error::Capacity { requested: total, cap });
        }
        let axes: Vec<Vec<f64>> = counts
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                if n == 1 {
                    vec![0.5 * (self.lower[i] + self.upper[i])]
                } else {
                    let width = self.upper[i] - self.lower[i];
                    (0..n)
                        .map(|k| self.lower[i] + width * k as f64 / (n - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; self.dim()];
        for _ in 0..total {
            out.push(ThetaVector(idx.iter().enumerate().map(|(i, &k)| axes[i][k]).collect()));
            for i in (0..self.dim()).rev() {
                idx[i] += 1;
                if idx[i] < counts[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        Ok(out)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ThetaVector {
        ThetaVector(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| l + (u - l) * rng.random::<f64>())
                .collect(),
        )
    }

    /// Componentwise clamp into the box.
    pub fn project(&self, theta: &ThetaVector) -> ThetaVector {
        ThetaVector(
            theta
                .0
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(x, (l, u))| x.clamp(*l, *u))
                .collect(),
        )
    }
}

/// Joint kernel `T^{x,y}(s' | s, a, aˣ)`, indexed `((s * n_y + a) * n_x + b) * n_states + s'`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoAgentDynamics {
    n_states: usize,
    n_y_actions: usize,
    n_x_actions: usize,
    transition: Vec<f64>,
}

impl TwoAgentDynamics {
    pub fn new(n_states: usize, n_y_actions: usize, n_x_actions: usize, transition: Vec<f64>) -> Result<Self> {
        if transition.len() != n_states * n_y_actions * n_x_actions * n_states {
            return Err(Error::Dimension(format!(
                "joint kernel has {} entries, expected {}",
                transition.len(),
                n_states * n_y_actions * n_x_actions * n_states
            )));
        }
        for row in transition.chunks(n_states) {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidModel(format!("joint kernel row sums to {sum}")));
            }
        }
        Ok(Self { n_states, n_y_actions, n_x_actions, transition })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_y_actions(&self) -> usize {
        self.n_y_actions
    }

    pub fn n_x_actions(&self) -> usize {
        self.n_x_actions
    }

    pub fn row(&self, s: usize, a: usize, b: usize) -> &[f64] {
        let start = ((s * self.n_y_actions + a) * self.n_x_actions + b) * self.n_states;
        &self.transition[start..start + self.n_states]
    }
}

/// `T(s'|s, a) = Σ_b πˣ(b|s) T^{x,y}(s'|s, a, b)`.
pub fn marginalize(dynamics: &TwoAgentDynamics, x_policy: &StochasticPolicy) -> Result<Vec<f64>> {
    if x_policy.n_states() != dynamics.n_states || x_policy.n_actions() != dynamics.n_x_actions {
        return Err(Error::Dimension(format!(
            "x policy is {}x{} but dynamics expect {}x{}",
            x_policy.n_states(),
            x_policy.n_actions(),
            dynamics.n_states,
            dynamics.n_x_actions
        )));
    }
    let ns = dynamics.n_states;
    let mut out = vec![0.0; ns * dynamics.n_y_actions * ns];
    for s in 0..ns {
        for a in 0..dynamics.n_y_actions {
            let target = &mut out[(s * dynamics.n_y_actions + a) * ns..][..ns];
            for b in 0..dynamics.n_x_actions {
                let w = x_policy.prob(s, b);
                if w == 0.0 {
                    continue;
                }
                for (t, p) in target.iter_mut().zip(dynamics.row(s, a, b)) {
                    *t += w * p;
                }
            }
        }
    }
    Ok(out)
}

/// `max_{s, a, b, b'} ‖T^{x,y}(·|s,a,b) − T^{x,y}(·|s,a,b')‖₁`; zero with a single x-action.
pub fn influence(dynamics: &TwoAgentDynamics) -> f64 {
    let mut best: f64 = 0.0;
    for s in 0..dynamics.n_states {
        for a in 0..dynamics.n_y_actions {
            for b in 0..dynamics.n_x_actions {
                for b2 in b + 1..dynamics.n_x_actions {
                    best = best.max(l1_distance(dynamics.row(s, a, b), dynamics.row(s, a, b2)));
                }
            }
        }
    }
    best
}

/// One concrete member `M(θ)` with the observed agent's policy.
#[derive(Debug, Clone)]
pub struct FamilyInstance {
    pub theta: ThetaVector,
    /// Rewards as defined by the environment (not shifted).
    pub mdp: TabularMdp,
    pub x_policy: StochasticPolicy,
}

/// A parametric family `θ ↦ M(θ)` as perceived by the acting agent.
///
/// States, actions and kinematics are shared across the family; `θ` only enters
/// through the reward table and the observed agent's policy.
pub trait MdpFamily: Send + Sync {
    fn name(&self) -> String;
    fn space(&self) -> &ParamSpace;
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn n_x_actions(&self) -> usize;
    fn discount(&self) -> f64;
    fn initial_dist(&self) -> Vec<f64>;
    /// `R_θ(s, a)`, row-major.
    fn rewards(&self, theta: &ThetaVector) -> Result<Vec<f64>>;
    /// Smallest and largest reward attained anywhere in the family.
    fn reward_range(&self) -> (f64, f64);
    /// `πˣ_θ` indexed by joint state.
    fn x_policy(&self, theta: &ThetaVector) -> Result<StochasticPolicy>;
    fn two_agent_dynamics(&self) -> TwoAgentDynamics;
    /// Samples `s'` given both actions. The observed agent's randomness comes
    /// only from `rng_x` so its trajectory does not depend on the acting agent.
    fn sample_step(&self, s: usize, a: usize, b: usize, rng_x: &mut dyn RngCore, rng_y: &mut dyn RngCore) -> usize;
    /// The observed agent's own state, as seen by the inference module.
    fn x_state(&self, s: usize) -> usize;
    /// Network input for the augmented state `(s, θ)`.
    fn augmented_input(&self, s: usize, theta: &ThetaVector) -> Vec<f64>;
    /// JSON description used for artifact hashing.
    fn describe(&self) -> serde_json::Value;

    fn agent_model(&self) -> Option<&dyn AgentModel> {
        None
    }

    /// Every type, when `Θ` is a finite set rather than the whole box.
    fn finite_types(&self) -> Option<Vec<ThetaVector>> {
        None
    }

    fn marginal_transition(&self, x_policy: &StochasticPolicy) -> Result<Vec<f64>> {
        marginalize(&self.two_agent_dynamics(), x_policy)
    }

    /// Offset added to every reward so that the family's rewards lie in `[0, r_max]`.
    fn reward_offset(&self) -> f64 {
        -self.reward_range().0
    }

    fn r_max(&self) -> f64 {
        let (lo, hi) = self.reward_range();
        hi - lo
    }

    fn build(&self, theta: &ThetaVector) -> Result<FamilyInstance> {
        self.space().check(theta)?;
        let x_policy = self.x_policy(theta)?;
        let transition = self.marginal_transition(&x_policy)?;
        let mdp = TabularMdp::new(
            self.n_states(),
            self.n_actions(),
            transition,
            self.rewards(theta)?,
            self.discount(),
            self.initial_dist(),
        )?;
        Ok(FamilyInstance { theta: theta.clone(), mdp, x_policy })
    }

    /// `M(θ)` with rewards shifted into `[0, r_max]`.
    fn build_shifted(&self, theta: &ThetaVector) -> Result<FamilyInstance> {
        let mut inst = self.build(theta)?;
        inst.mdp = inst.mdp.shifted(self.reward_offset());
        Ok(inst)
    }
}

/// Smoothness constants of a family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessProfile {
    pub alpha: f64,
    pub beta: f64,
    /// Influence under the literal L1 reading, in `[0, 2]`.
    pub influence: f64,
}

impl SmoothnessProfile {
    /// Influence rescaled to total variation, in `[0, 1]`.
    pub fn influence_tv(&self) -> f64 {
        self.influence / 2.0
    }

    /// Empirical profile over the given θ sample plus the materialized joint kernel.
    pub fn estimate(family: &dyn MdpFamily, thetas: &[ThetaVector]) -> Result<Self> {
        Ok(Self {
            alpha: empirical_alpha(family, thetas)?,
            beta: empirical_beta(family, thetas)?,
            influence: influence(&family.two_agent_dynamics()),
        })
    }
}

fn distinct_pairs(thetas: &[ThetaVector]) -> Result<Vec<(usize, usize, f64)>> {
    let mut pairs = Vec::new();
    for i in 0..thetas.len() {
        for j in i + 1..thetas.len() {
            let d = thetas[i].distance(&thetas[j]);
            if d > 0.0 {
                pairs.push((i, j, d));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::UndefinedRatio("need at least two distinct thetas".into()));
    }
    Ok(pairs)
}

/// `max_{θ≠θ'} max_{s,a} |R_θ − R_θ'| / (r_max ‖θ − θ'‖₂)`.
pub fn empirical_alpha(family: &dyn MdpFamily, thetas: &[ThetaVector]) -> Result<f64> {
    let pairs = distinct_pairs(thetas)?;
    let r_max = family.r_max();
    if r_max <= 0.0 {
        return Err(Error::UndefinedRatio("family has zero reward span".into()));
    }
    let rewards = thetas.iter().map(|t| family.rewards(t)).collect::<Result<Vec<_>>>()?;
    Ok(pairs
        .into_iter()
        .map(|(i, j, d)| {
            let gap = rewards[i]
                .iter()
                .zip(&rewards[j])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            gap / (r_max * d)
        })
        .fold(0.0, f64::max))
}

/// `max_{θ≠θ'} max_s KL(πˣ_θ(·|s) ‖ πˣ_θ'(·|s)) / ‖θ − θ'‖₂`, `+∞` on support loss.
pub fn empirical_beta(family: &dyn MdpFamily, thetas: &[ThetaVector]) -> Result<f64> {
    let pairs = distinct_pairs(thetas)?;
    let policies = thetas.iter().map(|t| family.x_policy(t)).collect::<Result<Vec<_>>>()?;
    let mut best: f64 = 0.0;
    for (i, j, d) in pairs {
        // KL is asymmetric; both orders are pairs of the definition
        for (p, q) in [(&policies[i], &policies[j]), (&policies[j], &policies[i])] {
            let kl = (0..p.n_states())
                .map(|s| kl_divergence(p.row(s), q.row(s)))
                .fold(0.0, f64::max);
            best = best.max(kl / d);
        }
    }
    Ok(best)
}

fn check_bound_inputs(values: &[(&str, f64)], gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!("discount {gamma} not in [0, 1)")));
    }
    for (name, v) in values {
        if v.is_nan() || *v < 0.0 {
            return Err(Error::Domain(format!("{name} = {v} must be nonnegative")));
        }
    }
    Ok(())
}

/// Additive suboptimality allowance
/// `ε α r_max / (1−γ) + I_x √(2 β ε) r_max / (1−γ)²`.
pub fn theorem2_bound(profile: &SmoothnessProfile, epsilon: f64, r_max: f64, gamma: f64) -> Result<f64> {
    check_bound_inputs(
        &[
            ("alpha", profile.alpha),
            ("beta", profile.beta),
            ("influence", profile.influence),
            ("epsilon", epsilon),
            ("r_max", r_max),
        ],
        gamma,
    )?;
    let h = 1.0 - gamma;
    let reward_term = epsilon * profile.alpha * r_max / h;
    let dynamics_term = if profile.influence == 0.0 {
        0.0
    } else {
        profile.influence * (2.0 * profile.beta * epsilon).sqrt() * r_max / (h * h)
    };
    Ok(reward_term + dynamics_term)
}

/// Pool guarantee: the same allowance at `ε = ε' + ε''`.
pub fn corollary1_bound(
    profile: &SmoothnessProfile,
    eps_cover: f64,
    eps_infer: f64,
    r_max: f64,
    gamma: f64,
) -> Result<f64> {
    check_bound_inputs(&[("eps_cover", eps_cover), ("eps_infer", eps_infer)], gamma)?;
    theorem2_bound(profile, eps_cover + eps_infer, r_max, gamma)
}

/// `(ε_r, ε_p)` for two MDPs on the same state/action sets, with rewards measured
/// against the shared ceiling `r_max`.
pub fn eps_equivalence(m1: &TabularMdp, m2: &TabularMdp, r_max: f64) -> Result<(f64, f64)> {
    if m1.n_states() != m2.n_states() || m1.n_actions() != m2.n_actions() {
        return Err(Error::Dimension(format!(
            "MDPs are {}x{} and {}x{}",
            m1.n_states(),
            m1.n_actions(),
            m2.n_states(),
            m2.n_actions()
        )));
    }
    if m1.discount() != m2.discount() || m1.initial_dist() != m2.initial_dist() {
        return Err(Error::Dimension("MDPs differ in discount or initial distribution".into()));
    }
    if r_max.is_nan() || r_max <= 0.0 {
        return Err(Error::Domain(format!("r_max {r_max} must be positive")));
    }
    let ns = m1.n_states();
    let eps_p = m1
        .transition()
        .chunks(ns)
        .zip(m2.transition().chunks(ns))
        .map(|(a, b)| l1_distance(a, b))
        .fold(0.0, f64::max);
    let eps_r = m1
        .rewards()
        .iter()
        .zip(m2.rewards())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / r_max;
    Ok((eps_r, eps_p))
}

/// `ε_r r_max / (1−γ) + γ ε_p r_max / (1−γ)²`.
pub fn value_diff_bound(eps_r: f64, eps_p: f64, r_max: f64, gamma: f64) -> Result<f64> {
    check_bound_inputs(&[("eps_r", eps_r), ("eps_p", eps_p), ("r_max", r_max)], gamma)?;
    let h = 1.0 - gamma;
    Ok(eps_r * r_max / h + gamma * eps_p * r_max / (h * h))
}

/// Both sides of the policy-to-dynamics smoothness lemmas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessCheck {
    /// `max_{s,a} ‖T_{p1}(·|s,a) − T_{p2}(·|s,a)‖₁`.
    pub lhs: f64,
    /// `max_s ‖p1(·|s) − p2(·|s)‖₁`.
    pub rhs_simple: f64,
    /// Influence-aware right side with influence read as total variation.
    pub rhs_influence_tv: f64,
    /// Influence-aware right side with the literal L1 influence.
    pub rhs_influence_l1: f64,
}

impl SmoothnessCheck {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs_simple + 1e-12
    }
}

pub fn smoothness_lemma_check(
    dynamics: &TwoAgentDynamics,
    p1: &StochasticPolicy,
    p2: &StochasticPolicy,
) -> Result<SmoothnessCheck> {
    let t1 = marginalize(dynamics, p1)?;
    let t2 = marginalize(dynamics, p2)?;
    let ns = dynamics.n_states();
    let lhs = t1
        .chunks(ns)
        .zip(t2.chunks(ns))
        .map(|(a, b)| l1_distance(a, b))
        .fold(0.0, f64::max);
    let rhs_simple = policy_l1_distance(p1, p2)?;
    let inf = influence(dynamics);
    Ok(SmoothnessCheck {
        lhs,
        rhs_simple,
        rhs_influence_tv: inf / 2.0 * rhs_simple,
        rhs_influence_l1: inf * rhs_simple,
    })
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::mdp::testutil::random_simplex;

    pub fn random_dynamics<R: Rng>(ns: usize, ny: usize, nx: usize, rng: &mut R) -> TwoAgentDynamics {
        let mut t = Vec::with_capacity(ns * ny * nx * ns);
        for _ in 0..ns * ny * nx {
            t.extend(random_simplex(ns, rng));
        }
        TwoAgentDynamics::new(ns, ny, nx, t).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::mdp::testutil::{random_mdp, random_policy};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn profile(alpha: f64, beta: f64, influence: f64) -> SmoothnessProfile {
        SmoothnessProfile { alpha, beta, influence }
    }

    #[test]
    fn grid_counts() {
        let space = ParamSpace::cube(2, -1.0, 1.0).unwrap();
        assert_eq!(space.grid(0.1).unwrap().len(), 441);
        assert_eq!(space.grid(0.25).unwrap().len(), 81);
        let corners = space.grid(2.0).unwrap();
        assert_eq!(corners.len(), 4);
        assert_eq!(corners[0].0, vec![-1.0, -1.0]);
        assert_eq!(corners[3].0, vec![1.0, 1.0]);
        assert!(matches!(space.grid_capped(0.001, 1000), Err(Error::Capacity { .. })));
    }

    #[test]
    fn projection_clamps_and_is_idempotent() {
        let space = ParamSpace::cube(2, -1.0, 1.0).unwrap();
        let p = space.project(&ThetaVector(vec![1.5, -2.0]));
        assert_eq!(p.0, vec![1.0, -1.0]);
        assert_eq!(space.project(&p), p);
        let inner = ThetaVector(vec![0.3, -0.2]);
        assert_eq!(space.project(&inner), inner);
    }

    #[test]
    fn marginal_of_action_independent_dynamics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = random_dynamics(4, 3, 1, &mut rng);
        let mut t = Vec::new();
        for s in 0..4 {
            for a in 0..3 {
                for _ in 0..2 {
                    t.extend_from_slice(base.row(s, a, 0));
                }
            }
        }
        let dyn2 = TwoAgentDynamics::new(4, 3, 2, t).unwrap();
        let pol = StochasticPolicy::uniform(4, 2);
        let m = marginalize(&dyn2, &pol).unwrap();
        for s in 0..4 {
            for a in 0..3 {
                let row = &m[(s * 3 + a) * 4..][..4];
                for (x, y) in row.iter().zip(base.row(s, a, 0)) {
                    assert_abs_diff_eq!(x, y, epsilon = 1e-15);
                }
            }
        }
        assert_eq!(influence(&dyn2), 0.0);
        assert_eq!(influence(&base), 0.0);
        let p1 = StochasticPolicy::deterministic(2, &[0, 0, 0, 0]).unwrap();
        let p2 = StochasticPolicy::deterministic(2, &[1, 1, 1, 1]).unwrap();
        let c = smoothness_lemma_check(&dyn2, &p1, &p2).unwrap();
        assert!(c.lhs < 1e-15);
        assert_eq!(c.rhs_simple, 2.0);
    }

    #[test]
    fn marginal_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = random_dynamics(3, 2, 3, &mut rng);
        let pol = random_policy(3, 3, &mut rng);
        let m = marginalize(&d, &pol).unwrap();
        for row in m.chunks(3) {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        let (s, a, n) = (1, 1, 100_000);
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let b = pol.sample(s, &mut rng);
            counts[crate::mdp::sample_index(d.row(s, a, b), &mut rng)] += 1;
        }
        for sp in 0..3 {
            let p = m[(s * 2 + a) * 3 + sp];
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((counts[sp] as f64 / n as f64 - p).abs() <= 3.0 * sigma);
        }
    }

    #[test]
    fn single_x_action_has_no_influence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(influence(&random_dynamics(3, 2, 1, &mut rng)), 0.0);
    }

    #[test]
    fn bound_arithmetic() {
        assert_eq!(theorem2_bound(&profile(1.0, 1.0, 1.0), 0.0, 1.0, 0.9).unwrap(), 0.0);
        assert_abs_diff_eq!(theorem2_bound(&profile(1.0, 5.0, 0.0), 0.1, 1.0, 0.9).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(theorem2_bound(&profile(1.0, 1.0, 1.0), 0.02, 1.0, 0.5).unwrap(), 0.84, epsilon = 1e-12);
        assert!(matches!(theorem2_bound(&profile(1.0, 1.0, 1.0), 0.1, 1.0, 1.0), Err(Error::Domain(_))));
        assert!(theorem2_bound(&profile(-1.0, 1.0, 1.0), 0.1, 1.0, 0.5).is_err());

        let p = profile(0.3, 0.7, 1.2);
        assert_eq!(corollary1_bound(&p, 0.0, 0.0, 2.0, 0.8).unwrap(), 0.0);
        assert_eq!(
            corollary1_bound(&p, 0.25, 0.05, 2.0, 0.8).unwrap(),
            theorem2_bound(&p, 0.25 + 0.05, 2.0, 0.8).unwrap()
        );

        assert_eq!(value_diff_bound(0.0, 0.0, 1.0, 0.9).unwrap(), 0.0);
        assert_abs_diff_eq!(value_diff_bound(0.1, 0.0, 1.0, 0.9).unwrap(), 1.0, epsilon = 1e-12);
        assert!(value_diff_bound(0.1, 0.0, 1.0, 1.2).is_err());
    }

    #[test]
    fn bound_is_monotone_in_epsilon() {
        let p = profile(0.4, 0.9, 1.6);
        let mut prev = 0.0;
        for k in 0..=200 {
            let b = theorem2_bound(&p, k as f64 * 0.01, 3.0, 0.95).unwrap();
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn corollary_matches_theorem_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let p = profile(rng.random(), rng.random(), 2.0 * rng.random::<f64>());
            let (a, b, r, g) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>() * 5.0, rng.random::<f64>() * 0.99);
            assert_eq!(corollary1_bound(&p, a, b, r, g).unwrap(), theorem2_bound(&p, a + b, r, g).unwrap());
        }
    }

    #[test]
    fn eps_equivalence_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let m = random_mdp(4, 2, 0.9, &mut rng);
        assert_eq!(eps_equivalence(&m, &m, 1.0).unwrap(), (0.0, 0.0));

        // move mass δ from one next state to another in a single row
        let delta = 0.05;
        let mut t = m.transition().to_vec();
        let row = &mut t[(2 * 2 + 1) * 4..][..4];
        let (from, to) = (0..4).map(|i| (i, (i + 1) % 4)).find(|&(i, _)| row[i] >= delta).unwrap();
        row[from] -= delta;
        row[to] += delta;
        let m2 = TabularMdp::new(4, 2, t, m.rewards().to_vec(), 0.9, m.initial_dist().to_vec()).unwrap();
        let (er, ep) = eps_equivalence(&m, &m2, 1.0).unwrap();
        assert_eq!(er, 0.0);
        assert_abs_diff_eq!(ep, 2.0 * delta, epsilon = 1e-12);

        let other = random_mdp(3, 2, 0.9, &mut rng);
        assert!(matches!(eps_equivalence(&m, &other, 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn simple_smoothness_lemma_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..500 {
            let ns = rng.random_range(2..6);
            let ny = rng.random_range(1..4);
            let nx = rng.random_range(1..4);
            let d = random_dynamics(ns, ny, nx, &mut rng);
            let p1 = random_policy(ns, nx, &mut rng);
            let p2 = random_policy(ns, nx, &mut rng);
            let c = smoothness_lemma_check(&d, &p1, &p2).unwrap();
            assert!(c.holds(), "{c:?}");
            assert!(c.lhs <= c.rhs_influence_l1 + 1e-12);
        }
    }

    #[test]
    fn pinsker_on_random_softmax_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..1000 {
            let n = rng.random_range(2..7);
            let logits = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                let raw: Vec<f64> = (0..n).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
                let z: f64 = raw.iter().map(|x| x.exp()).sum();
                raw.iter().map(|x| x.exp() / z).collect()
            };
            let (p, q) = (logits(&mut rng), logits(&mut rng));
            assert!(l1_distance(&p, &q) <= (2.0 * kl_divergence(&p, &q)).sqrt() + 1e-12);
        }
    }
}
