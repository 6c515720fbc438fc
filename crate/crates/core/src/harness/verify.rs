//! Randomized numerical checks of the value-difference, smoothness, Pinsker and
//! regret bounds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{GatheringConfig, GatheringGame};
use crate::error::{Error, Result};
use crate::mdp::{
    kl_divergence, l1_distance, policy_evaluation, total_return, value_iteration, StochasticPolicy, TabularMdp,
    DEFAULT_VI_TOL,
};
use crate::parametric::{
    corollary1_bound, eps_equivalence, smoothness_lemma_check, theorem2_bound, value_diff_bound, MdpFamily,
    SmoothnessProfile, ThetaVector, TwoAgentDynamics,
};
use crate::pool::audit_cover;
use crate::seed;

/// Slack allowed for floating-point error when comparing a measurement with its bound.
pub const BOUND_SLACK: f64 = 1e-9;

pub fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    // normalized exponentials give a uniform draw on the simplex
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

/// Random MDP with rewards in `[0, 1]` and a uniform initial distribution.
pub fn random_mdp<R: Rng + ?Sized>(ns: usize, na: usize, gamma: f64, rng: &mut R) -> Result<TabularMdp> {
    let transition = (0..ns * na).flat_map(|_| random_simplex(ns, rng)).collect();
    let reward = (0..ns * na).map(|_| rng.random::<f64>()).collect();
    TabularMdp::new(ns, na, transition, reward, gamma, vec![1.0 / ns as f64; ns])
}

pub fn random_policy<R: Rng + ?Sized>(ns: usize, na: usize, rng: &mut R) -> Result<StochasticPolicy> {
    StochasticPolicy::new(ns, na, (0..ns).flat_map(|_| random_simplex(na, rng)).collect())
}

/// Random softmax rows with logits in `[-scale, scale]`.
pub fn random_softmax_policy<R: Rng + ?Sized>(ns: usize, na: usize, scale: f64, rng: &mut R) -> Result<StochasticPolicy> {
    let mut probs = Vec::with_capacity(ns * na);
    for _ in 0..ns {
        let logits: Vec<f64> = (0..na).map(|_| rng.random_range(-scale..=scale)).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        probs.extend(logits.iter().map(|l| (l - m).exp() / z));
    }
    StochasticPolicy::new(ns, na, probs)
}

pub fn random_dynamics<R: Rng + ?Sized>(ns: usize, ny: usize, nx: usize, rng: &mut R) -> Result<TwoAgentDynamics> {
    let t = (0..ns * ny * nx).flat_map(|_| random_simplex(ns, rng)).collect();
    TwoAgentDynamics::new(ns, ny, nx, t)
}

/// Outcome of one value-difference trial on a random MDP pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueDiffTrial {
    pub eps_r: f64,
    pub eps_p: f64,
    pub measured_gap: f64,
    pub bound: f64,
}

impl ValueDiffTrial {
    pub fn holds(&self) -> bool {
        self.measured_gap <= self.bound + BOUND_SLACK
    }
}

/// Draws `M₁`, a perturbed copy `M₂` and a policy `π`, then compares
/// `‖V^π_{M₁} − V^π_{M₂}‖_∞` with the value-difference bound (`r_max = 1`).
pub fn random_value_diff_trial<R: Rng + ?Sized>(max_states: usize, max_actions: usize, gamma: f64, rng: &mut R) -> Result<ValueDiffTrial> {
    let ns = rng.random_range(1..=max_states);
    let na = rng.random_range(1..=max_actions);
    let m1 = random_mdp(ns, na, gamma, rng)?;
    let other = random_mdp(ns, na, gamma, rng)?;
    let lambda: f64 = rng.random();
    let transition: Vec<f64> = m1
        .transition()
        .iter()
        .zip(other.transition())
        .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
        .collect();
    let reward: Vec<f64> = m1
        .rewards()
        .iter()
        .zip(other.rewards())
        .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
        .collect();
    let m2 = TabularMdp::new(ns, na, transition, reward, gamma, m1.initial_dist().to_vec())?;
    let pi = random_policy(ns, na, rng)?;
    let (eps_r, eps_p) = eps_equivalence(&m1, &m2, 1.0)?;
    let v1 = policy_evaluation(&m1, &pi)?;
    let v2 = policy_evaluation(&m2, &pi)?;
    Ok(ValueDiffTrial { eps_r, eps_p, measured_gap: v1.sup_distance(&v2), bound: value_diff_bound(eps_r, eps_p, 1.0, gamma)? })
}

/// Outcome of one smoothness/Pinsker trial on random dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessTrial {
    pub transition_gap: f64,
    pub policy_gap: f64,
    /// Smallest `√(2 KL) − ‖p − q‖₁` over policy rows.
    pub pinsker_slack: f64,
}

impl SmoothnessTrial {
    pub fn holds(&self) -> bool {
        self.transition_gap <= self.policy_gap + BOUND_SLACK && self.pinsker_slack >= -BOUND_SLACK
    }
}

fn pinsker_slack(p: &StochasticPolicy, q: &StochasticPolicy) -> f64 {
    (0..p.n_states())
        .map(|s| (2.0 * kl_divergence(p.row(s), q.row(s))).sqrt() - l1_distance(p.row(s), q.row(s)))
        .fold(f64::INFINITY, f64::min)
}

pub fn random_smoothness_trial<R: Rng + ?Sized>(rng: &mut R) -> Result<SmoothnessTrial> {
    let ns = rng.random_range(1..=6);
    let ny = rng.random_range(1..=3);
    let nx = rng.random_range(1..=4);
    let dynamics = random_dynamics(ns, ny, nx, rng)?;
    let scale = rng.random_range(0.1..4.0);
    let p = random_softmax_policy(ns, nx, scale, rng)?;
    let q = random_softmax_policy(ns, nx, scale, rng)?;
    let check = smoothness_lemma_check(&dynamics, &p, &q)?;
    Ok(SmoothnessTrial { transition_gap: check.lhs, policy_gap: check.rhs_simple, pinsker_slack: pinsker_slack(&p, &q) })
}

/// One row of the bounds report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub trial_id: usize,
    pub check: String,
    pub eps_r: f64,
    pub eps_p: f64,
    pub measured_gap: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub rows: Vec<BoundsRow>,
    pub profile: SmoothnessProfile,
}

impl BoundsReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    /// Error naming the first failing trial, if any.
    pub fn check(&self) -> Result<()> {
        match self.rows.iter().find(|r| !r.pass) {
            None => Ok(()),
            Some(r) => Err(Error::Verification {
                trial: r.trial_id,
                detail: format!("{}: measured {} exceeds bound {}", r.check, r.measured_gap, r.bound),
            }),
        }
    }
}

/// The 3×3 gathering family used by the campaign.
pub fn campaign_family() -> Result<GatheringGame> {
    GatheringGame::new(GatheringConfig::for_grid(3))
}

/// Runs every bound on `n_trials` random type pairs of the 3×3 family and
/// records each comparison. `bound_scale` multiplies every right-hand side
/// (1.0 in normal use).
pub fn run_bounds_campaign(seed: u64, n_trials: usize, bound_scale: f64) -> Result<BoundsReport> {
    if n_trials == 0 {
        return Err(Error::Domain("the campaign needs at least one trial".into()));
    }
    let family = campaign_family()?;
    let space = family.space();
    let profile = SmoothnessProfile::estimate(&family, &space.grid(0.25)?)?;
    let r_max = family.r_max();
    let gamma = family.discount();
    let dynamics = family.two_agent_dynamics();
    let mut rows = Vec::with_capacity(4 * n_trials);

    for trial in 0..n_trials {
        let mut rng = seed::rng(seed, &[trial as u64]);
        let ta = space.sample(&mut rng);
        let tb = space.sample(&mut rng);
        let ma = family.build_shifted(&ta)?;
        let mb = family.build_shifted(&tb)?;
        let (eps_r, eps_p) = eps_equivalence(&ma.mdp, &mb.mdp, r_max)?;
        let mut push = |check: &str, measured: f64, bound: f64| {
            let bound = bound * bound_scale;
            rows.push(BoundsRow {
                trial_id: trial,
                check: check.into(),
                eps_r,
                eps_p,
                measured_gap: measured,
                bound,
                pass: measured <= bound + BOUND_SLACK,
            });
        };

        let (_, pi_a) = value_iteration(&ma.mdp, DEFAULT_VI_TOL)?;
        let gap = policy_evaluation(&ma.mdp, &pi_a)?.sup_distance(&policy_evaluation(&mb.mdp, &pi_a)?);
        push("value_diff", gap, value_diff_bound(eps_r, eps_p, r_max, gamma)?);

        let smooth = smoothness_lemma_check(&dynamics, &ma.x_policy, &mb.x_policy)?;
        push("smoothness", smooth.lhs, smooth.rhs_simple);

        let (l1, kl) = (0..ma.x_policy.n_states())
            .map(|s| {
                let (p, q) = (ma.x_policy.row(s), mb.x_policy.row(s));
                (l1_distance(p, q), (2.0 * kl_divergence(p, q)).sqrt())
            })
            .max_by(|a, b| (a.0 - a.1).total_cmp(&(b.0 - b.1)))
            .expect("nonempty");
        push("pinsker", l1, kl);

        // regret of acting on the estimate tb when the truth is ta
        let (_, pi_b) = value_iteration(&mb.mdp, DEFAULT_VI_TOL)?;
        let regret = total_return(&ma.mdp, &pi_a)? - total_return(&ma.mdp, &pi_b)?;
        push("theorem2", regret, theorem2_bound(&profile, ta.distance(&tb), r_max, gamma)?);
    }
    Ok(BoundsReport { rows, profile })
}

/// [`run_bounds_campaign`] that fails on the first violated inequality.
pub fn verify_bounds_campaign(seed: u64, n_trials: usize) -> Result<BoundsReport> {
    let report = run_bounds_campaign(seed, n_trials, 1.0)?;
    report.check()?;
    Ok(report)
}

/// One `(θ_test, θ̂)` pair of the regret-bound audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretAuditRow {
    pub theta_test: ThetaVector,
    pub theta_hat: ThetaVector,
    pub distance: f64,
    pub epsilon: f64,
    pub regret: f64,
    pub theorem2: f64,
    pub corollary1: f64,
}

impl RegretAuditRow {
    pub fn holds(&self) -> bool {
        self.distance <= self.epsilon + BOUND_SLACK
            && self.regret <= self.theorem2 + BOUND_SLACK
            && self.regret <= self.corollary1 + BOUND_SLACK
    }
}

/// Acting on the nearest pool type `θ̂` when the truth is `θ_test`, for every
/// test type: exact regret (shifted rewards) against the regret bound at the
/// pool's cover radius.
pub fn regret_bound_audit(
    family: &dyn MdpFamily,
    profile: &SmoothnessProfile,
    pool_thetas: &[ThetaVector],
    test_thetas: &[ThetaVector],
) -> Result<Vec<RegretAuditRow>> {
    let epsilon = audit_cover(family.space(), pool_thetas, crate::pool::AUDIT_RESOLUTION)?;
    let r_max = family.r_max();
    let gamma = family.discount();
    test_thetas
        .iter()
        .map(|t| {
            let mut hat = 0;
            for (i, p) in pool_thetas.iter().enumerate() {
                if p.distance(t) < pool_thetas[hat].distance(t) {
                    hat = i;
                }
            }
            let theta_hat = pool_thetas[hat].clone();
            let truth = family.build_shifted(t)?.mdp;
            let est = family.build_shifted(&theta_hat)?.mdp;
            let (_, pi_true) = value_iteration(&truth, DEFAULT_VI_TOL)?;
            let (_, pi_hat) = value_iteration(&est, DEFAULT_VI_TOL)?;
            let regret = total_return(&truth, &pi_true)? - total_return(&truth, &pi_hat)?;
            Ok(RegretAuditRow {
                distance: t.distance(&theta_hat),
                theta_test: t.clone(),
                theta_hat,
                epsilon,
                regret,
                theorem2: theorem2_bound(profile, epsilon, r_max, gamma)?,
                corollary1: corollary1_bound(profile, epsilon, 0.0, r_max, gamma)?,
            })
        })
        .collect()
}
