//! Tabular MDPs and exact solvers.
//!
//! Tensors are stored row-major: `transition[(s * n_actions + a) * n_states + s']`
//! and `reward[s * n_actions + a]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums and distributions must match 1 within this slack.
pub const PROB_TOL: f64 = 1e-9;
/// Default sup-norm residual for value iteration.
pub const DEFAULT_VI_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;
/// Above this state count policy evaluation switches from a direct solve to iteration.
pub const DIRECT_SOLVE_LIMIT: usize = 2000;
const EVAL_RESIDUAL: f64 = 1e-10;
const SOFT_RESIDUAL: f64 = 1e-8;

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &p in row {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidModel(format!("{what}: entry {p} is not a probability")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidModel(format!("{what}: row sums to {sum}")));
    }
    Ok(())
}

/// A finite discounted MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdp", into = "RawMdp")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    discount: f64,
    initial_dist: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMdp {
    n_states: usize,
    n_actions: usize,
    discount: f64,
    initial_dist: Vec<f64>,
    reward: Vec<f64>,
    transition: Vec<f64>,
}

impl TryFrom<RawMdp> for TabularMdp {
    type Error = Error;
    fn try_from(raw: RawMdp) -> Result<Self> {
        TabularMdp::new(
            raw.n_states,
            raw.n_actions,
            raw.transition,
            raw.reward,
            raw.discount,
            raw.initial_dist,
        )
    }
}

impl From<TabularMdp> for RawMdp {
    fn from(m: TabularMdp) -> Self {
        RawMdp {
            n_states: m.n_states,
            n_actions: m.n_actions,
            discount: m.discount,
            initial_dist: m.initial_dist,
            reward: m.reward,
            transition: m.transition,
        }
    }
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidModel("need at least one state and one action".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::Dimension(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if initial_dist.len() != n_states {
            return Err(Error::Dimension(format!(
                "initial distribution has {} entries, expected {n_states}",
                initial_dist.len()
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::Domain(format!("discount {discount} not in [0, 1)")));
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidModel(format!("non-finite reward {r}")));
        }
        for (i, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row, &format!("transition row (s={}, a={})", i / n_actions, i % n_actions))?;
        }
        check_distribution(&initial_dist, "initial distribution")?;
        Ok(Self { n_states, n_actions, transition, reward, discount, initial_dist })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Next-state distribution for `(s, a)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// Largest reward magnitude ceiling, `max(0, max R)`.
    pub fn r_max(&self) -> f64 {
        self.reward.iter().copied().fold(0.0, f64::max)
    }

    /// Same dynamics with a different reward table.
    pub fn with_rewards(&self, reward: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            reward,
            self.discount,
            self.initial_dist.clone(),
        )
    }

    /// Rewards shifted by a constant.
    pub fn shifted(&self, offset: f64) -> Self {
        let mut out = self.clone();
        out.reward.iter_mut().for_each(|r| *r += offset);
        out
    }

    fn sparse(&self) -> SparseKernel {
        SparseKernel::from_mdp(self)
    }

    /// Samples a next state for `(s, a)`.
    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_index(self.next_dist(s, a), rng)
    }

    /// Samples an initial state from `D₀`.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.initial_dist, rng)
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Nonzero transition entries per `(s, a)` row.
struct SparseKernel {
    offsets: Vec<usize>,
    next: Vec<usize>,
    prob: Vec<f64>,
}

impl SparseKernel {
    fn from_mdp(mdp: &TabularMdp) -> Self {
        let rows = mdp.n_states * mdp.n_actions;
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut next = Vec::new();
        let mut prob = Vec::new();
        offsets.push(0);
        for row in mdp.transition.chunks(mdp.n_states) {
            for (sp, &p) in row.iter().enumerate() {
                if p != 0.0 {
                    next.push(sp);
                    prob.push(p);
                }
            }
            offsets.push(next.len());
        }
        Self { offsets, next, prob }
    }

    #[inline]
    fn expect(&self, row: usize, v: &[f64]) -> f64 {
        let (lo, hi) = (self.offsets[row], self.offsets[row + 1]);
        self.next[lo..hi]
            .iter()
            .zip(&self.prob[lo..hi])
            .map(|(&sp, &p)| p * v[sp])
            .sum()
    }
}

/// Per-state action distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy", into = "RawPolicy")]
pub struct StochasticPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TryFrom<RawPolicy> for StochasticPolicy {
    type Error = Error;
    fn try_from(raw: RawPolicy) -> Result<Self> {
        StochasticPolicy::new(raw.n_states, raw.n_actions, raw.probs)
    }
}

impl From<StochasticPolicy> for RawPolicy {
    fn from(p: StochasticPolicy) -> Self {
        RawPolicy { n_states: p.n_states, n_actions: p.n_actions, probs: p.probs }
    }
}

impl StochasticPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        if n_actions == 0 {
            return Err(Error::InvalidModel("policy needs at least one action".into()));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(row, &format!("policy row {s}"))?;
        }
        Ok(Self { n_states, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, probs: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    /// Point mass on `actions[s]` at every state.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::Dimension(format!("action {a} out of range at state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self { n_states: actions.len(), n_actions, probs })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(self.row(s), rng)
    }

    /// Most likely action per state, lowest index on ties.
    pub fn mode_actions(&self) -> Vec<usize> {
        self.probs.chunks(self.n_actions).map(|row| argmax_lowest(row)).collect()
    }

    /// `weight * self + (1 - weight) * other`, state by state.
    pub fn mix(&self, other: &Self, weight: f64) -> Result<Self> {
        self.check_shape(other)?;
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| weight * p + (1.0 - weight) * q)
            .collect();
        Self::new(self.n_states, self.n_actions, probs)
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.n_states != other.n_states || self.n_actions != other.n_actions {
            return Err(Error::Dimension(format!(
                "policy shapes differ: {}x{} vs {}x{}",
                self.n_states, self.n_actions, other.n_states, other.n_actions
            )));
        }
        Ok(())
    }

    fn check_mdp(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(Error::Dimension(format!(
                "policy is {}x{} but MDP is {}x{}",
                self.n_states, self.n_actions, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(())
    }
}

/// Index of the largest entry; entries within a 1e-12 relative band of the
/// maximum count as ties and resolve to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let band = 1e-12 * max.abs().max(1.0);
    values.iter().position(|&v| v >= max - band).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn get(&self, s: usize) -> f64 {
        self.values[s]
    }

    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    n_actions: usize,
    pub values: Vec<f64>,
}

impl QFunction {
    pub fn n_states(&self) -> usize {
        self.values.len() / self.n_actions
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn greedy_policy(&self) -> StochasticPolicy {
        let actions: Vec<usize> = self.values.chunks(self.n_actions).map(argmax_lowest).collect();
        StochasticPolicy::deterministic(self.n_actions, &actions).expect("argmax in range")
    }
}

fn backup_q(mdp: &TabularMdp, kernel: &SparseKernel, v: &[f64], q: &mut [f64]) {
    let g = mdp.discount;
    for (row, out) in q.iter_mut().enumerate() {
        *out = mdp.reward[row] + g * kernel.expect(row, v);
    }
}

/// Optimal values and the greedy policy, stopping once the Bellman residual is at most `tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<(ValueFunction, StochasticPolicy)> {
    value_iteration_with_limit(mdp, tol, DEFAULT_MAX_ITERATIONS)
}

pub fn value_iteration_with_limit(
    mdp: &TabularMdp,
    tol: f64,
    max_iterations: usize,
) -> Result<(ValueFunction, StochasticPolicy)> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let kernel = mdp.sparse();
    let mut v = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut q = vec![0.0; ns * na];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iterations {
        backup_q(mdp, &kernel, &v, &mut q);
        residual = 0.0;
        for s in 0..ns {
            let best = q[s * na..(s + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            residual = f64::max(residual, (best - v[s]).abs());
            next[s] = best;
        }
        std::mem::swap(&mut v, &mut next);
        // ‖T v_new − v_new‖ ≤ γ‖v_new − v_old‖ ≤ residual
        if residual <= tol {
            backup_q(mdp, &kernel, &v, &mut q);
            let qf = QFunction { n_actions: na, values: q };
            return Ok((ValueFunction { values: v }, qf.greedy_policy()));
        }
    }
    Err(Error::IterationLimit { iterations: max_iterations, residual })
}

/// Exact `V^π`: direct linear solve for moderate state counts, iteration otherwise.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<ValueFunction> {
    policy.check_mdp(mdp)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let kernel = mdp.sparse();
    let r_pi: Vec<f64> = (0..ns)
        .map(|s| (0..na).map(|a| policy.prob(s, a) * mdp.reward(s, a)).sum())
        .collect();

    if ns <= DIRECT_SOLVE_LIMIT {
        let g = mdp.discount;
        let mut m = DMatrix::<f64>::identity(ns, ns);
        for s in 0..ns {
            for a in 0..na {
                let w = policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                let row = s * na + a;
                for k in kernel.offsets[row]..kernel.offsets[row + 1] {
                    m[(s, kernel.next[k])] -= g * w * kernel.prob[k];
                }
            }
        }
        let rhs = DVector::from_vec(r_pi.clone());
        if let Some(sol) = m.lu().solve(&rhs) {
            let mut values: Vec<f64> = sol.iter().copied().collect();
            // one refinement sweep keeps the residual at machine precision
            let residual = polish(mdp, policy, &kernel, &r_pi, &mut values);
            if residual <= EVAL_RESIDUAL * (1.0 + max_abs(&values)) {
                return Ok(ValueFunction { values });
            }
        }
    }
    iterate_evaluation(mdp, policy, &kernel, &r_pi)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| f64::max(m, x.abs()))
}

fn policy_backup(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    kernel: &SparseKernel,
    r_pi: &[f64],
    v: &[f64],
    s: usize,
) -> f64 {
    let na = mdp.n_actions;
    let mut acc = r_pi[s];
    for a in 0..na {
        let w = policy.prob(s, a);
        if w != 0.0 {
            acc += mdp.discount * w * kernel.expect(s * na + a, v);
        }
    }
    acc
}

fn polish(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    kernel: &SparseKernel,
    r_pi: &[f64],
    v: &mut [f64],
) -> f64 {
    let updated: Vec<f64> = (0..v.len()).map(|s| policy_backup(mdp, policy, kernel, r_pi, v, s)).collect();
    let residual = v.iter().zip(&updated).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    residual
}

fn iterate_evaluation(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    kernel: &SparseKernel,
    r_pi: &[f64],
) -> Result<ValueFunction> {
    let ns = mdp.n_states;
    let mut v = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    for _ in 0..DEFAULT_MAX_ITERATIONS {
        let next: Vec<f64> = (0..ns).map(|s| policy_backup(mdp, policy, kernel, r_pi, &v, s)).collect();
        residual = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if residual <= EVAL_RESIDUAL {
            return Ok(ValueFunction { values: v });
        }
    }
    Err(Error::IterationLimit { iterations: DEFAULT_MAX_ITERATIONS, residual })
}

/// `J(π) = D₀ · V^π`.
pub fn total_return(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<f64> {
    let v = policy_evaluation(mdp, policy)?;
    Ok(mdp.initial_dist.iter().zip(&v.values).map(|(d, v)| d * v).sum())
}

/// `Q^π(s, a) = R(s, a) + γ Σ T(s'|s, a) V^π(s')`.
pub fn q_from_policy(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<QFunction> {
    let v = policy_evaluation(mdp, policy)?;
    Ok(q_from_values(mdp, &v))
}

pub fn q_from_values(mdp: &TabularMdp, v: &ValueFunction) -> QFunction {
    let kernel = mdp.sparse();
    let mut q = vec![0.0; mdp.n_states * mdp.n_actions];
    backup_q(mdp, &kernel, &v.values, &mut q);
    QFunction { n_actions: mdp.n_actions, values: q }
}

/// Soft (entropy-regularized) optimal Q-function.
#[derive(Debug, Clone)]
pub struct SoftSolution {
    pub q: QFunction,
    pub v: ValueFunction,
    pub iterations: usize,
}

/// Soft value iteration with `V(s) = τ log Σ_a exp(Q(s, a) / τ)`.
///
/// `warm_start` seeds the value vector; convergence is to a sup-norm residual of 1e-8.
pub fn soft_value_iteration(
    mdp: &TabularMdp,
    temperature: f64,
    warm_start: Option<&[f64]>,
) -> Result<SoftSolution> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::Domain(format!("temperature {temperature} must be positive")));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let kernel = mdp.sparse();
    let mut v = match warm_start {
        Some(w) if w.len() == ns => w.to_vec(),
        Some(w) => return Err(Error::Dimension(format!("warm start has {} entries, expected {ns}", w.len()))),
        None => vec![0.0; ns],
    };
    let mut q = vec![0.0; ns * na];
    let mut residual = f64::INFINITY;
    for it in 1..=DEFAULT_MAX_ITERATIONS {
        backup_q(mdp, &kernel, &v, &mut q);
        residual = 0.0;
        for s in 0..ns {
            let soft = log_sum_exp(&q[s * na..(s + 1) * na], temperature);
            residual = f64::max(residual, (soft - v[s]).abs());
            v[s] = soft;
        }
        if residual <= SOFT_RESIDUAL {
            backup_q(mdp, &kernel, &v, &mut q);
            return Ok(SoftSolution {
                q: QFunction { n_actions: na, values: q },
                v: ValueFunction { values: v },
                iterations: it,
            });
        }
    }
    Err(Error::IterationLimit { iterations: DEFAULT_MAX_ITERATIONS, residual })
}

/// `τ log Σ exp(x / τ)` with the maximum factored out.
pub fn log_sum_exp(xs: &[f64], temperature: f64) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = xs.iter().map(|x| ((x - max) / temperature).exp()).sum();
    max + temperature * sum.ln()
}

/// Boltzmann policy over a Q table.
pub fn softmax_policy(q: &QFunction, temperature: f64) -> StochasticPolicy {
    let na = q.n_actions;
    let mut probs = Vec::with_capacity(q.values.len());
    for row in q.values.chunks(na) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = probs.len();
        probs.extend(row.iter().map(|x| ((x - max) / temperature).exp()));
        let z: f64 = probs[start..].iter().sum();
        probs[start..].iter_mut().for_each(|p| *p /= z);
    }
    StochasticPolicy { n_states: q.n_states(), n_actions: na, probs }
}

/// `π(a|s) ∝ exp(Q_soft(s, a) / τ)`.
pub fn soft_bellman_policy(mdp: &TabularMdp, temperature: f64) -> Result<StochasticPolicy> {
    let sol = soft_value_iteration(mdp, temperature, None)?;
    Ok(softmax_policy(&sol.q, temperature))
}

/// `max_s ‖p(·|s) − q(·|s)‖₁`.
pub fn policy_l1_distance(p: &StochasticPolicy, q: &StochasticPolicy) -> Result<f64> {
    p.check_shape(q)?;
    Ok((0..p.n_states)
        .map(|s| l1_distance(p.row(s), q.row(s)))
        .fold(0.0, f64::max))
}

/// `max_s KL(p(·|s) ‖ q(·|s))`; `+∞` when `q` misses support of `p`.
pub fn policy_kl_distance(p: &StochasticPolicy, q: &StochasticPolicy) -> Result<f64> {
    p.check_shape(q)?;
    Ok((0..p.n_states)
        .map(|s| kl_divergence(p.row(s), q.row(s)))
        .fold(0.0, f64::max))
}

pub fn l1_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            kl += pi * (pi / qi).ln();
        }
    }
    kl.max(0.0)
}

/// Discounted state occupancy `Σ_τ γ^τ P(s_τ = s)` from `start`, optionally
/// truncated after `horizon` steps.
pub fn state_occupancy(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    start: &[f64],
    horizon: Option<usize>,
) -> Result<Vec<f64>> {
    policy.check_mdp(mdp)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    if start.len() != ns {
        return Err(Error::Dimension(format!("start distribution has {} entries, expected {ns}", start.len())));
    }
    let kernel = mdp.sparse();
    let g = mdp.discount;
    // P_π as a dense matrix; row s is the next-state law from s
    let mut p = DMatrix::<f64>::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..na {
            let w = policy.prob(s, a);
            if w == 0.0 {
                continue;
            }
            let row = s * na + a;
            for k in kernel.offsets[row]..kernel.offsets[row + 1] {
                p[(s, kernel.next[k])] += w * kernel.prob[k];
            }
        }
    }
    match horizon {
        Some(h) => {
            let mut dist = DVector::from_column_slice(start);
            let mut occ = DVector::zeros(ns);
            let pt = p.transpose();
            let mut weight = 1.0;
            for _ in 0..h {
                occ += &dist * weight;
                dist = &pt * dist;
                weight *= g;
            }
            Ok(occ.iter().copied().collect())
        }
        None => {
            // (I − γ Pᵀ) d = start
            let m = DMatrix::<f64>::identity(ns, ns) - p.transpose() * g;
            let rhs = DVector::from_column_slice(start);
            let sol = m
                .lu()
                .solve(&rhs)
                .ok_or(Error::IterationLimit { iterations: 0, residual: f64::INFINITY })?;
            Ok(sol.iter().copied().collect())
        }
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn self_loop(r: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![r], gamma, vec![1.0]).unwrap()
    }

    /// Exact per-state values by naive Gaussian elimination, independent of the solver path.
    fn naive_eval(mdp: &TabularMdp, policy: &StochasticPolicy) -> Vec<f64> {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let mut a = vec![vec![0.0; ns + 1]; ns];
        for s in 0..ns {
            a[s][s] += 1.0;
            for act in 0..na {
                let w = policy.prob(s, act);
                a[s][ns] += w * mdp.reward(s, act);
                for sp in 0..ns {
                    a[s][sp] -= mdp.discount() * w * mdp.next_dist(s, act)[sp];
                }
            }
        }
        for col in 0..ns {
            let piv = (col..ns).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            for row in 0..ns {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in col..=ns {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        (0..ns).map(|s| a[s][ns] / a[s][s]).collect()
    }

    #[test]
    fn rejects_bad_rows() {
        let err = TabularMdp::new(1, 1, vec![0.9], vec![0.0], 0.5, vec![1.0]);
        assert!(matches!(err, Err(Error::InvalidModel(_))));
        let err = TabularMdp::new(1, 1, vec![1.0], vec![0.0], 1.0, vec![1.0]);
        assert!(matches!(err, Err(Error::Domain(_))));
        let err = TabularMdp::new(2, 1, vec![1.0, 0.0, -0.5, 1.5], vec![0.0; 2], 0.5, vec![1.0, 0.0]);
        assert!(err.is_err());
    }

    #[test]
    fn zero_reward_gives_zero_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_mdp(5, 3, 0.9, &mut rng).with_rewards(vec![0.0; 15]).unwrap();
        let (v, _) = value_iteration(&m, 1e-9).unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0));
        let q = q_from_policy(&m, &StochasticPolicy::uniform(5, 3)).unwrap();
        assert!(q.values.iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn value_iteration_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = random_mdp(6, 3, 0.8, &mut rng);
        let (v, greedy) = value_iteration(&m, 1e-10).unwrap();
        let mut best = vec![f64::NEG_INFINITY; 6];
        for actions in enumerate_deterministic(6, 3) {
            let p = StochasticPolicy::deterministic(3, &actions).unwrap();
            let vp = naive_eval(&m, &p);
            for s in 0..6 {
                best[s] = best[s].max(vp[s]);
            }
        }
        for s in 0..6 {
            assert_abs_diff_eq!(v.values[s], best[s], epsilon = 1e-8);
        }
        let vg = naive_eval(&m, &greedy);
        for s in 0..6 {
            assert_abs_diff_eq!(vg[s], best[s], epsilon = 1e-8);
        }
    }

    #[test]
    fn value_iteration_reports_iteration_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_mdp(4, 2, 0.99, &mut rng);
        match value_iteration_with_limit(&m, 1e-12, 5) {
            Err(Error::IterationLimit { iterations, residual }) => {
                assert_eq!(iterations, 5);
                assert!(residual > 1e-12);
            }
            other => panic!("expected iteration limit, got {other:?}"),
        }
    }

    #[test]
    fn geometric_self_loop() {
        let m = self_loop(2.0, 0.75);
        let v = policy_evaluation(&m, &StochasticPolicy::uniform(1, 1)).unwrap();
        assert_abs_diff_eq!(v.values[0], 8.0, epsilon = 1e-12);
    }

    #[test]
    fn evaluation_shape_mismatch() {
        let m = self_loop(1.0, 0.5);
        let err = policy_evaluation(&m, &StochasticPolicy::uniform(2, 1));
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn evaluation_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_mdp(5, 3, 0.7, &mut rng);
        let pol = random_policy(5, 3, &mut rng);
        let v = policy_evaluation(&m, &pol).unwrap();
        // truncate where γ^H < 1e-8
        let horizon = (1e-8f64.ln() / 0.7f64.ln()).ceil() as usize;
        let total_steps = 1_000_000;
        let rollouts = total_steps / horizon;
        let start = 2;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..rollouts {
            let (mut s, mut disc, mut ret) = (start, 1.0, 0.0);
            for _ in 0..horizon {
                let a = pol.sample(s, &mut rng);
                ret += disc * m.reward(s, a);
                disc *= 0.7;
                s = m.sample_next(s, a, &mut rng);
            }
            sum += ret;
            sum_sq += ret * ret;
        }
        let n = rollouts as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) / n).sqrt();
        assert!((mean - v.values[start]).abs() <= 3.0 * se, "mc {mean} exact {} se {se}", v.values[start]);
    }

    #[test]
    fn evaluation_linear_in_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_mdp(6, 2, 0.9, &mut rng);
        let pol = random_policy(6, 2, &mut rng);
        let v = policy_evaluation(&m, &pol).unwrap();
        let scaled = m.with_rewards(m.rewards().iter().map(|r| -3.5 * r).collect()).unwrap();
        let vs = policy_evaluation(&scaled, &pol).unwrap();
        for s in 0..6 {
            assert_abs_diff_eq!(vs.values[s], -3.5 * v.values[s], epsilon = 1e-9);
        }
    }

    #[test]
    fn total_return_constant_values() {
        let m = TabularMdp::new(
            2,
            1,
            vec![0.0, 1.0, 1.0, 0.0],
            vec![0.5, 0.5],
            0.5,
            vec![0.5, 0.5],
        )
        .unwrap();
        let j = total_return(&m, &StochasticPolicy::uniform(2, 1)).unwrap();
        assert_abs_diff_eq!(j, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn soft_policy_bandit_closed_form() {
        let m = TabularMdp::new(
            2,
            2,
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
            vec![1.0, 0.0, 1.0, 0.0],
            0.0,
            vec![1.0, 0.0],
        )
        .unwrap();
        let p = soft_bellman_policy(&m, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(p.prob(0, 0), e / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p.prob(1, 0), e / (e + 1.0), epsilon = 1e-12);
    }

    #[test]
    fn soft_policy_uniform_for_equal_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_mdp(4, 3, 0.9, &mut rng).with_rewards(vec![0.3; 12]).unwrap();
        let p = soft_bellman_policy(&m, 1.0).unwrap();
        for &x in p.probs() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn soft_policy_large_rewards_no_overflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_mdp(3, 2, 0.9, &mut rng);
        let big = m.with_rewards(m.rewards().iter().map(|r| r * 5000.0).collect()).unwrap();
        let p = soft_bellman_policy(&big, 1.0).unwrap();
        assert!(p.probs().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn soft_rejects_nonpositive_temperature() {
        let m = self_loop(1.0, 0.5);
        assert!(matches!(soft_bellman_policy(&m, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn q_fixed_point_reproduces_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = random_mdp(7, 3, 0.85, &mut rng);
        let (_, opt) = value_iteration(&m, 1e-11).unwrap();
        let q = q_from_policy(&m, &opt).unwrap();
        assert_eq!(q.greedy_policy(), opt);
    }

    #[test]
    fn distances() {
        let p = StochasticPolicy::deterministic(2, &[0, 1]).unwrap();
        let q = StochasticPolicy::deterministic(2, &[0, 0]).unwrap();
        assert_eq!(policy_l1_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(policy_l1_distance(&p, &q).unwrap(), 2.0);
        assert_eq!(policy_kl_distance(&p, &q).unwrap(), f64::INFINITY);
        let half = StochasticPolicy::new(1, 2, vec![0.5, 0.5]).unwrap();
        let one = StochasticPolicy::new(1, 2, vec![1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(policy_kl_distance(&one, &half).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(policy_l1_distance(&p, &StochasticPolicy::uniform(3, 2)).is_err());
    }

    #[test]
    fn occupancy_self_loop() {
        let m = self_loop(0.0, 0.9);
        let pol = StochasticPolicy::uniform(1, 1);
        let occ = state_occupancy(&m, &pol, &[1.0], None).unwrap();
        assert_abs_diff_eq!(occ[0], 10.0, epsilon = 1e-12);
        let occ = state_occupancy(&m, &pol, &[1.0], Some(2)).unwrap();
        assert_abs_diff_eq!(occ[0], 1.9, epsilon = 1e-12);
    }

    #[test]
    fn json_roundtrip_validates() {
        let m = self_loop(1.0, 0.5);
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<TabularMdp>(&text).unwrap(), m);
        let bad = text.replace("\"discount\":0.5", "\"discount\":1.5");
        assert!(serde_json::from_str::<TabularMdp>(&bad).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn optimal_dominates_deterministic_policies(seed in any::<u64>(), ns in 2usize..5, na in 2usize..4) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_mdp(ns, na, 0.8, &mut rng);
                let tol = 1e-9;
                let (v, _) = value_iteration(&m, tol).unwrap();
                for actions in enumerate_deterministic(ns, na) {
                    let p = StochasticPolicy::deterministic(na, &actions).unwrap();
                    let vp = policy_evaluation(&m, &p).unwrap();
                    for s in 0..ns {
                        prop_assert!(v.values[s] >= vp.values[s] - tol * 1.8 / 0.2);
                    }
                }
                let bound = m.r_max() / 0.2;
                prop_assert!(v.values.iter().all(|&x| (0.0..=bound + 1e-9).contains(&x)));
            }

            #[test]
            fn soft_rows_strictly_positive(seed in any::<u64>(), temp in 0.05f64..5.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_mdp(4, 3, 0.9, &mut rng);
                let p = soft_bellman_policy(&m, temp).unwrap();
                for s in 0..4 {
                    let row = p.row(s);
                    prop_assert!(row.iter().all(|&x| x > 0.0));
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }

            #[test]
            fn distance_axioms(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = random_policy(4, 3, &mut rng);
                let q = random_policy(4, 3, &mut rng);
                let d = policy_l1_distance(&p, &q).unwrap();
                prop_assert_eq!(d, policy_l1_distance(&q, &p).unwrap());
                prop_assert!((0.0..=2.0).contains(&d));
                prop_assert_eq!(policy_kl_distance(&p, &p).unwrap(), 0.0);
                for s in 0..4 {
                    let l1 = l1_distance(p.row(s), q.row(s));
                    let kl = kl_divergence(p.row(s), q.row(s));
                    prop_assert!(l1 <= (2.0 * kl).sqrt() + 1e-12);
                }
            }
        }
    }
}
