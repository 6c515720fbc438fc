//! Q-value network over the augmented state `(s, θ)`, trained by regression
//! onto exact best-response Q-values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{argmax_lowest, q_from_policy, value_iteration, QFunction, DEFAULT_VI_TOL};
use crate::parametric::{MdpFamily, ThetaVector};

/// Negative-side slope of the hidden activation.
pub const LEAKY_SLOPE: f64 = 0.1;
pub const DEFAULT_HIDDEN: [usize; 3] = [64, 32, 16];

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Fully connected network with leaky-rectifier hidden layers and a linear
/// output layer. `weights[l]` is row-major `layer_sizes[l + 1] × layer_sizes[l]`.
///
/// The outputs are `output_scale · z + output_shift` where `z` is the last
/// affine layer; training uses this to regress onto standardized targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork")]
pub struct MlpNetwork {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    output_scale: f64,
    output_shift: f64,
}

#[derive(Deserialize)]
struct RawNetwork {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    #[serde(default = "one")]
    output_scale: f64,
    #[serde(default)]
    output_shift: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawNetwork> for MlpNetwork {
    type Error = Error;

    fn try_from(raw: RawNetwork) -> Result<Self> {
        let net = MlpNetwork {
            layer_sizes: raw.layer_sizes,
            weights: raw.weights,
            biases: raw.biases,
            output_scale: raw.output_scale,
            output_shift: raw.output_shift,
        };
        net.validate()?;
        Ok(net)
    }
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(net: &MlpNetwork) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).for_each(|v| v.fill(0.0));
    }

    pub fn max_abs(&self) -> f64 {
        self.weights.iter().chain(&self.biases).flatten().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Per-layer scratch buffers for backpropagation.
struct Scratch {
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(sizes: &[usize]) -> Self {
        Scratch {
            pre: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
            act: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

impl MlpNetwork {
    /// Glorot-uniform weights and zero biases.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, w) in net.weights.iter_mut().enumerate() {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.iter_mut().for_each(|x| *x = rng.random_range(-limit..limit));
        }
        Ok(net)
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidModel(format!("bad layer sizes {layer_sizes:?}")));
        }
        Ok(MlpNetwork {
            layer_sizes: layer_sizes.to_vec(),
            weights: layer_sizes.windows(2).map(|p| vec![0.0; p[0] * p[1]]).collect(),
            biases: layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
            output_scale: 1.0,
            output_shift: 0.0,
        })
    }

    /// Builds a network from explicit parameters.
    pub fn from_parts(layer_sizes: Vec<usize>, weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        let net = MlpNetwork { layer_sizes, weights, biases, output_scale: 1.0, output_shift: 0.0 };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let s = &self.layer_sizes;
        if s.len() < 2 || s.contains(&0) {
            return Err(Error::InvalidModel(format!("bad layer sizes {s:?}")));
        }
        if self.weights.len() != s.len() - 1 || self.biases.len() != s.len() - 1 {
            return Err(Error::InvalidModel("layer count does not match layer sizes".into()));
        }
        for l in 0..s.len() - 1 {
            if self.weights[l].len() != s[l] * s[l + 1] || self.biases[l].len() != s[l + 1] {
                return Err(Error::InvalidModel(format!("layer {l} has the wrong shape")));
            }
        }
        let finite = self.weights.iter().chain(&self.biases).flatten().all(|x| x.is_finite());
        if !finite || !self.output_scale.is_finite() || !self.output_shift.is_finite() || self.output_scale == 0.0 {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn output_affine(&self) -> (f64, f64) {
        (self.output_scale, self.output_shift)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension(format!("input has length {}, network expects {}", input.len(), self.input_dim())));
        }
        Ok(())
    }

    /// Forward pass filling `scratch`; returns nothing, the raw output is in
    /// `scratch.pre[last]`.
    fn forward_into(&self, input: &[f64], scratch: &mut Scratch) {
        scratch.act[0].copy_from_slice(input);
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.weights[l];
            let (before, after) = scratch.act.split_at_mut(l + 1);
            let x = &before[l];
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let z = self.biases[l][j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                scratch.pre[l][j] = z;
                after[0][j] = if l == last { z } else { leaky(z) };
            }
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut scratch = Scratch::new(&self.layer_sizes);
        self.forward_into(input, &mut scratch);
        Ok(scratch.pre[self.n_layers() - 1].iter().map(|z| self.output_scale * z + self.output_shift).collect())
    }

    /// Accumulates `∂/∂params` of `Σ_k c · (z_k − t_k)²` for one sample into
    /// `grads`, where `z` is the raw (pre-affine) output. Returns the squared error.
    fn backprop_into(&self, input: &[f64], target: &[f64], c: f64, scratch: &mut Scratch, grads: &mut Gradients) -> f64 {
        self.forward_into(input, scratch);
        let last = self.n_layers() - 1;
        let mut sq = 0.0;
        for (k, &t) in target.iter().enumerate() {
            let r = scratch.pre[last][k] - t;
            sq += r * r;
            scratch.delta[last][k] = 2.0 * c * r;
        }
        for l in (0..=last).rev() {
            let n_in = self.layer_sizes[l];
            let x = &scratch.act[l];
            let (gw, gb) = (&mut grads.weights[l], &mut grads.biases[l]);
            for (j, &d) in scratch.delta[l].iter().enumerate() {
                gb[j] += d;
                if d != 0.0 {
                    for (g, xi) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            if l > 0 {
                let (lower, upper) = scratch.delta.split_at_mut(l);
                let below = &mut lower[l - 1];
                below.fill(0.0);
                let w = &self.weights[l];
                for (j, &d) in upper[0].iter().enumerate() {
                    if d != 0.0 {
                        for (b, wij) in below.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                            *b += d * wij;
                        }
                    }
                }
                for (b, &z) in below.iter_mut().zip(&scratch.pre[l - 1]) {
                    *b *= leaky_grad(z);
                }
            }
        }
        sq
    }

    /// Mean squared error over every output of every sample, and its gradient.
    pub fn gradient(&self, batch: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Dimension("empty batch".into()));
        }
        let mut scratch = Scratch::new(&self.layer_sizes);
        let mut grads = Gradients::zeros_like(self);
        let (a, b) = (self.output_scale, self.output_shift);
        let m = (batch.len() * self.output_dim()) as f64;
        let mut loss = 0.0;
        for (input, target) in batch {
            self.check_input(input)?;
            if target.len() != self.output_dim() {
                return Err(Error::Dimension(format!("target has length {}", target.len())));
            }
            // (a z + b − t)² = a² (z − (t − b)/a)²
            let raw: Vec<f64> = target.iter().map(|t| (t - b) / a).collect();
            loss += a * a * self.backprop_into(input, &raw, a * a / m, &mut scratch, &mut grads);
        }
        Ok((loss / m, grads))
    }

    /// Index of the largest output; ties go to the lowest index.
    pub fn act_input(&self, input: &[f64]) -> Result<usize> {
        Ok(argmax_lowest(&self.forward(input)?))
    }

    /// Greedy action for joint state `s` under inferred type `theta`.
    pub fn act(&self, family: &dyn MdpFamily, s: usize, theta: &ThetaVector) -> Result<usize> {
        self.act_input(&family.augmented_input(s, theta))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut()).flatten()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases).flatten()
    }
}

/// Gradient step rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Learning-rate schedule over the iteration budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Decays linearly to zero at `max_iterations`.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    /// Iterations between validation checks.
    pub check_every: usize,
    /// Stop once the best validation loss improved by less than this over
    /// `plateau_checks` consecutive checks.
    pub plateau_tol: f64,
    pub plateau_checks: usize,
    pub validation_size: usize,
    pub optimizer: Optimizer,
    pub schedule: LrSchedule,
    /// Standardize targets with their mean and standard deviation.
    pub normalize_targets: bool,
    /// Decay of the parameter moving average that is validated and returned;
    /// 0 uses the raw iterate.
    pub ema_decay: f64,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: DEFAULT_HIDDEN.to_vec(),
            learning_rate: 5e-3,
            batch_size: 32,
            max_iterations: 200_000,
            check_every: 5_000,
            plateau_tol: 1e-6,
            plateau_checks: 10,
            validation_size: 512,
            optimizer: Optimizer::adam(),
            schedule: LrSchedule::Linear,
            normalize_targets: true,
            ema_decay: 0.999,
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Err(Error::Config { field: format!("dqn.{field}"), message: message.into() });
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be finite and nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.check_every == 0 {
            return bad("check_every", "must be positive");
        }
        if self.validation_size == 0 {
            return bad("validation_size", "must be positive");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay", "must lie in [0, 1)");
        }
        if self.hidden.contains(&0) {
            return bad("hidden", "layer widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    /// Validation MSE in target units.
    pub validation_mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plateau,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub checkpoints: Vec<Checkpoint>,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Exact `Q^{π*_θ}` for each point.
pub fn exact_q_targets(family: &dyn MdpFamily, points: &[ThetaVector]) -> Result<Vec<QFunction>> {
    points
        .iter()
        .map(|theta| {
            let inst = family.build(theta)?;
            let (_, pi) = value_iteration(&inst.mdp, DEFAULT_VI_TOL)?;
            q_from_policy(&inst.mdp, &pi)
        })
        .collect()
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn apply_step(net: &mut MlpNetwork, grads: &Gradients, lr: f64, opt: Optimizer, adam: &mut AdamState) {
    let flat = grads.weights.iter().chain(&grads.biases).flatten();
    match opt {
        Optimizer::Sgd => {
            for (p, g) in net.params_mut().zip(flat) {
                *p -= lr * g;
            }
        }
        Optimizer::Adam { beta1, beta2, epsilon } => {
            adam.t += 1;
            let c1 = 1.0 - beta1.powi(adam.t);
            let c2 = 1.0 - beta2.powi(adam.t);
            for (((p, g), m), v) in net.params_mut().zip(flat).zip(&mut adam.m).zip(&mut adam.v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
            }
        }
    }
}

/// Supervised regression of the network onto exact best-response Q-values:
/// each iteration draws `θ` uniformly from `train_points` and a minibatch of
/// states uniformly, then takes one gradient step on the squared error.
pub fn train_adaptdqn(
    family: &dyn MdpFamily,
    train_points: &[ThetaVector],
    config: &DqnConfig,
) -> Result<(MlpNetwork, TrainingLog)> {
    config.validate()?;
    if train_points.is_empty() {
        return Err(Error::Domain("AdaptDQN needs at least one training point".into()));
    }
    let targets = exact_q_targets(family, train_points)?;
    let n_states = family.n_states();
    let n_actions = family.n_actions();
    let input_dim = family.augmented_input(0, &train_points[0]).len();
    let mut sizes = vec![input_dim];
    sizes.extend(&config.hidden);
    sizes.push(n_actions);
    let mut net = MlpNetwork::new(&sizes, crate::seed::derive(config.seed, &[0]))?;

    if config.normalize_targets {
        let all = targets.iter().flat_map(|q| q.values.iter().copied());
        let n = (targets.len() * n_states * n_actions) as f64;
        let mean = all.clone().sum::<f64>() / n;
        let var = all.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        net.output_scale = if var > 1e-24 { var.sqrt() } else { 1.0 };
        net.output_shift = mean;
    }
    let (scale, shift) = (net.output_scale, net.output_shift);

    // Inputs are rebuilt on demand; targets are stored standardized.
    let inputs = |t: usize, s: usize| family.augmented_input(s, &train_points[t]);
    let raw_target = |t: usize, s: usize| -> Vec<f64> { targets[t].row(s).iter().map(|q| (q - shift) / scale).collect() };

    let mut rng = crate::seed::rng(config.seed, &[1]);
    let mut vrng = crate::seed::rng(config.seed, &[2]);
    let validation: Vec<(Vec<f64>, Vec<f64>)> = (0..config.validation_size)
        .map(|_| {
            let t = vrng.random_range(0..train_points.len());
            let s = vrng.random_range(0..n_states);
            (inputs(t, s), raw_target(t, s))
        })
        .collect();

    let mut scratch = Scratch::new(&sizes);
    let mut grads = Gradients::zeros_like(&net);
    let mut adam = AdamState { m: vec![0.0; net.n_params()], v: vec![0.0; net.n_params()], t: 0 };
    let m = (config.batch_size * n_actions) as f64;
    let mut checkpoints = Vec::new();
    let mut best_history: Vec<f64> = Vec::new();
    let mut best = f64::INFINITY;
    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;
    let mut averaged = (config.ema_decay > 0.0).then(|| net.clone());

    let validation_mse = |net: &MlpNetwork, scratch: &mut Scratch| -> f64 {
        let last = net.n_layers() - 1;
        let sum: f64 = validation
            .iter()
            .map(|(x, t)| {
                net.forward_into(x, scratch);
                scratch.pre[last].iter().zip(t).map(|(z, t)| (z - t) * (z - t)).sum::<f64>()
            })
            .sum();
        scale * scale * sum / (validation.len() * n_actions) as f64
    };

    while iterations < config.max_iterations {
        let t = rng.random_range(0..train_points.len());
        grads.clear();
        let mut loss = 0.0;
        for _ in 0..config.batch_size {
            let s = rng.random_range(0..n_states);
            loss += net.backprop_into(&inputs(t, s), &raw_target(t, s), 1.0 / m, &mut scratch, &mut grads);
        }
        iterations += 1;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { iteration: iterations, loss });
        }
        let lr = match config.schedule {
            LrSchedule::Constant => config.learning_rate,
            LrSchedule::Linear => config.learning_rate * (1.0 - (iterations - 1) as f64 / config.max_iterations as f64),
        };
        apply_step(&mut net, &grads, lr, config.optimizer, &mut adam);
        if let Some(avg) = averaged.as_mut() {
            for (a, p) in avg.params_mut().zip(net.params()) {
                *a += (1.0 - config.ema_decay) * (p - *a);
            }
        }

        if iterations % config.check_every == 0 {
            let mse = validation_mse(averaged.as_ref().unwrap_or(&net), &mut scratch);
            if !mse.is_finite() {
                return Err(Error::TrainingDiverged { iteration: iterations, loss: mse });
            }
            checkpoints.push(Checkpoint { iteration: iterations, validation_mse: mse });
            best = best.min(mse);
            best_history.push(best);
            let k = config.plateau_checks;
            if k > 0 && best_history.len() > k && best_history[best_history.len() - 1 - k] - best < config.plateau_tol {
                stop = StopReason::Plateau;
                break;
            }
        }
    }
    Ok((averaged.unwrap_or(net), TrainingLog { checkpoints, iterations, stop }))
}

/// Agreement between the network's greedy actions and exact best responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub pairs: usize,
    /// Network action equals the lowest-index greedy action.
    pub exact_matches: usize,
    /// Network action is one of the (tied) optimal actions.
    pub optimal_matches: usize,
}

impl Fidelity {
    pub fn exact_rate(&self) -> f64 {
        self.exact_matches as f64 / self.pairs as f64
    }

    pub fn optimal_rate(&self) -> f64 {
        self.optimal_matches as f64 / self.pairs as f64
    }
}

/// Relative band within which two Q-values count as tied.
pub const Q_TIE_TOL: f64 = 1e-9;

/// Compares greedy actions on every `(state, θ)` pair.
pub fn greedy_fidelity(net: &MlpNetwork, family: &dyn MdpFamily, points: &[ThetaVector]) -> Result<Fidelity> {
    let targets = exact_q_targets(family, points)?;
    let mut f = Fidelity { pairs: 0, exact_matches: 0, optimal_matches: 0 };
    for (theta, q) in points.iter().zip(&targets) {
        for s in 0..family.n_states() {
            let a = net.act(family, s, theta)?;
            let row = q.row(s);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            f.pairs += 1;
            f.exact_matches += usize::from(a == argmax_lowest(row));
            f.optimal_matches += usize::from(row[a] >= max - Q_TIE_TOL * max.abs().max(1.0));
        }
    }
    Ok(f)
}
