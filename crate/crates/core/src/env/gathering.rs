//! Two-agent fruit gathering gridworld.
//!
//! Joint state index is `x_cell * n_cells + y_cell`; cells are numbered
//! row-major with `(row, col)` coordinates and row 0 at the top.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::AgentModel;
use crate::mdp::{sample_index, StochasticPolicy, TabularMdp};
use crate::parametric::{MdpFamily, ParamSpace, ThetaVector, TwoAgentDynamics};

pub const N_ACTIONS: usize = 5;
pub const ACTION_NAMES: [&str; N_ACTIONS] = ["up", "left", "down", "right", "stay"];
const MOVES: [(isize, isize); N_ACTIONS] = [(-1, 0), (0, -1), (1, 0), (0, 1), (0, 0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatheringConfig {
    pub grid_w: usize,
    pub grid_h: usize,
    /// `(row, col)` of fruit 1 and fruit 2.
    pub fruit_cells: [(usize, usize); 2],
    pub random_move_prob: f64,
    pub collision_cost: f64,
    pub proximity_cost: f64,
    pub discount: f64,
    /// `(row, col)` starting cells of the observed agent and the acting agent.
    pub start_cells: [(usize, usize); 2],
    pub soft_temperature: f64,
}

impl Default for GatheringConfig {
    fn default() -> Self {
        Self::for_grid(5)
    }
}

impl GatheringConfig {
    /// Square `n × n` layout with fruits on the anti-diagonal and the agents in
    /// opposite corners.
    pub fn for_grid(n: usize) -> Self {
        let fruit_cells = if n >= 4 { [(1, n - 2), (n - 2, 1)] } else { [(0, n.saturating_sub(1)), (n.saturating_sub(1), 0)] };
        Self {
            grid_w: n,
            grid_h: n,
            fruit_cells,
            random_move_prob: 0.2,
            collision_cost: -5.0,
            proximity_cost: -2.0,
            discount: 0.99,
            start_cells: [(0, 0), (n.saturating_sub(1), n.saturating_sub(1))],
            soft_temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| Err(Error::Config { field: field.into(), message });
        if self.grid_w == 0 || self.grid_h == 0 || self.grid_w * self.grid_h < 2 {
            return bad("grid", format!("{}x{} grid is too small", self.grid_h, self.grid_w));
        }
        let inside = |(r, c): (usize, usize)| r < self.grid_h && c < self.grid_w;
        if !self.fruit_cells.iter().all(|&c| inside(c)) {
            return bad("fruit_cells", "fruit cell outside the grid".into());
        }
        if self.fruit_cells[0] == self.fruit_cells[1] {
            return bad("fruit_cells", "fruit cells must be distinct".into());
        }
        if !self.start_cells.iter().all(|&c| inside(c)) {
            return bad("start_cells", "start cell outside the grid".into());
        }
        if !(0.0..=1.0).contains(&self.random_move_prob) {
            return bad("random_move_prob", format!("{} not in [0, 1]", self.random_move_prob));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount", format!("{} not in [0, 1)", self.discount));
        }
        if self.soft_temperature.is_nan() || self.soft_temperature <= 0.0 {
            return bad("soft_temperature", "must be positive".into());
        }
        if !self.collision_cost.is_finite() || !self.proximity_cost.is_finite() {
            return bad("collision_cost", "costs must be finite".into());
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.grid_w * self.grid_h
    }

    pub fn cell_index(&self, (row, col): (usize, usize)) -> usize {
        row * self.grid_w + col
    }

    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.grid_w, cell % self.grid_w)
    }
}

/// Joint positions of both agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JointState {
    pub x_pos: usize,
    pub y_pos: usize,
}

impl JointState {
    pub fn encode(self, n_cells: usize) -> usize {
        self.x_pos * n_cells + self.y_pos
    }

    pub fn decode(index: usize, n_cells: usize) -> Self {
        Self { x_pos: index / n_cells, y_pos: index % n_cells }
    }
}

/// The gathering game as a parametric family over `Θ = [-1, 1]²`.
#[derive(Debug, Clone)]
pub struct GatheringGame {
    config: GatheringConfig,
    space: ParamSpace,
    /// Single-agent kinematics, `(cell * 5 + action) * n_cells + next`.
    kernel: Vec<f64>,
    features: Vec<Vec<f64>>,
    name: String,
}

impl GatheringGame {
    pub fn new(config: GatheringConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_cells();
        let mut kernel = vec![0.0; n * N_ACTIONS * n];
        let slip = config.random_move_prob;
        for cell in 0..n {
            for a in 0..N_ACTIONS {
                let row = &mut kernel[(cell * N_ACTIONS + a) * n..][..n];
                row[step(&config, cell, MOVES[a])] += 1.0 - slip;
                // slip: uniform over the four orthogonal neighbours, walls keep the agent in place
                for m in &MOVES[..4] {
                    row[step(&config, cell, *m)] += slip / 4.0;
                }
            }
        }
        let fruit = [config.cell_index(config.fruit_cells[0]), config.cell_index(config.fruit_cells[1])];
        let features = (0..n)
            .map(|c| vec![(c == fruit[0]) as u8 as f64, (c == fruit[1]) as u8 as f64])
            .collect();
        let name = format!("gathering-{}x{}", config.grid_h, config.grid_w);
        Ok(Self { config, space: ParamSpace::cube(2, -1.0, 1.0)?, kernel, features, name })
    }

    pub fn config(&self) -> &GatheringConfig {
        &self.config
    }

    pub fn n_cells(&self) -> usize {
        self.config.n_cells()
    }

    /// Next-cell distribution for a single agent.
    pub fn cell_kernel(&self, cell: usize, action: usize) -> &[f64] {
        let n = self.n_cells();
        &self.kernel[(cell * N_ACTIONS + action) * n..][..n]
    }

    fn adjacent(&self, a: usize, b: usize) -> bool {
        let (ra, ca) = self.config.cell_coords(a);
        let (rb, cb) = self.config.cell_coords(b);
        ra.abs_diff(rb) + ca.abs_diff(cb) == 1
    }

    /// `Mˣ(θ)`: the observed agent alone, rewarded `θ · φ(cell)`.
    pub fn build_x_mdp(&self, theta: &ThetaVector) -> Result<TabularMdp> {
        self.space.check(theta)?;
        let n = self.n_cells();
        let reward = (0..n)
            .flat_map(|c| {
                let r: f64 = self.features[c].iter().zip(&theta.0).map(|(f, t)| f * t).sum();
                std::iter::repeat_n(r, N_ACTIONS)
            })
            .collect();
        let mut d0 = vec![0.0; n];
        d0[self.config.cell_index(self.config.start_cells[0])] = 1.0;
        TabularMdp::new(n, N_ACTIONS, self.kernel.clone(), reward, self.config.discount, d0)
    }

    /// Expands a policy over cells to joint states (ignoring the other agent).
    pub fn lift_x_policy(&self, local: &StochasticPolicy) -> Result<StochasticPolicy> {
        let n = self.n_cells();
        let mut probs = Vec::with_capacity(n * n * N_ACTIONS);
        for x in 0..n {
            for _ in 0..n {
                probs.extend_from_slice(local.row(x));
            }
        }
        StochasticPolicy::new(n * n, N_ACTIONS, probs)
    }

    fn fruit_reward(&self, cell: usize, theta: &ThetaVector) -> f64 {
        self.features[cell].iter().zip(&theta.0).map(|(f, t)| f * t).sum()
    }

    fn base_reward(&self, x: usize, y: usize) -> f64 {
        if x == y {
            self.config.collision_cost
        } else if self.adjacent(x, y) {
            self.config.proximity_cost
        } else {
            0.0
        }
    }
}

fn step(config: &GatheringConfig, cell: usize, (dr, dc): (isize, isize)) -> usize {
    let (r, c) = config.cell_coords(cell);
    let nr = r as isize + dr;
    let nc = c as isize + dc;
    if nr < 0 || nc < 0 || nr >= config.grid_h as isize || nc >= config.grid_w as isize {
        cell
    } else {
        config.cell_index((nr as usize, nc as usize))
    }
}

impl AgentModel for GatheringGame {
    fn x_mdp(&self, theta: &ThetaVector) -> Result<TabularMdp> {
        self.build_x_mdp(theta)
    }

    fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    fn temperature(&self) -> f64 {
        self.config.soft_temperature
    }
}

impl MdpFamily for GatheringGame {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn space(&self) -> &ParamSpace {
        &self.space
    }

    fn n_states(&self) -> usize {
        self.n_cells() * self.n_cells()
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn n_x_actions(&self) -> usize {
        N_ACTIONS
    }

    fn discount(&self) -> f64 {
        self.config.discount
    }

    fn initial_dist(&self) -> Vec<f64> {
        let n = self.n_cells();
        let mut d = vec![0.0; n * n];
        let s = JointState {
            x_pos: self.config.cell_index(self.config.start_cells[0]),
            y_pos: self.config.cell_index(self.config.start_cells[1]),
        };
        d[s.encode(n)] = 1.0;
        d
    }

    fn rewards(&self, theta: &ThetaVector) -> Result<Vec<f64>> {
        self.space.check(theta)?;
        let n = self.n_cells();
        let mut out = Vec::with_capacity(n * n * N_ACTIONS);
        for x in 0..n {
            for y in 0..n {
                let r = self.fruit_reward(y, theta) + self.base_reward(x, y);
                out.extend(std::iter::repeat_n(r, N_ACTIONS));
            }
        }
        Ok(out)
    }

    fn reward_range(&self) -> (f64, f64) {
        let n = self.n_cells();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for x in 0..n {
            for y in 0..n {
                let base = self.base_reward(x, y);
                let (mut fmin, mut fmax) = (0.0, 0.0);
                for (i, f) in self.features[y].iter().enumerate() {
                    let (a, b) = (f * self.space.lower[i], f * self.space.upper[i]);
                    fmin += a.min(b);
                    fmax += a.max(b);
                }
                lo = lo.min(base + fmin);
                hi = hi.max(base + fmax);
            }
        }
        (lo, hi)
    }

    fn x_policy(&self, theta: &ThetaVector) -> Result<StochasticPolicy> {
        self.lift_x_policy(&self.soft_policy(theta)?)
    }

    fn two_agent_dynamics(&self) -> TwoAgentDynamics {
        let n = self.n_cells();
        let ns = n * n;
        let mut t = vec![0.0; ns * N_ACTIONS * N_ACTIONS * ns];
        for s in 0..ns {
            let JointState { x_pos, y_pos } = JointState::decode(s, n);
            for a in 0..N_ACTIONS {
                let ky = self.cell_kernel(y_pos, a);
                for b in 0..N_ACTIONS {
                    let kx = self.cell_kernel(x_pos, b);
                    let row = &mut t[((s * N_ACTIONS + a) * N_ACTIONS + b) * ns..][..ns];
                    for (xn, px) in kx.iter().enumerate().filter(|(_, p)| **p > 0.0) {
                        for (yn, py) in ky.iter().enumerate().filter(|(_, p)| **p > 0.0) {
                            row[xn * n + yn] = px * py;
                        }
                    }
                }
            }
        }
        TwoAgentDynamics::new(ns, N_ACTIONS, N_ACTIONS, t).expect("product kernel is stochastic")
    }

    /// Uses the product structure of the joint kernel instead of materializing it.
    fn marginal_transition(&self, x_policy: &StochasticPolicy) -> Result<Vec<f64>> {
        let n = self.n_cells();
        let ns = n * n;
        if x_policy.n_states() != ns || x_policy.n_actions() != N_ACTIONS {
            return Err(Error::Dimension(format!(
                "x policy is {}x{}, expected {ns}x{N_ACTIONS}",
                x_policy.n_states(),
                x_policy.n_actions()
            )));
        }
        let mut out = vec![0.0; ns * N_ACTIONS * ns];
        let mut px = vec![0.0; n];
        for s in 0..ns {
            let JointState { x_pos, y_pos } = JointState::decode(s, n);
            px.iter_mut().for_each(|p| *p = 0.0);
            for b in 0..N_ACTIONS {
                let w = x_policy.prob(s, b);
                if w > 0.0 {
                    for (p, k) in px.iter_mut().zip(self.cell_kernel(x_pos, b)) {
                        *p += w * k;
                    }
                }
            }
            for a in 0..N_ACTIONS {
                let ky = self.cell_kernel(y_pos, a);
                let row = &mut out[(s * N_ACTIONS + a) * ns..][..ns];
                for (xn, &p) in px.iter().enumerate().filter(|(_, p)| **p > 0.0) {
                    for (yn, &q) in ky.iter().enumerate().filter(|(_, q)| **q > 0.0) {
                        row[xn * n + yn] = p * q;
                    }
                }
            }
        }
        Ok(out)
    }

    fn sample_step(&self, s: usize, a: usize, b: usize, rng_x: &mut dyn RngCore, rng_y: &mut dyn RngCore) -> usize {
        let n = self.n_cells();
        let JointState { x_pos, y_pos } = JointState::decode(s, n);
        let xn = sample_index(self.cell_kernel(x_pos, b), rng_x);
        let yn = sample_index(self.cell_kernel(y_pos, a), rng_y);
        JointState { x_pos: xn, y_pos: yn }.encode(n)
    }

    fn x_state(&self, s: usize) -> usize {
        s / self.n_cells()
    }

    fn augmented_input(&self, s: usize, theta: &ThetaVector) -> Vec<f64> {
        let n = self.n_cells();
        let JointState { x_pos, y_pos } = JointState::decode(s, n);
        let mut v = vec![0.0; 2 * n + theta.dim()];
        v[x_pos] = 1.0;
        v[n + y_pos] = 1.0;
        v[2 * n..].copy_from_slice(&theta.0);
        v
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "gathering", "config": self.config })
    }

    fn agent_model(&self) -> Option<&dyn AgentModel> {
        Some(self)
    }
}
