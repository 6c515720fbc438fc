//! Pool of best responses over a cover of `Θ`, queried by nearest neighbour.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{value_iteration, StochasticPolicy, DEFAULT_VI_TOL};
use crate::par::{self, Execution};
use crate::parametric::{MdpFamily, ParamSpace, ThetaVector};

/// Grids larger than this are refused.
pub const MAX_COVER_POINTS: usize = 1_000_000;
/// Resolution of the grid used to audit cover radii.
pub const AUDIT_RESOLUTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub theta: ThetaVector,
    pub policy: StochasticPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPool {
    pub entries: Vec<PoolEntry>,
    /// Largest distance from a type in `Θ` to its nearest entry (audited).
    pub cover_radius: f64,
}

/// Uniform grid whose cells have half-diagonal at most `radius`.
pub fn epsilon_cover(space: &ParamSpace, radius: f64) -> Result<Vec<ThetaVector>> {
    epsilon_cover_capped(space, radius, MAX_COVER_POINTS)
}

pub fn epsilon_cover_capped(space: &ParamSpace, radius: f64, cap: usize) -> Result<Vec<ThetaVector>> {
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::Domain(format!("cover radius {radius} must be positive")));
    }
    if radius >= space.half_diagonal() {
        return Ok(vec![space.center()]);
    }
    // √d · h / 2 ≤ radius
    let spacing = 2.0 * radius / (space.dim() as f64).sqrt();
    space.grid_capped(spacing, cap)
}

/// Training points for a pool of the given radius: the type set itself when it
/// is finite, otherwise [`epsilon_cover`] of `Θ`.
pub fn training_cover(family: &dyn MdpFamily, radius: f64) -> Result<Vec<ThetaVector>> {
    match family.finite_types() {
        Some(types) => Ok(types),
        None => epsilon_cover(family.space(), radius),
    }
}

/// Max over an audit grid of the distance to the nearest point.
pub fn audit_cover(space: &ParamSpace, points: &[ThetaVector], resolution: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Domain("cannot audit an empty cover".into()));
    }
    let audit = space.grid_capped(resolution, 10 * MAX_COVER_POINTS)?;
    Ok(audit
        .iter()
        .map(|q| points.iter().map(|p| p.distance(q)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max))
}

/// Exact best response for every training point.
pub fn train_pool(family: &dyn MdpFamily, train_points: &[ThetaVector], exec: Execution) -> Result<PolicyPool> {
    if train_points.is_empty() {
        return Err(Error::Domain("pool needs at least one training point".into()));
    }
    let policies = par::map(exec, train_points, |theta| -> Result<StochasticPolicy> {
        let inst = family.build(theta)?;
        Ok(value_iteration(&inst.mdp, DEFAULT_VI_TOL)?.1)
    });
    let entries = train_points
        .iter()
        .cloned()
        .zip(policies)
        .map(|(theta, policy)| Ok(PoolEntry { theta, policy: policy? }))
        .collect::<Result<Vec<_>>>()?;
    let cover_radius = match family.finite_types() {
        Some(types) => types
            .iter()
            .map(|t| train_points.iter().map(|p| p.distance(t)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max),
        None => audit_cover(family.space(), train_points, AUDIT_RESOLUTION)?,
    };
    Ok(PolicyPool { entries, cover_radius })
}

impl PolicyPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index of the entry nearest to `theta`, lowest index on ties.
    pub fn select(&self, theta: &ThetaVector) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, e) in self.entries.iter().enumerate() {
            let d = e.theta.distance(theta);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    pub fn policy_for(&self, theta: &ThetaVector) -> &StochasticPolicy {
        &self.entries[self.select(theta)].policy
    }

    /// Samples `a ~ π*_θ̂(·|state)` with `θ̂` the nearest pool type.
    pub fn select_and_act<R: Rng + ?Sized>(&self, theta: &ThetaVector, state: usize, rng: &mut R) -> usize {
        self.policy_for(theta).sample(state, rng)
    }

    pub fn thetas(&self) -> Vec<ThetaVector> {
        self.entries.iter().map(|e| e.theta.clone()).collect()
    }
}
