//! Adaptive policies for an AI agent cooperating with a partner of unknown type.
//!
//! The partner's type `θ` induces a parametric MDP `M(θ)` for the AI agent.
//! This crate builds those families, solves them exactly, infers `θ` from the
//! partner's behaviour and runs pool- and network-based adaptive policies
//! against fixed baselines.

pub mod config;
pub mod dqn;
pub mod env;
pub mod error;
pub mod harness;
pub mod inference;
pub mod io;
pub mod mdp;
pub mod par;
pub mod parametric;
pub mod pool;
pub mod seed;

pub use error::{Error, Result};
pub use mdp::{QFunction, StochasticPolicy, TabularMdp, ValueFunction};
pub use parametric::{MdpFamily, ParamSpace, SmoothnessProfile, ThetaVector, TwoAgentDynamics};
