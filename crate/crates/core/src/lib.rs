//! Constrained MDP planning with a generative model: exact oracles, optimal
//! designs for linear features, least-squares and tabular value iteration,
//! and the primal-dual wrapper that turns an unconstrained solver into a
//! constrained one.
#![no_std]
// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod design;
pub mod error;
pub mod generators;
pub mod math;
pub mod model;
pub mod oracle;
pub mod primal_dual;
pub mod sampling;
pub mod solver;

pub use error::{Error, Result};
pub use model::{
    FeatureMap, GenerativeModel, GreedyLinear, LinearCmdp, Pair, Policy, ProblemShape, StochasticPolicy, TabularCmdp,
    Violation,
};
