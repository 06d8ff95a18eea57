//! RL-SGF: anytime-safe policy optimization for constrained MDPs.

pub mod analytic_testbed;
pub mod baselines;
pub mod cmdp;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod nav_envs;
pub mod policy_rbf;
pub mod rng;
pub mod sgf_update;
pub mod tabular;
pub mod theory_bounds;
pub mod truncnorm;

pub use error::{Error, Result};
