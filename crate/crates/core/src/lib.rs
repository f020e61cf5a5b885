//! Entailment-tree question answering by Monte-Carlo planning.
//!
//! A controller proposes actions over a reasoning state `{H, T_p, X}`, an environment
//! executes them, and a state verifier scores the partial trees. [`planners`] searches
//! this space and picks the option whose tree best supports its hypothesis.

pub mod adapters;
pub mod dataset;
pub mod environment;
pub mod linearize;
pub mod parallel;
pub mod planners;
pub mod trajectories;
pub mod treemetrics;
pub mod types;
pub mod verifier;

pub use adapters::{AdapterError, AdapterSuite};
pub use environment::{new_episode, EnvConfig, EnvError, Environment};
pub use types::*;
