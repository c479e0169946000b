//! Bandwidth allocation across network slices with deep Q-learning.
//!
//! The crate bundles a slot-level downlink simulator with per-slice
//! traffic models, the discrete allocation lattice, a small dense network
//! library, and three allocation policies: a normalized-advantage agent
//! that projects its continuous action onto the lattice, a classical DQN
//! over the enumerated lattice, and an equal split.

pub mod action_space;
pub mod agents;
pub mod config;
pub mod env;
pub mod error;
pub mod link_sim;
pub mod neural;
pub mod rng;
pub mod traffic;

pub use error::{Error, Result};
