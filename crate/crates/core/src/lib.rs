//! Flow-level models for multipath routing where every route is a single
//! resource.
//!
//! Users (flow types) may spread their traffic over a set of resources. The
//! crate computes the exact max-min style allocation by clustering resources,
//! checks feasibility against the generalized cut constraints, simulates the
//! flow-level Markov chains, finds fluid equilibria and evaluates diffusion
//! approximations for the symmetric circle.

pub mod alloc;
pub mod circle;
pub mod cuts;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
mod flow;
pub mod network;
pub mod oracle;
pub mod rational;
pub mod scalar;
pub mod set;

pub use error::{Error, Result};
pub use network::{Network, Population};
pub use rational::{Rate, Rational};
pub use set::{ResourceSet, UserSet};
