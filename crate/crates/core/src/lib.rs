//! Traffic- and delay-aware placement of microservices on cluster nodes.
//!
//! The pipeline: byte counters between services become a traffic stress graph
//! ([`traffic`]), measured node-to-node delays come from [`dynamics`], and the
//! parallel greedy mapper ([`mapper`]) searches for a placement minimizing
//! stress-weighted delay under capacity limits. [`control`] watches a windowed
//! latency mean and turns new placements into migration plans, and [`sim`]
//! runs all of it against a modelled cluster.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod control;
pub mod dynamics;
pub mod mapper;
pub mod model;
pub mod problem;
pub mod scenario;
pub mod sim;
pub mod traffic;
