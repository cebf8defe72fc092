//! Stability analysis and simulation of DAG queueing networks whose queues
//! pick servers by learning.
//!
//! * [`network`]: instances, validation, split graph.
//! * [`stability`]: centralized feasibility, dual certificates, sufficient
//!   conditions for learning queues, policy decompositions.
//! * [`learning`]: per-node learners and regret ledgers.
//! * [`sim`]: the two-phase discrete-time engine and its diagnostics.
//! * [`patient`]: aging rates for fixed mixed strategies and Nash search.
//! * [`variants`]: adversarial arrivals, typed packets, the tighter
//!   complete-bipartite harness.

#![allow(clippy::needless_range_loop)]

pub mod fixtures;
pub mod learning;
pub mod lp;
pub mod matching;
pub mod network;
pub mod patient;
pub mod sim;
pub mod stability;
pub mod variants;
