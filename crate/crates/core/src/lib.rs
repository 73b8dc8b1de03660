//! Crowd computing on heterogeneous consumer devices.
//!
//! A coordinator decomposes a job into resumable tasks, hands them to
//! workers through a pluggable scheduling strategy, tracks tiered
//! checkpoints, and reassigns work when devices disappear. The same
//! coordinator runs inside a deterministic discrete-event simulation and
//! over loopback TCP.

pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod coordinator;
pub mod decision;
pub mod fleet;
pub mod harness;
pub mod journal;
pub mod metrics;
pub mod rng;
pub mod scheduler;
pub mod sim;
pub mod tcp;
pub mod transport;
pub mod worker;
pub mod workloads;
