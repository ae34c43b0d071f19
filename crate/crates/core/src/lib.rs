//! Class-based admission control on a completely partitioned
//! video-on-demand server.
//!
//! The server's ports are split into disjoint partitions, one per user
//! class. Requests go to their home partition and are forwarded to later
//! partitions when it is full; a request that finds no free port is lost.
//!
//! - [`popularity`]: Zipf-like title popularity and title sampling.
//! - [`analytic`]: Erlang-B, offered load, routed availability and cascade
//!   blocking products.
//! - [`engine`]: the discrete-event loss simulator.
//! - [`metrics`]: blocking estimators, confidence intervals and run reports.
//! - [`config`] and [`experiment`]: scenario files, figure presets, sweeps
//!   with replication, and analytic-versus-simulation comparison.

pub mod analytic;
pub mod config;
pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod popularity;
