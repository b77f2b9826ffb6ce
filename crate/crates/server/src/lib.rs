//! HTTP session protocol around the orchestrator, plus a blocking client
//! that drives any [`faultbench_core::Agent`] through it.

pub mod client;
pub mod server;
pub mod wire;

pub use client::{run_external, Client, ClientError, ExternalOutcome, HttpAgent};
pub use server::{router, serve, spawn, AppState};
