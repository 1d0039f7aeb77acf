//! AgentDNS root server: the HTTP gateway over `agentdns-core`, a client,
//! the command line interface and the case-study harness.

#![recursion_limit = "256"]

pub mod api;
pub mod catalog;
pub mod cli;
pub mod client;
pub mod config;
pub mod forward;
pub mod harness;
pub mod server;

pub use api::ApiError;
pub use client::RootClient;
pub use config::ServerConfig;
pub use server::{start, RunningServer};
