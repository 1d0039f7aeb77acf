//! Core of an AgentDNS root server: naming, registry, discovery, resolution,
//! authentication, billing and the service proxy pipeline.
//!
//! [`AgentDns`] composes the modules; the HTTP surface lives in the
//! `agentdns` crate.

pub mod auth;
pub mod billing;
pub mod clock;
pub mod discovery;
pub mod naming;
pub mod proxy;
pub mod registry;
pub mod resolution;
pub mod root;
pub mod store;

pub use naming::{CategoryPath, NameError, ServiceName};
pub use root::{AgentDns, CoreConfig, CredentialInput, DiscoveryResult, Error, Health};
