//! End-to-end harness: mock vendors, fixture seeding and a scripted agent
//! running an action plan through the root server.

pub mod case_study;
pub mod fixtures;
pub mod mock_vendor;
pub mod plan;

use std::path::PathBuf;
use std::sync::Arc;

use agentdns_core::clock::{Clock, SystemClock};
use thiserror::Error;

pub use case_study::{run_case_study, AgentSession, ExecutionReport, StepOutcome, StepReport};
pub use fixtures::{default_manifest, default_plan, seed_fixtures, FixtureManifest, FixtureVendors, SeedReport};
pub use mock_vendor::{MockVendor, RecordedRequest};
pub use plan::{ActionPlan, ActionStep, FixturePlanner, PlanError, Planner};

use crate::client::{ClientError, RootClient};
use crate::config::ServerConfig;
use crate::server::{start_with_clock, RunningServer, ServeError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Setup(String),
}

/// A root server, one mock vendor per fixture service, and the seeded state.
pub struct FixtureEnv {
    pub server: RunningServer,
    pub vendors: FixtureVendors,
    pub manifest: FixtureManifest,
    pub seed: SeedReport,
    pub admin: RootClient,
    pub admin_key: String,
    pub clock: Arc<dyn Clock>,
}

impl FixtureEnv {
    /// In-memory server on an ephemeral port with the bundled fixtures.
    pub async fn start() -> Result<Self, HarnessError> {
        Self::start_with(default_manifest(), Arc::new(SystemClock), None).await
    }

    pub async fn start_with(
        manifest: FixtureManifest,
        clock: Arc<dyn Clock>,
        data_dir: Option<PathBuf>,
    ) -> Result<Self, HarnessError> {
        let config = ServerConfig::generate("127.0.0.1:0", data_dir);
        let server = start_with_clock(&config, "<fixture>", Arc::clone(&clock)).await?;
        let vendors = FixtureVendors::spawn(&manifest).await?;
        let admin = RootClient::new(server.url()).with_admin_key(config.admin_key.clone());
        let seed = seed_fixtures(&admin, &manifest, &vendors.endpoints()).await?;
        Ok(Self {
            server,
            vendors,
            manifest,
            seed,
            admin,
            admin_key: config.admin_key,
            clock,
        })
    }

    pub fn url(&self) -> String {
        self.server.url()
    }

    /// Logs in as a fixture agent created by this environment.
    pub async fn session(&self, agent_id: &str) -> Result<AgentSession, HarnessError> {
        let key = self
            .seed
            .agents
            .iter()
            .find(|a| a.agent_id == agent_id)
            .and_then(|a| a.access_key.clone())
            .ok_or_else(|| HarnessError::Setup(format!("no access key for `{agent_id}`")))?;
        Ok(AgentSession::login(&self.url(), agent_id, &key, Arc::clone(&self.clock)).await?)
    }

    /// The first agent in the manifest.
    pub async fn default_session(&self) -> Result<AgentSession, HarnessError> {
        let id = self
            .manifest
            .agents
            .first()
            .ok_or_else(|| HarnessError::Setup("manifest has no agents".into()))?
            .agent_id
            .clone();
        self.session(&id).await
    }

    pub async fn shutdown(self) -> Result<(), HarnessError> {
        drop(self.vendors);
        self.server
            .shutdown()
            .await
            .map_err(|e| HarnessError::Setup(e.to_string()))
    }
}

/// Runs `plan` against a throwaway environment.
pub async fn run_demo(plan: &ActionPlan) -> Result<ExecutionReport, HarnessError> {
    plan.validate()?;
    let env = FixtureEnv::start().await?;
    let session = env.default_session().await?;
    let report = run_case_study(&session, plan).await;
    env.shutdown().await?;
    Ok(report)
}
