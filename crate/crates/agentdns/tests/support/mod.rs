#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use agentdns::api::RegisterServiceRequest;
use agentdns::client::RootClient;
use agentdns::config::ServerConfig;
use agentdns::harness::MockVendor;
use agentdns::server::{start_with_clock, RunningServer};
use agentdns_core::clock::ManualClock;
use agentdns_core::registry::{PriceModel, ServiceRecord};
use agentdns_core::CredentialInput;

pub const T0: i64 = 1_700_000_000;

pub struct Ctx {
    pub server: RunningServer,
    pub admin: RootClient,
    pub clock: Arc<ManualClock>,
    pub config: ServerConfig,
}

impl Ctx {
    pub fn url(&self) -> String {
        self.server.url()
    }

    pub fn anon(&self) -> RootClient {
        RootClient::new(self.url())
    }

    /// A verified org, ready for services.
    pub async fn org(&self, org_id: &str) {
        self.admin.register_org(org_id, &format!("{org_id} inc")).await.unwrap();
        self.admin.verify_org(org_id).await.unwrap();
    }

    pub async fn service(
        &self,
        org: &str,
        category: &str,
        name: &str,
        caps: &str,
        price: u64,
        vendor: &MockVendor,
    ) -> ServiceRecord {
        self.admin
            .register_service(&RegisterServiceRequest {
                org_id: org.into(),
                category: category.into(),
                name: name.into(),
                vendor_endpoint: vendor.endpoint(),
                protocols: ["HTTP".to_string()].into(),
                capabilities: caps.into(),
                pricing: PriceModel::per_call(price),
                ttl_seconds: None,
                vendor_credential_ref: None,
                credential: Some(CredentialInput {
                    header_name: vendor.credential_header().into(),
                    secret: vendor.secret().into(),
                }),
            })
            .await
            .unwrap()
    }

    /// Creates an agent with `deposit` credits and returns a client holding its token.
    pub async fn agent(&self, agent_id: &str, deposit: u64) -> RootClient {
        let created = self.admin.create_agent(agent_id).await.unwrap();
        if deposit > 0 {
            self.admin.deposit(agent_id, deposit).await.unwrap();
        }
        let token = self
            .anon()
            .issue_token(agent_id, &created.access_key, None)
            .await
            .unwrap();
        self.anon().with_token(token.token)
    }

    pub async fn shutdown(self) {
        self.server.shutdown().await.unwrap();
    }
}

pub fn config(data_dir: Option<PathBuf>) -> ServerConfig {
    ServerConfig::generate("127.0.0.1:0", data_dir)
}

pub async fn start(data_dir: Option<PathBuf>) -> Ctx {
    start_config(config(data_dir)).await
}

pub async fn start_config(config: ServerConfig) -> Ctx {
    let clock = Arc::new(ManualClock::new(T0));
    let server = start_with_clock(&config, "test.toml", clock.clone()).await.unwrap();
    let admin = RootClient::new(server.url()).with_admin_key(config.admin_key.clone());
    Ctx {
        server,
        admin,
        clock,
        config,
    }
}
