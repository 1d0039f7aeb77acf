//! The root server: one object owning every module and keeping them coherent.
//!
//! Registry writes, discovery indexing and route syncing happen under a single
//! writer lock, so the index and the route table always mirror the latest
//! record version. Reads never take that lock.

use std::path::PathBuf;
use std::sync::Arc;

use bytes::Bytes;
use http::{Request, Response};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{AccessToken, AccountStatus, AgentAccount, Auth, AuthError, MASTER_KEY_LEN};
use crate::billing::{AccountId, Billing, BillingError, LedgerEntry, SettlementReport};
use crate::clock::{Clock, SystemClock, Timestamp};
use crate::discovery::{
    Bm25Params, DiscoveryError, DiscoveryIndex, DiscoveryQuery, EmbeddingProvider, HashingEmbedder,
};
use crate::naming::{CategoryPath, NameError, ServiceName};
use crate::proxy::{Forwarder, MeterLog, ProxyError, ServiceProxy};
use crate::registry::{
    Organization, PriceModel, Registry, RegistryError, ServicePatch, ServiceRecord, ServiceSpec,
    ServiceStatus,
};
use crate::resolution::{resolve_record, ResolutionError, ResolutionResponse};
use crate::store::{prepare_data_dir, StoreError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Name(#[from] NameError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Resolution(#[from] ResolutionError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Billing(#[from] BillingError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone)]
pub struct CoreConfig {
    /// `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub master_key: [u8; MASTER_KEY_LEN],
    pub default_token_ttl: u64,
    pub default_resolution_ttl: u64,
    pub platform_fee_bps: u64,
    pub bm25: Bm25Params,
    /// Base URL agents use to reach this server's `/proxy/...` routes.
    pub public_url: String,
}

impl Default for CoreConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            master_key: [0u8; MASTER_KEY_LEN],
            default_token_ttl: crate::auth::DEFAULT_TOKEN_TTL,
            default_resolution_ttl: crate::resolution::DEFAULT_RESOLUTION_TTL,
            platform_fee_bps: 0,
            bm25: Bm25Params::default(),
            public_url: "http://127.0.0.1:8080".into(),
        }
    }
}

/// A vendor credential supplied inline with a registration.
#[derive(Clone, Serialize, Deserialize)]
pub struct CredentialInput {
    pub header_name: String,
    pub secret: String,
}

impl std::fmt::Debug for CredentialInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CredentialInput")
            .field("header_name", &self.header_name)
            .finish_non_exhaustive()
    }
}

/// A discovery hit joined with the agent-visible record fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryResult {
    pub name: ServiceName,
    pub proxy_endpoint: String,
    pub protocols: std::collections::BTreeSet<String>,
    pub capabilities: String,
    pub pricing: PriceModel,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub services: usize,
}

pub struct AgentDns {
    config: CoreConfig,
    public_url: RwLock<String>,
    clock: Arc<dyn Clock>,
    registry: Registry,
    discovery: DiscoveryIndex,
    auth: Arc<Auth>,
    billing: Arc<Billing>,
    proxy: ServiceProxy,
    writer: Mutex<()>,
}

impl AgentDns {
    pub fn open(config: CoreConfig) -> Result<Self, Error> {
        Self::open_with(
            config,
            Arc::new(SystemClock),
            Arc::new(HashingEmbedder::default()),
        )
    }

    pub fn open_with(
        config: CoreConfig,
        clock: Arc<dyn Clock>,
        embedder: Arc<dyn EmbeddingProvider>,
    ) -> Result<Self, Error> {
        let (registry, auth, billing, meter) = match &config.data_dir {
            Some(dir) => {
                prepare_data_dir(dir)?;
                (
                    Registry::open(&dir.join("registry.jsonl"))?,
                    Auth::open(&dir.join("auth.jsonl"), &config.master_key)?,
                    Billing::open(&dir.join("ledger.jsonl"), config.platform_fee_bps)?,
                    MeterLog::open(&dir.join("meter.jsonl"))?,
                )
            }
            None => (
                Registry::in_memory(),
                Auth::in_memory(&config.master_key),
                Billing::in_memory(config.platform_fee_bps),
                MeterLog::in_memory(),
            ),
        };
        let auth = Arc::new(auth);
        let billing = Arc::new(billing);
        for agent in auth.agent_ids() {
            billing.open_account(AccountId::Agent(agent));
        }
        for org in registry.orgs() {
            billing.open_account(AccountId::Vendor(org.org_id));
        }
        let discovery = DiscoveryIndex::new(embedder, config.bm25);
        let proxy = ServiceProxy::new(Arc::clone(&auth), Arc::clone(&billing), meter);
        let records = registry.all_records();
        discovery.rebuild(&records);
        proxy.routes().rebuild(&records);
        Ok(Self {
            public_url: RwLock::new(config.public_url.clone()),
            config,
            clock,
            registry,
            discovery,
            auth,
            billing,
            proxy,
            writer: Mutex::new(()),
        })
    }

    pub fn config(&self) -> &CoreConfig {
        &self.config
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn public_url(&self) -> String {
        self.public_url.read().clone()
    }

    /// Used once the listener's real address is known.
    pub fn set_public_url(&self, url: impl Into<String>) {
        *self.public_url.write() = url.into();
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn discovery(&self) -> &DiscoveryIndex {
        &self.discovery
    }

    pub fn auth(&self) -> &Auth {
        &self.auth
    }

    pub fn billing(&self) -> &Billing {
        &self.billing
    }

    pub fn proxy(&self) -> &ServiceProxy {
        &self.proxy
    }

    /// Flushes and fsyncs every journal.
    pub fn sync(&self) -> Result<(), Error> {
        self.registry.sync()?;
        self.auth.sync()?;
        self.billing.sync()?;
        self.proxy.meter().sync()?;
        Ok(())
    }

    pub fn health(&self) -> Health {
        Health {
            services: self.registry.live_count(),
        }
    }

    // --- organizations and services ---

    pub fn register_org(&self, org_id: &str, display_name: &str) -> Result<Organization, Error> {
        let org = self.registry.register_org(org_id, display_name, self.now())?;
        self.billing.open_account(AccountId::Vendor(org.org_id.clone()));
        Ok(org)
    }

    pub fn verify_org(&self, org_id: &str) -> Result<Organization, Error> {
        Ok(self.registry.verify_org(org_id)?)
    }

    pub fn store_vendor_credential(
        &self,
        org_id: &str,
        name: &ServiceName,
        credential: &CredentialInput,
    ) -> Result<String, Error> {
        if self.registry.get_org(org_id).is_none() {
            return Err(RegistryError::UnknownOrg(org_id.to_string()).into());
        }
        Ok(self.auth.store_vendor_credential(
            org_id,
            name,
            &credential.header_name,
            &credential.secret,
        )?)
    }

    fn check_credential_ref(&self, org_id: &str, credential_ref: Option<&str>) -> Result<(), Error> {
        match credential_ref {
            Some(r) if !self.auth.credential_owned_by(r, org_id) => Err(AuthError::UnknownRef.into()),
            _ => Ok(()),
        }
    }

    fn publish(&self, record: &Arc<ServiceRecord>) {
        self.discovery.index_service(record);
        self.proxy.sync_routes(record);
    }

    /// Registers a service. An inline credential is vaulted first and its
    /// reference stored on the record.
    pub fn register_service(
        &self,
        org_id: &str,
        category: &CategoryPath,
        name: &str,
        mut spec: ServiceSpec,
        credential: Option<&CredentialInput>,
    ) -> Result<Arc<ServiceRecord>, Error> {
        let _w = self.writer.lock();
        let org_id = org_id.to_ascii_lowercase();
        let service_name = ServiceName::new(&org_id, category.clone(), name)?;
        match self.registry.get_org(&org_id) {
            None => return Err(RegistryError::UnknownOrg(org_id).into()),
            Some(o) if !o.verified => return Err(RegistryError::UnverifiedOrg(org_id).into()),
            Some(_) => {}
        }
        if self.registry.get_service_admin(&service_name).is_ok() {
            return Err(RegistryError::DuplicateName(service_name).into());
        }
        if let Some(c) = credential {
            spec.vendor_credential_ref = Some(self.store_vendor_credential(&org_id, &service_name, c)?);
        }
        self.check_credential_ref(&org_id, spec.vendor_credential_ref.as_deref())?;
        let record = self
            .registry
            .register_service(&org_id, category, name, spec, self.now())?;
        self.publish(&record);
        Ok(record)
    }

    pub fn update_service(
        &self,
        name: &ServiceName,
        mut patch: ServicePatch,
        expected_version: u64,
        credential: Option<&CredentialInput>,
    ) -> Result<Arc<ServiceRecord>, Error> {
        let _w = self.writer.lock();
        let current = self.registry.get_service(name)?;
        if current.version != expected_version {
            return Err(RegistryError::VersionConflict {
                expected: expected_version,
                actual: current.version,
            }
            .into());
        }
        if let Some(c) = credential {
            patch.vendor_credential_ref = Some(self.store_vendor_credential(name.org(), name, c)?);
        }
        self.check_credential_ref(name.org(), patch.vendor_credential_ref.as_deref())?;
        let record = self
            .registry
            .update_service(name, patch, expected_version, self.now())?;
        self.publish(&record);
        Ok(record)
    }

    pub fn delete_service(&self, name: &ServiceName) -> Result<Arc<ServiceRecord>, Error> {
        let _w = self.writer.lock();
        let record = self.registry.delete_service(name, self.now())?;
        self.publish(&record);
        Ok(record)
    }

    /// Admin view, tombstones included.
    pub fn get_service(&self, name: &ServiceName) -> Result<Arc<ServiceRecord>, Error> {
        Ok(self.registry.get_service_admin(name)?)
    }

    // --- agent-facing reads ---

    pub fn search(&self, query: &DiscoveryQuery) -> Result<Vec<DiscoveryResult>, Error> {
        let base = self.public_url();
        Ok(self
            .discovery
            .search(query)?
            .into_iter()
            .map(|h| DiscoveryResult {
                proxy_endpoint: crate::resolution::proxy_endpoint(&base, &h.record.name),
                name: h.record.name.clone(),
                protocols: h.record.protocols.clone(),
                capabilities: h.record.capabilities.clone(),
                pricing: h.record.pricing,
                score: h.score,
                rank: h.rank,
            })
            .collect())
    }

    pub fn resolve(&self, name: &str) -> Result<ResolutionResponse, Error> {
        let name = ServiceName::parse(name).map_err(ResolutionError::Malformed)?;
        let record = self
            .registry
            .get_service(&name)
            .map_err(|_| ResolutionError::NotFound(name.to_string()))?;
        Ok(resolve_record(
            &record,
            &self.public_url(),
            self.config.default_resolution_ttl,
        )?)
    }

    // --- auth ---

    pub fn create_agent(&self, agent_id: &str) -> Result<(AgentAccount, String), Error> {
        let created = self.auth.create_agent(agent_id, self.now())?;
        self.billing.open_account(AccountId::Agent(agent_id.to_string()));
        Ok(created)
    }

    pub fn set_agent_status(&self, agent_id: &str, status: AccountStatus) -> Result<(), Error> {
        Ok(self.auth.set_agent_status(agent_id, status)?)
    }

    pub fn issue_token(
        &self,
        agent_id: &str,
        access_key: &str,
        ttl_seconds: Option<u64>,
    ) -> Result<AccessToken, Error> {
        Ok(self.auth.issue_token(
            agent_id,
            access_key,
            ttl_seconds.unwrap_or(self.config.default_token_ttl),
            self.now(),
        )?)
    }

    pub fn validate_token(&self, token: &str) -> Result<String, Error> {
        Ok(self.auth.validate_token(token, self.now())?)
    }

    pub fn revoke_token(&self, token: &str) -> Result<(), Error> {
        Ok(self.auth.revoke_token(token)?)
    }

    // --- billing ---

    pub fn deposit(&self, agent_id: &str, amount: u64) -> Result<i64, Error> {
        Ok(self.billing.deposit(agent_id, amount, self.now())?)
    }

    pub fn balance(&self, account: &AccountId) -> Result<i64, Error> {
        Ok(self.billing.balance(account)?)
    }

    pub fn statement(
        &self,
        owner: &AccountId,
        from: Option<Timestamp>,
        to: Option<Timestamp>,
    ) -> Result<Vec<LedgerEntry>, Error> {
        Ok(self.billing.statement(owner, from, to)?)
    }

    pub fn settle(&self, org_id: &str) -> Result<SettlementReport, Error> {
        Ok(self.billing.settle(org_id, self.now())?)
    }

    // --- proxy ---

    pub async fn route_request<F: Forwarder>(
        &self,
        request: Request<Bytes>,
        forwarder: &F,
    ) -> Result<Response<Bytes>, Error> {
        Ok(self
            .proxy
            .route_request(request, self.now(), forwarder)
            .await?)
    }

    /// Names of every service currently marked active.
    pub fn active_names(&self) -> Vec<ServiceName> {
        self.registry
            .all_records()
            .into_iter()
            .filter(|r| r.status == ServiceStatus::Active)
            .map(|r| r.name.clone())
            .collect()
    }
}
