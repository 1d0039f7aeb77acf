//! The checked-in fixture corpus and seeding against a live server.

use std::collections::{BTreeMap, HashMap};

use agentdns_core::naming::CategoryPath;
use agentdns_core::registry::PriceModel;
use agentdns_core::{CredentialInput, ServiceName};
use serde::{Deserialize, Serialize};

use super::mock_vendor::MockVendor;
use super::plan::ActionPlan;
use crate::api::RegisterServiceRequest;
use crate::client::{ClientError, RootClient};

pub const MANIFEST_JSON: &str = include_str!("../../fixtures/case_study/manifest.json");
pub const PLAN_JSON: &str = include_str!("../../fixtures/case_study/plan.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureOrg {
    pub org_id: String,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureService {
    pub org_id: String,
    pub category: String,
    pub name: String,
    pub capabilities: String,
    pub protocols: Vec<String>,
    pub price: u64,
    /// Nominal address; seeding usually substitutes a live mock vendor.
    pub endpoint: String,
    pub credential_header: String,
    /// Canary value: must never reach an agent.
    pub secret: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttl_seconds: Option<u64>,
}

impl FixtureService {
    pub fn service_name(&self) -> ServiceName {
        let category: CategoryPath = self.category.parse().expect("fixture category");
        ServiceName::new(&self.org_id, category, &self.name).expect("fixture name")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureAgent {
    pub agent_id: String,
    /// Initial balance in micro-credits.
    pub deposit: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub orgs: Vec<FixtureOrg>,
    pub services: Vec<FixtureService>,
    pub agents: Vec<FixtureAgent>,
}

impl FixtureManifest {
    pub fn parse(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn service(&self, name: &ServiceName) -> Option<&FixtureService> {
        self.services.iter().find(|s| &s.service_name() == name)
    }

    pub fn secrets(&self) -> Vec<&str> {
        self.services.iter().map(|s| s.secret.as_str()).collect()
    }
}

pub fn default_manifest() -> FixtureManifest {
    FixtureManifest::parse(MANIFEST_JSON).expect("bundled manifest parses")
}

pub fn default_plan() -> ActionPlan {
    ActionPlan::parse(PLAN_JSON).expect("bundled plan parses")
}

/// One running mock vendor per manifest service.
pub struct FixtureVendors {
    pub vendors: BTreeMap<ServiceName, MockVendor>,
}

impl FixtureVendors {
    pub async fn spawn(manifest: &FixtureManifest) -> std::io::Result<Self> {
        let mut vendors = BTreeMap::new();
        for s in &manifest.services {
            let v = MockVendor::start(&s.name, &s.credential_header, &s.secret).await?;
            vendors.insert(s.service_name(), v);
        }
        Ok(Self { vendors })
    }

    pub fn endpoints(&self) -> HashMap<ServiceName, String> {
        self.vendors
            .iter()
            .map(|(n, v)| (n.clone(), v.endpoint()))
            .collect()
    }

    pub fn get(&self, name: &ServiceName) -> Option<&MockVendor> {
        self.vendors.get(name)
    }

    pub fn get_mut(&mut self, name: &ServiceName) -> Option<&mut MockVendor> {
        self.vendors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ServiceName, &MockVendor)> {
        self.vendors.iter()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeededService {
    pub name: ServiceName,
    pub endpoint: String,
    pub price: u64,
    /// False when the name was already registered.
    pub created: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeededAgent {
    pub agent_id: String,
    /// Only known when this call created the agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub access_key: Option<String>,
    pub created: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedReport {
    pub services: Vec<SeededService>,
    pub agents: Vec<SeededAgent>,
}

fn tolerate<T>(result: Result<T, ClientError>, code: &str) -> Result<Option<T>, ClientError> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.code() == Some(code) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Registers everything in `manifest` through the admin API. Safe to repeat:
/// existing orgs, names and agents are left alone and existing agents get no
/// second deposit. `endpoints` overrides the nominal vendor addresses.
pub async fn seed_fixtures(
    admin: &RootClient,
    manifest: &FixtureManifest,
    endpoints: &HashMap<ServiceName, String>,
) -> Result<SeedReport, ClientError> {
    for org in &manifest.orgs {
        tolerate(admin.register_org(&org.org_id, &org.display_name).await, "ORG_EXISTS")?;
        admin.verify_org(&org.org_id).await?;
    }
    let mut services = Vec::new();
    for s in &manifest.services {
        let name = s.service_name();
        let endpoint = endpoints.get(&name).cloned().unwrap_or_else(|| s.endpoint.clone());
        let req = RegisterServiceRequest {
            org_id: s.org_id.clone(),
            category: s.category.clone(),
            name: s.name.clone(),
            vendor_endpoint: endpoint.clone(),
            protocols: s.protocols.iter().cloned().collect(),
            capabilities: s.capabilities.clone(),
            pricing: PriceModel::per_call(s.price),
            ttl_seconds: s.ttl_seconds,
            vendor_credential_ref: None,
            credential: Some(CredentialInput {
                header_name: s.credential_header.clone(),
                secret: s.secret.clone(),
            }),
        };
        let created = tolerate(admin.register_service(&req).await, "NAME_TAKEN")?.is_some();
        services.push(SeededService {
            name,
            endpoint,
            price: s.price,
            created,
        });
    }
    let mut agents = Vec::new();
    for a in &manifest.agents {
        let created = tolerate(admin.create_agent(&a.agent_id).await, "AGENT_EXISTS")?;
        if created.is_some() && a.deposit > 0 {
            admin.deposit(&a.agent_id, a.deposit).await?;
        }
        agents.push(SeededAgent {
            agent_id: a.agent_id.clone(),
            created: created.is_some(),
            access_key: created.map(|c| c.access_key),
        });
    }
    Ok(SeedReport { services, agents })
}
