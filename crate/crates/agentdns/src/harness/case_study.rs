//! A scripted agent executing an action plan through the root server.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use agentdns_core::clock::Clock;
use agentdns_core::discovery::DiscoveryQuery;
use agentdns_core::resolution::{ResolutionCache, ResolutionResponse};
use agentdns_core::{DiscoveryResult, ServiceName};
use bytes::Bytes;
use http::Method;
use serde::{Deserialize, Serialize};

use super::plan::{ActionPlan, ActionStep};
use crate::api::ERROR_CODE_HEADER;
use crate::client::{ClientError, RawResponse, RootClient};

/// Results requested per discovery query.
pub const DISCOVERY_K: usize = 3;
/// Path appended to a proxy endpoint when invoking a service.
pub const INVOKE_PATH: &str = "/invoke";

/// An authenticated agent with a client-side resolution cache.
pub struct AgentSession {
    client: RootClient,
    cache: ResolutionCache,
    clock: Arc<dyn Clock>,
    resolves: AtomicUsize,
}

impl AgentSession {
    pub fn new(client: RootClient, clock: Arc<dyn Clock>) -> Self {
        Self {
            client,
            cache: ResolutionCache::new(),
            clock,
            resolves: AtomicUsize::new(0),
        }
    }

    /// Exchanges the access key for a token.
    pub async fn login(
        base: &str,
        agent_id: &str,
        access_key: &str,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ClientError> {
        let anon = RootClient::new(base);
        let token = anon.issue_token(agent_id, access_key, None).await?;
        Ok(Self::new(anon.with_token(token.token), clock))
    }

    pub fn client(&self) -> &RootClient {
        &self.client
    }

    /// Number of resolve calls that actually reached the server.
    pub fn resolve_count(&self) -> usize {
        self.resolves.load(Ordering::SeqCst)
    }

    pub async fn discover(&self, text: &str, k: usize) -> Result<Vec<DiscoveryResult>, ClientError> {
        self.client.search(&DiscoveryQuery::new(text, k)).await
    }

    /// Serves from the cache while fresh, otherwise asks the server.
    pub async fn resolve(&self, name: &ServiceName) -> Result<ResolutionResponse, ClientError> {
        let now = self.clock.now();
        if let Some(hit) = self.cache.get_fresh(name, now) {
            return Ok(hit);
        }
        self.resolves.fetch_add(1, Ordering::SeqCst);
        let fresh = self.client.resolve(name.as_str()).await?;
        self.cache.insert(fresh.clone(), now);
        Ok(fresh)
    }

    pub fn forget(&self, name: &ServiceName) {
        self.cache.invalidate(name);
    }

    /// Resolves (cache-aware) and calls the service through the proxy.
    pub async fn invoke(
        &self,
        name: &ServiceName,
        method: Method,
        path: &str,
        body: Option<Bytes>,
    ) -> Result<RawResponse, ClientError> {
        let resolved = self.resolve(name).await?;
        let url = format!("{}{path}", resolved.record.proxy_endpoint);
        self.client.raw(method, &url, body).await
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepOutcome {
    Completed,
    /// Discovery returned nothing for the step's description.
    DiscoveryMiss,
    /// The root server refused or could not complete the call.
    ProxyError { code: String, message: String },
    /// The vendor answered with a non-success status.
    VendorError { status: u16 },
    /// Search itself failed.
    DiscoveryError { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub index: usize,
    pub purpose: String,
    pub needs_service: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen: Option<ServiceName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Micro-credits charged for this step.
    pub cost: u64,
    pub outcome: StepOutcome,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub request: String,
    pub steps: Vec<StepReport>,
    pub total_cost: u64,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_step: Option<usize>,
}

impl ExecutionReport {
    pub fn chosen(&self, index: usize) -> Option<&ServiceName> {
        self.steps
            .iter()
            .find(|s| s.index == index)
            .and_then(|s| s.chosen.as_ref())
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "request: {}", self.request);
        for s in &self.steps {
            let status = match &s.outcome {
                StepOutcome::Completed => "ok".to_string(),
                StepOutcome::DiscoveryMiss => "discovery miss".to_string(),
                StepOutcome::ProxyError { code, .. } => format!("proxy error {code}"),
                StepOutcome::VendorError { status } => format!("vendor error {status}"),
                StepOutcome::DiscoveryError { message } => format!("discovery error: {message}"),
            };
            let service = s
                .chosen
                .as_ref()
                .map(|n| n.to_string())
                .unwrap_or_else(|| if s.needs_service { "-".into() } else { "(local)".into() });
            let _ = writeln!(
                out,
                "step {:>2}  {:<8} cost {:>4}  {:<52}  {}",
                s.index, status, s.cost, service, s.purpose
            );
        }
        let verdict = match self.failed_step {
            None => "completed".to_string(),
            Some(i) => format!("FAILED at step {i}"),
        };
        let _ = writeln!(out, "{verdict}  total cost {}", self.total_cost);
        out
    }
}

/// Deterministic stand-in for an LLM generation step.
pub fn stub_transform(step: &ActionStep, previous: &str) -> String {
    let gist: String = previous.chars().take(160).collect();
    format!("[step {}: {}] {}", step.index, step.purpose, gist)
}

/// Runs `plan` step by step, stopping at the first failure.
pub async fn run_case_study(session: &AgentSession, plan: &ActionPlan) -> ExecutionReport {
    let request = plan.request.clone().unwrap_or_default();
    let mut previous = request.clone();
    let mut steps = Vec::new();
    let mut failed_step = None;
    for step in &plan.steps {
        let report = run_step(session, step, &previous).await;
        let ok = report.outcome == StepOutcome::Completed;
        previous = report.output.clone();
        steps.push(report);
        if !ok {
            failed_step = Some(step.index);
            break;
        }
    }
    ExecutionReport {
        request,
        total_cost: steps.iter().map(|s| s.cost).sum(),
        success: failed_step.is_none(),
        failed_step,
        steps,
    }
}

async fn run_step(session: &AgentSession, step: &ActionStep, previous: &str) -> StepReport {
    let mut report = StepReport {
        index: step.index,
        purpose: step.purpose.clone(),
        needs_service: step.needs_service,
        query: step.tool_function.clone(),
        chosen: None,
        score: None,
        cost: 0,
        outcome: StepOutcome::Completed,
        output: String::new(),
    };
    let Some(tool) = step.tool_function.as_deref().filter(|_| step.needs_service) else {
        report.output = stub_transform(step, previous);
        return report;
    };
    let hits = match session.discover(tool, DISCOVERY_K).await {
        Ok(h) => h,
        Err(e) => {
            report.outcome = StepOutcome::DiscoveryError { message: e.to_string() };
            return report;
        }
    };
    let Some(best) = hits.into_iter().next() else {
        report.outcome = StepOutcome::DiscoveryMiss;
        return report;
    };
    report.chosen = Some(best.name.clone());
    report.score = Some(best.score);
    let body = serde_json::json!({ "task": tool, "input": previous });
    let response = session
        .invoke(
            &best.name,
            Method::POST,
            INVOKE_PATH,
            Some(Bytes::from(serde_json::to_vec(&body).expect("serializes"))),
        )
        .await;
    match response {
        Err(ClientError::Api(e)) => {
            report.outcome = StepOutcome::ProxyError {
                code: e.code,
                message: e.message,
            };
        }
        Err(e) => {
            report.outcome = StepOutcome::ProxyError {
                code: "TRANSPORT".into(),
                message: e.to_string(),
            };
        }
        Ok(raw) if raw.headers.contains_key(ERROR_CODE_HEADER) => {
            let e = crate::client::decode::<serde_json::Value>(&raw).err();
            let (code, message) = match e {
                Some(ClientError::Api(e)) => (e.code, e.message),
                other => ("UNKNOWN".into(), format!("{other:?}")),
            };
            report.outcome = StepOutcome::ProxyError { code, message };
        }
        Ok(raw) => {
            // The proxy answered, so the call was forwarded and charged.
            report.cost = best.pricing.amount;
            let text = String::from_utf8_lossy(&raw.body).into_owned();
            report.output = serde_json::from_slice::<serde_json::Value>(&raw.body)
                .ok()
                .and_then(|v| v.get("output").and_then(|o| o.as_str()).map(str::to_string))
                .unwrap_or(text);
            if !raw.status.is_success() {
                report.outcome = StepOutcome::VendorError {
                    status: raw.status.as_u16(),
                };
            }
        }
    }
    report
}
