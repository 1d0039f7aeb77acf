//! Async HTTP client for the root API.

use std::sync::Arc;
use std::time::Duration;

use agentdns_core::auth::{AccountStatus, AgentAccount};
use agentdns_core::billing::SettlementReport;
use agentdns_core::discovery::DiscoveryQuery;
use agentdns_core::proxy::MeterEvent;
use agentdns_core::registry::Organization;
use agentdns_core::resolution::ResolutionResponse;
use agentdns_core::{DiscoveryResult, ServiceName};
use bytes::Bytes;
use http::{HeaderMap, Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::api::*;
use crate::server::ADMIN_KEY_HEADER;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response ({status}): {message}")]
    Decode { status: u16, message: String },
}

impl ClientError {
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api(e) => Some(&e.code),
            _ => None,
        }
    }
}

/// A raw response, as returned by proxied calls.
#[derive(Debug, Clone)]
pub struct RawResponse {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Bytes,
}

/// Sees every response the client receives, before decoding.
pub type Observer = Arc<dyn Fn(&RawResponse) + Send + Sync>;

#[derive(Clone)]
pub struct RootClient {
    base: String,
    http: reqwest::Client,
    token: Option<String>,
    admin_key: Option<String>,
    observer: Option<Observer>,
}

impl RootClient {
    pub fn new(base: impl Into<String>) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(60))
            .redirect(reqwest::redirect::Policy::none())
            .no_proxy()
            .build()
            .expect("http client builds");
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http,
            token: None,
            admin_key: None,
            observer: None,
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn with_admin_key(mut self, key: impl Into<String>) -> Self {
        self.admin_key = Some(key.into());
        self
    }

    pub fn with_observer(mut self, observer: Observer) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn set_token(&mut self, token: impl Into<String>) {
        self.token = Some(token.into());
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    fn request(&self, method: Method, url: &str) -> reqwest::RequestBuilder {
        let mut rb = self.http.request(method, url);
        if let Some(t) = &self.token {
            rb = rb.bearer_auth(t);
        }
        if let Some(k) = &self.admin_key {
            rb = rb.header(ADMIN_KEY_HEADER, k);
        }
        rb
    }

    async fn send_raw(&self, rb: reqwest::RequestBuilder) -> Result<RawResponse, ClientError> {
        let resp = rb.send().await.map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let headers = resp.headers().clone();
        let body = resp
            .bytes()
            .await
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let raw = RawResponse {
            status,
            headers,
            body,
        };
        if let Some(observe) = &self.observer {
            observe(&raw);
        }
        Ok(raw)
    }

    /// Sends a JSON API call and decodes either the success body or an [`ApiError`].
    pub async fn call<B: Serialize, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<T, ClientError> {
        let mut rb = self.request(method, &format!("{}{path}", self.base));
        if let Some(b) = body {
            rb = rb
                .header(http::header::CONTENT_TYPE, "application/json")
                .body(serde_json::to_vec(b).expect("request serializes"));
        }
        let raw = self.send_raw(rb).await?;
        decode(&raw)
    }

    pub async fn get_json<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        self.call::<(), T>(Method::GET, path, None).await
    }

    pub async fn health(&self) -> Result<HealthResponse, ClientError> {
        self.get_json("/v1/health").await
    }

    pub async fn issue_token(
        &self,
        agent_id: &str,
        access_key: &str,
        ttl_seconds: Option<u64>,
    ) -> Result<TokenResponse, ClientError> {
        let req = TokenRequest {
            agent_id: agent_id.into(),
            access_key: access_key.into(),
            ttl_seconds,
        };
        self.call(Method::POST, "/v1/auth/token", Some(&req)).await
    }

    pub async fn revoke_token(&self) -> Result<serde_json::Value, ClientError> {
        self.call::<(), _>(Method::POST, "/v1/auth/revoke", None).await
    }

    pub async fn create_agent(&self, agent_id: &str) -> Result<CreateAgentResponse, ClientError> {
        let req = CreateAgentRequest {
            agent_id: agent_id.into(),
        };
        self.call(Method::POST, "/v1/agents", Some(&req)).await
    }

    pub async fn set_agent_status(
        &self,
        agent_id: &str,
        status: AccountStatus,
    ) -> Result<AgentAccount, ClientError> {
        self.call(
            Method::POST,
            &format!("/v1/agents/{agent_id}/status"),
            Some(&AgentStatusRequest { status }),
        )
        .await
    }

    pub async fn register_org(&self, org_id: &str, display_name: &str) -> Result<Organization, ClientError> {
        let req = RegisterOrgRequest {
            org_id: org_id.into(),
            display_name: display_name.into(),
        };
        self.call(Method::POST, "/v1/orgs", Some(&req)).await
    }

    pub async fn verify_org(&self, org_id: &str) -> Result<Organization, ClientError> {
        self.call::<(), _>(Method::POST, &format!("/v1/orgs/{org_id}/verify"), None)
            .await
    }

    pub async fn store_credential(
        &self,
        org_id: &str,
        req: &StoreCredentialRequest,
    ) -> Result<StoreCredentialResponse, ClientError> {
        self.call(Method::POST, &format!("/v1/orgs/{org_id}/credentials"), Some(req))
            .await
    }

    pub async fn register_service(&self, req: &RegisterServiceRequest) -> Result<AdminServiceRecord, ClientError> {
        self.call(Method::POST, "/v1/services", Some(req)).await
    }

    pub async fn update_service(
        &self,
        name: &ServiceName,
        req: &UpdateServiceRequest,
    ) -> Result<AdminServiceRecord, ClientError> {
        self.call(Method::PATCH, &format!("/v1/services/{}", name.path()), Some(req))
            .await
    }

    pub async fn delete_service(&self, name: &ServiceName) -> Result<AdminServiceRecord, ClientError> {
        self.call::<(), _>(Method::DELETE, &format!("/v1/services/{}", name.path()), None)
            .await
    }

    pub async fn get_service(&self, name: &ServiceName) -> Result<AdminServiceRecord, ClientError> {
        self.get_json(&format!("/v1/services/{}", name.path())).await
    }

    pub async fn list_services(&self) -> Result<Vec<AdminServiceRecord>, ClientError> {
        self.get_json("/v1/services").await
    }

    pub async fn search(&self, query: &DiscoveryQuery) -> Result<Vec<DiscoveryResult>, ClientError> {
        self.call(Method::POST, "/v1/search", Some(query)).await
    }

    pub async fn resolve(&self, name: &str) -> Result<ResolutionResponse, ClientError> {
        let req = ResolveRequest { name: name.into() };
        self.call(Method::POST, "/v1/resolve", Some(&req)).await
    }

    pub async fn balance(&self) -> Result<BalanceResponse, ClientError> {
        self.get_json("/v1/billing/balance").await
    }

    pub async fn deposit(&self, agent_id: &str, amount: u64) -> Result<BalanceResponse, ClientError> {
        let req = DepositRequest {
            agent_id: Some(agent_id.into()),
            amount,
        };
        self.call(Method::POST, "/v1/billing/deposit", Some(&req)).await
    }

    pub async fn statement(
        &self,
        account: Option<&str>,
        from: Option<i64>,
        to: Option<i64>,
    ) -> Result<StatementResponse, ClientError> {
        let mut params = Vec::new();
        if let Some(a) = account {
            params.push(format!("account={}", encode(a)));
        }
        if let Some(f) = from {
            params.push(format!("from={f}"));
        }
        if let Some(t) = to {
            params.push(format!("to={t}"));
        }
        let qs = if params.is_empty() {
            String::new()
        } else {
            format!("?{}", params.join("&"))
        };
        self.get_json(&format!("/v1/billing/statement{qs}")).await
    }

    pub async fn settle(&self, org_id: &str) -> Result<SettlementReport, ClientError> {
        let req = SettleRequest { org_id: org_id.into() };
        self.call(Method::POST, "/v1/billing/settle", Some(&req)).await
    }

    pub async fn export_ledger(&self) -> Result<String, ClientError> {
        let raw = self.raw(Method::GET, &format!("{}/v1/billing/export", self.base), None).await?;
        if !raw.status.is_success() {
            return Err(decode::<serde_json::Value>(&raw).unwrap_err());
        }
        Ok(String::from_utf8_lossy(&raw.body).into_owned())
    }

    pub async fn meter_events(&self) -> Result<Vec<MeterEvent>, ClientError> {
        self.get_json("/v1/meter").await
    }

    /// Any request against an absolute URL, e.g. a `proxy_endpoint`, with the
    /// bearer token attached. The response is returned verbatim.
    pub async fn raw(&self, method: Method, url: &str, body: Option<Bytes>) -> Result<RawResponse, ClientError> {
        let mut rb = self.request(method, url);
        if let Some(b) = body {
            rb = rb.header(http::header::CONTENT_TYPE, "application/json").body(b);
        }
        self.send_raw(rb).await
    }
}

/// Decodes a success body, or the API error carried by a failure.
pub fn decode<T: DeserializeOwned>(raw: &RawResponse) -> Result<T, ClientError> {
    if raw.status.is_success() {
        serde_json::from_slice(&raw.body).map_err(|e| ClientError::Decode {
            status: raw.status.as_u16(),
            message: e.to_string(),
        })
    } else {
        match serde_json::from_slice::<ApiError>(&raw.body) {
            Ok(e) => Err(ClientError::Api(e)),
            Err(_) => Err(ClientError::Decode {
                status: raw.status.as_u16(),
                message: String::from_utf8_lossy(&raw.body).chars().take(200).collect(),
            }),
        }
    }
}

fn encode(s: &str) -> String {
    url::form_urlencoded::byte_serialize(s.as_bytes()).collect()
}
