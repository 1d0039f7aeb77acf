//! The axum application: routes, access checks and lifecycle.

use std::net::SocketAddr;
use std::sync::Arc;

use agentdns_core::billing::AccountId;
use agentdns_core::clock::{Clock, SystemClock};
use agentdns_core::discovery::{DiscoveryQuery, HashingEmbedder};
use agentdns_core::naming::CategoryPath;
use agentdns_core::proxy::{bearer_token, MAX_BODY_BYTES};
use agentdns_core::registry::{ServicePatch, ServiceSpec};
use agentdns_core::{AgentDns, DiscoveryResult, ServiceName};
use axum::body::Body;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::response::{IntoResponse, Response};
use axum::routing::{any, get, post};
use axum::{Json, Router};
use http::HeaderMap;
use subtle::ConstantTimeEq;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::api::*;
use crate::config::{ConfigError, ServerConfig};
use crate::forward::HttpForwarder;

pub const ADMIN_KEY_HEADER: &str = "x-admin-key";
/// Cap for `/v1` request bodies. Proxied bodies have their own, larger cap.
pub const API_BODY_LIMIT: usize = 1024 * 1024;

type ApiResult<T> = Result<Json<T>, ApiError>;

pub struct AppState {
    pub root: Arc<AgentDns>,
    admin_key: String,
    forwarder: HttpForwarder,
}

impl AppState {
    pub fn new(root: Arc<AgentDns>, admin_key: impl Into<String>) -> Self {
        Self {
            root,
            admin_key: admin_key.into(),
            forwarder: HttpForwarder::new(),
        }
    }

    fn is_admin(&self, headers: &HeaderMap) -> bool {
        headers
            .get(ADMIN_KEY_HEADER)
            .map(|v| bool::from(v.as_bytes().ct_eq(self.admin_key.as_bytes())))
            .unwrap_or(false)
    }

    fn require_admin(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        if self.is_admin(headers) {
            Ok(())
        } else if headers.contains_key(ADMIN_KEY_HEADER) {
            Err(ApiError::forbidden("invalid admin key"))
        } else {
            Err(ApiError::unauthorized("admin key required"))
        }
    }

    fn require_agent(&self, headers: &HeaderMap) -> Result<String, ApiError> {
        let token = bearer_token(headers).ok_or_else(|| ApiError::unauthorized("missing bearer token"))?;
        Ok(self.root.validate_token(token)?)
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request(e.body_text()))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn service_name(path: &str) -> Result<ServiceName, ApiError> {
    Ok(ServiceName::parse(&format!("agentdns://{}", path.trim_matches('/')))?)
}

pub fn router(state: Arc<AppState>) -> Router {
    let v1 = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/auth/token", post(issue_token))
        .route("/v1/auth/revoke", post(revoke_token))
        .route("/v1/agents", post(create_agent))
        .route("/v1/agents/{agent_id}/status", post(set_agent_status))
        .route("/v1/orgs", get(list_orgs).post(register_org))
        .route("/v1/orgs/{org_id}/verify", post(verify_org))
        .route("/v1/orgs/{org_id}/credentials", post(store_credential))
        .route("/v1/services", get(list_services).post(register_service))
        .route(
            "/v1/services/{*name}",
            get(get_service).patch(update_service).delete(delete_service),
        )
        .route("/v1/search", post(search))
        .route("/v1/resolve", post(resolve))
        .route("/v1/billing/balance", get(balance))
        .route("/v1/billing/deposit", post(deposit))
        .route("/v1/billing/statement", get(statement))
        .route("/v1/billing/settle", post(settle))
        .route("/v1/billing/export", get(export_ledger))
        .route("/v1/meter", get(meter_events))
        .layer(DefaultBodyLimit::max(API_BODY_LIMIT));
    Router::new()
        .merge(v1)
        .route(
            "/proxy/{*rest}",
            any(proxy).layer(DefaultBodyLimit::max(MAX_BODY_BYTES)),
        )
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new("METHOD_NOT_ALLOWED", "method not allowed on this endpoint")
        })
        .with_state(state)
}

// ---- handlers ----

async fn health(State(s): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        services: s.root.health().services,
    })
}

async fn issue_token(
    State(s): State<Arc<AppState>>,
    payload: Result<Json<TokenRequest>, JsonRejection>,
) -> ApiResult<TokenResponse> {
    let req = body(payload)?;
    let t = s.root.issue_token(&req.agent_id, &req.access_key, req.ttl_seconds)?;
    Ok(Json(TokenResponse {
        token: t.token,
        agent_id: t.agent_id,
        issued_at: t.issued_at,
        expires_at: t.expires_at,
    }))
}

async fn revoke_token(State(s): State<Arc<AppState>>, headers: HeaderMap) -> Result<Json<serde_json::Value>, ApiError> {
    s.require_agent(&headers)?;
    let token = bearer_token(&headers).expect("checked above");
    s.root.revoke_token(token)?;
    Ok(Json(serde_json::json!({ "revoked": true })))
}

async fn create_agent(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    payload: Result<Json<CreateAgentRequest>, JsonRejection>,
) -> ApiResult<CreateAgentResponse> {
    s.require_admin(&headers)?;
    let req = body(payload)?;
    let (account, key) = s.root.create_agent(&req.agent_id)?;
    Ok(Json(CreateAgentResponse {
        agent_id: account.agent_id,
        access_key: key,
        created_at: account.created_at,
    }))
}

async fn set_agent_status(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(agent_id): Path<String>,
    payload: Result<Json<AgentStatusRequest>, JsonRejection>,
) -> ApiResult<agentdns_core::auth::AgentAccount> {
    s.require_admin(&headers)?;
    let req = body(payload)?;
    s.root.set_agent_status(&agent_id, req.status)?;
    let account = s
        .root
        .auth()
        .agent(&agent_id)
        .ok_or_else(|| ApiError::new("UNKNOWN_AGENT", format!("unknown agent `{agent_id}`")))?;
    Ok(Json(account))
}

async fn list_orgs(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
) -> ApiResult<Vec<agentdns_core::registry::Organization>> {
    s.require_admin(&headers)?;
    Ok(Json(s.root.registry().orgs()))
}

async fn register_org(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    payload: Result<Json<RegisterOrgRequest>, JsonRejection>,
) -> ApiResult<agentdns_core::registry::Organization> {
    s.require_admin(&headers)?;
    let req = body(payload)?;
    Ok(Json(s.root.register_org(&req.org_id, &req.display_name)?))
}

async fn verify_org(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(org_id): Path<String>,
) -> ApiResult<agentdns_core::registry::Organization> {
    s.require_admin(&headers)?;
    Ok(Json(s.root.verify_org(&org_id)?))
}

async fn store_credential(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(org_id): Path<String>,
    payload: Result<Json<StoreCredentialRequest>, JsonRejection>,
) -> ApiResult<StoreCredentialResponse> {
    s.require_admin(&headers)?;
    let req = body(payload)?;
    let name = ServiceName::parse(&req.name)?;
    let credential_ref = s.root.store_vendor_credential(
        &org_id,
        &name,
        &agentdns_core::CredentialInput {
            header_name: req.header_name,
            secret: req.secret,
        },
    )?;
    Ok(Json(StoreCredentialResponse { credential_ref }))
}

async fn list_services(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
) -> ApiResult<Vec<AdminServiceRecord>> {
    s.require_admin(&headers)?;
    Ok(Json(
        s.root
            .registry()
            .all_records()
            .into_iter()
            .map(|r| (*r).clone())
            .collect(),
    ))
}

async fn register_service(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    payload: Result<Json<RegisterServiceRequest>, JsonRejection>,
) -> ApiResult<AdminServiceRecord> {
    s.require_admin(&headers)?;
    let req = body(payload)?;
    let category: CategoryPath = req.category.parse()?;
    let spec = ServiceSpec {
        vendor_endpoint: req.vendor_endpoint,
        protocols: req.protocols,
        capabilities: req.capabilities,
        pricing: req.pricing,
        vendor_credential_ref: req.vendor_credential_ref,
        ttl_seconds: req.ttl_seconds,
    };
    let record = s
        .root
        .register_service(&req.org_id, &category, &req.name, spec, req.credential.as_ref())?;
    Ok(Json((*record).clone()))
}

async fn get_service(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(name): Path<String>,
) -> ApiResult<AdminServiceRecord> {
    s.require_admin(&headers)?;
    Ok(Json((*s.root.get_service(&service_name(&name)?)?).clone()))
}

async fn update_service(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(name): Path<String>,
    payload: Result<Json<UpdateServiceRequest>, JsonRejection>,
) -> ApiResult<AdminServiceRecord> {
    s.require_admin(&headers)?;
    let name = service_name(&name)?;
    let req = body(payload)?;
    let patch = ServicePatch {
        vendor_endpoint: req.vendor_endpoint,
        protocols: req.protocols,
        capabilities: req.capabilities,
        pricing: req.pricing,
        vendor_credential_ref: req.vendor_credential_ref,
        ttl_seconds: req.ttl_seconds,
        status: req.status,
    };
    let record = s
        .root
        .update_service(&name, patch, req.expected_version, req.credential.as_ref())?;
    Ok(Json((*record).clone()))
}

async fn delete_service(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(name): Path<String>,
) -> ApiResult<AdminServiceRecord> {
    s.require_admin(&headers)?;
    Ok(Json((*s.root.delete_service(&service_name(&name)?)?).clone()))
}

async fn search(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    payload: Result<Json<DiscoveryQuery>, JsonRejection>,
) -> ApiResult<Vec<DiscoveryResult>> {
    s.require_agent(&headers)?;
    let q = body(payload)?;
    let root = Arc::clone(&s.root);
    // Scoring is CPU-bound; keep it off the reactor threads.
    let results = tokio::task::spawn_blocking(move || root.search(&q))
        .await
        .map_err(|_| ApiError::new("INTERNAL", "search task failed"))??;
    Ok(Json(results))
}

async fn resolve(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    payload: Result<Json<ResolveRequest>, JsonRejection>,
) -> ApiResult<agentdns_core::resolution::ResolutionResponse> {
    s.require_agent(&headers)?;
    let req = body(payload)?;
    Ok(Json(s.root.resolve(&req.name)?))
}

async fn balance(State(s): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<BalanceResponse> {
    let agent = s.require_agent(&headers)?;
    let account = AccountId::Agent(agent);
    Ok(Json(BalanceResponse {
        balance: s.root.balance(&account)?,
        account,
    }))
}

async fn deposit(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    payload: Result<Json<DepositRequest>, JsonRejection>,
) -> ApiResult<BalanceResponse> {
    s.require_admin(&headers)?;
    let req = body(payload)?;
    let agent = req
        .agent_id
        .ok_or_else(|| ApiError::bad_request("`agent_id` is required"))?;
    let balance = s.root.deposit(&agent, req.amount)?;
    Ok(Json(BalanceResponse {
        account: AccountId::Agent(agent),
        balance,
    }))
}

async fn statement(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    q: Result<Query<StatementQuery>, QueryRejection>,
) -> ApiResult<StatementResponse> {
    let q = query(q)?;
    let requested = q
        .account
        .as_deref()
        .map(|a| a.parse::<AccountId>().map_err(ApiError::bad_request))
        .transpose()?;
    let account = if s.is_admin(&headers) {
        requested.ok_or_else(|| ApiError::bad_request("`account` is required for admin statements"))?
    } else {
        let own = AccountId::Agent(s.require_agent(&headers)?);
        match requested {
            Some(other) if other != own => {
                return Err(ApiError::forbidden("agents may only read their own statement"))
            }
            _ => own,
        }
    };
    let entries = s.root.statement(&account, q.from, q.to)?;
    Ok(Json(StatementResponse {
        balance: s.root.balance(&account)?,
        account,
        entries,
    }))
}

async fn settle(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    payload: Result<Json<SettleRequest>, JsonRejection>,
) -> ApiResult<agentdns_core::billing::SettlementReport> {
    s.require_admin(&headers)?;
    let req = body(payload)?;
    Ok(Json(s.root.settle(&req.org_id)?))
}

/// The full ledger as JSON Lines, one entry per line.
async fn export_ledger(State(s): State<Arc<AppState>>, headers: HeaderMap) -> Result<Response, ApiError> {
    s.require_admin(&headers)?;
    let mut out = Vec::new();
    s.root
        .billing()
        .export_jsonl(&mut out)
        .map_err(|_| ApiError::new("INTERNAL", "export failed"))?;
    Ok(([(http::header::CONTENT_TYPE, "application/x-ndjson")], out).into_response())
}

async fn meter_events(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
) -> ApiResult<Vec<agentdns_core::proxy::MeterEvent>> {
    s.require_admin(&headers)?;
    Ok(Json(s.root.proxy().meter().events()))
}

async fn proxy(State(s): State<Arc<AppState>>, request: Request) -> Result<Response, ApiError> {
    let (parts, body) = request.into_parts();
    // Reject unauthenticated or unroutable calls before reading the body.
    s.require_agent(&parts.headers)?;
    if s.root.proxy().routes().lookup(parts.uri.path()).is_none() {
        return Err(ApiError::new(
            "NO_ROUTE",
            format!("no route for `{}`", parts.uri.path()),
        ));
    }
    let bytes = axum::body::to_bytes(body, MAX_BODY_BYTES)
        .await
        .map_err(|_| ApiError::new("PAYLOAD_TOO_LARGE", format!("request body exceeds {MAX_BODY_BYTES} bytes")))?;
    let request = http::Request::from_parts(parts, bytes);
    // Detached so a client hang-up cannot cancel a call between debit and
    // metering.
    let task = tokio::spawn(async move { s.root.route_request(request, &s.forwarder).await });
    let response = task
        .await
        .map_err(|_| ApiError::new("INTERNAL", "proxy task failed"))??;
    let mut response = response.map(Body::from);
    response.headers_mut().remove(ERROR_CODE_HEADER);
    Ok(response)
}

// ---- lifecycle ----

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{config}: cannot bind `listen` address {addr}: {source}")]
    Bind {
        config: String,
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("{config}: cannot open `data_dir`: {source}")]
    Open {
        config: String,
        source: agentdns_core::Error,
    },
}

/// A server running on the current tokio runtime.
pub struct RunningServer {
    addr: SocketAddr,
    root: Arc<AgentDns>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn root(&self) -> &Arc<AgentDns> {
        &self.root
    }

    /// Stops accepting, drains in-flight requests, then syncs every journal.
    pub async fn shutdown(mut self) -> Result<(), agentdns_core::Error> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
        self.root.sync()
    }
}

/// Starts serving `config`; `config_path` only labels errors.
pub async fn start(config: &ServerConfig, config_path: &str) -> Result<RunningServer, ServeError> {
    start_with_clock(config, config_path, Arc::new(SystemClock)).await
}

pub async fn start_with_clock(
    config: &ServerConfig,
    config_path: &str,
    clock: Arc<dyn Clock>,
) -> Result<RunningServer, ServeError> {
    config.validate(config_path)?;
    let want = config.listen_addr();
    let listener = TcpListener::bind(want).await.map_err(|source| ServeError::Bind {
        config: config_path.to_string(),
        addr: want,
        source,
    })?;
    let addr = listener.local_addr().map_err(|source| ServeError::Bind {
        config: config_path.to_string(),
        addr: want,
        source,
    })?;
    let core = config.core_config(addr);
    let root = AgentDns::open_with(core, clock, Arc::new(HashingEmbedder::new(config.embedding_dim)))
        .map_err(|source| ServeError::Open {
            config: config_path.to_string(),
            source,
        })?;
    let root = Arc::new(root);
    let app = router(Arc::new(AppState::new(Arc::clone(&root), config.admin_key.clone())));
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%addr, "agentdns listening");
    Ok(RunningServer {
        addr,
        root,
        shutdown: Some(tx),
        task,
    })
}

/// Serves until ctrl-c, then shuts down gracefully.
pub async fn serve(config: &ServerConfig, config_path: &str) -> Result<(), ServeError> {
    let server = start(config, config_path).await?;
    let _ = tokio::signal::ctrl_c().await;
    tracing::info!("shutting down");
    server.shutdown().await.map_err(|source| ServeError::Open {
        config: config_path.to_string(),
        source,
    })
}
