//! The service proxy pool: per-service routes, credential substitution and metering.
//!
//! A proxied request goes through, in order: route lookup, token validation,
//! body cap, billing admission, header rewrite, forward. Nothing reaches the
//! vendor before the agent has been authenticated and charged. Each admitted
//! request yields exactly one [`MeterEvent`]; a transport failure after
//! admission refunds the charge.

use std::collections::HashMap;
use std::future::Future;
use std::path::Path;
use std::sync::Arc;

use bytes::Bytes;
use http::header::{self, HeaderMap, HeaderName, HeaderValue};
use http::{Request, Response, Uri};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{Auth, AuthError};
use crate::billing::{Billing, BillingError};
use crate::clock::Timestamp;
use crate::naming::{ServiceName, MAX_CATEGORY_DEPTH};
use crate::registry::{PriceModel, ServiceRecord, ServiceStatus};
use crate::store::{Journal, StoreError};

pub const PROXY_PREFIX: &str = "/proxy/";
pub const MAX_BODY_BYTES: usize = 10 * 1024 * 1024;
pub const UPSTREAM_TIMEOUT_SECS: u64 = 30;
pub const REQUEST_ID_HEADER: &str = "x-agentdns-request-id";

/// Hop-by-hop headers, never forwarded in either direction.
const HOP_BY_HOP: &[&str] = &[
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "proxy-connection",
    "te",
    "trailer",
    "trailers",
    "transfer-encoding",
    "upgrade",
];

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("no route for `{0}`")]
    NoRoute(String),
    #[error("missing bearer token")]
    MissingToken,
    #[error(transparent)]
    Unauthorized(AuthError),
    #[error("request body exceeds {MAX_BODY_BYTES} bytes")]
    BodyTooLarge,
    #[error(transparent)]
    Billing(#[from] BillingError),
    #[error("vendor credential unavailable for `{0}`")]
    CredentialUnavailable(String),
    #[error("upstream unreachable: {0}")]
    Upstream(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct UpstreamError(pub String);

/// Sends a fully rewritten request to a vendor.
///
/// `Err` means no HTTP response was obtained (refused, reset, timed out).
/// Any HTTP status, including 5xx, counts as forwarded.
pub trait Forwarder: Send + Sync {
    fn forward(
        &self,
        request: Request<Bytes>,
    ) -> impl Future<Output = Result<Response<Bytes>, UpstreamError>> + Send;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyRoute {
    pub name: ServiceName,
    pub path_prefix: String,
    pub vendor_endpoint: String,
    pub credential_ref: Option<String>,
    pub price: PriceModel,
    pub enabled: bool,
    pub version: u64,
}

impl ProxyRoute {
    pub fn from_record(record: &ServiceRecord) -> Self {
        Self {
            name: record.name.clone(),
            path_prefix: format!("{PROXY_PREFIX}{}", record.name.path()),
            vendor_endpoint: record.vendor_endpoint.clone(),
            credential_ref: record.vendor_credential_ref.clone(),
            price: record.pricing,
            enabled: record.status != ServiceStatus::Deleted,
            version: record.version,
        }
    }
}

/// Copy-on-write route table keyed by `org/category.../name`.
#[derive(Default)]
pub struct RouteTable {
    routes: RwLock<Arc<HashMap<String, ProxyRoute>>>,
}

impl RouteTable {
    /// Mirrors the record into the table. Idempotent; older versions are ignored.
    pub fn sync_routes(&self, record: &ServiceRecord) {
        let route = ProxyRoute::from_record(record);
        let key = record.name.path().to_string();
        let mut guard = self.routes.write();
        if guard.get(&key).is_some_and(|r| r.version > route.version) {
            return;
        }
        let mut next = HashMap::clone(&guard);
        next.insert(key, route);
        *guard = Arc::new(next);
    }

    pub fn rebuild<'a>(&self, records: impl IntoIterator<Item = &'a Arc<ServiceRecord>>) {
        let next = records
            .into_iter()
            .map(|r| (r.name.path().to_string(), ProxyRoute::from_record(r)))
            .collect();
        *self.routes.write() = Arc::new(next);
    }

    pub fn get(&self, name: &ServiceName) -> Option<ProxyRoute> {
        self.routes.read().get(name.path()).cloned()
    }

    pub fn enabled_count(&self) -> usize {
        self.routes.read().values().filter(|r| r.enabled).count()
    }

    /// Finds the enabled route for a `/proxy/...` path, preferring the longest
    /// identifier. Returns the route and the vendor path suffix (without a
    /// leading slash).
    pub fn lookup(&self, path: &str) -> Option<(ProxyRoute, String)> {
        let rest = path.strip_prefix(PROXY_PREFIX)?;
        let segments: Vec<&str> = rest.split('/').collect();
        let routes = Arc::clone(&self.routes.read());
        let longest = segments.len().min(MAX_CATEGORY_DEPTH + 2);
        (3..=longest).rev().find_map(|n| {
            let key = segments[..n].join("/").to_ascii_lowercase();
            routes
                .get(&key)
                .filter(|r| r.enabled)
                .map(|r| (r.clone(), segments[n..].join("/")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeterOutcome {
    Forwarded,
    UpstreamError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterEvent {
    pub event_id: String,
    pub agent_id: String,
    pub name: ServiceName,
    pub price: u64,
    pub timestamp: Timestamp,
    pub outcome: MeterOutcome,
}

pub struct MeterLog {
    events: Mutex<Vec<MeterEvent>>,
    journal: Journal<MeterEvent>,
}

impl MeterLog {
    pub fn in_memory() -> Self {
        Self {
            events: Mutex::default(),
            journal: Journal::in_memory(),
        }
    }

    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let (journal, events) = Journal::open(path)?;
        Ok(Self {
            events: Mutex::new(events),
            journal,
        })
    }

    pub fn record(&self, event: MeterEvent) -> Result<(), StoreError> {
        let mut events = self.events.lock();
        self.journal.append(&event)?;
        events.push(event);
        Ok(())
    }

    pub fn events(&self) -> Vec<MeterEvent> {
        self.events.lock().clone()
    }

    pub fn count(&self, outcome: MeterOutcome) -> usize {
        self.events.lock().iter().filter(|e| e.outcome == outcome).count()
    }

    pub fn sync(&self) -> Result<(), StoreError> {
        self.journal.sync()
    }
}

pub fn bearer_token(headers: &HeaderMap) -> Option<&str> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    scheme
        .eq_ignore_ascii_case("bearer")
        .then(|| token.trim())
        .filter(|t| !t.is_empty())
}

/// Removes hop-by-hop headers, including any listed in `Connection`.
pub fn strip_hop_by_hop(headers: &mut HeaderMap) {
    let listed: Vec<String> = headers
        .get_all(header::CONNECTION)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .map(|s| s.trim().to_ascii_lowercase())
        .filter(|s| !s.is_empty())
        .collect();
    for h in HOP_BY_HOP.iter().map(|s| s.to_string()).chain(listed) {
        headers.remove(h.as_str());
    }
}

fn vendor_uri(endpoint: &str, suffix: &str, query: Option<&str>) -> Result<Uri, ProxyError> {
    let mut url = endpoint.trim_end_matches('/').to_string();
    url.push('/');
    url.push_str(suffix);
    if let Some(q) = query {
        url.push('?');
        url.push_str(q);
    }
    url.parse()
        .map_err(|e| ProxyError::Upstream(format!("bad vendor url: {e}")))
}

pub struct ServiceProxy {
    routes: RouteTable,
    meter: MeterLog,
    auth: Arc<Auth>,
    billing: Arc<Billing>,
}

impl ServiceProxy {
    pub fn new(auth: Arc<Auth>, billing: Arc<Billing>, meter: MeterLog) -> Self {
        Self {
            routes: RouteTable::default(),
            meter,
            auth,
            billing,
        }
    }

    pub fn routes(&self) -> &RouteTable {
        &self.routes
    }

    pub fn meter(&self) -> &MeterLog {
        &self.meter
    }

    pub fn sync_routes(&self, record: &ServiceRecord) {
        self.routes.sync_routes(record);
    }

    pub async fn route_request<F: Forwarder>(
        &self,
        request: Request<Bytes>,
        now: Timestamp,
        forwarder: &F,
    ) -> Result<Response<Bytes>, ProxyError> {
        let (parts, body) = request.into_parts();
        let path = parts.uri.path();
        let token = bearer_token(&parts.headers).ok_or(ProxyError::MissingToken)?;
        let agent_id = self
            .auth
            .validate_token(token, now)
            .map_err(ProxyError::Unauthorized)?;
        let (route, suffix) = self
            .routes
            .lookup(path)
            .ok_or_else(|| ProxyError::NoRoute(path.to_string()))?;
        if body.len() > MAX_BODY_BYTES {
            return Err(ProxyError::BodyTooLarge);
        }
        let credential = match &route.credential_ref {
            Some(r) => Some(
                self.auth
                    .fetch_vendor_credential_for(&route.name, r)
                    .map_err(|_| ProxyError::CredentialUnavailable(route.name.to_string()))?,
            ),
            None => None,
        };
        let uri = vendor_uri(&route.vendor_endpoint, &suffix, parts.uri.query())?;

        let event_id = uuid::Uuid::new_v4().to_string();
        let price = route.price.amount;
        let admission =
            self.billing
                .debit_for_call(&agent_id, &route.name, price, &event_id, now)?;
        let charged = admission.vendor_amount + admission.fee_amount > 0;

        let mut headers = parts.headers;
        strip_hop_by_hop(&mut headers);
        headers.remove(header::AUTHORIZATION);
        headers.remove(header::HOST);
        headers.remove(header::CONTENT_LENGTH);
        headers.remove(REQUEST_ID_HEADER);
        if let Some(c) = &credential {
            let name = HeaderName::from_bytes(c.header_name.as_bytes())
                .map_err(|_| ProxyError::CredentialUnavailable(route.name.to_string()))?;
            let value = HeaderValue::from_str(&c.secret)
                .map_err(|_| ProxyError::CredentialUnavailable(route.name.to_string()))?;
            headers.remove(&name);
            headers.insert(name, value);
        }
        headers.insert(
            REQUEST_ID_HEADER,
            HeaderValue::from_str(&event_id).expect("uuid is a valid header value"),
        );
        let mut outbound = Request::builder()
            .method(parts.method)
            .uri(uri)
            .body(body)
            .map_err(|e| ProxyError::Upstream(e.to_string()))?;
        *outbound.headers_mut() = headers;

        let result = forwarder.forward(outbound).await;
        let outcome = if result.is_ok() {
            MeterOutcome::Forwarded
        } else {
            MeterOutcome::UpstreamError
        };
        self.meter.record(MeterEvent {
            event_id: event_id.clone(),
            agent_id,
            name: route.name.clone(),
            price,
            timestamp: now,
            outcome,
        })?;
        match result {
            Ok(mut response) => {
                strip_hop_by_hop(response.headers_mut());
                if let Some(c) = &credential {
                    response.headers_mut().remove(c.header_name.as_str());
                }
                Ok(response)
            }
            Err(e) => {
                if charged {
                    self.billing.refund(&event_id, now)?;
                }
                Err(ProxyError::Upstream(e.0))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::billing::AccountId;
    use std::sync::atomic::{AtomicBool, Ordering};

    #[derive(Default)]
    struct FakeVendor {
        seen: Mutex<Vec<Request<Bytes>>>,
        down: AtomicBool,
    }

    impl Forwarder for FakeVendor {
        async fn forward(&self, request: Request<Bytes>) -> Result<Response<Bytes>, UpstreamError> {
            if self.down.load(Ordering::SeqCst) {
                return Err(UpstreamError("connection refused".into()));
            }
            self.seen.lock().push(request);
            Ok(Response::builder()
                .status(200)
                .header("connection", "close")
                .header("content-type", "application/json")
                .body(Bytes::from_static(b"{\"ok\":true}"))
                .unwrap())
        }
    }

    struct Fixture {
        proxy: ServiceProxy,
        billing: Arc<Billing>,
        token: String,
    }

    fn record(price: u64, cred: Option<String>) -> ServiceRecord {
        ServiceRecord {
            name: ServiceName::parse("agentdns://example/search/searchagent").unwrap(),
            version: 1,
            vendor_endpoint: "http://127.0.0.1:9001".into(),
            protocols: ["HTTP".to_string()].into(),
            capabilities: "search".into(),
            pricing: PriceModel::per_call(price),
            vendor_credential_ref: cred,
            ttl_seconds: None,
            status: ServiceStatus::Active,
            updated_at: 0,
        }
    }

    fn fixture(balance: u64) -> Fixture {
        let auth = Arc::new(Auth::in_memory(&[1u8; 32]));
        let billing = Arc::new(Billing::in_memory(0));
        let (_, key) = auth.create_agent("alice", 0).unwrap();
        billing.open_account(AccountId::Agent("alice".into()));
        if balance > 0 {
            billing.deposit("alice", balance, 0).unwrap();
        }
        let token = auth.issue_token("alice", &key, 3600, 0).unwrap().token;
        let name = ServiceName::parse("agentdns://example/search/searchagent").unwrap();
        let cref = auth
            .store_vendor_credential("example", &name, "X-API-Key", "KEY-B")
            .unwrap();
        let proxy = ServiceProxy::new(Arc::clone(&auth), Arc::clone(&billing), MeterLog::in_memory());
        proxy.sync_routes(&record(3, Some(cref)));
        Fixture { proxy, billing, token }
    }

    fn request(token: &str, path: &str) -> Request<Bytes> {
        Request::builder()
            .method("POST")
            .uri(path)
            .header("authorization", format!("Bearer {token}"))
            .header("content-type", "application/json")
            .header("connection", "keep-alive")
            .body(Bytes::from_static(b"{\"q\":\"agent protocols\"}"))
            .unwrap()
    }

    #[tokio::test]
    async fn substitutes_credentials() {
        let f = fixture(100);
        let vendor = FakeVendor::default();
        let resp = f
            .proxy
            .route_request(request(&f.token, "/proxy/example/search/searchagent/query?x=1"), 10, &vendor)
            .await
            .unwrap();
        assert_eq!(resp.status(), 200);
        assert!(resp.headers().get("connection").is_none());
        let seen = vendor.seen.lock();
        let req = &seen[0];
        assert_eq!(req.method(), "POST");
        assert_eq!(req.uri().to_string(), "http://127.0.0.1:9001/query?x=1");
        assert_eq!(req.headers()["x-api-key"], "KEY-B");
        assert_eq!(req.headers()["content-type"], "application/json");
        assert!(req.headers().get("authorization").is_none());
        assert!(req.headers().get("connection").is_none());
        assert!(req.headers().get(REQUEST_ID_HEADER).is_some());
        assert_eq!(req.body().as_ref(), b"{\"q\":\"agent protocols\"}");
        assert!(!format!("{:?}", req.headers()).contains(&f.token));
        assert_eq!(f.billing.balance(&AccountId::Agent("alice".into())).unwrap(), 97);
        assert_eq!(f.proxy.meter().count(MeterOutcome::Forwarded), 1);
    }

    #[tokio::test]
    async fn rejects_before_charging() {
        let f = fixture(100);
        let vendor = FakeVendor::default();
        let r = f
            .proxy
            .route_request(request("bogus", "/proxy/example/search/searchagent/q"), 10, &vendor)
            .await;
        assert!(matches!(r, Err(ProxyError::Unauthorized(AuthError::Unknown))));
        let r = f
            .proxy
            .route_request(request(&f.token, "/proxy/example/search/searchagent/q"), 3600, &vendor)
            .await;
        assert!(matches!(r, Err(ProxyError::Unauthorized(AuthError::Expired))));
        let r = f
            .proxy
            .route_request(request(&f.token, "/proxy/example/search/nothing/q"), 10, &vendor)
            .await;
        assert!(matches!(r, Err(ProxyError::NoRoute(_))));
        assert!(vendor.seen.lock().is_empty());
        assert!(f.proxy.meter().events().is_empty());
        assert_eq!(f.billing.entries().len(), 1);
    }

    #[tokio::test]
    async fn insufficient_funds() {
        let f = fixture(2);
        let vendor = FakeVendor::default();
        let r = f
            .proxy
            .route_request(request(&f.token, "/proxy/example/search/searchagent/q"), 10, &vendor)
            .await;
        assert!(matches!(r, Err(ProxyError::Billing(BillingError::InsufficientFunds { .. }))));
        assert!(vendor.seen.lock().is_empty());
        assert!(f.proxy.meter().events().is_empty());
    }

    #[tokio::test]
    async fn upstream_failure_refunds() {
        let f = fixture(100);
        let vendor = FakeVendor::default();
        vendor.down.store(true, Ordering::SeqCst);
        let r = f
            .proxy
            .route_request(request(&f.token, "/proxy/example/search/searchagent/q"), 10, &vendor)
            .await;
        assert!(matches!(r, Err(ProxyError::Upstream(_))));
        assert_eq!(f.billing.balance(&AccountId::Agent("alice".into())).unwrap(), 100);
        assert_eq!(f.proxy.meter().count(MeterOutcome::UpstreamError), 1);
    }

    #[tokio::test]
    async fn route_lifecycle() {
        let f = fixture(100);
        let vendor = FakeVendor::default();
        let mut rec = record(3, f.proxy.routes().get(&ServiceName::parse("agentdns://example/search/searchagent").unwrap()).unwrap().credential_ref);
        rec.version = 2;
        rec.vendor_endpoint = "http://127.0.0.1:9002/base".into();
        f.proxy.sync_routes(&rec);
        f.proxy
            .route_request(request(&f.token, "/proxy/example/search/searchagent/q"), 10, &vendor)
            .await
            .unwrap();
        assert_eq!(vendor.seen.lock()[0].uri().to_string(), "http://127.0.0.1:9002/base/q");
        rec.version = 3;
        rec.status = ServiceStatus::Deleted;
        f.proxy.sync_routes(&rec);
        let r = f
            .proxy
            .route_request(request(&f.token, "/proxy/example/search/searchagent/q"), 10, &vendor)
            .await;
        assert!(matches!(r, Err(ProxyError::NoRoute(_))));
        assert_eq!(f.proxy.routes().enabled_count(), 0);
    }

    #[test]
    fn lookup_prefers_longest_identifier() {
        let table = RouteTable::default();
        let mut a = record(1, None);
        a.name = ServiceName::parse("agentdns://o/a/b").unwrap();
        let mut b = record(1, None);
        b.name = ServiceName::parse("agentdns://o/a/b/c").unwrap();
        table.sync_routes(&a);
        table.sync_routes(&b);
        let (r, suffix) = table.lookup("/proxy/o/a/b/c/x/y").unwrap();
        assert_eq!(r.name, b.name);
        assert_eq!(suffix, "x/y");
        let (r, suffix) = table.lookup("/proxy/o/a/b").unwrap();
        assert_eq!(r.name, a.name);
        assert_eq!(suffix, "");
        assert!(table.lookup("/proxy/o").is_none());
        assert!(table.lookup("/other/o/a/b").is_none());
    }

    #[test]
    fn bearer_parsing() {
        let mut h = HeaderMap::new();
        assert_eq!(bearer_token(&h), None);
        h.insert("authorization", "bearer abc".parse().unwrap());
        assert_eq!(bearer_token(&h), Some("abc"));
        h.insert("authorization", "Basic abc".parse().unwrap());
        assert_eq!(bearer_token(&h), None);
    }
}
