//! Wire types and the error contract of the HTTP API.

use agentdns_core::auth::AuthError;
use agentdns_core::billing::{AccountId, BillingError, LedgerEntry};
use agentdns_core::discovery::DiscoveryError;
use agentdns_core::proxy::ProxyError;
use agentdns_core::registry::{PriceModel, RegistryError, ServiceRecord, ServiceStatus};
use agentdns_core::resolution::ResolutionError;
use agentdns_core::store::StoreError;
use agentdns_core::{CredentialInput, Error, NameError};
use axum::response::{IntoResponse, Response};
use axum::Json;
use http::StatusCode;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Error body of every failed request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: String,
    pub message: String,
    pub http_status: u16,
}

/// Every code the API can return, with its HTTP status.
pub const ERROR_CODES: &[(&str, u16)] = &[
    ("BAD_REQUEST", 400),
    ("INVALID_NAME", 400),
    ("INVALID_METADATA", 400),
    ("EMPTY_QUERY", 400),
    ("BAD_K", 400),
    ("INVALID_TTL", 400),
    ("INVALID_CREDENTIAL", 400),
    ("NON_POSITIVE_AMOUNT", 400),
    ("AMOUNT_OVERFLOW", 400),
    ("UNAUTHORIZED", 401),
    ("BAD_CREDENTIALS", 401),
    ("TOKEN_UNKNOWN", 401),
    ("TOKEN_EXPIRED", 401),
    ("INSUFFICIENT_FUNDS", 402),
    ("FORBIDDEN", 403),
    ("SUSPENDED", 403),
    ("UNVERIFIED_ORG", 403),
    ("NOT_FOUND", 404),
    ("UNKNOWN_ORG", 404),
    ("UNKNOWN_AGENT", 404),
    ("UNKNOWN_ACCOUNT", 404),
    ("UNKNOWN_CREDENTIAL_REF", 404),
    ("UNKNOWN_EVENT", 404),
    ("NO_ROUTE", 404),
    ("METHOD_NOT_ALLOWED", 405),
    ("ORG_EXISTS", 409),
    ("NAME_TAKEN", 409),
    ("AGENT_EXISTS", 409),
    ("VERSION_CONFLICT", 409),
    ("ALREADY_REFUNDED", 409),
    ("DUPLICATE_EVENT", 409),
    ("PAYLOAD_TOO_LARGE", 413),
    ("INTERNAL", 500),
    ("STORAGE_ERROR", 500),
    ("UPSTREAM_MISCONFIGURED", 502),
    ("UPSTREAM_UNAVAILABLE", 502),
];

impl ApiError {
    /// Panics on a code missing from [`ERROR_CODES`]; tests keep the table complete.
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        let status = ERROR_CODES
            .iter()
            .find(|(c, _)| *c == code)
            .unwrap_or_else(|| panic!("unregistered error code {code}"))
            .1;
        Self {
            code: code.to_string(),
            message: message.into(),
            http_status: status,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new("BAD_REQUEST", message)
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        Self::new("UNAUTHORIZED", message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new("FORBIDDEN", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new("NOT_FOUND", message)
    }

    pub fn status(&self) -> StatusCode {
        StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }
}

/// Set on every error the root server itself produces, so callers can tell
/// them apart from vendor responses relayed by the proxy.
pub const ERROR_CODE_HEADER: &str = "x-agentdns-error";

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = http::HeaderValue::from_str(&self.code).expect("codes are ascii");
        (self.status(), [(ERROR_CODE_HEADER, code)], Json(self)).into_response()
    }
}

// Storage failures carry paths and OS details; agents get a fixed message.
fn storage(e: &StoreError) -> ApiError {
    tracing::error!(error = %e, "storage failure");
    ApiError::new("STORAGE_ERROR", "internal storage error")
}

impl From<NameError> for ApiError {
    fn from(e: NameError) -> Self {
        ApiError::new("INVALID_NAME", e.to_string())
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let code = match &e {
            RegistryError::DuplicateOrg(_) => "ORG_EXISTS",
            RegistryError::IllegalLabel(_) => "INVALID_NAME",
            RegistryError::UnknownOrg(_) => "UNKNOWN_ORG",
            RegistryError::UnverifiedOrg(_) => "UNVERIFIED_ORG",
            RegistryError::DuplicateName(_) => "NAME_TAKEN",
            RegistryError::NotFound(_) => "NOT_FOUND",
            RegistryError::VersionConflict { .. } => "VERSION_CONFLICT",
            RegistryError::InvalidMetadata(_) => "INVALID_METADATA",
            RegistryError::Store(s) => return storage(s),
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<DiscoveryError> for ApiError {
    fn from(e: DiscoveryError) -> Self {
        let code = match &e {
            DiscoveryError::EmptyQuery => "EMPTY_QUERY",
            DiscoveryError::BadK(_) => "BAD_K",
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<ResolutionError> for ApiError {
    fn from(e: ResolutionError) -> Self {
        let code = match &e {
            ResolutionError::NotFound(_) => "NOT_FOUND",
            ResolutionError::Malformed(_) => "INVALID_NAME",
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        let code = match &e {
            AuthError::DuplicateAgent(_) => "AGENT_EXISTS",
            AuthError::UnknownAgent(_) => "UNKNOWN_AGENT",
            AuthError::IllegalLabel(_) => "INVALID_NAME",
            AuthError::BadCredentials => "BAD_CREDENTIALS",
            AuthError::Suspended => "SUSPENDED",
            AuthError::Unknown => "TOKEN_UNKNOWN",
            AuthError::Expired => "TOKEN_EXPIRED",
            AuthError::InvalidTtl => "INVALID_TTL",
            AuthError::Unauthorized(_) => "FORBIDDEN",
            AuthError::UnknownRef => "UNKNOWN_CREDENTIAL_REF",
            AuthError::InvalidHeader(_) => "INVALID_CREDENTIAL",
            AuthError::Crypto => {
                tracing::error!("credential vault failure");
                return ApiError::new("INTERNAL", "internal error");
            }
            AuthError::Store(s) => return storage(s),
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<BillingError> for ApiError {
    fn from(e: BillingError) -> Self {
        let code = match &e {
            BillingError::UnknownAccount(_) => "UNKNOWN_ACCOUNT",
            BillingError::NonPositiveAmount => "NON_POSITIVE_AMOUNT",
            BillingError::InsufficientFunds { .. } => "INSUFFICIENT_FUNDS",
            BillingError::UnknownEvent(_) => "UNKNOWN_EVENT",
            BillingError::AlreadyRefunded(_) => "ALREADY_REFUNDED",
            BillingError::DuplicateEvent(_) => "DUPLICATE_EVENT",
            BillingError::Overflow => "AMOUNT_OVERFLOW",
            BillingError::Store(s) => return storage(s),
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<ProxyError> for ApiError {
    fn from(e: ProxyError) -> Self {
        match e {
            ProxyError::NoRoute(path) => ApiError::new("NO_ROUTE", format!("no route for `{path}`")),
            ProxyError::MissingToken => ApiError::unauthorized("missing bearer token"),
            ProxyError::Unauthorized(a) => a.into(),
            ProxyError::BodyTooLarge => ApiError::new("PAYLOAD_TOO_LARGE", ProxyError::BodyTooLarge.to_string()),
            ProxyError::Billing(b) => b.into(),
            ProxyError::CredentialUnavailable(name) => ApiError::new(
                "UPSTREAM_MISCONFIGURED",
                format!("vendor credential unavailable for `{name}`"),
            ),
            // Transport errors may embed the vendor address.
            ProxyError::Upstream(detail) => {
                tracing::warn!(%detail, "upstream failure");
                ApiError::new("UPSTREAM_UNAVAILABLE", "vendor service unreachable; call refunded")
            }
            ProxyError::Store(s) => storage(&s),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        storage(&e)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Name(e) => e.into(),
            Error::Registry(e) => e.into(),
            Error::Discovery(e) => e.into(),
            Error::Resolution(e) => e.into(),
            Error::Auth(e) => e.into(),
            Error::Billing(e) => e.into(),
            Error::Proxy(e) => e.into(),
            Error::Store(e) => e.into(),
        }
    }
}

// ---- request and response bodies ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub services: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenRequest {
    pub agent_id: String,
    pub access_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttl_seconds: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenResponse {
    pub token: String,
    pub agent_id: String,
    pub issued_at: i64,
    pub expires_at: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateAgentRequest {
    pub agent_id: String,
}

/// The access key appears here and nowhere else.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateAgentResponse {
    pub agent_id: String,
    pub access_key: String,
    pub created_at: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentStatusRequest {
    pub status: agentdns_core::auth::AccountStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterOrgRequest {
    pub org_id: String,
    pub display_name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreCredentialRequest {
    /// Service the credential will be used for.
    pub name: String,
    pub header_name: String,
    pub secret: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreCredentialResponse {
    pub credential_ref: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterServiceRequest {
    pub org_id: String,
    /// Slash-separated category path, e.g. `search/web`.
    pub category: String,
    pub name: String,
    pub vendor_endpoint: String,
    pub protocols: BTreeSet<String>,
    pub capabilities: String,
    pub pricing: PriceModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttl_seconds: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vendor_credential_ref: Option<String>,
    /// Inline credential, vaulted on receipt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential: Option<CredentialInput>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UpdateServiceRequest {
    pub expected_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vendor_endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocols: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pricing: Option<PriceModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttl_seconds: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<ServiceStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vendor_credential_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential: Option<CredentialInput>,
}

/// Admin view of a record. Carries the vendor endpoint, so agents never see it.
pub type AdminServiceRecord = ServiceRecord;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolveRequest {
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepositRequest {
    /// Defaults to the calling agent. Admins may name any agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<String>,
    pub amount: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceResponse {
    pub account: AccountId,
    pub balance: i64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StatementQuery {
    #[serde(default)]
    pub account: Option<String>,
    #[serde(default)]
    pub from: Option<i64>,
    #[serde(default)]
    pub to: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementResponse {
    pub account: AccountId,
    pub balance: i64,
    pub entries: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SettleRequest {
    pub org_id: String,
}
