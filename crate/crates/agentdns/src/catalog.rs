//! The published endpoint catalog: every route with its audience and the
//! JSON schemas of its request and response bodies.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};

use crate::api::ERROR_CODES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Audience {
    /// No credentials.
    Public,
    /// Bearer token.
    Agent,
    /// `X-Admin-Key` header.
    Admin,
    /// Bearer token for agents or admin key for any account.
    AgentOrAdmin,
}

impl Audience {
    /// Whether agents can read this endpoint's responses.
    pub fn agent_facing(self) -> bool {
        !matches!(self, Audience::Admin)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Endpoint {
    pub method: &'static str,
    pub path: &'static str,
    pub audience: Audience,
    pub summary: &'static str,
    /// `None`: no body.
    pub request: Option<Value>,
    /// `None`: relayed verbatim (proxy) or not JSON.
    pub response: Option<Value>,
}

fn r(name: &str) -> Value {
    json!({ "$ref": format!("#/$defs/{name}") })
}

fn obj(required: &[&str], props: Value) -> Value {
    json!({
        "type": "object",
        "required": required,
        "properties": props,
        "additionalProperties": false,
    })
}

fn nullable(schema: Value) -> Value {
    json!({ "anyOf": [schema, { "type": "null" }] })
}

fn array(items: Value) -> Value {
    json!({ "type": "array", "items": items })
}

/// Shared definitions referenced as `#/$defs/<Name>`.
pub fn definitions() -> Value {
    let uint = json!({ "type": "integer", "minimum": 0 });
    let int = json!({ "type": "integer" });
    let string = json!({ "type": "string" });
    let label = "[a-z0-9]([a-z0-9-]{0,61}[a-z0-9])?";
    json!({
        "ServiceName": {
            "type": "string",
            "maxLength": 253 + "agentdns://".len(),
            "pattern": format!("^agentdns://{label}(/{label}){{2,9}}$"),
        },
        "CategoryPath": {
            "type": "string",
            "pattern": format!("^{label}(/{label}){{0,7}}$"),
        },
        "Protocols": { "type": "array", "items": string, "uniqueItems": true, "minItems": 1 },
        "PriceModel": obj(&["unit", "amount"], json!({
            "unit": { "const": "per_call" },
            "amount": uint,
        })),
        "PriceInput": {
            "type": "object",
            "required": ["amount"],
            "properties": { "unit": { "const": "per_call" }, "amount": uint },
            "additionalProperties": false,
        },
        "ServiceStatus": { "enum": ["active", "deprecated", "deleted"] },
        "AccountId": { "type": "string", "pattern": "^(agent:.+|vendor:.+|platform|external)$" },
        "ApiError": obj(&["code", "message", "http_status"], json!({
            "code": { "enum": ERROR_CODES.iter().map(|(c, _)| *c).collect::<Vec<_>>() },
            "message": string,
            "http_status": { "type": "integer", "minimum": 400, "maximum": 599 },
        })),
        "Health": obj(&["status", "services"], json!({
            "status": { "const": "ok" },
            "services": uint,
        })),
        "TokenRequest": obj(&["agent_id", "access_key"], json!({
            "agent_id": string,
            "access_key": string,
            "ttl_seconds": uint,
        })),
        "TokenResponse": obj(&["token", "agent_id", "issued_at", "expires_at"], json!({
            "token": string,
            "agent_id": string,
            "issued_at": int,
            "expires_at": int,
        })),
        "Revoked": obj(&["revoked"], json!({ "revoked": { "const": true } })),
        "CreateAgentRequest": obj(&["agent_id"], json!({ "agent_id": string })),
        "CreateAgentResponse": obj(&["agent_id", "access_key", "created_at"], json!({
            "agent_id": string,
            "access_key": string,
            "created_at": int,
        })),
        "AgentStatusRequest": obj(&["status"], json!({ "status": { "enum": ["active", "suspended"] } })),
        "AgentAccount": obj(&["agent_id", "created_at", "status"], json!({
            "agent_id": string,
            "created_at": int,
            "status": { "enum": ["active", "suspended"] },
        })),
        "RegisterOrgRequest": obj(&["org_id", "display_name"], json!({
            "org_id": string,
            "display_name": string,
        })),
        "Organization": obj(&["org_id", "display_name", "verified", "created_at"], json!({
            "org_id": string,
            "display_name": string,
            "verified": { "type": "boolean" },
            "created_at": int,
        })),
        "CredentialInput": obj(&["header_name", "secret"], json!({
            "header_name": string,
            "secret": string,
        })),
        "StoreCredentialRequest": obj(&["name", "header_name", "secret"], json!({
            "name": r("ServiceName"),
            "header_name": string,
            "secret": string,
        })),
        "StoreCredentialResponse": obj(&["credential_ref"], json!({ "credential_ref": string })),
        "RegisterServiceRequest": obj(
            &["org_id", "category", "name", "vendor_endpoint", "protocols", "capabilities", "pricing"],
            json!({
                "org_id": string,
                "category": r("CategoryPath"),
                "name": string,
                "vendor_endpoint": string,
                "protocols": r("Protocols"),
                "capabilities": string,
                "pricing": r("PriceInput"),
                "ttl_seconds": uint,
                "vendor_credential_ref": string,
                "credential": r("CredentialInput"),
            }),
        ),
        "UpdateServiceRequest": obj(&["expected_version"], json!({
            "expected_version": uint,
            "vendor_endpoint": string,
            "protocols": r("Protocols"),
            "capabilities": string,
            "pricing": r("PriceInput"),
            "ttl_seconds": uint,
            "status": { "enum": ["active", "deprecated"] },
            "vendor_credential_ref": string,
            "credential": r("CredentialInput"),
        })),
        "ServiceRecord": obj(
            &["name", "version", "vendor_endpoint", "protocols", "capabilities", "pricing",
              "vendor_credential_ref", "ttl_seconds", "status", "updated_at"],
            json!({
                "name": r("ServiceName"),
                "version": { "type": "integer", "minimum": 1 },
                "vendor_endpoint": string,
                "protocols": r("Protocols"),
                "capabilities": string,
                "pricing": r("PriceModel"),
                "vendor_credential_ref": nullable(string.clone()),
                "ttl_seconds": nullable(uint.clone()),
                "status": r("ServiceStatus"),
                "updated_at": int,
            }),
        ),
        "DiscoveryQuery": obj(&["text", "k"], json!({
            "text": { "type": "string", "minLength": 1, "maxLength": 2048 },
            "k": { "type": "integer", "minimum": 1, "maximum": 100 },
            "category_filter": nullable(r("CategoryPath")),
            "max_price": nullable(uint.clone()),
        })),
        "DiscoveryResult": obj(
            &["name", "proxy_endpoint", "protocols", "capabilities", "pricing", "score", "rank"],
            json!({
                "name": r("ServiceName"),
                "proxy_endpoint": string,
                "protocols": r("Protocols"),
                "capabilities": string,
                "pricing": r("PriceModel"),
                "score": { "type": "number", "minimum": 0, "maximum": 1 },
                "rank": { "type": "integer", "minimum": 1 },
            }),
        ),
        "ResolveRequest": obj(&["name"], json!({ "name": string })),
        "PublicRecord": obj(
            &["name", "version", "proxy_endpoint", "protocols", "capabilities", "pricing", "status"],
            json!({
                "name": r("ServiceName"),
                "version": { "type": "integer", "minimum": 1 },
                "proxy_endpoint": string,
                "protocols": r("Protocols"),
                "capabilities": string,
                "pricing": r("PriceModel"),
                "status": { "enum": ["active", "deprecated"] },
            }),
        ),
        "ResolutionResponse": obj(&["record", "ttl_seconds"], json!({
            "record": r("PublicRecord"),
            "ttl_seconds": { "type": "integer", "minimum": 1 },
        })),
        "DepositRequest": obj(&["amount"], json!({
            "agent_id": string,
            "amount": { "type": "integer", "minimum": 1 },
        })),
        "BalanceResponse": obj(&["account", "balance"], json!({
            "account": r("AccountId"),
            "balance": int,
        })),
        "LedgerEntry": obj(
            &["entry_id", "timestamp", "debit_account", "credit_account", "amount", "reason"],
            json!({
                "entry_id": uint,
                "timestamp": int,
                "debit_account": r("AccountId"),
                "credit_account": r("AccountId"),
                "amount": { "type": "integer", "minimum": 1 },
                "reason": { "enum": ["deposit", "call", "fee", "refund", "settlement"] },
                "meter_event_id": string,
            }),
        ),
        "StatementResponse": obj(&["account", "balance", "entries"], json!({
            "account": r("AccountId"),
            "balance": int,
            "entries": array(r("LedgerEntry")),
        })),
        "SettleRequest": obj(&["org_id"], json!({ "org_id": string })),
        "SettlementReport": obj(&["org_id", "amount", "entry_id", "timestamp"], json!({
            "org_id": string,
            "amount": uint,
            "entry_id": nullable(uint.clone()),
            "timestamp": int,
        })),
        "MeterEvent": obj(&["event_id", "agent_id", "name", "price", "timestamp", "outcome"], json!({
            "event_id": string,
            "agent_id": string,
            "name": r("ServiceName"),
            "price": uint,
            "timestamp": int,
            "outcome": { "enum": ["forwarded", "upstream_error"] },
        })),
    })
}

pub fn endpoints() -> Vec<Endpoint> {
    use Audience::*;
    let e = |method, path, audience, summary, request: Option<&str>, response: Option<Value>| Endpoint {
        method,
        path,
        audience,
        summary,
        request: request.map(r),
        response,
    };
    vec![
        e("GET", "/v1/health", Public, "Liveness and live service count.", None, Some(r("Health"))),
        e("POST", "/v1/auth/token", Public, "Exchange an access key for a bearer token.", Some("TokenRequest"), Some(r("TokenResponse"))),
        e("POST", "/v1/auth/revoke", Agent, "Revoke the presented token.", None, Some(r("Revoked"))),
        e("POST", "/v1/agents", Admin, "Create an agent account; the access key is returned once.", Some("CreateAgentRequest"), Some(r("CreateAgentResponse"))),
        e("POST", "/v1/agents/{agent_id}/status", Admin, "Suspend or reactivate an agent.", Some("AgentStatusRequest"), Some(r("AgentAccount"))),
        e("GET", "/v1/orgs", Admin, "List organizations.", None, Some(array(r("Organization")))),
        e("POST", "/v1/orgs", Admin, "Register an organization.", Some("RegisterOrgRequest"), Some(r("Organization"))),
        e("POST", "/v1/orgs/{org_id}/verify", Admin, "Mark an organization verified.", None, Some(r("Organization"))),
        e("POST", "/v1/orgs/{org_id}/credentials", Admin, "Vault a vendor credential for one service.", Some("StoreCredentialRequest"), Some(r("StoreCredentialResponse"))),
        e("GET", "/v1/services", Admin, "List every record, tombstones included.", None, Some(array(r("ServiceRecord")))),
        e("POST", "/v1/services", Admin, "Register a service.", Some("RegisterServiceRequest"), Some(r("ServiceRecord"))),
        e("GET", "/v1/services/{org}/{category...}/{name}", Admin, "Fetch one record, tombstones included.", None, Some(r("ServiceRecord"))),
        e("PATCH", "/v1/services/{org}/{category...}/{name}", Admin, "Update a record (compare-and-set on version).", Some("UpdateServiceRequest"), Some(r("ServiceRecord"))),
        e("DELETE", "/v1/services/{org}/{category...}/{name}", Admin, "Tombstone a record.", None, Some(r("ServiceRecord"))),
        e("POST", "/v1/search", Agent, "Natural-language discovery.", Some("DiscoveryQuery"), Some(array(r("DiscoveryResult")))),
        e("POST", "/v1/resolve", Agent, "Latest public metadata for an identifier.", Some("ResolveRequest"), Some(r("ResolutionResponse"))),
        e("GET", "/v1/billing/balance", Agent, "The caller's balance.", None, Some(r("BalanceResponse"))),
        e("POST", "/v1/billing/deposit", Admin, "Credit an agent account.", Some("DepositRequest"), Some(r("BalanceResponse"))),
        e("GET", "/v1/billing/statement", AgentOrAdmin, "Ledger entries touching an account; query `account`, `from`, `to`.", None, Some(r("StatementResponse"))),
        e("POST", "/v1/billing/settle", Admin, "Pay out a vendor's accrued earnings.", Some("SettleRequest"), Some(r("SettlementReport"))),
        e("GET", "/v1/billing/export", Admin, "Whole ledger as JSON Lines of LedgerEntry.", None, None),
        e("GET", "/v1/meter", Admin, "Every metering event.", None, Some(array(r("MeterEvent")))),
        e("ANY", "/proxy/{org}/{category...}/{name}/{path...}", Agent, "Forward to the vendor with its credential substituted; response relayed verbatim.", None, None),
    ]
}

/// A self-contained schema document for one body schema.
pub fn document(schema: &Value) -> Value {
    let mut doc = schema.clone();
    if let Value::Object(m) = &mut doc {
        m.insert("$defs".into(), definitions());
    }
    doc
}

/// Collects every property name reachable from `schema`, following refs.
pub fn property_names(schema: &Value) -> Vec<String> {
    fn walk(v: &Value, defs: &Value, seen: &mut Vec<String>, out: &mut Vec<String>) {
        match v {
            Value::Object(m) => {
                if let Some(Value::String(reference)) = m.get("$ref") {
                    let name = reference.trim_start_matches("#/$defs/").to_string();
                    if !seen.contains(&name) {
                        seen.push(name.clone());
                        walk(&defs[name.as_str()], defs, seen, out);
                    }
                }
                if let Some(Value::Object(props)) = m.get("properties") {
                    out.extend(props.keys().cloned());
                }
                for child in m.values() {
                    walk(child, defs, seen, out);
                }
            }
            Value::Array(items) => items.iter().for_each(|c| walk(c, defs, seen, out)),
            _ => {}
        }
    }
    let defs = definitions();
    let mut out = Vec::new();
    walk(schema, &defs, &mut Vec::new(), &mut out);
    out.sort();
    out.dedup();
    out
}

pub const IDENTIFIER_ABNF: &str = r#"identifier   = scheme body
scheme       = "agentdns://"
body         = org "/" category *7( "/" category ) "/" name
                ; at most 253 octets; input is case-folded to lowercase
org          = label
category     = label
name         = label
label        = let-dig [ *61( let-dig / "-" ) let-dig ]
let-dig      = %x61-7A / DIGIT        ; a-z / 0-9 after folding
"#;

/// Renders the catalog as the Markdown shipped in `docs/api.md`.
pub fn markdown() -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# AgentDNS HTTP API\n");
    let _ = writeln!(
        out,
        "All bodies are UTF-8 JSON with snake_case fields. Timestamps are integer UTC seconds. \
         Amounts are integer micro-credits.\n"
    );
    let _ = writeln!(out, "Authentication:\n");
    let _ = writeln!(out, "- `public`: none.");
    let _ = writeln!(out, "- `agent`: `Authorization: Bearer <token>` from `POST /v1/auth/token`.");
    let _ = writeln!(out, "- `admin`: `X-Admin-Key: <admin_key>` from the server config.");
    let _ = writeln!(out, "- `agent_or_admin`: either; agents only see their own account.\n");
    let _ = writeln!(
        out,
        "Errors use the `ApiError` body and carry an `x-agentdns-error: <code>` header. \
         Proxied vendor responses never carry that header.\n"
    );
    let _ = writeln!(out, "## Identifier grammar (ABNF)\n\n```abnf\n{IDENTIFIER_ABNF}```\n");
    let _ = writeln!(out, "## Endpoints\n");
    let _ = writeln!(out, "| Method | Path | Auth | Request | Response | Summary |");
    let _ = writeln!(out, "|---|---|---|---|---|---|");
    let show = |s: &Option<Value>| match s {
        None => "-".to_string(),
        Some(v) => schema_label(v),
    };
    for ep in endpoints() {
        let audience = serde_json::to_value(ep.audience).unwrap();
        let _ = writeln!(
            out,
            "| {} | `{}` | {} | {} | {} | {} |",
            ep.method,
            ep.path,
            audience.as_str().unwrap(),
            show(&ep.request),
            show(&ep.response),
            ep.summary
        );
    }
    let _ = writeln!(out, "\n## Error codes\n");
    let _ = writeln!(out, "| Code | HTTP status |\n|---|---|");
    for (code, status) in ERROR_CODES {
        let _ = writeln!(out, "| `{code}` | {status} |");
    }
    let _ = writeln!(out, "\n## Schemas\n");
    let _ = writeln!(out, "JSON Schema (2020-12). References point into this set.\n");
    if let Value::Object(defs) = definitions() {
        for (name, schema) in defs {
            let _ = writeln!(
                out,
                "### {name}\n\n```json\n{}\n```\n",
                serde_json::to_string_pretty(&schema).unwrap()
            );
        }
    }
    out
}

fn schema_label(v: &Value) -> String {
    if let Some(Value::String(r)) = v.get("$ref") {
        return format!("`{}`", r.trim_start_matches("#/$defs/"));
    }
    if let Some(items) = v.get("items") {
        return format!("array of {}", schema_label(items));
    }
    "json".into()
}
