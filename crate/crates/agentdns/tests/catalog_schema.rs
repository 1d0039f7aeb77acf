mod support;

use agentdns::catalog::{self, Audience, Endpoint};
use agentdns::client::RootClient;
use agentdns::harness::MockVendor;
use bytes::Bytes;
use http::Method;
use serde_json::{json, Value};
use support::*;

const FORBIDDEN_FIELDS: [&str; 5] = [
    "secret",
    "vendor_endpoint",
    "vendor_credential_ref",
    "credential_ref",
    "credential",
];

fn endpoint(method: &str, path: &str) -> Endpoint {
    catalog::endpoints()
        .into_iter()
        .find(|e| e.method == method && e.path == path)
        .unwrap_or_else(|| panic!("{method} {path} missing from catalog"))
}

fn validate(schema: &Value, instance: &Value, what: &str) {
    let doc = catalog::document(schema);
    let validator = jsonschema::validator_for(&doc).unwrap();
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{what}: {errors:?}\n{instance:#}");
}

/// Sends `body` to a concrete URL and checks both sides against the catalog entry.
async fn exercise(
    client: &RootClient,
    base: &str,
    method: &str,
    template: &str,
    concrete: &str,
    body: Option<Value>,
) -> Value {
    let ep = endpoint(method, template);
    if let (Some(schema), Some(b)) = (&ep.request, &body) {
        validate(schema, b, &format!("request of {method} {template}"));
    }
    let raw = client
        .raw(
            Method::from_bytes(method.as_bytes()).unwrap(),
            &format!("{base}{concrete}"),
            body.map(|b| Bytes::from(serde_json::to_vec(&b).unwrap())),
        )
        .await
        .unwrap();
    assert!(raw.status.is_success(), "{method} {concrete}: {} {:?}", raw.status, raw.body);
    let v: Value = serde_json::from_slice(&raw.body).unwrap();
    if let Some(schema) = &ep.response {
        validate(schema, &v, &format!("response of {method} {template}"));
    }
    v
}

#[tokio::test]
async fn live_responses_match_the_catalog() {
    let ctx = start(None).await;
    let url = ctx.url();
    let vendor = MockVendor::start("searchagent", "X-API-Key", "canary-schema-1").await.unwrap();
    let admin = &ctx.admin;
    let anon = ctx.anon();

    exercise(&anon, &url, "GET", "/v1/health", "/v1/health", None).await;
    exercise(admin, &url, "POST", "/v1/orgs", "/v1/orgs", Some(json!({"org_id": "example", "display_name": "Example"}))).await;
    exercise(admin, &url, "POST", "/v1/orgs/{org_id}/verify", "/v1/orgs/example/verify", None).await;
    exercise(admin, &url, "GET", "/v1/orgs", "/v1/orgs", None).await;
    let stored = exercise(
        admin,
        &url,
        "POST",
        "/v1/orgs/{org_id}/credentials",
        "/v1/orgs/example/credentials",
        Some(json!({
            "name": "agentdns://example/search/searchagent",
            "header_name": "X-API-Key",
            "secret": "canary-schema-1",
        })),
    )
    .await;
    exercise(
        admin,
        &url,
        "POST",
        "/v1/services",
        "/v1/services",
        Some(json!({
            "org_id": "example",
            "category": "search",
            "name": "searchagent",
            "vendor_endpoint": vendor.endpoint(),
            "protocols": ["HTTP"],
            "capabilities": "web search for recent articles",
            "pricing": {"amount": 3},
            "vendor_credential_ref": stored["credential_ref"],
        })),
    )
    .await;
    let svc = "/v1/services/example/search/searchagent";
    let tpl = "/v1/services/{org}/{category...}/{name}";
    exercise(admin, &url, "GET", tpl, svc, None).await;
    exercise(admin, &url, "PATCH", tpl, svc, Some(json!({"expected_version": 1, "ttl_seconds": 120}))).await;
    exercise(admin, &url, "GET", "/v1/services", "/v1/services", None).await;

    let created = exercise(admin, &url, "POST", "/v1/agents", "/v1/agents", Some(json!({"agent_id": "alice"}))).await;
    exercise(admin, &url, "POST", "/v1/agents/{agent_id}/status", "/v1/agents/alice/status", Some(json!({"status": "active"}))).await;
    exercise(admin, &url, "POST", "/v1/billing/deposit", "/v1/billing/deposit", Some(json!({"agent_id": "alice", "amount": 50}))).await;
    let token = exercise(
        &anon,
        &url,
        "POST",
        "/v1/auth/token",
        "/v1/auth/token",
        Some(json!({"agent_id": "alice", "access_key": created["access_key"], "ttl_seconds": 600})),
    )
    .await;
    let alice = anon.clone().with_token(token["token"].as_str().unwrap());

    let hits = exercise(&alice, &url, "POST", "/v1/search", "/v1/search", Some(json!({"text": "search recent articles", "k": 3}))).await;
    assert_eq!(hits.as_array().unwrap().len(), 1);
    exercise(
        &alice,
        &url,
        "POST",
        "/v1/search",
        "/v1/search",
        Some(json!({"text": "articles", "k": 3, "category_filter": "search", "max_price": 10})),
    )
    .await;
    exercise(&alice, &url, "POST", "/v1/resolve", "/v1/resolve", Some(json!({"name": "agentdns://example/search/searchagent"}))).await;
    let proxied = alice
        .raw(
            Method::POST,
            &format!("{url}/proxy/example/search/searchagent/invoke"),
            Some(Bytes::from_static(br#"{"task":"t"}"#)),
        )
        .await
        .unwrap();
    assert!(proxied.status.is_success());
    exercise(&alice, &url, "GET", "/v1/billing/balance", "/v1/billing/balance", None).await;
    exercise(&alice, &url, "GET", "/v1/billing/statement", "/v1/billing/statement", None).await;
    exercise(admin, &url, "GET", "/v1/billing/statement", "/v1/billing/statement?account=vendor:example&from=0", None).await;
    exercise(admin, &url, "GET", "/v1/meter", "/v1/meter", None).await;
    exercise(admin, &url, "POST", "/v1/billing/settle", "/v1/billing/settle", Some(json!({"org_id": "example"}))).await;
    exercise(admin, &url, "POST", "/v1/billing/settle", "/v1/billing/settle", Some(json!({"org_id": "example"}))).await;

    let export = admin.export_ledger().await.unwrap();
    let entry = json!({"$ref": "#/$defs/LedgerEntry"});
    for line in export.lines() {
        validate(&entry, &serde_json::from_str(line).unwrap(), "export line");
    }

    exercise(admin, &url, "DELETE", tpl, svc, None).await;
    exercise(&alice, &url, "POST", "/v1/auth/revoke", "/v1/auth/revoke", None).await;

    // Every error body matches ApiError.
    let error = json!({"$ref": "#/$defs/ApiError"});
    for (method, path, client) in [
        (Method::POST, "/v1/resolve", &alice),
        (Method::GET, "/v1/nowhere", &anon),
        (Method::PUT, "/v1/health", &anon),
        (Method::POST, "/v1/orgs", admin),
    ] {
        let raw = client.raw(method, &format!("{url}{path}"), Some(Bytes::from_static(b"{"))).await.unwrap();
        assert!(!raw.status.is_success());
        validate(&error, &serde_json::from_slice(&raw.body).unwrap(), path);
    }
    ctx.shutdown().await;
}

#[test]
fn agent_facing_schemas_expose_no_vendor_secrets() {
    for ep in catalog::endpoints().into_iter().filter(|e| e.audience.agent_facing()) {
        for schema in [&ep.request, &ep.response].into_iter().flatten() {
            let names = catalog::property_names(schema);
            for field in FORBIDDEN_FIELDS {
                assert!(!names.iter().any(|n| n == field), "{} {} exposes `{field}`", ep.method, ep.path);
            }
        }
    }
    // The walk itself does see these fields where they belong.
    let admin = endpoint("GET", "/v1/services");
    let names = catalog::property_names(admin.response.as_ref().unwrap());
    assert!(names.iter().any(|n| n == "vendor_endpoint"));
    assert_eq!(endpoint("GET", "/v1/services").audience, Audience::Admin);
}

#[test]
fn object_schemas_are_closed() {
    fn walk(v: &Value, path: &str) {
        match v {
            Value::Object(m) => {
                if m.get("type") == Some(&json!("object")) {
                    assert_eq!(m.get("additionalProperties"), Some(&json!(false)), "{path} is open");
                }
                for (k, child) in m {
                    walk(child, &format!("{path}/{k}"));
                }
            }
            Value::Array(items) => items.iter().for_each(|c| walk(c, path)),
            _ => {}
        }
    }
    walk(&catalog::definitions(), "#/$defs");
}

#[test]
fn shipped_api_doc_is_current() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/api.md");
    let fresh = catalog::markdown();
    if std::env::var_os("AGENTDNS_BLESS").is_some() {
        std::fs::write(&path, &fresh).unwrap();
    }
    let shipped = std::fs::read_to_string(&path).unwrap_or_default();
    assert!(shipped == fresh, "docs/api.md is stale; rerun with AGENTDNS_BLESS=1");
}

#[test]
fn validator_rejects_drift() {
    let doc = catalog::document(&json!({"$ref": "#/$defs/PublicRecord"}));
    let v = jsonschema::validator_for(&doc).unwrap();
    let good = json!({
        "name": "agentdns://a/b/c",
        "version": 1,
        "proxy_endpoint": "http://x/proxy/a/b/c",
        "protocols": ["HTTP"],
        "capabilities": "",
        "pricing": {"unit": "per_call", "amount": 0},
        "status": "active",
    });
    assert!(v.is_valid(&good));
    let mut leaked = good.clone();
    leaked["vendor_endpoint"] = json!("http://vendor");
    assert!(!v.is_valid(&leaked));
    let mut bad_name = good;
    bad_name["name"] = json!("agentdns://a/b");
    assert!(!v.is_valid(&bad_name));
}

mod identifier_schema {
    use super::*;
    use proptest::prelude::*;

    fn label() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-z0-9]([a-z0-9-]{0,8}[a-z0-9])?",
            "[a-z0-9-]{0,3}",
            "[a-z0-9]{60,66}",
            "[a-z_.]{1,3}",
        ]
    }

    fn candidate() -> impl Strategy<Value = String> {
        (
            prop_oneof![Just("agentdns://"), Just("agentdns:/"), Just("")],
            prop::collection::vec(label(), 0..12),
        )
            .prop_map(|(scheme, labels)| format!("{scheme}{}", labels.join("/")))
    }

    static VALIDATOR: std::sync::LazyLock<jsonschema::Validator> = std::sync::LazyLock::new(|| {
        jsonschema::validator_for(&catalog::document(&json!({"$ref": "#/$defs/ServiceName"}))).unwrap()
    });

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        /// The published ServiceName schema accepts exactly what the parser
        /// accepts, for canonical (lowercase) input.
        #[test]
        fn schema_agrees_with_parser(text in candidate()) {
            let schema_ok = VALIDATOR.is_valid(&json!(text));
            let parsed = agentdns_core::ServiceName::parse(&text);
            prop_assert_eq!(schema_ok, parsed.is_ok(), "{:?} -> {:?}", text, parsed);
            if let Ok(n) = parsed {
                prop_assert_eq!(n.render(), text);
            }
        }
    }
}
