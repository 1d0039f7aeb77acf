//! Stand-in vendor services that insist on their own credential.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Request, State};
use axum::response::{IntoResponse, Response};
use axum::Router;
use http::StatusCode;
use parking_lot::Mutex;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

/// One request as the vendor saw it.
#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub query: Option<String>,
    /// Lowercased names, in arrival order.
    pub headers: Vec<(String, String)>,
    pub body: Bytes,
}

impl RecordedRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        let name = name.to_ascii_lowercase();
        self.headers
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| v.as_str())
    }

    /// Every header value and the body, for substring scans.
    pub fn raw_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.headers {
            s.push_str(k);
            s.push_str(": ");
            s.push_str(v);
            s.push('\n');
        }
        s.push_str(&String::from_utf8_lossy(&self.body));
        s
    }
}

/// Builds the status and JSON body for an accepted request.
pub type Responder = Arc<dyn Fn(&RecordedRequest) -> (StatusCode, serde_json::Value) + Send + Sync>;

/// Echoes the `task` and `input` fields back inside a deterministic `output`.
pub fn echo_responder(label: &str) -> Responder {
    let label = label.to_string();
    Arc::new(move |req: &RecordedRequest| {
        let parsed: serde_json::Value = serde_json::from_slice(&req.body).unwrap_or(serde_json::Value::Null);
        let task = parsed.get("task").and_then(|v| v.as_str()).unwrap_or("");
        let input = parsed.get("input").and_then(|v| v.as_str()).unwrap_or("");
        let gist: String = input.chars().take(80).collect();
        (
            StatusCode::OK,
            json!({
                "service": label,
                "output": format!("{label} results for \"{task}\" (context: {gist})"),
                "input_bytes": req.body.len(),
            }),
        )
    })
}

struct Shared {
    label: String,
    header: String,
    secret: String,
    responder: Responder,
    log: Mutex<Vec<RecordedRequest>>,
    rejected: AtomicUsize,
}

struct Running {
    shutdown: oneshot::Sender<()>,
    task: JoinHandle<()>,
}

/// An HTTP vendor on a loopback port. Requests without the expected
/// credential get 401 and are counted but not logged as served.
pub struct MockVendor {
    addr: SocketAddr,
    shared: Arc<Shared>,
    running: Option<Running>,
}

impl MockVendor {
    pub async fn start(label: &str, header: &str, secret: &str) -> std::io::Result<Self> {
        Self::start_with(label, header, secret, echo_responder(label)).await
    }

    pub async fn start_with(
        label: &str,
        header: &str,
        secret: &str,
        responder: Responder,
    ) -> std::io::Result<Self> {
        let shared = Arc::new(Shared {
            label: label.to_string(),
            header: header.to_ascii_lowercase(),
            secret: secret.to_string(),
            responder,
            log: Mutex::new(Vec::new()),
            rejected: AtomicUsize::new(0),
        });
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let mut vendor = Self {
            addr,
            shared,
            running: None,
        };
        vendor.serve(listener);
        Ok(vendor)
    }

    fn serve(&mut self, listener: TcpListener) {
        let app = Router::new().fallback(handle).with_state(Arc::clone(&self.shared));
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        self.running = Some(Running { shutdown: tx, task });
    }

    pub fn label(&self) -> &str {
        &self.shared.label
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn credential_header(&self) -> &str {
        &self.shared.header
    }

    pub fn secret(&self) -> &str {
        &self.shared.secret
    }

    pub fn is_running(&self) -> bool {
        self.running.is_some()
    }

    /// Accepted requests so far, across restarts.
    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.shared.log.lock().clone()
    }

    pub fn served(&self) -> usize {
        self.shared.log.lock().len()
    }

    pub fn rejected(&self) -> usize {
        self.shared.rejected.load(Ordering::SeqCst)
    }

    /// Stops listening. In-flight requests finish first.
    pub async fn kill(&mut self) {
        if let Some(r) = self.running.take() {
            let _ = r.shutdown.send(());
            let _ = r.task.await;
        }
    }

    /// Listens again on the same address, keeping the request log.
    pub async fn revive(&mut self) -> std::io::Result<()> {
        if self.running.is_some() {
            return Ok(());
        }
        let listener = TcpListener::bind(self.addr).await?;
        self.serve(listener);
        Ok(())
    }
}

impl Drop for MockVendor {
    fn drop(&mut self) {
        if let Some(r) = self.running.take() {
            let _ = r.shutdown.send(());
            r.task.abort();
        }
    }
}

async fn handle(State(shared): State<Arc<Shared>>, request: Request) -> Response {
    let (parts, body) = request.into_parts();
    let body = match axum::body::to_bytes(body, usize::MAX).await {
        Ok(b) => b,
        Err(_) => return StatusCode::BAD_REQUEST.into_response(),
    };
    let recorded = RecordedRequest {
        method: parts.method.to_string(),
        path: parts.uri.path().to_string(),
        query: parts.uri.query().map(str::to_string),
        headers: parts
            .headers
            .iter()
            .map(|(k, v)| (k.as_str().to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
            .collect(),
        body,
    };
    if recorded.header(&shared.header) != Some(shared.secret.as_str()) {
        shared.rejected.fetch_add(1, Ordering::SeqCst);
        return (
            StatusCode::UNAUTHORIZED,
            axum::Json(json!({ "error": "missing or wrong vendor credential" })),
        )
            .into_response();
    }
    let (status, payload) = (shared.responder)(&recorded);
    shared.log.lock().push(recorded);
    (status, axum::Json(payload)).into_response()
}
