//! HTTP/1.1 + JSON surface over the ledger.
//!
//! ```text
//! POST /v1/token  {"ha_credential": "..."}            -> {"token": "<hex>"}
//! POST /v1/cbf    header X-DIMY-Token, body = base64  -> {"tx_id": n}
//! POST /v1/query  {"qbf": "<base64>", "t_old": "YYYY-MM-DD"} -> {"exposed": bool}
//! ```
//!
//! Filter bodies are the base64 of the bit-exact DIMB serialization. Token
//! failures map to 401, malformed filters or windows to 400, bodies over
//! 4 MB to 413. Queries need no authentication, and the query response
//! carries exactly one boolean field — no record ids, counts, or filter
//! bytes ride along.

use super::{Ledger, LedgerError, TokenValue, TOKEN_LEN};
use crate::bloom::BloomFilter;
use crate::time::Timestamp;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use base64::Engine;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

/// One ledger transaction holds at most 4 MB.
pub const MAX_BODY_BYTES: usize = 4_000_000;
pub const TOKEN_HEADER: &str = "x-dimy-token";

fn b64() -> base64::engine::GeneralPurpose {
    base64::engine::general_purpose::STANDARD
}

/// Injected clock: the ledger itself never reads host time.
pub trait TimeSource: Send + Sync + 'static {
    fn now(&self) -> Timestamp;
}

/// Simulation-controlled clock for tests and the simulator's HTTP mode.
#[derive(Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn set(&self, t: Timestamp) {
        self.0.store(t.0, Ordering::SeqCst);
    }
}

impl TimeSource for Arc<ManualClock> {
    fn now(&self) -> Timestamp {
        Timestamp(self.0.load(Ordering::SeqCst))
    }
}

/// Wall clock mapped onto the simulated timeline anchored at the ledger's
/// epoch date. Used by `dimy backend serve`.
pub struct SystemTimeSource {
    pub epoch: NaiveDate,
}

impl TimeSource for SystemTimeSource {
    fn now(&self) -> Timestamp {
        let epoch = self.epoch.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc();
        let delta = chrono::Utc::now().signed_duration_since(epoch).num_seconds();
        Timestamp(delta.max(0) as u64)
    }
}

pub struct BackendState {
    pub ledger: RwLock<Ledger>,
    pub clock: Box<dyn TimeSource>,
}

impl BackendState {
    pub fn new(ledger: Ledger, clock: impl TimeSource) -> Arc<Self> {
        Arc::new(BackendState { ledger: RwLock::new(ledger), clock: Box::new(clock) })
    }
}

#[derive(Deserialize)]
struct TokenRequest {
    ha_credential: String,
}

#[derive(Serialize)]
struct TokenResponse {
    token: String,
}

#[derive(Serialize)]
struct UploadResponse {
    tx_id: u64,
}

#[derive(Deserialize)]
struct QueryRequest {
    qbf: String,
    t_old: NaiveDate,
}

#[derive(Serialize)]
struct QueryResponse {
    exposed: bool,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

type ApiError = (StatusCode, Json<ErrorBody>);

fn err(status: StatusCode, msg: impl Into<String>) -> ApiError {
    (status, Json(ErrorBody { error: msg.into() }))
}

fn ledger_err(e: LedgerError) -> ApiError {
    let status = match e {
        LedgerError::Unauthorized
        | LedgerError::TokenExpired
        | LedgerError::TokenUnknown
        | LedgerError::TokenReused => StatusCode::UNAUTHORIZED,
        LedgerError::ParamsMismatch | LedgerError::InvalidWindow => StatusCode::BAD_REQUEST,
        LedgerError::ReplicaDivergence(_) => StatusCode::INTERNAL_SERVER_ERROR,
    };
    err(status, e.to_string())
}

pub fn router(state: Arc<BackendState>) -> Router {
    Router::new()
        .route("/v1/token", post(issue_token))
        .route("/v1/cbf", post(upload_cbf))
        .route("/v1/query", post(check_exposure))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

async fn issue_token(
    State(state): State<Arc<BackendState>>,
    Json(req): Json<TokenRequest>,
) -> Result<Json<TokenResponse>, ApiError> {
    let now = state.clock.now();
    let token = state
        .ledger
        .write()
        .expect("ledger lock")
        .issue_token(&req.ha_credential, now)
        .map_err(ledger_err)?;
    Ok(Json(TokenResponse { token: hex::encode(token.value) }))
}

async fn upload_cbf(
    State(state): State<Arc<BackendState>>,
    headers: HeaderMap,
    body: String,
) -> Result<Json<UploadResponse>, ApiError> {
    let token = parse_token_header(&headers)?;
    let cbf = decode_filter(body.trim())?;
    let now = state.clock.now();
    let tx_id = state
        .ledger
        .write()
        .expect("ledger lock")
        .upload_cbf(&token, cbf, now)
        .map_err(ledger_err)?;
    Ok(Json(UploadResponse { tx_id }))
}

async fn check_exposure(
    State(state): State<Arc<BackendState>>,
    Json(req): Json<QueryRequest>,
) -> Result<Json<QueryResponse>, ApiError> {
    let qbf = decode_filter(&req.qbf)?;
    let now = state.clock.now();
    let exposed = state
        .ledger
        .read()
        .expect("ledger lock")
        .check_exposure(&qbf, req.t_old, now)
        .map_err(ledger_err)?;
    Ok(Json(QueryResponse { exposed }))
}

fn parse_token_header(headers: &HeaderMap) -> Result<TokenValue, ApiError> {
    let raw = headers
        .get(TOKEN_HEADER)
        .ok_or_else(|| err(StatusCode::UNAUTHORIZED, "missing X-DIMY-Token header"))?;
    let text = raw
        .to_str()
        .map_err(|_| err(StatusCode::UNAUTHORIZED, "malformed token header"))?;
    let bytes =
        hex::decode(text).map_err(|_| err(StatusCode::UNAUTHORIZED, "malformed token header"))?;
    let value: TokenValue = bytes
        .try_into()
        .map_err(|_| err(StatusCode::UNAUTHORIZED, format!("token must be {TOKEN_LEN} bytes")))?;
    Ok(value)
}

fn decode_filter(b64_text: &str) -> Result<BloomFilter, ApiError> {
    let bytes = b64()
        .decode(b64_text)
        .map_err(|_| err(StatusCode::BAD_REQUEST, "body is not valid base64"))?;
    BloomFilter::deserialize(&bytes).map_err(|e| err(StatusCode::BAD_REQUEST, e.to_string()))
}

/// Serve until the listener is closed. Callers that want a port choose it via
/// the listener (port 0 for ephemeral).
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<BackendState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Handle to a server running on a background thread with its own runtime.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn client(&self) -> BackendClient {
        BackendClient { addr: self.addr }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Spawn the server on an ephemeral local port; used by tests and the
/// simulator's HTTP mode.
pub fn spawn_server(state: Arc<BackendState>) -> std::io::Result<ServerHandle> {
    let (addr_tx, addr_rx) = std::sync::mpsc::channel();
    let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .expect("tokio runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
            addr_tx.send(listener.local_addr().expect("local addr")).expect("addr channel");
            axum::serve(listener, router(state))
                .with_graceful_shutdown(async {
                    let _ = shutdown_rx.await;
                })
                .await
                .expect("serve");
        });
    });
    let addr = addr_rx.recv().map_err(|_| std::io::Error::other("server failed to start"))?;
    Ok(ServerHandle { addr, shutdown: Some(shutdown_tx), thread: Some(thread) })
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("http {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response")]
    Malformed,
}

/// Minimal blocking HTTP client speaking exactly the three endpoints. Raw
/// enough that tests can capture and assert on the wire bytes.
#[derive(Clone, Copy, Debug)]
pub struct BackendClient {
    pub addr: SocketAddr,
}

impl BackendClient {
    /// One-shot POST with `Connection: close`; returns (status, body bytes).
    pub fn post_raw(
        &self,
        path: &str,
        headers: &[(&str, &str)],
        content_type: &str,
        body: &[u8],
    ) -> Result<(u16, Vec<u8>), ClientError> {
        let mut stream = TcpStream::connect(self.addr)?;
        let mut req = format!(
            "POST {path} HTTP/1.1\r\nHost: {}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n",
            self.addr,
            body.len()
        );
        for (name, value) in headers {
            req.push_str(&format!("{name}: {value}\r\n"));
        }
        req.push_str("\r\n");
        stream.write_all(req.as_bytes())?;
        stream.write_all(body)?;

        let mut raw = Vec::new();
        stream.read_to_end(&mut raw)?;
        Self::split_response(&raw)
    }

    fn split_response(raw: &[u8]) -> Result<(u16, Vec<u8>), ClientError> {
        let header_end =
            raw.windows(4).position(|w| w == b"\r\n\r\n").ok_or(ClientError::Malformed)? + 4;
        let head = std::str::from_utf8(&raw[..header_end]).map_err(|_| ClientError::Malformed)?;
        // status line looks like "HTTP/1.1 200 OK"
        let status = head
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse::<u16>().ok())
            .ok_or(ClientError::Malformed)?;
        Ok((status, raw[header_end..].to_vec()))
    }

    fn expect_json(
        &self,
        path: &str,
        headers: &[(&str, &str)],
        content_type: &str,
        body: &[u8],
    ) -> Result<serde_json::Value, ClientError> {
        let (status, bytes) = self.post_raw(path, headers, content_type, body)?;
        if status != 200 {
            return Err(ClientError::Http {
                status,
                body: String::from_utf8_lossy(&bytes).into_owned(),
            });
        }
        serde_json::from_slice(&bytes).map_err(|_| ClientError::Malformed)
    }

    pub fn issue_token(&self, ha_credential: &str) -> Result<TokenValue, ClientError> {
        let body = serde_json::json!({ "ha_credential": ha_credential }).to_string();
        let v = self.expect_json("/v1/token", &[], "application/json", body.as_bytes())?;
        let hex_token = v.get("token").and_then(|t| t.as_str()).ok_or(ClientError::Malformed)?;
        let bytes = hex::decode(hex_token).map_err(|_| ClientError::Malformed)?;
        bytes.try_into().map_err(|_| ClientError::Malformed)
    }

    pub fn upload_cbf(&self, token: &TokenValue, cbf: &BloomFilter) -> Result<u64, ClientError> {
        let body = b64().encode(cbf.serialize());
        let token_hex = hex::encode(token);
        let v = self.expect_json(
            "/v1/cbf",
            &[("X-DIMY-Token", token_hex.as_str())],
            "text/plain",
            body.as_bytes(),
        )?;
        v.get("tx_id").and_then(|t| t.as_u64()).ok_or(ClientError::Malformed)
    }

    pub fn check_exposure(&self, qbf: &BloomFilter, t_old: NaiveDate) -> Result<bool, ClientError> {
        let body = serde_json::json!({
            "qbf": b64().encode(qbf.serialize()),
            "t_old": t_old.format("%Y-%m-%d").to_string(),
        })
        .to_string();
        let v = self.expect_json("/v1/query", &[], "application/json", body.as_bytes())?;
        v.get("exposed").and_then(|e| e.as_bool()).ok_or(ClientError::Malformed)
    }
}
