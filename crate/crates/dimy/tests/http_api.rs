//! Integration tests for the HTTP surface: the three endpoints, status-code
//! mapping, the body-size cap, and equivalence between the simulator's
//! in-process and HTTP backends.

use dimy::backend::http::{spawn_server, BackendClient, BackendState, ClientError, ManualClock};
use dimy::backend::{Ledger, LedgerConfig};
use dimy::bloom::{BloomFilter, BloomParams, FilterRole};
use dimy::sim::{self, HttpBackend, InProcessBackend, Scenario, Simulation};
use dimy::time::Timestamp;
use std::sync::Arc;

struct TestServer {
    clock: Arc<ManualClock>,
    handle: dimy::backend::http::ServerHandle,
}

impl TestServer {
    fn start(seed: u64) -> Self {
        let clock = Arc::new(ManualClock::default());
        let ledger = Ledger::new(LedgerConfig::new(["ha-http".to_string()]), seed);
        let state = BackendState::new(ledger, Arc::clone(&clock));
        let handle = spawn_server(state).expect("spawn server");
        TestServer { clock, handle }
    }

    fn client(&self) -> BackendClient {
        self.handle.client()
    }
}

fn filter_with(items: &[&[u8]], role: FilterRole) -> BloomFilter {
    let mut f = BloomFilter::new(BloomParams::DEFAULT, role);
    for i in items {
        f.insert(i);
    }
    f
}

#[test]
fn full_flow_over_http() {
    let server = TestServer::start(1);
    let client = server.client();
    server.clock.set(Timestamp(100));

    let token = client.issue_token("ha-http").unwrap();
    let cbf = filter_with(&[b"enc-1", b"enc-2"], FilterRole::Contact);
    let tx = client.upload_cbf(&token, &cbf).unwrap();
    assert_eq!(tx, 1);

    let qbf = filter_with(&[b"enc-2"], FilterRole::Query);
    assert!(client.check_exposure(&qbf, dimy::backend::default_epoch()).unwrap());

    let miss = filter_with(&[b"enc-x"], FilterRole::Query);
    assert!(!client.check_exposure(&miss, dimy::backend::default_epoch()).unwrap());
}

#[test]
fn bad_credential_is_401() {
    let server = TestServer::start(2);
    let err = server.client().issue_token("nobody").unwrap_err();
    assert!(matches!(err, ClientError::Http { status: 401, .. }));
}

#[test]
fn query_needs_no_authentication() {
    let server = TestServer::start(3);
    let qbf = filter_with(&[b"x"], FilterRole::Query);
    // the typed client never sends a token on /v1/query; this must be 200
    assert!(!server.client().check_exposure(&qbf, dimy::backend::default_epoch()).unwrap());
}

#[test]
fn malformed_bodies_are_400() {
    let server = TestServer::start(4);
    let client = server.client();

    // body that is not base64 at all
    let token = client.issue_token("ha-http").unwrap();
    let token_hex = hex::encode(token);
    let (status, _) = client
        .post_raw("/v1/cbf", &[("X-DIMY-Token", token_hex.as_str())], "text/plain", b"%%%not-base64%%%")
        .unwrap();
    assert_eq!(status, 400);

    // valid base64, garbage filter
    use base64::Engine;
    let garbage = base64::engine::general_purpose::STANDARD.encode(b"XXXXnot-a-filter");
    let (status, _) = client
        .post_raw("/v1/cbf", &[("X-DIMY-Token", token_hex.as_str())], "text/plain", garbage.as_bytes())
        .unwrap();
    assert_eq!(status, 400);

    // bad t_old window
    let qbf = filter_with(&[b"x"], FilterRole::Query);
    let qbf_b64 = base64::engine::general_purpose::STANDARD.encode(qbf.serialize());
    server.clock.set(Timestamp(0));
    let body = serde_json::json!({ "qbf": qbf_b64, "t_old": "2027-01-01" }).to_string();
    let (status, _) = client.post_raw("/v1/query", &[], "application/json", body.as_bytes()).unwrap();
    assert_eq!(status, 400);
}

#[test]
fn missing_or_mangled_token_is_401() {
    let server = TestServer::start(5);
    let client = server.client();
    let cbf = filter_with(&[b"x"], FilterRole::Contact);
    use base64::Engine;
    let body = base64::engine::general_purpose::STANDARD.encode(cbf.serialize());

    let (status, _) = client.post_raw("/v1/cbf", &[], "text/plain", body.as_bytes()).unwrap();
    assert_eq!(status, 401);

    let (status, _) = client
        .post_raw("/v1/cbf", &[("X-DIMY-Token", "zz-not-hex")], "text/plain", body.as_bytes())
        .unwrap();
    assert_eq!(status, 401);
}

#[test]
fn oversize_body_is_413() {
    use std::io::{Read, Write};
    let server = TestServer::start(6);
    let client = server.client();

    // one byte over the 4 MB transaction cap
    let mut stream = std::net::TcpStream::connect(server.handle.addr).unwrap();
    let head = format!(
        "POST /v1/cbf HTTP/1.1\r\nHost: {}\r\nContent-Type: text/plain\r\nContent-Length: 4000001\r\nConnection: close\r\n\r\n",
        server.handle.addr
    );
    stream.write_all(head.as_bytes()).unwrap();
    let chunk = [b'A'; 65536];
    let mut remaining = 4_000_001usize;
    while remaining > 0 {
        let n = remaining.min(chunk.len());
        // the server may answer and close mid-upload; that's fine
        if stream.write_all(&chunk[..n]).is_err() {
            break;
        }
        remaining -= n;
    }
    let mut response = Vec::new();
    let _ = stream.read_to_end(&mut response);
    let status_line = String::from_utf8_lossy(&response);
    assert!(
        status_line.starts_with("HTTP/1.1 413"),
        "expected 413, got: {}",
        status_line.lines().next().unwrap_or("<empty>")
    );

    // a default filter body (~133 KB of base64) is fine
    let token = client.issue_token("ha-http").unwrap();
    let cbf = filter_with(&[b"x"], FilterRole::Contact);
    assert_eq!(client.upload_cbf(&token, &cbf).unwrap(), 1);
}

#[test]
fn http_backend_matches_in_process() {
    let scenario: Scenario = serde_json::from_value(serde_json::json!({
        "name": "http-parity",
        "devices": 2,
        "horizon_minutes": 2880,
        "seed": 99,
        "contacts": [{"a": 0, "b": 1, "start_minute": 30, "end_minute": 55}],
        "diagnoses": [{"device": 1, "day": 0}],
        "ha_credential": "ha-http"
    }))
    .unwrap();

    let in_process = {
        let ledger = Ledger::new(scenario.ledger_config(), 7);
        Simulation::new(scenario.clone(), InProcessBackend::new(ledger))
            .unwrap()
            .run_to_end()
            .unwrap()
    };

    let over_http = {
        let clock = Arc::new(ManualClock::default());
        let ledger = Ledger::new(scenario.ledger_config(), 7);
        let state = BackendState::new(ledger, Arc::clone(&clock));
        let server = spawn_server(state).expect("spawn server");
        let backend = HttpBackend { client: server.client(), clock };
        Simulation::new(scenario, backend).unwrap().run_to_end().unwrap()
    };

    assert_eq!(in_process.to_json_bytes(), over_http.to_json_bytes());
}

#[test]
fn lossy_reports_are_deterministic() {
    let scenario: Scenario = serde_json::from_value(serde_json::json!({
        "devices": 3,
        "horizon_minutes": 1440,
        "seed": 5,
        "loss_probability": 0.25,
        "contacts": [
            {"a": 0, "b": 1, "start_minute": 10, "end_minute": 70},
            {"a": 1, "b": 2, "start_minute": 100, "end_minute": 160}
        ]
    }))
    .unwrap();
    let a = sim::run(scenario.clone()).unwrap().to_json_bytes();
    let b = sim::run(scenario).unwrap().to_json_bytes();
    assert_eq!(a, b);
}
