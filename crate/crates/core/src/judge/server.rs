//! In-process mock server hosting the four wire routes with the
//! deterministic mock implementations behind them.

use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::http::{read_request, write_response};
use super::mock::{MockBackend, MockEmbedder, MockJudge};
use super::{
    EmbedRequest, EmbedResponse, ErrorsRequest, GenerateRequest, JudgeError, ReportJudge,
    TemporalCategory, TemporalRequest, TemporalResponse,
};
use crate::metrics::TokenEmbedder;

#[derive(Default)]
struct ServerStats {
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    requests: AtomicUsize,
}

struct MockState {
    judge: MockJudge,
    embedder: MockEmbedder,
    stats: ServerStats,
    shutdown: AtomicBool,
}

/// A running mock server. Dropping the handle shuts it down.
pub struct MockServer {
    addr: std::net::SocketAddr,
    state: Arc<MockState>,
    accept_thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Bind and serve. Use port 0 to pick a free port.
    pub fn spawn(bind: &str) -> std::io::Result<MockServer> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        let state = Arc::new(MockState {
            judge: MockJudge::default(),
            embedder: MockEmbedder::default(),
            stats: ServerStats::default(),
            shutdown: AtomicBool::new(false),
        });
        let accept_state = Arc::clone(&state);
        let accept_thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_state.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let conn_state = Arc::clone(&accept_state);
                std::thread::spawn(move || handle_connection(stream, conn_state));
            }
        });
        Ok(MockServer {
            addr,
            state,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Highest number of concurrently handled requests observed so far.
    pub fn max_concurrent_observed(&self) -> usize {
        self.state.stats.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn requests_served(&self) -> usize {
        self.state.stats.requests.load(Ordering::SeqCst)
    }

    /// Stop accepting connections and join the accept loop.
    pub fn shutdown(&mut self) {
        if self.state.shutdown.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept with a no-op connection.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn handle_connection(mut stream: TcpStream, state: Arc<MockState>) {
    let current = state.stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state
        .stats
        .max_in_flight
        .fetch_max(current, Ordering::SeqCst);
    state.stats.requests.fetch_add(1, Ordering::SeqCst);

    let _ = stream.set_read_timeout(Some(std::time::Duration::from_secs(10)));
    let outcome = read_request(&mut stream).map(|request| route(&state, &request));
    // Leave the counted section before writing the response so the counter
    // tracks request handling, which client-side gates strictly contain.
    state.stats.in_flight.fetch_sub(1, Ordering::SeqCst);
    match outcome {
        Ok(Ok(body)) => {
            let _ = write_response(&mut stream, 200, &body);
        }
        Ok(Err((status, message))) => {
            let _ = write_response(
                &mut stream,
                status,
                &serde_json::json!({ "error": message }),
            );
        }
        Err(e) => {
            let _ = write_response(
                &mut stream,
                400,
                &serde_json::json!({ "error": e.to_string() }),
            );
        }
    }
}

type RouteResult = Result<serde_json::Value, (u16, String)>;

fn bad_request(message: impl Into<String>) -> (u16, String) {
    (400, message.into())
}

fn route(state: &MockState, request: &super::http::Request) -> RouteResult {
    if request.method != "POST" {
        return Err((405, format!("method {} not allowed", request.method)));
    }
    match request.path.as_str() {
        "/judge/errors" => {
            let req: ErrorsRequest =
                serde_json::from_slice(&request.body).map_err(|e| bad_request(e.to_string()))?;
            let verdict = state
                .judge
                .count_errors(&req.candidate, &req.reference)
                .map_err(|e| match e {
                    JudgeError::EmptyReference => bad_request(e.to_string()),
                    other => (500, other.to_string()),
                })?;
            Ok(serde_json::to_value(verdict).unwrap())
        }
        "/judge/temporal" => {
            let req: TemporalRequest =
                serde_json::from_slice(&request.body).map_err(|e| bad_request(e.to_string()))?;
            let category = state
                .judge
                .label_temporal(&req.current, Some(&req.prior))
                .map_err(|e| (500, e.to_string()))?;
            debug_assert_ne!(category, TemporalCategory::FirstStudy);
            Ok(serde_json::to_value(TemporalResponse {
                category: category.label().to_string(),
            })
            .unwrap())
        }
        "/embed" => {
            let req: EmbedRequest =
                serde_json::from_slice(&request.body).map_err(|e| bad_request(e.to_string()))?;
            if req.tokens.is_empty() {
                return Err(bad_request("tokens must be non-empty"));
            }
            let vectors = state
                .embedder
                .embed(&req.tokens)
                .map_err(|e| (500, e.to_string()))?;
            Ok(serde_json::to_value(EmbedResponse { vectors }).unwrap())
        }
        "/generate" => {
            let req: GenerateRequest =
                serde_json::from_slice(&request.body).map_err(|e| bad_request(e.to_string()))?;
            if req.temperature > 0.0 && req.seed.is_none() {
                return Err(bad_request("temperature > 0 requires a seed"));
            }
            // The wire mock echoes the prompt text back, truncated to the
            // token budget. Perfect-score plumbing tests use the in-process
            // echo backend, which knows the target.
            let generation = MockBackend::truncate(&req.prompt, req.max_tokens);
            Ok(serde_json::to_value(generation).unwrap())
        }
        other => Err((404, format!("no route {other}"))),
    }
}
