//! In-process HTTP fixture server for wire-level tests.
//!
//! Routes:
//! - `/status/<code>`          replies `<code>` to every method
//! - `/head-status/<code>`     replies `<code>` to HEAD and 200 to GET
//! - `/redirect/<n>`           302-chains down to `/redirect/0`, which is 200
//! - `/redirect-to/<code>`     302 to `/status/<code>`
//! - `/loop/a` and `/loop/b`   302 to each other forever
//! - `/slow/<ms>`              sleeps before a 200; extra path segments allowed
//! - `/flaky/<id>/<k>`         429 for the first `<k>` hits of the path, then 200
//! - `/garbage`                writes bytes that are not HTTP
//! - `/wayback`                availability endpoint; see [`wayback_body`]
//!
//! The `/wayback` route keys off markers in the `url` query parameter:
//! `hasarch` yields an available snapshot, `archfail` yields HTTP 500,
//! `badjson` yields unparseable JSON, anything else yields no snapshot.

#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

#[derive(Default)]
struct ServerState {
    hits: Mutex<HashMap<String, usize>>,
    agents: Mutex<Vec<String>>,
    inflight: AtomicUsize,
    peak: AtomicUsize,
    delay_ms: AtomicU64,
}

pub struct FixtureServer {
    addr: SocketAddr,
    state: Arc<ServerState>,
    shutdown: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl FixtureServer {
    pub fn start() -> FixtureServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind fixture server");
        let addr = listener.local_addr().expect("fixture server address");
        let state = Arc::new(ServerState::default());
        let shutdown = Arc::new(AtomicBool::new(false));
        let acceptor = {
            let state = Arc::clone(&state);
            let shutdown = Arc::clone(&shutdown);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let state = Arc::clone(&state);
                    std::thread::spawn(move || handle(stream, &state));
                }
            })
        };
        FixtureServer {
            addr,
            state,
            shutdown,
            acceptor: Some(acceptor),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn wayback_endpoint(&self) -> String {
        self.url("/wayback")
    }

    /// Requests seen for `method` on `path` (query string excluded).
    pub fn hits(&self, method: &str, path: &str) -> usize {
        let key = format!("{method} {path}");
        *self.state.hits.lock().unwrap().get(&key).unwrap_or(&0)
    }

    /// Requests seen for `path` across all methods.
    pub fn path_hits(&self, path: &str) -> usize {
        *self.state.hits.lock().unwrap().get(path).unwrap_or(&0)
    }

    pub fn total_hits(&self) -> usize {
        self.state
            .hits
            .lock()
            .unwrap()
            .iter()
            .filter(|(key, _)| !key.contains(' '))
            .map(|(_, n)| n)
            .sum()
    }

    /// Highest number of requests that were in flight at once.
    pub fn peak_inflight(&self) -> usize {
        self.state.peak.load(Ordering::SeqCst)
    }

    pub fn reset_peak(&self) {
        self.state.peak.store(0, Ordering::SeqCst);
    }

    /// Delay added to every response, on top of any `/slow` sleep.
    pub fn set_delay_ms(&self, ms: u64) {
        self.state.delay_ms.store(ms, Ordering::SeqCst);
    }

    /// Every User-Agent header seen, in arrival order.
    pub fn user_agents(&self) -> Vec<String> {
        self.state.agents.lock().unwrap().clone()
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.acceptor.take() {
            let _ = handle.join();
        }
    }
}

struct Request {
    method: String,
    path: String,
    query: String,
    user_agent: Option<String>,
}

fn read_request(stream: &mut TcpStream) -> Option<Request> {
    stream
        .set_read_timeout(Some(Duration::from_secs(10)))
        .ok()?;
    let mut head = Vec::new();
    let mut byte = [0u8; 1];
    while !head.ends_with(b"\r\n\r\n") {
        match stream.read(&mut byte) {
            Ok(1) => head.push(byte[0]),
            _ => return None,
        }
        if head.len() > 65_536 {
            return None;
        }
    }
    let text = String::from_utf8_lossy(&head);
    let mut lines = text.split("\r\n");
    let request_line = lines.next()?;
    let mut parts = request_line.split(' ');
    let method = parts.next()?.to_string();
    let target = parts.next()?;
    let (path, query) = match target.split_once('?') {
        Some((p, q)) => (p.to_string(), q.to_string()),
        None => (target.to_string(), String::new()),
    };
    let user_agent = lines
        .filter_map(|line| line.split_once(':'))
        .find(|(name, _)| name.eq_ignore_ascii_case("user-agent"))
        .map(|(_, value)| value.trim().to_string());
    Some(Request {
        method,
        path,
        query,
        user_agent,
    })
}

fn handle(mut stream: TcpStream, state: &ServerState) {
    let Some(request) = read_request(&mut stream) else {
        return;
    };
    let flight = state.inflight.fetch_add(1, Ordering::SeqCst) + 1;
    state.peak.fetch_max(flight, Ordering::SeqCst);

    let path_count = {
        let mut hits = state.hits.lock().unwrap();
        *hits
            .entry(format!("{} {}", request.method, request.path))
            .or_insert(0) += 1;
        let count = hits.entry(request.path.clone()).or_insert(0);
        *count += 1;
        *count
    };
    if let Some(agent) = &request.user_agent {
        state.agents.lock().unwrap().push(agent.clone());
    }

    let delay = state.delay_ms.load(Ordering::SeqCst);
    if delay > 0 {
        std::thread::sleep(Duration::from_millis(delay));
    }

    respond(&mut stream, &request, path_count);
    state.inflight.fetch_sub(1, Ordering::SeqCst);
}

fn respond(stream: &mut TcpStream, request: &Request, path_count: usize) {
    let segments: Vec<&str> = request.path.split('/').collect();
    let segment = |i: usize| segments.get(i).copied().unwrap_or("");
    let numeric = |i: usize| segment(i).parse::<u64>().ok();

    match segment(1) {
        "status" => {
            let code = numeric(2).unwrap_or(404) as u16;
            write_response(stream, request, code, &[], "ok");
        }
        "head-status" => {
            let code = numeric(2).unwrap_or(404) as u16;
            let code = if request.method == "HEAD" { code } else { 200 };
            write_response(stream, request, code, &[], "ok");
        }
        "redirect" => match numeric(2) {
            Some(0) => write_response(stream, request, 200, &[], "landed"),
            Some(n) => {
                let location = format!("/redirect/{}", n - 1);
                write_response(stream, request, 302, &[("Location", &location)], "");
            }
            None => write_response(stream, request, 404, &[], "no such hop"),
        },
        "redirect-to" => {
            let location = format!("/status/{}", segment(2));
            write_response(stream, request, 302, &[("Location", &location)], "");
        }
        "loop" => {
            let other = if segment(2) == "a" { "/loop/b" } else { "/loop/a" };
            write_response(stream, request, 302, &[("Location", other)], "");
        }
        "slow" => {
            let ms = numeric(2).unwrap_or(0);
            std::thread::sleep(Duration::from_millis(ms));
            write_response(stream, request, 200, &[], "finally");
        }
        "flaky" => {
            let threshold = numeric(3).unwrap_or(0) as usize;
            let code = if path_count <= threshold { 429 } else { 200 };
            write_response(stream, request, code, &[], "ok");
        }
        "garbage" => {
            let _ = stream.write_all(b"** this is not an http response **\r\n\r\n");
            let _ = stream.flush();
        }
        "wayback" => {
            let (code, body) = wayback_body(&request.query);
            write_response(stream, request, code, &[("Content-Type", "application/json")], &body);
        }
        _ => write_response(stream, request, 404, &[], "no such route"),
    }
}

/// Availability verdict keyed off markers inside the `url` query parameter.
fn wayback_body(query: &str) -> (u16, String) {
    let target = query
        .split('&')
        .find_map(|pair| pair.strip_prefix("url="))
        .unwrap_or("");
    if target.contains("archfail") {
        return (500, "availability backend down".to_string());
    }
    if target.contains("badjson") {
        return (200, "{\"archived_snapshots\": not json".to_string());
    }
    if target.contains("hasarch") {
        let body = serde_json::json!({
            "archived_snapshots": {
                "closest": {
                    "available": true,
                    "timestamp": "20200101000000",
                    "url": "https://web.archive.org/web/20200101000000/snapshot"
                }
            }
        });
        return (200, body.to_string());
    }
    (200, serde_json::json!({ "archived_snapshots": {} }).to_string())
}

fn reason(code: u16) -> &'static str {
    match code {
        200 => "OK",
        204 => "No Content",
        302 => "Found",
        304 => "Not Modified",
        403 => "Forbidden",
        404 => "Not Found",
        405 => "Method Not Allowed",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        501 => "Not Implemented",
        _ => "Status",
    }
}

fn write_response(
    stream: &mut TcpStream,
    request: &Request,
    code: u16,
    headers: &[(&str, &str)],
    body: &str,
) {
    let body = if request.method == "HEAD" || code == 204 || code == 304 {
        ""
    } else {
        body
    };
    let mut response = format!("HTTP/1.1 {} {}\r\nConnection: close\r\n", code, reason(code));
    for (name, value) in headers {
        response.push_str(&format!("{name}: {value}\r\n"));
    }
    response.push_str(&format!("Content-Length: {}\r\n\r\n{}", body.len(), body));
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}
