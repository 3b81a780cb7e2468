//! In-process chat server speaking the default dialect, for tests and demos.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum MockBehavior {
    /// Reply with the last user message, cut to the requested token cap.
    /// Requests carrying the critic instruction get `grade: N` when set.
    Echo { grade: Option<u8> },
    /// Reply with a fixed body, cut to the requested token cap.
    Fixed(String),
    /// Answer with a non-JSON body.
    Malformed,
    /// Answer every request with this HTTP status.
    Status(u16),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub body: Option<Value>,
}

struct Shared {
    behavior: Mutex<MockBehavior>,
    log: Mutex<Vec<RecordedRequest>>,
    stop: AtomicBool,
}

pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(behavior: MockBehavior) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            behavior: Mutex::new(behavior),
            log: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
        });
        let s = Arc::clone(&shared);
        let handle = thread::spawn(move || {
            for stream in listener.incoming() {
                if s.stop.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let s = Arc::clone(&s);
                    thread::spawn(move || {
                        let _ = serve(stream, &s);
                    });
                }
            }
        });
        Ok(Self {
            addr,
            shared,
            handle: Some(handle),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn set_behavior(&self, behavior: MockBehavior) {
        *self.shared.behavior.lock().expect("mock lock") = behavior;
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.shared.log.lock().expect("mock lock").clone()
    }

    /// Bodies of recorded chat requests, in arrival order.
    pub fn chat_bodies(&self) -> Vec<Value> {
        self.requests()
            .into_iter()
            .filter(|r| r.method == "POST")
            .filter_map(|r| r.body)
            .collect()
    }

    pub fn clear(&self) {
        self.shared.log.lock().expect("mock lock").clear();
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

fn truncate_words(s: &str, cap: u64) -> String {
    let words: Vec<&str> = s.split_whitespace().collect();
    if words.len() as u64 <= cap {
        s.trim().to_string()
    } else {
        words[..cap as usize].join(" ")
    }
}

/// The response body the mock returns for a chat request.
pub fn chat_response(behavior: &MockBehavior, request: &Value) -> Option<Value> {
    let model = request.get("model").and_then(Value::as_str).unwrap_or("");
    let messages = request.get("messages").and_then(Value::as_array)?;
    let cap = request
        .pointer("/options/num_predict")
        .and_then(Value::as_u64)
        .unwrap_or(u64::MAX);
    let content_of = |m: &Value| m.get("content").and_then(Value::as_str).unwrap_or("").to_string();
    let prompt_tokens: u64 = messages.iter().map(|m| word_count(&content_of(m))).sum();
    let is_critic = messages
        .iter()
        .any(|m| content_of(m) == super::scoring::CRITIC_INSTRUCTION);
    let raw = match behavior {
        MockBehavior::Echo { grade: Some(g) } if is_critic => format!("grade: {g}"),
        MockBehavior::Echo { .. } => messages
            .iter()
            .rev()
            .find(|m| m.get("role").and_then(Value::as_str) == Some("user"))
            .map(content_of)
            .unwrap_or_default(),
        MockBehavior::Fixed(body) => body.clone(),
        MockBehavior::Malformed | MockBehavior::Status(_) => return None,
    };
    let text = truncate_words(&raw, cap);
    Some(json!({
        "model": model,
        "message": {"role": "assistant", "content": text},
        "done": true,
        "prompt_eval_count": prompt_tokens,
        "eval_count": word_count(&text),
    }))
}

fn serve(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Ok(());
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();
    let mut content_length = 0usize;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 || h == "\r\n" || h == "\n" {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut raw = vec![0u8; content_length];
    reader.read_exact(&mut raw)?;
    let body: Option<Value> = serde_json::from_slice(&raw).ok();
    shared.log.lock().expect("mock lock").push(RecordedRequest {
        method: method.clone(),
        path: path.clone(),
        body: body.clone(),
    });

    let behavior = shared.behavior.lock().expect("mock lock").clone();
    let (status, payload) = match (&behavior, method.as_str(), path.as_str()) {
        (MockBehavior::Status(code), _, _) => (*code, String::from("{\"error\":\"mock\"}")),
        (_, "GET", "/api/tags") => (200, json!({"models": [{"name": "mock"}]}).to_string()),
        (MockBehavior::Malformed, "POST", "/api/chat") => (200, String::from("<<not json>>")),
        (_, "POST", "/api/chat") => match body.as_ref().and_then(|b| chat_response(&behavior, b)) {
            Some(v) => (200, v.to_string()),
            None => (400, String::from("{\"error\":\"bad request\"}")),
        },
        _ => (404, String::from("{\"error\":\"not found\"}")),
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        reason(status),
        payload.len()
    )?;
    out.flush()
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}
