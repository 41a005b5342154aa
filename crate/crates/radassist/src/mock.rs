//! Minimal chat-completions server for tests and offline demos.
//!
//! Speaks just enough HTTP/1.1 to accept `POST /v1/chat/completions` and
//! answer with a scripted event stream. One thread per connection.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use radassist_core::RuleBackend;
use serde_json::{json, Value};

pub const PATH: &str = "/v1/chat/completions";

#[derive(Debug, Clone)]
pub enum MockReply {
    /// One chunk per delta, `delay` apart, then `[DONE]` when `done`.
    Stream {
        deltas: Vec<String>,
        delay: Duration,
        done: bool,
    },
    /// `data:` payloads sent verbatim, then the connection closes.
    Data(Vec<String>),
    /// Bare status response with a JSON error body.
    Status(u16),
    /// Response headers, then silence for this long.
    Stall(Duration),
    /// The default kidney rule table applied to the last user message.
    Rules,
}

impl MockReply {
    pub fn deltas<S: Into<String>>(deltas: impl IntoIterator<Item = S>) -> Self {
        Self::Stream {
            deltas: deltas.into_iter().map(Into::into).collect(),
            delay: Duration::ZERO,
            done: true,
        }
    }
}

type Script = dyn Fn(&Value) -> MockReply + Send + Sync;

pub struct MockChatServer {
    addr: SocketAddr,
    requests: Arc<Mutex<Vec<Value>>>,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl MockChatServer {
    /// Listens on an ephemeral localhost port.
    pub fn start(script: impl Fn(&Value) -> MockReply + Send + Sync + 'static) -> io::Result<Self> {
        Self::bind("127.0.0.1:0", script)
    }

    pub fn bind(addr: &str, script: impl Fn(&Value) -> MockReply + Send + Sync + 'static) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let script: Arc<Script> = Arc::new(script);
        let accept_thread = {
            let (requests, stop) = (Arc::clone(&requests), Arc::clone(&stop));
            std::thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(conn) = conn else { continue };
                    let (requests, script) = (Arc::clone(&requests), Arc::clone(&script));
                    std::thread::spawn(move || {
                        // the client hanging up mid-stream is expected
                        let _ = serve(conn, &requests, &*script);
                    });
                }
            })
        };
        Ok(Self {
            addr,
            requests,
            stop,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Request bodies received so far, in arrival order.
    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().unwrap().clone()
    }

    /// Blocks the calling thread until the process exits.
    pub fn wait(mut self) {
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockChatServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

fn serve(conn: TcpStream, requests: &Mutex<Vec<Value>>, script: &Script) -> io::Result<()> {
    let mut reader = BufReader::new(conn.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let mut out = conn;

    let mut parts = request_line.split_whitespace();
    let (method, path) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
    if method != "POST" || path != PATH {
        return write_status(&mut out, 404);
    }
    let Ok(request) = serde_json::from_slice::<Value>(&body) else {
        return write_status(&mut out, 400);
    };
    requests.lock().unwrap().push(request.clone());

    match script(&request) {
        MockReply::Status(code) => write_status(&mut out, code),
        MockReply::Stall(d) => {
            write_stream_head(&mut out)?;
            std::thread::sleep(d);
            Ok(())
        }
        MockReply::Data(payloads) => {
            write_stream_head(&mut out)?;
            for p in payloads {
                write!(out, "data: {p}\n\n")?;
            }
            out.flush()
        }
        MockReply::Stream { deltas, delay, done } => stream(&mut out, &request, &deltas, delay, done),
        MockReply::Rules => {
            let prompt = last_user_message(&request);
            match RuleBackend::default().suggestion_tokens(&prompt) {
                Ok(tokens) => stream(&mut out, &request, &tokens, Duration::ZERO, true),
                Err(_) => write_status(&mut out, 422),
            }
        }
    }
}

fn last_user_message(request: &Value) -> String {
    request["messages"]
        .as_array()
        .and_then(|m| m.iter().rev().find(|m| m["role"] == "user"))
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default()
        .to_owned()
}

fn write_status(out: &mut TcpStream, code: u16) -> io::Result<()> {
    let body = json!({"error": {"message": format!("mock status {code}")}}).to_string();
    write!(
        out,
        "HTTP/1.1 {code} Mock\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    out.flush()
}

fn write_stream_head(out: &mut TcpStream) -> io::Result<()> {
    out.write_all(
        b"HTTP/1.1 200 OK\r\nContent-Type: text/event-stream\r\nCache-Control: no-cache\r\nConnection: close\r\n\r\n",
    )?;
    out.flush()
}

fn stream(out: &mut TcpStream, request: &Value, deltas: &[String], delay: Duration, done: bool) -> io::Result<()> {
    write_stream_head(out)?;
    let model = request["model"].as_str().unwrap_or("mock");
    let role = json!({"id": "mock", "model": model, "choices": [{"index": 0, "delta": {"role": "assistant"}}]});
    write!(out, "data: {role}\n\n")?;
    for d in deltas {
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        let chunk = json!({"id": "mock", "model": model, "choices": [{"index": 0, "delta": {"content": d}}]});
        write!(out, "data: {chunk}\n\n")?;
        out.flush()?;
    }
    if done {
        let last = json!({"id": "mock", "model": model, "choices": [{"index": 0, "delta": {}, "finish_reason": "stop"}]});
        write!(out, "data: {last}\n\ndata: [DONE]\n\n")?;
    }
    out.flush()
}
