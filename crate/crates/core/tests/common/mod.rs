//! Local chat-completion endpoint for integration tests.

#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

pub enum Reply {
    Text(String),
    Truncated(String),
    Status(u16),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Arrive { seq: usize, body: Value },
    Commit { seq: usize, status: u16 },
}

type Handler = dyn Fn(&Value, usize) -> Reply + Send + Sync;

pub struct MockChat {
    pub url: String,
    server: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
    events: Arc<Mutex<Vec<Event>>>,
    max_in_flight: Arc<AtomicUsize>,
}

impl MockChat {
    /// Serves every request with `handler(body, arrival_index)` on `workers`
    /// threads, holding each request for `delay` before answering.
    pub fn start<F>(workers: usize, delay: Duration, handler: F) -> Self
    where
        F: Fn(&Value, usize) -> Reply + Send + Sync + 'static,
    {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind mock server"));
        let addr = server.server_addr().to_ip().expect("tcp listener");
        let handler: Arc<Handler> = Arc::new(handler);
        let events = Arc::new(Mutex::new(Vec::new()));
        let arrivals = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let workers = (0..workers)
            .map(|_| {
                let (server, handler, events) = (server.clone(), handler.clone(), events.clone());
                let (arrivals, in_flight, max_in_flight) = (arrivals.clone(), in_flight.clone(), max_in_flight.clone());
                std::thread::spawn(move || {
                    while let Ok(mut req) = server.recv() {
                        let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                        max_in_flight.fetch_max(now, Ordering::SeqCst);
                        let mut raw = String::new();
                        let _ = req.as_reader().read_to_string(&mut raw);
                        let body: Value = serde_json::from_str(&raw).unwrap_or(Value::Null);
                        let seq = {
                            let mut ev = events.lock().unwrap();
                            let seq = arrivals.fetch_add(1, Ordering::SeqCst);
                            ev.push(Event::Arrive { seq, body: body.clone() });
                            seq
                        };
                        std::thread::sleep(delay);
                        let (status, payload) = match handler(&body, seq) {
                            Reply::Text(t) => (200, completion(&t, "stop")),
                            Reply::Truncated(t) => (200, completion(&t, "length")),
                            Reply::Status(s) => (s, json!({"error": {"message": "injected"}}).to_string()),
                        };
                        events.lock().unwrap().push(Event::Commit { seq, status });
                        in_flight.fetch_sub(1, Ordering::SeqCst);
                        let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).unwrap();
                        let _ = req.respond(tiny_http::Response::from_string(payload).with_status_code(status).with_header(header));
                    }
                })
            })
            .collect();
        MockChat { url: format!("http://{addr}/v1/chat/completions"), server, workers, events, max_in_flight }
    }

    pub fn events(&self) -> Vec<Event> {
        self.events.lock().unwrap().clone()
    }

    pub fn requests(&self) -> usize {
        self.events().iter().filter(|e| matches!(e, Event::Arrive { .. })).count()
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for MockChat {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn completion(text: &str, finish: &str) -> String {
    json!({
        "id": "mock",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": finish}]
    })
    .to_string()
}

/// Text of the last message in a chat request body.
pub fn last_content(body: &Value) -> String {
    body["messages"].as_array().and_then(|m| m.last()).and_then(|m| m["content"].as_str()).unwrap_or_default().to_string()
}

pub fn has_system(body: &Value) -> bool {
    body["messages"].as_array().is_some_and(|m| m.iter().any(|x| x["role"] == "system"))
}

/// Round a conversation request belongs to: 0 without a system prompt,
/// otherwise one more than the largest `[round N]` tag quoted in the context.
pub fn request_round(body: &Value) -> usize {
    if !has_system(body) {
        return 0;
    }
    let text = last_content(body);
    let re = regex::Regex::new(r"\[round (\d+)\]").unwrap();
    re.captures_iter(&text).filter_map(|c| c[1].parse::<usize>().ok()).max().map_or(0, |r| r + 1)
}
