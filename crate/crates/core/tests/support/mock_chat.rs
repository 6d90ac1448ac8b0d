//! Minimal chat-completions endpoint on a loopback port.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

#[derive(Clone)]
pub enum Behavior {
    /// Answers every request with this assistant text.
    Reply(String),
    /// Answers with a bare status code.
    Status(u16),
    /// Reads the request and never answers.
    Hang,
    /// Accepts and immediately closes the connection.
    Drop,
    /// Fails with 503 this many times, then replies.
    FlakyThenReply(usize, String),
}

pub struct MockChat {
    pub base_url: String,
    pub hits: Arc<AtomicUsize>,
    pub last_body: Arc<Mutex<Option<serde_json::Value>>>,
    pub last_auth: Arc<Mutex<Option<String>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<(Option<String>, serde_json::Value)> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut len = 0usize;
    let mut auth = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            match k.trim().to_ascii_lowercase().as_str() {
                "content-length" => len = v.trim().parse().ok()?,
                "authorization" => auth = Some(v.trim().to_owned()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some((auth, serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null)))
}

fn respond(stream: &mut TcpStream, status: u16, body: &str) {
    let reason = if status == 200 { "OK" } else { "ERR" };
    let msg = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(msg.as_bytes());
}

fn completion(text: &str) -> String {
    serde_json::json!({
        "id": "mock",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
    })
    .to_string()
}

impl MockChat {
    pub fn start(behavior: Behavior) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let last_body = Arc::new(Mutex::new(None));
        let last_auth = Arc::new(Mutex::new(None));
        let (h, b, a) = (hits.clone(), last_body.clone(), last_auth.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let n = h.fetch_add(1, Ordering::SeqCst);
                if let Behavior::Drop = behavior {
                    drop(stream);
                    continue;
                }
                let Some((auth, body)) = read_request(&mut stream) else { continue };
                *b.lock().unwrap() = Some(body);
                *a.lock().unwrap() = auth;
                match &behavior {
                    Behavior::Reply(text) => respond(&mut stream, 200, &completion(text)),
                    Behavior::Status(code) => respond(&mut stream, *code, "{}"),
                    Behavior::FlakyThenReply(fails, text) => {
                        if n < *fails {
                            respond(&mut stream, 503, "{}");
                        } else {
                            respond(&mut stream, 200, &completion(text));
                        }
                    }
                    Behavior::Hang => {
                        thread::spawn(move || {
                            thread::sleep(Duration::from_secs(30));
                            drop(stream);
                        });
                    }
                    Behavior::Drop => unreachable!(),
                }
            }
        });
        Self { base_url, hits, last_body, last_auth }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}
