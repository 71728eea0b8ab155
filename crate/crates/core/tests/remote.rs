use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use mas_budget::error::ExecutionError;
use mas_budget::executor::{RemoteBackend, RemoteConfig};
use serde_json::Value;

#[derive(Clone, Copy)]
enum Reply {
    Ok { usage: bool },
    ServerError,
    Hang,
}

/// Serves one scripted reply per connection; returns the URL and the
/// captured (authorization header, body) of every request.
fn serve(script: Vec<Reply>) -> (String, Arc<Mutex<Vec<(Option<String>, Value)>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for reply in script {
            let (stream, _) = listener.accept().unwrap();
            let (auth, body) = read_request(&stream);
            log.lock().unwrap().push((auth, body));
            respond(stream, reply);
        }
    });
    (url, seen)
}

fn read_request(stream: &TcpStream) -> (Option<String>, Value) {
    let mut r = BufReader::new(stream);
    let mut len = 0;
    let mut auth = None;
    loop {
        let mut line = String::new();
        r.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
        if lower.starts_with("authorization:") {
            auth = Some(line["authorization:".len()..].trim().to_string());
        }
    }
    let mut body = vec![0; len];
    r.read_exact(&mut body).unwrap();
    (auth, serde_json::from_slice(&body).unwrap())
}

fn respond(mut stream: TcpStream, reply: Reply) {
    let (status, body) = match reply {
        Reply::Ok { usage: true } => (
            "200 OK",
            r#"{"choices":[{"message":{"role":"assistant","content":"four words of text"}}],"usage":{"prompt_tokens":17,"completion_tokens":4}}"#,
        ),
        Reply::Ok { usage: false } => (
            "200 OK",
            r#"{"choices":[{"message":{"role":"assistant","content":"four words of text"}}]}"#,
        ),
        Reply::ServerError => ("500 Internal Server Error", r#"{"error":"busy"}"#),
        Reply::Hang => {
            thread::sleep(Duration::from_millis(800));
            return;
        }
    };
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
}

fn config(url: String) -> RemoteConfig {
    let mut c = RemoteConfig::new(url);
    c.timeout_secs = 0.3;
    c.backoff_ms = 1;
    c.models.insert("Qwen3-8B".into(), "qwen3-8b".into());
    c
}

#[test]
fn usage_metadata_passes_through() {
    let (url, seen) = serve(vec![Reply::Ok { usage: true }]);
    let backend = RemoteBackend::new(config(url), Some("secret".into()));
    let r = backend.complete_prompt("Qwen3-8B", "a b c").unwrap();
    assert_eq!((r.tokens_in, r.tokens_out), (17, 4));
    assert_eq!(r.text, "four words of text");
    assert!(!r.usage_estimated);
    assert_eq!(r.attempts, 1);
    let seen = seen.lock().unwrap();
    let (auth, body) = &seen[0];
    assert_eq!(auth.as_deref(), Some("Bearer secret"));
    assert_eq!(body["model"], "qwen3-8b");
    assert_eq!(body["temperature"], 0);
    assert_eq!(body["messages"][0]["content"], "a b c");
}

#[test]
fn missing_usage_is_estimated_from_whitespace() {
    let (url, _) = serve(vec![Reply::Ok { usage: false }]);
    let backend = RemoteBackend::new(config(url), None);
    let r = backend.complete_prompt("other-model", "one two three").unwrap();
    assert_eq!((r.tokens_in, r.tokens_out), (3, 4));
    assert!(r.usage_estimated);
}

#[test]
fn two_failures_then_success() {
    let (url, seen) = serve(vec![Reply::ServerError, Reply::ServerError, Reply::Ok { usage: true }]);
    let backend = RemoteBackend::new(config(url), None);
    let r = backend.complete_prompt("Qwen3-8B", "x").unwrap();
    assert_eq!(r.attempts, 3);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn repeated_timeouts_give_up() {
    let (url, _) = serve(vec![Reply::Hang, Reply::Hang, Reply::Hang]);
    let backend = RemoteBackend::new(config(url), None);
    match backend.complete_prompt("Qwen3-8B", "x") {
        Err(ExecutionError::Remote { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected a remote error, got {other:?}"),
    }
}
