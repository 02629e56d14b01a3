use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use driftbench::modelclient::{
    CompletionRequest, EndpointConfig, HttpBackend, ModelBackend, ModelClient, ModelError, PromptBody, ResponseCache,
};

/// Serves one scripted (status, body) per connection, in order, and records
/// the request bodies.
struct Stub {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<serde_json::Value>>>,
}

fn stub(script: Vec<(u16, &'static str)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let (h, b) = (hits.clone(), bodies.clone());
    thread::spawn(move || {
        for (status, body) in script {
            let Ok((mut stream, _)) = listener.accept() else { return };
            h.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            b.lock().unwrap().push(serde_json::from_slice(&buf).unwrap_or_default());
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    Stub { url, hits, bodies }
}

const OK: &str = r#"{"choices":[{"text":"returns the sum"}],"usage":{"prompt_tokens":5,"completion_tokens":3}}"#;

fn backend(url: &str, key_env: &str) -> HttpBackend {
    let mut cfg = EndpointConfig::new(url);
    cfg.api_key_env = key_env.to_string();
    cfg.backoff_base_ms = 1;
    HttpBackend::new(cfg)
}

#[test]
fn transient_failures_are_retried() {
    std::env::set_var("DB_TEST_KEY_RETRY", "secret");
    let s = stub(vec![(503, "{}"), (500, "{}"), (200, OK)]);
    let b = backend(&s.url, "DB_TEST_KEY_RETRY");
    let resp = b.complete(&CompletionRequest::text("m", "p")).unwrap();
    assert_eq!(resp.text, "returns the sum");
    assert_eq!(resp.usage.unwrap().completion_tokens, 3);
    assert_eq!(b.attempts(), 3);
    assert_eq!(s.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn missing_key_fails_before_any_request() {
    let s = stub(vec![(200, OK)]);
    let b = backend(&s.url, "DB_TEST_KEY_NEVER_SET");
    assert!(matches!(b.complete(&CompletionRequest::text("m", "p")), Err(ModelError::Auth(_))));
    assert_eq!(b.attempts(), 0);
    assert_eq!(s.hits.load(Ordering::SeqCst), 0);
}

#[test]
fn auth_rejection_is_not_retried() {
    std::env::set_var("DB_TEST_KEY_AUTH", "bad");
    let s = stub(vec![(401, r#"{"error":"bad key"}"#), (200, OK)]);
    let b = backend(&s.url, "DB_TEST_KEY_AUTH");
    assert!(matches!(b.complete(&CompletionRequest::text("m", "p")), Err(ModelError::Auth(_))));
    assert_eq!(b.attempts(), 1);
}

#[test]
fn persistent_rate_limit_gives_up_after_five_attempts() {
    std::env::set_var("DB_TEST_KEY_429", "k");
    let s = stub(vec![(429, "{}"); 5]);
    let b = backend(&s.url, "DB_TEST_KEY_429");
    match b.complete(&CompletionRequest::text("m", "p")) {
        Err(ModelError::RateLimited { attempts }) => assert_eq!(attempts, 5),
        other => panic!("{other:?}"),
    }
    assert_eq!(s.hits.load(Ordering::SeqCst), 5);
}

#[test]
fn cached_request_makes_no_network_call() {
    std::env::set_var("DB_TEST_KEY_CACHE", "k");
    let s = stub(vec![(200, OK)]);
    let dir = tempfile::tempdir().unwrap();
    let client = ModelClient::new(
        Box::new(backend(&s.url, "DB_TEST_KEY_CACHE")),
        Some(ResponseCache::open(dir.path()).unwrap()),
    );
    let req = CompletionRequest::text("m", "p");
    let a = client.complete(&req).unwrap();
    let b = client.complete(&req).unwrap();
    assert_eq!(a, b);
    assert_eq!(s.hits.load(Ordering::SeqCst), 1);
    assert_eq!(client.stats().hits, 1);
}

#[test]
fn chat_requests_use_messages() {
    std::env::set_var("DB_TEST_KEY_CHAT", "k");
    let s = stub(vec![(200, r#"{"choices":[{"message":{"role":"assistant","content":"x => x"}}]}"#)]);
    let b = backend(&s.url, "DB_TEST_KEY_CHAT");
    let mut req = CompletionRequest::text("chat-model", "");
    req.prompt = PromptBody::Chat {
        system: Some("sys".into()),
        user: "write identity".into(),
    };
    assert_eq!(b.complete(&req).unwrap().text, "x => x");
    let body = s.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "chat-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "write identity");
    assert!(body.get("prompt").is_none());
}
