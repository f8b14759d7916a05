use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::Value;

use vwsd::gateway::{
    BackendError, ChatBackend, GatewayError, GenerationParams, HttpBackend, LlmGateway, ResponseCache, RetryPolicy,
};

struct Canned {
    status: &'static str,
    headers: Vec<(&'static str, &'static str)>,
    body: String,
}

fn ok(body: &str) -> Canned {
    Canned {
        status: "200 OK",
        headers: vec![],
        body: body.to_string(),
    }
}

fn status(status: &'static str) -> Canned {
    Canned {
        status,
        headers: vec![],
        body: "{\"error\":\"nope\"}".into(),
    }
}

/// Request head and JSON body as received.
type Seen = (String, Value);

/// Serves `responses` in order, one per connection, and records each request.
fn serve(responses: Vec<Canned>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for canned in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push((head, serde_json::from_slice(&body).unwrap_or(Value::Null)));
            let mut out = stream;
            let mut resp = format!(
                "HTTP/1.1 {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
                canned.status,
                canned.body.len()
            );
            for (k, v) in &canned.headers {
                resp.push_str(&format!("{k}: {v}\r\n"));
            }
            resp.push_str("\r\n");
            resp.push_str(&canned.body);
            out.write_all(resp.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}"), seen)
}

fn chat_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn request() -> vwsd::gateway::LlmRequest {
    GenerationParams::new("gpt-3.5-turbo").request("What is the meaning of tender embrace?")
}

#[test]
fn sends_openai_chat_body_and_reads_content() {
    let (url, seen) = serve(vec![ok(&chat_body("(C)"))]);
    let backend = HttpBackend::new(&url, Some("secret".into())).unwrap();
    assert_eq!(backend.send(&request()).unwrap(), "(C)");
    let seen = seen.lock().unwrap();
    let (head, body) = &seen[0];
    assert!(head.starts_with("POST /v1/chat/completions "));
    assert!(head.to_ascii_lowercase().contains("authorization: bearer secret"));
    assert_eq!(body["model"], "gpt-3.5-turbo");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 150);
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "What is the meaning of tender embrace?");
}

#[test]
fn reads_legacy_completion_shape() {
    let (url, _) = serve(vec![ok(r#"{"choices":[{"text":" (B)"}]}"#)]);
    let backend = HttpBackend::new(&format!("{url}/v1"), None).unwrap();
    assert_eq!(backend.send(&request()).unwrap(), " (B)");
}

#[test]
fn maps_statuses_to_backend_errors() {
    let mut limited = status("429 Too Many Requests");
    limited.headers.push(("Retry-After", "3"));
    let (url, _) = serve(vec![
        limited,
        status("401 Unauthorized"),
        status("503 Service Unavailable"),
        status("400 Bad Request"),
        ok("not json"),
    ]);
    let backend = HttpBackend::new(&url, None).unwrap();
    assert_eq!(
        backend.send(&request()),
        Err(BackendError::RateLimited {
            retry_after: Some(Duration::from_secs(3))
        })
    );
    assert!(matches!(backend.send(&request()), Err(BackendError::Auth(_))));
    assert!(matches!(backend.send(&request()), Err(BackendError::Transient(_))));
    assert!(matches!(backend.send(&request()), Err(BackendError::Fatal(_))));
    assert!(matches!(backend.send(&request()), Err(BackendError::Fatal(_))));
}

#[test]
fn gateway_retries_through_server_errors_and_caches() {
    let (url, seen) = serve(vec![
        status("500 Internal Server Error"),
        status("429 Too Many Requests"),
        ok(&chat_body("(A)")),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let waits = Arc::new(Mutex::new(Vec::new()));
    let w = waits.clone();
    let gw = LlmGateway::new(
        Some(Arc::new(HttpBackend::new(&url, None).unwrap())),
        ResponseCache::on_disk(dir.path()),
    )
    .with_retry(RetryPolicy {
        base: Duration::from_millis(10),
        factor: 2,
        max_attempts: 5,
    })
    .with_sleeper(Arc::new(move |d| w.lock().unwrap().push(d)));
    let first = gw.complete(&request()).unwrap();
    assert_eq!(first.text, "(A)");
    assert!(!first.cached);
    assert_eq!(*waits.lock().unwrap(), vec![Duration::from_millis(10), Duration::from_millis(20)]);
    assert_eq!(seen.lock().unwrap().len(), 3);

    // a fresh offline gateway over the same directory replays without the server
    let replay = LlmGateway::offline(ResponseCache::on_disk(dir.path()));
    let again = replay.complete(&request()).unwrap();
    assert_eq!(again.text, "(A)");
    assert!(again.cached);
}

#[test]
fn auth_failure_is_not_retried() {
    let (url, seen) = serve(vec![status("401 Unauthorized")]);
    let gw = LlmGateway::new(
        Some(Arc::new(HttpBackend::new(&url, None).unwrap())),
        ResponseCache::in_memory(),
    )
    .with_sleeper(Arc::new(|_| {}));
    assert!(matches!(gw.complete(&request()), Err(GatewayError::Auth(_))));
    assert_eq!(seen.lock().unwrap().len(), 1);
}
