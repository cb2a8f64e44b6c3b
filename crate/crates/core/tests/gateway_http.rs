use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use narrative_deid::gateway::{self, BackendConfig, ChatRequest, Gateway, GatewayError};
use serde_json::{json, Value};

/// Serves one scripted response per connection and reports each request body.
fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<Value>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            if let Some(req) = read_request(&stream) {
                let _ = tx.send(req);
            }
            let mut stream = stream;
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (url, rx)
}

fn read_request(stream: &TcpStream) -> Option<Value> {
    let mut reader = BufReader::new(stream);
    let mut len = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    serde_json::from_slice(&body).ok()
}

fn completion(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn config(url: &str, retries: u32) -> BackendConfig {
    BackendConfig {
        retries,
        backoff_base_ms: 1,
        timeout_ms: 2_000,
        model_name: Some("deid-tagger".into()),
        ..BackendConfig::http(url)
    }
}

#[test]
fn request_wire_format() {
    let (url, rx) = serve(vec![(200, completion("DRIVER @@@JOHN SMITH@@@ FLED"))]);
    let gw = Gateway::from_config(&config(&url, 0)).unwrap();
    let req = gateway::build_extraction_prompt("DRIVER JOHN SMITH FLED").unwrap().with_seed(Some(42));
    let resp = gw.complete(&req).unwrap();
    assert_eq!(resp.text, "DRIVER @@@JOHN SMITH@@@ FLED");
    assert!(resp.backend_id.contains("deid-tagger"));

    let body = rx.recv_timeout(Duration::from_secs(5)).unwrap();
    assert_eq!(body["model"], "deid-tagger");
    assert_eq!(body["seed"], 42);
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["messages"][0], json!({"role": "system", "content": gateway::EXTRACTION_SYSTEM_PROMPT}));
    assert_eq!(body["messages"][1], json!({"role": "user", "content": "DRIVER JOHN SMITH FLED"}));
}

#[test]
fn server_errors_are_retried() {
    let (url, rx) = serve(vec![(503, "{}".into()), (500, "{}".into()), (200, completion("OK"))]);
    let gw = Gateway::from_config(&config(&url, 2)).unwrap();
    let resp = gw.complete(&ChatRequest::new("s", "u")).unwrap();
    assert_eq!(resp.text, "OK");
    for _ in 0..3 {
        rx.recv_timeout(Duration::from_secs(5)).unwrap();
    }
}

#[test]
fn client_errors_are_not_retried() {
    let (url, _rx) = serve(vec![(400, "{}".into()), (200, completion("unused"))]);
    let gw = Gateway::from_config(&config(&url, 2)).unwrap();
    assert!(matches!(gw.complete(&ChatRequest::new("s", "u")), Err(GatewayError::BadResponse(_))));
}

#[test]
fn malformed_body_is_bad_response() {
    let (url, _rx) = serve(vec![(200, json!({"choices": []}).to_string())]);
    let gw = Gateway::from_config(&config(&url, 0)).unwrap();
    assert!(matches!(gw.complete(&ChatRequest::new("s", "u")), Err(GatewayError::BadResponse(_))));
}

#[test]
fn unreachable_endpoint_counts_attempts() {
    // Bind then drop to get a port nothing listens on.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let gw = Gateway::from_config(&config(&format!("http://127.0.0.1:{port}/v1/chat/completions"), 2)).unwrap();
    match gw.complete(&ChatRequest::new("s", "u")) {
        Err(GatewayError::TransportFailure { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected transport failure, got {other:?}"),
    }
}

#[test]
fn silent_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let hold = thread::spawn(move || {
        let conns: Vec<_> = (0..2).filter_map(|_| listener.accept().ok()).collect();
        thread::sleep(Duration::from_millis(600));
        drop(conns);
    });
    let cfg = BackendConfig {
        timeout_ms: 150,
        ..config(&url, 1)
    };
    let gw = Gateway::from_config(&cfg).unwrap();
    assert!(matches!(gw.complete(&ChatRequest::new("s", "u")), Err(GatewayError::Timeout { attempts: 2 })));
    hold.join().unwrap();
}

#[test]
fn oversize_completion_rejected() {
    let (url, _rx) = serve(vec![(200, completion(&"A".repeat(50)))]);
    let gw = Gateway::from_config(&config(&url, 0)).unwrap();
    let mut req = ChatRequest::new("s", "u");
    req.max_output_chars = 10;
    assert!(matches!(gw.complete(&req), Err(GatewayError::OversizeOutput { len: 50, max: 10 })));
}
