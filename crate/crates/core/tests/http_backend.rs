use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use cwm_core::llm::{
    Action, BackendConfig, CompletionRequest, GatewayError, HttpBackend, LanguageModel,
    PromptBundle, RetryPolicy,
};
use serde_json::Value;

/// Reads one HTTP request and returns its JSON body.
fn read_request(stream: &mut TcpStream) -> Value {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
        if line == "\r\n" || line.is_empty() {
            break;
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    serde_json::from_slice(&body).unwrap()
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    let msg = format!(
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(msg.as_bytes()).unwrap();
}

fn request() -> CompletionRequest {
    CompletionRequest::new(
        Action::Generate,
        PromptBundle {
            system: "sys".into(),
            user: "usr".into(),
            assistant_prefix: "```python\n".into(),
        },
    )
}

fn config(port: u16) -> BackendConfig {
    let mut cfg = BackendConfig::new(format!("http://127.0.0.1:{port}/v1"), "test-model");
    cfg.api_key_env = "CWM_TEST_UNSET_KEY".into();
    cfg.retry = RetryPolicy {
        max_retries: 2,
        initial_backoff: Duration::from_millis(10),
    };
    cfg.request_timeout = Duration::from_secs(5);
    cfg
}

#[test]
fn retries_rate_limit_then_succeeds() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&bodies);
    let server = thread::spawn(move || {
        for (i, stream) in listener.incoming().take(2).enumerate() {
            let mut stream = stream.unwrap();
            seen.lock().unwrap().push(read_request(&mut stream));
            if i == 0 {
                respond(
                    &mut stream,
                    "429 Too Many Requests",
                    r#"{"error": "slow down"}"#,
                );
            } else {
                respond(
                    &mut stream,
                    "200 OK",
                    r#"{"choices": [{"message": {"role": "assistant", "content": "x = 1\n```"}}], "usage": {"prompt_tokens": 7, "completion_tokens": 3}}"#,
                );
            }
        }
    });

    let backend = HttpBackend::new(config(port)).unwrap();
    let resp = backend.complete(&request()).unwrap();
    server.join().unwrap();
    assert_eq!(resp.text, "x = 1\n```");
    assert_eq!(resp.usage.unwrap().completion_tokens, 3);

    let bodies = bodies.lock().unwrap();
    assert_eq!(bodies.len(), 2);
    let b = &bodies[1];
    assert_eq!(b["model"], "test-model");
    assert_eq!(b["max_tokens"], 1500);
    assert_eq!(b["temperature"], 1.0);
    assert_eq!(b["messages"][0]["role"], "system");
    assert_eq!(b["messages"][2]["content"], "```python\n");
}

#[test]
fn client_errors_are_not_retried() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let server = thread::spawn(move || {
        let mut stream = listener.incoming().next().unwrap().unwrap();
        read_request(&mut stream);
        respond(&mut stream, "400 Bad Request", r#"{"error": "bad"}"#);
    });
    let backend = HttpBackend::new(config(port)).unwrap();
    let err = backend.complete(&request()).unwrap_err();
    server.join().unwrap();
    assert!(
        matches!(err, GatewayError::Status { status: 400, .. }),
        "{err}"
    );
}

#[test]
fn timeout_surfaces_elapsed_time() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let _server = thread::spawn(move || {
        let mut held = Vec::new();
        for stream in listener.incoming().take(1) {
            let mut stream = stream.unwrap();
            read_request(&mut stream);
            held.push(stream);
        }
        thread::sleep(Duration::from_secs(3));
    });
    let mut cfg = config(port);
    cfg.request_timeout = Duration::from_millis(300);
    cfg.retry.max_retries = 0;
    let backend = HttpBackend::new(cfg).unwrap();
    let start = Instant::now();
    let err = backend.complete(&request()).unwrap_err();
    match &err {
        GatewayError::Transport { elapsed, .. } => {
            assert!(*elapsed >= Duration::from_millis(250), "{elapsed:?}");
            assert!(start.elapsed() < Duration::from_secs(2));
        }
        other => panic!("expected transport error, got {other}"),
    }
    assert!(err.to_string().contains("transport error after"));
}
