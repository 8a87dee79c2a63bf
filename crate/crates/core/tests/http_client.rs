//! The chat-completion client against a throwaway local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use dptext_core::pipeline::{run_inference, HttpClient, LlmClient, LlmEndpointConfig, LlmError, RetryPolicy};

/// Serves one canned `(status, body)` per connection, in order, and
/// records each request body.
fn serve(responses: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            let mut head = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                head.push_str(&line);
            }
            let mut request = vec![0; length];
            reader.read_exact(&mut request).unwrap();
            log.lock().unwrap().push(format!("{head}\n{}", String::from_utf8(request).unwrap()));
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            reader.get_mut().write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn client(url: String, key_env: &str) -> HttpClient {
    HttpClient::new(LlmEndpointConfig {
        base_url: url,
        api_key_env: key_env.into(),
        timeout_secs: 5,
        ..LlmEndpointConfig::remote()
    })
    .unwrap()
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"continued text"}}]}"#;

#[test]
fn sends_chat_request_and_reads_content() {
    std::env::set_var("DPTEXT_HTTP_TEST_KEY", "sekrit");
    let (url, seen) = serve(vec![(200, OK)]);
    let c = client(url, "DPTEXT_HTTP_TEST_KEY");
    assert_eq!(c.generate("hello").unwrap(), "continued text");
    let request = seen.lock().unwrap()[0].clone();
    assert!(request.starts_with("POST /v1/chat/completions"), "{request}");
    assert!(request.to_ascii_lowercase().contains("authorization: bearer sekrit"));
    let body: serde_json::Value = serde_json::from_str(request.split("\n\n").last().unwrap()).unwrap();
    assert_eq!(body["model"], "gpt-4");
    assert_eq!(body["temperature"], 0.5);
    assert_eq!(body["max_tokens"], 100);
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "hello");
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, seen) = serve(vec![(503, "{}"), (429, "{}"), (200, OK)]);
    let c = client(url, "");
    assert_eq!(run_inference(&c, "p", &RetryPolicy::immediate()).unwrap(), "continued text");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_and_bad_bodies_are_endpoint_errors() {
    let (url, _) = serve(vec![(400, r#"{"error":"bad"}"#), (200, "not json")]);
    let c = client(url, "");
    assert!(matches!(
        run_inference(&c, "p", &RetryPolicy::immediate()),
        Err(LlmError::Endpoint { status: Some(400), .. })
    ));
    assert!(matches!(
        run_inference(&c, "p", &RetryPolicy::immediate()),
        Err(LlmError::Endpoint { .. })
    ));
}

#[test]
fn unreachable_server_times_out_after_retries() {
    // Bind then drop so the port is closed.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let c = client(format!("http://127.0.0.1:{port}/v1"), "");
    let err = run_inference(&c, "p", &RetryPolicy::immediate()).unwrap_err();
    assert!(matches!(err, LlmError::Timeout { attempts: 4, .. }), "{err}");
}
