//! HTTP provider against a one-thread local server speaking just enough HTTP/1.1.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use serde_json::{json, Value};

use mmfusion::embedding::{
    Embedder, EmbeddingProvider, HttpProvider, MockProvider, PromptSpec, RetryPolicy, TokenCache,
};
use mmfusion::Error;

struct Captured {
    request_line: String,
    authorization: Option<String>,
    body: Value,
}

/// Serves one canned `(status, body)` per connection, in order, and reports what it received.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut len = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => authorization = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let _ = tx.send(Captured {
                request_line: request_line.trim_end().to_string(),
                authorization,
                body: serde_json::from_slice(&buf).unwrap_or(Value::Null),
            });
            let mut out = stream;
            let _ = write!(
                out,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    (url, rx)
}

fn completion(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn request_follows_chat_contract() {
    let answer = MockProvider.complete("anything").unwrap();
    let (url, rx) = serve(vec![(200, completion(&answer))]);
    let p = HttpProvider::new(url, "gpt-4", "secret-key");
    assert_eq!(p.name(), "http:gpt-4");
    let text = p.complete("hello prompt").unwrap();
    assert_eq!(text, answer);

    let got = rx.recv().unwrap();
    assert!(got.request_line.starts_with("POST /v1/chat/completions"));
    assert_eq!(got.authorization.as_deref(), Some("Bearer secret-key"));
    assert_eq!(
        got.body,
        json!({"model": "gpt-4", "messages": [{"role": "user", "content": "hello prompt"}]})
    );
}

#[test]
fn server_error_is_a_provider_error() {
    let (url, _rx) = serve(vec![(500, "{}".into())]);
    let err = HttpProvider::new(url, "m", "k").complete("p").unwrap_err();
    assert!(matches!(err, Error::Provider { .. }), "{err}");
}

#[test]
fn missing_content_is_a_parse_error() {
    let (url, _rx) = serve(vec![(200, json!({"choices": []}).to_string())]);
    let err = HttpProvider::new(url, "m", "k").complete("p").unwrap_err();
    assert!(matches!(err, Error::Parse(_)), "{err}");
}

#[test]
fn embedder_retries_through_transient_failures() {
    let token = format!("[{}]", vec!["0.125"; 64].join(", "));
    let (url, rx) = serve(vec![
        (503, "{}".into()),
        (200, completion("no list here")),
        (200, completion(&token)),
    ]);
    let provider = HttpProvider::new(url, "m", "k");
    let cache = TokenCache::in_memory();
    let shots = mmfusion::data::shot_bank(&Default::default());
    let e = Embedder::new(&provider, &cache, PromptSpec::default(), shots).with_retry(RetryPolicy::no_delay(3));
    let record = mmfusion::data::synth_subject(&Default::default(), 0).record;
    let t = e.embed(&record, None).unwrap();
    assert_eq!(t.values(), vec![0.125f32; 64].as_slice());
    assert_eq!(rx.iter().take(3).count(), 3);
    assert_eq!(e.provider_calls(), 3);
}
