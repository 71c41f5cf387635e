//! Wire-protocol tests against a scripted local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use qgen_core::backends::http::{
    HttpGenerator, HttpRetriever, HttpScalarScorer, HttpScorer, HttpTransport,
};
use qgen_core::backends::{
    BackendError, DistributionScorer, GenRequest, QueryGenerator, ScalarScorer,
};
use qgen_core::corpus::ProductDoc;
use qgen_core::labels::LabelSpace;
use qgen_core::retrieval::Retriever;

/// One recorded request: raw headers plus body.
#[derive(Debug, Clone)]
struct Captured {
    headers: String,
    body: String,
}

/// Serve each scripted (status, body) response to one connection, close,
/// and record what arrived. The last response repeats if more requests come.
fn spawn_server(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let captured = Arc::new(Mutex::new(Vec::new()));
    let captured_clone = Arc::clone(&captured);
    std::thread::spawn(move || {
        let mut remaining = responses;
        loop {
            let Ok((stream, _)) = listener.accept() else {
                break;
            };
            let mut reader = BufReader::new(stream);
            let mut headers = String::new();
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                if let Some(value) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = value.trim().parse().unwrap_or(0);
                }
                headers.push_str(&line);
                if line == "\r\n" || line == "\n" {
                    break;
                }
            }
            let mut body = vec![0u8; content_length];
            reader.read_exact(&mut body).ok();
            captured_clone.lock().unwrap().push(Captured {
                headers,
                body: String::from_utf8_lossy(&body).to_string(),
            });

            let (status, payload) = if remaining.len() > 1 {
                remaining.remove(0)
            } else {
                remaining.first().cloned().unwrap_or((200, String::new()))
            };
            let reason = match status {
                200 => "OK",
                400 => "Bad Request",
                500 => "Internal Server Error",
                _ => "Status",
            };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                payload.len()
            );
            let mut stream = reader.into_inner();
            stream.write_all(response.as_bytes()).ok();
        }
    });
    (format!("http://{addr}"), captured)
}

fn fast_transport(endpoint: &str) -> HttpTransport {
    HttpTransport::new(endpoint).with_retry_schedule(3, Duration::from_millis(5))
}

fn product(id: &str, title: &str, description: &str) -> ProductDoc {
    ProductDoc {
        product_id: id.into(),
        title: title.into(),
        description: description.into(),
        extras: Default::default(),
    }
}

#[test]
fn generator_round_trip_with_exact_field_names() {
    let (url, captured) = spawn_server(vec![(
        200,
        r#"{"id":"r1","query":"Query: wood bed frame","logprob":-0.25}"#.to_string(),
    )]);
    let backend = HttpGenerator::new(fast_transport(&url));
    let req = GenRequest::new("r1", "Label: E Product: solid wood platform bed", 150).unwrap();
    let resp = backend.generate(&req).unwrap();
    // The Query: marker is stripped by the shared output parser.
    assert_eq!(resp.query_text, "wood bed frame");
    assert_eq!(resp.logprob, -0.25);

    let captured = captured.lock().unwrap();
    let body: serde_json::Value = serde_json::from_str(&captured[0].body).unwrap();
    let mut keys: Vec<&String> = body.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(keys, ["id", "input_text", "max_output_chars"]);
    assert_eq!(body["id"], "r1");
    assert_eq!(body["max_output_chars"], 150);
}

#[test]
fn generator_retries_500_three_times_then_fails() {
    let (url, captured) = spawn_server(vec![
        (500, String::new()),
        (500, String::new()),
        (500, String::new()),
    ]);
    let backend = HttpGenerator::new(fast_transport(&url));
    let req = GenRequest::new("r1", "Product: chair", 64).unwrap();
    match backend.generate(&req) {
        Err(BackendError::Status {
            status: 500,
            attempts: 3,
            ..
        }) => {}
        other => panic!("expected 500 after 3 attempts, got {other:?}"),
    }
    assert_eq!(captured.lock().unwrap().len(), 3);
}

#[test]
fn generator_recovers_after_transient_500() {
    let (url, captured) = spawn_server(vec![
        (500, String::new()),
        (500, String::new()),
        (
            200,
            r#"{"id":"r1","query":"red chair","logprob":-0.1}"#.to_string(),
        ),
    ]);
    let backend = HttpGenerator::new(fast_transport(&url));
    let req = GenRequest::new("r1", "Product: chair", 64).unwrap();
    let resp = backend.generate(&req).unwrap();
    assert_eq!(resp.query_text, "red chair");
    assert_eq!(captured.lock().unwrap().len(), 3);
}

#[test]
fn generator_does_not_retry_4xx() {
    let (url, captured) = spawn_server(vec![(400, String::new())]);
    let backend = HttpGenerator::new(fast_transport(&url));
    let req = GenRequest::new("r1", "Product: chair", 64).unwrap();
    match backend.generate(&req) {
        Err(BackendError::Status {
            status: 400,
            attempts: 1,
            ..
        }) => {}
        other => panic!("expected immediate 400, got {other:?}"),
    }
    assert_eq!(captured.lock().unwrap().len(), 1);
}

#[test]
fn generator_rejects_mismatched_id_and_bad_logprob() {
    let (url, _) = spawn_server(vec![(
        200,
        r#"{"id":"other","query":"red chair","logprob":-0.1}"#.to_string(),
    )]);
    let backend = HttpGenerator::new(fast_transport(&url));
    let req = GenRequest::new("r1", "Product: chair", 64).unwrap();
    assert!(matches!(
        backend.generate(&req),
        Err(BackendError::Protocol(_))
    ));

    let (url, _) = spawn_server(vec![(
        200,
        r#"{"id":"r1","query":"red chair","logprob":0.5}"#.to_string(),
    )]);
    let backend = HttpGenerator::new(fast_transport(&url));
    assert!(matches!(
        backend.generate(&req),
        Err(BackendError::Protocol(_))
    ));
}

#[test]
fn generator_transport_failure_after_retries() {
    // Nothing listens here; connection is refused.
    let backend = HttpGenerator::new(
        HttpTransport::new("http://127.0.0.1:1").with_retry_schedule(2, Duration::from_millis(5)),
    );
    let req = GenRequest::new("r1", "Product: chair", 64).unwrap();
    match backend.generate(&req) {
        Err(BackendError::Transport { attempts: 2, .. }) => {}
        other => panic!("expected transport error after 2 attempts, got {other:?}"),
    }
}

#[test]
fn scorer_distribution_round_trip_and_field_names() {
    let (url, captured) = spawn_server(vec![(
        200,
        r#"{"id":"s0","probs":{"E":0.7,"S":0.2,"C":0.05,"I":0.05}}"#.to_string(),
    )]);
    let scorer = HttpScorer::new(fast_transport(&url), LabelSpace::builtin("esci").unwrap());
    let dist = scorer
        .score("red chair", &product("p1", "red chair", "a chair"))
        .unwrap();
    assert_eq!(dist.probs()[0], 0.7);
    assert_eq!(dist.argmax_label().render(), "E");

    let captured = captured.lock().unwrap();
    let body: serde_json::Value = serde_json::from_str(&captured[0].body).unwrap();
    let mut keys: Vec<&String> = body.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(keys, ["description", "id", "query", "title"]);
    assert_eq!(body["query"], "red chair");
    assert_eq!(body["title"], "red chair");
    assert_eq!(body["description"], "a chair");
}

#[test]
fn scorer_rejects_invalid_distribution() {
    // Sums to 1.2: the faulty-service case.
    let (url, _) = spawn_server(vec![(
        200,
        r#"{"id":"s0","probs":{"E":0.5,"S":0.3,"C":0.3,"I":0.1}}"#.to_string(),
    )]);
    let scorer = HttpScorer::new(fast_transport(&url), LabelSpace::builtin("esci").unwrap());
    match scorer.score("red chair", &product("p1", "chair", "")) {
        Err(BackendError::InvalidDistribution(_)) => {}
        other => panic!("expected InvalidDistribution, got {other:?}"),
    }
}

#[test]
fn scalar_scorer_round_trip() {
    let (url, _) = spawn_server(vec![(200, r#"{"id":"r0","score":2.75}"#.to_string())]);
    let scorer = HttpScalarScorer::new(fast_transport(&url));
    let score = scorer
        .score_scalar("red chair", &product("p1", "chair", ""))
        .unwrap();
    assert_eq!(score, 2.75);
}

#[test]
fn retriever_round_trip() {
    let (url, captured) = spawn_server(vec![(
        200,
        r#"{"id":"t0","product_ids":["p7","p3","p9"]}"#.to_string(),
    )]);
    let retriever = HttpRetriever::new(fast_transport(&url));
    let ids = retriever.retrieve("red chair", 3, Some("p1")).unwrap();
    assert_eq!(ids, ["p7", "p3", "p9"]);

    let captured = captured.lock().unwrap();
    let body: serde_json::Value = serde_json::from_str(&captured[0].body).unwrap();
    assert_eq!(body["k"], 3);
    assert_eq!(body["exclude"], "p1");
}

#[test]
fn bearer_token_passes_through() {
    let (url, captured) = spawn_server(vec![(
        200,
        r#"{"id":"r1","query":"red chair","logprob":-0.1}"#.to_string(),
    )]);
    let backend = HttpGenerator::new(fast_transport(&url).with_bearer_token("sekrit"));
    let req = GenRequest::new("r1", "Product: chair", 64).unwrap();
    backend.generate(&req).unwrap();
    let captured = captured.lock().unwrap();
    assert!(
        captured[0]
            .headers
            .to_ascii_lowercase()
            .contains("authorization: bearer sekrit"),
        "headers: {}",
        captured[0].headers
    );
}
