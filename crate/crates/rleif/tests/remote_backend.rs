//! The remote generation backend against a local stub HTTP server.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use rleif::evolver::{BackendError, GeneratorBackend, RemoteBackend};

/// Serve the scripted (status, body) responses on a fresh port, one
/// connection per response, capturing each raw request.
fn spawn_stub(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = thread::spawn(move || {
        let mut captured = Vec::new();
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut tmp = [0u8; 4096];
            let request = loop {
                let n = stream.read(&mut tmp).unwrap();
                if n == 0 {
                    break String::from_utf8_lossy(&buf).to_string();
                }
                buf.extend_from_slice(&tmp[..n]);
                if let Some(header_end) = find_subsequence(&buf, b"\r\n\r\n") {
                    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
                    let content_length = headers
                        .lines()
                        .find_map(|l| {
                            let (name, value) = l.split_once(':')?;
                            name.eq_ignore_ascii_case("content-length")
                                .then(|| value.trim().parse::<usize>().ok())?
                        })
                        .unwrap_or(0);
                    if buf.len() >= header_end + 4 + content_length {
                        break String::from_utf8_lossy(&buf).to_string();
                    }
                }
            };
            captured.push(request);
            let response = format!(
                "HTTP/1.1 {status} STATUS\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
        captured
    });
    (format!("http://{addr}/generate"), handle)
}

fn find_subsequence(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|window| window == needle)
}

#[test]
fn posts_prompt_and_seed_with_bearer_token() {
    let (url, handle) = spawn_stub(vec![(200, r#"{"text":"an evolved problem"}"#.into())]);
    let backend = RemoteBackend::with_token(url, "sekrit", Duration::from_secs(5), 0).unwrap();
    let out = backend.generate("make it harder", 42).unwrap();
    assert_eq!(out, "an evolved problem");
    let requests = handle.join().unwrap();
    assert_eq!(requests.len(), 1);
    let request = &requests[0];
    assert!(request.starts_with("POST /generate"));
    assert!(request
        .to_ascii_lowercase()
        .contains("authorization: bearer sekrit"));
    let body_start = request.find("\r\n\r\n").unwrap() + 4;
    let body: serde_json::Value = serde_json::from_str(&request[body_start..]).unwrap();
    assert_eq!(body["prompt"], "make it harder");
    assert_eq!(body["seed"], 42);
}

#[test]
fn retries_after_server_error() {
    let (url, handle) = spawn_stub(vec![
        (500, "oops".into()),
        (200, r#"{"text":"second try"}"#.into()),
    ]);
    let backend = RemoteBackend::with_token(url, "t", Duration::from_secs(5), 1).unwrap();
    assert_eq!(backend.generate("p", 0).unwrap(), "second try");
    assert_eq!(handle.join().unwrap().len(), 2);
}

#[test]
fn client_errors_do_not_retry() {
    let (url, handle) = spawn_stub(vec![(403, "denied".into())]);
    let backend = RemoteBackend::with_token(url, "t", Duration::from_secs(5), 3).unwrap();
    match backend.generate("p", 0) {
        Err(BackendError::HttpStatus { status: 403, .. }) => {}
        other => panic!("expected 403 error, got {other:?}"),
    }
    assert_eq!(handle.join().unwrap().len(), 1);
}

#[test]
fn malformed_response_is_an_error() {
    let (url, _handle) = spawn_stub(vec![(200, r#"{"words":"wrong shape"}"#.into())]);
    let backend = RemoteBackend::with_token(url, "t", Duration::from_secs(5), 0).unwrap();
    assert!(matches!(
        backend.generate("p", 0),
        Err(BackendError::MalformedResponse(_))
    ));
}

#[test]
fn exhausted_retries_return_last_error() {
    let (url, _handle) = spawn_stub(vec![(500, "a".into()), (500, "b".into())]);
    let backend = RemoteBackend::with_token(url, "t", Duration::from_secs(5), 1).unwrap();
    assert!(matches!(
        backend.generate("p", 0),
        Err(BackendError::HttpStatus { status: 500, .. })
    ));
}

#[test]
fn token_comes_from_the_environment() {
    // serialized inside one test: set, construct, unset, construct
    std::env::set_var(rleif::evolver::BACKEND_TOKEN_ENV, "from-env");
    assert!(RemoteBackend::new("http://127.0.0.1:1/x", Duration::from_secs(1), 0).is_ok());
    std::env::remove_var(rleif::evolver::BACKEND_TOKEN_ENV);
    assert!(matches!(
        RemoteBackend::new("http://127.0.0.1:1/x", Duration::from_secs(1), 0),
        Err(BackendError::MissingToken(_))
    ));
}
