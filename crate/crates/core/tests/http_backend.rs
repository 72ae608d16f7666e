//! The HTTP backend against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use reams_core::modelclient::{
    request_digest, Backend, BackendConfig, ChatModel, FinishReason, Message, ModelError, ModelRequest, ReplayCache,
};

struct Seen {
    path: String,
    authorization: Option<String>,
    body: serde_json::Value,
}

struct Server {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

fn completion(text: &str) -> (u16, String) {
    let body = serde_json::json!({
        "id": "x",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]
    });
    (200, body.to_string())
}

fn read_request(stream: &mut TcpStream) -> Option<Seen> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_string();
    let mut len = 0usize;
    let mut authorization = None;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (name, value) = h.split_once(':')?;
        match name.to_ascii_lowercase().as_str() {
            "content-length" => len = value.trim().parse().ok()?,
            "authorization" => authorization = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()?;
    Some(Seen { path, authorization, body: serde_json::from_slice(&body).ok()? })
}

/// Serves the scripted `(status, body)` replies in order, one per
/// connection, then 500s.
fn serve(replies: Vec<(u16, String)>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        let mut replies = replies.into_iter();
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let Some(req) = read_request(&mut stream) else { continue };
            log.lock().unwrap().push(req);
            let (status, body) = replies.next().unwrap_or((500, "exhausted".into()));
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    Server { url, seen }
}

fn request() -> ModelRequest {
    ModelRequest {
        model_id: "codellama-13b-instruct".into(),
        messages: vec![Message::user("Find 11^-1 mod 113.")],
        temperature: 0.0,
        max_tokens: 64,
        stop: None,
    }
}

fn config(url: &str) -> BackendConfig {
    let mut cfg = BackendConfig::http(url);
    cfg.backoff_base = Duration::from_millis(5);
    cfg.request_timeout = Duration::from_secs(5);
    cfg.api_key_env = "REAMS_TEST_HTTP_KEY".into();
    cfg
}

#[test]
fn success_sends_openai_shaped_body() {
    std::env::set_var("REAMS_TEST_HTTP_KEY", "sk-local");
    let server = serve(vec![completion("print(72)")]);
    let backend = Backend::from_config(&config(&server.url)).unwrap();
    let resp = backend.complete(&request()).unwrap();
    assert_eq!(resp.text, "print(72)");
    assert_eq!(resp.finish_reason, FinishReason::Stop);
    assert!(!resp.from_cache);

    let seen = server.seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sk-local"));
    assert_eq!(seen[0].body["model"], "codellama-13b-instruct");
    assert_eq!(seen[0].body["messages"][0]["role"], "user");
    assert_eq!(seen[0].body["max_tokens"], 64);
}

#[test]
fn server_errors_are_retried() {
    let server = serve(vec![(500, "oops".into()), (429, "slow down".into()), completion("print(1)")]);
    let resp = Backend::from_config(&config(&server.url)).unwrap().complete(&request()).unwrap();
    assert_eq!(resp.text, "print(1)");
    assert_eq!(server.seen.lock().unwrap().len(), 3);
}

#[test]
fn retries_are_bounded() {
    let server = serve(vec![]);
    let mut cfg = config(&server.url);
    cfg.max_retries = 2;
    let err = Backend::from_config(&cfg).unwrap().complete(&request()).unwrap_err();
    assert!(matches!(err, ModelError::HttpStatus { status: 500, .. }), "{err}");
    assert_eq!(server.seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_fail_fast_with_excerpt() {
    let long = format!("bad request: {}", "x".repeat(1000));
    let server = serve(vec![(400, long)]);
    let err = Backend::from_config(&config(&server.url)).unwrap().complete(&request()).unwrap_err();
    match err {
        ModelError::HttpStatus { status, body } => {
            assert_eq!(status, 400);
            assert!(body.starts_with("bad request"));
            assert!(body.chars().count() <= 301);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_success_body_is_an_error() {
    let server = serve(vec![(200, "{\"choices\": []}".into())]);
    let err = Backend::from_config(&config(&server.url)).unwrap().complete(&request()).unwrap_err();
    assert!(matches!(err, ModelError::MalformedResponse(_)));
}

#[test]
fn cache_fill_then_offline_replay() {
    let cache_dir = tempfile::tempdir().unwrap();
    let server = serve(vec![completion("print(72)")]);
    let mut cfg = config(&server.url);
    cfg.cache_dir = Some(cache_dir.path().to_path_buf());
    let live = Backend::from_config(&cfg).unwrap();
    assert!(!live.complete(&request()).unwrap().from_cache);
    let again = live.complete(&request()).unwrap();
    assert!(again.from_cache);
    assert_eq!(server.seen.lock().unwrap().len(), 1);

    let replay = Backend::from_config(&BackendConfig::replay(cache_dir.path())).unwrap();
    let replayed = replay.complete(&request()).unwrap();
    assert_eq!(replayed.text, "print(72)");
    assert!(ReplayCache::new(cache_dir.path()).entry_path(&request_digest(&request())).is_file());

    let mut other = request();
    other.messages[0].content.push('?');
    assert!(matches!(replay.complete(&other), Err(ModelError::CacheMiss(_))));
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let mut cfg = config(&url);
    cfg.max_retries = 1;
    let err = Backend::from_config(&cfg).unwrap().complete(&request()).unwrap_err();
    assert!(matches!(err, ModelError::Transport(_) | ModelError::Timeout(_)), "{err}");
}
