use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use agfsync_core::backend::{
    complete_text, embed, rate_aesthetics, AestheticBackend, BackendError, BackendKind, EmbedPayload, LlmBackend,
    T2iBackend, VqaBackend,
};
use agfsync_gateway::wire::{decode_bytes, CompleteRequest, VqaRequest};
use agfsync_gateway::{EndpointConfig, HttpBackend};

type Handler = dyn Fn(usize, &str) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server: one request per connection, replies from `handler`
/// called with the zero-based request count and the request body.
struct Scripted {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<String>>>,
}

fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream);
    let mut len = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            break;
        }
        if line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

fn serve(handler: Box<Handler>) -> Scripted {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let handler: Arc<Handler> = Arc::from(handler);
    let (h, b) = (hits.clone(), bodies.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let (h, b, handler) = (h.clone(), b.clone(), handler.clone());
            thread::spawn(move || {
                let body = read_request(&mut stream);
                let n = h.fetch_add(1, Ordering::SeqCst);
                b.lock().unwrap().push(body.clone());
                let (status, reply) = handler(n, &body);
                let head = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                    reply.len()
                );
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    Scripted { url, hits, bodies }
}

fn endpoint(kind: BackendKind, url: &str, retries: u32) -> EndpointConfig {
    EndpointConfig { max_retries: retries, backoff_base_ms: 1, timeout_ms: 5_000, ..EndpointConfig::new(kind, url) }
}

#[test]
fn unreachable_endpoint_reports_all_attempts() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let b = HttpBackend::new(endpoint(BackendKind::Llm, &format!("http://127.0.0.1:{port}"), 2));
    match b.complete("hello", 0) {
        Err(BackendError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn server_errors_are_retried_until_success() {
    let s = serve(Box::new(|n, _| if n < 2 { (503, "{}".into()) } else { (200, r#"{"text":"ok"}"#.into()) }));
    let b = HttpBackend::new(endpoint(BackendKind::Llm, &s.url, 3));
    assert_eq!(b.complete("hi", 7).unwrap(), "ok");
    assert_eq!(s.hits.load(Ordering::SeqCst), 3);
    // the same request id on every attempt
    let bodies = s.bodies.lock().unwrap();
    let ids: Vec<String> =
        bodies.iter().map(|b| serde_json::from_str::<CompleteRequest>(b).unwrap().request_id).collect();
    assert!(ids.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(serde_json::from_str::<CompleteRequest>(&bodies[0]).unwrap().seed, 7);
}

#[test]
fn server_errors_exhaust_retry_budget() {
    let s = serve(Box::new(|_, _| (500, r#"{"error":"boom"}"#.into())));
    let b = HttpBackend::new(endpoint(BackendKind::Vqa, &s.url, 2));
    assert!(matches!(b.answer(b"img", "q?"), Err(BackendError::Rejected { status: 500, .. })));
    assert_eq!(s.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let s = serve(Box::new(|_, _| (422, r#"{"error":"bad"}"#.into())));
    let b = HttpBackend::new(endpoint(BackendKind::Vqa, &s.url, 5));
    assert!(matches!(b.answer(b"img", "q?"), Err(BackendError::Rejected { status: 422, .. })));
    assert_eq!(s.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn reply_contracts_are_checked() {
    let empty = serve(Box::new(|_, _| (200, r#"{"text":"  "}"#.into())));
    let llm = HttpBackend::new(endpoint(BackendKind::Llm, &empty.url, 0));
    assert_eq!(complete_text(&llm, "x", 0), Err(BackendError::EmptyReply));

    let high = serve(Box::new(|_, _| (200, r#"{"score":1.5}"#.into())));
    let aes = HttpBackend::new(endpoint(BackendKind::Aesthetic, &high.url, 0));
    assert_eq!(aes.rate(b"x").unwrap(), 1.5);
    assert_eq!(rate_aesthetics(&aes, b"x"), Err(BackendError::OutOfRange(1.5)));

    let zero = serve(Box::new(|_, _| (200, r#"{"score":0.0}"#.into())));
    let aes = HttpBackend::new(endpoint(BackendKind::Aesthetic, &zero.url, 0));
    assert_eq!(rate_aesthetics(&aes, b"x"), Ok(0.0));

    let lying = serve(Box::new(|_, _| (200, r#"{"embedding":[1.0,0.0],"dim":3}"#.into())));
    let emb = HttpBackend::new(endpoint(BackendKind::Embed, &lying.url, 0));
    assert!(matches!(embed(&emb, EmbedPayload::Text("t"), None), Err(BackendError::Contract(_))));

    let short = serve(Box::new(|_, _| (200, r#"{"embedding":[1.0,0.0],"dim":2}"#.into())));
    let emb = HttpBackend::new(endpoint(BackendKind::Embed, &short.url, 0));
    assert!(matches!(embed(&emb, EmbedPayload::Text("t"), Some(4)), Err(BackendError::Contract(_))));

    let garbage = serve(Box::new(|_, _| (200, "not json".into())));
    let t2i = HttpBackend::new(endpoint(BackendKind::T2i, &garbage.url, 3));
    let cond = agfsync_core::backend::Embedding::new(vec![0.5]).unwrap();
    assert!(matches!(t2i.generate(&cond, 1), Err(BackendError::Contract(_))));
    assert_eq!(garbage.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn images_travel_as_base64() {
    let s = serve(Box::new(|_, body| {
        let req: VqaRequest = serde_json::from_str(body).unwrap();
        let bytes = decode_bytes(&req.image_b64).unwrap();
        (200, format!(r#"{{"answer":"{} bytes"}}"#, bytes.len()))
    }));
    let b = HttpBackend::new(endpoint(BackendKind::Vqa, &s.url, 0));
    assert_eq!(b.answer(&[0, 255, 7], "q").unwrap(), "3 bytes");
}

#[test]
fn in_flight_requests_are_bounded() {
    let live = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (l, p) = (live.clone(), peak.clone());
    let s = serve(Box::new(move |_, _| {
        let now = l.fetch_add(1, Ordering::SeqCst) + 1;
        p.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(40));
        l.fetch_sub(1, Ordering::SeqCst);
        (200, r#"{"score":0.5}"#.into())
    }));
    let cfg = EndpointConfig { max_in_flight: 2, ..endpoint(BackendKind::Aesthetic, &s.url, 0) };
    let b = Arc::new(HttpBackend::new(cfg));
    let workers: Vec<_> = (0..8)
        .map(|_| {
            let b = b.clone();
            thread::spawn(move || b.rate(b"img").unwrap())
        })
        .collect();
    for w in workers {
        assert_eq!(w.join().unwrap(), 0.5);
    }
    assert_eq!(s.hits.load(Ordering::SeqCst), 8);
    assert!(peak.load(Ordering::SeqCst) <= 2, "peak {}", peak.load(Ordering::SeqCst));
}

#[test]
fn llm_id_prefers_configured_model_name() {
    let mut cfg = EndpointConfig::new(BackendKind::Llm, "http://h");
    assert_eq!(HttpBackend::new(cfg.clone()).id(), "llm@http://h");
    cfg.model = Some("gpt-x".into());
    assert_eq!(HttpBackend::new(cfg).id(), "gpt-x");
}
