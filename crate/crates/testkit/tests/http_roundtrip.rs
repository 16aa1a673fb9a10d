use agfsync_core::backend::{EmbedPayload, Embedding};
use agfsync_core::eval::{parse_judge_reply, pairwise_tournament};
use agfsync_testkit::{http_backends, mock_backends, JudgeMode, MockServer, MockState};

#[test]
fn http_and_in_process_mocks_agree() {
    let server = MockServer::start(MockState::default()).unwrap();
    let http = http_backends(&server.url());
    let local = mock_backends(JudgeMode::Parity);

    assert_eq!(http.llm.id(), local.llm.id());
    let ins = "Generate 3 descriptions.";
    assert_eq!(http.llm.complete(ins, 9).unwrap(), local.llm.complete(ins, 9).unwrap());

    let cond = Embedding::new(vec![0.4, -0.1, 0.9]).unwrap();
    let png = http.t2i.generate(&cond, 5).unwrap();
    assert_eq!(png, local.t2i.generate(&cond, 5).unwrap());

    assert_eq!(http.vqa.answer(&png, "Is there a cat?").unwrap(), local.vqa.answer(&png, "Is there a cat?").unwrap());
    assert_eq!(http.embed.embed(EmbedPayload::Image(&png)).unwrap(), local.embed.embed(EmbedPayload::Image(&png)).unwrap());
    assert_eq!(http.embed.embed(EmbedPayload::Text("a cat")).unwrap(), local.embed.embed(EmbedPayload::Text("a cat")).unwrap());
    assert_eq!(http.aesthetic.rate(&png).unwrap(), local.aesthetic.rate(&png).unwrap());

    let reply = http.judge.judge("which?", &png, b"other").unwrap();
    assert_eq!(reply, local.judge.judge("which?", &png, b"other").unwrap());
    parse_judge_reply(&reply).unwrap();
}

#[test]
fn position_invariant_server_gives_consistent_tournaments() {
    let server = MockServer::start(MockState::with_judge(JudgeMode::PositionInvariant)).unwrap();
    let http = http_backends(&server.url());
    let t = pairwise_tournament(http.judge.as_ref(), "a lighthouse at dusk", b"left", b"right", true).unwrap();
    assert_eq!(t.inconsistencies(), 0);
    assert!(t.outcomes.iter().all(|o| o.choice.is_some()));
}

#[test]
fn malformed_payloads_are_rejected() {
    let server = MockServer::start(MockState::default()).unwrap();
    let resp = raw_post(&server.url(), "/v1/vqa", r#"{"request_id":"x","image_b64":"!!","question":"q"}"#);
    assert_eq!(resp, 422);
    let resp = raw_post(&server.url(), "/v1/embed", r#"{"request_id":"x"}"#);
    assert_eq!(resp, 422);
}

fn raw_post(base: &str, route: &str, body: &str) -> u16 {
    use std::io::{Read, Write};
    let addr = base.trim_start_matches("http://");
    let mut s = std::net::TcpStream::connect(addr).unwrap();
    write!(
        s,
        "POST {route} HTTP/1.1\r\nhost: {addr}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out.split_whitespace().nth(1).unwrap().parse().unwrap()
}
