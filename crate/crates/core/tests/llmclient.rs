// SPDX-License-Identifier: Apache-2.0

use std::time::{Duration, Instant};

use frametrace::corpus::{Source, StoryRecord};
use frametrace::llmclient::{
    generate_story, query_frame_percentage, query_open_frames, zeroshot_records, ChatMessage, Endpoint, LlmClient,
    MockReply, MockServer, Transcript,
};
use frametrace::Error;

fn endpoint(server: &MockServer) -> Endpoint {
    Endpoint {
        timeout_secs: 2.0,
        max_retries: 3,
        backoff_base_secs: 0.01,
        ..Endpoint::new(server.base_url(), "mock-model")
    }
}

#[test]
fn passthrough() {
    let server = MockServer::scripted(vec![MockReply::chat("  exactly this \n")]).unwrap();
    let client = LlmClient::new(endpoint(&server)).unwrap();
    let out = client.chat_complete(&[ChatMessage::user("hi")], 0.0, 16).unwrap();
    assert_eq!(out.text, "  exactly this \n");
    assert_eq!(out.attempts, 1);
    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!((reqs[0].method.as_str(), reqs[0].path.as_str()), ("POST", "/v1/chat/completions"));
    let body = reqs[0].json().unwrap();
    assert_eq!(body["model"], "mock-model");
    assert_eq!(body["max_tokens"], 16);
    assert_eq!(body["messages"][0]["role"], "user");
}

#[test]
fn retries_on_429_then_succeeds() {
    let server = MockServer::scripted(vec![
        MockReply::status(429, "slow down"),
        MockReply::status(429, "slow down"),
        MockReply::chat("ok"),
    ])
    .unwrap();
    let client = LlmClient::new(endpoint(&server)).unwrap();
    let out = client.chat_complete(&[ChatMessage::user("hi")], 0.0, 8).unwrap();
    assert_eq!(out.text, "ok");
    assert_eq!(out.attempts - 1, 2, "two retries");
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn malformed_json_is_protocol_error_without_retry() {
    let server = MockServer::scripted(vec![MockReply::status(200, "{not json")]).unwrap();
    let client = LlmClient::new(endpoint(&server)).unwrap();
    assert!(matches!(client.chat_complete(&[ChatMessage::user("hi")], 0.0, 8), Err(Error::Protocol(_))));
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::scripted(vec![MockReply::status(401, "bad key")]).unwrap();
    let client = LlmClient::new(endpoint(&server)).unwrap();
    match client.chat_complete(&[ChatMessage::user("hi")], 0.0, 8) {
        Err(Error::Request { status, body }) => assert_eq!((status, body.as_str()), (401, "bad key")),
        other => panic!("{other:?}"),
    }
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn exhausted_retries_are_transport_errors() {
    let server = MockServer::scripted(vec![MockReply::status(503, "down")]).unwrap();
    let mut ep = endpoint(&server);
    ep.max_retries = 2;
    let client = LlmClient::new(ep.clone()).unwrap();
    let started = Instant::now();
    match client.chat_complete(&[ChatMessage::user("hi")], 0.0, 8) {
        Err(Error::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
    assert_eq!(server.requests().len(), 3);
    let bound = (0..2).map(|a| ep.backoff(a)).sum::<Duration>() + 3 * Duration::from_secs_f64(ep.timeout_secs);
    assert!(started.elapsed() < bound);
}

#[test]
fn timeouts_are_retried() {
    let server =
        MockServer::scripted(vec![MockReply::chat("late").delayed(Duration::from_millis(800)), MockReply::chat("quick")])
            .unwrap();
    let mut ep = endpoint(&server);
    ep.timeout_secs = 0.3;
    let out = LlmClient::new(ep).unwrap().chat_complete(&[ChatMessage::user("hi")], 0.0, 8).unwrap();
    assert_eq!((out.text.as_str(), out.attempts), ("quick", 2));
}

#[test]
fn bearer_token_from_environment() {
    let server = MockServer::scripted(vec![MockReply::chat("ok")]).unwrap();
    let mut ep = endpoint(&server);
    ep.api_key_env = Some("FRAMETRACE_TEST_KEY".into());
    // SAFETY: set before any client thread reads the environment; no other test uses this variable.
    unsafe { std::env::set_var("FRAMETRACE_TEST_KEY", "sk-test") };
    LlmClient::new(ep).unwrap().chat_complete(&[ChatMessage::user("hi")], 0.0, 8).unwrap();
    assert_eq!(server.requests()[0].header("authorization"), Some("Bearer sk-test"));
}

#[test]
fn wire_prompts_and_temperatures() {
    let server = MockServer::start(|req, _| {
        let prompt = req.user_prompt().unwrap_or_default();
        if prompt.starts_with("What percentage") {
            MockReply::chat("85%")
        } else if prompt.starts_with("Can you tell me") {
            MockReply::chat("1. Strict Father\n2. Us vs. Them")
        } else {
            MockReply::chat("Once upon a time.")
        }
    })
    .unwrap();
    let client = LlmClient::new(endpoint(&server)).unwrap();
    assert_eq!(generate_story(&client, "strict father", Source::Original).unwrap(), "Once upon a time.");
    assert_eq!(query_frame_percentage(&client, "Go to your room.", "Strict Father").unwrap(), 85);
    assert_eq!(query_open_frames(&client, "Go to your room.").unwrap(), ["Strict Father", "Us vs. Them"]);

    let reqs = server.requests();
    assert_eq!(
        reqs[0].user_prompt().unwrap(),
        "Please write a short original story which evokes/invokes the \"strict father\" frame (max one paragraph)."
    );
    assert_eq!(reqs[0].temperature(), Some(0.7));
    assert_eq!(
        reqs[1].user_prompt().unwrap(),
        "What percentage does the following text evoke the \"Strict Father\" frame? (Please give just the percentage with no additional words)\n\nGo to your room."
    );
    assert_eq!(reqs[1].temperature(), Some(0.0));
    assert_eq!(
        reqs[2].user_prompt().unwrap(),
        "Can you tell me which major cognitive frames are evoked by the following text? (Please keep your answer strictly short and name max 5 frames with no explanation)\n\nGo to your room."
    );
    for r in &reqs {
        assert_eq!(r.json().unwrap()["messages"].as_array().unwrap().len(), 1);
    }

    let with_system = LlmClient::new(endpoint(&server)).unwrap().with_system_prompt("be brief");
    query_frame_percentage(&with_system, "x", "NP").unwrap();
    let last = server.requests().pop().unwrap().json().unwrap();
    assert_eq!(last["messages"][0]["role"], "system");
}

#[test]
fn batch_zeroshot_with_transcript() {
    let server = MockServer::start(|req, _| {
        let p = req.user_prompt().unwrap_or_default();
        MockReply::chat(if p.contains("\"Strict Father\"") { "90" } else { "I'd say 10 percent." })
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("transcript.jsonl");
    let client = LlmClient::new(endpoint(&server)).unwrap().with_transcript(Transcript::open(&log).unwrap());
    let stories: Vec<StoryRecord> = (0..6)
        .map(|i| StoryRecord {
            id: format!("s{i}"),
            frame_label: "SF".into(),
            source: Source::Original,
            generator: "g".into(),
            text: format!("story {i}"),
            annotation: None,
            rephrased: false,
        })
        .collect();
    let out = zeroshot_records(&client, &stories, &["SF", "NP"], 4).unwrap();
    let recs: Vec<_> = out.into_iter().map(Result::unwrap).collect();
    assert_eq!(recs.len(), 12);
    assert_eq!((recs[0].story_id.as_str(), recs[0].frame_asked.as_str(), recs[0].percent), ("s0", "Strict Father", 90));
    assert_eq!((recs[1].frame_asked.as_str(), recs[1].percent), ("Nurturing Parent", 10));
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 12);
    for l in &lines {
        assert!(l["timestamp"].as_u64().unwrap() > 0);
        assert_eq!(l["attempt_count"], 1);
        assert_eq!(l["request"]["temperature"], 0.0);
        assert!(l["response"]["choices"].is_array());
    }
}
