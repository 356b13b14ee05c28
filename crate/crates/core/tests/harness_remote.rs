mod common;

use std::time::Duration;

use opinet_core::chat::{ChatClient, ChatEndpoint, RetryPolicy};
use opinet_core::graph::{generate_graph, AgentProfile, AgentType, GraphSpec};
use opinet_core::harness::{run_experiment, ExperimentConfig, MemorySink, RemoteChatBackend};
use opinet_core::scoring::{RemoteScorer, Stance, StubNumericScorer};

use common::{has_system, last_content, request_round, MockChat, Reply};

fn quick_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 3,
        initial_backoff: Duration::from_millis(2),
        max_backoff: Duration::from_millis(10),
        jitter: true,
    }
}

fn client(url: &str) -> ChatClient {
    let mut ep = ChatEndpoint::new(url, "mock-model");
    ep.retry = quick_retry();
    ChatClient::new(ep)
}

fn config(k: usize, rounds: u32, concurrency: usize) -> ExperimentConfig {
    let spec = GraphSpec::fully_connected(k);
    let profiles = (0..k)
        .map(|i| AgentProfile::new(if i % 2 == 0 { AgentType::SelfConfident } else { AgentType::OpenMinded }, Stance::ALL[i % 3]))
        .collect();
    let mut cfg = ExperimentConfig::new(spec, generate_graph(&spec).unwrap(), profiles, "Bitcoin", rounds).unwrap();
    cfg.concurrency = concurrency;
    cfg.retry = RetryPolicy::none();
    cfg.ai_model = "mock-model".into();
    cfg
}

#[test]
fn truncated_replies_are_flagged() {
    let mock = MockChat::start(2, Duration::ZERO, |body, _| {
        let r = request_round(body);
        if r == 1 {
            Reply::Truncated(format!("[round {r}] OPINION=0.5 and then the reply was cut"))
        } else {
            Reply::Text(format!("[round {r}] OPINION=0.5"))
        }
    });
    let cfg = config(3, 2, 3);
    let rec = run_experiment(&cfg, &RemoteChatBackend::new(client(&mock.url)), &StubNumericScorer, &mut MemorySink::default()).unwrap();
    assert!(rec.complete);
    for m in &rec.responses {
        assert_eq!(m.truncated, m.round == 1, "agent {} round {}", m.agent_id, m.round);
    }
}

#[test]
fn concurrency_cap_bounds_in_flight_requests() {
    let mock = MockChat::start(8, Duration::from_millis(20), |body, _| Reply::Text(format!("[round {}] OPINION=0.2", request_round(body))));
    let cfg = config(8, 1, 3);
    let rec = run_experiment(&cfg, &RemoteChatBackend::new(client(&mock.url)), &StubNumericScorer, &mut MemorySink::default()).unwrap();
    assert!(rec.complete);
    assert_eq!(mock.requests(), 16);
    assert!(mock.max_in_flight() <= 3, "saw {} concurrent requests", mock.max_in_flight());
    assert!(mock.max_in_flight() >= 2);
}

#[test]
fn unscorable_reply_is_stored_as_missing() {
    let agent_mock = MockChat::start(2, Duration::ZERO, |body, _| Reply::Text(format!("[round {}] I lean towards yes.", request_round(body))));
    // the scorer answers garbage for every round-1 text
    let scorer_mock = MockChat::start(2, Duration::ZERO, |body, _| {
        if last_content(body).contains("[round 1]") {
            Reply::Text("no idea".into())
        } else {
            Reply::Text("2".into())
        }
    });
    let cfg = config(3, 1, 2);
    let scorer = RemoteScorer::new(client(&scorer_mock.url)).with_parse_attempts(1);
    let rec = run_experiment(&cfg, &RemoteChatBackend::new(client(&agent_mock.url)), &scorer, &mut MemorySink::default()).unwrap();
    assert!(rec.complete);
    assert!(rec.stance_scores[0].iter().all(|s| *s == Some(5.0 / 6.0)));
    assert_eq!(rec.stance_scores[1], vec![None; 3]);
    assert_eq!(rec.responses.len(), 6);
    assert!(rec.responses.iter().filter(|m| m.round == 1).all(|m| m.score_raw.is_none()));
}

#[test]
fn fatal_status_aborts_with_partial_record() {
    let mock = MockChat::start(2, Duration::ZERO, |body, _| {
        if has_system(body) {
            Reply::Status(400)
        } else {
            Reply::Text("[round 0] OPINION=1".into())
        }
    });
    let cfg = config(2, 3, 2);
    let mut sink = MemorySink::default();
    let rec = run_experiment(&cfg, &RemoteChatBackend::new(client(&mock.url)), &StubNumericScorer, &mut sink).unwrap();
    assert!(!rec.complete);
    assert!(rec.failure.as_deref().unwrap().starts_with("round 1 aborted"));
    // the aborted round keeps a row with the failed agents missing
    assert_eq!(rec.stance_scores.len(), 2);
    assert_eq!(rec.stance_scores[1], vec![None, None]);
    // 400 is not transient: one attempt per agent in round 1
    assert_eq!(mock.requests(), 4);
    assert!(!sink.snapshots.is_empty());
    rec.validate().unwrap();
}

#[test]
fn retries_exhausted_on_persistent_503() {
    let mock = MockChat::start(2, Duration::ZERO, |_, _| Reply::Status(503));
    let cfg = config(2, 1, 1);
    let rec = run_experiment(&cfg, &RemoteChatBackend::new(client(&mock.url)), &StubNumericScorer, &mut MemorySink::default()).unwrap();
    assert!(!rec.complete);
    assert_eq!(rec.stance_scores, vec![vec![None, None]]);
    // each agent: initial attempt plus three retries
    assert_eq!(mock.requests(), 8);
}
