//! Round-based orchestration of K agents over a communication graph.
//!
//! Round 0: every agent answers its initial prompt. Rounds `1..=T`: every
//! agent gets its system prompt, its own previous response and its
//! in-neighbors' previous responses. A round is a barrier: no request of
//! round `i + 1` is issued before all round-`i` responses are recorded.
//! Requests inside a round run concurrently up to a configured cap.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::{ChatClient, ChatMessage, RetryPolicy};
use crate::dataset::{self, DatasetError, ExperimentRecord};
use crate::graph::{
    self, build_combination_matrix, AgentProfile, AgentType, CombinationMatrix, DirectedGraph, ExperimentSetup,
    GraphError, GraphSpec,
};
use crate::prompts::{render_initial_prompt, render_system_prompt};
use crate::rng;
use crate::scoring::{parse_opinion_sentinel, nearest_raw, Scorer, StanceScore};

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

/// One agent's response in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub round: u32,
    pub agent_id: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_raw: Option<i8>,
    /// Stored in the record's `stance_scores` matrix, not per message.
    #[serde(skip)]
    pub score_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub retries: u32,
    /// Harness-wide event counter when the request was issued.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issued_seq: Option<u64>,
    /// Harness-wide event counter when the response (and its score) landed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_seq: Option<u64>,
}

impl AgentMessage {
    pub fn new(round: u32, agent_id: usize, text: impl Into<String>) -> Self {
        AgentMessage {
            round,
            agent_id,
            text: text.into(),
            score_raw: None,
            score_norm: None,
            truncated: false,
            retries: 0,
            issued_seq: None,
            completed_seq: None,
        }
    }
}

/// Everything a backend sees for one agent in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub round: u32,
    pub agent_id: usize,
    pub topic: String,
    /// Present for rounds >= 1.
    pub system_prompt: Option<String>,
    /// Present for round 0 only.
    pub initial_prompt: Option<String>,
    /// The agent's own round-(i-1) message; present for rounds >= 1.
    pub own_previous: Option<AgentMessage>,
    /// Round-(i-1) messages of the in-neighbors other than the agent itself,
    /// ascending by agent id.
    pub neighbor_messages: Vec<AgentMessage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub text: String,
    pub truncated: bool,
    pub retries: u32,
}

impl BackendResponse {
    pub fn text(text: impl Into<String>) -> Self {
        BackendResponse { text: text.into(), truncated: false, retries: 0 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{message}")]
pub struct BackendError {
    pub message: String,
    /// Whether the harness should re-invoke the backend. Backends that already
    /// retried internally return `false`.
    pub retryable: bool,
}

impl BackendError {
    pub fn retryable(message: impl Into<String>) -> Self {
        BackendError { message: message.into(), retryable: true }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        BackendError { message: message.into(), retryable: false }
    }
}

/// Produces an agent's response. All conversational state arrives through the
/// request; implementations must be safe to call from several threads.
pub trait AgentBackend: Send + Sync {
    fn respond(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

impl<B: AgentBackend + ?Sized> AgentBackend for &B {
    fn respond(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).respond(request)
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("record sink failed: {0}")]
    Sink(#[from] DatasetError),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment_id: Option<String>,
    pub topic: String,
    pub graph_spec: GraphSpec,
    pub graph: DirectedGraph,
    pub profiles: Vec<AgentProfile>,
    pub rounds: u32,
    /// State numeric weights in the system prompts.
    pub weighted: bool,
    pub ai_model: String,
    pub scorer_label: Option<String>,
    pub seed: Option<u64>,
    pub concurrency: usize,
    /// Harness-level retries around each backend call.
    pub retry: RetryPolicy,
}

impl ExperimentConfig {
    pub fn new(
        graph_spec: GraphSpec,
        graph: DirectedGraph,
        profiles: Vec<AgentProfile>,
        topic: impl Into<String>,
        rounds: u32,
    ) -> Result<Self, HarnessError> {
        let cfg = ExperimentConfig {
            experiment_id: None,
            topic: topic.into(),
            graph_spec,
            graph,
            profiles,
            rounds,
            weighted: true,
            ai_model: "synthetic".into(),
            scorer_label: None,
            seed: None,
            concurrency: 8,
            retry: RetryPolicy::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds the graph from a sampled setup, resampling until strongly
    /// connected when `require_connected` is set.
    pub fn from_setup(setup: &ExperimentSetup, rounds: u32, require_connected: bool) -> Result<Self, HarnessError> {
        let (spec, g) = if require_connected {
            let s = graph::generate_connected_graph(&setup.graph, graph::MAX_CONNECT_ATTEMPTS)?;
            (s.spec, s.graph)
        } else {
            (setup.graph, graph::generate_graph(&setup.graph)?)
        };
        Self::new(spec, g, setup.profiles.clone(), setup.topic, rounds)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.topic.trim().is_empty() {
            return Err(HarnessError::InvalidConfig("topic is empty".into()));
        }
        if self.graph.agents() != self.profiles.len() {
            return Err(HarnessError::InvalidConfig(format!(
                "{} profiles for {} agents",
                self.profiles.len(),
                self.graph.agents()
            )));
        }
        if self.graph.agents() != self.graph_spec.agents {
            return Err(HarnessError::InvalidConfig("graph size differs from graph_spec.agents".into()));
        }
        Ok(())
    }

    pub fn agents(&self) -> usize {
        self.graph.agents()
    }

    pub fn matrix(&self) -> Result<CombinationMatrix, GraphError> {
        build_combination_matrix(&self.graph, &self.profiles)
    }

    /// Record skeleton holding the configuration, with no responses yet.
    pub fn empty_record(&self) -> ExperimentRecord {
        let sc_weight = self
            .profiles
            .iter()
            .find(|p| p.agent_type == AgentType::SelfConfident)
            .map_or(AgentType::SelfConfident.default_self_weight(), |p| p.self_weight);
        let om_weight = self
            .profiles
            .iter()
            .find(|p| p.agent_type == AgentType::OpenMinded)
            .map_or(AgentType::OpenMinded.default_self_weight(), |p| p.self_weight);
        let mut rec = ExperimentRecord {
            schema_version: dataset::SCHEMA_VERSION,
            experiment_id: self.experiment_id.clone(),
            topic: self.topic.clone(),
            ai_model: self.ai_model.clone(),
            graph_type: self.graph_spec.kind,
            erdos_renyi_p: self.graph_spec.p,
            graph_seed: Some(self.graph_spec.seed),
            strongly_connected: Some(graph::is_strongly_connected(&self.graph)),
            self_confident_self_weight: sc_weight,
            open_minded_self_weight: Some(om_weight),
            weighted: Some(self.weighted),
            num_rounds: self.rounds,
            topology: self.graph.as_lists().to_vec(),
            agent_types: Some(self.profiles.iter().map(|p| p.agent_type).collect()),
            self_weights: None,
            initial_opinions: self.profiles.iter().map(|p| p.initial_stance).collect(),
            system_prompts: self
                .profiles
                .iter()
                .map(|p| render_system_prompt(p, &self.topic, self.weighted))
                .collect(),
            initial_prompts: self
                .profiles
                .iter()
                .map(|p| render_initial_prompt(p.initial_stance, &self.topic))
                .collect(),
            responses: Vec::new(),
            stance_scores: Vec::new(),
            scorer: self.scorer_label.clone(),
            execution_time: 0.0,
            complete: false,
            failure: None,
            seed: self.seed,
            extra: Default::default(),
        };
        // per-agent weights are only needed when they differ from the two type defaults
        let uniform = self.profiles.iter().all(|p| match p.agent_type {
            AgentType::SelfConfident => p.self_weight == sc_weight,
            AgentType::OpenMinded => p.self_weight == om_weight,
        });
        if !uniform {
            rec.self_weights = Some(self.profiles.iter().map(|p| p.self_weight).collect());
        }
        rec
    }
}

/// Receives the record after every completed round and once at the end.
pub trait RecordSink {
    fn persist(&mut self, record: &ExperimentRecord) -> Result<(), DatasetError>;
}

#[derive(Debug, Default)]
pub struct NullSink;

impl RecordSink for NullSink {
    fn persist(&mut self, _record: &ExperimentRecord) -> Result<(), DatasetError> {
        Ok(())
    }
}

/// Keeps every snapshot in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub snapshots: Vec<ExperimentRecord>,
}

impl RecordSink for MemorySink {
    fn persist(&mut self, record: &ExperimentRecord) -> Result<(), DatasetError> {
        self.snapshots.push(record.clone());
        Ok(())
    }
}

/// Rewrites one JSON file per snapshot (write to a temp file, then rename).
#[derive(Debug)]
pub struct JsonFileSink {
    path: PathBuf,
}

impl JsonFileSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        JsonFileSink { path: path.into() }
    }
}

impl RecordSink for JsonFileSink {
    fn persist(&mut self, record: &ExperimentRecord) -> Result<(), DatasetError> {
        dataset::write_record(record, &self.path)
    }
}

fn build_requests(cfg: &ExperimentConfig, round: u32, prev: &[AgentMessage]) -> Vec<BackendRequest> {
    (0..cfg.agents())
        .map(|agent| {
            let profile = &cfg.profiles[agent];
            if round == 0 {
                BackendRequest {
                    round,
                    agent_id: agent,
                    topic: cfg.topic.clone(),
                    system_prompt: None,
                    initial_prompt: Some(render_initial_prompt(profile.initial_stance, &cfg.topic)),
                    own_previous: None,
                    neighbor_messages: Vec::new(),
                }
            } else {
                BackendRequest {
                    round,
                    agent_id: agent,
                    topic: cfg.topic.clone(),
                    system_prompt: Some(render_system_prompt(profile, &cfg.topic, cfg.weighted)),
                    initial_prompt: None,
                    own_previous: Some(prev[agent].clone()),
                    neighbor_messages: cfg.graph.others(agent).map(|l| prev[l].clone()).collect(),
                }
            }
        })
        .collect()
}

fn call_with_retry(
    backend: &dyn AgentBackend,
    request: &BackendRequest,
    policy: &RetryPolicy,
) -> Result<(BackendResponse, u32), BackendError> {
    let mut retries = 0;
    loop {
        match backend.respond(request) {
            Ok(r) => return Ok((r, retries)),
            Err(e) if e.retryable && retries < policy.max_retries => {
                retries += 1;
                log::warn!(
                    "agent {} round {}: backend failed ({e}); retry {retries}/{}",
                    request.agent_id,
                    request.round,
                    policy.max_retries
                );
                std::thread::sleep(policy.backoff(retries));
            }
            Err(e) => {
                return Err(BackendError {
                    message: format!("{} (after {} attempts)", e.message, retries + 1),
                    retryable: false,
                })
            }
        }
    }
}

struct RoundContext<'a> {
    backend: &'a dyn AgentBackend,
    scorer: &'a dyn Scorer,
    topic: &'a str,
    policy: RetryPolicy,
    seq: &'a AtomicU64,
}

fn answer(ctx: &RoundContext<'_>, req: &BackendRequest) -> Result<AgentMessage, BackendError> {
    let issued = ctx.seq.fetch_add(1, Ordering::SeqCst);
    let (resp, harness_retries) = call_with_retry(ctx.backend, req, &ctx.policy)?;
    let mut msg = AgentMessage::new(req.round, req.agent_id, resp.text);
    msg.truncated = resp.truncated;
    msg.retries = harness_retries + resp.retries;
    match ctx.scorer.score(&msg.text, ctx.topic) {
        Ok(s) => {
            msg.score_raw = Some(s.raw);
            msg.score_norm = Some(s.normalized);
        }
        Err(e) => log::warn!("agent {} round {}: score missing ({e})", req.agent_id, req.round),
    }
    msg.issued_seq = Some(issued);
    msg.completed_seq = Some(ctx.seq.fetch_add(1, Ordering::SeqCst));
    Ok(msg)
}

fn run_round(
    ctx: &RoundContext<'_>,
    requests: &[BackendRequest],
    concurrency: usize,
) -> Vec<Result<AgentMessage, BackendError>> {
    let n = requests.len();
    let slots: Mutex<Vec<Option<Result<AgentMessage, BackendError>>>> = Mutex::new(vec![None; n]);
    let next = AtomicUsize::new(0);
    let workers = concurrency.clamp(1, n.max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let out = answer(ctx, &requests[i]);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Runs a full experiment. Backend failures that survive the retry budget
/// abort the run and return the partial record with `complete = false`;
/// scorer failures leave that score missing. Only sink failures are errors.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    backend: &dyn AgentBackend,
    scorer: &dyn Scorer,
    sink: &mut dyn RecordSink,
) -> Result<ExperimentRecord, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let seq = AtomicU64::new(0);
    let ctx = RoundContext { backend, scorer, topic: &cfg.topic, policy: cfg.retry, seq: &seq };
    let mut record = cfg.empty_record();
    let mut prev: Vec<AgentMessage> = Vec::new();

    for round in 0..=cfg.rounds {
        let requests = build_requests(cfg, round, &prev);
        let results = run_round(&ctx, &requests, cfg.concurrency);
        let mut row = vec![None; cfg.agents()];
        let mut messages = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        for (agent, r) in results.into_iter().enumerate() {
            match r {
                Ok(m) => {
                    row[agent] = m.score_norm;
                    messages.push(m);
                }
                Err(e) => failures.push(format!("agent {agent}: {e}")),
            }
        }
        record.responses.extend(messages.iter().cloned());
        record.stance_scores.push(row);
        record.execution_time = started.elapsed().as_secs_f64();
        if !failures.is_empty() {
            let reason = format!("round {round} aborted: {}", failures.join("; "));
            log::error!("{reason}");
            record.failure = Some(reason);
            sink.persist(&record)?;
            return Ok(record);
        }
        if round == cfg.rounds {
            record.complete = true;
        }
        sink.persist(&record)?;
        prev = messages;
    }
    Ok(record)
}

/// Opinion at the centre of each initial stance class.
pub fn initial_opinions_from_stances(profiles: &[AgentProfile]) -> Vec<f64> {
    profiles.iter().map(|p| p.initial_stance.nominal_score()).collect()
}

/// In-process agent that performs the DeGroot update on the numbers embedded
/// in its incoming messages and answers `OPINION=<value>`.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    matrix: CombinationMatrix,
    initial: Vec<f64>,
    noise: f64,
    seed: u64,
}

impl SyntheticBackend {
    pub fn new(matrix: CombinationMatrix, initial: Vec<f64>) -> Result<Self, HarnessError> {
        if initial.len() != matrix.agents() {
            return Err(HarnessError::InvalidConfig(format!(
                "{} initial opinions for {} agents",
                initial.len(),
                matrix.agents()
            )));
        }
        if initial.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(HarnessError::InvalidConfig("initial opinions must lie in [0, 1]".into()));
        }
        Ok(SyntheticBackend { matrix, initial, noise: 0.0, seed: 0 })
    }

    /// Adds uniform noise in `[-level, level]` (then clamps to `[0, 1]`) to
    /// every update. The draw depends only on `(seed, round, agent)`.
    pub fn with_noise(mut self, level: f64, seed: u64) -> Self {
        self.noise = level.max(0.0);
        self.seed = seed;
        self
    }

    fn parse(msg: &AgentMessage) -> Result<f64, BackendError> {
        parse_opinion_sentinel(&msg.text).ok_or_else(|| {
            BackendError::retryable(format!(
                "cannot read an opinion from agent {}'s message {:?}",
                msg.agent_id,
                msg.text.chars().take(60).collect::<String>()
            ))
        })
    }
}

impl AgentBackend for SyntheticBackend {
    fn respond(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let k = req.agent_id;
        if k >= self.matrix.agents() {
            return Err(BackendError::fatal(format!("agent {k} outside the matrix")));
        }
        if req.round == 0 {
            return Ok(BackendResponse::text(format!("OPINION={}", self.initial[k])));
        }
        let own = req
            .own_previous
            .as_ref()
            .ok_or_else(|| BackendError::fatal("missing own previous message"))?;
        let mut incoming = vec![(k, Self::parse(own)?)];
        for m in &req.neighbor_messages {
            incoming.push((m.agent_id, Self::parse(m)?));
        }
        incoming.sort_by_key(|(id, _)| *id);
        let mut value = 0.0;
        for &(from, mu) in &incoming {
            value += self.matrix.weight(from, k) * mu;
        }
        if self.noise > 0.0 {
            let stream = ((req.round as u64) << 32) | k as u64;
            let mut r = rng::seeded(rng::derive_seed(self.seed, stream));
            value += rng::uniform(&mut r, -self.noise, self.noise);
        }
        Ok(BackendResponse::text(format!("OPINION={}", value.clamp(0.0, 1.0))))
    }
}

/// Replays the responses stored in a record.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    responses: HashMap<(u32, usize), (String, bool)>,
}

impl ReplayBackend {
    pub fn from_record(record: &ExperimentRecord) -> Self {
        let responses = record
            .responses
            .iter()
            .map(|m| ((m.round, m.agent_id), (m.text.clone(), m.truncated)))
            .collect();
        ReplayBackend { responses }
    }
}

impl AgentBackend for ReplayBackend {
    fn respond(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        self.responses
            .get(&(req.round, req.agent_id))
            .map(|(text, truncated)| BackendResponse { text: text.clone(), truncated: *truncated, retries: 0 })
            .ok_or_else(|| {
                BackendError::fatal(format!("no stored response for agent {} round {}", req.agent_id, req.round))
            })
    }
}

/// Returns the scores stored alongside replayed responses, looked up by text.
#[derive(Debug, Clone, Default)]
pub struct ReplayScorer {
    by_text: HashMap<String, StanceScore>,
}

impl ReplayScorer {
    pub fn from_record(record: &ExperimentRecord) -> Self {
        let mut by_text = HashMap::new();
        for m in &record.responses {
            let norm = record
                .stance_scores
                .get(m.round as usize)
                .and_then(|row| row.get(m.agent_id))
                .copied()
                .flatten();
            if let Some(x) = norm {
                let raw = m.score_raw.unwrap_or_else(|| nearest_raw(x));
                by_text.entry(m.text.clone()).or_insert(StanceScore { raw, normalized: x });
            }
        }
        ReplayScorer { by_text }
    }
}

impl Scorer for ReplayScorer {
    fn score(&self, text: &str, _topic: &str) -> Result<StanceScore, crate::scoring::ScoreError> {
        self.by_text
            .get(text)
            .copied()
            .ok_or_else(|| crate::scoring::ScoreError::Unparseable(text.chars().take(60).collect()))
    }
}

/// User-turn content for rounds >= 1: the agent's own previous response,
/// then each neighbor's, labelled by participant id.
pub fn render_context(req: &BackendRequest) -> String {
    let mut parts = Vec::with_capacity(req.neighbor_messages.len() + 1);
    if let Some(own) = &req.own_previous {
        parts.push(format!("Your previous response:\n{}", own.text));
    }
    for m in &req.neighbor_messages {
        parts.push(format!("Participant {}:\n{}", m.agent_id, m.text));
    }
    parts.join("\n\n")
}

/// Maps a request to a chat call: round 0 sends the initial prompt as the
/// only user turn; later rounds send the system prompt plus the context.
pub fn chat_messages(req: &BackendRequest) -> Vec<ChatMessage> {
    match (&req.initial_prompt, &req.system_prompt) {
        (Some(initial), _) => vec![ChatMessage::user(initial.clone())],
        (None, Some(system)) => vec![ChatMessage::system(system.clone()), ChatMessage::user(render_context(req))],
        (None, None) => vec![ChatMessage::user(render_context(req))],
    }
}

/// Agent backed by a remote chat-completion endpoint.
#[derive(Debug)]
pub struct RemoteChatBackend {
    client: ChatClient,
}

impl RemoteChatBackend {
    pub fn new(client: ChatClient) -> Self {
        RemoteChatBackend { client }
    }
}

impl AgentBackend for RemoteChatBackend {
    fn respond(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let reply = self
            .client
            .complete(&chat_messages(req))
            .map_err(|e| BackendError::fatal(e.to_string()))?;
        if reply.truncated {
            log::warn!("agent {} round {}: response truncated", req.agent_id, req.round);
        }
        Ok(BackendResponse { text: reply.text, truncated: reply.truncated, retries: reply.retries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degroot;
    use crate::graph::GraphSpec;
    use crate::scoring::{Stance, StubNumericScorer};

    fn config(k: usize, rounds: u32) -> ExperimentConfig {
        let spec = GraphSpec::fully_connected(k);
        let g = graph::generate_graph(&spec).unwrap();
        let profiles = (0..k)
            .map(|i| {
                let t = if i % 2 == 0 { AgentType::SelfConfident } else { AgentType::OpenMinded };
                AgentProfile::new(t, Stance::ALL[i % 3])
            })
            .collect();
        let mut c = ExperimentConfig::new(spec, g, profiles, "Bitcoin", rounds).unwrap();
        c.retry = RetryPolicy::immediate(2);
        c
    }

    #[test]
    fn fully_connected_matches_degroot() {
        let cfg = config(3, 2);
        let a = cfg.matrix().unwrap();
        let mu0 = initial_opinions_from_stances(&cfg.profiles);
        let backend = SyntheticBackend::new(a.clone(), mu0.clone()).unwrap();
        let rec = run_experiment(&cfg, &backend, &StubNumericScorer, &mut NullSink).unwrap();
        assert!(rec.complete);
        let traj = degroot::simulate(&a, &mu0, 2).unwrap();
        for (row, expected) in rec.stance_scores.iter().zip(traj.rounds()) {
            for (got, want) in row.iter().zip(expected) {
                assert!((got.unwrap() - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_rounds_only_initial() {
        let cfg = config(4, 0);
        let backend = SyntheticBackend::new(cfg.matrix().unwrap(), vec![0.5; 4]).unwrap();
        let rec = run_experiment(&cfg, &backend, &StubNumericScorer, &mut NullSink).unwrap();
        assert_eq!(rec.responses.len(), 4);
        assert_eq!(rec.stance_scores.len(), 1);
        assert!(rec.complete);
    }

    struct Garbage;
    impl AgentBackend for Garbage {
        fn respond(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
            Ok(BackendResponse::text(if req.round == 0 { "garbage".to_string() } else { "x".into() }))
        }
    }

    #[test]
    fn unparseable_input_aborts_after_retries() {
        let cfg = config(3, 3);
        // round 0 answers are garbage, so the synthetic agent cannot read them in round 1
        struct Mixed(SyntheticBackend, std::sync::atomic::AtomicU32);
        impl AgentBackend for Mixed {
            fn respond(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
                if req.round == 0 {
                    return Garbage.respond(req);
                }
                self.1.fetch_add(1, Ordering::SeqCst);
                self.0.respond(req)
            }
        }
        let b = Mixed(
            SyntheticBackend::new(cfg.matrix().unwrap(), vec![0.5; 3]).unwrap(),
            std::sync::atomic::AtomicU32::new(0),
        );
        let mut sink = MemorySink::default();
        let rec = run_experiment(&cfg, &b, &StubNumericScorer, &mut sink).unwrap();
        assert!(!rec.complete);
        assert!(rec.failure.as_deref().unwrap().contains("round 1"));
        // 3 agents x (1 try + 2 retries)
        assert_eq!(b.1.load(Ordering::SeqCst), 9);
        // round-0 scores are missing (scorer failure) but the run went on
        assert!(rec.stance_scores[0].iter().all(|s| s.is_none()));
        assert_eq!(sink.snapshots.last().unwrap(), &rec);
    }

    #[test]
    fn context_lists_own_then_neighbors() {
        let cfg = config(3, 1);
        let prev: Vec<_> = (0..3).map(|k| AgentMessage::new(0, k, format!("m{k}"))).collect();
        let reqs = build_requests(&cfg, 1, &prev);
        assert_eq!(reqs[1].own_previous.as_ref().unwrap().text, "m1");
        let ids: Vec<_> = reqs[1].neighbor_messages.iter().map(|m| m.agent_id).collect();
        assert_eq!(ids, vec![0, 2]);
        let ctx = render_context(&reqs[1]);
        assert_eq!(ctx, "Your previous response:\nm1\n\nParticipant 0:\nm0\n\nParticipant 2:\nm2");
        let msgs = chat_messages(&reqs[1]);
        assert_eq!(msgs.len(), 2);
        assert!(!msgs[1].content.contains("weight"));
        let first = build_requests(&cfg, 0, &[]);
        assert!(first[0].system_prompt.is_none() && first[0].own_previous.is_none());
        assert_eq!(chat_messages(&first[0]).len(), 1);
    }

    #[test]
    fn noise_is_seeded() {
        let cfg = config(5, 6);
        let a = cfg.matrix().unwrap();
        let run = |seed| {
            let b = SyntheticBackend::new(a.clone(), vec![0.1, 0.9, 0.5, 0.2, 0.7]).unwrap().with_noise(0.05, seed);
            run_experiment(&cfg, &b, &StubNumericScorer, &mut NullSink).unwrap().stance_scores
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }
}
