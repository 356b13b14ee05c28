//! Experiment records: canonical JSON schema, a tolerant reader for corpus
//! files whose key names differ, validation, corpus scanning and matrix
//! reconstruction.
//!
//! A record is one JSON object. Canonical keys, in write order:
//!
//! | key | type |
//! |---|---|
//! | `schema_version` | integer |
//! | `experiment_id` | string, optional |
//! | `topic` | string |
//! | `ai_model` | string |
//! | `graph_type` | `erdos_renyi` \| `fully_connected` \| `ring` |
//! | `erdos_renyi_p` | number or null (always written) |
//! | `graph_seed`, `strongly_connected` | optional |
//! | `self_confident_self_weight` | number |
//! | `open_minded_self_weight`, `weighted` | optional |
//! | `num_rounds` | integer `T`; rounds are `0..=T` |
//! | `topology` | per-agent sorted in-neighbor lists, self included |
//! | `agent_types`, `self_weights` | optional per-agent arrays |
//! | `initial_opinions` | per-agent `against` \| `neutral` \| `for` |
//! | `system_prompts`, `initial_prompts` | per-agent strings |
//! | `responses` | `{round, agent_id, text, score_raw?, ...}` in round-major order |
//! | `stance_scores` | `[round][agent]` normalized score or null |
//! | `scorer` | optional scorer label |
//! | `execution_time` | seconds |
//! | `complete` | bool |
//! | `failure`, `seed` | optional |
//!
//! Unknown top-level keys are kept and written back after the canonical ones.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::graph::{build_combination_matrix, AgentProfile, AgentType, CombinationMatrix, DirectedGraph, GraphKind};
use crate::harness::AgentMessage;
use crate::prompts::{parse_agent_type, parse_self_weight};
use crate::scoring::{discretize, Stance, RAW_MAX, RAW_MIN};

pub const SCHEMA_VERSION: u32 = 1;

/// One key per published record item; a record missing any of them is rejected.
pub const REQUIRED_FIELDS: [&str; 13] = [
    "topology",
    "responses",
    "system_prompts",
    "initial_prompts",
    "topic",
    "initial_opinions",
    "stance_scores",
    "graph_type",
    "erdos_renyi_p",
    "self_confident_self_weight",
    "num_rounds",
    "execution_time",
    "ai_model",
];

const KNOWN_FIELDS: [&str; 26] = [
    "schema_version",
    "experiment_id",
    "topic",
    "ai_model",
    "graph_type",
    "erdos_renyi_p",
    "graph_seed",
    "strongly_connected",
    "self_confident_self_weight",
    "open_minded_self_weight",
    "weighted",
    "num_rounds",
    "topology",
    "agent_types",
    "self_weights",
    "initial_opinions",
    "system_prompts",
    "initial_prompts",
    "responses",
    "stance_scores",
    "scorer",
    "execution_time",
    "complete",
    "failure",
    "seed",
    "extra",
];

const DEFAULT_ALIASES: &str = include_str!("../aliases.txt");

#[derive(Debug, Error, Clone, PartialEq)]
#[error("field `{field}`: {message}")]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl ValidationError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        ValidationError { field: field.to_string(), message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("missing required field `{0}`")]
    Missing(String),
    #[error("field `{field}` has the wrong shape: {message}")]
    Schema { field: String, message: String },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("record uses weightless prompts; no numeric weights to rebuild the matrix from")]
    Weightless,
    #[error("cannot determine the character of agents {0:?} from their system prompts")]
    UnknownAgentTypes(Vec<usize>),
    #[error("matrix reconstruction failed: {0}")]
    Reconstruct(String),
    #[error("corpus root {0} does not exist")]
    MissingRoot(PathBuf),
}

impl DatasetError {
    /// Name of the offending field, when the error is about one.
    pub fn field(&self) -> Option<&str> {
        match self {
            DatasetError::Missing(f) => Some(f),
            DatasetError::Schema { field, .. } => Some(field),
            DatasetError::Invalid(v) => Some(&v.field),
            _ => None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment_id: Option<String>,
    pub topic: String,
    pub ai_model: String,
    pub graph_type: GraphKind,
    pub erdos_renyi_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strongly_connected: Option<bool>,
    pub self_confident_self_weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open_minded_self_weight: Option<f64>,
    /// `Some(false)` for runs whose prompts state no weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted: Option<bool>,
    pub num_rounds: u32,
    pub topology: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_types: Option<Vec<AgentType>>,
    /// Per-agent self-weights, stored when they are not determined by type.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_weights: Option<Vec<f64>>,
    pub initial_opinions: Vec<Stance>,
    pub system_prompts: Vec<String>,
    pub initial_prompts: Vec<String>,
    pub responses: Vec<AgentMessage>,
    pub stance_scores: Vec<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<String>,
    pub execution_time: f64,
    #[serde(default = "default_true")]
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Unrecognized top-level keys, kept verbatim.
    #[serde(skip)]
    pub extra: Map<String, Value>,
}

impl ExperimentRecord {
    pub fn agents(&self) -> usize {
        self.topology.len()
    }

    pub fn graph(&self) -> Result<DirectedGraph, DatasetError> {
        DirectedGraph::from_in_neighbors(self.topology.clone())
            .map_err(|e| ValidationError::new("topology", e.to_string()).into())
    }

    /// Normalized scores of one round, or `None` if the round is absent.
    pub fn round_scores(&self, round: usize) -> Option<&[Option<f64>]> {
        self.stance_scores.get(round).map(Vec::as_slice)
    }

    /// Number of rounds with stored scores (round 0 included).
    pub fn scored_rounds(&self) -> usize {
        self.stance_scores.len()
    }

    /// Copies the score matrix into the per-message `score_norm` slots.
    pub fn sync_message_scores(&mut self) {
        for m in &mut self.responses {
            m.score_norm = self
                .stance_scores
                .get(m.round as usize)
                .and_then(|r| r.get(m.agent_id))
                .copied()
                .flatten();
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let k = self.topology.len();
        if k == 0 {
            return Err(ValidationError::new("topology", "no agents"));
        }
        DirectedGraph::from_in_neighbors(self.topology.clone())
            .map_err(|e| ValidationError::new("topology", e.to_string()))?;
        if self.topic.trim().is_empty() {
            return Err(ValidationError::new("topic", "empty"));
        }
        if self.ai_model.trim().is_empty() {
            return Err(ValidationError::new("ai_model", "empty"));
        }
        for (field, len) in [
            ("system_prompts", self.system_prompts.len()),
            ("initial_prompts", self.initial_prompts.len()),
            ("initial_opinions", self.initial_opinions.len()),
        ] {
            if len != k {
                return Err(ValidationError::new(field, format!("{len} entries for {k} agents")));
            }
        }
        if let Some(t) = &self.agent_types {
            if t.len() != k {
                return Err(ValidationError::new("agent_types", format!("{} entries for {k} agents", t.len())));
            }
        }
        let weight_ok = |w: f64| w > 0.0 && w <= 1.0;
        if let Some(w) = &self.self_weights {
            if w.len() != k || !w.iter().all(|&x| weight_ok(x)) {
                return Err(ValidationError::new("self_weights", "expected one weight in (0, 1] per agent"));
            }
        }
        if !weight_ok(self.self_confident_self_weight) {
            return Err(ValidationError::new(
                "self_confident_self_weight",
                format!("{} outside (0, 1]", self.self_confident_self_weight),
            ));
        }
        if let Some(w) = self.open_minded_self_weight {
            if !weight_ok(w) {
                return Err(ValidationError::new("open_minded_self_weight", format!("{w} outside (0, 1]")));
            }
        }
        match (self.graph_type, self.erdos_renyi_p) {
            (GraphKind::ErdosRenyi, None) => {
                return Err(ValidationError::new("erdos_renyi_p", "required for erdos_renyi graphs"))
            }
            (_, Some(p)) if !(p > 0.0 && p <= 1.0) => {
                return Err(ValidationError::new("erdos_renyi_p", format!("{p} outside (0, 1]")))
            }
            _ => {}
        }
        if !(self.execution_time.is_finite() && self.execution_time >= 0.0) {
            return Err(ValidationError::new("execution_time", format!("{} is not a duration", self.execution_time)));
        }
        let rounds = self.num_rounds as usize + 1;
        if self.stance_scores.len() > rounds {
            return Err(ValidationError::new(
                "stance_scores",
                format!("{} rounds of scores for {rounds} rounds", self.stance_scores.len()),
            ));
        }
        for (t, row) in self.stance_scores.iter().enumerate() {
            if row.len() != k {
                return Err(ValidationError::new("stance_scores", format!("round {t} has {} entries", row.len())));
            }
            if let Some(bad) = row.iter().flatten().find(|s| !(0.0..=1.0).contains(*s)) {
                return Err(ValidationError::new("stance_scores", format!("round {t}: score {bad} outside [0, 1]")));
            }
        }
        let mut seen = BTreeSet::new();
        for m in &self.responses {
            if m.round as usize >= rounds || m.agent_id >= k {
                return Err(ValidationError::new(
                    "responses",
                    format!("message (round {}, agent {}) outside the experiment", m.round, m.agent_id),
                ));
            }
            if !seen.insert((m.round, m.agent_id)) {
                return Err(ValidationError::new(
                    "responses",
                    format!("duplicate message for round {}, agent {}", m.round, m.agent_id),
                ));
            }
            if let Some(r) = m.score_raw {
                if !(RAW_MIN..=RAW_MAX).contains(&r) {
                    return Err(ValidationError::new("responses", format!("raw score {r} outside [-3, 3]")));
                }
            }
        }
        if self.complete && (self.responses.len() != k * rounds || self.stance_scores.len() != rounds) {
            return Err(ValidationError::new(
                "complete",
                format!(
                    "flagged complete but holds {} responses and {} score rows (expected {} and {rounds})",
                    self.responses.len(),
                    self.stance_scores.len(),
                    k * rounds
                ),
            ));
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("records serialize");
        if let Value::Object(obj) = &mut v {
            for (key, val) in &self.extra {
                obj.entry(key.clone()).or_insert_with(|| val.clone());
            }
        }
        v
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("records serialize")
    }
}

/// Upstream-to-canonical key mapping for the tolerant reader.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AliasTable {
    keys: HashMap<String, String>,
    pub transpose_topology: bool,
}

impl AliasTable {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut table = AliasTable::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (lhs, rhs) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `upstream = canonical`", i + 1))?;
            let (lhs, rhs) = (lhs.trim(), rhs.trim());
            if let Some(directive) = lhs.strip_prefix('@') {
                match directive {
                    "transpose_topology" => {
                        table.transpose_topology = rhs
                            .parse()
                            .map_err(|_| format!("line {}: expected true or false", i + 1))?
                    }
                    other => return Err(format!("line {}: unknown directive @{other}", i + 1)),
                }
                continue;
            }
            if !KNOWN_FIELDS.contains(&rhs) {
                return Err(format!("line {}: `{rhs}` is not a record field", i + 1));
            }
            table.keys.insert(lhs.to_string(), rhs.to_string());
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text).map_err(|m| DatasetError::Schema { field: "alias table".into(), message: m })
    }

    pub fn canonical(&self, key: &str) -> Option<&str> {
        self.keys.get(key).map(String::as_str)
    }

    fn apply(&self, obj: &mut Map<String, Value>) {
        let renames: Vec<(String, String)> = obj
            .keys()
            .filter_map(|k| self.keys.get(k).map(|c| (k.clone(), c.clone())))
            .filter(|(_, c)| !obj.contains_key(c))
            .collect();
        for (from, to) in renames {
            if obj.contains_key(&to) {
                continue;
            }
            if let Some(v) = obj.remove(&from) {
                obj.insert(to, v);
            }
        }
    }
}

/// The alias table bundled with the crate.
pub fn default_aliases() -> &'static AliasTable {
    static TABLE: std::sync::OnceLock<AliasTable> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| AliasTable::parse(DEFAULT_ALIASES).expect("bundled alias table parses"))
}

fn shape(field: &str, message: impl Into<String>) -> DatasetError {
    DatasetError::Schema { field: field.to_string(), message: message.into() }
}

fn as_index(v: &Value) -> Option<usize> {
    match v {
        Value::Number(n) => n.as_u64().map(|x| x as usize).or_else(|| {
            n.as_f64().filter(|f| f.fract() == 0.0 && *f >= 0.0).map(|f| f as usize)
        }),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn as_flag(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => match n.as_f64() {
            Some(0.0) => Some(false),
            Some(1.0) => Some(true),
            _ => None,
        },
        _ => None,
    }
}

fn adapt_topology(v: &Value, transpose: bool) -> Result<Vec<Vec<usize>>, DatasetError> {
    const F: &str = "topology";
    let lists: Vec<Vec<usize>> = match v {
        Value::Object(map) => {
            if let Some(inner) = ["in_neighbors", "adjacency", "matrix", "lists"].iter().find_map(|k| map.get(*k)) {
                return adapt_topology(inner, transpose);
            }
            let mut entries = Vec::with_capacity(map.len());
            for (key, val) in map {
                let agent = key.trim().parse::<usize>().map_err(|_| shape(F, format!("key {key:?} is not an agent id")))?;
                let list = val.as_array().ok_or_else(|| shape(F, "expected neighbor lists"))?;
                let ids = list.iter().map(as_index).collect::<Option<Vec<_>>>().ok_or_else(|| shape(F, "bad agent id"))?;
                entries.push((agent, ids));
            }
            entries.sort_by_key(|(a, _)| *a);
            if entries.iter().enumerate().any(|(i, (a, _))| i != *a) {
                return Err(shape(F, "agent ids are not 0..K"));
            }
            entries.into_iter().map(|(_, l)| l).collect()
        }
        Value::Array(rows) => {
            let k = rows.len();
            let rows: Vec<&Vec<Value>> =
                rows.iter().map(|r| r.as_array().ok_or_else(|| shape(F, "expected an array of arrays"))).collect::<Result<_, _>>()?;
            let any_bool = rows.iter().any(|r| r.iter().any(Value::is_boolean));
            let dense = k > 0
                && rows.iter().all(|r| r.len() == k && r.iter().all(|x| as_flag(x).is_some()))
                && (k > 2 || any_bool);
            if dense {
                let m: Vec<Vec<bool>> =
                    rows.iter().map(|r| r.iter().map(|x| as_flag(x).unwrap_or(false)).collect()).collect();
                let m = if transpose { (0..k).map(|i| (0..k).map(|j| m[j][i]).collect()).collect() } else { m };
                return DirectedGraph::from_dense(&m)
                    .map(DirectedGraph::into_lists)
                    .map_err(|e| ValidationError::new(F, e.to_string()).into());
            }
            rows.iter()
                .map(|r| r.iter().map(as_index).collect::<Option<Vec<_>>>())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| shape(F, "neighbor ids must be non-negative integers"))?
        }
        _ => return Err(shape(F, "expected neighbor lists or an adjacency matrix")),
    };
    let k = lists.len();
    let lists = if transpose {
        let mut inn = vec![Vec::new(); k];
        for (from, outs) in lists.iter().enumerate() {
            for &to in outs {
                if to >= k {
                    return Err(ValidationError::new(F, format!("agent {from} lists neighbor {to} outside 0..{k}")).into());
                }
                inn[to].push(from);
            }
        }
        inn
    } else {
        lists
    };
    let lists = lists
        .into_iter()
        .map(|mut l| {
            l.sort_unstable();
            l.dedup();
            l
        })
        .collect();
    DirectedGraph::with_self_loops(lists)
        .map(DirectedGraph::into_lists)
        .map_err(|e| ValidationError::new(F, e.to_string()).into())
}

fn stance_from_text(s: &str) -> Option<Stance> {
    if let Ok(st) = Stance::from_str(s) {
        return Some(st);
    }
    let l = s.to_lowercase();
    if l.contains("against") {
        Some(Stance::Against)
    } else if l.contains("neutral") {
        Some(Stance::Neutral)
    } else if l.contains("for") || l.contains("favor") {
        Some(Stance::For)
    } else {
        None
    }
}

/// Strings are read leniently; numbers are normalized scores in `[0, 1]`,
/// unless any is negative, in which case the sign decides.
fn adapt_stances(v: &Value) -> Result<Vec<Value>, DatasetError> {
    const F: &str = "initial_opinions";
    let arr = v.as_array().ok_or_else(|| shape(F, "expected an array"))?;
    let signed = arr.iter().any(|x| x.as_f64().is_some_and(|f| f < 0.0));
    arr.iter()
        .map(|x| {
            let st = match x {
                Value::String(s) => stance_from_text(s),
                Value::Number(n) => n.as_f64().and_then(|f| {
                    if signed {
                        Some(match f.partial_cmp(&0.0)? {
                            std::cmp::Ordering::Less => Stance::Against,
                            std::cmp::Ordering::Equal => Stance::Neutral,
                            std::cmp::Ordering::Greater => Stance::For,
                        })
                    } else {
                        (0.0..=1.0).contains(&f).then(|| discretize(f))
                    }
                }),
                _ => None,
            };
            st.map(|s| Value::String(s.as_str().into()))
                .ok_or_else(|| ValidationError::new(F, format!("unrecognized stance {x}")).into())
        })
        .collect()
}

fn adapt_agent_types(v: &Value) -> Result<Value, DatasetError> {
    const F: &str = "agent_types";
    let arr = v.as_array().ok_or_else(|| shape(F, "expected an array"))?;
    arr.iter()
        .map(|x| {
            let s = x.as_str().map(|s| s.to_lowercase().replace(['-', ' '], "_"));
            let t = match s.as_deref() {
                Some("self_confident" | "selfconfident" | "stubborn" | "confident") => AgentType::SelfConfident,
                Some("open_minded" | "openminded" | "open") => AgentType::OpenMinded,
                _ => return Err(ValidationError::new(F, format!("unrecognized agent type {x}")).into()),
            };
            Ok(Value::String(t.as_str().into()))
        })
        .collect::<Result<Vec<_>, DatasetError>>()
        .map(Value::Array)
}

const TEXT_KEYS: [&str; 5] = ["text", "response", "content", "message", "opinion"];
const AGENT_KEYS: [&str; 5] = ["agent_id", "agent", "agent_idx", "agent_index", "id"];
const ROUND_KEYS: [&str; 4] = ["round", "iteration", "round_num", "step"];
const RAW_KEYS: [&str; 2] = ["score_raw", "raw_score"];
const NORM_KEYS: [&str; 4] = ["score", "stance_score", "sentiment_score", "score_norm"];

fn message_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Object(o) => TEXT_KEYS.iter().find_map(|k| o.get(*k)).and_then(message_text),
        _ => None,
    }
}

/// Canonical messages plus any per-message normalized scores found inline.
/// (round, agent, normalized score) found inside a message.
type InlineScore = (u32, usize, f64);

fn adapt_responses(v: &Value, k: usize) -> Result<(Vec<Value>, Vec<InlineScore>), DatasetError> {
    const F: &str = "responses";
    let arr = v.as_array().ok_or_else(|| shape(F, "expected an array"))?;
    let nested = !arr.is_empty() && arr.iter().all(Value::is_array);
    let flat: Vec<(Option<u32>, &Value)> = if nested {
        arr.iter()
            .enumerate()
            .flat_map(|(t, row)| row.as_array().into_iter().flatten().map(move |m| (Some(t as u32), m)))
            .collect()
    } else {
        arr.iter().map(|m| (None, m)).collect()
    };
    let per_round = if nested { None } else { Some(k.max(1)) };
    let mut out = Vec::with_capacity(flat.len());
    let mut scores = Vec::new();
    let mut in_round = HashMap::<u32, usize>::new();
    for (i, (round_hint, m)) in flat.into_iter().enumerate() {
        let obj = m.as_object();
        let field = |keys: &[&str]| obj.and_then(|o| keys.iter().find_map(|key| o.get(*key)));
        let round = match field(&ROUND_KEYS).and_then(as_index) {
            Some(r) => r as u32,
            None => round_hint.unwrap_or_else(|| (i / per_round.unwrap_or(1)) as u32),
        };
        let slot = in_round.entry(round).or_insert(0);
        let agent = field(&AGENT_KEYS).and_then(as_index).unwrap_or(*slot);
        *slot += 1;
        let text = message_text(m).ok_or_else(|| shape(F, format!("message {i} has no text")))?;
        let mut canon = Map::new();
        canon.insert("round".into(), round.into());
        canon.insert("agent_id".into(), agent.into());
        canon.insert("text".into(), text.into());
        if let Some(raw) = field(&RAW_KEYS).and_then(Value::as_i64) {
            canon.insert("score_raw".into(), raw.into());
        }
        if let Some(norm) = field(&NORM_KEYS).and_then(Value::as_f64) {
            scores.push((round, agent, norm));
        }
        if let Some(o) = obj {
            for key in ["truncated", "retries", "issued_seq", "completed_seq"] {
                if let Some(x) = o.get(key) {
                    canon.insert(key.into(), x.clone());
                }
            }
        }
        out.push(Value::Object(canon));
    }
    Ok((out, scores))
}

fn adapt_scores(v: &Value, k: usize) -> Result<Value, DatasetError> {
    const F: &str = "stance_scores";
    let arr = v.as_array().ok_or_else(|| shape(F, "expected an array"))?;
    if arr.iter().all(Value::is_array) {
        return Ok(v.clone());
    }
    if k == 0 || arr.len() % k != 0 {
        return Err(shape(F, format!("{} flat scores do not split into rounds of {k}", arr.len())));
    }
    Ok(Value::Array(arr.chunks(k).map(|c| Value::Array(c.to_vec())).collect()))
}

fn normalize_value(obj: &mut Map<String, Value>, aliases: &AliasTable) -> Result<(), DatasetError> {
    aliases.apply(obj);
    if let Some(v) = obj.get("topology") {
        let lists = adapt_topology(v, aliases.transpose_topology)?;
        obj.insert("topology".into(), serde_json::to_value(lists).expect("lists serialize"));
    }
    let k = obj
        .get("topology")
        .and_then(Value::as_array)
        .map(Vec::len)
        .or_else(|| obj.get("system_prompts").and_then(Value::as_array).map(Vec::len))
        .unwrap_or(0);
    if let Some(Value::String(s)) = obj.get("graph_type") {
        let kind = GraphKind::from_str(s).map_err(|e| ValidationError::new("graph_type", e.to_string()))?;
        obj.insert("graph_type".into(), kind.as_str().into());
    }
    if let Some(Value::String(s)) = obj.get("erdos_renyi_p") {
        if let Ok(p) = s.trim().parse::<f64>() {
            obj.insert("erdos_renyi_p".into(), p.into());
        }
    }
    if let Some(v) = obj.get("initial_opinions") {
        let st = adapt_stances(v)?;
        obj.insert("initial_opinions".into(), Value::Array(st));
    }
    if let Some(v) = obj.get("agent_types") {
        let t = adapt_agent_types(v)?;
        obj.insert("agent_types".into(), t);
    }
    for key in ["system_prompts", "initial_prompts"] {
        if let Some(Value::Object(map)) = obj.get(key) {
            let mut entries: Vec<(usize, Value)> =
                map.iter().filter_map(|(i, p)| Some((i.trim().parse().ok()?, p.clone()))).collect();
            entries.sort_by_key(|(i, _)| *i);
            obj.insert(key.into(), Value::Array(entries.into_iter().map(|(_, p)| p).collect()));
        }
    }
    if let Some(v) = obj.get("responses") {
        let (msgs, inline) = adapt_responses(v, k)?;
        obj.insert("responses".into(), Value::Array(msgs));
        if !obj.contains_key("stance_scores") && !inline.is_empty() {
            let rounds = inline.iter().map(|(r, _, _)| *r as usize + 1).max().unwrap_or(0);
            let mut m = vec![vec![Value::Null; k]; rounds];
            for (r, a, s) in inline {
                if let Some(cell) = m.get_mut(r as usize).and_then(|row| row.get_mut(a)) {
                    *cell = s.into();
                }
            }
            obj.insert("stance_scores".into(), serde_json::to_value(m).expect("scores serialize"));
        }
    }
    if let Some(v) = obj.get("stance_scores") {
        let s = adapt_scores(v, k)?;
        obj.insert("stance_scores".into(), s);
    }
    Ok(())
}

/// Parses one record with the given alias table.
pub fn parse_record(text: &str, aliases: &AliasTable) -> Result<ExperimentRecord, DatasetError> {
    let value: Value = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    record_from_value(value, aliases)
}

pub fn record_from_value(value: Value, aliases: &AliasTable) -> Result<ExperimentRecord, DatasetError> {
    let Value::Object(mut obj) = value else {
        return Err(shape("<root>", "expected a JSON object"));
    };
    normalize_value(&mut obj, aliases)?;
    if let Some(missing) = REQUIRED_FIELDS.iter().find(|f| !obj.contains_key(**f)) {
        return Err(DatasetError::Missing(missing.to_string()));
    }
    let infer_complete = !obj.contains_key("complete");
    let mut extra = Map::new();
    let unknown: Vec<String> = obj.keys().filter(|k| !KNOWN_FIELDS.contains(&k.as_str()) || *k == "extra").cloned().collect();
    for key in unknown {
        if let Some(v) = obj.remove(&key) {
            extra.insert(key, v);
        }
    }
    let mut rec: ExperimentRecord = serde_path_to_error::deserialize(Value::Object(obj)).map_err(|e| {
        let path = e.path().to_string();
        let field = path.split(['.', '[']).next().unwrap_or(&path).to_string();
        DatasetError::Schema { field, message: format!("{path}: {}", e.inner()) }
    })?;
    rec.extra = extra;
    if infer_complete {
        let rounds = rec.num_rounds as usize + 1;
        rec.complete = rec.responses.len() == rec.agents() * rounds && rec.stance_scores.len() == rounds;
    }
    rec.sync_message_scores();
    rec.validate()?;
    Ok(rec)
}

pub fn read_record(path: &Path) -> Result<ExperimentRecord, DatasetError> {
    read_record_with(path, default_aliases())
}

pub fn read_record_with(path: &Path, aliases: &AliasTable) -> Result<ExperimentRecord, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_record(&text, aliases)
}

/// Validates and writes a record as pretty JSON, via a temporary file in the
/// same directory so readers never observe a half-written file.
pub fn write_record(record: &ExperimentRecord, path: &Path) -> Result<(), DatasetError> {
    record.validate()?;
    let text = record.to_json_string();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
    f.write_all(b"\n").map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Agent profiles stated by a record.
///
/// Agent types come from `agent_types` or, failing that, the system prompts.
/// Self-weights come from `self_weights`, then the record-level weight for
/// the agent's type, then the weight stated in the prompt.
pub fn record_profiles(record: &ExperimentRecord) -> Result<Vec<AgentProfile>, DatasetError> {
    let stated: Vec<Option<f64>> = record.system_prompts.iter().map(|p| parse_self_weight(p)).collect();
    let weightless = match record.weighted {
        Some(w) => !w,
        None => record.self_weights.is_none() && stated.iter().all(Option::is_none),
    };
    if weightless {
        return Err(DatasetError::Weightless);
    }
    let types: Vec<Option<AgentType>> = match &record.agent_types {
        Some(t) => t.iter().copied().map(Some).collect(),
        None => record.system_prompts.iter().map(|p| parse_agent_type(p)).collect(),
    };
    let unknown: Vec<usize> = types.iter().enumerate().filter(|(_, t)| t.is_none()).map(|(i, _)| i).collect();
    if !unknown.is_empty() {
        return Err(DatasetError::UnknownAgentTypes(unknown));
    }
    Ok((0..record.agents())
        .map(|i| {
            let t = types[i].expect("checked above");
            let w = record.self_weights.as_ref().map(|w| w[i]).unwrap_or(match t {
                AgentType::SelfConfident => record.self_confident_self_weight,
                AgentType::OpenMinded => record
                    .open_minded_self_weight
                    .or(stated[i])
                    .unwrap_or_else(|| t.default_self_weight()),
            });
            AgentProfile::new(t, record.initial_opinions[i]).with_self_weight(w)
        })
        .collect())
}

/// Rebuilds the combination matrix from a record's topology and prompts,
/// with profiles as in [`record_profiles`].
pub fn reconstruct_matrix(record: &ExperimentRecord) -> Result<CombinationMatrix, DatasetError> {
    let g = record.graph()?;
    let profiles = record_profiles(record)?;
    build_combination_matrix(&g, &profiles).map_err(|e| DatasetError::Reconstruct(e.to_string()))
}

/// Selects corpus files by their `<model>/<setting>/<group>` path components.
/// Matching is case-insensitive; `None` matches anything.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusFilter {
    pub model: Option<String>,
    pub setting: Option<String>,
    /// Topic folder under `main`, or ablation kind under `ablation`.
    pub group: Option<String>,
}

impl CorpusFilter {
    fn matches(&self, loc: &CorpusLocation) -> bool {
        let eq = |want: &Option<String>, got: &str| want.as_ref().is_none_or(|w| w.eq_ignore_ascii_case(got));
        eq(&self.model, &loc.model) && eq(&self.setting, &loc.setting) && eq(&self.group, &loc.group)
    }
}

/// Where a file sits in the corpus hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusLocation {
    pub model: String,
    pub setting: String,
    pub group: String,
}

const ABLATION_KINDS: [&str; 3] = ["biased_start", "different_selfweights", "weightless"];

/// Classifies a path relative to the corpus root. A model folder may hold an
/// ablation folder directly (no `main`/`ablation` level); it is then treated
/// as setting `ablation`.
pub fn locate(relative: &Path) -> CorpusLocation {
    let parts: Vec<String> = relative
        .parent()
        .map(|p| p.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    let get = |i: usize| parts.get(i).cloned().unwrap_or_default();
    let model = get(0);
    let second = get(1);
    if second.eq_ignore_ascii_case("main") || second.eq_ignore_ascii_case("ablation") {
        CorpusLocation { model, setting: second.to_lowercase(), group: get(2) }
    } else {
        let setting = if ABLATION_KINDS.iter().any(|k| k.eq_ignore_ascii_case(&second)) { "ablation" } else { "" };
        CorpusLocation { model, setting: setting.into(), group: second }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub location: CorpusLocation,
    pub record: ExperimentRecord,
}

/// Lazy iterator over matching corpus records in sorted path order.
/// Unreadable or invalid files are logged and counted, not yielded.
pub struct CorpusScan {
    root: PathBuf,
    files: std::vec::IntoIter<(PathBuf, CorpusLocation)>,
    aliases: AliasTable,
    skipped: Vec<(PathBuf, String)>,
}

impl CorpusScan {
    pub fn skipped(&self) -> &[(PathBuf, String)] {
        &self.skipped
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl Iterator for CorpusScan {
    type Item = CorpusEntry;

    fn next(&mut self) -> Option<CorpusEntry> {
        for (path, location) in self.files.by_ref() {
            match read_record_with(&path, &self.aliases) {
                Ok(record) => return Some(CorpusEntry { path, location, record }),
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    self.skipped.push((path, e.to_string()));
                }
            }
        }
        None
    }
}

/// Lists `*.json` files under `root` matching `filter`.
pub fn corpus_files(root: &Path, filter: &CorpusFilter) -> Result<Vec<(PathBuf, CorpusLocation)>, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::MissingRoot(root.to_path_buf()));
    }
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| DatasetError::Io {
            path: e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf()),
            source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("directory walk failed")),
        })?;
        let path = entry.path();
        if !entry.file_type().is_file() || path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let rel = path.strip_prefix(root).unwrap_or(path);
        let loc = locate(rel);
        if filter.matches(&loc) {
            out.push((path.to_path_buf(), loc));
        }
    }
    Ok(out)
}

pub fn scan_corpus(root: &Path, filter: &CorpusFilter) -> Result<CorpusScan, DatasetError> {
    scan_corpus_with(root, filter, default_aliases().clone())
}

pub fn scan_corpus_with(root: &Path, filter: &CorpusFilter, aliases: AliasTable) -> Result<CorpusScan, DatasetError> {
    let files = corpus_files(root, filter)?;
    Ok(CorpusScan { root: root.to_path_buf(), files: files.into_iter(), aliases, skipped: Vec::new() })
}
