//! Stance scores: the integer `[-3, 3]` scale, its `[0, 1]` normalization,
//! three-way classes, and the scorers that produce them.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::{ChatClient, ChatMessage};

pub const RAW_MIN: i8 = -3;
pub const RAW_MAX: i8 = 3;

/// Stance toward the topic; used both for initial opinions and for
/// discretized scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    Against,
    Neutral,
    For,
}

pub type StanceClass = Stance;

impl Stance {
    /// Ordered from the "against" end to the "for" end.
    pub const ALL: [Stance; 3] = [Stance::Against, Stance::Neutral, Stance::For];

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Against => "against",
            Stance::Neutral => "neutral",
            Stance::For => "for",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Normalized score at the centre of this class.
    pub fn nominal_score(self) -> f64 {
        match self {
            Stance::Against => 0.0,
            Stance::Neutral => 0.5,
            Stance::For => 1.0,
        }
    }
}

impl std::str::FromStr for Stance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "against" | "con" | "negative" => Ok(Stance::Against),
            "neutral" => Ok(Stance::Neutral),
            "for" | "pro" | "positive" | "favor" => Ok(Stance::For),
            other => Err(format!("unknown stance '{other}'")),
        }
    }
}

impl std::fmt::Display for Stance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("raw score {0} outside [-3, 3]")]
    OutOfRange(i64),
    #[error("no usable score in reply: {0:?}")]
    Unparseable(String),
    #[error("scorer request failed: {0}")]
    Request(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceScore {
    pub raw: i8,
    pub normalized: f64,
}

impl StanceScore {
    pub fn from_raw(raw: i64) -> Result<Self, ScoreError> {
        Ok(StanceScore { raw: raw as i8, normalized: normalize(raw)? })
    }

    /// Keeps the full-precision value and records the nearest integer raw.
    pub fn from_normalized(normalized: f64) -> Self {
        StanceScore { raw: nearest_raw(normalized), normalized }
    }
}

/// `(raw + 3) / 6`.
pub fn normalize(raw: i64) -> Result<f64, ScoreError> {
    if !(RAW_MIN as i64..=RAW_MAX as i64).contains(&raw) {
        return Err(ScoreError::OutOfRange(raw));
    }
    Ok((raw + 3) as f64 / 6.0)
}

/// Nearest integer on the raw scale, rounding halves away from zero.
pub fn nearest_raw(normalized: f64) -> i8 {
    (6.0 * normalized - 3.0).round().clamp(RAW_MIN as f64, RAW_MAX as f64) as i8
}

/// Class of a normalized score by the sign of its nearest raw score; the
/// boundaries sit at 5/12 and 7/12.
pub fn discretize(normalized: f64) -> StanceClass {
    match nearest_raw(normalized) {
        r if r < 0 => Stance::Against,
        0 => Stance::Neutral,
        _ => Stance::For,
    }
}

/// Maps (response text, topic) to a stance score. Implementations must be
/// callable from several threads at once.
pub trait Scorer: Send + Sync {
    fn score(&self, text: &str, topic: &str) -> Result<StanceScore, ScoreError>;
}

pub const OPINION_SENTINEL: &str = "OPINION=";

/// Pulls the value out of an `OPINION=<value>` sentinel.
pub fn parse_opinion_sentinel(text: &str) -> Option<f64> {
    let start = text.find(OPINION_SENTINEL)? + OPINION_SENTINEL.len();
    let rest = &text[start..];
    let end = rest
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
        .unwrap_or(rest.len());
    rest[..end].parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads the synthetic backend's sentinel at full precision.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubNumericScorer;

impl Scorer for StubNumericScorer {
    fn score(&self, text: &str, _topic: &str) -> Result<StanceScore, ScoreError> {
        match parse_opinion_sentinel(text) {
            Some(v) if (0.0..=1.0).contains(&v) => Ok(StanceScore::from_normalized(v)),
            _ => Err(ScoreError::Unparseable(text.chars().take(80).collect())),
        }
    }
}

pub const SCORER_PROMPT_VERSION: &str = "stance-v1";

/// `{topic}` and `{text}` are substituted.
pub const SCORER_PROMPT_TEMPLATE: &str = "You are a stance annotator. Rate the stance of the following text toward the topic \"{topic}\" on an integer scale from -3 to 3, where -3 means strongly against {topic}, 0 means neutral and 3 means strongly for {topic}.\n\nText:\n{text}\n\nAnswer with a single integer between -3 and 3 and nothing else.";

pub fn render_scoring_prompt(template: &str, text: &str, topic: &str) -> String {
    template.replace("{topic}", topic).replace("{text}", text)
}

/// Takes the first numeric token of a reply. The token must be an integer in
/// `[-3, 3]`; anything else (decimals, out-of-range values) is rejected rather
/// than clamped.
pub fn parse_score_reply(reply: &str) -> Option<i8> {
    static NUMBER: OnceLock<Regex> = OnceLock::new();
    let re = NUMBER.get_or_init(|| Regex::new(r"[+-]?\d+(?:\.\d+)?").expect("valid regex"));
    let cleaned = reply.replace(['\u{2212}', '\u{2013}'], "-");
    let token = re.find(&cleaned)?.as_str();
    if token.contains('.') {
        return None;
    }
    let value: i64 = token.parse().ok()?;
    (RAW_MIN as i64..=RAW_MAX as i64).contains(&value).then_some(value as i8)
}

/// Scores text by prompting a chat model for a single integer.
#[derive(Debug)]
pub struct RemoteScorer {
    client: ChatClient,
    template: String,
    /// Total attempts (first try included) when the reply has no valid integer.
    parse_attempts: u32,
}

impl RemoteScorer {
    pub fn new(client: ChatClient) -> Self {
        RemoteScorer { client, template: SCORER_PROMPT_TEMPLATE.to_string(), parse_attempts: 3 }
    }

    pub fn with_template(mut self, template: impl Into<String>) -> Self {
        self.template = template.into();
        self
    }

    pub fn with_parse_attempts(mut self, attempts: u32) -> Self {
        self.parse_attempts = attempts.max(1);
        self
    }
}

impl Scorer for RemoteScorer {
    fn score(&self, text: &str, topic: &str) -> Result<StanceScore, ScoreError> {
        let prompt = render_scoring_prompt(&self.template, text, topic);
        let messages = [ChatMessage::user(prompt)];
        let mut last = String::new();
        for attempt in 1..=self.parse_attempts {
            let reply = self
                .client
                .complete(&messages)
                .map_err(|e| ScoreError::Request(e.to_string()))?;
            if let Some(raw) = parse_score_reply(&reply.text) {
                return StanceScore::from_raw(raw as i64);
            }
            log::warn!("scorer reply {:?} unparseable (attempt {attempt}/{})", reply.text, self.parse_attempts);
            last = reply.text;
        }
        Err(ScoreError::Unparseable(last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_endpoints() {
        assert_eq!(normalize(-3).unwrap(), 0.0);
        assert_eq!(normalize(0).unwrap(), 0.5);
        assert_eq!(normalize(3).unwrap(), 1.0);
        assert_eq!(normalize(4), Err(ScoreError::OutOfRange(4)));
        assert_eq!(normalize(-4), Err(ScoreError::OutOfRange(-4)));
    }

    #[test]
    fn discretize_examples() {
        assert_eq!(discretize(0.5), Stance::Neutral);
        assert_eq!(discretize(0.1), Stance::Against);
        assert_eq!(discretize(0.9), Stance::For);
        // boundaries: 6x - 3 = -0.5 rounds away from zero
        assert_eq!(discretize(5.0 / 12.0), Stance::Against);
        assert_eq!(discretize(7.0 / 12.0), Stance::For);
        assert_eq!(discretize(0.42), Stance::Neutral);
    }

    #[test]
    fn stub_scorer() {
        let s = StubNumericScorer.score("OPINION=0.6667", "x").unwrap();
        assert_eq!(s.normalized, 0.6667);
        assert_eq!(s.raw, 1);
        let s = StubNumericScorer.score("OPINION=0", "x").unwrap();
        assert_eq!((s.raw, s.normalized), (-3, 0.0));
        assert!(StubNumericScorer.score("hello", "x").is_err());
        assert!(StubNumericScorer.score("OPINION=1.5", "x").is_err());
    }

    #[test]
    fn sentinel_round_trips_full_precision() {
        let v = 0.123_456_789_012_345_67_f64;
        assert_eq!(parse_opinion_sentinel(&format!("OPINION={v}")), Some(v));
        assert_eq!(parse_opinion_sentinel("note OPINION=1e-5 end"), Some(1e-5));
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_score_reply("2"), Some(2));
        assert_eq!(parse_score_reply("score: -3."), Some(-3));
        assert_eq!(parse_score_reply("Score: \u{2212}1"), Some(-1));
        assert_eq!(parse_score_reply("+3"), Some(3));
        assert_eq!(parse_score_reply("enthusiastic!"), None);
        assert_eq!(parse_score_reply("5"), None);
        assert_eq!(parse_score_reply("2.5"), None);
    }

    #[test]
    fn prompt_substitution() {
        let p = render_scoring_prompt(SCORER_PROMPT_TEMPLATE, "I like it", "Vaping");
        assert!(p.contains("toward the topic \"Vaping\""));
        assert!(p.contains("I like it"));
        assert!(p.contains("a single integer between -3 and 3"));
        assert!(!p.contains("{topic}"));
    }

    proptest! {
        #[test]
        fn normalize_then_discretize_recovers_sign(r in -3i64..=3) {
            let class = discretize(normalize(r).unwrap());
            let expected = match r.signum() { -1 => Stance::Against, 0 => Stance::Neutral, _ => Stance::For };
            prop_assert_eq!(class, expected);
            prop_assert_eq!(nearest_raw(normalize(r).unwrap()) as i64, r);
        }

        #[test]
        fn discretize_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(discretize(lo) <= discretize(hi));
        }

        #[test]
        fn parser_never_leaves_range(s in ".{0,40}") {
            if let Some(r) = parse_score_reply(&s) {
                prop_assert!((-3..=3).contains(&r));
            }
        }
    }
}
