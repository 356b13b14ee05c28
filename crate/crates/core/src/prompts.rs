//! System and initial-opinion prompt templates, plus the inverse parsers used
//! to recover agent characters and weights from stored prompts.

use std::sync::OnceLock;

use regex::Regex;

use crate::graph::{AgentProfile, AgentType};
use crate::scoring::Stance;

/// System prompt for an agent. With `weighted` the self and neighbor weights
/// (two decimals) are stated; without it only the character sentences remain.
pub fn render_system_prompt(profile: &AgentProfile, topic: &str, weighted: bool) -> String {
    let mut lines = vec![format!("You are a person participating in a discussion about {topic}.")];
    match profile.agent_type {
        AgentType::SelfConfident => {
            lines.push("You are stubborn about your opinion and do not easily change it.".into());
        }
        AgentType::OpenMinded => {
            lines.push("You are open-minded and frequently change your opinion based on others.".into());
            lines.push("You take other participants' opinions for granted.".into());
        }
    }
    if weighted {
        lines.push(format!(
            "You are influenced by your own previous opinion with weight {:.2}",
            profile.self_weight
        ));
        lines.push(format!("and by others' opinions with weight {:.2}.", 1.0 - profile.self_weight));
    }
    lines.push("You form your new opinion accordingly.".into());
    lines.join("\n")
}

/// Prompt that seeds an agent's round-0 opinion.
pub fn render_initial_prompt(stance: Stance, topic: &str) -> String {
    let t = topic;
    match stance {
        Stance::Against => format!(
            "I need you to impersonate someone who absolutely hates {t}.\n\
             You are absolutely against and you hate {t}. You HATE and detest {t}.\n\
             Your initial opinion is: Absolutely against {t}!\n\
             What do you think about {t}. Keep your answer under 150 words. Do not exceed 150 words. State your opinion."
        ),
        Stance::Neutral => format!(
            "I need you to impersonate someone who is neutral towards {t}.\n\
             You are neither for nor against {t}. You are completely neutral.\n\
             Your initial opinion is: absolutely neutral towards {t}.\n\
             What do you think about {t}.\n\
             Keep your answer under 150 words. Do not exceed 150 words. State your opinion."
        ),
        Stance::For => format!(
            "I need you to impersonate a true {t} lover. You are a huge lover of {t}.\n\
             You absolutely LOVE {t} and you are very very in favor of {t}.\n\
             You LOVE {t}. Act like you are a huge fan! Your initial opinion: Absolutely for {t}.\n\
             What do you think about {t}. Keep your answer under 150 words.\n\
             Do not exceed 150 words. State your opinion."
        ),
    }
}

/// Character encoded in a system prompt, if recognizable.
pub fn parse_agent_type(system_prompt: &str) -> Option<AgentType> {
    let lower = system_prompt.to_lowercase();
    let confident = lower.contains("stubborn") || lower.contains("self-confident");
    let open = lower.contains("open-minded") || lower.contains("open minded");
    match (confident, open) {
        (true, false) => Some(AgentType::SelfConfident),
        (false, true) => Some(AgentType::OpenMinded),
        _ => None,
    }
}

/// Self-weight stated in a system prompt, if any.
pub fn parse_self_weight(system_prompt: &str) -> Option<f64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"own previous opinion with weight\s+([0-9]*\.?[0-9]+)").expect("valid regex")
    });
    re.captures(system_prompt)?.get(1)?.as_str().parse().ok()
}

/// Initial stance encoded in an initial prompt, if recognizable.
pub fn parse_initial_stance(initial_prompt: &str) -> Option<Stance> {
    if initial_prompt.contains("Absolutely against") {
        Some(Stance::Against)
    } else if initial_prompt.contains("absolutely neutral") {
        Some(Stance::Neutral)
    } else if initial_prompt.contains("Absolutely for") {
        Some(Stance::For)
    } else {
        None
    }
}
