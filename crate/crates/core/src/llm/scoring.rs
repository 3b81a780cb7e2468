//! Turn quality for LLM outputs.

use std::collections::HashSet;
use std::sync::OnceLock;

use log::warn;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::client::{ChatClient, ChatMessage, Decoding};
use crate::signals::OutputDigest;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreWeights {
    pub coverage: f64,
    pub completeness: f64,
    pub non_repetition: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            coverage: 0.5,
            completeness: 0.3,
            non_repetition: 0.2,
        }
    }
}

const STOPWORDS: &[&str] = &[
    "about", "after", "also", "and", "are", "been", "before", "each", "every", "for", "from",
    "have", "into", "its", "more", "most", "must", "not", "one", "only", "our", "should", "some",
    "such", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this",
    "those", "through", "two", "under", "use", "using", "what", "when", "where", "which", "while",
    "who", "will", "with", "within", "without", "would", "you", "your",
];

/// Content words of a task statement.
pub fn task_keywords(task: &str) -> HashSet<String> {
    OutputDigest::from_text(task)
        .tokens()
        .iter()
        .filter(|w| w.len() >= 4 && !STOPWORDS.contains(&w.as_str()))
        .cloned()
        .collect()
}

fn coverage(keywords: &HashSet<String>, answer: &OutputDigest) -> f64 {
    if keywords.is_empty() {
        return 1.0;
    }
    let words: HashSet<&String> = answer.tokens().iter().collect();
    keywords.iter().filter(|k| words.contains(k)).count() as f64 / keywords.len() as f64
}

fn completeness(answer: &str, truncated: bool) -> f64 {
    if truncated {
        return 0.0;
    }
    let end = answer.trim_end();
    if end.ends_with(['.', '!', '?', ')', '`', '"']) {
        1.0
    } else {
        0.5
    }
}

fn distinct_bigram_share(answer: &OutputDigest) -> f64 {
    let toks = answer.tokens();
    if toks.len() < 2 {
        return 1.0;
    }
    let total = toks.len() - 1;
    let distinct: HashSet<&[String]> = toks.windows(2).collect();
    distinct.len() as f64 / total as f64
}

/// Weighted heuristic score in [0,1]. `truncated` is set when the server
/// stopped at the token cap.
pub fn heuristic_score(task: &str, answer: &str, truncated: bool, w: &ScoreWeights) -> f64 {
    let digest = OutputDigest::from_text(answer);
    if digest.is_empty() {
        return 0.0;
    }
    let total = w.coverage + w.completeness + w.non_repetition;
    if total <= 0.0 {
        return 0.0;
    }
    let s = w.coverage * coverage(&task_keywords(task), &digest)
        + w.completeness * completeness(answer, truncated)
        + w.non_repetition * distinct_bigram_share(&digest);
    (s / total).clamp(0.0, 1.0)
}

/// Parse a `grade: N` reply on a 0..=10 scale into [0,1].
pub fn parse_grade(reply: &str) -> Option<f64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)grade\s*[:=]\s*(\d+(?:\.\d+)?)").expect("static pattern")
    });
    let g: f64 = re.captures(reply)?.get(1)?.as_str().parse().ok()?;
    (0.0..=10.0).contains(&g).then_some(g / 10.0)
}

pub const CRITIC_INSTRUCTION: &str =
    "You grade answers. Reply with a single line of the form 'grade: N' where N is an integer from 0 to 10.";

pub fn critic_messages(task: &str, answer: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(CRITIC_INSTRUCTION),
        ChatMessage::user(format!("Task: {task}\nAnswer: {answer}\nGive the grade.")),
    ]
}

/// Score an answer, asking `critic` for a grade when given and falling back
/// to the heuristic on any failure.
pub fn score_quality(
    task: &str,
    answer: &str,
    critic: Option<(&ChatClient, &Decoding, u64)>,
    weights: &ScoreWeights,
) -> f64 {
    if answer.trim().is_empty() {
        return 0.0;
    }
    if let Some((client, decoding, seed)) = critic {
        match client.chat_complete(&critic_messages(task, answer), decoding, 16, seed) {
            Ok(c) => match parse_grade(&c.text) {
                Some(g) => return g,
                None => warn!("critic reply without a grade: {:?}", c.text),
            },
            Err(e) => warn!("critic call failed, using heuristic: {e}"),
        }
    }
    heuristic_score(task, answer, false, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_answer_scores_zero() {
        let w = ScoreWeights::default();
        assert_eq!(heuristic_score("plan a trip to lisbon", "", false, &w), 0.0);
        assert_eq!(score_quality("plan a trip", "   ", None, &w), 0.0);
    }

    #[test]
    fn saturated_answer_scores_one() {
        let w = ScoreWeights::default();
        let task = "Design a caching layer for database queries";
        let answer = "The caching layer sits in front of database queries; design notes follow.";
        assert_eq!(heuristic_score(task, answer, false, &w), 1.0);
    }

    #[test]
    fn truncation_and_repetition_lower_score() {
        let w = ScoreWeights::default();
        let task = "Design a caching layer";
        let full = heuristic_score(task, "design caching layer done.", false, &w);
        assert!(heuristic_score(task, "design caching layer done.", true, &w) < full);
        assert!(heuristic_score(task, "design design design design.", false, &w) < full);
    }

    #[test]
    fn grade_parsing() {
        assert_eq!(parse_grade("grade: 7"), Some(0.7));
        assert_eq!(parse_grade("Grade = 10 overall"), Some(1.0));
        assert_eq!(parse_grade("grade: 11"), None);
        assert_eq!(parse_grade("looks fine"), None);
    }

    #[test]
    fn keywords_skip_stopwords() {
        let k = task_keywords("Write a plan for the migration with rollback");
        assert!(k.contains("migration") && k.contains("rollback") && k.contains("plan"));
        assert!(!k.contains("with") && !k.contains("the"));
    }
}
