//! Option-letter extraction from free-text LLM responses.
//!
//! Matchers run in priority order and the first decisive one wins:
//!
//! 1. an answer phrase followed by a letter: `answer is (X)`, `answer is X`,
//!    `answer: X`, `Final Answer: (X)`, `choose (X)`;
//! 2. a parenthesized letter `(X)` anywhere;
//! 3. a response that opens with a bare letter and a delimiter (`B`, `B.`, `B)`);
//! 4. fuzzy match of the response tail against the option captions
//!    (normalized Levenshtein similarity ≥ 0.8, single best option).
//!
//! If a matcher finds two or more different letters, the response is ambiguous and
//! the parser abstains without consulting lower-priority matchers.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::OptionLetter;

pub const FUZZY_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchedBy {
    ParenLetter,
    AnswerIsPhrase,
    LeadingLetter,
    CaptionFuzzy,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnswerOutcome {
    Option(OptionLetter),
    Abstain,
}

impl AnswerOutcome {
    pub fn letter(self) -> Option<OptionLetter> {
        match self {
            AnswerOutcome::Option(l) => Some(l),
            AnswerOutcome::Abstain => None,
        }
    }
}

impl Serialize for AnswerOutcome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            AnswerOutcome::Option(l) => s.collect_str(l),
            AnswerOutcome::Abstain => s.serialize_str("abstain"),
        }
    }
}

impl<'de> Deserialize<'de> for AnswerOutcome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "abstain" {
            return Ok(AnswerOutcome::Abstain);
        }
        s.parse().map(AnswerOutcome::Option).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub raw: String,
    pub outcome: AnswerOutcome,
    pub matched_by: MatchedBy,
}

static ANSWER_PHRASE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i:final\s+answer\s*(?:is)?|answer\s+is|answer\s*:|i\s+would\s+choose|i\s+choose|choose)\s*:?\s*(?:\(([A-J])\)|\b([A-J])\b)",
    )
    .expect("valid regex")
});

static PAREN_LETTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\(([A-J])\)").expect("valid regex"));

enum Verdict {
    Decisive(OptionLetter),
    Ambiguous,
    NoMatch,
}

fn verdict(letters: impl IntoIterator<Item = OptionLetter>) -> Verdict {
    let mut found: Option<OptionLetter> = None;
    for l in letters {
        match found {
            None => found = Some(l),
            Some(prev) if prev != l => return Verdict::Ambiguous,
            _ => {}
        }
    }
    found.map_or(Verdict::NoMatch, Verdict::Decisive)
}

/// A bare letter followed by a lowercase word reads as prose ("A cat", "I think").
fn followed_by_word(rest: &str) -> bool {
    let trimmed = rest.trim_start();
    trimmed.len() != rest.len() && trimmed.chars().next().is_some_and(char::is_lowercase)
}

fn letter_at(s: &str, idx: usize) -> OptionLetter {
    OptionLetter::from_char(s[idx..].chars().next().expect("captured letter"))
        .expect("regex restricts to A-J")
}

fn answer_phrase(raw: &str) -> Verdict {
    verdict(ANSWER_PHRASE.captures_iter(raw).filter_map(|c| {
        if let Some(m) = c.get(1) {
            return Some(letter_at(raw, m.start()));
        }
        let m = c.get(2)?;
        (!followed_by_word(&raw[m.end()..])).then(|| letter_at(raw, m.start()))
    }))
}

fn paren_letter(raw: &str) -> Verdict {
    verdict(
        PAREN_LETTER
            .captures_iter(raw)
            .map(|c| letter_at(raw, c.get(1).expect("group").start())),
    )
}

fn leading_letter(raw: &str) -> Verdict {
    let s = raw.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '"' | '\'' | '`'));
    let mut chars = s.chars();
    let Some(letter) = chars.next().and_then(OptionLetter::from_char) else {
        return Verdict::NoMatch;
    };
    let rest = chars.as_str();
    let decisive = match rest.chars().next() {
        None => true,
        Some(')' | ']' | '.' | ':' | ',' | ';' | '-' | '!' | '*' | '"' | '\'') => true,
        Some(c) if c.is_whitespace() => !followed_by_word(rest),
        Some(_) => false,
    };
    if decisive {
        Verdict::Decisive(letter)
    } else {
        Verdict::NoMatch
    }
}

/// Lowercase, punctuation to spaces, whitespace collapsed.
pub fn normalize_for_match(s: &str) -> String {
    let mapped: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .flat_map(char::to_lowercase)
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The last `n` space-separated words of a normalized string.
fn tail_words(s: &str, n: usize) -> String {
    let words: Vec<&str> = s.split(' ').collect();
    words[words.len().saturating_sub(n)..].join(" ")
}

/// Best normalized-Levenshtein similarity between an option caption and the
/// response tail holding as many words as the caption.
pub fn caption_similarity(response: &str, caption: &str) -> f64 {
    let response = normalize_for_match(response);
    let caption = normalize_for_match(caption);
    if caption.is_empty() || response.is_empty() {
        return 0.0;
    }
    let tail = tail_words(&response, caption.split(' ').count());
    strsim::normalized_levenshtein(&tail, &caption)
}

fn caption_fuzzy(raw: &str, options: &[String]) -> Verdict {
    let scores: Vec<f64> = options.iter().map(|o| caption_similarity(raw, o)).collect();
    let Some((best_idx, &best)) = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
    else {
        return Verdict::NoMatch;
    };
    if best < FUZZY_THRESHOLD {
        return Verdict::NoMatch;
    }
    if scores.iter().enumerate().any(|(i, &s)| i != best_idx && s >= best) {
        return Verdict::Ambiguous;
    }
    OptionLetter::from_index(best_idx).map_or(Verdict::NoMatch, Verdict::Decisive)
}

/// Extracts the chosen option from a complete response. Never fails.
///
/// `options` holds the caption text for each letter, `A` first; it may be empty,
/// in which case the fuzzy matcher is skipped.
pub fn parse_answer(raw: &str, options: &[String]) -> ParsedAnswer {
    let matchers: [(MatchedBy, &dyn Fn() -> Verdict); 4] = [
        (MatchedBy::AnswerIsPhrase, &|| answer_phrase(raw)),
        (MatchedBy::ParenLetter, &|| paren_letter(raw)),
        (MatchedBy::LeadingLetter, &|| leading_letter(raw)),
        (MatchedBy::CaptionFuzzy, &|| caption_fuzzy(raw, options)),
    ];
    for (by, matcher) in matchers {
        match matcher() {
            Verdict::Decisive(l) => {
                return ParsedAnswer {
                    raw: raw.to_string(),
                    outcome: AnswerOutcome::Option(l),
                    matched_by: by,
                }
            }
            Verdict::Ambiguous => break,
            Verdict::NoMatch => {}
        }
    }
    ParsedAnswer {
        raw: raw.to_string(),
        outcome: AnswerOutcome::Abstain,
        matched_by: MatchedBy::None,
    }
}
