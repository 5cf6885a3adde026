//! Text command grammar: stop phrases are stripped and configured target
//! names or synonyms are matched on word boundaries.

use serde::{Deserialize, Serialize};

use super::{ProfileSet, SegmentError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Segment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandIntent {
    pub verb: Verb,
    pub target: String,
    pub raw_text: String,
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn strip_stop_phrases(tokens: &[String]) -> Vec<&str> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = tokens[i].as_str();
        if t == "show" && tokens.get(i + 1).map(String::as_str) == Some("me") {
            i += 2;
            continue;
        }
        if !matches!(t, "highlight" | "segment" | "the") {
            out.push(t);
        }
        i += 1;
    }
    out
}

/// Resolves a free-text request to exactly one configured target.
pub fn parse_command(text: &str, profiles: &ProfileSet) -> Result<CommandIntent, SegmentError> {
    if text.trim().is_empty() {
        return Err(SegmentError::EmptyCommand);
    }
    let toks = tokens(text);
    let haystack = format!(" {} ", strip_stop_phrases(&toks).join(" "));

    let matched: Vec<&str> = profiles
        .targets
        .iter()
        .filter(|p| {
            std::iter::once(&p.name)
                .chain(&p.synonyms)
                .map(|phrase| tokens(phrase).join(" "))
                .filter(|needle| !needle.is_empty())
                .any(|needle| haystack.contains(&format!(" {needle} ")))
        })
        .map(|p| p.name.as_str())
        .collect();

    match matched.as_slice() {
        [] => Err(SegmentError::NoMatch(text.to_string())),
        [one] => Ok(CommandIntent {
            verb: Verb::Segment,
            target: one.to_string(),
            raw_text: text.to_string(),
        }),
        many => Err(SegmentError::Ambiguous(
            many.iter().map(|s| s.to_string()).collect(),
        )),
    }
}
