use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::prompt::{ANSWER_PREFIX, REFUSAL};
use crate::engine::{ExhaustionEvent, FactEvent};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerType {
    #[default]
    Generic,
    YesNo,
    Enumeration,
}

impl AnswerType {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnswerType::Generic => "generic",
            AnswerType::YesNo => "yesno",
            AnswerType::Enumeration => "enumeration",
        }
    }
}

/// One dataset question with its accepted answers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    #[serde(alias = "gold_answer", alias = "gold_answers", alias = "answer")]
    #[serde(deserialize_with = "one_or_many")]
    pub answers: Vec<String>,
    #[serde(default)]
    pub answer_type: AnswerType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_type: Option<String>,
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

/// Reads line-delimited JSON records, skipping blank lines.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(reader: impl BufRead, what: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse(format!("{what} line {}: {e}", n + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{what} line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Terminal {
    Answered,
    IDontKnow,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub question: String,
    pub generated: String,
    pub fact_events: Vec<FactEvent>,
    pub terminal: Terminal,
    pub new_tokens: u64,
    #[serde(default)]
    pub exhaustion_events: Vec<ExhaustionEvent>,
    /// Length-normalized log-probability of the chosen hypothesis.
    #[serde(default)]
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedAnswer {
    Answer(String),
    IDontKnow,
    NotGiven,
}

impl ParsedAnswer {
    pub fn is_given(&self) -> bool {
        matches!(self, ParsedAnswer::Answer(_))
    }
}

/// The last line starting with the answer prefix, if any.
pub fn answer_line(text: &str) -> Option<&str> {
    text.lines()
        .rev()
        .find_map(|l| l.trim_start().strip_prefix(ANSWER_PREFIX))
        .map(str::trim)
}

/// Reads the outcome of a transcript: the final answer line, the refusal,
/// or nothing when the token budget ran out first.
pub fn parse_answer(t: &Transcript) -> ParsedAnswer {
    if let Some(a) = answer_line(&t.generated) {
        return ParsedAnswer::Answer(a.to_string());
    }
    if t.generated.contains(REFUSAL) {
        return ParsedAnswer::IDontKnow;
    }
    match t.terminal {
        Terminal::BudgetExhausted => ParsedAnswer::NotGiven,
        Terminal::Answered | Terminal::IDontKnow => ParsedAnswer::IDontKnow,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(generated: &str, terminal: Terminal) -> Transcript {
        Transcript {
            id: None,
            question: "q".into(),
            generated: generated.into(),
            fact_events: vec![],
            terminal,
            new_tokens: 0,
            exhaustion_events: vec![],
            score: 0.0,
        }
    }

    #[test]
    fn answer_line_parsed() {
        let x = t("reasoning\nAnswer: Danny Boyle\n", Terminal::Answered);
        assert_eq!(parse_answer(&x), ParsedAnswer::Answer("Danny Boyle".into()));
    }

    #[test]
    fn refusal_parsed() {
        let x = t("nothing found.\nI don't know.", Terminal::IDontKnow);
        assert_eq!(parse_answer(&x), ParsedAnswer::IDontKnow);
    }

    #[test]
    fn budget_without_answer_is_not_given() {
        let x = t("Fact: <a> <b> <c> .\nStill thinking", Terminal::BudgetExhausted);
        assert_eq!(parse_answer(&x), ParsedAnswer::NotGiven);
    }

    #[test]
    fn question_records_accept_single_gold() {
        let q: QuestionRecord = serde_json::from_str(
            r#"{"id":"1","question":"q?","gold_answer":"x","answer_type":"yesno"}"#,
        )
        .unwrap();
        assert_eq!(q.answers, vec!["x"]);
        assert_eq!(q.answer_type, AnswerType::YesNo);
        let q: QuestionRecord =
            serde_json::from_str(r#"{"id":"1","question":"q?","answers":["a","b"]}"#).unwrap();
        assert_eq!(q.answers.len(), 2);
        assert_eq!(q.answer_type, AnswerType::Generic);
    }
}
