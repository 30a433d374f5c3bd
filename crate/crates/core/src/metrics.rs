//! Accuracy and precision under exact match.
//!
//! Accuracy is `correct / questions`. Precision is `correct / given`, where
//! refusals and answers cut off by the token budget are not given; with no
//! given answers precision is `None`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qa::{AnswerType, ParsedAnswer, QuestionRecord};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOptions {
    /// Separator between items of an enumeration answer.
    pub delimiter: String,
    /// Compare enumerations as whole strings instead of as sets.
    pub strict_enumeration: bool,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            delimiter: ",".into(),
            strict_enumeration: false,
        }
    }
}

/// Trims and collapses internal whitespace, then lowercases.
pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn item_set(s: &str, delimiter: &str) -> BTreeSet<String> {
    s.split(delimiter)
        .map(normalize)
        .filter(|x| !x.is_empty())
        .collect()
}

/// Case-insensitive equality against any gold form. Enumerations compare as
/// unordered sets of items unless strict matching is requested.
pub fn exact_match(pred: &str, gold: &[String], kind: AnswerType, opts: &MatchOptions) -> bool {
    if kind == AnswerType::Enumeration && !opts.strict_enumeration {
        let p = item_set(pred, &opts.delimiter);
        return gold.iter().any(|g| item_set(g, &opts.delimiter) == p);
    }
    let p = normalize(pred);
    gold.iter().any(|g| normalize(g) == p)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub questions: u64,
    pub given: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub precision: Option<f64>,
}

impl Counts {
    fn add(&mut self, given: bool, correct: bool) {
        self.questions += 1;
        self.given += u64::from(given);
        self.correct += u64::from(correct);
    }

    fn finish(&mut self) {
        self.accuracy = if self.questions == 0 {
            0.0
        } else {
            self.correct as f64 / self.questions as f64
        };
        self.precision = (self.given > 0).then(|| self.correct as f64 / self.given as f64);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub overall: Counts,
    pub by_answer_type: BTreeMap<String, Counts>,
    pub by_question_type: BTreeMap<String, Counts>,
}

impl EvalResult {
    pub fn questions(&self) -> u64 {
        self.overall.questions
    }

    pub fn accuracy(&self) -> f64 {
        self.overall.accuracy
    }

    pub fn precision(&self) -> Option<f64> {
        self.overall.precision
    }
}

/// Scores `(question id, parsed answer)` pairs against their gold records.
pub fn aggregate<'a>(
    answers: impl IntoIterator<Item = (&'a str, &'a ParsedAnswer)>,
    gold: &[QuestionRecord],
    opts: &MatchOptions,
) -> Result<EvalResult> {
    let by_id: HashMap<&str, &QuestionRecord> = gold.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut r = EvalResult::default();
    for (id, ans) in answers {
        let q = by_id.get(id).ok_or_else(|| Error::MissingGold(id.to_string()))?;
        let (given, correct) = match ans {
            ParsedAnswer::Answer(a) => (true, exact_match(a, &q.answers, q.answer_type, opts)),
            ParsedAnswer::IDontKnow | ParsedAnswer::NotGiven => (false, false),
        };
        r.overall.add(given, correct);
        r.by_answer_type
            .entry(q.answer_type.as_str().to_string())
            .or_default()
            .add(given, correct);
        if let Some(qt) = &q.question_type {
            r.by_question_type.entry(qt.clone()).or_default().add(given, correct);
        }
    }
    r.overall.finish();
    r.by_answer_type.values_mut().for_each(Counts::finish);
    r.by_question_type.values_mut().for_each(Counts::finish);
    Ok(r)
}

fn fmt_row(f: &mut fmt::Formatter<'_>, name: &str, c: &Counts) -> fmt::Result {
    let p = c.precision.map_or("n/a".to_string(), |p| format!("{p:.4}"));
    writeln!(
        f,
        "{name:<20} {:>8} {:>8} {:>8} {:>9.4} {:>9}",
        c.questions, c.given, c.correct, c.accuracy, p
    )
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>8} {:>8} {:>8} {:>9} {:>9}",
            "", "questions", "given", "correct", "accuracy", "precision"
        )?;
        fmt_row(f, "overall", &self.overall)?;
        for (k, c) in &self.by_answer_type {
            fmt_row(f, &format!("answer:{k}"), c)?;
        }
        for (k, c) in &self.by_question_type {
            fmt_row(f, &format!("question:{k}"), c)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold(id: &str, a: &[&str], kind: AnswerType) -> QuestionRecord {
        QuestionRecord {
            id: id.into(),
            question: "q".into(),
            answers: a.iter().map(|s| s.to_string()).collect(),
            answer_type: kind,
            question_type: None,
        }
    }

    #[test]
    fn case_folding() {
        let o = MatchOptions::default();
        assert!(exact_match("danny boyle", &["Danny Boyle".into()], AnswerType::Generic, &o));
        assert!(exact_match("  Danny   Boyle ", &["danny boyle".into()], AnswerType::Generic, &o));
        assert!(!exact_match("1956-10-20", &["20 October 1956".into()], AnswerType::Generic, &o));
    }

    #[test]
    fn enumeration_modes() {
        let g = vec!["b, a".to_string()];
        let set = MatchOptions::default();
        let strict = MatchOptions {
            strict_enumeration: true,
            ..set.clone()
        };
        assert!(exact_match("a, b", &g, AnswerType::Enumeration, &set));
        assert!(!exact_match("a, b", &g, AnswerType::Enumeration, &strict));
        assert!(exact_match("b, a", &g, AnswerType::Enumeration, &strict));
    }

    #[test]
    fn precision_undefined_without_answers() {
        let g = vec![gold("1", &["x"], AnswerType::Generic)];
        let a = [ParsedAnswer::IDontKnow];
        let r = aggregate([("1", &a[0])], &g, &MatchOptions::default()).unwrap();
        assert_eq!(r.precision(), None);
        assert_eq!(r.accuracy(), 0.0);
    }

    #[test]
    fn missing_gold() {
        let a = ParsedAnswer::NotGiven;
        assert!(matches!(
            aggregate([("nope", &a)], &[], &MatchOptions::default()),
            Err(Error::MissingGold(_))
        ));
    }

    #[test]
    fn definitional_arithmetic() {
        let g: Vec<_> = (0..10).map(|i| gold(&i.to_string(), &["y"], AnswerType::Generic)).collect();
        let answers: Vec<(String, ParsedAnswer)> = (0..10)
            .map(|i| {
                let a = match i {
                    0..4 => ParsedAnswer::Answer("y".into()),
                    4 => ParsedAnswer::Answer("n".into()),
                    _ => ParsedAnswer::IDontKnow,
                };
                (i.to_string(), a)
            })
            .collect();
        let r = aggregate(
            answers.iter().map(|(i, a)| (i.as_str(), a)),
            &g,
            &MatchOptions::default(),
        )
        .unwrap();
        assert_eq!(r.accuracy(), 0.4);
        assert_eq!(r.precision(), Some(0.8));
    }
}
