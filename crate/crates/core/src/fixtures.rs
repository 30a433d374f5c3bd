//! Small hand-built knowledge bases with vocabularies chosen so that their
//! token-level structure is known exactly.

use crate::qa::{QuestionRecord, AnswerType, Script};
use crate::tokenizer::Tokenizer;
use crate::trie::FactTree;
use crate::error::Result;

pub const EURO_COUNTRIES: [&str; 26] = [
    "Andorra", "Austria", "Belgium", "Croatia", "Cyprus", "Estonia", "Finland", "France",
    "Germany", "Greece", "Ireland", "Italy", "Kosovo", "Latvia", "Lithuania", "Luxembourg",
    "Malta", "Monaco", "Montenegro", "Netherlands", "Portugal", "San Marino", "Slovakia",
    "Slovenia", "Spain", "Vatican City",
];

pub fn euro_fact(country: &str) -> String {
    format!("<Euro> <country> <{country}> .")
}

pub fn euro_facts() -> Vec<String> {
    EURO_COUNTRIES.iter().map(|c| euro_fact(c)).collect()
}

/// Every country is one token, except Slovakia and Slovenia, which share
/// the byte token `S` followed by `lovakia` / `lovenia`.
pub fn euro_tokenizer() -> Tokenizer {
    let mut pieces = vec![
        " <Euro>".to_string(),
        " <country>".to_string(),
        " <".to_string(),
        "> .".to_string(),
        "lovakia".to_string(),
        "lovenia".to_string(),
        "Fact:".to_string(),
    ];
    pieces.extend(
        EURO_COUNTRIES
            .iter()
            .filter(|c| !c.starts_with("Slov"))
            .map(|c| c.to_string()),
    );
    Tokenizer::from_pieces(pieces)
}

pub const BOYLE_FACTS: [&str; 6] = [
    "<Danny Boyle> <date of birth> <1956-10-20> .",
    "<Danny Boyle> <given name> <Danny> .",
    "<Danny Boyle> <given name> <Daniel> .",
    "<Slumdog Millionaire> <director> <Danny Boyle> .",
    "<Slumdog Millionaire> <genre> <drama film> .",
    "<Trainspotting> <director> <Danny Boyle> .",
];

/// `born` is in the vocabulary so that a model can prefer it, but no fact
/// continues `<Danny Boyle> <` with it.
pub fn boyle_tokenizer() -> Tokenizer {
    Tokenizer::from_pieces([
        " <Danny", " Boyle>", " <", "> .", "date", " of", " birth>", "given", " name>", "born",
        " <Slumdog", " Millionaire>", "director>", "genre>", "Fact:", "Answer:", "1956", "Danny",
        "Daniel", " <Trainspotting>", "drama", " film", "\nFact:",
    ])
}

pub fn tree(tok: &Tokenizer, facts: &[impl AsRef<str>]) -> Result<FactTree> {
    FactTree::from_sequences(
        tok.fingerprint().clone(),
        facts.iter().map(|f| tok.encode_fact(f.as_ref())),
    )
}

pub const SLUMDOG_QUESTION: &str = "When was the director of Slumdog Millionaire born?";

/// The two-call plan: find the director, then the director's birth date.
pub fn slumdog_script() -> Script {
    Script::from_pairs([
        (
            "",
            vec!["I need the director of Slumdog Millionaire, then his date of birth.\nFact:"],
        ),
        (
            "then his date of birth.\nFact:",
            vec![" <Slumdog Millionaire> <director> <Danny Boyle> ."],
        ),
        (
            "<Slumdog Millionaire> <director> <Danny Boyle> .",
            vec!["\nThe director is Danny Boyle. Next, his birthday.\nFact:"],
        ),
        (
            "his birthday.\nFact:",
            vec![" <Danny Boyle> <date of birth> <1956-10-20> ."],
        ),
        ("<1956-10-20> .", vec!["\nAnswer: 1956-10-20\n"]),
    ])
}

pub fn slumdog_question() -> QuestionRecord {
    QuestionRecord {
        id: "slumdog".into(),
        question: SLUMDOG_QUESTION.into(),
        answers: vec!["1956-10-20".into()],
        answer_type: AnswerType::Generic,
        question_type: Some("multi-hop".into()),
    }
}
