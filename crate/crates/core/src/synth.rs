//! Seeded synthetic knowledge bases for tests and benchmarks.

use std::collections::HashSet;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::verbalize::{verbalize, IdScheme, LabelTable, LiteralKind, ObjectValue, RawTriple};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Number of distinct triples to generate.
    pub facts: usize,
    pub entities: usize,
    pub predicates: usize,
    /// Share of entities labeled by `label (description)` instead of a title.
    pub described_share: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Sizes proportional to the fact count.
    pub fn with_facts(facts: usize, seed: u64) -> Self {
        Self {
            facts,
            entities: (facts / 4).max(8),
            predicates: 40,
            described_share: 0.3,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub id: String,
    pub title: Option<String>,
    pub label: String,
    pub description: String,
}

#[derive(Clone, Copy)]
enum Range {
    Entity,
    Date,
    Number,
    Text,
}

const PREDICATES: &[(&str, Range)] = &[
    ("country", Range::Entity),
    ("director", Range::Entity),
    ("date of birth", Range::Date),
    ("place of birth", Range::Entity),
    ("author", Range::Entity),
    ("population", Range::Number),
    ("located in", Range::Entity),
    ("genre", Range::Entity),
    ("instance of", Range::Entity),
    ("capital", Range::Entity),
    ("spouse", Range::Entity),
    ("employer", Range::Entity),
    ("educated at", Range::Entity),
    ("inception", Range::Date),
    ("official language", Range::Entity),
    ("member of", Range::Entity),
    ("award received", Range::Entity),
    ("height", Range::Number),
    ("motto text", Range::Text),
    ("founded by", Range::Entity),
    ("date of death", Range::Date),
    ("owned by", Range::Entity),
    ("short description", Range::Text),
    ("number of employees", Range::Number),
];

const SYLLABLES: &[&str] = &[
    "al", "ba", "cor", "da", "el", "fen", "gar", "hal", "is", "jun", "ka", "lor", "mi", "nor",
    "os", "pel", "qui", "ra", "sel", "tor", "ul", "va", "wen", "xan", "yor", "zel", "bre", "dun",
    "fal", "gri", "mar", "ste", "vi", "ro", "an", "en", "ith", "on", "ar", "us",
];

const KINDS: &[&str] = &[
    "city", "river", "novel", "film", "painter", "physicist", "football club", "village",
    "mountain", "company", "poet", "album", "university", "actress", "politician", "island",
];

const WORDS: &[&str] = &[
    "light", "river", "stone", "honour", "north", "free", "unity", "labor", "peace", "forward",
    "ancient", "bright", "crown", "harbor", "silent",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=3);
    let mut w: String = (0..n).map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())]).collect();
    w[..1].make_ascii_uppercase();
    w
}

/// A generated KB: triples plus the label table rows that resolve them.
#[derive(Clone, Debug, Default)]
pub struct SynthKb {
    pub triples: Vec<RawTriple>,
    pub labels: Vec<LabelRow>,
}

impl SynthKb {
    pub fn generate(cfg: &SynthConfig) -> Result<Self> {
        if cfg.entities < 2 || cfg.predicates == 0 {
            return Err(Error::InvalidConfig("need at least 2 entities and 1 predicate".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut kb = SynthKb::default();
        let mut seen_display = HashSet::new();
        for i in 0..cfg.entities {
            let id = format!("Q{}", i + 1);
            loop {
                let label = match rng.gen_range(0..3) {
                    0 => word(&mut rng),
                    _ => format!("{} {}", word(&mut rng), word(&mut rng)),
                };
                let row = if rng.gen_bool(cfg.described_share) {
                    let kind = KINDS[rng.gen_range(0..KINDS.len())];
                    LabelRow {
                        id: id.clone(),
                        title: None,
                        description: format!("{kind} in {}", word(&mut rng)),
                        label,
                    }
                } else {
                    LabelRow {
                        id: id.clone(),
                        title: Some(label.clone()),
                        label,
                        description: String::new(),
                    }
                };
                let display = match &row.title {
                    Some(t) => t.clone(),
                    None => format!("{} ({})", row.label, row.description),
                };
                if seen_display.insert(display) {
                    kb.labels.push(row);
                    break;
                }
            }
        }
        let mut ranges = Vec::with_capacity(cfg.predicates);
        for i in 0..cfg.predicates {
            let (name, range) = match PREDICATES.get(i) {
                Some(&(n, r)) => (n.to_string(), r),
                None => (format!("related property {}", i + 1), Range::Entity),
            };
            kb.labels.push(LabelRow {
                id: format!("P{}", i + 1),
                title: None,
                label: name,
                description: String::new(),
            });
            ranges.push(range);
        }

        let max_unique = cfg.entities as f64 * cfg.predicates as f64 * cfg.entities as f64;
        if (cfg.facts as f64) > max_unique / 4.0 {
            return Err(Error::InvalidConfig("too many facts for the entity count".into()));
        }
        let mut seen = HashSet::with_capacity(cfg.facts);
        while kb.triples.len() < cfg.facts {
            // Skewed subjects give some entities many facts.
            let u: f64 = rng.gen();
            let s = ((u * u) * cfg.entities as f64) as usize;
            let p = rng.gen_range(0..cfg.predicates);
            let object = match ranges[p] {
                Range::Entity => ObjectValue::Entity(format!("Q{}", rng.gen_range(0..cfg.entities) + 1)),
                Range::Date => ObjectValue::Literal {
                    text: format!(
                        "{:04}-{:02}-{:02}",
                        rng.gen_range(1800..2021),
                        rng.gen_range(1..13),
                        rng.gen_range(1..29)
                    ),
                    lang: None,
                    kind: LiteralKind::Date,
                },
                Range::Number => ObjectValue::Literal {
                    text: rng.gen_range(1..5_000_000u32).to_string(),
                    lang: None,
                    kind: LiteralKind::Number,
                },
                Range::Text => ObjectValue::Literal {
                    text: (0..rng.gen_range(2..5))
                        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
                        .collect::<Vec<_>>()
                        .join(" "),
                    lang: Some("en".into()),
                    kind: LiteralKind::String,
                },
            };
            let t = RawTriple {
                subject_id: format!("Q{}", s + 1),
                predicate_id: format!("P{}", p + 1),
                object,
            };
            if seen.insert(t.clone()) {
                kb.triples.push(t);
            }
        }
        Ok(kb)
    }

    pub fn label_table(&self) -> LabelTable {
        let mut t = LabelTable::new(IdScheme::default());
        for r in &self.labels {
            t.insert(&r.id, r.title.as_deref(), &r.label, &r.description);
        }
        t
    }

    /// Verbalized fact texts, in triple order.
    pub fn fact_texts(&self) -> Result<Vec<String>> {
        let labels = self.label_table();
        self.triples
            .iter()
            .map(|t| verbalize(t, &labels).map(|f| f.into_text()))
            .collect()
    }

    pub fn write_triples(&self, mut w: impl Write) -> std::io::Result<()> {
        for t in &self.triples {
            writeln!(w, "{}", t.to_line())?;
        }
        Ok(())
    }

    pub fn write_labels(&self, mut w: impl Write) -> std::io::Result<()> {
        for r in &self.labels {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                r.id,
                r.title.as_deref().unwrap_or(""),
                r.label,
                r.description
            )?;
        }
        Ok(())
    }
}
