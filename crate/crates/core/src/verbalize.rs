//! Turning knowledge-graph triples into delimited textual facts.
//!
//! A fact renders as `<subject> <predicate> <object> .`. Triples are filtered
//! first: subject and predicate must carry KB identifiers, the object must be
//! an identified entity, an English or untagged literal, a number or a date.
//! Entities are labeled with their canonical title when they have one and
//! with `label (description)` otherwise.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full-width replacements for the fact delimiters.
const LT_LOOKALIKE: char = '\u{FF1C}';
const GT_LOOKALIKE: char = '\u{FF1E}';

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiteralKind {
    String,
    Number,
    Date,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ObjectValue {
    Entity(String),
    Literal {
        text: String,
        lang: Option<String>,
        kind: LiteralKind,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RawTriple {
    pub subject_id: String,
    pub predicate_id: String,
    pub object: ObjectValue,
}

impl RawTriple {
    pub fn entity(s: &str, p: &str, o: &str) -> Self {
        Self {
            subject_id: s.into(),
            predicate_id: p.into(),
            object: ObjectValue::Entity(o.into()),
        }
    }

    pub fn literal(s: &str, p: &str, kind: LiteralKind, lang: Option<&str>, text: &str) -> Self {
        Self {
            subject_id: s.into(),
            predicate_id: p.into(),
            object: ObjectValue::Literal {
                text: text.into(),
                lang: lang.map(Into::into),
                kind,
            },
        }
    }

    /// Parses `subject <TAB> predicate <TAB> object_spec`, where the object is
    /// `E:<id>` or `L:<kind>:<lang?>:<text>`.
    pub fn parse_line(line: &str) -> Result<Self> {
        let mut cols = line.splitn(3, '\t');
        let (Some(s), Some(p), Some(o)) = (cols.next(), cols.next(), cols.next()) else {
            return Err(Error::Parse(format!("expected 3 tab-separated columns: {line:?}")));
        };
        if s.is_empty() || p.is_empty() {
            return Err(Error::Parse(format!("empty subject or predicate: {line:?}")));
        }
        let object = if let Some(id) = o.strip_prefix("E:") {
            if id.is_empty() {
                return Err(Error::Parse(format!("empty entity object: {line:?}")));
            }
            ObjectValue::Entity(id.to_string())
        } else if let Some(rest) = o.strip_prefix("L:") {
            let mut parts = rest.splitn(3, ':');
            let (Some(kind), Some(lang), Some(text)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Parse(format!("malformed literal: {o:?}")));
            };
            let kind = match kind {
                "string" => LiteralKind::String,
                "number" => LiteralKind::Number,
                "date" => LiteralKind::Date,
                other => return Err(Error::Parse(format!("unknown literal kind {other:?}"))),
            };
            if kind == LiteralKind::Date {
                parse_date(text)?;
            }
            ObjectValue::Literal {
                text: text.to_string(),
                lang: (!lang.is_empty()).then(|| lang.to_string()),
                kind,
            }
        } else {
            return Err(Error::Parse(format!("object must start with E: or L: ({o:?})")));
        };
        Ok(Self {
            subject_id: s.to_string(),
            predicate_id: p.to_string(),
            object,
        })
    }

    pub fn to_line(&self) -> String {
        let obj = match &self.object {
            ObjectValue::Entity(id) => format!("E:{id}"),
            ObjectValue::Literal { text, lang, kind } => {
                let kind = match kind {
                    LiteralKind::String => "string",
                    LiteralKind::Number => "number",
                    LiteralKind::Date => "date",
                };
                format!("L:{kind}:{}:{text}", lang.as_deref().unwrap_or(""))
            }
        };
        format!("{}\t{}\t{obj}", self.subject_id, self.predicate_id)
    }
}

/// Which identifiers count as KB identifiers for entities and properties.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdScheme {
    pub entity_prefix: String,
    pub property_prefix: String,
}

impl Default for IdScheme {
    fn default() -> Self {
        Self {
            entity_prefix: "Q".into(),
            property_prefix: "P".into(),
        }
    }
}

impl IdScheme {
    fn matches(prefix: &str, id: &str) -> bool {
        id.strip_prefix(prefix)
            .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
    }

    pub fn is_entity(&self, id: &str) -> bool {
        Self::matches(&self.entity_prefix, id)
    }

    pub fn is_property(&self, id: &str) -> bool {
        Self::matches(&self.property_prefix, id)
    }

    pub fn filter(&self, t: &RawTriple) -> bool {
        if !self.is_entity(&t.subject_id) || !self.is_property(&t.predicate_id) {
            return false;
        }
        match &t.object {
            ObjectValue::Entity(id) => self.is_entity(id),
            ObjectValue::Literal { kind, lang, .. } => match kind {
                LiteralKind::Number | LiteralKind::Date => true,
                LiteralKind::String => lang.as_deref().is_none_or(is_english_tag),
            },
        }
    }
}

fn is_english_tag(tag: &str) -> bool {
    let primary = tag.split('-').next().unwrap_or("");
    primary.eq_ignore_ascii_case("en")
}

/// Keeps only informative triples, using Wikidata-style `Q`/`P` identifiers.
pub fn filter_triple(t: &RawTriple) -> bool {
    IdScheme::default().filter(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    CanonicalTitle,
    LabelWithDescription,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntityLabel {
    pub entity_id: String,
    pub display: String,
    pub source: LabelSource,
}

/// Chooses the display label of an entity. An empty description without a
/// title is rejected, since `label ()` carries nothing that disambiguates.
pub fn label_entity(
    id: &str,
    title: Option<&str>,
    label: &str,
    description: &str,
) -> Result<EntityLabel> {
    if let Some(title) = title.map(str::trim).filter(|t| !t.is_empty()) {
        return Ok(EntityLabel {
            entity_id: id.into(),
            display: title.into(),
            source: LabelSource::CanonicalTitle,
        });
    }
    let (label, description) = (label.trim(), description.trim());
    if label.is_empty() || description.is_empty() {
        return Err(Error::MissingLabel(id.into()));
    }
    Ok(EntityLabel {
        entity_id: id.into(),
        display: format!("{label} ({description})"),
        source: LabelSource::LabelWithDescription,
    })
}

/// Label lookup for entities and predicates, loaded from the label table.
#[derive(Debug, Default)]
pub struct LabelTable {
    entities: HashMap<String, EntityLabel>,
    predicates: HashMap<String, String>,
    by_display: HashMap<String, String>,
    collisions: Vec<(String, String, String)>,
    unlabeled: Vec<String>,
    scheme: IdScheme,
}

impl LabelTable {
    pub fn new(scheme: IdScheme) -> Self {
        Self {
            scheme,
            ..Default::default()
        }
    }

    /// Adds one row of the label table. Rows for property ids define
    /// predicate names (the plain label); other rows go through
    /// [`label_entity`]. Entities without a usable label are remembered and
    /// later reported as unresolvable.
    pub fn insert(&mut self, id: &str, title: Option<&str>, label: &str, description: &str) {
        if self.scheme.is_property(id) {
            let name = if label.trim().is_empty() {
                title.unwrap_or("").trim()
            } else {
                label.trim()
            };
            if name.is_empty() {
                self.unlabeled.push(id.into());
            } else {
                self.predicates.insert(id.into(), name.into());
            }
            return;
        }
        match label_entity(id, title, label, description) {
            Ok(l) => {
                if let Some(other) = self.by_display.get(&l.display) {
                    if other != id {
                        log::warn!("label collision: {other} and {id} both render as {:?}", l.display);
                        self.collisions.push((other.clone(), id.into(), l.display.clone()));
                    }
                } else {
                    self.by_display.insert(l.display.clone(), id.into());
                }
                self.entities.insert(id.into(), l);
            }
            Err(_) => self.unlabeled.push(id.into()),
        }
    }

    /// Parses `entity_id <TAB> title? <TAB> label <TAB> description` lines.
    pub fn read_tsv(reader: impl BufRead, scheme: IdScheme) -> Result<Self> {
        let mut table = Self::new(scheme);
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse(format!("label table line {}: {e}", n + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.splitn(4, '\t').collect();
            if cols.len() != 4 {
                return Err(Error::Parse(format!(
                    "label table line {}: expected 4 columns, found {}",
                    n + 1,
                    cols.len()
                )));
            }
            let title = (!cols[1].is_empty()).then_some(cols[1]);
            table.insert(cols[0], title, cols[2], cols[3]);
        }
        Ok(table)
    }

    pub fn entity(&self, id: &str) -> Option<&EntityLabel> {
        self.entities.get(id)
    }

    pub fn predicate(&self, id: &str) -> Option<&str> {
        self.predicates.get(id).map(String::as_str)
    }

    /// Pairs of distinct entities that render to the same display string.
    pub fn collisions(&self) -> &[(String, String, String)] {
        &self.collisions
    }

    pub fn unlabeled(&self) -> &[String] {
        &self.unlabeled
    }

    pub fn scheme(&self) -> &IdScheme {
        &self.scheme
    }
}

/// A verbalized triple. Spans are byte ranges of the three constituents
/// within `text`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Fact {
    text: String,
    subject_span: Range<usize>,
    predicate_span: Range<usize>,
    object_span: Range<usize>,
}

fn escape_delimiters(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            '<' => LT_LOOKALIKE,
            '>' => GT_LOOKALIKE,
            '\n' | '\r' | '\t' => ' ',
            c => c,
        })
        .collect()
}

impl Fact {
    /// Renders a fact, replacing delimiter characters inside the parts.
    pub fn new(subject: &str, predicate: &str, object: &str) -> Self {
        let (s, p, o) = (
            escape_delimiters(subject),
            escape_delimiters(predicate),
            escape_delimiters(object),
        );
        let mut text = String::with_capacity(s.len() + p.len() + o.len() + 10);
        text.push('<');
        let subject_span = text.len()..text.len() + s.len();
        text.push_str(&s);
        text.push_str("> <");
        let predicate_span = text.len()..text.len() + p.len();
        text.push_str(&p);
        text.push_str("> <");
        let object_span = text.len()..text.len() + o.len();
        text.push_str(&o);
        text.push_str("> .");
        Self {
            text,
            subject_span,
            predicate_span,
            object_span,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::MalformedFact(text.to_string());
        let inner = text
            .strip_prefix('<')
            .and_then(|t| t.strip_suffix("> ."))
            .ok_or_else(bad)?;
        let parts: Vec<&str> = inner.split("> <").collect();
        if parts.len() != 3 || parts.iter().any(|p| p.contains(['<', '>'])) {
            return Err(bad());
        }
        let fact = Self::new(parts[0], parts[1], parts[2]);
        if fact.text != text {
            return Err(bad());
        }
        Ok(fact)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn subject(&self) -> &str {
        &self.text[self.subject_span.clone()]
    }

    pub fn predicate(&self) -> &str {
        &self.text[self.predicate_span.clone()]
    }

    pub fn object(&self) -> &str {
        &self.text[self.object_span.clone()]
    }

    pub fn spans(&self) -> [Range<usize>; 3] {
        [
            self.subject_span.clone(),
            self.predicate_span.clone(),
            self.object_span.clone(),
        ]
    }

    pub fn into_text(self) -> String {
        self.text
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Accepts `YYYY-MM-DD`, optionally signed and followed by a time part
/// (`+1956-10-20T00:00:00Z`).
fn parse_date(text: &str) -> Result<NaiveDate> {
    let t = text.strip_prefix('+').unwrap_or(text);
    let day = t.split('T').next().unwrap_or(t);
    NaiveDate::parse_from_str(day, "%Y-%m-%d")
        .map_err(|e| Error::Parse(format!("invalid date literal {text:?}: {e}")))
}

fn render_object(obj: &ObjectValue, labels: &LabelTable) -> Result<String> {
    match obj {
        ObjectValue::Entity(id) => labels
            .entity(id)
            .map(|l| l.display.clone())
            .ok_or_else(|| Error::UnresolvableLabel(id.clone())),
        ObjectValue::Literal { text, kind, .. } => match kind {
            LiteralKind::Date => Ok(parse_date(text)?.format("%Y-%m-%d").to_string()),
            LiteralKind::Number | LiteralKind::String => Ok(text.clone()),
        },
    }
}

pub fn verbalize(t: &RawTriple, labels: &LabelTable) -> Result<Fact> {
    let subject = labels
        .entity(&t.subject_id)
        .ok_or_else(|| Error::UnresolvableLabel(t.subject_id.clone()))?;
    let predicate = labels
        .predicate(&t.predicate_id)
        .ok_or_else(|| Error::UnresolvableLabel(t.predicate_id.clone()))?;
    let object = render_object(&t.object, labels)?;
    Ok(Fact::new(&subject.display, predicate, &object))
}

/// Swaps subject and object and renames the predicate, for facts that need
/// to be reachable tail-first.
pub fn invert_fact(f: &Fact, inverse_predicate_name: &str) -> Fact {
    Fact::new(f.object(), inverse_predicate_name, f.subject())
}

/// Counters from a verbalization pass.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct VerbalizeStats {
    pub lines: u64,
    pub filtered_out: u64,
    pub unresolvable: u64,
    pub facts: u64,
}

/// Streams triple lines and yields the verbalized facts. Malformed lines are
/// errors; filtered or unresolvable triples are counted and skipped.
pub fn verbalize_lines<R: BufRead>(
    reader: R,
    labels: &LabelTable,
    mut sink: impl FnMut(Fact),
) -> Result<VerbalizeStats> {
    let mut stats = VerbalizeStats::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse(format!("triples line {}: {e}", n + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        let triple = RawTriple::parse_line(&line)
            .map_err(|e| Error::Parse(format!("triples line {}: {e}", n + 1)))?;
        if !labels.scheme().filter(&triple) {
            stats.filtered_out += 1;
            continue;
        }
        match verbalize(&triple, labels) {
            Ok(f) => {
                stats.facts += 1;
                sink(f);
            }
            Err(Error::UnresolvableLabel(id)) => {
                log::debug!("skipping triple on line {}: no label for {id}", n + 1);
                stats.unresolvable += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(stats)
}
