//! Constrained decoding sessions.
//!
//! A session follows the generated token stream. In normal mode it only
//! watches the decoded text for the trigger string; once the trigger appears
//! it switches to constrained mode, where [`DecodingSession::mask_logits`]
//! leaves only the continuations of the current fact prefix that still have
//! unconsumed facts below them. Reaching a leaf consumes that fact for this
//! session and returns to normal mode.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::overlay::{ConsumedOverlay, OverlayCursor};
use crate::tokenizer::{TokenId, Tokenizer};
use crate::trie::FactSource;

pub const DEFAULT_TRIGGER: &str = "Fact:";

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EngineConfig {
    pub trigger: String,
    /// Tokens forced between the trigger and the first fact token.
    #[serde(default)]
    pub preamble: Vec<TokenId>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            trigger: DEFAULT_TRIGGER.to_string(),
            preamble: Vec::new(),
        }
    }
}

/// A fact source bound to the tokenizer it was built with.
pub struct Engine<S: FactSource> {
    source: S,
    tokenizer: Tokenizer,
    config: EngineConfig,
}

impl<S: FactSource> std::fmt::Debug for Engine<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("fingerprint", self.tokenizer.fingerprint())
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl<S: FactSource> Engine<S> {
    pub fn new(source: S, tokenizer: Tokenizer, config: EngineConfig) -> Result<Self> {
        if source.fingerprint() != tokenizer.fingerprint() {
            return Err(Error::TokenizerMismatch {
                expected: source.fingerprint().to_string(),
                found: tokenizer.fingerprint().to_string(),
            });
        }
        if config.trigger.is_empty() {
            return Err(Error::InvalidConfig("trigger must not be empty".into()));
        }
        let vocab = tokenizer.vocab_size();
        if let Some(&t) = config.preamble.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::InvalidConfig(format!("preamble token {t} outside vocabulary")));
        }
        Ok(Self {
            source,
            tokenizer,
            config,
        })
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.tokenizer.vocab_size()
    }
}

/// Starts a session in normal mode with nothing consumed.
pub fn create_session<S: FactSource>(engine: &Arc<Engine<S>>) -> DecodingSession<S> {
    DecodingSession {
        engine: engine.clone(),
        mode: Mode::Normal,
        cursor: Vec::new(),
        node: None,
        consumed: OverlayCursor::default(),
        overlay: ConsumedOverlay::default(),
        preamble_left: 0,
        buffer: Vec::new(),
        position: 0,
        fact_start: 0,
        report: Arc::new(SessionReport::default()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Normal,
    Constrained,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FactEvent {
    pub text: String,
    pub tokens: Vec<TokenId>,
    /// Token positions `[start, end)` within the generated stream.
    pub start: u64,
    pub end: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Transition {
    pub position: u64,
    pub to: Mode,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ExhaustionEvent {
    pub position: u64,
    pub prefix: Vec<TokenId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SessionReport {
    pub facts: Vec<FactEvent>,
    pub transitions: Vec<Transition>,
    pub exhaustion_events: Vec<ExhaustionEvent>,
    pub tokens: u64,
}

/// What a call to [`DecodingSession::step`] changed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    /// The trigger was seen; the next token is constrained.
    Constrained,
    /// The trigger was seen but every fact has been consumed; the session
    /// stays in normal mode.
    TriggerExhausted,
    /// A fact was completed and the session is back in normal mode.
    FactCompleted(String),
}

pub struct DecodingSession<S: FactSource> {
    engine: Arc<Engine<S>>,
    mode: Mode,
    cursor: Vec<TokenId>,
    node: Option<S::Node>,
    consumed: OverlayCursor,
    overlay: ConsumedOverlay,
    preamble_left: usize,
    buffer: Vec<u8>,
    position: u64,
    fact_start: u64,
    report: Arc<SessionReport>,
}

impl<S: FactSource> Clone for DecodingSession<S> {
    fn clone(&self) -> Self {
        Self {
            engine: self.engine.clone(),
            mode: self.mode,
            cursor: self.cursor.clone(),
            node: self.node.clone(),
            consumed: self.consumed.clone(),
            overlay: self.overlay.clone(),
            preamble_left: self.preamble_left,
            buffer: self.buffer.clone(),
            position: self.position,
            fact_start: self.fact_start,
            report: self.report.clone(),
        }
    }
}

impl<S: FactSource> std::fmt::Debug for DecodingSession<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DecodingSession")
            .field("mode", &self.mode)
            .field("cursor", &self.cursor)
            .field("position", &self.position)
            .field("facts", &self.report.facts.len())
            .finish_non_exhaustive()
    }
}

/// Independent copies of one session, one per beam.
pub struct BeamState<S: FactSource> {
    pub beams: Vec<DecodingSession<S>>,
}

impl<S: FactSource> BeamState<S> {
    pub fn beam_count(&self) -> usize {
        self.beams.len()
    }
}

impl<S: FactSource> DecodingSession<S> {
    pub fn engine(&self) -> &Arc<Engine<S>> {
        &self.engine
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Fact tokens generated since the trigger (preamble excluded).
    pub fn cursor(&self) -> &[TokenId] {
        &self.cursor
    }

    pub fn overlay(&self) -> &ConsumedOverlay {
        &self.overlay
    }

    /// Tokens stepped so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn in_preamble(&self) -> bool {
        self.mode == Mode::Constrained && self.preamble_left > 0
    }

    fn remaining(&self, node: &S::Node, cursor: &OverlayCursor) -> u64 {
        self.engine
            .source
            .num_leaves(node)
            .saturating_sub(cursor.consumed())
    }

    /// Tokens allowed next, with remaining fact counts; `None` in normal
    /// mode, where everything is allowed.
    pub fn allowed_tokens(&self) -> Option<Vec<(TokenId, u64)>> {
        if self.mode == Mode::Normal {
            return None;
        }
        let node = self.node.as_ref().expect("constrained session has a node");
        if self.preamble_left > 0 {
            let p = &self.engine.config.preamble;
            let left = self.remaining(node, &self.consumed);
            return Some(vec![(p[p.len() - self.preamble_left], left)]);
        }
        let mut out = Vec::new();
        self.engine.source.visit_children(node, &mut |t, n| {
            let left = n.saturating_sub(self.consumed.consumed_child(t));
            if left > 0 {
                out.push((t, left));
            }
        });
        Some(out)
    }

    /// Returns a copy of `logits` with every disallowed entry set to
    /// negative infinity. Allowed entries are copied bit for bit; in normal
    /// mode the vector is returned unchanged.
    pub fn mask_logits(&self, logits: &[f32]) -> Result<Vec<f32>> {
        let vocab = self.engine.vocab_size();
        if logits.len() != vocab {
            return Err(Error::VocabMismatch {
                expected: vocab,
                found: logits.len(),
            });
        }
        let Some(allowed) = self.allowed_tokens() else {
            return Ok(logits.to_vec());
        };
        if allowed.is_empty() {
            return Err(Error::ExhaustedBranch);
        }
        let mut out = vec![f32::NEG_INFINITY; vocab];
        for (t, _) in allowed {
            let i = t as usize;
            if i >= vocab {
                return Err(Error::CorruptRecord(format!("index token {t} outside vocabulary")));
            }
            out[i] = logits[i];
        }
        Ok(out)
    }

    /// Commits `token` as the next generated token.
    pub fn step(&mut self, token: TokenId) -> Result<StepOutcome> {
        match self.mode {
            Mode::Normal => self.step_normal(token),
            Mode::Constrained => self.step_constrained(token),
        }
    }

    fn step_normal(&mut self, token: TokenId) -> Result<StepOutcome> {
        if token as usize >= self.engine.vocab_size() {
            return Err(Error::IllegalToken(token));
        }
        self.position += 1;
        Arc::make_mut(&mut self.report).tokens = self.position;
        let trigger = self.engine.config.trigger.as_bytes();
        self.buffer.extend_from_slice(self.engine.tokenizer.piece(token));
        if self.buffer.len() > 4 * trigger.len() {
            let cut = self.buffer.len() - trigger.len();
            self.buffer.drain(..cut);
        }
        if !self.buffer.ends_with(trigger) {
            return Ok(StepOutcome::Continue);
        }
        self.buffer.clear();
        let root = self.engine.source.root()?;
        let cursor = self.overlay.cursor(&[]);
        if self.remaining(&root, &cursor) == 0 {
            log::debug!("trigger at token {} with no facts left", self.position);
            Arc::make_mut(&mut self.report)
                .exhaustion_events
                .push(ExhaustionEvent {
                    position: self.position,
                    prefix: Vec::new(),
                });
            return Ok(StepOutcome::TriggerExhausted);
        }
        self.mode = Mode::Constrained;
        self.node = Some(root);
        self.consumed = cursor;
        self.cursor.clear();
        self.preamble_left = self.engine.config.preamble.len();
        self.fact_start = self.position + self.preamble_left as u64;
        Arc::make_mut(&mut self.report).transitions.push(Transition {
            position: self.position,
            to: Mode::Constrained,
        });
        Ok(StepOutcome::Constrained)
    }

    fn step_constrained(&mut self, token: TokenId) -> Result<StepOutcome> {
        if self.preamble_left > 0 {
            let p = &self.engine.config.preamble;
            if p[p.len() - self.preamble_left] != token {
                return Err(Error::IllegalToken(token));
            }
            self.preamble_left -= 1;
            self.position += 1;
            Arc::make_mut(&mut self.report).tokens = self.position;
            return Ok(StepOutcome::Continue);
        }
        let node = self.node.as_ref().expect("constrained session has a node");
        let src = &self.engine.source;
        let next = src.child(node, token)?.ok_or(Error::IllegalToken(token))?;
        let consumed = self.consumed.child(token);
        if self.remaining(&next, &consumed) == 0 {
            return Err(Error::IllegalToken(token));
        }
        self.cursor.push(token);
        self.position += 1;
        let leaf = src.is_leaf(&next);
        self.node = Some(next);
        self.consumed = consumed;
        let report = Arc::make_mut(&mut self.report);
        report.tokens = self.position;
        if !leaf {
            return Ok(StepOutcome::Continue);
        }
        self.overlay = self.overlay.consume_unchecked(&self.cursor);
        let text = self.engine.tokenizer.decode(&self.cursor);
        report.facts.push(FactEvent {
            text: text.clone(),
            tokens: std::mem::take(&mut self.cursor),
            start: self.fact_start,
            end: self.position,
        });
        report.transitions.push(Transition {
            position: self.position,
            to: Mode::Normal,
        });
        self.mode = Mode::Normal;
        self.node = None;
        self.consumed = OverlayCursor::default();
        self.buffer.clear();
        Ok(StepOutcome::FactCompleted(text))
    }

    /// `k` independent copies of this session. Consumption on one copy is
    /// not visible to the others.
    pub fn fork_beams(&self, k: usize) -> BeamState<S> {
        assert!(k >= 1, "at least one beam");
        BeamState {
            beams: vec![self.clone(); k],
        }
    }

    pub fn session_report(&self) -> SessionReport {
        (*self.report).clone()
    }

    pub fn facts(&self) -> &[FactEvent] {
        &self.report.facts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trie::FactTree;

    fn engine(facts: &[&str], pieces: &[&str]) -> Arc<Engine<FactTree>> {
        let tok = Tokenizer::from_pieces(pieces.iter().copied());
        let tree = FactTree::from_sequences(
            tok.fingerprint().clone(),
            facts.iter().map(|f| tok.encode_fact(f)),
        )
        .unwrap();
        Arc::new(Engine::new(tree, tok, EngineConfig::default()).unwrap())
    }

    fn feed<S: FactSource>(s: &mut DecodingSession<S>, text: &str) -> Vec<StepOutcome> {
        let toks = s.engine().tokenizer().encode(text);
        toks.into_iter().map(|t| s.step(t).unwrap()).collect()
    }

    #[test]
    fn trigger_switches_mode() {
        let e = engine(&["<a> <b> <c> ."], &["Fact", " <", "> ."]);
        let mut s = create_session(&e);
        feed(&mut s, "Some text Fac");
        assert_eq!(s.mode(), Mode::Normal);
        let out = feed(&mut s, "t:");
        assert_eq!(out.last(), Some(&StepOutcome::Constrained));
        assert_eq!(s.mode(), Mode::Constrained);
    }

    #[test]
    fn normal_mode_is_identity() {
        let e = engine(&["<a> <b> <c> ."], &[]);
        let s = create_session(&e);
        let logits: Vec<f32> = (0..e.vocab_size()).map(|i| i as f32 * 0.5).collect();
        assert_eq!(s.mask_logits(&logits).unwrap(), logits);
        assert!(matches!(
            s.mask_logits(&logits[1..]),
            Err(Error::VocabMismatch { .. })
        ));
    }

    #[test]
    fn completes_fact_and_consumes() {
        let e = engine(&["<a> <b> <c> .", "<a> <b> <d> ."], &["Fact:", " <a>", " <b>"]);
        let mut s = create_session(&e);
        feed(&mut s, "Fact:");
        let fact = e.tokenizer().encode_fact("<a> <b> <c> .");
        let mut last = StepOutcome::Continue;
        for &t in &fact {
            let masked = s.mask_logits(&vec![0.0; e.vocab_size()]).unwrap();
            assert!(masked[t as usize].is_finite());
            last = s.step(t).unwrap();
        }
        assert_eq!(last, StepOutcome::FactCompleted(" <a> <b> <c> .".into()));
        assert_eq!(s.mode(), Mode::Normal);
        assert_eq!(s.overlay().fact_count(), 1);
        feed(&mut s, "\nFact:");
        let allowed = s.allowed_tokens().unwrap();
        assert_eq!(allowed.len(), 1);
        assert_eq!(allowed[0].1, 1);
        let r = s.session_report();
        assert_eq!(r.facts.len(), 1);
        assert_eq!(r.facts[0].start, 1);
        assert_eq!(r.facts[0].end, 1 + fact.len() as u64);
        assert_eq!(r.transitions.len(), 3);
    }

    #[test]
    fn illegal_token_rejected() {
        let e = engine(&["<a> <b> <c> ."], &["Fact:"]);
        let mut s = create_session(&e);
        feed(&mut s, "Fact:");
        let bad = e.tokenizer().encode("x")[0];
        assert!(matches!(s.step(bad), Err(Error::IllegalToken(_))));
    }

    #[test]
    fn exhausted_trigger_stays_normal() {
        let e = engine(&["<a> <b> <c> ."], &["Fact:"]);
        let mut s = create_session(&e);
        feed(&mut s, "Fact:");
        for t in e.tokenizer().encode_fact("<a> <b> <c> .") {
            s.step(t).unwrap();
        }
        let out = feed(&mut s, "Fact:");
        assert_eq!(out.last(), Some(&StepOutcome::TriggerExhausted));
        assert_eq!(s.mode(), Mode::Normal);
        assert_eq!(s.session_report().exhaustion_events.len(), 1);
    }

    #[test]
    fn preamble_is_forced() {
        let tok = Tokenizer::from_pieces(["Fact:"]);
        let tree = FactTree::from_sequences(
            tok.fingerprint().clone(),
            [tok.encode_fact("<a> <b> <c> .")],
        )
        .unwrap();
        let nl = tok.encode("\n")[0];
        let cfg = EngineConfig {
            preamble: vec![nl],
            ..EngineConfig::default()
        };
        let e = Arc::new(Engine::new(tree, tok, cfg).unwrap());
        let mut s = create_session(&e);
        feed(&mut s, "Fact:");
        assert!(s.in_preamble());
        assert_eq!(s.allowed_tokens().unwrap()[0].0, nl);
        assert!(s.step(nl + 1).is_err());
        s.step(nl).unwrap();
        assert!(!s.in_preamble());
        for t in e.tokenizer().encode_fact("<a> <b> <c> .") {
            s.step(t).unwrap();
        }
        assert_eq!(s.facts()[0].start, 2);
    }

    #[test]
    fn forks_do_not_share_consumption() {
        let e = engine(&["<a> <b> <c> .", "<a> <b> <d> ."], &["Fact:"]);
        let mut s = create_session(&e);
        feed(&mut s, "Fact:");
        let beams = s.fork_beams(2);
        let mut b0 = beams.beams[0].clone();
        for t in e.tokenizer().encode_fact("<a> <b> <c> .") {
            b0.step(t).unwrap();
        }
        assert_eq!(b0.overlay().fact_count(), 1);
        assert_eq!(beams.beams[1].overlay().fact_count(), 0);
        assert_eq!(beams.beams[1].allowed_tokens().unwrap()[0].1, 2);
    }

    #[test]
    fn mismatched_tokenizer_rejected() {
        let tok = Tokenizer::from_pieces(["xy"]);
        let other = Tokenizer::from_pieces(["yz"]);
        let tree = FactTree::from_sequences(tok.fingerprint().clone(), [vec![1u32]]).unwrap();
        assert!(matches!(
            Engine::new(tree, other, EngineConfig::default()),
            Err(Error::TokenizerMismatch { .. })
        ));
    }
}
