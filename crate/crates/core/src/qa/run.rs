//! Question answering loop: beam search over a model's scores, with each
//! beam carrying its own decoding session.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::dataset::{Terminal, Transcript};
use super::model::LanguageModel;
use super::prompt::{PromptConfig, ANSWER_PREFIX, REFUSAL};
use crate::engine::{create_session, DecodingSession, Engine, Mode};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;
use crate::trie::FactSource;

/// Log-softmax in f64; negative infinity stays negative infinity.
pub fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits
        .iter()
        .copied()
        .filter(|x| x.is_finite())
        .fold(f32::NEG_INFINITY, f32::max) as f64;
    if !max.is_finite() {
        return vec![f64::NEG_INFINITY; logits.len()];
    }
    let sum: f64 = logits
        .iter()
        .filter(|x| x.is_finite())
        .map(|&x| (x as f64 - max).exp())
        .sum();
    let lse = max + sum.ln();
    logits
        .iter()
        .map(|&x| if x.is_finite() { x as f64 - lse } else { f64::NEG_INFINITY })
        .collect()
}

/// The `k` best finite entries, best first; ties go to the lower token id.
pub fn top_k(logp: &[f64], k: usize) -> Vec<(TokenId, f64)> {
    let mut c: Vec<(TokenId, f64)> = logp
        .iter()
        .enumerate()
        .filter(|(_, x)| x.is_finite())
        .map(|(i, &x)| (i as TokenId, x))
        .collect();
    let cmp = |a: &(TokenId, f64), b: &(TokenId, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if c.len() > k {
        c.select_nth_unstable_by(k, cmp);
        c.truncate(k);
    }
    c.sort_unstable_by(cmp);
    c
}

struct Hyp<S: FactSource> {
    session: DecodingSession<S>,
    tokens: Vec<TokenId>,
    text: Vec<u8>,
    line_start: usize,
    score: f64,
}

impl<S: FactSource> Clone for Hyp<S> {
    fn clone(&self) -> Self {
        Self {
            session: self.session.clone(),
            tokens: self.tokens.clone(),
            text: self.text.clone(),
            line_start: self.line_start,
            score: self.score,
        }
    }
}

impl<S: FactSource> Hyp<S> {
    fn pending_answer(&self) -> bool {
        self.text[self.line_start..]
            .trim_ascii_start()
            .starts_with(ANSWER_PREFIX.as_bytes())
    }

    /// Appends `token`, returning the terminal state it produces, if any.
    /// Stop conditions are only checked for tokens generated in normal mode.
    fn push(&mut self, token: TokenId, logp: f64) -> Result<Option<Terminal>> {
        let eos = self.session.engine().tokenizer().eos();
        let normal = self.session.mode() == Mode::Normal;
        self.score += logp;
        self.tokens.push(token);
        if token == eos && normal {
            return Ok(Some(if self.pending_answer() {
                Terminal::Answered
            } else {
                Terminal::IDontKnow
            }));
        }
        self.session.step(token)?;
        let old = self.text.len();
        self.text
            .extend_from_slice(self.session.engine().tokenizer().piece(token));
        let mut stop = None;
        let mut i = old;
        while let Some(off) = self.text[i..].iter().position(|&b| b == b'\n') {
            let nl = i + off;
            let line = self.text[self.line_start..nl].trim_ascii_start();
            if normal && stop.is_none() && line.starts_with(ANSWER_PREFIX.as_bytes()) {
                stop = Some(Terminal::Answered);
            }
            self.line_start = nl + 1;
            i = nl + 1;
        }
        if stop.is_none() && normal {
            let from = old.saturating_sub(REFUSAL.len() - 1);
            if self.text[from..]
                .windows(REFUSAL.len())
                .any(|w| w == REFUSAL.as_bytes())
            {
                stop = Some(Terminal::IDontKnow);
            }
        }
        Ok(stop)
    }

    fn normalized(&self) -> f64 {
        self.score / self.tokens.len().max(1) as f64
    }
}

fn check_compat<S: FactSource, M: LanguageModel + ?Sized>(
    model: &M,
    engine: &Engine<S>,
    cfg: &PromptConfig,
) -> Result<()> {
    cfg.validate()?;
    let tok = engine.tokenizer();
    if model.fingerprint() != tok.fingerprint() {
        return Err(Error::TokenizerMismatch {
            expected: tok.fingerprint().to_string(),
            found: model.fingerprint().to_string(),
        });
    }
    if model.vocab_size() != tok.vocab_size() {
        return Err(Error::VocabMismatch {
            expected: tok.vocab_size(),
            found: model.vocab_size(),
        });
    }
    if cfg.trigger != engine.config().trigger {
        return Err(Error::InvalidConfig(format!(
            "prompt trigger {:?} differs from engine trigger {:?}",
            cfg.trigger,
            engine.config().trigger
        )));
    }
    Ok(())
}

/// Keeps the `beams` best finished hypotheses by normalized score.
fn keep_finished<S: FactSource>(
    finished: &mut Vec<(Hyp<S>, Terminal)>,
    h: Hyp<S>,
    term: Terminal,
    beams: usize,
) {
    finished.push((h, term));
    if finished.len() > beams {
        let worst = finished
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .0.normalized().total_cmp(&b.1 .0.normalized()))
            .map(|(i, _)| i)
            .unwrap();
        finished.remove(worst);
    }
}

/// Search ends once enough hypotheses are finished and the best live beam
/// scores no better, at its current length, than the worst of them.
fn done<S: FactSource>(finished: &[(Hyp<S>, Terminal)], live: &[Hyp<S>], beams: usize) -> bool {
    if finished.len() < beams {
        return false;
    }
    let worst = finished
        .iter()
        .map(|f| f.0.normalized())
        .fold(f64::INFINITY, f64::min);
    let best_live = live
        .iter()
        .map(Hyp::normalized)
        .fold(f64::NEG_INFINITY, f64::max);
    worst >= best_live
}

/// Answers one question. Decoding is beam search with `cfg.beams` beams
/// (greedy for one beam) and stops at an answer line, the refusal, end of
/// sequence, or after `cfg.max_new_tokens` tokens.
pub fn run_question<S, M>(
    question: &str,
    model: &M,
    engine: &Arc<Engine<S>>,
    cfg: &PromptConfig,
) -> Result<Transcript>
where
    S: FactSource,
    M: LanguageModel + ?Sized,
{
    check_compat(model, engine, cfg)?;
    let prompt = engine.tokenizer().encode(&cfg.render(question));
    let beams = cfg.beams;
    let mut live = vec![Hyp {
        session: create_session(engine),
        tokens: Vec::new(),
        text: Vec::new(),
        line_start: 0,
        score: 0.0,
    }];
    let mut finished: Vec<(Hyp<S>, Terminal)> = Vec::new();

    for _ in 0..cfg.max_new_tokens {
        let mut cands: Vec<(f64, usize, TokenId, f64)> = Vec::new();
        for (b, h) in live.iter().enumerate() {
            let logits = model.logits(&prompt, &h.tokens)?;
            let masked = h.session.mask_logits(&logits)?;
            for (t, lp) in top_k(&log_softmax(&masked), 2 * beams) {
                cands.push((h.score + lp, b, t, lp));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(beams);
        for (rank, (_, b, t, lp)) in cands.into_iter().enumerate() {
            let mut h = live[b].clone();
            match h.push(t, lp)? {
                // Only hypotheses that would have been kept as beams count.
                Some(term) if rank < beams => keep_finished(&mut finished, h, term, beams),
                Some(_) => {}
                None => next.push(h),
            }
            if next.len() == beams {
                break;
            }
        }
        live = next;
        if live.is_empty() || done(&finished, &live, beams) {
            break;
        }
    }

    let (best, terminal) = if finished.is_empty() {
        let best = live
            .into_iter()
            .reduce(|a, b| if b.score > a.score { b } else { a })
            .expect("at least one live beam without finished ones");
        (best, Terminal::BudgetExhausted)
    } else {
        finished
            .into_iter()
            .reduce(|a, b| if b.0.normalized() > a.0.normalized() { b } else { a })
            .unwrap()
    };
    let report = best.session.session_report();
    Ok(Transcript {
        id: None,
        question: question.to_string(),
        generated: String::from_utf8_lossy(&best.text).into_owned(),
        fact_events: report.facts,
        terminal,
        new_tokens: best.tokens.len() as u64,
        exhaustion_events: report.exhaustion_events,
        score: best.normalized(),
    })
}

/// Applies `f` to every item on up to `jobs` threads; results keep input
/// order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_softmax_normalizes() {
        let v = log_softmax(&[1.0, 2.0, f32::NEG_INFINITY, 3.0]);
        let total: f64 = v.iter().filter(|x| x.is_finite()).map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(v[2], f64::NEG_INFINITY);
        assert!(log_softmax(&[f32::NEG_INFINITY; 3]).iter().all(|x| x.is_infinite()));
    }

    #[test]
    fn top_k_breaks_ties_by_id() {
        let v = [0.0, -1.0, 0.0, f64::NEG_INFINITY, -0.5];
        assert_eq!(top_k(&v, 2), vec![(0, 0.0), (2, 0.0)]);
        assert_eq!(top_k(&v, 10).len(), 4);
    }

    #[test]
    fn par_map_keeps_order() {
        let items: Vec<u32> = (0..100).collect();
        assert_eq!(par_map(&items, 4, |x| x * 2), items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
