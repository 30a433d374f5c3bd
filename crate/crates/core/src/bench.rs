//! Generation-time overhead of constrained decoding.
//!
//! The same model generates the same number of tokens twice with greedy
//! selection: once unconstrained, once through a decoding session. Per-token
//! wall times are compared; the engine's own share (masking plus stepping)
//! is reported separately as the lookup latency.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::engine::{create_session, Engine};
use crate::error::Result;
use crate::qa::{LanguageModel, Script, ScriptRule};
use crate::store::Percentiles;
use crate::tokenizer::TokenId;
use crate::trie::FactSource;

pub const MOVING_AVERAGE_WINDOW: usize = 10;

/// Trailing moving average; the first `window - 1` entries average what is
/// available.
pub fn moving_average(v: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(v.len());
    let mut sum = 0.0;
    for i in 0..v.len() {
        sum += v[i];
        if i >= window {
            sum -= v[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

fn argmax(v: &[f32]) -> TokenId {
    let mut best = 0usize;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best as TokenId
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct BenchRun {
    pub per_token_ms: Vec<f64>,
    pub moving_average_ms: Vec<f64>,
    pub total_ms: f64,
}

impl BenchRun {
    fn from_times(per_token_ms: Vec<f64>) -> Self {
        Self {
            moving_average_ms: moving_average(&per_token_ms, MOVING_AVERAGE_WINDOW),
            total_ms: per_token_ms.iter().fold(0.0, |a, b| a + b),
            per_token_ms,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct BenchReport {
    pub tokens: usize,
    pub unconstrained: BenchRun,
    pub constrained: BenchRun,
    /// Engine time per token in the constrained run, in microseconds.
    pub engine_us: Percentiles,
    /// `constrained / unconstrained - 1`; zero when nothing was generated.
    pub overhead: f64,
    pub facts_emitted: usize,
}

/// Runs both passes over `tokens` new tokens after `prompt`.
pub fn run_bench<S, M>(
    engine: &Arc<Engine<S>>,
    model: &M,
    prompt: &str,
    tokens: usize,
) -> Result<BenchReport>
where
    S: FactSource,
    M: LanguageModel + ?Sized,
{
    let prompt = engine.tokenizer().encode(prompt);

    let mut generated = Vec::with_capacity(tokens);
    let mut plain = Vec::with_capacity(tokens);
    for _ in 0..tokens {
        let t0 = Instant::now();
        let logits = model.logits(&prompt, &generated)?;
        generated.push(argmax(&logits));
        plain.push(t0.elapsed().as_secs_f64() * 1e3);
    }

    let mut session = create_session(engine);
    generated.clear();
    let mut constrained = Vec::with_capacity(tokens);
    let mut engine_us = Vec::with_capacity(tokens);
    for _ in 0..tokens {
        let t0 = Instant::now();
        let logits = model.logits(&prompt, &generated)?;
        let t1 = Instant::now();
        let masked = session.mask_logits(&logits)?;
        let t = argmax(&masked);
        session.step(t)?;
        let t2 = Instant::now();
        generated.push(t);
        constrained.push((t2 - t0).as_secs_f64() * 1e3);
        engine_us.push((t2 - t1).as_micros() as u64);
    }

    let unconstrained = BenchRun::from_times(plain);
    let constrained = BenchRun::from_times(constrained);
    let overhead = if unconstrained.total_ms > 0.0 {
        constrained.total_ms / unconstrained.total_ms - 1.0
    } else {
        0.0
    };
    Ok(BenchReport {
        tokens,
        engine_us: Percentiles::from_values(engine_us),
        overhead,
        facts_emitted: session.facts().len(),
        unconstrained,
        constrained,
    })
}

/// A script that keeps calling `Fact:` and prefers the given facts (text
/// without the leading space), so generation never stops on its own.
pub fn fact_loop_script(facts: &[String]) -> Script {
    let then: Vec<String> = facts.iter().take(9).map(|f| format!(" {f}")).collect();
    Script::new(vec![
        ScriptRule {
            after: String::new(),
            then: vec!["I will collect facts.\nFact:".into()],
        },
        ScriptRule {
            after: "> .".into(),
            then: vec!["\nI need another fact.\nFact:".into()],
        },
        ScriptRule {
            after: "Fact:".into(),
            then,
        },
    ])
}
