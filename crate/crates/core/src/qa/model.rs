//! Models that drive generation.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{Fingerprint, TokenId, Tokenizer};

/// Next-token scores for a context split into prompt and generated tokens.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn fingerprint(&self) -> &Fingerprint;
    fn logits(&self, prompt: &[TokenId], generated: &[TokenId]) -> Result<Vec<f32>>;
}

/// One scripted preference: once the generated text contains `after`, the
/// model steers towards the alternatives in `then`, in rank order. An empty
/// `after` anchors at the start of the generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub after: String,
    pub then: Vec<String>,
}

fn default_top() -> f32 {
    10.0
}
fn default_step() -> f32 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub id: Option<String>,
    pub rules: Vec<ScriptRule>,
    /// Score of the first-ranked alternative.
    #[serde(default = "default_top")]
    pub top: f32,
    /// Score decrement per rank.
    #[serde(default = "default_step")]
    pub step: f32,
    /// Score of every token that is not preferred.
    #[serde(default)]
    pub floor: f32,
}

impl Script {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self {
            id: None,
            rules,
            top: default_top(),
            step: default_step(),
            floor: 0.0,
        }
    }

    /// Convenience for `(after, [then...])` pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, Vec<&'a str>)>) -> Self {
        Self::new(
            pairs
                .into_iter()
                .map(|(after, then)| ScriptRule {
                    after: after.to_string(),
                    then: then.into_iter().map(str::to_string).collect(),
                })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.top.is_finite() && self.step.is_finite() && self.floor.is_finite()) {
            return Err(Error::InvalidConfig("script scores must be finite".into()));
        }
        if self.step <= 0.0 {
            return Err(Error::InvalidConfig("script step must be positive".into()));
        }
        let ranks = self.rules.iter().map(|r| r.then.len()).max().unwrap_or(0);
        if ranks > 0 && self.top - self.step * (ranks - 1) as f32 <= self.floor {
            return Err(Error::InvalidConfig(format!(
                "with top {} and step {}, {ranks} alternatives fall to the floor {}",
                self.top, self.step, self.floor
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Script = serde_json::from_str(&raw)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        s.validate()?;
        Ok(s)
    }

    /// Reads one script per line, keyed by `id`.
    pub fn load_many(path: &Path) -> Result<Vec<Script>> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        for (n, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let s: Script = serde_json::from_str(line)
                .map_err(|e| Error::Parse(format!("{} line {}: {e}", path.display(), n + 1)))?;
            s.validate()?;
            out.push(s);
        }
        Ok(out)
    }
}

/// Deterministic stand-in for a language model, driven by a [`Script`].
///
/// Among rules whose continuation is still in progress (the text after the
/// last occurrence of `after` is a proper prefix of an alternative) the one
/// anchored latest wins. Each live alternative scores its next token by
/// rank; everything else gets the floor. With no live rule the model prefers
/// end of sequence.
pub struct ScriptedModel {
    tokenizer: Arc<Tokenizer>,
    script: Script,
    delay: Option<Duration>,
}

impl std::fmt::Debug for ScriptedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedModel")
            .field("script", &self.script.id)
            .field("rules", &self.script.rules.len())
            .finish_non_exhaustive()
    }
}

impl ScriptedModel {
    pub fn new(tokenizer: Arc<Tokenizer>, script: Script) -> Result<Self> {
        script.validate()?;
        Ok(Self {
            tokenizer,
            script,
            delay: None,
        })
    }

    /// Sleeps this long per forward pass, to imitate model latency.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    /// The scores for a generated text (ignoring latency).
    pub fn scores_for_text(&self, text: &str) -> Vec<f32> {
        let s = &self.script;
        let mut out = vec![s.floor; self.tokenizer.vocab_size()];
        let mut best: Option<(usize, usize)> = None; // (anchor, rule)
        for (i, rule) in s.rules.iter().enumerate() {
            let anchor = if rule.after.is_empty() {
                0
            } else {
                match text.rfind(&rule.after) {
                    Some(p) => p + rule.after.len(),
                    None => continue,
                }
            };
            let written = &text[anchor..];
            let live = rule
                .then
                .iter()
                .any(|alt| alt.len() > written.len() && alt.starts_with(written));
            if live && best.is_none_or(|(a, _)| anchor > a) {
                best = Some((anchor, i));
            }
        }
        let Some((anchor, i)) = best else {
            out[self.tokenizer.eos() as usize] = s.top;
            return out;
        };
        let written = &text[anchor..];
        for (rank, alt) in s.rules[i].then.iter().enumerate() {
            if alt.len() <= written.len() || !alt.starts_with(written) {
                continue;
            }
            let Some(&t) = self.tokenizer.encode(&alt[written.len()..]).first() else {
                continue;
            };
            let score = s.top - s.step * rank as f32;
            let slot = &mut out[t as usize];
            if *slot < score {
                *slot = score;
            }
        }
        out
    }
}

impl LanguageModel for ScriptedModel {
    fn vocab_size(&self) -> usize {
        self.tokenizer.vocab_size()
    }

    fn fingerprint(&self) -> &Fingerprint {
        self.tokenizer.fingerprint()
    }

    fn logits(&self, _prompt: &[TokenId], generated: &[TokenId]) -> Result<Vec<f32>> {
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        Ok(self.scores_for_text(&self.tokenizer.decode(generated)))
    }
}

type LogitsFn = dyn Fn(&[TokenId], &[TokenId]) -> Result<Vec<f32>> + Send + Sync;

/// Delegates scoring to a host-provided function, for models that live
/// outside this process.
pub struct CallbackModel {
    vocab_size: usize,
    fingerprint: Fingerprint,
    f: Box<LogitsFn>,
}

impl CallbackModel {
    pub fn new(
        vocab_size: usize,
        fingerprint: Fingerprint,
        f: impl Fn(&[TokenId], &[TokenId]) -> Result<Vec<f32>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            vocab_size,
            fingerprint,
            f: Box::new(f),
        }
    }
}

impl LanguageModel for CallbackModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    fn logits(&self, prompt: &[TokenId], generated: &[TokenId]) -> Result<Vec<f32>> {
        let v = (self.f)(prompt, generated)?;
        if v.len() != self.vocab_size {
            return Err(Error::VocabMismatch {
                expected: self.vocab_size,
                found: v.len(),
            });
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(script: Script) -> ScriptedModel {
        let tok = Arc::new(Tokenizer::from_pieces(["Fact:", " <Danny", " Boyle>"]));
        ScriptedModel::new(tok, script).unwrap()
    }

    fn argmax(v: &[f32]) -> usize {
        let mut best = 0;
        for (i, &x) in v.iter().enumerate() {
            if x > v[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn follows_latest_rule() {
        let m = model(Script::from_pairs([
            ("", vec!["Plan.\nFact:"]),
            ("Fact:", vec![" <Danny Boyle>"]),
        ]));
        let tok = m.tokenizer.clone();
        let v = m.scores_for_text("");
        assert_eq!(argmax(&v), tok.encode("P")[0] as usize);
        let v = m.scores_for_text("Plan.\nFact:");
        assert_eq!(argmax(&v), tok.token_of(" <Danny").unwrap() as usize);
        let v = m.scores_for_text("Plan.\nFact: <Danny");
        assert_eq!(argmax(&v), tok.token_of(" Boyle>").unwrap() as usize);
        // continuation finished: no live rule
        let v = m.scores_for_text("Plan.\nFact: <Danny Boyle>");
        assert_eq!(argmax(&v), tok.eos() as usize);
    }

    #[test]
    fn ranks_are_strictly_decreasing() {
        let m = model(Script::from_pairs([("", vec!["a", "b", "c"])]));
        let tok = m.tokenizer.clone();
        let v = m.scores_for_text("");
        let s = |c: &str| v[tok.encode(c)[0] as usize];
        assert!(s("a") > s("b") && s("b") > s("c") && s("c") > 0.0);
        assert_eq!(v.iter().filter(|&&x| x == 0.0).count(), v.len() - 3);
    }

    #[test]
    fn deterministic() {
        let m = model(Script::from_pairs([("x", vec!["yz"])]));
        assert_eq!(m.scores_for_text("axy"), m.scores_for_text("axy"));
    }

    #[test]
    fn too_many_ranks_rejected() {
        let mut s = Script::from_pairs([("", vec!["a"; 11])]);
        assert!(s.validate().is_err());
        s.top = 20.0;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn callback_checks_length() {
        let m = CallbackModel::new(3, Fingerprint("f".into()), |_, _| Ok(vec![0.0; 2]));
        assert!(matches!(m.logits(&[], &[]), Err(Error::VocabMismatch { .. })));
    }
}
