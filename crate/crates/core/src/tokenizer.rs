//! Byte-level greedy tokenizer.
//!
//! Ids `0..256` are the raw bytes, followed by learned multi-byte pieces and a
//! single end-of-text special token. Encoding is greedy longest-match over the
//! piece set, so `decode(encode(s)) == s` for every string and the
//! concatenation of decoded pieces is always the decoded sequence.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Index into the tokenizer vocabulary.
pub type TokenId = u32;

/// Number of single-byte tokens at the start of every vocabulary.
pub const BYTE_TOKENS: usize = 256;

/// Surface form of the end-of-text special token. Never produced by `encode`.
pub const EOS_PIECE: &str = "<|endoftext|>";

/// Stable hash of a vocabulary; indexes and models are bound to it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint(pub String);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Default, Clone)]
struct PieceNode {
    children: Vec<(u8, u32)>,
    token: Option<TokenId>,
}

#[derive(Clone)]
pub struct Tokenizer {
    pieces: Vec<Vec<u8>>,
    matcher: Vec<PieceNode>,
    eos: TokenId,
    fingerprint: Fingerprint,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    pieces: Vec<String>,
}

impl fmt::Debug for Tokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tokenizer")
            .field("vocab_size", &self.vocab_size())
            .field("fingerprint", &self.fingerprint)
            .finish()
    }
}

impl Tokenizer {
    /// Builds a vocabulary from explicit multi-byte pieces. Duplicates and
    /// single-byte pieces are skipped since bytes are always present.
    pub fn from_pieces<S: AsRef<str>>(pieces: impl IntoIterator<Item = S>) -> Self {
        let mut all: Vec<Vec<u8>> = (0..BYTE_TOKENS).map(|b| vec![b as u8]).collect();
        let mut seen: HashMap<Vec<u8>, ()> = HashMap::new();
        for p in pieces {
            let bytes = p.as_ref().as_bytes().to_vec();
            if bytes.len() < 2 || bytes == EOS_PIECE.as_bytes() || seen.contains_key(&bytes) {
                continue;
            }
            seen.insert(bytes.clone(), ());
            all.push(bytes);
        }
        let eos = all.len() as TokenId;
        all.push(EOS_PIECE.as_bytes().to_vec());
        Self::from_vocab(all, eos)
    }

    fn from_vocab(pieces: Vec<Vec<u8>>, eos: TokenId) -> Self {
        let mut matcher = vec![PieceNode::default()];
        for (id, piece) in pieces.iter().enumerate() {
            if id as TokenId == eos {
                continue;
            }
            let mut node = 0usize;
            for &b in piece {
                node = match matcher[node].children.binary_search_by_key(&b, |c| c.0) {
                    Ok(i) => matcher[node].children[i].1 as usize,
                    Err(i) => {
                        let next = matcher.len() as u32;
                        matcher.push(PieceNode::default());
                        matcher[node].children.insert(i, (b, next));
                        next as usize
                    }
                };
            }
            matcher[node].token = Some(id as TokenId);
        }

        let mut hasher = Sha256::new();
        hasher.update(b"factrie-tokenizer-v1");
        for p in &pieces {
            hasher.update((p.len() as u32).to_be_bytes());
            hasher.update(p);
        }
        let digest = hasher.finalize();
        let fingerprint = Fingerprint(digest[..16].iter().map(|b| format!("{b:02x}")).collect());

        Self {
            pieces,
            matcher,
            eos,
            fingerprint,
        }
    }

    /// Learns up to `max_pieces` pieces from a corpus: whole words (with
    /// their leading space) and word fragments up to [`MAX_FRAGMENT`] bytes,
    /// ranked by occurrences times bytes saved. Candidates seen fewer than
    /// `min_count` times are left to the byte fallback. The result depends
    /// only on the corpus content.
    pub fn train<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        max_pieces: usize,
        min_count: usize,
    ) -> Self {
        let mut counts: HashMap<&'a str, usize> = HashMap::new();
        for text in texts {
            for word in split_words(text) {
                if word.len() >= 2 {
                    *counts.entry(word).or_default() += 1;
                }
                for (start, end) in fragments(word) {
                    *counts.entry(&word[start..end]).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .map(|(w, c)| (w, c * (w.len() - 1)))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_pieces);
        // Deterministic id assignment independent of frequency ties.
        let mut words: Vec<&str> = ranked.into_iter().map(|(w, _)| w).collect();
        words.sort_unstable();
        Self::from_pieces(words)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: VocabFile = serde_json::from_str(&raw)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Ok(Self::from_pieces(file.pieces))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = VocabFile {
            pieces: self.pieces[BYTE_TOKENS..self.eos as usize]
                .iter()
                .map(|p| String::from_utf8_lossy(p).into_owned())
                .collect(),
        };
        let raw = serde_json::to_string_pretty(&file).expect("vocabulary serializes");
        fs::write(path, raw).map_err(|e| Error::io(path, e))
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn piece(&self, id: TokenId) -> &[u8] {
        &self.pieces[id as usize]
    }

    /// Looks up the id of an exact piece, if it is in the vocabulary.
    pub fn token_of(&self, piece: &str) -> Option<TokenId> {
        let mut node = 0usize;
        for &b in piece.as_bytes() {
            let n = &self.matcher[node];
            node = n.children[n.children.binary_search_by_key(&b, |c| c.0).ok()?].1 as usize;
        }
        self.matcher[node].token
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let bytes = text.as_bytes();
        let mut out = Vec::with_capacity(bytes.len() / 3 + 1);
        let mut i = 0;
        while i < bytes.len() {
            let mut node = 0usize;
            let mut best = (bytes[i] as TokenId, 1usize);
            let mut j = i;
            while j < bytes.len() {
                let n = &self.matcher[node];
                match n.children.binary_search_by_key(&bytes[j], |c| c.0) {
                    Ok(k) => node = n.children[k].1 as usize,
                    Err(_) => break,
                }
                j += 1;
                if let Some(t) = self.matcher[node].token {
                    best = (t, j - i);
                }
            }
            out.push(best.0);
            i += best.1;
        }
        out
    }

    pub fn decode_bytes(&self, tokens: &[TokenId]) -> Vec<u8> {
        let mut out = Vec::new();
        for &t in tokens {
            out.extend_from_slice(self.piece(t));
        }
        out
    }

    pub fn decode(&self, tokens: &[TokenId]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(tokens)).into_owned()
    }

    /// Tokenization used for indexed facts: the fact text with one leading
    /// space, encoded on its own.
    pub fn encode_fact(&self, fact_text: &str) -> Vec<TokenId> {
        let mut s = String::with_capacity(fact_text.len() + 1);
        s.push(' ');
        s.push_str(fact_text);
        self.encode(&s)
    }
}

pub const MAX_FRAGMENT: usize = 4;

/// Byte ranges of the proper substrings of `word` that may become pieces:
/// 2 to [`MAX_FRAGMENT`] bytes long, on char boundaries, and not splitting
/// a leading space from the letter after it.
fn fragments(word: &str) -> Vec<(usize, usize)> {
    let bounds: Vec<usize> = word
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(word.len()))
        .collect();
    let lead = usize::from(word.starts_with(' '));
    let mut out = Vec::new();
    for (a, &s) in bounds.iter().enumerate() {
        if lead == 1 && s == 1 {
            continue;
        }
        for &e in &bounds[a + 1..] {
            let len = e - s;
            if len > MAX_FRAGMENT + usize::from(s == 0) * lead {
                break;
            }
            if len >= 2 && !(s == 0 && e == word.len()) {
                out.push((s, e));
            }
        }
    }
    out
}

/// Pre-tokenization used for vocabulary learning: an optional single space
/// followed by a run of letters, a run of up to four digits, or a run of
/// other non-space characters.
fn split_words(text: &str) -> impl Iterator<Item = &str> {
    let mut rest = text;
    std::iter::from_fn(move || {
        if rest.is_empty() {
            return None;
        }
        let mut chars = rest.char_indices().peekable();
        let (_, first) = *chars.peek()?;
        let mut start_body = 0;
        if first == ' ' {
            chars.next();
            start_body = 1;
        }
        let class = |c: char| -> u8 {
            if c.is_alphabetic() {
                0
            } else if c.is_ascii_digit() {
                1
            } else if c.is_whitespace() {
                3
            } else {
                2
            }
        };
        let Some(&(_, body_first)) = chars.peek() else {
            let w = rest;
            rest = "";
            return Some(w);
        };
        let cls = class(body_first);
        let mut end = start_body;
        let mut n = 0;
        while let Some(&(i, c)) = chars.peek() {
            if class(c) != cls || (cls == 1 && n == 4) || (cls == 3 && n == 1) {
                break;
            }
            end = i + c.len_utf8();
            n += 1;
            chars.next();
        }
        if end == 0 {
            end = rest.chars().next().map(char::len_utf8).unwrap_or(1);
        }
        let (w, r) = rest.split_at(end);
        rest = r;
        Some(w)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_longest_match() {
        let tok = Tokenizer::from_pieces([" <", "Danny", " Boyle", "> .", "Dan"]);
        let ids = tok.encode(" <Danny Boyle> .");
        let pieces: Vec<String> = ids
            .iter()
            .map(|&t| String::from_utf8_lossy(tok.piece(t)).into_owned())
            .collect();
        assert_eq!(pieces, vec![" <", "Danny", " Boyle", "> ."]);
    }

    #[test]
    fn fragments_keep_leading_space_attached() {
        let frags: Vec<&str> = fragments(" Abc").into_iter().map(|(s, e)| &" Abc"[s..e]).collect();
        assert_eq!(frags, vec![" A", " Ab", "bc"]);
        assert!(fragments("ü").is_empty());
    }

    #[test]
    fn unseen_words_split_into_learned_fragments() {
        let corpus = ["<Banor> <x> .", "<Banel> <x> .", "<Corgri> <x> .", "<Elgri> <x> ."];
        let tok = Tokenizer::train(corpus.iter().copied(), 50, 2);
        let pieces: Vec<String> = tok
            .encode(" <Bangri>")
            .iter()
            .map(|&t| String::from_utf8_lossy(tok.piece(t)).into_owned())
            .collect();
        assert!(pieces.len() <= 4, "{pieces:?}");
        assert_eq!(pieces.concat(), " <Bangri>");
    }

    #[test]
    fn decode_inverts_encode_for_unicode() {
        let tok = Tokenizer::from_pieces(["ab", "ü"]);
        let s = "zürich ab＜x＞ ✓";
        assert_eq!(tok.decode(&tok.encode(s)), s);
    }

    #[test]
    fn eos_is_never_encoded() {
        let tok = Tokenizer::from_pieces(["ab"]);
        let ids = tok.encode(EOS_PIECE);
        assert!(!ids.contains(&tok.eos()));
        assert_eq!(tok.vocab_size(), BYTE_TOKENS + 2);
    }

    #[test]
    fn fingerprint_tracks_vocabulary() {
        let a = Tokenizer::from_pieces(["ab", "cd"]);
        let b = Tokenizer::from_pieces(["ab", "cd"]);
        let c = Tokenizer::from_pieces(["ab", "ce"]);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn training_is_deterministic_and_learns_words() {
        let corpus = ["<Euro> <country> <Italy> .", "<Euro> <country> <Malta> ."];
        let a = Tokenizer::train(corpus.iter().copied(), 100, 2);
        let b = Tokenizer::train(corpus.iter().copied(), 100, 2);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert!(a.token_of(" <country").is_none());
        assert!(a.token_of("country").is_some());
        assert!(a.token_of("Italy").is_none());
    }

    #[test]
    fn split_words_covers_input() {
        let s = "<Danny Boyle> <date of birth> <1956-10-20> .\nAnswer: ok";
        let joined: String = split_words(s).collect();
        assert_eq!(joined, s);
    }

    #[test]
    fn save_and_load_preserve_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        let tok = Tokenizer::from_pieces([" <", "date", " of"]);
        tok.save(&path).unwrap();
        let back = Tokenizer::load(&path).unwrap();
        assert_eq!(back.fingerprint(), tok.fingerprint());
        assert_eq!(back.vocab_size(), tok.vocab_size());
    }
}
