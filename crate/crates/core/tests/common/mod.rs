#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use factrie_core::store::{build_index, write_index, IndexConfig, IndexReader};
use factrie_core::synth::{SynthConfig, SynthKb};
use factrie_core::{FactTree, Tokenizer};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A tokenized knowledge base.
pub struct Kb {
    pub tok: Tokenizer,
    pub facts: Vec<String>,
    pub seqs: Vec<Vec<u32>>,
}

impl Kb {
    pub fn from_facts(tok: Tokenizer, facts: Vec<String>) -> Self {
        let seqs = facts.iter().map(|f| tok.encode_fact(f)).collect();
        Self { tok, facts, seqs }
    }

    pub fn synthetic(n: usize, seed: u64) -> Self {
        Self::from_config(&SynthConfig::with_facts(n, seed))
    }

    /// The vocabulary is learned from at most the first 200,000 facts.
    pub fn from_config(cfg: &SynthConfig) -> Self {
        let kb = SynthKb::generate(cfg).unwrap();
        let facts = kb.fact_texts().unwrap();
        let tok = Tokenizer::train(facts.iter().take(200_000).map(String::as_str), 1500, 3);
        Self::from_facts(tok, facts)
    }

    pub fn tree(&self) -> FactTree {
        FactTree::from_sequences(self.tok.fingerprint().clone(), &self.seqs).unwrap()
    }

    pub fn config(&self, cutoff: usize) -> IndexConfig {
        IndexConfig::new(self.tok.fingerprint().clone()).with_cutoff(cutoff)
    }

    /// Builds a disk index through the deduplicating builder.
    pub fn build(&self, path: &Path, cutoff: usize, batch_size: usize) -> IndexReader {
        build_index(
            path,
            self.config(cutoff).with_batch_size(batch_size),
            self.seqs.iter().cloned(),
        )
        .unwrap();
        IndexReader::open_with_cache(path, 64 << 20).unwrap()
    }

    /// Writes the facts as `k` batches with a random assignment.
    pub fn build_partitioned(
        &self,
        path: &Path,
        cutoff: usize,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> IndexReader {
        let mut parts: Vec<Vec<&Vec<u32>>> = vec![Vec::new(); k];
        for s in &self.seqs {
            parts[rng.gen_range(0..k)].push(s);
        }
        let fp = self.tok.fingerprint().clone();
        let trees: Vec<FactTree> = parts
            .into_iter()
            .map(|p| FactTree::from_sequences(fp.clone(), p).unwrap())
            .collect();
        write_index(path, self.config(cutoff), &trees).unwrap();
        IndexReader::open_with_cache(path, 64 << 20).unwrap()
    }
}

/// Brute-force reference for the allowed-token function: scans the sorted
/// fact list, skipping consumed facts, and groups by the token after
/// `prefix`.
pub struct Oracle {
    sorted: Vec<Vec<u32>>,
}

impl Oracle {
    pub fn new(seqs: &[Vec<u32>]) -> Self {
        let mut sorted = seqs.to_vec();
        sorted.sort();
        sorted.dedup();
        Self { sorted }
    }

    pub fn facts(&self) -> &[Vec<u32>] {
        &self.sorted
    }

    fn range(&self, prefix: &[u32]) -> &[Vec<u32>] {
        let lo = self.sorted.partition_point(|s| s.as_slice() < prefix);
        let hi = lo + self.sorted[lo..].partition_point(|s| s.starts_with(prefix));
        &self.sorted[lo..hi]
    }

    pub fn next(&self, prefix: &[u32], consumed: &HashSet<Vec<u32>>) -> BTreeMap<u32, u64> {
        let mut out = BTreeMap::new();
        for s in self.range(prefix) {
            if s.len() > prefix.len() && !consumed.contains(s) {
                *out.entry(s[prefix.len()]).or_insert(0) += 1;
            }
        }
        out
    }

    pub fn count(&self, prefix: &[u32]) -> u64 {
        self.range(prefix).len() as u64
    }

    pub fn is_fact(&self, seq: &[u32]) -> bool {
        self.sorted.binary_search_by(|s| s.as_slice().cmp(seq)).is_ok()
    }
}

/// Deterministic scores with a few large spikes.
pub fn random_logits(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let mut v: Vec<f32> = (0..n).map(|_| rng.gen_range(-8.0f32..8.0)).collect();
    for _ in 0..3 {
        let i = rng.gen_range(0..n);
        v[i] = rng.gen_range(20.0..40.0);
    }
    v
}

pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn sample<'a, T>(rng: &mut ChaCha8Rng, v: &'a [T]) -> &'a T {
    v.choose(rng).unwrap()
}
