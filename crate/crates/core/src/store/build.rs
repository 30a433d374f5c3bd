//! Index construction from an unbounded stream of tokenized facts.
//!
//! Input is split into sorted, deduplicated runs of at most `batch_size`
//! facts; runs beyond the first are spilled to temporary files. The runs are
//! merged with a second deduplication pass and the unique facts are cut into
//! batches, each built as a tree and handed to the writer. Every fact thus
//! reaches exactly one batch, which keeps summed leaf counts exact.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use tempfile::NamedTempFile;

use super::codec::put_varint;
use super::reader::IndexReader;
use super::writer::{BuildSummary, IndexWriter};
use super::IndexConfig;
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;
use crate::trie::FactTree;

#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct IngestStats {
    /// Sequences received, duplicates included.
    pub input_facts: u64,
    pub unique_facts: u64,
    pub sorted_runs: u32,
    pub summary: BuildSummary,
}

fn read_varint(r: &mut impl Read) -> std::io::Result<Option<u64>> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let mut b = [0u8];
        if let Err(e) = r.read_exact(&mut b) {
            if shift == 0 && e.kind() == std::io::ErrorKind::UnexpectedEof {
                return Ok(None);
            }
            return Err(e);
        }
        v |= u64::from(b[0] & 0x7f) << shift;
        if b[0] & 0x80 == 0 {
            return Ok(Some(v));
        }
    }
    Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "varint overflow"))
}

struct Run {
    file: NamedTempFile,
}

impl Run {
    fn spill(dir: &Path, seqs: &[Vec<TokenId>]) -> Result<Self> {
        let wr = |e: std::io::Error| Error::BackendWrite(format!("spilling sorted run: {e}"));
        let file = NamedTempFile::new_in(dir).map_err(wr)?;
        let mut w = BufWriter::new(file.as_file());
        let mut buf = Vec::new();
        for s in seqs {
            buf.clear();
            put_varint(&mut buf, s.len() as u64);
            for &t in s {
                put_varint(&mut buf, t.into());
            }
            w.write_all(&buf).map_err(wr)?;
        }
        w.flush().map_err(wr)?;
        drop(w);
        Ok(Self { file })
    }

    fn reader(&self) -> Result<RunReader> {
        let rd = |e: std::io::Error| Error::BackendWrite(format!("reading sorted run: {e}"));
        let mut f = self.file.reopen().map_err(rd)?;
        f.seek(SeekFrom::Start(0)).map_err(rd)?;
        Ok(RunReader(BufReader::new(f)))
    }
}

struct RunReader(BufReader<std::fs::File>);

impl RunReader {
    fn next_seq(&mut self) -> Result<Option<Vec<TokenId>>> {
        let rd = |e: std::io::Error| Error::BackendWrite(format!("reading sorted run: {e}"));
        let Some(n) = read_varint(&mut self.0).map_err(rd)? else {
            return Ok(None);
        };
        let mut s = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let t = read_varint(&mut self.0)
                .map_err(rd)?
                .ok_or_else(|| Error::BackendWrite("truncated sorted run".into()))?;
            s.push(t as TokenId);
        }
        Ok(Some(s))
    }
}

/// Feeds unique facts in order to the batch builder, rejecting pairs where
/// one fact is a strict prefix of another (adjacent after sorting).
struct Batcher {
    writer: IndexWriter,
    cfg: IndexConfig,
    current: FactTree,
    last: Option<Vec<TokenId>>,
    unique: u64,
}

impl Batcher {
    fn push(&mut self, seq: Vec<TokenId>) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::MalformedFact("empty token sequence".into()));
        }
        if let Some(last) = &self.last {
            if *last == seq {
                return Ok(());
            }
            if seq.starts_with(last) {
                return Err(Error::PrefixConflict);
            }
        }
        self.current.insert(&seq)?;
        self.unique += 1;
        self.last = Some(seq);
        if self.current.fact_count() as usize >= self.cfg.batch_size {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if self.current.fact_count() > 0 {
            let full = std::mem::replace(
                &mut self.current,
                FactTree::new(self.cfg.tokenizer_fingerprint.clone()),
            );
            self.writer.add_batch(&full)?;
        }
        Ok(())
    }
}

fn sort_dedup(buf: &mut Vec<Vec<TokenId>>) {
    buf.sort_unstable();
    buf.dedup();
}

/// Builds an index at `path` from tokenized facts in any order, with
/// duplicates removed across the whole input.
pub fn build_index<I>(path: &Path, cfg: IndexConfig, facts: I) -> Result<IngestStats>
where
    I: IntoIterator<Item = Vec<TokenId>>,
{
    cfg.validate()?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let mut input = 0u64;
    let mut runs = Vec::new();
    let mut buf: Vec<Vec<TokenId>> = Vec::new();
    for seq in facts {
        input += 1;
        buf.push(seq);
        if buf.len() >= cfg.batch_size {
            sort_dedup(&mut buf);
            runs.push(Run::spill(&dir, &buf)?);
            buf.clear();
        }
    }
    sort_dedup(&mut buf);
    let sorted_runs = runs.len() as u32 + u32::from(!buf.is_empty());
    log::debug!("{input} facts in {sorted_runs} sorted runs");

    let mut b = Batcher {
        writer: IndexWriter::create(path, cfg.clone())?,
        current: FactTree::new(cfg.tokenizer_fingerprint.clone()),
        cfg,
        last: None,
        unique: 0,
    };
    if runs.is_empty() {
        for seq in buf {
            b.push(seq)?;
        }
    } else {
        let mut readers = runs.iter().map(Run::reader).collect::<Result<Vec<_>>>()?;
        let mut memory = buf.into_iter();
        // Source index readers.len() stands for the in-memory tail.
        let mut heap = BinaryHeap::new();
        for (i, r) in readers.iter_mut().enumerate() {
            if let Some(s) = r.next_seq()? {
                heap.push(Reverse((s, i)));
            }
        }
        if let Some(s) = memory.next() {
            heap.push(Reverse((s, readers.len())));
        }
        while let Some(Reverse((s, i))) = heap.pop() {
            let next = if i == readers.len() {
                memory.next()
            } else {
                readers[i].next_seq()?
            };
            if let Some(n) = next {
                heap.push(Reverse((n, i)));
            }
            b.push(s)?;
        }
    }
    b.flush()?;
    let unique = b.unique;
    let summary = b.writer.finish()?;
    Ok(IngestStats {
        input_facts: input,
        unique_facts: unique,
        sorted_runs,
        summary,
    })
}

/// Rewrites `src` into a single-batch index at `dst`, so every prefix has
/// at most one row.
pub fn compact_index(src: &IndexReader, dst: &Path) -> Result<IngestStats> {
    let h = src.header();
    let cfg = IndexConfig {
        cutoff_depth: h.cutoff_depth as usize,
        batch_size: (h.fact_count as usize).max(1),
        tokenizer_fingerprint: h.fingerprint.clone(),
        compaction: h.compaction,
    };
    let mut facts = Vec::with_capacity(h.fact_count as usize);
    src.for_each_fact(|f| {
        facts.push(f.to_vec());
        Ok(())
    })?;
    build_index(dst, cfg, facts)
}
