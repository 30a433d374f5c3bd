//! Batched persistence of fact trees into a single sorted index file.
//!
//! Each batch is turned into node records in key order and spilled to a
//! temporary run. `finish` merges the runs (ties keep batch order), writes
//! the offset table and patches the header, then renames the file into
//! place, so a failed build never leaves a partial index behind.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use super::codec::{encode_key, encode_subtree, NodeRecord, RecordKind};
use super::{IndexConfig, IndexHeader, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;
use crate::trie::{FactTree, NodeId, Trie, ROOT};

/// Produces the records that represent `tree`, in ascending key order.
///
/// Nodes shallower than the cutoff get one row each, except that a node
/// with a single leaf below it is written once with its whole remaining path
/// (when compaction is on). Nodes at the cutoff depth carry their subtree as
/// a blob and nothing deeper is written.
pub fn batch_records(tree: &FactTree, cfg: &IndexConfig, mut emit: impl FnMut(NodeRecord)) {
    if tree.fact_count() == 0 {
        return;
    }
    let trie = tree.trie();
    let mut prefix = Vec::new();
    emit_node(trie, ROOT, &mut prefix, cfg, &mut emit);
}

fn emit_node(
    trie: &Trie,
    id: NodeId,
    prefix: &mut Vec<TokenId>,
    cfg: &IndexConfig,
    emit: &mut dyn FnMut(NodeRecord),
) {
    let node = trie.node(id);
    let (next_tokens, counts): (Vec<TokenId>, Vec<u64>) = node
        .child_ids()
        .iter()
        .map(|&(t, c)| (t, trie.node(c).num_leaves()))
        .unzip();
    if prefix.len() == cfg.cutoff_depth {
        emit(NodeRecord {
            prefix: prefix.clone(),
            kind: RecordKind::Blob,
            next_tokens,
            num_leaves: node.num_leaves(),
            children_num_leaves: counts,
            subtree_blob: Some(encode_subtree(trie, id)),
        });
        return;
    }
    if cfg.compaction && node.num_leaves() == 1 {
        let mut suffix = Vec::new();
        let mut cur = id;
        while let Some(&(t, c)) = trie.node(cur).child_ids().first() {
            suffix.push(t);
            cur = c;
        }
        emit(NodeRecord {
            prefix: prefix.clone(),
            kind: RecordKind::Compacted,
            next_tokens: suffix,
            num_leaves: 1,
            children_num_leaves: Vec::new(),
            subtree_blob: None,
        });
        return;
    }
    emit(NodeRecord {
        prefix: prefix.clone(),
        kind: RecordKind::Standard,
        next_tokens,
        num_leaves: node.num_leaves(),
        children_num_leaves: counts,
        subtree_blob: None,
    });
    for &(t, c) in node.child_ids() {
        prefix.push(t);
        emit_node(trie, c, prefix, cfg, emit);
        prefix.pop();
    }
}

fn write_entry(w: &mut impl Write, key: &[u8], value: &[u8]) -> std::io::Result<()> {
    w.write_all(&((key.len() / 4) as u16).to_be_bytes())?;
    w.write_all(key)?;
    w.write_all(&(value.len() as u32).to_be_bytes())?;
    w.write_all(value)
}

/// Reads one `(key, value)` entry; `None` at a clean end of input.
pub(crate) fn read_entry(r: &mut impl Read) -> std::io::Result<Option<(Vec<u8>, Vec<u8>)>> {
    let mut len = [0u8; 2];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let mut key = vec![0u8; u16::from_be_bytes(len) as usize * 4];
    r.read_exact(&mut key)?;
    let mut vlen = [0u8; 4];
    r.read_exact(&mut vlen)?;
    let mut value = vec![0u8; u32::from_be_bytes(vlen) as usize];
    r.read_exact(&mut value)?;
    Ok(Some((key, value)))
}

/// Summary returned when an index is finalized.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct BuildSummary {
    pub facts: u64,
    pub records: u64,
    pub batches: u32,
    pub bytes: u64,
}

pub struct IndexWriter {
    path: PathBuf,
    cfg: IndexConfig,
    runs: Vec<(NamedTempFile, u64)>,
    facts: u64,
}

impl IndexWriter {
    pub fn create(path: &Path, cfg: IndexConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            path: path.to_path_buf(),
            cfg,
            runs: Vec::new(),
            facts: 0,
        })
    }

    fn temp_dir(&self) -> PathBuf {
        match self.path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        }
    }

    /// Persists one batch tree. Batches must hold disjoint fact sets; shared
    /// prefixes produce duplicate rows that are merged when read.
    pub fn add_batch(&mut self, tree: &FactTree) -> Result<()> {
        if tree.fingerprint() != &self.cfg.tokenizer_fingerprint {
            return Err(Error::TokenizerMismatch {
                expected: self.cfg.tokenizer_fingerprint.to_string(),
                found: tree.fingerprint().to_string(),
            });
        }
        if tree.fact_count() == 0 {
            return Ok(());
        }
        let run = NamedTempFile::new_in(self.temp_dir())
            .map_err(|e| Error::BackendWrite(format!("creating run file: {e}")))?;
        let mut w = BufWriter::new(run.as_file());
        let mut count = 0u64;
        let mut failed = None;
        batch_records(tree, &self.cfg, |rec| {
            if failed.is_some() {
                return;
            }
            count += 1;
            if let Err(e) = write_entry(&mut w, &encode_key(&rec.prefix), &rec.encode_value()) {
                failed = Some(e);
            }
        });
        if let Some(e) = failed {
            return Err(Error::BackendWrite(e.to_string()));
        }
        w.flush().map_err(|e| Error::BackendWrite(e.to_string()))?;
        drop(w);
        self.facts += tree.fact_count();
        self.runs.push((run, count));
        Ok(())
    }

    pub fn fact_count(&self) -> u64 {
        self.facts
    }

    pub fn finish(self) -> Result<BuildSummary> {
        let wr = |e: std::io::Error| Error::BackendWrite(e.to_string());
        let records: u64 = self.runs.iter().map(|r| r.1).sum();
        let mut header = IndexHeader {
            version: FORMAT_VERSION,
            fingerprint: self.cfg.tokenizer_fingerprint.clone(),
            cutoff_depth: self.cfg.cutoff_depth as u32,
            compaction: self.cfg.compaction,
            batch_count: self.runs.len() as u32,
            fact_count: self.facts,
            record_count: records,
            table_offset: 0,
        };

        let out = NamedTempFile::new_in(self.temp_dir()).map_err(wr)?;
        let mut w = BufWriter::new(out.as_file());
        let header_len = header.encode().len() as u64;
        w.write_all(&header.encode()).map_err(wr)?;

        let mut readers = Vec::with_capacity(self.runs.len());
        for (run, _) in &self.runs {
            let mut f = run.reopen().map_err(wr)?;
            f.seek(SeekFrom::Start(0)).map_err(wr)?;
            readers.push(BufReader::new(f));
        }
        let mut heap = BinaryHeap::new();
        let rd = |e: std::io::Error| Error::BackendWrite(format!("reading run: {e}"));
        for (i, r) in readers.iter_mut().enumerate() {
            if let Some((k, v)) = read_entry(r).map_err(rd)? {
                heap.push(Reverse((k, i, v)));
            }
        }
        let mut offsets = Vec::with_capacity(records as usize);
        let mut pos = header_len;
        while let Some(Reverse((k, i, v))) = heap.pop() {
            offsets.push(pos);
            write_entry(&mut w, &k, &v).map_err(wr)?;
            pos += 2 + k.len() as u64 + 4 + v.len() as u64;
            if let Some((k, v)) = read_entry(&mut readers[i]).map_err(rd)? {
                heap.push(Reverse((k, i, v)));
            }
        }
        header.table_offset = pos;
        for o in &offsets {
            w.write_all(&o.to_be_bytes()).map_err(wr)?;
        }
        w.flush().map_err(wr)?;
        let mut f = w.into_inner().map_err(|e| wr(e.into_error()))?;
        f.seek(SeekFrom::Start(0)).map_err(wr)?;
        f.write_all(&header.encode()).map_err(wr)?;
        f.sync_all().map_err(wr)?;
        let bytes = pos + 8 * offsets.len() as u64;
        out.persist(&self.path)
            .map_err(|e| Error::BackendWrite(format!("{}: {}", self.path.display(), e.error)))?;
        Ok(BuildSummary {
            facts: self.facts,
            records,
            batches: header.batch_count,
            bytes,
        })
    }
}

/// Writes a complete index from explicit batches.
pub fn write_index(
    path: &Path,
    cfg: IndexConfig,
    batches: &[FactTree],
) -> Result<BuildSummary> {
    let mut w = IndexWriter::create(path, cfg)?;
    for b in batches {
        w.add_batch(b)?;
    }
    w.finish()
}
