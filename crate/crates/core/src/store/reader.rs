//! Read path: point lookups by binary search over the offset table, with
//! duplicate rows from different batches merged on read.
//!
//! A logical node can be described by several sources at once: standard
//! rows at its own prefix, single-leaf suffixes written at an ancestor, and
//! decoded subtree blobs from an ancestor at the cutoff depth. `MergedNode`
//! keeps all of them, so walking below a compacted row or a blob never
//! touches the disk again.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::codec::{decode_key, decode_subtree, encode_key, NodeRecord, RecordKind};
use super::writer::read_entry;
use super::IndexHeader;
use crate::error::{Error, Result};
use crate::tokenizer::{Fingerprint, TokenId};
use crate::trie::{FactSource, NodeId, Trie, ROOT};

/// Default bound on the merged-node cache, overridable with
/// `FACTRIE_CACHE_BYTES`.
pub const DEFAULT_CACHE_BYTES: usize = 256 << 20;
pub const CACHE_ENV: &str = "FACTRIE_CACHE_BYTES";

/// A node of the merged (all batches) view of the index.
#[derive(Debug)]
pub struct MergedNode {
    prefix: Vec<TokenId>,
    children: Vec<(TokenId, u64)>,
    num_leaves: u64,
    /// Tokens with rows of their own at `prefix + token`.
    disk: Vec<TokenId>,
    suffixes: Vec<(Arc<[TokenId]>, usize)>,
    blobs: Vec<(Arc<Trie>, NodeId)>,
}

impl MergedNode {
    pub fn prefix(&self) -> &[TokenId] {
        &self.prefix
    }

    /// Merged children with summed leaf counts, sorted by token.
    pub fn children(&self) -> &[(TokenId, u64)] {
        &self.children
    }

    pub fn num_leaves(&self) -> u64 {
        self.num_leaves
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty() && self.num_leaves > 0
    }

    pub fn to_record(&self) -> MergedRecord {
        MergedRecord {
            prefix: self.prefix.clone(),
            next_tokens: self.children.iter().map(|c| c.0).collect(),
            children_num_leaves: self.children.iter().map(|c| c.1).collect(),
            num_leaves: self.num_leaves,
        }
    }

    fn approx_bytes(&self) -> usize {
        96 + self.prefix.len() * 4
            + self.children.len() * 16
            + self.disk.len() * 4
            + self.suffixes.iter().map(|s| 24 + s.0.len() * 4).sum::<usize>()
            + self.blobs.len() * 24
    }
}

/// The logical content of a node after merging every batch.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct MergedRecord {
    pub prefix: Vec<TokenId>,
    pub next_tokens: Vec<TokenId>,
    pub children_num_leaves: Vec<u64>,
    pub num_leaves: u64,
}

type Slot = Arc<Mutex<Option<Arc<MergedNode>>>>;

#[derive(Default)]
struct Cache {
    map: HashMap<Vec<TokenId>, Slot>,
    bytes: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub clears: u64,
    pub record_reads: u64,
}

pub struct IndexReader {
    path: PathBuf,
    file: File,
    header: IndexHeader,
    offsets: Vec<u64>,
    cache: Mutex<Cache>,
    cache_budget: usize,
    hits: AtomicU64,
    misses: AtomicU64,
    clears: AtomicU64,
    record_reads: AtomicU64,
}

impl std::fmt::Debug for IndexReader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IndexReader")
            .field("path", &self.path)
            .field("header", &self.header)
            .finish_non_exhaustive()
    }
}

fn cache_budget_from_env() -> usize {
    match std::env::var(CACHE_ENV) {
        Ok(v) => match v.trim().parse() {
            Ok(n) => n,
            Err(_) => {
                log::warn!("ignoring unparsable {CACHE_ENV}={v:?}");
                DEFAULT_CACHE_BYTES
            }
        },
        Err(_) => DEFAULT_CACHE_BYTES,
    }
}

#[cfg(unix)]
fn read_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)
}

#[cfg(windows)]
fn read_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset)? {
            0 => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            n => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
        }
    }
    Ok(())
}

impl IndexReader {
    /// Opens a finalized index. The cache budget comes from
    /// `FACTRIE_CACHE_BYTES` when set.
    pub fn open(path: &Path) -> Result<Self> {
        Self::open_with_cache(path, cache_budget_from_env())
    }

    pub fn open_with_cache(path: &Path, cache_bytes: usize) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut head = vec![0u8; len.min(64 * 1024) as usize];
        read_at(&file, &mut head, 0).map_err(|e| Error::io(path, e))?;
        let (header, header_len) = IndexHeader::decode(&head)?;
        let table_len = header
            .record_count
            .checked_mul(8)
            .ok_or_else(|| Error::CorruptRecord("record count overflows".into()))?;
        if header.table_offset < header_len as u64
            || header.table_offset.checked_add(table_len) != Some(len)
        {
            return Err(Error::CorruptRecord(format!(
                "offset table at {} with {} records does not fit a {} byte file",
                header.table_offset, header.record_count, len
            )));
        }
        let mut raw = vec![0u8; table_len as usize];
        read_at(&file, &mut raw, header.table_offset).map_err(|e| Error::io(path, e))?;
        let offsets: Vec<u64> = raw
            .chunks_exact(8)
            .map(|c| u64::from_be_bytes(c.try_into().unwrap()))
            .collect();
        let mut prev = header_len as u64;
        for (i, &o) in offsets.iter().enumerate() {
            if o < prev || o >= header.table_offset {
                return Err(Error::CorruptRecord(format!("record offset {i} out of order")));
            }
            prev = o;
        }
        if offsets.first().is_some_and(|&o| o != header_len as u64) {
            return Err(Error::CorruptRecord("first record does not follow header".into()));
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
            header,
            offsets,
            cache: Mutex::new(Cache::default()),
            cache_budget: cache_bytes,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            clears: AtomicU64::new(0),
            record_reads: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> &IndexHeader {
        &self.header
    }

    pub fn fact_count(&self) -> u64 {
        self.header.fact_count
    }

    pub fn record_count(&self) -> u64 {
        self.header.record_count
    }

    pub fn file_bytes(&self) -> u64 {
        self.header.table_offset + 8 * self.header.record_count
    }

    pub fn cache_stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            clears: self.clears.load(Ordering::Relaxed),
            record_reads: self.record_reads.load(Ordering::Relaxed),
        }
    }

    pub fn clear_cache(&self) {
        let mut c = self.cache.lock().unwrap();
        c.map.clear();
        c.bytes = 0;
    }

    fn read_err(&self, e: std::io::Error) -> Error {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::CorruptRecord(format!("{}: truncated record", self.path.display()))
        } else {
            Error::BackendRead(format!("{}: {e}", self.path.display()))
        }
    }

    /// Reads the start of record `i`: its key length and up to `max_tokens`
    /// key tokens (raw bytes).
    fn key_head(&self, i: usize, max_tokens: usize) -> Result<(usize, Vec<u8>)> {
        let off = self.offsets[i];
        let end = self
            .offsets
            .get(i + 1)
            .copied()
            .unwrap_or(self.header.table_offset);
        let want = (2 + 4 * max_tokens as u64).min(end - off);
        let mut buf = vec![0u8; want as usize];
        read_at(&self.file, &mut buf, off).map_err(|e| self.read_err(e))?;
        if buf.len() < 2 {
            return Err(Error::CorruptRecord("record shorter than its key length".into()));
        }
        let len = u16::from_be_bytes([buf[0], buf[1]]) as usize;
        let avail = (buf.len() - 2).min(len * 4);
        buf.drain(..2);
        buf.truncate(avail);
        Ok((len, buf))
    }

    /// First record index whose key is not less than `key`.
    fn lower_bound(&self, key: &[u8]) -> Result<usize> {
        let tokens = key.len() / 4;
        let (mut lo, mut hi) = (0usize, self.offsets.len());
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let (len, head) = self.key_head(mid, tokens)?;
            let less = match head.as_slice().cmp(&key[..head.len()]) {
                std::cmp::Ordering::Equal => len < tokens,
                o => o == std::cmp::Ordering::Less,
            };
            if less {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }

    /// All rows stored for exactly `prefix`, in batch order.
    pub fn raw_records(&self, prefix: &[TokenId]) -> Result<Vec<NodeRecord>> {
        let key = encode_key(prefix);
        let mut i = self.lower_bound(&key)?;
        let mut out = Vec::new();
        while i < self.offsets.len() {
            let off = self.offsets[i];
            let end = self
                .offsets
                .get(i + 1)
                .copied()
                .unwrap_or(self.header.table_offset);
            let head_len = 2 + key.len() as u64 + 4;
            if end - off < head_len {
                break;
            }
            let mut head = vec![0u8; head_len as usize];
            read_at(&self.file, &mut head, off).map_err(|e| self.read_err(e))?;
            let len = u16::from_be_bytes([head[0], head[1]]) as usize;
            if len != prefix.len() || head[2..2 + key.len()] != key[..] {
                break;
            }
            let vlen = u32::from_be_bytes(head[2 + key.len()..].try_into().unwrap()) as u64;
            if off + head_len + vlen != end {
                return Err(Error::CorruptRecord(format!(
                    "record {i} length does not match the offset table"
                )));
            }
            let mut value = vec![0u8; vlen as usize];
            read_at(&self.file, &mut value, off + head_len).map_err(|e| self.read_err(e))?;
            self.record_reads.fetch_add(1, Ordering::Relaxed);
            out.push(NodeRecord::decode(prefix.to_vec(), &value)?);
            i += 1;
        }
        Ok(out)
    }

    /// Merged view of the node at `prefix`.
    pub fn lookup(&self, prefix: &[TokenId]) -> Result<MergedRecord> {
        match self.walk(prefix) {
            Ok(n) if n.num_leaves > 0 => Ok(n.to_record()),
            Ok(_) | Err(Error::UnknownPrefix { .. }) => Err(Error::NotFound),
            Err(e) => Err(e),
        }
    }

    /// Visits every stored row in key order without touching the cache.
    pub fn for_each_record(&self, mut f: impl FnMut(NodeRecord) -> Result<()>) -> Result<()> {
        let mut file = self.file.try_clone().map_err(|e| self.read_err(e))?;
        let start = self.offsets.first().copied().unwrap_or(self.header.table_offset);
        file.seek(SeekFrom::Start(start)).map_err(|e| self.read_err(e))?;
        let mut r = BufReader::with_capacity(1 << 20, file.take(self.header.table_offset - start));
        for _ in 0..self.offsets.len() {
            let (key, value) = read_entry(&mut r)
                .map_err(|e| self.read_err(e))?
                .ok_or_else(|| Error::CorruptRecord("fewer records than the header states".into()))?;
            f(NodeRecord::decode(decode_key(&key)?, &value)?)?;
        }
        Ok(())
    }

    /// Enumerates every fact in token order, bypassing the cache.
    pub fn for_each_fact(&self, mut f: impl FnMut(&[TokenId]) -> Result<()>) -> Result<()> {
        let root = self.load(Vec::new(), Vec::new(), Vec::new(), true, false)?;
        let mut stack = vec![(root, 0usize)];
        while let Some((node, next)) = stack.pop() {
            if next == 0 && node.is_leaf() {
                f(&node.prefix)?;
                continue;
            }
            if let Some(&(t, _)) = node.children.get(next) {
                let child = self.descend(&node, t, false)?.expect("listed child exists");
                stack.push((node, next + 1));
                stack.push((child, 0));
            }
        }
        Ok(())
    }

    fn assemble(
        &self,
        prefix: Vec<TokenId>,
        mut suffixes: Vec<(Arc<[TokenId]>, usize)>,
        mut blobs: Vec<(Arc<Trie>, NodeId)>,
        records: Vec<NodeRecord>,
    ) -> Result<MergedNode> {
        let mut counts: Vec<(TokenId, u64)> = Vec::new();
        let mut disk = Vec::new();
        let mut num_leaves = 0u64;
        for rec in records {
            match rec.kind {
                RecordKind::Standard => {
                    if rec.next_tokens.len() != rec.children_num_leaves.len() {
                        return Err(Error::CorruptRecord("children and counts differ".into()));
                    }
                    num_leaves += rec.num_leaves;
                    counts.extend(rec.next_tokens.iter().copied().zip(rec.children_num_leaves));
                    disk.extend(rec.next_tokens);
                }
                RecordKind::Compacted => suffixes.push((rec.next_tokens.into(), 0)),
                RecordKind::Blob => {
                    let blob = rec
                        .subtree_blob
                        .ok_or_else(|| Error::CorruptRecord("blob row without blob".into()))?;
                    let trie = decode_subtree(&blob)?;
                    if trie.root().num_leaves() != rec.num_leaves {
                        return Err(Error::CorruptRecord(format!(
                            "blob holds {} leaves, row says {}",
                            trie.root().num_leaves(),
                            rec.num_leaves
                        )));
                    }
                    blobs.push((Arc::new(trie), ROOT));
                }
            }
        }
        for (s, pos) in &suffixes {
            num_leaves += 1;
            if let Some(&t) = s.get(*pos) {
                counts.push((t, 1));
            }
        }
        for (trie, id) in &blobs {
            let n = trie.node(*id);
            num_leaves += n.num_leaves();
            counts.extend(n.child_ids().iter().map(|&(t, c)| (t, trie.node(c).num_leaves())));
        }
        counts.sort_unstable_by_key(|c| c.0);
        let mut children: Vec<(TokenId, u64)> = Vec::with_capacity(counts.len());
        for (t, n) in counts {
            match children.last_mut() {
                Some(last) if last.0 == t => last.1 += n,
                _ => children.push((t, n)),
            }
        }
        disk.sort_unstable();
        disk.dedup();
        Ok(MergedNode {
            prefix,
            children,
            num_leaves,
            disk,
            suffixes,
            blobs,
        })
    }

    /// Builds the node at `prefix` from inherited in-memory sources, plus
    /// its own rows when `fetch` is set.
    fn load(
        &self,
        prefix: Vec<TokenId>,
        suffixes: Vec<(Arc<[TokenId]>, usize)>,
        blobs: Vec<(Arc<Trie>, NodeId)>,
        fetch: bool,
        cached: bool,
    ) -> Result<Arc<MergedNode>> {
        if !fetch {
            return Ok(Arc::new(self.assemble(prefix, suffixes, blobs, Vec::new())?));
        }
        if !cached || self.cache_budget == 0 {
            let records = self.raw_records(&prefix)?;
            return Ok(Arc::new(self.assemble(prefix, suffixes, blobs, records)?));
        }
        let slot = {
            let mut c = self.cache.lock().unwrap();
            c.map.entry(prefix.clone()).or_default().clone()
        };
        let mut guard = slot.lock().unwrap();
        if let Some(n) = guard.as_ref() {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(n.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let records = self.raw_records(&prefix)?;
        let blob_bytes: usize = records
            .iter()
            .filter_map(|r| r.subtree_blob.as_ref())
            .map(|b| b.len() * 8)
            .sum();
        let node = Arc::new(self.assemble(prefix, suffixes, blobs, records)?);
        *guard = Some(node.clone());
        drop(guard);
        let size = node.approx_bytes() + blob_bytes;
        let mut c = self.cache.lock().unwrap();
        c.bytes += size;
        if c.bytes > self.cache_budget {
            c.map.clear();
            c.bytes = 0;
            self.clears.fetch_add(1, Ordering::Relaxed);
        }
        Ok(node)
    }

    fn descend(
        &self,
        node: &MergedNode,
        token: TokenId,
        cached: bool,
    ) -> Result<Option<Arc<MergedNode>>> {
        if node.children.binary_search_by_key(&token, |c| c.0).is_err() {
            return Ok(None);
        }
        let suffixes = node
            .suffixes
            .iter()
            .filter(|(s, pos)| s.get(*pos) == Some(&token))
            .map(|(s, pos)| (s.clone(), pos + 1))
            .collect();
        let blobs = node
            .blobs
            .iter()
            .filter_map(|(trie, id)| trie.child(*id, token).map(|c| (trie.clone(), c)))
            .collect();
        let mut prefix = Vec::with_capacity(node.prefix.len() + 1);
        prefix.extend_from_slice(&node.prefix);
        prefix.push(token);
        let fetch = node.disk.binary_search(&token).is_ok();
        self.load(prefix, suffixes, blobs, fetch, cached).map(Some)
    }
}

impl FactSource for IndexReader {
    type Node = Arc<MergedNode>;

    fn fingerprint(&self) -> &Fingerprint {
        &self.header.fingerprint
    }

    fn root(&self) -> Result<Arc<MergedNode>> {
        self.load(Vec::new(), Vec::new(), Vec::new(), true, true)
    }

    fn child(&self, node: &Arc<MergedNode>, token: TokenId) -> Result<Option<Arc<MergedNode>>> {
        self.descend(node, token, true)
    }

    fn visit_children(&self, node: &Arc<MergedNode>, f: &mut dyn FnMut(TokenId, u64)) {
        for &(t, n) in &node.children {
            f(t, n);
        }
    }

    fn num_leaves(&self, node: &Arc<MergedNode>) -> u64 {
        node.num_leaves
    }

    fn is_leaf(&self, node: &Arc<MergedNode>) -> bool {
        node.is_leaf()
    }
}
