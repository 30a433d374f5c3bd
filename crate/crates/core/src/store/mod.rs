//! Disk-backed fact index.
//!
//! File layout (all integers big-endian):
//!
//! ```text
//! header   "FTRX" | version u32 | fingerprint (u16 len + utf8) | cutoff u32
//!          | flags u8 | batch_count u32 | fact_count u64 | record_count u64
//!          | table_offset u64
//! records  key_tokens u16 | key (4 bytes per token) | value_len u32 | value
//!          ... sorted by key, duplicates in batch order
//! table    record_count x u64 record offsets
//! ```
//!
//! A record value starts with a flags byte: standard (children and their
//! leaf counts), single-leaf compacted (the full remaining token path), or
//! blob-bearing (standard fields plus the serialized subtree at the cutoff
//! depth).

mod build;
pub mod codec;
mod reader;
mod stats;
mod writer;

pub use build::{build_index, compact_index, IngestStats};
pub use codec::{NodeRecord, RecordKind};
pub use reader::{CacheStats, IndexReader, MergedNode, MergedRecord, CACHE_ENV, DEFAULT_CACHE_BYTES};
pub use stats::{IndexStats, Percentiles};
pub use writer::{batch_records, write_index, BuildSummary, IndexWriter};

use crate::error::{Error, Result};
use crate::tokenizer::Fingerprint;

pub const MAGIC: &[u8; 4] = b"FTRX";
pub const FORMAT_VERSION: u32 = 1;

pub const DEFAULT_CUTOFF_DEPTH: usize = 7;
pub const DEFAULT_BATCH_SIZE: usize = 5_000_000;

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct IndexConfig {
    /// Prefix length at which subtrees are stored as blobs.
    pub cutoff_depth: usize,
    /// Facts per ingestion batch.
    pub batch_size: usize,
    pub tokenizer_fingerprint: Fingerprint,
    /// Single-leaf compaction; only disabled for size comparisons.
    pub compaction: bool,
}

impl IndexConfig {
    pub fn new(tokenizer_fingerprint: Fingerprint) -> Self {
        Self {
            cutoff_depth: DEFAULT_CUTOFF_DEPTH,
            batch_size: DEFAULT_BATCH_SIZE,
            tokenizer_fingerprint,
            compaction: true,
        }
    }

    pub fn with_cutoff(mut self, cutoff_depth: usize) -> Self {
        self.cutoff_depth = cutoff_depth;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_compaction(mut self, on: bool) -> Self {
        self.compaction = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.cutoff_depth < 2 {
            return Err(Error::InvalidConfig(format!(
                "cutoff depth must be at least 2, got {}",
                self.cutoff_depth
            )));
        }
        if self.cutoff_depth > u16::MAX as usize {
            return Err(Error::InvalidConfig("cutoff depth too large".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct IndexHeader {
    pub version: u32,
    pub fingerprint: Fingerprint,
    pub cutoff_depth: u32,
    pub compaction: bool,
    pub batch_count: u32,
    pub fact_count: u64,
    pub record_count: u64,
    pub table_offset: u64,
}

impl IndexHeader {
    pub fn encode(&self) -> Vec<u8> {
        let fp = self.fingerprint.0.as_bytes();
        let mut out = Vec::with_capacity(48 + fp.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_be_bytes());
        out.extend_from_slice(&(fp.len() as u16).to_be_bytes());
        out.extend_from_slice(fp);
        out.extend_from_slice(&self.cutoff_depth.to_be_bytes());
        out.push(u8::from(self.compaction));
        out.extend_from_slice(&self.batch_count.to_be_bytes());
        out.extend_from_slice(&self.fact_count.to_be_bytes());
        out.extend_from_slice(&self.record_count.to_be_bytes());
        out.extend_from_slice(&self.table_offset.to_be_bytes());
        out
    }

    /// Parses a header from the start of `buf`, returning it and its length.
    pub fn decode(buf: &[u8]) -> Result<(Self, usize)> {
        let short = || Error::CorruptRecord("truncated header".into());
        if buf.len() < 10 {
            return Err(short());
        }
        if &buf[..4] != MAGIC {
            return Err(Error::CorruptRecord("not a fact index (bad magic)".into()));
        }
        let version = u32::from_be_bytes(buf[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let fp_len = u16::from_be_bytes(buf[8..10].try_into().unwrap()) as usize;
        let rest = buf.get(10..).ok_or_else(short)?;
        if rest.len() < fp_len + 4 + 1 + 4 + 8 + 8 + 8 {
            return Err(short());
        }
        let fingerprint = std::str::from_utf8(&rest[..fp_len])
            .map_err(|_| Error::CorruptRecord("fingerprint is not utf-8".into()))?
            .to_string();
        let mut p = fp_len;
        let mut take = |n: usize| {
            let s = &rest[p..p + n];
            p += n;
            s
        };
        let cutoff_depth = u32::from_be_bytes(take(4).try_into().unwrap());
        let compaction = take(1)[0] != 0;
        let batch_count = u32::from_be_bytes(take(4).try_into().unwrap());
        let fact_count = u64::from_be_bytes(take(8).try_into().unwrap());
        let record_count = u64::from_be_bytes(take(8).try_into().unwrap());
        let table_offset = u64::from_be_bytes(take(8).try_into().unwrap());
        Ok((
            Self {
                version,
                fingerprint: Fingerprint(fingerprint),
                cutoff_depth,
                compaction,
                batch_count,
                fact_count,
                record_count,
                table_offset,
            },
            10 + p,
        ))
    }
}
