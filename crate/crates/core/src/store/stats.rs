use std::collections::BTreeMap;
use std::fmt;

use super::codec::RecordKind;
use super::reader::IndexReader;
use crate::error::Result;

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct Percentiles {
    pub count: u64,
    pub min: u64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub max: u64,
    pub mean: f64,
}

impl Percentiles {
    /// Nearest-rank percentiles.
    pub fn from_values(mut v: Vec<u64>) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        v.sort_unstable();
        let rank = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Self {
            count: v.len() as u64,
            min: v[0],
            p50: rank(0.50),
            p90: rank(0.90),
            p99: rank(0.99),
            max: *v.last().unwrap(),
            mean: v.iter().sum::<u64>() as f64 / v.len() as f64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct IndexStats {
    pub fact_count: u64,
    pub record_count: u64,
    pub batch_count: u32,
    pub cutoff_depth: u32,
    pub compaction: bool,
    pub standard_records: u64,
    pub compacted_records: u64,
    pub blob_records: u64,
    pub distinct_prefixes: u64,
    /// Rows per prefix -> number of prefixes with that many rows.
    pub duplicate_histogram: BTreeMap<u64, u64>,
    /// Serialized subtree sizes in bytes.
    pub blob_bytes: Percentiles,
    pub total_bytes: u64,
}

impl IndexStats {
    pub fn collect(reader: &IndexReader) -> Result<Self> {
        let h = reader.header();
        let mut s = IndexStats {
            fact_count: h.fact_count,
            record_count: h.record_count,
            batch_count: h.batch_count,
            cutoff_depth: h.cutoff_depth,
            compaction: h.compaction,
            total_bytes: reader.file_bytes(),
            ..Default::default()
        };
        let mut blobs = Vec::new();
        let mut last: Option<Vec<u32>> = None;
        let mut run = 0u64;
        reader.for_each_record(|rec| {
            match rec.kind {
                RecordKind::Standard => s.standard_records += 1,
                RecordKind::Compacted => s.compacted_records += 1,
                RecordKind::Blob => {
                    s.blob_records += 1;
                    blobs.push(rec.subtree_blob.as_ref().map_or(0, |b| b.len() as u64));
                }
            }
            if last.as_deref() == Some(&rec.prefix[..]) {
                run += 1;
            } else {
                if run > 0 {
                    *s.duplicate_histogram.entry(run).or_default() += 1;
                }
                s.distinct_prefixes += 1;
                last = Some(rec.prefix);
                run = 1;
            }
            Ok(())
        })?;
        if run > 0 {
            *s.duplicate_histogram.entry(run).or_default() += 1;
        }
        s.blob_bytes = Percentiles::from_values(blobs);
        Ok(s)
    }
}

impl fmt::Display for IndexStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "facts              {}", self.fact_count)?;
        writeln!(f, "records            {}", self.record_count)?;
        writeln!(f, "  standard         {}", self.standard_records)?;
        writeln!(f, "  compacted        {}", self.compacted_records)?;
        writeln!(f, "  blob             {}", self.blob_records)?;
        writeln!(f, "distinct prefixes  {}", self.distinct_prefixes)?;
        writeln!(f, "batches            {}", self.batch_count)?;
        writeln!(f, "cutoff depth       {}", self.cutoff_depth)?;
        writeln!(f, "compaction         {}", self.compaction)?;
        writeln!(f, "total bytes        {}", self.total_bytes)?;
        writeln!(f, "rows per prefix:")?;
        for (rows, n) in &self.duplicate_histogram {
            writeln!(f, "  {rows:>4}  {n}")?;
        }
        let b = &self.blob_bytes;
        write!(
            f,
            "blob bytes         n={} min={} p50={} p90={} p99={} max={} mean={:.1}",
            b.count, b.min, b.p50, b.p90, b.p99, b.max, b.mean
        )
    }
}
