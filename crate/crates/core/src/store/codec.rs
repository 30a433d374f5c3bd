//! Byte-level encodings: prefix keys, node records and subtree blobs.

use crate::error::{Error, Result};
use crate::tokenizer::TokenId;
use crate::trie::{NodeId, Trie, TrieNode, ROOT};

pub const BLOB_MAGIC: u8 = b'S';
pub const BLOB_VERSION: u8 = 1;

const FLAG_STANDARD: u8 = 0;
const FLAG_COMPACTED: u8 = 1;
const FLAG_BLOB: u8 = 2;

pub fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = *self
                .buf
                .get(self.pos)
                .ok_or_else(|| Error::CorruptRecord("truncated varint".into()))?;
            self.pos += 1;
            v |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::CorruptRecord("varint overflow".into()))
    }

    pub fn token(&mut self) -> Result<TokenId> {
        let v = self.varint()?;
        TokenId::try_from(v).map_err(|_| Error::CorruptRecord(format!("token id {v} out of range")))
    }

    pub fn byte(&mut self) -> Result<u8> {
        let b = *self
            .buf
            .get(self.pos)
            .ok_or_else(|| Error::CorruptRecord("truncated record".into()))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptRecord("truncated record".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }
}

/// Fixed-width big-endian token ids, so byte order equals sequence order.
pub fn encode_key(prefix: &[TokenId]) -> Vec<u8> {
    let mut k = Vec::with_capacity(prefix.len() * 4);
    for t in prefix {
        k.extend_from_slice(&t.to_be_bytes());
    }
    k
}

pub fn decode_key(bytes: &[u8]) -> Result<Vec<TokenId>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::CorruptRecord(format!("key length {} not a multiple of 4", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Standard,
    /// The node has exactly one leaf below it; `next_tokens` holds the whole
    /// remaining path.
    Compacted,
    /// The node sits at the cutoff depth and carries its serialized subtree.
    Blob,
}

/// One persisted row of the index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeRecord {
    pub prefix: Vec<TokenId>,
    pub kind: RecordKind,
    pub next_tokens: Vec<TokenId>,
    pub num_leaves: u64,
    pub children_num_leaves: Vec<u64>,
    pub subtree_blob: Option<Vec<u8>>,
}

impl NodeRecord {
    pub fn encode_value(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.next_tokens.len() * 3);
        match self.kind {
            RecordKind::Compacted => {
                out.push(FLAG_COMPACTED);
                put_varint(&mut out, self.next_tokens.len() as u64);
                for &t in &self.next_tokens {
                    put_varint(&mut out, t.into());
                }
            }
            RecordKind::Standard | RecordKind::Blob => {
                out.push(if self.kind == RecordKind::Blob {
                    FLAG_BLOB
                } else {
                    FLAG_STANDARD
                });
                put_varint(&mut out, self.num_leaves);
                put_varint(&mut out, self.next_tokens.len() as u64);
                for (&t, &n) in self.next_tokens.iter().zip(&self.children_num_leaves) {
                    put_varint(&mut out, t.into());
                    put_varint(&mut out, n);
                }
                if let Some(blob) = &self.subtree_blob {
                    put_varint(&mut out, blob.len() as u64);
                    out.extend_from_slice(blob);
                }
            }
        }
        out
    }

    pub fn decode(prefix: Vec<TokenId>, value: &[u8]) -> Result<Self> {
        let mut r = Reader::new(value);
        let flag = r.byte()?;
        let rec = match flag {
            FLAG_COMPACTED => {
                let n = r.varint()? as usize;
                let mut suffix = Vec::with_capacity(n.min(value.len()));
                for _ in 0..n {
                    suffix.push(r.token()?);
                }
                NodeRecord {
                    prefix,
                    kind: RecordKind::Compacted,
                    next_tokens: suffix,
                    num_leaves: 1,
                    children_num_leaves: Vec::new(),
                    subtree_blob: None,
                }
            }
            FLAG_STANDARD | FLAG_BLOB => {
                let num_leaves = r.varint()?;
                let n = r.varint()? as usize;
                let mut next_tokens = Vec::with_capacity(n.min(value.len()));
                let mut counts = Vec::with_capacity(n.min(value.len()));
                for _ in 0..n {
                    next_tokens.push(r.token()?);
                    counts.push(r.varint()?);
                }
                if next_tokens.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::CorruptRecord("next tokens not sorted".into()));
                }
                let subtree_blob = if flag == FLAG_BLOB {
                    let len = r.varint()? as usize;
                    Some(r.bytes(len)?.to_vec())
                } else {
                    None
                };
                NodeRecord {
                    prefix,
                    kind: if flag == FLAG_BLOB {
                        RecordKind::Blob
                    } else {
                        RecordKind::Standard
                    },
                    next_tokens,
                    num_leaves,
                    children_num_leaves: counts,
                    subtree_blob,
                }
            }
            other => return Err(Error::CorruptRecord(format!("unknown record flag {other}"))),
        };
        if !r.is_empty() {
            return Err(Error::CorruptRecord("trailing bytes after record".into()));
        }
        Ok(rec)
    }
}

/// Serializes the subtree below `node` in preorder: for each node its child
/// count, then each child's token id followed by that child's subtree. Leaf
/// counts are recomputed on decode.
pub fn encode_subtree(trie: &Trie, node: NodeId) -> Vec<u8> {
    enum Step {
        Node(NodeId),
        Token(TokenId),
    }
    let mut out = vec![BLOB_MAGIC, BLOB_VERSION];
    let mut stack = vec![Step::Node(node)];
    while let Some(step) = stack.pop() {
        match step {
            Step::Token(t) => put_varint(&mut out, t.into()),
            Step::Node(id) => {
                let children = trie.node(id).child_ids();
                put_varint(&mut out, children.len() as u64);
                for &(t, c) in children.iter().rev() {
                    stack.push(Step::Node(c));
                    stack.push(Step::Token(t));
                }
            }
        }
    }
    out
}

pub fn decode_subtree(blob: &[u8]) -> Result<Trie> {
    let mut r = Reader::new(blob);
    if r.byte()? != BLOB_MAGIC {
        return Err(Error::CorruptRecord("bad subtree blob magic".into()));
    }
    let version = r.byte()?;
    if version != BLOB_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version.into(),
            supported: BLOB_VERSION.into(),
        });
    }
    let mut trie = Trie {
        nodes: vec![TrieNode::default()],
    };
    // (node, children still to read)
    let mut stack: Vec<(NodeId, u64)> = Vec::new();
    let root_children = r.varint()?;
    stack.push((ROOT, root_children));
    while let Some(&mut (parent, ref mut pending)) = stack.last_mut() {
        if *pending == 0 {
            stack.pop();
            continue;
        }
        *pending -= 1;
        let token = r.token()?;
        let id = trie.nodes.len() as NodeId;
        trie.nodes.push(TrieNode::default());
        let siblings = &mut trie.nodes[parent as usize].children;
        if siblings.last().is_some_and(|&(t, _)| t >= token) {
            return Err(Error::CorruptRecord("subtree children not sorted".into()));
        }
        siblings.push((token, id));
        let n = r.varint()?;
        stack.push((id, n));
        if trie.nodes.len() > blob.len() * 2 + 1 {
            return Err(Error::CorruptRecord("subtree blob too large for its size".into()));
        }
    }
    if !r.is_empty() {
        return Err(Error::CorruptRecord("trailing bytes after subtree".into()));
    }
    // Children always have larger ids than their parent.
    for i in (0..trie.nodes.len()).rev() {
        let n = if trie.nodes[i].children.is_empty() {
            1
        } else {
            trie.nodes[i]
                .children
                .iter()
                .map(|&(_, c)| trie.nodes[c as usize].num_leaves)
                .sum()
        };
        trie.nodes[i].num_leaves = n;
    }
    Ok(trie)
}
