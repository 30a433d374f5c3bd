//! Token-level prefix tree with reachable-leaf counts.
//!
//! Every root-to-leaf path is one tokenized fact. Facts are terminated by the
//! tokens of `" ."`, so the set of paths is prefix-free and a node is a leaf
//! exactly when a fact ends there. Each node stores how many facts lie below
//! it; an internal node's count is the sum of its children's counts.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::overlay::ConsumedOverlay;
use crate::tokenizer::{Fingerprint, TokenId};

pub type NodeId = u32;
pub const ROOT: NodeId = 0;

#[derive(Clone, Debug, Default)]
pub struct TrieNode {
    /// Sorted by token id.
    pub(crate) children: Vec<(TokenId, NodeId)>,
    pub(crate) num_leaves: u64,
}

impl TrieNode {
    pub fn num_leaves(&self) -> u64 {
        self.num_leaves
    }

    pub fn child_ids(&self) -> &[(TokenId, NodeId)] {
        &self.children
    }
}

/// Arena-allocated trie. Node 0 is the root.
#[derive(Clone, Debug)]
pub struct Trie {
    pub(crate) nodes: Vec<TrieNode>,
}

impl Default for Trie {
    fn default() -> Self {
        Self::new()
    }
}

impl Trie {
    pub fn new() -> Self {
        Self {
            nodes: vec![TrieNode::default()],
        }
    }

    pub fn node(&self, id: NodeId) -> &TrieNode {
        &self.nodes[id as usize]
    }

    pub fn root(&self) -> &TrieNode {
        &self.nodes[0]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn child(&self, id: NodeId, token: TokenId) -> Option<NodeId> {
        let children = &self.nodes[id as usize].children;
        children
            .binary_search_by_key(&token, |c| c.0)
            .ok()
            .map(|i| children[i].1)
    }

    /// Follows `seq` from `from`, returning the node reached.
    pub fn walk(&self, from: NodeId, seq: &[TokenId]) -> Result<NodeId> {
        let mut node = from;
        for (i, &t) in seq.iter().enumerate() {
            node = self.child(node, t).ok_or(Error::UnknownPrefix {
                matched: i,
                len: seq.len(),
            })?;
        }
        Ok(node)
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        id != ROOT && self.nodes[id as usize].children.is_empty()
    }

    /// Adds a fact. Returns `false` when the sequence was already present.
    pub fn insert(&mut self, seq: &[TokenId]) -> Result<bool> {
        if seq.is_empty() {
            return Err(Error::PrefixConflict);
        }
        // Validate before touching any count.
        let mut node = ROOT;
        let mut depth = 0;
        while depth < seq.len() {
            match self.child(node, seq[depth]) {
                Some(c) => {
                    node = c;
                    depth += 1;
                    if depth < seq.len() && self.is_leaf(node) {
                        return Err(Error::PrefixConflict);
                    }
                }
                None => break,
            }
        }
        if depth == seq.len() {
            return if self.is_leaf(node) {
                Ok(false)
            } else {
                Err(Error::PrefixConflict)
            };
        }

        let mut node = ROOT;
        for &t in seq {
            self.nodes[node as usize].num_leaves += 1;
            node = match self.child(node, t) {
                Some(c) => c,
                None => {
                    let id = self.nodes.len() as NodeId;
                    self.nodes.push(TrieNode::default());
                    let children = &mut self.nodes[node as usize].children;
                    let pos = children.binary_search_by_key(&t, |c| c.0).unwrap_err();
                    children.insert(pos, (t, id));
                    id
                }
            };
        }
        self.nodes[node as usize].num_leaves += 1;
        Ok(true)
    }

    /// Every stored sequence, in token order.
    pub fn sequences(&self) -> Vec<Vec<TokenId>> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        self.collect(ROOT, &mut path, &mut out);
        out
    }

    fn collect(&self, id: NodeId, path: &mut Vec<TokenId>, out: &mut Vec<Vec<TokenId>>) {
        if self.is_leaf(id) {
            out.push(path.clone());
            return;
        }
        for &(t, c) in &self.nodes[id as usize].children {
            path.push(t);
            self.collect(c, path, out);
            path.pop();
        }
    }

    /// Checks the leaf-sum invariant on every node.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (i, n) in self.nodes.iter().enumerate() {
            if i != 0 && n.children.is_empty() {
                if n.num_leaves != 1 {
                    return Err(format!("leaf {i} has num_leaves {}", n.num_leaves));
                }
                continue;
            }
            let sum: u64 = n
                .children
                .iter()
                .map(|&(_, c)| self.nodes[c as usize].num_leaves)
                .sum();
            if sum != n.num_leaves {
                return Err(format!("node {i}: num_leaves {} != children sum {sum}", n.num_leaves));
            }
            if i != 0 && sum == 0 {
                return Err(format!("internal node {i} has no leaves"));
            }
            if n.children.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(format!("node {i}: children not strictly sorted"));
            }
        }
        Ok(())
    }

    /// Structural comparison of the subtrees below `a` in `self` and `b` in
    /// `other`, independent of arena layout.
    pub fn same_subtree(&self, a: NodeId, other: &Trie, b: NodeId) -> bool {
        let (x, y) = (self.node(a), other.node(b));
        x.num_leaves == y.num_leaves
            && x.children.len() == y.children.len()
            && x.children
                .iter()
                .zip(&y.children)
                .all(|(&(t1, c1), &(t2, c2))| t1 == t2 && self.same_subtree(c1, other, c2))
    }

    /// Copies the subtree rooted at `id` into a fresh trie.
    pub fn extract(&self, id: NodeId) -> Trie {
        let mut out = Trie {
            nodes: Vec::with_capacity(16),
        };
        self.copy_into(id, &mut out);
        out
    }

    fn copy_into(&self, id: NodeId, out: &mut Trie) -> NodeId {
        let new_id = out.nodes.len() as NodeId;
        let src = &self.nodes[id as usize];
        out.nodes.push(TrieNode {
            children: Vec::with_capacity(src.children.len()),
            num_leaves: src.num_leaves,
        });
        for &(t, c) in &src.children {
            let nc = self.copy_into(c, out);
            out.nodes[new_id as usize].children.push((t, nc));
        }
        new_id
    }
}

impl PartialEq for Trie {
    fn eq(&self, other: &Self) -> bool {
        self.same_subtree(ROOT, other, ROOT)
    }
}

impl Eq for Trie {}

/// A trie of tokenized facts bound to a tokenizer vocabulary.
#[derive(Clone, Debug)]
pub struct FactTree {
    trie: Trie,
    fingerprint: Fingerprint,
}

impl FactTree {
    pub fn new(fingerprint: Fingerprint) -> Self {
        Self {
            trie: Trie::new(),
            fingerprint,
        }
    }

    pub fn from_sequences<I, S>(fingerprint: Fingerprint, seqs: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[TokenId]>,
    {
        let mut tree = Self::new(fingerprint);
        for s in seqs {
            tree.insert(s.as_ref())?;
        }
        Ok(tree)
    }

    pub fn insert(&mut self, seq: &[TokenId]) -> Result<bool> {
        self.trie.insert(seq)
    }

    pub fn fact_count(&self) -> u64 {
        self.trie.root().num_leaves
    }

    pub fn trie(&self) -> &Trie {
        &self.trie
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }
}

/// Read access to a fact tree, in memory or on disk.
///
/// Nodes are opaque handles; `visit_children` reports base leaf counts,
/// before any session-level consumption.
pub trait FactSource {
    type Node: Clone;

    fn fingerprint(&self) -> &Fingerprint;
    fn root(&self) -> Result<Self::Node>;
    fn child(&self, node: &Self::Node, token: TokenId) -> Result<Option<Self::Node>>;
    fn visit_children(&self, node: &Self::Node, f: &mut dyn FnMut(TokenId, u64));
    fn num_leaves(&self, node: &Self::Node) -> u64;
    fn is_leaf(&self, node: &Self::Node) -> bool;

    fn children(&self, node: &Self::Node) -> Vec<(TokenId, u64)> {
        let mut out = Vec::new();
        self.visit_children(node, &mut |t, n| out.push((t, n)));
        out
    }

    fn walk(&self, prefix: &[TokenId]) -> Result<Self::Node> {
        let mut node = self.root()?;
        for (i, &t) in prefix.iter().enumerate() {
            node = self.child(&node, t)?.ok_or(Error::UnknownPrefix {
                matched: i,
                len: prefix.len(),
            })?;
        }
        Ok(node)
    }
}

impl FactSource for FactTree {
    type Node = NodeId;

    fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    fn root(&self) -> Result<NodeId> {
        Ok(ROOT)
    }

    fn child(&self, node: &NodeId, token: TokenId) -> Result<Option<NodeId>> {
        Ok(self.trie.child(*node, token))
    }

    fn visit_children(&self, node: &NodeId, f: &mut dyn FnMut(TokenId, u64)) {
        for &(t, c) in &self.trie.node(*node).children {
            f(t, self.trie.node(c).num_leaves);
        }
    }

    fn num_leaves(&self, node: &NodeId) -> u64 {
        self.trie.node(*node).num_leaves
    }

    fn is_leaf(&self, node: &NodeId) -> bool {
        self.trie.is_leaf(*node)
    }
}

/// Allowed continuations of `prefix` with their remaining leaf counts under
/// `overlay`. Tokens whose facts have all been consumed are omitted.
pub fn next_tokens<S: FactSource + ?Sized>(
    source: &S,
    prefix: &[TokenId],
    overlay: &ConsumedOverlay,
) -> Result<BTreeMap<TokenId, u64>> {
    let node = source.walk(prefix)?;
    let cursor = overlay.cursor(prefix);
    let mut out = BTreeMap::new();
    source.visit_children(&node, &mut |t, n| {
        let remaining = n.saturating_sub(cursor.consumed_child(t));
        if remaining > 0 {
            out.insert(t, remaining);
        }
    });
    Ok(out)
}
