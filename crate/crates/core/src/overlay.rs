//! Session-local record of consumed facts.
//!
//! The shared tree is never mutated. Consumption is tracked in a persistent
//! trie of per-prefix counters; updates copy only the touched path, so a
//! clone (for example when forking beams) costs one reference-count bump.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tokenizer::TokenId;
use crate::trie::FactSource;

#[derive(Clone, Debug, Default)]
struct OverlayNode {
    consumed: u64,
    children: HashMap<TokenId, Arc<OverlayNode>>,
}

#[derive(Clone, Debug, Default)]
pub struct ConsumedOverlay {
    root: Option<Arc<OverlayNode>>,
    facts: u64,
}

/// Position in an overlay, advanced alongside a tree cursor.
#[derive(Clone, Debug, Default)]
pub struct OverlayCursor(Option<Arc<OverlayNode>>);

impl OverlayCursor {
    pub fn consumed(&self) -> u64 {
        self.0.as_ref().map_or(0, |n| n.consumed)
    }

    pub fn consumed_child(&self, token: TokenId) -> u64 {
        self.0
            .as_ref()
            .and_then(|n| n.children.get(&token))
            .map_or(0, |c| c.consumed)
    }

    pub fn child(&self, token: TokenId) -> OverlayCursor {
        OverlayCursor(self.0.as_ref().and_then(|n| n.children.get(&token).cloned()))
    }
}

impl ConsumedOverlay {
    pub fn cursor(&self, prefix: &[TokenId]) -> OverlayCursor {
        let mut c = OverlayCursor(self.root.clone());
        for &t in prefix {
            if c.0.is_none() {
                break;
            }
            c = c.child(t);
        }
        c
    }

    pub fn consumed_at(&self, prefix: &[TokenId]) -> u64 {
        self.cursor(prefix).consumed()
    }

    /// Number of facts consumed so far.
    pub fn fact_count(&self) -> u64 {
        self.facts
    }

    /// Marks the fact `seq` as generated: every node on its path loses one
    /// remaining leaf. `seq` must be a complete fact that is still available.
    pub fn consume_fact<S: FactSource + ?Sized>(&self, source: &S, seq: &[TokenId]) -> Result<Self> {
        let node = source.walk(seq)?;
        if !source.is_leaf(&node) {
            return Err(Error::NotAFact);
        }
        if self.consumed_at(seq) >= source.num_leaves(&node) {
            return Err(Error::AlreadyConsumed);
        }
        Ok(self.consume_unchecked(seq))
    }

    /// Path-copying decrement without consulting the tree; the caller has
    /// already established that `seq` is an available fact.
    pub(crate) fn consume_unchecked(&self, seq: &[TokenId]) -> Self {
        fn bump(node: Option<&Arc<OverlayNode>>, seq: &[TokenId]) -> Arc<OverlayNode> {
            let mut n: OverlayNode = node.map(|n| (**n).clone()).unwrap_or_default();
            n.consumed += 1;
            if let Some((&t, rest)) = seq.split_first() {
                let child = bump(n.children.get(&t), rest);
                n.children.insert(t, child);
            }
            Arc::new(n)
        }
        Self {
            root: Some(bump(self.root.as_ref(), seq)),
            facts: self.facts + 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Fingerprint;
    use crate::trie::{next_tokens, FactTree};

    fn tree() -> FactTree {
        FactTree::from_sequences(
            Fingerprint("t".into()),
            [vec![1u32, 2, 9], vec![1, 3, 9], vec![4, 9]],
        )
        .unwrap()
    }

    #[test]
    fn consumption_decrements_path() {
        let t = tree();
        let o = ConsumedOverlay::default().consume_fact(&t, &[1, 2, 9]).unwrap();
        let nt = next_tokens(&t, &[], &o).unwrap();
        assert_eq!(nt.get(&1), Some(&1));
        assert_eq!(nt.get(&4), Some(&1));
        let nt = next_tokens(&t, &[1], &o).unwrap();
        assert_eq!(nt.get(&2), None);
        assert_eq!(nt.get(&3), Some(&1));
        // base tree untouched
        let fresh = next_tokens(&t, &[1], &ConsumedOverlay::default()).unwrap();
        assert_eq!(fresh.len(), 2);
    }

    #[test]
    fn double_consume_fails() {
        let t = tree();
        let o = ConsumedOverlay::default().consume_fact(&t, &[4, 9]).unwrap();
        assert!(matches!(o.consume_fact(&t, &[4, 9]), Err(Error::AlreadyConsumed)));
    }

    #[test]
    fn partial_path_is_not_a_fact() {
        let t = tree();
        let r = ConsumedOverlay::default().consume_fact(&t, &[1, 2]);
        assert!(matches!(r, Err(Error::NotAFact)));
    }

    #[test]
    fn exhaustion_empties_root() {
        let t = tree();
        let mut o = ConsumedOverlay::default();
        for f in t.trie().sequences() {
            o = o.consume_fact(&t, &f).unwrap();
        }
        assert!(next_tokens(&t, &[], &o).unwrap().is_empty());
        assert_eq!(o.fact_count(), 3);
    }

    #[test]
    fn clones_are_independent() {
        let t = tree();
        let a = ConsumedOverlay::default().consume_fact(&t, &[4, 9]).unwrap();
        let b = a.clone().consume_fact(&t, &[1, 2, 9]).unwrap();
        assert_eq!(a.consumed_at(&[]), 1);
        assert_eq!(b.consumed_at(&[]), 2);
        assert_eq!(a.consumed_at(&[1]), 0);
    }
}
