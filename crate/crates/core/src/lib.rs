//! Knowledge-base constrained decoding.
//!
//! Facts from a knowledge graph are verbalized as `<S> <P> <O> .`, tokenized
//! and stored in a prefix tree whose nodes count the facts reachable below
//! them. While a model generates text, a [`engine::DecodingSession`] watches
//! for the `Fact:` command and from then on masks every token that would
//! leave the tree, so each emitted fact is a member of the knowledge base.

pub mod bench;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod metrics;
pub mod overlay;
pub mod qa;
pub mod store;
pub mod synth;
pub mod tokenizer;
pub mod trie;
pub mod verbalize;

pub use error::{Error, Result};
pub use overlay::ConsumedOverlay;
pub use tokenizer::{Fingerprint, TokenId, Tokenizer};
pub use trie::{next_tokens, FactSource, FactTree};
