use std::sync::Arc;

use factrie_core::engine::{create_session, Engine, EngineConfig, StepOutcome};
use factrie_core::fixtures::{self, BOYLE_FACTS, SLUMDOG_QUESTION};
use factrie_core::qa::{parse_answer, run_question, ParsedAnswer, PromptConfig, ScriptedModel, Terminal};
use factrie_core::{next_tokens, ConsumedOverlay, FactSource};

#[test]
fn euro_counts_follow_consumption() {
    let tok = fixtures::euro_tokenizer();
    let tree = fixtures::tree(&tok, &fixtures::euro_facts()).unwrap();
    let branch = tok.encode_fact("<Euro> <country> <");
    let s = b'S' as u32;

    let root = next_tokens(&tree, &[], &ConsumedOverlay::default()).unwrap();
    assert_eq!(root.into_iter().collect::<Vec<_>>(), vec![(tok.token_of(" <Euro>").unwrap(), 26)]);
    let at = next_tokens(&tree, &branch, &ConsumedOverlay::default()).unwrap();
    assert_eq!(at.len(), 25);
    assert_eq!(at[&s], 2);

    let slovakia = tok.encode_fact(&fixtures::euro_fact("Slovakia"));
    let o = ConsumedOverlay::default().consume_fact(&tree, &slovakia).unwrap();
    assert_eq!(next_tokens(&tree, &branch, &o).unwrap()[&s], 1);
    assert_eq!(next_tokens(&tree, &[], &o).unwrap().values().sum::<u64>(), 25);

    let slovenia = tok.encode_fact(&fixtures::euro_fact("Slovenia"));
    let o = o.consume_fact(&tree, &slovenia).unwrap();
    assert!(!next_tokens(&tree, &branch, &o).unwrap().contains_key(&s));
    assert!(o.consume_fact(&tree, &slovenia).is_err());
}

#[test]
fn boyle_prefix_excludes_born() {
    let tok = fixtures::boyle_tokenizer();
    let tree = fixtures::tree(&tok, &BOYLE_FACTS).unwrap();
    let prefix = tok.encode_fact("<Danny Boyle> <");
    let next = next_tokens(&tree, &prefix, &ConsumedOverlay::default()).unwrap();
    let date = tok.token_of("date").unwrap();
    let given = tok.token_of("given").unwrap();
    assert_eq!(next.keys().copied().collect::<Vec<_>>(), {
        let mut v = vec![date, given];
        v.sort();
        v
    });
    assert_eq!(next[&given], 2);
    assert!(!next.contains_key(&tok.token_of("born").unwrap()));

    let engine = Arc::new(Engine::new(tree, tok.clone(), EngineConfig::default()).unwrap());
    let mut s = create_session(&engine);
    assert_eq!(s.step(tok.token_of("Fact:").unwrap()).unwrap(), StepOutcome::Constrained);
    for &t in &prefix {
        s.step(t).unwrap();
    }
    let mut logits = vec![0.0f32; tok.vocab_size()];
    logits[tok.token_of("born").unwrap() as usize] = 100.0;
    logits[given as usize] = 1.0;
    let masked = s.mask_logits(&logits).unwrap();
    assert_eq!(masked[tok.token_of("born").unwrap() as usize], f32::NEG_INFINITY);
    assert_eq!(masked[given as usize], 1.0);
    assert!(s.step(tok.token_of("born").unwrap()).is_err());
}

fn slumdog(beams: usize) {
    let tok = fixtures::boyle_tokenizer();
    let tree = fixtures::tree(&tok, &BOYLE_FACTS).unwrap();
    let engine = Arc::new(Engine::new(tree, tok.clone(), EngineConfig::default()).unwrap());
    let model = ScriptedModel::new(Arc::new(tok), fixtures::slumdog_script()).unwrap();
    let cfg = PromptConfig {
        beams,
        max_new_tokens: 300,
        ..Default::default()
    };
    let t = run_question(SLUMDOG_QUESTION, &model, &engine, &cfg).unwrap();
    let facts: Vec<&str> = t.fact_events.iter().map(|e| e.text.as_str()).collect();
    assert_eq!(
        facts,
        vec![
            " <Slumdog Millionaire> <director> <Danny Boyle> .",
            " <Danny Boyle> <date of birth> <1956-10-20> ."
        ]
    );
    assert_eq!(t.terminal, Terminal::Answered);
    assert_eq!(parse_answer(&t), ParsedAnswer::Answer("1956-10-20".into()));
    assert!(t.generated.contains("Fact: <Slumdog Millionaire>"));
}

#[test]
fn slumdog_two_hops_greedy() {
    slumdog(1);
}

#[test]
fn slumdog_two_hops_three_beams() {
    slumdog(3);
}

#[test]
fn euro_tree_disk_matches_memory() {
    let tok = fixtures::euro_tokenizer();
    let tree = fixtures::tree(&tok, &fixtures::euro_facts()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("euro.idx");
    for cutoff in [2, 3, 4, 7] {
        let cfg = factrie_core::store::IndexConfig::new(tok.fingerprint().clone()).with_cutoff(cutoff);
        factrie_core::store::write_index(&path, cfg, &[tree.clone()]).unwrap();
        let r = factrie_core::store::IndexReader::open(&path).unwrap();
        for f in fixtures::euro_facts() {
            let seq = tok.encode_fact(&f);
            for k in 0..=seq.len() {
                let o = ConsumedOverlay::default();
                assert_eq!(
                    next_tokens(&r, &seq[..k], &o).unwrap(),
                    next_tokens(&tree, &seq[..k], &o).unwrap()
                );
            }
            assert!(r.is_leaf(&r.walk(&seq).unwrap()));
        }
    }
}
