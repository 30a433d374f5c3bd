use std::sync::Arc;

use factrie_core::engine::{create_session, Engine, EngineConfig};
use factrie_core::fixtures::{self, BOYLE_FACTS, SLUMDOG_QUESTION};
use factrie_core::qa::{
    log_softmax, par_map, parse_answer, run_question, LanguageModel, ParsedAnswer, PromptConfig,
    Script, ScriptedModel, Terminal,
};
use factrie_core::{FactTree, TokenId, Tokenizer};

fn setup() -> (Arc<Engine<FactTree>>, Arc<Tokenizer>) {
    let tok = fixtures::boyle_tokenizer();
    let tree = fixtures::tree(&tok, &BOYLE_FACTS).unwrap();
    let engine = Arc::new(Engine::new(tree, tok.clone(), EngineConfig::default()).unwrap());
    (engine, Arc::new(tok))
}

fn cfg(beams: usize, max_new_tokens: usize) -> PromptConfig {
    PromptConfig {
        beams,
        max_new_tokens,
        ..Default::default()
    }
}

#[test]
fn runs_are_deterministic() {
    let (engine, tok) = setup();
    let model = ScriptedModel::new(tok, fixtures::slumdog_script()).unwrap();
    for beams in [1, 2, 3] {
        let a = run_question(SLUMDOG_QUESTION, &model, &engine, &cfg(beams, 300)).unwrap();
        let b = run_question(SLUMDOG_QUESTION, &model, &engine, &cfg(beams, 300)).unwrap();
        assert_eq!(a, b);
    }
}

/// With one beam the search is plain greedy decoding through the session.
#[test]
fn one_beam_is_greedy() {
    let (engine, tok) = setup();
    let model = ScriptedModel::new(tok.clone(), fixtures::slumdog_script()).unwrap();
    let t = run_question(SLUMDOG_QUESTION, &model, &engine, &cfg(1, 300)).unwrap();

    let mut s = create_session(&engine);
    let mut generated: Vec<TokenId> = Vec::new();
    let mut score = 0.0;
    for _ in 0..t.new_tokens {
        let masked = s.mask_logits(&model.logits(&[], &generated).unwrap()).unwrap();
        let lp = log_softmax(&masked);
        let best = (0..lp.len()).fold(0, |b, i| if lp[i] > lp[b] { i } else { b });
        score += lp[best];
        generated.push(best as TokenId);
        if best as TokenId != tok.eos() {
            s.step(best as TokenId).unwrap();
        }
    }
    assert_eq!(tok.decode(&generated), t.generated);
    assert_eq!(s.facts(), &t.fact_events[..]);
    assert!((score / t.new_tokens as f64 - t.score).abs() < 1e-12);
}

#[test]
fn refusal_and_budget() {
    let (engine, tok) = setup();
    let refuse = ScriptedModel::new(
        tok.clone(),
        Script::from_pairs([("", vec!["I cannot find it. I don't know."])]),
    )
    .unwrap();
    let t = run_question("Who?", &refuse, &engine, &cfg(2, 100)).unwrap();
    assert_eq!(t.terminal, Terminal::IDontKnow);
    assert_eq!(parse_answer(&t), ParsedAnswer::IDontKnow);

    let ramble = ScriptedModel::new(
        tok.clone(),
        Script::from_pairs([("", vec!["thinking thinking thinking thinking thinking"])]),
    )
    .unwrap();
    let t = run_question("Who?", &ramble, &engine, &cfg(1, 5)).unwrap();
    assert_eq!(t.terminal, Terminal::BudgetExhausted);
    assert_eq!(t.new_tokens, 5);
    assert_eq!(parse_answer(&t), ParsedAnswer::NotGiven);

    let silent = ScriptedModel::new(tok, Script::from_pairs([("", vec![])])).unwrap();
    let t = run_question("Who?", &silent, &engine, &cfg(1, 5)).unwrap();
    assert_eq!(t.terminal, Terminal::IDontKnow);
}

#[test]
fn stop_strings_inside_facts_do_not_stop() {
    let tok = Tokenizer::from_pieces(["Fact:", "Answer:", " <", "> ."]);
    let facts = ["<Answer: yes> <is> <I don't know.> ."];
    let tree = fixtures::tree(&tok, &facts).unwrap();
    let engine = Arc::new(Engine::new(tree, tok.clone(), EngineConfig::default()).unwrap());
    let model = ScriptedModel::new(
        Arc::new(tok),
        Script::from_pairs([
            ("", vec!["Fact:"]),
            ("Fact:", vec![" <Answer: yes> <is> <I don't know.> ."]),
            ("> .", vec!["\nAnswer: done\n"]),
        ]),
    )
    .unwrap();
    let t = run_question("q", &model, &engine, &cfg(1, 200)).unwrap();
    assert_eq!(t.fact_events.len(), 1);
    assert_eq!(t.terminal, Terminal::Answered);
    assert_eq!(parse_answer(&t), ParsedAnswer::Answer("done".into()));
}

#[test]
fn incompatible_configs_are_rejected() {
    let (engine, tok) = setup();
    let model = ScriptedModel::new(tok, fixtures::slumdog_script()).unwrap();
    let mut c = cfg(1, 10);
    c.trigger = "Lookup:".into();
    assert!(run_question("q", &model, &engine, &c).is_err());
    let mut c = cfg(1, 10);
    c.sampling = true;
    assert!(run_question("q", &model, &engine, &c).is_err());

    let other = ScriptedModel::new(Arc::new(fixtures::euro_tokenizer()), Script::from_pairs([])).unwrap();
    assert!(run_question("q", &other, &engine, &cfg(1, 10)).unwrap_err().is_engine());
}

#[test]
fn parallel_runs_keep_order() {
    let (engine, tok) = setup();
    let model = ScriptedModel::new(tok, fixtures::slumdog_script()).unwrap();
    let qs: Vec<String> = (0..6).map(|i| format!("{SLUMDOG_QUESTION} ({i})")).collect();
    let serial = par_map(&qs, 1, |q| run_question(q, &model, &engine, &cfg(2, 300)).unwrap());
    let parallel = par_map(&qs, 3, |q| run_question(q, &model, &engine, &cfg(2, 300)).unwrap());
    assert_eq!(serial, parallel);
    assert!(serial.iter().all(|t| parse_answer(t) == ParsedAnswer::Answer("1956-10-20".into())));
}
