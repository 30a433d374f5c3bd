//! `factrie`: build, inspect, and decode against fact indexes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use serde::Serialize;
use sha2::{Digest, Sha256};

use factrie_core::bench::{fact_loop_script, run_bench, BenchReport};
use factrie_core::engine::{create_session, Engine, EngineConfig, DEFAULT_TRIGGER};
use factrie_core::metrics::{aggregate, MatchOptions};
use factrie_core::qa::{
    load_few_shot, par_map, parse_answer, read_jsonl, run_question, PromptConfig, QuestionRecord,
    Script, ScriptedModel, Transcript, DEFAULT_BEAMS, DEFAULT_MAX_NEW_TOKENS,
};
use factrie_core::store::{
    build_index, compact_index, IndexConfig, IndexReader, IndexStats, DEFAULT_BATCH_SIZE,
    DEFAULT_CUTOFF_DEPTH,
};
use factrie_core::synth::{SynthConfig, SynthKb};
use factrie_core::verbalize::{verbalize_lines, IdScheme, LabelTable};
use factrie_core::{next_tokens, ConsumedOverlay, Error, FactTree, TokenId, Tokenizer};

#[derive(Parser)]
#[command(name = "factrie", version, about = "Knowledge-base constrained decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Serialize)]
struct IndexArgs {
    /// Index file.
    #[arg(long)]
    index: PathBuf,
    /// Tokenizer vocabulary; defaults to `<index>.vocab.json`.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

impl IndexArgs {
    fn vocab_path(&self) -> PathBuf {
        self.vocab.clone().unwrap_or_else(|| sidecar(&self.index, "vocab.json"))
    }

    fn tokenizer(&self) -> Result<Tokenizer> {
        Ok(Tokenizer::load(&self.vocab_path())?)
    }

    fn open(&self) -> Result<(IndexReader, Tokenizer)> {
        let reader = IndexReader::open(&self.index)?;
        Ok((reader, self.tokenizer()?))
    }
}

#[derive(Args, Clone, Serialize)]
struct PromptArgs {
    #[arg(long, default_value_t = DEFAULT_BEAMS)]
    beams: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_NEW_TOKENS)]
    max_new_tokens: usize,
    #[arg(long, default_value = DEFAULT_TRIGGER)]
    trigger: String,
    /// JSON list of `{question, response}` examples replacing the defaults.
    #[arg(long)]
    few_shot: Option<PathBuf>,
    /// File replacing the default system prompt.
    #[arg(long)]
    system_prompt: Option<PathBuf>,
    /// Append the instruction to look up each relation separately.
    #[arg(long)]
    relation_addendum: bool,
}

impl PromptArgs {
    fn config(&self) -> Result<PromptConfig> {
        let mut cfg = PromptConfig {
            beams: self.beams,
            max_new_tokens: self.max_new_tokens,
            trigger: self.trigger.clone(),
            relation_addendum: self.relation_addendum,
            ..Default::default()
        };
        if let Some(p) = &self.few_shot {
            cfg.few_shot = load_few_shot(p)?;
        }
        if let Some(p) = &self.system_prompt {
            cfg.system_prompt = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?
                .trim_end()
                .to_string();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            trigger: self.trigger.clone(),
            ..Default::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Verbalize triples and build an index.
    Ingest {
        /// Triple lines: `subject<TAB>predicate<TAB>object`, where the object
        /// is `E:<id>` or `L:<string|number|date>:<lang>:<text>`.
        #[arg(long)]
        triples: PathBuf,
        /// Label rows: `id<TAB>title<TAB>label<TAB>description`.
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        index: IndexArgs,
        #[arg(long, default_value_t = DEFAULT_CUTOFF_DEPTH)]
        cutoff_depth: usize,
        #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
        batch_size: usize,
        /// Store single-leaf chains as per-node records.
        #[arg(long)]
        no_compaction: bool,
        /// Pieces to learn when no vocabulary exists yet.
        #[arg(long, default_value_t = 4000)]
        max_pieces: usize,
    },
    /// List the tokens allowed after a fact prefix.
    Query {
        #[command(flatten)]
        index: IndexArgs,
        /// Fact text prefix, e.g. "<Danny Boyle> <". Empty for the root.
        #[arg(default_value = "")]
        prefix: String,
        /// Comma-separated token ids instead of text.
        #[arg(long, conflicts_with = "prefix")]
        tokens: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Answer one question with a scripted model.
    Decode {
        #[command(flatten)]
        index: IndexArgs,
        /// Script JSON file.
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        question: String,
        #[command(flatten)]
        prompt: PromptArgs,
        /// Write the transcript here (a manifest is written next to it).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer a dataset and score the answers.
    Eval {
        #[command(flatten)]
        index: IndexArgs,
        /// JSONL questions with gold answers.
        #[arg(long)]
        dataset: PathBuf,
        /// JSONL scripts, matched to questions by `id`.
        #[arg(long)]
        scripts: PathBuf,
        #[command(flatten)]
        prompt: PromptArgs,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        strict_enum_match: bool,
        #[arg(long, default_value = ",")]
        delimiter: String,
        /// Directory for transcripts, report, and manifest.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Per-token generation time with and without constraints.
    Bench {
        #[command(flatten)]
        index: IndexArgs,
        #[arg(long, default_value_t = 4000)]
        tokens: usize,
        /// Artificial forward-pass latency of the scripted model.
        #[arg(long, default_value_t = 75)]
        delay_ms: u64,
        /// Script to use instead of one that keeps requesting facts.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Load every fact into memory instead of reading from disk.
        #[arg(long)]
        in_memory: bool,
        #[arg(long, default_value = DEFAULT_TRIGGER)]
        trigger: String,
        /// Print every n-th row of the timing table.
        #[arg(long, default_value_t = 100)]
        every: usize,
        /// Full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record counts, blob sizes, and duplicate prefixes.
    Stats {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Rewrite an index as a single batch.
    Compact {
        #[command(flatten)]
        index: IndexArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export masking fixtures: prefix, input logits, expected output.
    Golden {
        #[command(flatten)]
        index: IndexArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = DEFAULT_TRIGGER)]
        trigger: String,
    },
    /// Write a seeded synthetic KB as triple and label files.
    Synth {
        #[arg(long)]
        facts: usize,
        #[arg(long)]
        entities: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

#[derive(Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

/// What produced an output: command, configuration, input digests, timing.
#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: serde_json::Value,
    inputs: Vec<InputHash>,
    outputs: Vec<String>,
    started_unix: u64,
    elapsed_ms: f64,
}

impl RunManifest {
    fn new(command: &'static str, config: impl Serialize, inputs: &[&Path], start: Instant) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputHash {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?;
        let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        Ok(Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: serde_json::to_value(config)?,
            inputs,
            outputs: Vec::new(),
            started_unix: now.as_secs().saturating_sub(start.elapsed().as_secs()),
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    fn write(mut self, path: &Path, outputs: &[&Path]) -> Result<()> {
        self.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
        write_json(path, &self)
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn open_lines(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

#[allow(clippy::too_many_arguments)]
fn ingest(
    triples: &Path,
    labels: &Path,
    index: &IndexArgs,
    cutoff_depth: usize,
    batch_size: usize,
    no_compaction: bool,
    max_pieces: usize,
) -> Result<()> {
    let start = Instant::now();
    let table = LabelTable::read_tsv(open_lines(labels)?, IdScheme::default())
        .with_context(|| format!("reading labels {}", labels.display()))?;
    for (display, a, b) in table.collisions() {
        log::warn!("{a} and {b} share the display label {display:?}");
    }
    let mut facts = Vec::new();
    let vstats = verbalize_lines(open_lines(triples)?, &table, |f| facts.push(f.into_text()))
        .with_context(|| format!("reading triples {}", triples.display()))?;
    if facts.is_empty() {
        bail!(Error::InvalidConfig("no facts after filtering".into()));
    }
    let vocab_path = index.vocab_path();
    let tok = if vocab_path.exists() {
        Tokenizer::load(&vocab_path)?
    } else {
        let t = Tokenizer::train(facts.iter().map(String::as_str), max_pieces, 3);
        t.save(&vocab_path)?;
        log::info!("learned {} pieces into {}", t.vocab_size(), vocab_path.display());
        t
    };
    let cfg = IndexConfig::new(tok.fingerprint().clone())
        .with_cutoff(cutoff_depth)
        .with_batch_size(batch_size)
        .with_compaction(!no_compaction);
    let ingest = build_index(&index.index, cfg.clone(), facts.iter().map(|f| tok.encode_fact(f)))?;
    let reader = IndexReader::open(&index.index)?;
    println!(
        "lines {}  filtered {}  unresolvable {}  facts {}  unique {}  runs {}",
        vstats.lines,
        vstats.filtered_out,
        vstats.unresolvable,
        vstats.facts,
        ingest.unique_facts,
        ingest.sorted_runs
    );
    print!("{}", IndexStats::collect(&reader)?);
    #[derive(Serialize)]
    struct Config<'a> {
        cutoff_depth: usize,
        batch_size: usize,
        compaction: bool,
        max_pieces: usize,
        tokenizer_fingerprint: &'a str,
    }
    let manifest = RunManifest::new(
        "ingest",
        Config {
            cutoff_depth,
            batch_size,
            compaction: !no_compaction,
            max_pieces,
            tokenizer_fingerprint: &tok.fingerprint().0,
        },
        &[triples, labels, &vocab_path],
        start,
    )?;
    manifest.write(&sidecar(&index.index, "manifest.json"), &[&index.index])
}

fn parse_token_list(s: &str) -> Result<Vec<TokenId>> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse::<TokenId>().with_context(|| format!("bad token id {x:?}")))
        .collect()
}

fn query(index: &IndexArgs, prefix: &str, tokens: Option<&str>, json: bool) -> Result<()> {
    let (reader, tok) = index.open()?;
    let prefix = match tokens {
        Some(t) => parse_token_list(t)?,
        None if prefix.is_empty() => Vec::new(),
        None => tok.encode_fact(prefix),
    };
    let next = match next_tokens(&reader, &prefix, &ConsumedOverlay::default()) {
        Ok(n) => n,
        Err(Error::UnknownPrefix { matched, len }) => {
            let valid = tok.decode(&prefix[..matched]);
            return Err(anyhow::Error::new(Error::UnknownPrefix { matched, len })
                .context(format!("longest valid prefix: {valid:?} ({matched} tokens)")));
        }
        Err(e) => return Err(e.into()),
    };
    let mut rows: Vec<(TokenId, u64)> = next.into_iter().collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    if json {
        #[derive(Serialize)]
        struct Row {
            token: TokenId,
            piece: String,
            leaves: u64,
        }
        let rows: Vec<Row> = rows
            .iter()
            .map(|&(t, n)| Row {
                token: t,
                piece: String::from_utf8_lossy(tok.piece(t)).into_owned(),
                leaves: n,
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&rows)?);
        return Ok(());
    }
    println!("{:>8}  {:<24}  {:>10}", "token", "piece", "leaves");
    for (t, n) in rows {
        let piece = format!("{:?}", String::from_utf8_lossy(tok.piece(t)));
        println!("{t:>8}  {piece:<24}  {n:>10}");
    }
    Ok(())
}

fn engine(index: &IndexArgs, cfg: EngineConfig) -> Result<Arc<Engine<IndexReader>>> {
    let (reader, tok) = index.open()?;
    Ok(Arc::new(Engine::new(reader, tok, cfg)?))
}

fn decode(index: &IndexArgs, script: &Path, question: &str, prompt: &PromptArgs, out: Option<&Path>) -> Result<()> {
    let start = Instant::now();
    let cfg = prompt.config()?;
    let engine = engine(index, prompt.engine_config())?;
    let model = ScriptedModel::new(Arc::new(engine.tokenizer().clone()), Script::load(script)?)?;
    let t = run_question(question, &model, &engine, &cfg)?;
    let answer = parse_answer(&t);
    println!("{}", t.generated);
    println!("---");
    println!("terminal: {:?}  tokens: {}  facts: {}", t.terminal, t.new_tokens, t.fact_events.len());
    println!("answer: {}", serde_json::to_string(&answer)?);
    if let Some(out) = out {
        #[derive(Serialize)]
        struct Output<'a> {
            manifest: String,
            transcript: &'a Transcript,
            answer: &'a factrie_core::qa::ParsedAnswer,
        }
        let manifest_path = sidecar(out, "manifest.json");
        write_json(
            out,
            &Output {
                manifest: manifest_path.display().to_string(),
                transcript: &t,
                answer: &answer,
            },
        )?;
        RunManifest::new("decode", (prompt, question), &[&index.index, &index.vocab_path(), script], start)?
            .write(&manifest_path, &[out])?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    index: &IndexArgs,
    dataset: &Path,
    scripts: &Path,
    prompt: &PromptArgs,
    jobs: usize,
    strict: bool,
    delimiter: &str,
    out_dir: Option<&Path>,
) -> Result<()> {
    let start = Instant::now();
    let cfg = prompt.config()?;
    let questions: Vec<QuestionRecord> = read_jsonl(open_lines(dataset)?, "dataset")?;
    let all_scripts = Script::load_many(scripts)?;
    let engine = engine(index, prompt.engine_config())?;
    let tok = Arc::new(engine.tokenizer().clone());
    let mut models = Vec::with_capacity(questions.len());
    for q in &questions {
        let s = all_scripts
            .iter()
            .find(|s| s.id.as_deref() == Some(q.id.as_str()))
            .ok_or_else(|| Error::InvalidConfig(format!("no script for question {}", q.id)))?;
        models.push((q, ScriptedModel::new(tok.clone(), s.clone())?));
    }
    let transcripts = par_map(&models, jobs, |(q, m)| {
        run_question(&q.question, m, &engine, &cfg).map(|mut t| {
            t.id = Some(q.id.clone());
            t
        })
    })
    .into_iter()
    .collect::<factrie_core::Result<Vec<_>>>()?;
    let answers: Vec<_> = transcripts.iter().map(parse_answer).collect();
    let opts = MatchOptions {
        delimiter: delimiter.to_string(),
        strict_enumeration: strict,
    };
    let result = aggregate(
        questions.iter().map(|q| q.id.as_str()).zip(&answers),
        &questions,
        &opts,
    )?;
    print!("{result}");
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let tpath = dir.join("transcripts.jsonl");
        let mut w = BufWriter::new(File::create(&tpath)?);
        for (t, a) in transcripts.iter().zip(&answers) {
            serde_json::to_writer(&mut w, &serde_json::json!({"transcript": t, "answer": a}))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let rpath = dir.join("report.json");
        write_json(&rpath, &serde_json::json!({"manifest": "manifest.json", "result": result}))?;
        #[derive(Serialize)]
        struct Config<'a> {
            prompt: &'a PromptArgs,
            jobs: usize,
            match_options: &'a MatchOptions,
        }
        RunManifest::new(
            "eval",
            Config {
                prompt,
                jobs,
                match_options: &opts,
            },
            &[&index.index, &index.vocab_path(), dataset, scripts],
            start,
        )?
        .write(&dir.join("manifest.json"), &[&tpath, &rpath])?;
    }
    Ok(())
}

fn first_facts(reader: &IndexReader, tok: &Tokenizer, n: usize) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let r = reader.for_each_fact(|f| {
        out.push(tok.decode(f).trim_start().to_string());
        if out.len() >= n {
            Err(Error::NotFound)
        } else {
            Ok(())
        }
    });
    match r {
        Ok(()) | Err(Error::NotFound) => Ok(out),
        Err(e) => Err(e.into()),
    }
}

fn print_bench(r: &BenchReport, every: usize) {
    println!("{:>6}  {:>12}  {:>12}  {:>12}  {:>12}", "token", "plain ms", "plain avg", "fact ms", "fact avg");
    let every = every.max(1);
    for i in (0..r.tokens).filter(|i| i % every == every - 1 || *i + 1 == r.tokens) {
        println!(
            "{:>6}  {:>12.3}  {:>12.3}  {:>12.3}  {:>12.3}",
            i + 1,
            r.unconstrained.per_token_ms[i],
            r.unconstrained.moving_average_ms[i],
            r.constrained.per_token_ms[i],
            r.constrained.moving_average_ms[i]
        );
    }
    println!(
        "total: unconstrained {:.1} ms, constrained {:.1} ms, overhead {:+.2}%",
        r.unconstrained.total_ms,
        r.constrained.total_ms,
        r.overhead * 100.0
    );
    let e = &r.engine_us;
    println!(
        "engine per token (us): p50 {} p90 {} p99 {} max {}; facts emitted {}",
        e.p50, e.p90, e.p99, e.max, r.facts_emitted
    );
}

#[allow(clippy::too_many_arguments)]
fn bench(
    index: &IndexArgs,
    tokens: usize,
    delay_ms: u64,
    script: Option<&Path>,
    in_memory: bool,
    trigger: &str,
    every: usize,
    out: Option<&Path>,
) -> Result<()> {
    let (reader, tok) = index.open()?;
    let script = match script {
        Some(p) => Script::load(p)?,
        None => fact_loop_script(&first_facts(&reader, &tok, 9)?),
    };
    let model = ScriptedModel::new(Arc::new(tok.clone()), script)?
        .with_delay(std::time::Duration::from_millis(delay_ms));
    let cfg = EngineConfig {
        trigger: trigger.to_string(),
        ..Default::default()
    };
    let prompt = "Collect facts.\n";
    let report = if in_memory {
        let mut tree = FactTree::new(tok.fingerprint().clone());
        reader.for_each_fact(|f| tree.insert(f).map(|_| ()))?;
        run_bench(&Arc::new(Engine::new(tree, tok, cfg)?), &model, prompt, tokens)?
    } else {
        // Warm the page cache.
        reader.for_each_record(|_| Ok(()))?;
        run_bench(&Arc::new(Engine::new(reader, tok, cfg)?), &model, prompt, tokens)?
    };
    print_bench(&report, every);
    if let Some(out) = out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn golden(index: &IndexArgs, out: &Path, count: usize, seed: u64, trigger: &str) -> Result<()> {
    let start = Instant::now();
    let engine = engine(
        index,
        EngineConfig {
            trigger: trigger.to_string(),
            ..Default::default()
        },
    )?;
    let tok = engine.tokenizer();
    let vocab = tok.vocab_size();
    let mut facts = Vec::new();
    engine.source().for_each_fact(|f| {
        facts.push(f.to_vec());
        Ok(())
    })?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let trigger_tokens = tok.encode(trigger);
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);

    /// One masking case; negative infinity is written as `null`.
    #[derive(Serialize)]
    struct Fixture<'a> {
        fingerprint: &'a str,
        vocab_size: usize,
        generated: Vec<TokenId>,
        prefix: &'a [TokenId],
        logits: Vec<f32>,
        expected: Vec<Option<f32>>,
        allowed: Vec<(TokenId, u64)>,
    }
    for i in 0..count {
        let f = &facts[rng.gen_range(0..facts.len())];
        let k = rng.gen_range(0..f.len());
        // Every fourth case stays in normal mode, where masking is the identity.
        let normal = i % 4 == 3;
        let mut session = create_session(&engine);
        let mut generated = Vec::new();
        if !normal {
            generated.extend(&trigger_tokens);
            generated.extend(&f[..k]);
        } else {
            generated.extend(tok.encode("Thinking."));
        }
        for &t in &generated {
            session.step(t)?;
        }
        let logits: Vec<f32> = (0..vocab).map(|_| rng.gen_range(-10.0f32..10.0)).collect();
        let masked = session.mask_logits(&logits)?;
        let fx = Fixture {
            fingerprint: &tok.fingerprint().0,
            vocab_size: vocab,
            prefix: if normal { &[] } else { &f[..k] },
            generated,
            expected: masked.iter().map(|&x| x.is_finite().then_some(x)).collect(),
            allowed: session.allowed_tokens().unwrap_or_default(),
            logits,
        };
        serde_json::to_writer(&mut w, &fx)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    RunManifest::new("golden", (count, seed, trigger), &[&index.index, &index.vocab_path()], start)?
        .write(&sidecar(out, "manifest.json"), &[out])?;
    println!("wrote {count} fixtures to {}", out.display());
    Ok(())
}

fn synth(facts: usize, entities: Option<usize>, seed: u64, out_dir: &Path) -> Result<()> {
    let mut cfg = SynthConfig::with_facts(facts, seed);
    if let Some(e) = entities {
        cfg.entities = e;
    }
    let kb = SynthKb::generate(&cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let mut t = BufWriter::new(File::create(out_dir.join("triples.tsv"))?);
    kb.write_triples(&mut t)?;
    t.flush()?;
    let mut l = BufWriter::new(File::create(out_dir.join("labels.tsv"))?);
    kb.write_labels(&mut l)?;
    l.flush()?;
    println!("{} triples, {} label rows in {}", kb.triples.len(), kb.labels.len(), out_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            triples,
            labels,
            index,
            cutoff_depth,
            batch_size,
            no_compaction,
            max_pieces,
        } => ingest(&triples, &labels, &index, cutoff_depth, batch_size, no_compaction, max_pieces),
        Command::Query {
            index,
            prefix,
            tokens,
            json,
        } => query(&index, &prefix, tokens.as_deref(), json),
        Command::Decode {
            index,
            script,
            question,
            prompt,
            out,
        } => decode(&index, &script, &question, &prompt, out.as_deref()),
        Command::Eval {
            index,
            dataset,
            scripts,
            prompt,
            jobs,
            strict_enum_match,
            delimiter,
            out_dir,
        } => eval(
            &index,
            &dataset,
            &scripts,
            &prompt,
            jobs,
            strict_enum_match,
            &delimiter,
            out_dir.as_deref(),
        ),
        Command::Bench {
            index,
            tokens,
            delay_ms,
            script,
            in_memory,
            trigger,
            every,
            out,
        } => bench(&index, tokens, delay_ms, script.as_deref(), in_memory, &trigger, every, out.as_deref()),
        Command::Stats { index, json } => {
            let stats = IndexStats::collect(&IndexReader::open(&index)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                print!("{stats}");
            }
            Ok(())
        }
        Command::Compact { index, out } => {
            let (reader, _) = index.open()?;
            let s = compact_index(&reader, &out)?;
            let vocab = sidecar(&out, "vocab.json");
            if vocab != index.vocab_path() {
                std::fs::copy(index.vocab_path(), &vocab)?;
            }
            println!(
                "{} facts, {} -> {} records, {} bytes",
                s.unique_facts,
                reader.record_count(),
                s.summary.records,
                s.summary.bytes
            );
            Ok(())
        }
        Command::Golden {
            index,
            out,
            count,
            seed,
            trigger,
        } => golden(&index, &out, count, seed, &trigger),
        Command::Synth {
            facts,
            entities,
            seed,
            out_dir,
        } => synth(facts, entities, seed, &out_dir),
    }
}

/// 2 for bad input, 3 for a damaged index, 4 for engine errors.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(err) if err.is_corruption() => 3,
        Some(err) if err.is_engine() => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
