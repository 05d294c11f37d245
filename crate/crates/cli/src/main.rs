mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};
use vgx_core::code::ingest::{read_units, write_rejections, Rejection};
use vgx_core::code::{linearize, preprocess, SourceUnit};
use vgx_core::corpus::{read_pairs, TrainingPair};
use vgx_core::flow::build_vfg;
use vgx_core::model::{
    build_datasets, default_schedule, load_checkpoint, rule_based_locate, save_checkpoint, train,
    Model, ModelError,
};
use vgx_core::pattern::score::read_judgments;
use vgx_core::pattern::{build_store, find_matches, sha256_hex, shipped_patterns, PatternStore};
use vgx_core::pipeline::{generate_corpus, Contextualizer, PipelineConfig, PipelineError};

use config::{ContextChoice, RunConfig};

const UNREADABLE_CORPUS: u8 = 2;
const NO_PAIRS: u8 = 3;
const DIVERGED: u8 = 4;
const MISSING_INPUT: u8 = 5;

#[derive(Parser, Debug)]
#[command(
    name = "vgx",
    version,
    about = "Generate labeled vulnerable C functions from normal ones",
    args_override_self = true
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Process at most N input records
    #[arg(long, global = true)]
    limit: Option<usize>,
    #[arg(long, global = true, value_enum)]
    contextualizer: Option<ContextChoice>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Function corpus (JSONL)
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Labeled normal/vulnerable pairs (JSONL)
    #[arg(long, global = true)]
    pairs: Option<PathBuf>,
    /// Pattern judgments (JSONL)
    #[arg(long, global = true)]
    judgments: Option<PathBuf>,
    /// Pattern store (JSON)
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Model checkpoint
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse the corpus and cache ASTs, value-flow graphs and model inputs
    Preprocess,
    /// Mine, rank and mutate edit patterns into a store
    Mine,
    /// Pre-train and fine-tune the context model
    Train,
    /// Produce the vulnerable dataset
    Generate,
    /// Dump the AST, value-flow graph and matching patterns of one function
    Inspect {
        /// File holding a single C function
        #[arg(long, conflicts_with = "index")]
        function: Option<PathBuf>,
        /// Record index in --corpus
        #[arg(long)]
        index: Option<usize>,
        /// Include the value-flow graph in DOT form
        #[arg(long)]
        dot: bool,
    },
}

struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: 1,
            err: e.into(),
        }
    }
}

fn fail(code: u8, err: anyhow::Error) -> Failure {
    Failure { code, err }
}

type Outcome = Result<Value, Failure>;

fn merge(mut cfg: RunConfig, c: Common) -> RunConfig {
    cfg.seed = c.seed.or(cfg.seed);
    cfg.workers = c.workers.unwrap_or(cfg.workers);
    cfg.limit = c.limit.or(cfg.limit);
    if let Some(x) = c.contextualizer {
        cfg.generate.contextualizer = x;
    }
    let p = &mut cfg.paths;
    for (slot, flag) in [
        (&mut p.out, c.out),
        (&mut p.corpus, c.corpus),
        (&mut p.pairs, c.pairs),
        (&mut p.judgments, c.judgments),
        (&mut p.store, c.store),
        (&mut p.checkpoint, c.checkpoint),
    ] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    cfg
}

fn file_sha(path: &Path) -> anyhow::Result<String> {
    Ok(sha256_hex(
        &fs::read(path).with_context(|| format!("reading {}", path.display()))?,
    ))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Units of the configured corpus, capped by `limit`, plus malformed records.
fn read_corpus(cfg: &RunConfig) -> Result<(Vec<(usize, SourceUnit)>, Vec<Rejection>), Failure> {
    let path = cfg
        .paths
        .corpus
        .as_ref()
        .ok_or_else(|| fail(UNREADABLE_CORPUS, anyhow!("no corpus given (--corpus)")))?;
    let unreadable =
        |e: std::io::Error| fail(UNREADABLE_CORPUS, anyhow!("corpus {}: {e}", path.display()));
    let (mut units, mut rejected) =
        read_units(BufReader::new(File::open(path).map_err(unreadable)?)).map_err(unreadable)?;
    if let Some(n) = cfg.limit {
        units.retain(|(i, _)| *i < n);
        rejected.retain(|r| r.index < n);
    }
    Ok((units, rejected))
}

fn read_training_pairs(cfg: &RunConfig) -> Result<Vec<TrainingPair>, Failure> {
    let path = cfg
        .paths
        .pairs
        .as_ref()
        .ok_or_else(|| fail(NO_PAIRS, anyhow!("no training pairs given (--pairs)")))?;
    let file = File::open(path)
        .map_err(|e| fail(NO_PAIRS, anyhow!("training pairs {}: {e}", path.display())))?;
    let (pairs, rejected) = read_pairs(BufReader::new(file))?;
    for r in &rejected {
        log::warn!("pair record {}: {}", r.index, r.reason);
    }
    if pairs.is_empty() {
        return Err(fail(
            NO_PAIRS,
            anyhow!("{} holds no usable training pairs", path.display()),
        ));
    }
    Ok(pairs)
}

fn load_store(cfg: &RunConfig) -> Result<PatternStore, Failure> {
    let path = cfg
        .paths
        .store
        .as_ref()
        .ok_or_else(|| fail(MISSING_INPUT, anyhow!("no pattern store given (--store)")))?;
    let file = File::open(path).map_err(|e| {
        fail(
            MISSING_INPUT,
            anyhow!("pattern store {}: {e}", path.display()),
        )
    })?;
    Ok(PatternStore::read(BufReader::new(file))?)
}

fn cmd_preprocess(cfg: &RunConfig) -> Outcome {
    let (units, mut failures) = read_corpus(cfg)?;
    let malformed = failures.len();
    let dir = out_dir(cfg)?.join("cache");
    fs::create_dir_all(&dir)?;
    let results: Vec<Result<Value, Rejection>> = units
        .par_iter()
        .map(|(index, unit)| {
            let pre = preprocess(unit).map_err(|e| Rejection {
                index: *index,
                reason: format!("parse: {e}"),
            })?;
            let vfg = build_vfg(&pre.ast, &pre.input);
            Ok(json!({
                "index": index,
                "project": unit.project_id,
                "path": unit.path,
                "name": unit.function_name,
                "ast": pre.ast.root,
                "linearized": linearize(&pre.ast).tokens,
                "input": pre.input,
                "vfg": vfg,
            }))
        })
        .collect();
    let artifacts = dir.join("artifacts.jsonl");
    let mut w = create(&artifacts)?;
    let mut cached = 0;
    for r in results {
        match r {
            Ok(v) => {
                serde_json::to_writer(&mut w, &v)?;
                w.write_all(b"\n")?;
                cached += 1;
            }
            Err(rej) => failures.push(rej),
        }
    }
    w.flush()?;
    failures.sort_by_key(|r| r.index);
    let sidecar = dir.join("failures.jsonl");
    let mut fw = create(&sidecar)?;
    write_rejections(&mut fw, &failures)?;
    fw.flush()?;
    Ok(json!({
        "command": "preprocess",
        "records": units.len() + malformed,
        "cached": cached,
        "failed": failures.len(),
        "artifacts": artifacts,
        "failures": sidecar,
        "sha256": file_sha(&artifacts)?,
    }))
}

fn cmd_mine(cfg: &RunConfig) -> Outcome {
    let mut pairs = read_training_pairs(cfg)?;
    if let Some(n) = cfg.limit {
        pairs.truncate(n);
    }
    let judgments = match &cfg.paths.judgments {
        Some(p) => read_judgments(BufReader::new(
            File::open(p).with_context(|| format!("judgments {}", p.display()))?,
        ))?,
        None => Vec::new(),
    };
    let (patterns, report) = build_store(&pairs, &judgments, cfg.mine.top_k)?;
    let dir = out_dir(cfg)?;
    let store_path = dir.join("patterns.json");
    let mut w = create(&store_path)?;
    PatternStore::new(patterns).write(&mut w)?;
    w.flush()?;
    write_json(&dir.join("mine_report.json"), &report)?;
    Ok(json!({
        "command": "mine",
        "pairs": report.pairs,
        "usable": report.usable,
        "mined": report.mined,
        "kept_mined": report.kept_mined,
        "patterns": report.total,
        "uncovered": report.false_negatives.values().map(Vec::len).sum::<usize>(),
        "store": store_path,
        "sha256": file_sha(&store_path)?,
    }))
}

fn cmd_train(cfg: &RunConfig) -> Outcome {
    let seed = cfg.seed()?;
    let pairs = read_training_pairs(cfg)?;
    let corpus: Vec<SourceUnit> = if cfg.paths.corpus.is_some() {
        read_corpus(cfg)?.0.into_iter().map(|(_, u)| u).collect()
    } else {
        let mut units: Vec<SourceUnit> = pairs
            .iter()
            .map(|p| SourceUnit::new(p.normal.clone()))
            .collect();
        units.truncate(cfg.limit.unwrap_or(usize::MAX));
        units
    };
    let (vocab, data, data_report) = build_datasets(&corpus, &pairs, seed, cfg.train.augment)?;
    let mut mc = cfg.model.clone();
    mc.seed = seed;
    let mut model = Model::new(mc, vocab)?;
    let schedule = default_schedule(&model.config);
    let trace = match train(&mut model, &schedule, &data) {
        Ok(t) => t,
        Err(e @ (ModelError::Diverged { .. } | ModelError::NonFinite(_))) => {
            return Err(fail(DIVERGED, e.into()))
        }
        Err(e @ ModelError::EmptyDataset(_)) => return Err(fail(NO_PAIRS, e.into())),
        Err(e) => return Err(e.into()),
    };
    let dir = out_dir(cfg)?;
    let ckpt = dir.join("model.vgxm");
    save_checkpoint(&model, &ckpt)?;
    let csv = dir.join("loss.csv");
    fs::write(&csv, trace.to_csv())?;
    write_json(
        &dir.join("train_report.json"),
        &json!({ "config": cfg, "data": data_report }),
    )?;
    let stages: Vec<Value> = schedule
        .iter()
        .map(|s| {
            let l = trace.stage(&s.name);
            json!({ "stage": s.name, "steps": l.len(), "first_loss": l.first(), "last_loss": l.last() })
        })
        .collect();
    Ok(json!({
        "command": "train",
        "parameters": model.params.count(),
        "vocab": model.vocab.len(),
        "finetune_samples": data_report.finetune,
        "augmented": data_report.augmented,
        "stages": stages,
        "checkpoint": ckpt,
        "loss_csv": csv,
        "sha256": file_sha(&ckpt)?,
    }))
}

fn cmd_generate(cfg: &RunConfig) -> Outcome {
    let seed = cfg.seed()?;
    let store = load_store(cfg)?;
    let model = match cfg.generate.contextualizer {
        ContextChoice::Rule => None,
        ContextChoice::Model => {
            let path = cfg
                .paths
                .checkpoint
                .as_ref()
                .ok_or_else(|| fail(MISSING_INPUT, anyhow!("model mode needs --checkpoint")))?;
            if !path.exists() {
                return Err(fail(
                    MISSING_INPUT,
                    anyhow!("checkpoint {} does not exist", path.display()),
                ));
            }
            Some(load_checkpoint(path)?)
        }
    };
    let contextualizer = model
        .as_ref()
        .map_or(Contextualizer::RuleBased, Contextualizer::Model);
    let (units, rejected) = read_corpus(cfg)?;
    let units: Vec<SourceUnit> = units.into_iter().map(|(_, u)| u).collect();
    let dir = out_dir(cfg)?;
    let dataset = dir.join("dataset.jsonl");
    let pc = PipelineConfig {
        workers: cfg.workers,
        top_k: cfg.generate.top_k,
        chunk: cfg.generate.chunk,
    };
    let report = match generate_corpus(
        &units,
        contextualizer,
        &store.patterns,
        &pc,
        create(&dataset)?,
    ) {
        Ok(r) => r,
        Err(PipelineError::Io { written, source }) => {
            write_json(
                &dir.join("manifest.json"),
                &json!({ "partial": true, "dataset": dataset, "written": written }),
            )?;
            return Err(anyhow!(
                "writing {} failed after {written} records: {source}",
                dataset.display()
            )
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    write_json(
        &dir.join("report.json"),
        &json!({ "config": cfg, "seed": seed, "malformed": rejected.len(), "report": report }),
    )?;
    Ok(json!({
        "command": "generate",
        "contextualizer": contextualizer.kind(),
        "malformed": rejected.len(),
        "input": report.input,
        "parsed": report.parsed,
        "located": report.located,
        "matched": report.matched,
        "emitted": report.emitted,
        "discarded": report.discarded,
        "dataset": dataset,
        "sha256": file_sha(&dataset)?,
    }))
}

fn cmd_inspect(
    cfg: &RunConfig,
    function: Option<PathBuf>,
    index: Option<usize>,
    dot: bool,
) -> Outcome {
    let unit = match (function, index) {
        (Some(path), _) => SourceUnit::new(
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?,
        ),
        (None, Some(i)) => read_corpus(cfg)?
            .0
            .into_iter()
            .find(|(j, _)| *j == i)
            .map(|(_, u)| u)
            .ok_or_else(|| anyhow!("no usable record {i} in the corpus"))?,
        (None, None) => {
            return Err(anyhow!("pass --function FILE or --corpus with --index N").into())
        }
    };
    let patterns = match cfg.paths.store {
        Some(_) => load_store(cfg)?.patterns,
        None => shipped_patterns()?,
    };
    let pre = preprocess(&unit)?;
    let vfg = build_vfg(&pre.ast, &pre.input);
    let matches: Vec<Value> = patterns
        .iter()
        .flat_map(|p| {
            find_matches(&p.lhs, &pre.ast)
                .into_iter()
                .map(move |m| json!({ "pattern_id": p.id, "pattern": p.display(), "lines": [m.site_lines.0, m.site_lines.1] }))
        })
        .collect();
    let context = rule_based_locate(&unit, &patterns).ok();
    let mut out = json!({
        "command": "inspect",
        "function": pre.ast.function_name(),
        "tokens": pre.input.code_tokens,
        "linearized": linearize(&pre.ast).tokens,
        "ast": pre.ast.root,
        "vfg": vfg,
        "components": vfg.components(),
        "rule_context": context,
        "matches": matches,
    });
    if dot {
        out["dot"] = Value::String(vfg.to_dot());
    }
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VGX_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Exit 2 is reserved for an unreadable corpus.
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let run = || -> Outcome {
        let cfg = merge(RunConfig::load(cli.common.config.as_deref())?, cli.common);
        cfg.model.validate()?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()?;
        match cli.command {
            Command::Preprocess => cmd_preprocess(&cfg),
            Command::Mine => cmd_mine(&cfg),
            Command::Train => cmd_train(&cfg),
            Command::Generate => cmd_generate(&cfg),
            Command::Inspect {
                function,
                index,
                dot,
            } => cmd_inspect(&cfg, function, index, dot),
        }
    };
    match run() {
        Ok(summary) => {
            let mut stdout = std::io::stdout().lock();
            let written = serde_json::to_writer_pretty(&mut stdout, &summary)
                .map_err(std::io::Error::from)
                .and_then(|_| writeln!(stdout));
            match written {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: writing summary: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
