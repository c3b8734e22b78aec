//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 failed check.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analytics::StatsReport;
use crate::config::{read_kv, HyperParams};
use crate::corpus::{
    build_corpus, five_core_filter, generate_synthetic, load_interactions, InteractionCorpus,
    SynthSpec,
};
use crate::diffkernel::REL_ERR_FLOOR;
use crate::error::{Error, Result};
use crate::evaluator::{buckets_to_csv, evaluate, Axis, EvalOptions, EvalSplit, DEFAULT_EDGES};
use crate::model::Checkpoint;
use crate::relstore::{load_relations, RelationStore};
use crate::trainer::{fit, gradcheck_hyper, gradcheck_model, read_grid, sweep, sweep_table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

/// File names inside a prepared data directory.
pub const RELATIONS_FILE: &str = "relations.tsv";
pub const PREPARE_REPORT: &str = "prepare_report.kv";
pub const RUN_MANIFEST: &str = "run.kv";

#[derive(Parser, Debug)]
#[command(
    name = "mrsr",
    version,
    about = "Relation-aware sequential recommender"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a corpus directory from raw interactions and relations.
    Prepare(PrepareArgs),
    /// Transition and relation statistics of a corpus.
    Stats(StatsArgs),
    /// Train a model with early stopping.
    Train(TrainArgs),
    /// Evaluate a checkpoint with full-catalog ranking.
    Eval(EvalArgs),
    /// Train once per point of a hyperparameter grid.
    Sweep(SweepArgs),
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic corpus and relation store.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Tab-separated `user item timestamp` lines.
    #[arg(long)]
    interactions: PathBuf,
    /// Tab-separated `head relation tail` lines.
    #[arg(long)]
    relations: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    max_len: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    /// Count a related pair in either direction.
    #[arg(long)]
    symmetrize: bool,
    /// Largest distance counted by the total transition hit ratio.
    #[arg(long)]
    max_order: Option<usize>,
    /// Write stats.kv, stats.jsonl and run.kv here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct HyperArgs {
    /// key=value hyperparameter file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one hyperparameter (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "MRSR_THREADS")]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// valid or test
    #[arg(long, default_value = "test")]
    split: String,
    /// Exclude items already in the input sequence (except the target).
    #[arg(long)]
    filter_seen: bool,
    /// seq_length or item_popularity; prints a CSV of bucket rows.
    #[arg(long)]
    breakdown: Option<String>,
    /// Comma-separated, strictly increasing bucket edges.
    #[arg(long, value_delimiter = ',')]
    edges: Option<Vec<usize>>,
    #[arg(long, env = "MRSR_THREADS")]
    threads: Option<usize>,
    /// Write the report files and run.kv here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// `key=v1,v2,…` per line.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// key=value overrides of the tiny default model.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of sampled coordinates.
    #[arg(long, default_value_t = 200)]
    coords: usize,
    #[arg(long, default_value_t = 12)]
    items: usize,
    #[arg(long, default_value_t = 2)]
    relations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// key=value generator settings; defaults apply to missing keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Prepare(a) => prepare(a),
        Command::Stats(a) => stats(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Synth(a) => synth(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `run.kv`: command, version, arguments and (for model commands) the
/// resolved hyperparameters.
fn write_manifest(
    dir: &Path,
    command: &str,
    entries: &[(&str, String)],
    hyper: Option<&HyperParams>,
) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "command={command}");
    let _ = writeln!(s, "version={}", env!("CARGO_PKG_VERSION"));
    for (k, v) in entries {
        let _ = writeln!(s, "{k}={v}");
    }
    if let Some(h) = hyper {
        s.push_str(&h.to_kv());
    }
    write_file(&dir.join(RUN_MANIFEST), &s)
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

/// Loads a prepared directory; a missing relations file yields an empty
/// store.
pub fn load_data(dir: &Path) -> Result<(InteractionCorpus, RelationStore)> {
    let corpus = InteractionCorpus::load(dir)?;
    let rel = dir.join(RELATIONS_FILE);
    let store = if rel.exists() {
        load_relations(&rel, &corpus)?
    } else {
        RelationStore::new(corpus.num_items())
    };
    Ok((corpus, store))
}

/// Counts written to `prepare_report.kv`.
pub fn prepare_report(
    corpus: &InteractionCorpus,
    store: &RelationStore,
    raw_records: usize,
) -> String {
    let users = corpus.num_users() as f64;
    let items = corpus.num_items() as f64;
    let ratings = corpus.num_interactions() as f64;
    let mut s = String::new();
    let _ = writeln!(s, "raw_records={raw_records}");
    let _ = writeln!(s, "users={}", corpus.num_users());
    let _ = writeln!(s, "items={}", corpus.num_items());
    let _ = writeln!(s, "ratings={}", corpus.num_interactions());
    let _ = writeln!(s, "density={:.6}", ratings / (users * items));
    let _ = writeln!(s, "avg_ratings_per_user={:.6}", ratings / users);
    let _ = writeln!(s, "avg_ratings_per_item={:.6}", ratings / items);
    let _ = writeln!(s, "relations={}", store.num_relations());
    let _ = writeln!(s, "related_pairs={}", store.num_pairs());
    let _ = writeln!(
        s,
        "avg_pairs_per_item={:.6}",
        store.num_pairs() as f64 / items
    );
    let _ = writeln!(s, "dropped_unknown_items={}", store.dropped_unknown());
    let _ = writeln!(s, "dropped_self_loops={}", store.dropped_self_loops());
    let _ = writeln!(s, "duplicate_pairs={}", store.duplicates());
    s
}

fn prepare(a: PrepareArgs) -> Result<i32> {
    let records = load_interactions(&a.interactions)?;
    let kept = five_core_filter(&records);
    let corpus = build_corpus(&kept, a.max_len)?;
    let store = match &a.relations {
        Some(p) if p.exists() => load_relations(p, &corpus)?,
        Some(p) => {
            eprintln!(
                "warning: relations file {} not found; using an empty relation store",
                p.display()
            );
            RelationStore::new(corpus.num_items())
        }
        None => {
            eprintln!("warning: no relations file given; using an empty relation store");
            RelationStore::new(corpus.num_items())
        }
    };
    create_dir(&a.out)?;
    corpus.save(&a.out)?;
    store.save(&a.out.join(RELATIONS_FILE), &corpus)?;
    let report = prepare_report(&corpus, &store, records.len());
    write_file(&a.out.join(PREPARE_REPORT), &report)?;
    write_manifest(
        &a.out,
        "prepare",
        &[
            ("interactions", show(&a.interactions)),
            (
                "relations",
                a.relations.as_deref().map_or("none".into(), show),
            ),
            ("max_len", a.max_len.to_string()),
            ("out", show(&a.out)),
        ],
        None,
    )?;
    print!("{report}");
    Ok(EXIT_OK)
}

fn stats(a: StatsArgs) -> Result<i32> {
    let (corpus, store) = load_data(&a.data)?;
    let report = StatsReport::compute(&corpus, &store, a.symmetrize, a.max_order);
    match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            write_file(&dir.join("stats.kv"), &report.to_kv())?;
            write_file(&dir.join("stats.jsonl"), &report.to_jsonl())?;
            write_manifest(
                dir,
                "stats",
                &[
                    ("data", show(&a.data)),
                    ("symmetrize", a.symmetrize.to_string()),
                    (
                        "max_order",
                        a.max_order.map_or("none".into(), |m| m.to_string()),
                    ),
                ],
                None,
            )?;
        }
        None => print!("{}", report.to_kv()),
    }
    Ok(EXIT_OK)
}

/// Defaults, then the corpus length, the config file, `--set` overrides,
/// `--seed` and `--threads`, in that order. All violations are listed.
fn resolve_hyper(args: &HyperArgs, corpus: &InteractionCorpus) -> Result<HyperParams> {
    let mut h = HyperParams {
        max_len: corpus.max_len(),
        ..HyperParams::default()
    };
    let mut problems = Vec::new();
    if let Some(path) = &args.config {
        for (k, v) in read_kv(path)? {
            match h.set(&k, &v) {
                Ok(true) => {}
                Ok(false) => problems.push(format!("{}: unknown key {k:?}", path.display())),
                Err(e) => problems.push(e.to_string()),
            }
        }
    }
    for o in &args.overrides {
        match o.split_once('=') {
            Some((k, v)) => match h.set(k.trim(), v.trim()) {
                Ok(true) => {}
                Ok(false) => problems.push(format!("--set: unknown key {k:?}")),
                Err(e) => problems.push(e.to_string()),
            },
            None => problems.push(format!("--set {o:?}: expected KEY=VALUE")),
        }
    }
    if let Some(s) = args.seed {
        h.seed = s;
    }
    if let Some(t) = args.threads {
        h.threads = t;
    }
    problems.extend(h.problems());
    if h.max_len != corpus.max_len() {
        problems.push(format!(
            "max_len {} differs from the corpus length {}",
            h.max_len,
            corpus.max_len()
        ));
    }
    if problems.is_empty() {
        Ok(h)
    } else {
        Err(Error::Config(format!(
            "invalid configuration:\n  {}",
            problems.join("\n  ")
        )))
    }
}

/// Timings of each epoch in seconds, kept out of the reproducible log.
pub const TIMINGS_FILE: &str = "timings.tsv";

fn train(a: TrainArgs) -> Result<i32> {
    let (corpus, store) = load_data(&a.data)?;
    let hyper = resolve_hyper(&a.hyper, &corpus)?;
    create_dir(&a.out)?;
    write_manifest(
        &a.out,
        "train",
        &[("data", show(&a.data)), ("out", show(&a.out))],
        Some(&hyper),
    )?;
    let outcome = fit(&corpus, &store, &hyper)?;
    outcome.best.save(&a.out.join("checkpoint.bin"))?;
    write_file(&a.out.join("train_log.jsonl"), &outcome.log.to_jsonl())?;
    let mut timings = String::from("epoch\tseconds\n");
    for (k, s) in outcome.epoch_seconds.iter().enumerate() {
        let _ = writeln!(timings, "{}\t{s:.3}", k + 1);
    }
    write_file(&a.out.join(TIMINGS_FILE), &timings)?;
    let opts = EvalOptions {
        threads: hyper.threads,
        ..EvalOptions::new(EvalSplit::Test)
    };
    let test = evaluate(&outcome.best.params, &hyper, &corpus, &opts)?;
    write_file(&a.out.join("test_report.kv"), &test.to_kv())?;
    write_file(&a.out.join("test_report.json"), &test.to_json())?;
    println!(
        "best_epoch={}",
        outcome
            .log
            .best_epoch
            .map_or("none".into(), |e| e.to_string())
    );
    println!("valid_mrr={:.6}", outcome.best_valid_mrr);
    println!("test_mrr={:.6}", test.metrics.mrr);
    println!("test_ndcg@10={:.6}", test.metrics.ndcg_10);
    println!("test_recall@10={:.6}", test.metrics.recall_10);
    Ok(EXIT_OK)
}

fn eval(a: EvalArgs) -> Result<i32> {
    let split: EvalSplit = a.split.parse()?;
    let axis: Option<Axis> = a.breakdown.as_deref().map(str::parse).transpose()?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (corpus, store) = load_data(&a.data)?;
    let dims = ck.params.dims();
    if dims.num_items != corpus.num_items() || dims.max_len != corpus.max_len() {
        return Err(Error::Data(format!(
            "checkpoint expects {} items and length {}, corpus has {} and {}",
            dims.num_items,
            dims.max_len,
            corpus.num_items(),
            corpus.max_len()
        )));
    }
    if ck.relation_names != store.relation_names() {
        return Err(Error::Data(
            "checkpoint relations differ from the data directory".into(),
        ));
    }
    let opts = EvalOptions {
        split,
        filter_seen: a.filter_seen,
        edges: a.edges.clone().unwrap_or_else(|| DEFAULT_EDGES.to_vec()),
        threads: a.threads.unwrap_or(ck.hyper.threads).max(1),
    };
    let report = evaluate(&ck.params, &ck.hyper, &corpus, &opts)?;
    let csv = axis.map(|ax| buckets_to_csv(report.buckets(ax)));
    match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            write_file(&dir.join(format!("eval_{}.kv", a.split)), &report.to_kv())?;
            write_file(
                &dir.join(format!("eval_{}.json", a.split)),
                &report.to_json(),
            )?;
            if let (Some(ax), Some(csv)) = (axis, &csv) {
                write_file(&dir.join(format!("breakdown_{ax}.csv")), csv)?;
            }
            write_manifest(
                dir,
                "eval",
                &[
                    ("checkpoint", show(&a.checkpoint)),
                    ("data", show(&a.data)),
                    ("split", a.split.clone()),
                    ("filter_seen", a.filter_seen.to_string()),
                    (
                        "breakdown",
                        a.breakdown.clone().unwrap_or_else(|| "none".into()),
                    ),
                    (
                        "edges",
                        opts.edges
                            .iter()
                            .map(|e| e.to_string())
                            .collect::<Vec<_>>()
                            .join(","),
                    ),
                ],
                Some(&ck.hyper),
            )?;
        }
        None => match csv {
            Some(csv) => print!("{csv}"),
            None => print!("{}", report.to_kv()),
        },
    }
    Ok(EXIT_OK)
}

fn run_sweep(a: SweepArgs) -> Result<i32> {
    let (corpus, store) = load_data(&a.data)?;
    let base = resolve_hyper(&a.hyper, &corpus)?;
    let grid = read_grid(&a.grid)?;
    create_dir(&a.out)?;
    write_manifest(
        &a.out,
        "sweep",
        &[
            ("data", show(&a.data)),
            ("grid", show(&a.grid)),
            ("out", show(&a.out)),
        ],
        Some(&base),
    )?;
    let rows = sweep(&corpus, &store, &base, &grid);
    let table = sweep_table(&rows);
    write_file(&a.out.join("sweep.tsv"), &table)?;
    print!("{table}");
    Ok(EXIT_OK)
}

fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    let mut h = gradcheck_hyper();
    if let Some(path) = &a.config {
        for (k, v) in read_kv(path)? {
            if !h.set(&k, &v)? {
                return Err(Error::Config(format!(
                    "{}: unknown key {k:?}",
                    path.display()
                )));
            }
        }
    }
    let report = gradcheck_model(&h, a.items, a.relations, Some(a.coords), a.seed)?;
    println!("checked={}", report.checked);
    println!("max_rel_err={:e}", report.max_rel_err);
    if report.max_rel_err < REL_ERR_FLOOR {
        println!("max_rel_err < 1e-4");
        Ok(EXIT_OK)
    } else {
        if let Some((id, k, an, num)) = report.worst {
            println!(
                "worst=param {} index {k} analytic {an:e} numeric {num:e}",
                id.0
            );
        }
        println!("max_rel_err >= 1e-4");
        Ok(EXIT_CHECK)
    }
}

fn synth(a: SynthArgs) -> Result<i32> {
    let spec = match &a.spec {
        Some(p) => SynthSpec::from_kv(&read_kv(p)?)?,
        None => SynthSpec::default(),
    };
    let (corpus, store) = generate_synthetic(&spec, a.seed)?;
    create_dir(&a.out)?;
    corpus.save(&a.out)?;
    store.save(&a.out.join(RELATIONS_FILE), &corpus)?;
    write_manifest(
        &a.out,
        "synth",
        &[
            ("spec", a.spec.as_deref().map_or("default".into(), show)),
            ("seed", a.seed.to_string()),
            ("out", show(&a.out)),
        ],
        None,
    )?;
    println!("users={}", corpus.num_users());
    println!("items={}", corpus.num_items());
    println!("related_pairs={}", store.num_pairs());
    Ok(EXIT_OK)
}
