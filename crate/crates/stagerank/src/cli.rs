//! Command line. Exit codes: 0 success, 1 usage, 2 data error, 3 scorer failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use stagerank_core::eval::{evaluate, EvalReport, RunFile, METRICS};
use stagerank_core::fusion::{rrf, DEFAULT_DEPTH, DEFAULT_K_RRF};
use stagerank_core::rerank::{Scorer, DEFAULT_MAX_TOKENS, DEFAULT_RERANK_DEPTH};
use stagerank_core::topics::DEFAULT_THETA;
use stagerank_core::{Granularity, InvertedIndex, RankedList, ReferenceScorer};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::formats::trec::{read_qrels, read_run, write_run, MAX_RUN_DEPTH};
use crate::formats::{corpus, snapshot, topics, write_atomic};
use crate::pipeline::{run_topics, Indexes, RunConfig, RunContext, Variant, DEFAULT_ALPHA};
use crate::scorer::{
    ExternalScorer, ReferenceService, ScorerSpec, TermExtractor, DEFAULT_CONNECTIONS,
    DEFAULT_IN_FLIGHT,
};
use crate::service::{self, AppState, EngineSource};

#[derive(Debug, Parser)]
#[command(
    name = "stagerank",
    version,
    about = "Multi-stage literature search and TREC evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an index snapshot from a corpus file.
    Index(IndexArgs),
    /// Produce a TREC run for a topic set.
    Run(RunArgs),
    /// Score a run against qrels.
    Eval(EvalArgs),
    /// Start the search service.
    Serve(ServeArgs),
    /// Fuse run files with reciprocal rank fusion.
    Fuse(FuseArgs),
    /// Expose the reference scorer over the scorer protocol (stdio or TCP).
    Scorer(ScorerArgs),
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_parser = parse_granularity)]
    granularity: Granularity,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScorerOptions {
    /// reference, exec:CMD or tcp:HOST:PORT
    #[arg(long)]
    scorer: Option<String>,
    /// Per-response timeout of external scorers.
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Connections to an external scorer.
    #[arg(long)]
    connections: Option<usize>,
    /// Outstanding requests per connection.
    #[arg(long)]
    in_flight: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// key = value file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    topics: Option<PathBuf>,
    /// Directory holding abstract.idx, fulltext.idx and paragraph.idx.
    #[arg(long)]
    indexes: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Drop documents judged in --qrels.
    #[arg(long)]
    residual: bool,
    /// Entries per topic (at most 1000).
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    rerank_depth: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    k: Option<f64>,
    /// idf threshold of question-term expansion.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Question-term extractor: exec:CMD or tcp:HOST:PORT (default: idf threshold).
    #[arg(long)]
    extractor: Option<String>,
    #[arg(long)]
    tag: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    scorer: ScorerOptions,
}

const RUN_KEYS: &[&str] = &[
    "topics",
    "indexes",
    "variant",
    "qrels",
    "residual",
    "depth",
    "rerank_depth",
    "max_tokens",
    "k",
    "theta",
    "alpha",
    "extractor",
    "tag",
    "out",
    "jobs",
    "scorer",
    "timeout_ms",
    "connections",
    "in_flight",
];

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Comma-separated subset of ndcg@10, p@5, map, judged@5.
    #[arg(long)]
    metrics: Option<String>,
    /// text or json (one object per line).
    #[arg(long, default_value = "text")]
    format: String,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Directory holding paragraph.idx and abstract.idx (built in memory when absent).
    #[arg(long)]
    indexes: Option<PathBuf>,
    #[arg(long)]
    addr: Option<String>,
    /// Static files served for paths outside the API.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[command(flatten)]
    scorer: ScorerOptions,
}

const SERVE_KEYS: &[&str] = &[
    "corpus",
    "indexes",
    "addr",
    "static_dir",
    "scorer",
    "timeout_ms",
    "connections",
    "in_flight",
];

#[derive(Debug, Args)]
struct FuseArgs {
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K_RRF)]
    k: f64,
    #[arg(long, default_value_t = DEFAULT_DEPTH)]
    depth: usize,
    #[arg(long, default_value = "rrf")]
    tag: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScorerArgs {
    /// Abstract index snapshot supplying idf weights.
    #[arg(long)]
    index: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    theta: f64,
    /// Listen on this address instead of stdin/stdout.
    #[arg(long)]
    listen: Option<String>,
}

fn parse_granularity(s: &str) -> std::result::Result<Granularity, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn load_config(path: Option<&Path>, keys: &[&str]) -> Result<Config> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let cfg = Config::load(path)?;
    cfg.check_keys(keys)?;
    Ok(cfg)
}

fn required<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| Error::Usage(format!("missing --{name}")))
}

struct ScorerSettings {
    spec: ScorerSpec,
    timeout: Duration,
    connections: usize,
    in_flight: usize,
}

impl ScorerSettings {
    fn resolve(opts: &ScorerOptions, cfg: &Config) -> Result<Self> {
        let spec = cfg
            .pick(opts.scorer.clone(), "scorer")?
            .unwrap_or_else(|| "reference".into());
        Ok(Self {
            spec: spec.parse().map_err(Error::Usage)?,
            timeout: cfg
                .pick(opts.timeout_ms, "timeout_ms")?
                .map_or(crate::scorer::DEFAULT_TIMEOUT, Duration::from_millis),
            connections: cfg
                .pick(opts.connections, "connections")?
                .unwrap_or(DEFAULT_CONNECTIONS),
            in_flight: cfg
                .pick(opts.in_flight, "in_flight")?
                .unwrap_or(DEFAULT_IN_FLIGHT),
        })
    }

    fn external(&self, spec: ScorerSpec) -> ExternalScorer {
        ExternalScorer::new(spec)
            .with_timeout(self.timeout)
            .with_connections(self.connections)
            .with_in_flight(self.in_flight)
    }

    /// The reference scorer weights terms by `idf`.
    fn build(&self, idf: &InvertedIndex) -> Arc<dyn Scorer + Send + Sync> {
        match &self.spec {
            ScorerSpec::Reference => Arc::new(ReferenceScorer::from_index(idf)),
            other => Arc::new(self.external(other.clone())),
        }
    }
}

fn cmd_index(args: IndexArgs) -> Result<()> {
    let articles = corpus::read_corpus(&args.corpus)?;
    let idx = service::build_index(&articles, args.granularity)?;
    snapshot::save(&idx, &args.out)?;
    println!("N={} avg_dl={}", idx.len(), idx.avg_dl());
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref(), RUN_KEYS)?;
    let variant: String = required(cfg.pick(args.variant, "variant")?, "variant")?;
    let variant: Variant = variant.parse().map_err(Error::Usage)?;
    let topics_path: PathBuf = required(cfg.pick(args.topics, "topics")?, "topics")?;
    let index_dir: PathBuf = required(cfg.pick(args.indexes, "indexes")?, "indexes")?;
    let qrels_path: Option<PathBuf> = cfg.pick(args.qrels, "qrels")?;
    let residual = args.residual || cfg.pick::<bool>(None, "residual")?.unwrap_or(false);

    let mut run_cfg = RunConfig::new(variant);
    run_cfg.residual = residual;
    run_cfg.depth = cfg.pick(args.depth, "depth")?.unwrap_or(DEFAULT_DEPTH);
    run_cfg.rerank_depth = cfg
        .pick(args.rerank_depth, "rerank_depth")?
        .unwrap_or(DEFAULT_RERANK_DEPTH);
    run_cfg.max_tokens = cfg
        .pick(args.max_tokens, "max_tokens")?
        .unwrap_or(DEFAULT_MAX_TOKENS);
    run_cfg.k_rrf = cfg.pick(args.k, "k")?.unwrap_or(DEFAULT_K_RRF);
    run_cfg.theta = cfg.pick(args.theta, "theta")?.unwrap_or(DEFAULT_THETA);
    run_cfg.alpha = cfg.pick(args.alpha, "alpha")?.unwrap_or(DEFAULT_ALPHA);
    if run_cfg.depth == 0 || run_cfg.depth > MAX_RUN_DEPTH {
        return Err(Error::Usage(format!(
            "--depth must be between 1 and {MAX_RUN_DEPTH}"
        )));
    }
    if run_cfg.k_rrf.is_nan() || run_cfg.k_rrf <= 0.0 {
        return Err(Error::Usage("--k must be positive".into()));
    }
    if !(0.0..=1.0).contains(&run_cfg.alpha) {
        return Err(Error::Usage("--alpha must lie in [0, 1]".into()));
    }
    if run_cfg.needs_qrels() && qrels_path.is_none() {
        let what = if variant == Variant::T5Lr {
            "variant t5_lr"
        } else {
            "--residual"
        };
        return Err(Error::Usage(format!("{what} needs --qrels")));
    }
    let tag = cfg
        .pick(args.tag, "tag")?
        .unwrap_or_else(|| variant.as_str().to_string());
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(Error::Usage("--tag must be a single non-empty word".into()));
    }
    let jobs = cfg
        .pick(args.jobs, "jobs")?
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let out: Option<PathBuf> = cfg.pick(args.out, "out")?;
    let settings = ScorerSettings::resolve(&args.scorer, &cfg)?;
    let extractor_spec: Option<String> = cfg.pick(args.extractor, "extractor")?;
    let extractor: Option<ExternalScorer> = match extractor_spec {
        None => None,
        Some(s) => match s.parse().map_err(Error::Usage)? {
            ScorerSpec::Reference => None,
            spec => Some(settings.external(spec)),
        },
    };

    let topic_list = topics::read_topics(&topics_path)?;
    let indexes = Indexes::load(&index_dir)?;
    let qrels = qrels_path.as_deref().map(read_qrels).transpose()?;
    let scorer = settings.build(&indexes.abstracts);
    let ctx = RunContext {
        indexes: &indexes,
        scorer: scorer.as_ref(),
        extractor: extractor.as_ref().map(|e| e as &dyn TermExtractor),
        qrels: qrels.as_ref(),
    };
    let run = run_topics(&ctx, &run_cfg, &topic_list, &tag, jobs)?;
    emit(out.as_deref(), &write_run(&run))
}

fn parse_metrics(list: Option<&str>) -> Result<Vec<usize>> {
    let Some(list) = list else {
        return Ok((0..METRICS.len()).collect());
    };
    list.split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(|m| {
            METRICS.iter().position(|&k| k == m).ok_or_else(|| {
                Error::Usage(format!(
                    "unknown metric {m:?} (known: {})",
                    METRICS.join(", ")
                ))
            })
        })
        .collect()
}

/// Aligned table: one row per topic, then the means.
pub fn format_table(report: &EvalReport, columns: &[usize]) -> String {
    let mut out = format!("{:<8}", "topic");
    for &c in columns {
        write!(out, " {:>9}", METRICS[c]).expect("string write");
    }
    out.push('\n');
    let mut row = |label: &str, values: [f64; 4]| {
        write!(out, "{label:<8}").expect("string write");
        for &c in columns {
            write!(out, " {:>9.4}", values[c]).expect("string write");
        }
        out.push('\n');
    };
    for r in &report.rows {
        row(&r.topic_id.to_string(), r.values());
    }
    row("all", report.means());
    out
}

/// One JSON object per topic, then one for the means.
pub fn format_json_lines(report: &EvalReport, columns: &[usize]) -> String {
    let object = |topic: serde_json::Value, values: [f64; 4]| {
        let mut m = serde_json::Map::new();
        m.insert("topic".into(), topic);
        for &c in columns {
            m.insert(METRICS[c].into(), values[c].into());
        }
        serde_json::Value::Object(m).to_string()
    };
    let mut out = String::new();
    for r in &report.rows {
        out.push_str(&object(r.topic_id.into(), r.values()));
        out.push('\n');
    }
    out.push_str(&object("all".into(), report.means()));
    out.push('\n');
    out
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let columns = parse_metrics(args.metrics.as_deref())?;
    let format = match args.format.as_str() {
        "text" => format_table,
        "json" => format_json_lines,
        other => {
            return Err(Error::Usage(format!(
                "unknown format {other:?} (text or json)"
            )))
        }
    };
    let run = read_run(&args.run)?;
    let qrels = read_qrels(&args.qrels)?;
    let report = evaluate(&run, &qrels);
    for (topic, reason) in &report.skipped {
        log::warn!("topic {topic} skipped: {reason:?}");
    }
    emit(None, &format(&report, &columns))
}

fn cmd_fuse(args: FuseArgs) -> Result<()> {
    if args.k.is_nan() || args.k <= 0.0 {
        return Err(Error::Usage("--k must be positive".into()));
    }
    if args.depth == 0 || args.depth > MAX_RUN_DEPTH {
        return Err(Error::Usage(format!(
            "--depth must be between 1 and {MAX_RUN_DEPTH}"
        )));
    }
    let runs: Vec<RunFile> = args
        .runs
        .iter()
        .map(|p| read_run(p))
        .collect::<Result<_>>()?;
    let mut by_topic: BTreeMap<u32, Vec<RankedList>> = BTreeMap::new();
    for run in &runs {
        for list in run.lists() {
            by_topic
                .entry(list.topic_id())
                .or_default()
                .push(list.clone());
        }
    }
    let mut fused = RunFile::new(args.tag);
    for lists in by_topic.values() {
        fused.insert(rrf(lists, args.k, args.depth).map_err(Error::data)?);
    }
    emit(args.out.as_deref(), &write_run(&fused))
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref(), SERVE_KEYS)?;
    let source = EngineSource {
        corpus: required(cfg.pick(args.corpus, "corpus")?, "corpus")?,
        indexes: cfg.pick(args.indexes, "indexes")?,
    };
    let addr: String = cfg
        .pick(args.addr, "addr")?
        .unwrap_or_else(|| "127.0.0.1:8080".into());
    let static_dir: Option<PathBuf> = cfg.pick(args.static_dir, "static_dir")?;
    let settings = ScorerSettings::resolve(&args.scorer, &cfg)?;
    let engine = source.load()?;
    let scorer = settings.build(engine.abstract_index());
    let state = Arc::new(AppState::new(engine, scorer, Some(source)));
    let app = service::router(state, static_dir);

    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("<runtime>", e))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Error::Usage(format!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| Error::io(&addr, e))?;
        println!("listening on http://{local}");
        service::serve(listener, app)
            .await
            .map_err(|e| Error::io(&addr, e))
    })
}

fn cmd_scorer(args: ScorerArgs) -> Result<()> {
    let idx = snapshot::load(&args.index)?;
    let service = Arc::new(ReferenceService::new(idx, args.theta));
    let Some(addr) = args.listen else {
        let stdin = io::stdin().lock();
        return service
            .serve(stdin, io::stdout().lock())
            .map_err(|e| Error::io("<stdio>", e));
    };
    let listener = TcpListener::bind(&addr)
        .map_err(|e| Error::Usage(format!("cannot listen on {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| Error::io(&addr, e))?;
    println!("listening on {local}");
    for stream in listener.incoming() {
        let stream = stream.map_err(|e| Error::io(&addr, e))?;
        let service = Arc::clone(&service);
        std::thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(r) => BufReader::new(r),
                Err(e) => return log::warn!("scorer connection: {e}"),
            };
            if let Err(e) = service.serve(reader, stream) {
                log::warn!("scorer connection: {e}");
            }
        });
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index(a) => cmd_index(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Scorer(a) => cmd_scorer(a),
    }
}

/// Runs the command line and returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("stagerank: {e}");
            e.exit_code()
        }
    }
}
