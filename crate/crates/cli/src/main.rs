//! `compl`: command-line front end for the complementary-signal pipeline.

mod config;

use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use compl_core::data::{read_instances, write_json, Dataset};
use compl_core::decision::PayoffMode;
use compl_core::dgp::{self, CachedClient, ChatClient, MockClient, OccurrenceFile, OpenAiClient, RetryClient};
use compl_core::eval::{self, BreadthThreshold, DeterministicJudge, EvalReport, LlmJudge, SimilarityJudge};
use compl_core::labeler::{self, SftRecord};
use compl_core::pool::parallel_map;
use compl_core::posterior::{self, Link, PosteriorModel, Scoring};
use compl_core::reward::{service, RewardContext};
use compl_core::synth::{self, sibling, OutcomeRule, SynthConfig};
use serde_json::json;

use config::{JudgeBackend, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "compl", version, about = "Estimate, label, reward and evaluate complementary signals")]
struct Cli {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Use the deterministic offline backends instead of a chat endpoint.
    #[arg(long, global = true)]
    mock_llm: bool,
    /// Directory caching one completion per request.
    #[arg(long, global = true, value_name = "DIR")]
    cache: Option<PathBuf>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with held-out complementary findings.
    SynthGen(SynthArgs),
    /// Discover the signal space and annotate occurrences with a chat model.
    EstimateDgp(DgpArgs),
    /// Fit the posterior with greedy main-effect and interaction selection.
    FitPosterior(FitArgs),
    /// Compute complementary labels and write the supervised fine-tuning file.
    LabelSft(LabelArgs),
    /// Serve rewards over newline-delimited JSON.
    RewardServe(ServeArgs),
    /// Evaluate extractions: similarity, complementary value and breadth.
    Eval(EvalArgs),
    /// Complementary information value of extractions with a bootstrap interval.
    Civ(CivArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Dataset path; sidecars `.occ.json`, `.truth.json` and `.oracle.jsonl` are written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated findings left out of the recommendation; pass an empty string for none.
    #[arg(long, value_delimiter = ',')]
    held_out: Option<Vec<String>>,
    #[arg(long, value_enum)]
    outcome: Option<OutcomeArg>,
    /// Expand each finding into positive, negative and uncertain mentions.
    #[arg(long)]
    polarity: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutcomeArg {
    Threshold,
    Bernoulli,
}

#[derive(Debug, Args)]
struct DgpArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Occurrence file to write (default: `<dataset>.dgp.occ.json`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    zeta: Option<u32>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Maximum signals per round-one completion.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Maximum in-flight requests.
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Occurrence file (default: `<dataset>.occ.json`).
    #[arg(long)]
    occurrences: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Model file to write (default: `<dataset>.model.json`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epsilon_main: Option<f64>,
    #[arg(long)]
    epsilon_int: Option<f64>,
    #[arg(long, value_enum)]
    scoring: Option<ScoringArg>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long, value_enum)]
    link: Option<LinkArg>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScoringArg {
    LogLikelihood,
    Accuracy,
    Brier,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LinkArg {
    Logistic,
    Identity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Expected,
    Realized,
}

impl From<ModeArg> for PayoffMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Expected => PayoffMode::Expected,
            ModeArg::Realized => PayoffMode::Realized,
        }
    }
}

#[derive(Debug, Args)]
struct LabelArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Supervised file to write (default: `<dataset>.sft.jsonl`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Supervised file holding the labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// TCP port on 127.0.0.1; 0 serves standard input and output.
    #[arg(long, default_value_t = 0)]
    port: u16,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Extraction file: one `{"id", "signals"}` record per line.
    #[arg(long)]
    extractions: Option<PathBuf>,
    /// Reference names for similarity, in the same format (supervised files also work).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Report to write (default: `<extractions>.eval.json`, plus a `.eval.tsv` table).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    judge: Option<JudgeBackend>,
    /// Use a fixed per-test p-value threshold instead of 0.05 / M.
    #[arg(long)]
    fixed_p: Option<f64>,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CivArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    extractions: Option<PathBuf>,
    /// Also write the result here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn require(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let path = path.ok_or_else(|| anyhow!("no {what} path given (flag or config file)"))?;
    if !path.exists() {
        bail!("input file not found: {}", path.display());
    }
    Ok(path)
}

fn load_dataset(input: &InputArgs, cfg: &PipelineConfig) -> Result<(PathBuf, Dataset)> {
    let dataset = require(input.dataset.clone().or(cfg.paths.dataset.clone()), "dataset")?;
    let occ = require(
        Some(
            input
                .occurrences
                .clone()
                .or(cfg.paths.occurrences.clone())
                .unwrap_or_else(|| sibling(&dataset, ".occ.json")),
        ),
        "occurrences",
    )?;
    let instances = read_instances(&dataset)?;
    let data = OccurrenceFile::read(&occ)?.attach(instances)?;
    Ok((dataset, data))
}

fn client(cli: &Cli, cfg: &PipelineConfig, default_cache: Option<PathBuf>) -> Result<Box<dyn ChatClient>> {
    let cache = cli.cache.clone().or(cfg.paths.cache.clone());
    let base: Box<dyn ChatClient> = if cli.mock_llm {
        Box::new(MockClient)
    } else {
        let http = OpenAiClient::from_env(cfg.llm.model.clone(), Duration::from_secs(cfg.llm.timeout_secs))?;
        Box::new(RetryClient::new(
            http,
            cfg.llm.retry_attempts,
            Duration::from_millis(cfg.llm.retry_base_ms),
        ))
    };
    // Real endpoints always cache; the mock only when asked.
    let cache = if cli.mock_llm { cache } else { cache.or(default_cache) };
    Ok(match cache {
        Some(dir) => Box::new(CachedClient::new(base, dir)?),
        None => base,
    })
}

fn print_summary(value: serde_json::Value) {
    println!("{value}");
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::SynthGen(a) => synth_gen(a, &mut cfg),
        Command::EstimateDgp(a) => estimate_dgp(&cli, a, &mut cfg),
        Command::FitPosterior(a) => fit_posterior(a, &mut cfg),
        Command::LabelSft(a) => label_sft(&cli, a, &mut cfg),
        Command::RewardServe(a) => reward_serve(a, &cfg),
        Command::Eval(a) => run_eval(&cli, a, &mut cfg),
        Command::Civ(a) => run_civ(a, &mut cfg),
    }
}

fn synth_gen(a: &SynthArgs, cfg: &mut PipelineConfig) -> Result<()> {
    let out = a
        .out
        .clone()
        .or(cfg.paths.dataset.clone())
        .ok_or_else(|| anyhow!("no output path given (--out)"))?;
    if a.polarity {
        cfg.synth.signals = SynthConfig::with_polarity().signals;
    }
    if let Some(seed) = a.seed {
        cfg.synth.seed = seed;
    }
    if let Some(n) = a.n {
        cfg.synth.n = n;
    }
    if let Some(h) = &a.held_out {
        cfg.synth.held_out = h.iter().filter(|s| !s.trim().is_empty()).map(|s| s.trim().to_string()).collect();
    }
    if let Some(o) = a.outcome {
        cfg.synth.outcome = match o {
            OutcomeArg::Threshold => OutcomeRule::Threshold,
            OutcomeArg::Bernoulli => OutcomeRule::Bernoulli,
        };
    }
    let output = synth::generate(&cfg.synth)?;
    let paths = synth::write_outputs(&output, &out)?;
    print_summary(json!({
        "instances": output.dataset.len(),
        "signals": output.dataset.space.len(),
        "dataset": paths.dataset,
        "occurrences": paths.occurrences,
        "truth": paths.truth,
        "oracle": paths.oracle,
    }));
    Ok(())
}

fn estimate_dgp(cli: &Cli, a: &DgpArgs, cfg: &mut PipelineConfig) -> Result<()> {
    let dataset = require(a.dataset.clone().or(cfg.paths.dataset.clone()), "dataset")?;
    let s = &mut cfg.sampling;
    if let Some(v) = a.zeta {
        s.zeta = v;
    }
    if let Some(v) = a.temperature {
        s.temperature = v;
    }
    if let Some(v) = a.k {
        s.max_signals_per_prompt = v;
    }
    if let Some(v) = a.epsilon {
        s.epsilon = v;
    }
    if let Some(v) = a.delta {
        s.delta = v;
    }
    if let Some(v) = a.concurrency {
        s.concurrency = v;
    }
    let out = a
        .out
        .clone()
        .or(cfg.paths.occurrences.clone())
        .unwrap_or_else(|| sibling(&dataset, ".dgp.occ.json"));
    let instances = read_instances(&dataset)?;
    let client = client(cli, cfg, Some(sibling(&dataset, ".cache")))?;
    let discovery = dgp::discover_signal_space(&instances, &cfg.problem, &client, &cfg.sampling, &cfg.prompts)?;
    let matrix = if discovery.space.is_empty() {
        log::warn!("no signal passed the frequency filter; writing an empty occurrence file");
        None
    } else {
        Some(dgp::annotate_occurrences(&instances, &discovery.space, &client, &cfg.sampling, &cfg.prompts)?)
    };
    let rows = match &matrix {
        Some(m) => m.rows.clone(),
        None => vec![compl_core::SignalVector::zeros(0); instances.len()],
    };
    OccurrenceFile::new(&instances, discovery.space.clone(), &rows, matrix.as_ref())?.write(&out)?;
    let report = sibling(&dataset, ".dgp.json");
    write_json(
        &report,
        &json!({ "discovery": discovery, "config": cfg.echo() }),
    )?;
    print_summary(json!({
        "signals": discovery.space.len(),
        "cutoff": discovery.cutoff,
        "occurrences": out,
        "discovery": report,
    }));
    Ok(())
}

fn fit_posterior(a: &FitArgs, cfg: &mut PipelineConfig) -> Result<()> {
    let (path, data) = load_dataset(&a.input, cfg)?;
    let f = &mut cfg.fit;
    if let Some(v) = a.epsilon_main {
        f.epsilon_main = v;
    }
    if let Some(v) = a.epsilon_int {
        f.epsilon_int = v;
    }
    if let Some(v) = a.scoring {
        f.scoring = match v {
            ScoringArg::LogLikelihood => Scoring::LogLikelihood,
            ScoringArg::Accuracy => Scoring::Accuracy,
            ScoringArg::Brier => Scoring::Brier,
        };
    }
    if let Some(v) = a.validation_fraction {
        f.validation_fraction = v;
    }
    if let Some(v) = a.l2 {
        f.l2 = v;
    }
    if let Some(v) = a.link {
        f.link = Some(match v {
            LinkArg::Logistic => Link::Logistic,
            LinkArg::Identity => Link::Identity,
        });
    }
    if let Some(v) = a.seed {
        f.seed = v;
    }
    let out = a
        .out
        .clone()
        .or(cfg.paths.model.clone())
        .unwrap_or_else(|| sibling(&path, ".model.json"));
    let model = posterior::fit_greedy(&data, &cfg.problem, &cfg.fit)?;
    model.save(&out)?;
    let meta = model.fit_metadata();
    print_summary(json!({
        "model": out,
        "main_effects": model.selected_main().iter().map(|&j| data.space.name(j)).collect::<Vec<_>>(),
        "interactions": model.selected_interactions().len(),
        "heldout_score": meta.heldout_score,
        "baseline_score": meta.baseline_score,
        "degenerate": meta.degenerate,
    }));
    Ok(())
}

fn load_model(path: Option<PathBuf>, cfg: &PipelineConfig, dataset: &Path, data: &Dataset) -> Result<PosteriorModel> {
    let path = require(
        Some(path.or(cfg.paths.model.clone()).unwrap_or_else(|| sibling(dataset, ".model.json"))),
        "model",
    )?;
    let model = PosteriorModel::load(&path)?;
    if !model.signal_names().iter().map(String::as_str).eq(data.space.names()) {
        bail!("model {} was fitted on a different signal space", path.display());
    }
    Ok(model)
}

fn label_sft(cli: &Cli, a: &LabelArgs, cfg: &mut PipelineConfig) -> Result<()> {
    let (path, data) = load_dataset(&a.input, cfg)?;
    let model = load_model(a.model.clone(), cfg, &path, &data)?;
    if let Some(e) = a.epsilon {
        cfg.label.epsilon = e;
    }
    if let Some(m) = a.mode {
        cfg.label.mode = m.into();
    }
    let out = a
        .out
        .clone()
        .or(cfg.paths.labels.clone())
        .unwrap_or_else(|| sibling(&path, ".sft.jsonl"));
    let labels = labeler::label_dataset(&data, &model, &cfg.problem, &cfg.label, cfg.workers)?;
    let client = client(cli, cfg, Some(sibling(&path, ".cache")))?;
    let traces = parallel_map(&data.instances, cfg.sampling.concurrency, |i, inst| {
        let described = labeler::described_labels(&data.space, &labels[i]);
        labeler::generate_cot(inst, &described, &client, &cfg.prompts, cfg.sampling.temperature)
    })
    .into_iter()
    .collect::<compl_core::Result<Vec<_>>>()?;
    let records: Vec<SftRecord> = data
        .instances
        .iter()
        .zip(&labels)
        .zip(&traces)
        .map(|((inst, label), trace)| {
            labeler::sft_record(inst, &data.space, label, trace, &cfg.prompts, cfg.sampling.max_signals_per_prompt)
        })
        .collect();
    let summary = labeler::emit_sft_dataset(&out, &records)?;
    let meta = sibling(&out, ".meta.json");
    write_json(&meta, &json!({ "summary": summary, "config": cfg.echo() }))?;
    print_summary(json!({ "labels": out, "meta": meta, "summary": summary }));
    Ok(())
}

fn reward_serve(a: &ServeArgs, cfg: &PipelineConfig) -> Result<()> {
    let (path, data) = load_dataset(&a.input, cfg)?;
    let model = load_model(a.model.clone(), cfg, &path, &data)?;
    let labels_path = require(
        Some(a.labels.clone().or(cfg.paths.labels.clone()).unwrap_or_else(|| sibling(&path, ".sft.jsonl"))),
        "labels",
    )?;
    let records = labeler::read_sft(&labels_path)?;
    let mode = a.mode.map(PayoffMode::from).unwrap_or(cfg.mode);
    let ctx = RewardContext::from_sft(data, &records, model, cfg.problem.clone(), mode)?;
    if a.port == 0 {
        let stdin = std::io::stdin();
        let stdout = std::io::stdout();
        service::serve_stream(&ctx, BufReader::new(stdin.lock()), stdout.lock())?;
        return Ok(());
    }
    let listener = TcpListener::bind(("127.0.0.1", a.port)).with_context(|| format!("binding port {}", a.port))?;
    eprintln!("listening on {}", listener.local_addr()?);
    std::io::stderr().flush().ok();
    service::serve_listener(Arc::new(ctx), listener)?;
    Ok(())
}

fn extraction_inputs(
    dataset: Option<PathBuf>,
    extractions: Option<PathBuf>,
    cfg: &PipelineConfig,
) -> Result<(PathBuf, Vec<compl_core::Instance>, Vec<Vec<String>>)> {
    let dataset = require(dataset.or(cfg.paths.dataset.clone()), "dataset")?;
    let extractions = require(extractions.or(cfg.paths.extractions.clone()), "extractions")?;
    let instances = read_instances(&dataset)?;
    let names = eval::names_by_instance(&instances, &eval::read_extractions(&extractions)?);
    Ok((extractions, instances, names))
}

fn apply_eval_flags(cfg: &mut PipelineConfig, resamples: Option<usize>, level: Option<f64>, seed: Option<u64>) {
    if let Some(v) = resamples {
        cfg.eval.bootstrap_resamples = v;
    }
    if let Some(v) = level {
        cfg.eval.level = v;
    }
    if let Some(v) = seed {
        cfg.eval.seed = v;
    }
}

fn run_eval(cli: &Cli, a: &EvalArgs, cfg: &mut PipelineConfig) -> Result<()> {
    apply_eval_flags(cfg, a.resamples, a.level, a.seed);
    if let Some(p) = a.fixed_p {
        cfg.eval.breadth_threshold = BreadthThreshold::Fixed { p };
    }
    if let Some(j) = a.judge {
        cfg.judge = j;
    }
    if cli.mock_llm {
        cfg.judge = JudgeBackend::Deterministic;
    }
    let (ext_path, instances, names) = extraction_inputs(a.dataset.clone(), a.extractions.clone(), cfg)?;
    let (space, rows) = eval::extraction_matrix(&names)?;
    let civ = eval::civ(&instances, &rows, &cfg.problem, &cfg.eval)?;
    let breadth = eval::breadth(&instances, &space, &rows, &cfg.problem, &cfg.eval)?;
    let similarity = match a.reference.clone().or(cfg.paths.reference.clone()) {
        Some(r) => {
            let r = require(Some(r), "reference")?;
            let reference = eval::names_by_instance(&instances, &eval::read_extractions(&r)?);
            let judge: Box<dyn SimilarityJudge> = match cfg.judge {
                JudgeBackend::Deterministic => Box::new(DeterministicJudge),
                JudgeBackend::Llm => Box::new(LlmJudge::new(client(cli, cfg, None)?, cfg.judge_llm.clone())),
            };
            Some(eval::similarity_metrics(&reference, &names, judge.as_ref(), cfg.sampling.concurrency)?)
        }
        None => None,
    };
    let report = EvalReport {
        n_instances: instances.len(),
        signals: space.len(),
        similarity,
        civ,
        breadth,
        config: cfg.echo(),
    };
    let out = a
        .out
        .clone()
        .or(cfg.paths.report.clone())
        .unwrap_or_else(|| sibling(&ext_path, ".eval.json"));
    write_json(&out, &report)?;
    let table = out.with_extension("tsv");
    std::fs::write(&table, report.signal_table()).with_context(|| format!("writing {}", table.display()))?;
    print_summary(json!({
        "report": out,
        "table": table,
        "civ": report.civ,
        "breadth": report.breadth.count,
        "surface": report.similarity.as_ref().and_then(|s| s.surface),
        "f1": report.similarity.as_ref().map(|s| s.f1),
    }));
    Ok(())
}

fn run_civ(a: &CivArgs, cfg: &mut PipelineConfig) -> Result<()> {
    apply_eval_flags(cfg, a.resamples, a.level, a.seed);
    let (_, instances, names) = extraction_inputs(a.dataset.clone(), a.extractions.clone(), cfg)?;
    let (_, rows) = eval::extraction_matrix(&names)?;
    let civ = eval::civ(&instances, &rows, &cfg.problem, &cfg.eval)?;
    if let Some(out) = &a.out {
        write_json(out, &json!({ "civ": civ, "config": cfg.echo() }))?;
    }
    print_summary(json!({ "civ": civ }));
    Ok(())
}
