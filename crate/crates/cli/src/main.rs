mod config;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{ArgAction, Args, Parser, Subcommand};
use serde_json::json;

use campus_core::corpus::{load_dataset, RenderTemplate};
use campus_core::metrics::{compute_difficulties, parse_metric_set, MetricError, DEFAULT_TTR_THRESHOLD};
use campus_core::probe::{wire, Endpoint, ExternalProbe};
use campus_core::runner::{
    composition_report, convergence_report, run, Convergence, JsonlSink, PplRefresh, RunError,
};
use campus_core::scorer::{train_scorer, Checkpoint, ScorerError};
use campus_core::{
    Corpus, Dataset, Metric, NGramProbe, Probe, RunConfig, ScopeConfig, ScorerConfig,
    ScoringModel, SelectionPolicy,
};

/// Multi-metric curriculum scheduling for instruction-tuning data.
#[derive(Debug, Parser)]
#[command(name = "campus", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute difficulty values (d1..d4) for every sample, one JSON line each.
    #[command(args_override_self = true)]
    Metrics(MetricsArgs),
    /// Run the curriculum and write trace and reports.
    #[command(args_override_self = true)]
    Run(RunArgs),
    /// Train the competence scoring model and write a checkpoint.
    #[command(args_override_self = true)]
    Scorer(ScorerArgs),
    /// Serve a built-in probe over the JSON-lines protocol (stdio or TCP).
    #[command(args_override_self = true)]
    ServeProbe(ServeArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// JSONL dataset file; repeat for several files.
    #[arg(long, required = true)]
    dataset: Vec<PathBuf>,
    /// Source label for rows without a `source` field. Give one per
    /// --dataset, or a single label for all of them.
    #[arg(long)]
    source: Vec<String>,
    /// Rendering template file (key=value: instruction, input, response, separator).
    #[arg(long)]
    template: Option<PathBuf>,
    /// Worker threads for per-sample metric computation.
    #[arg(long)]
    jobs: Option<usize>,
    /// key=value file of default flag values; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScorerOpts {
    /// Number of portions the data is split into for easy/hard labeling.
    #[arg(long, default_value_t = 5)]
    n_portions: usize,
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    /// Passes over each round's pairs.
    #[arg(long, default_value_t = 2)]
    inner_iters: usize,
    #[arg(long, default_value_t = 0.1)]
    label_smoothing: f64,
    /// Balance easy/hard labels by resampling the minority class.
    #[arg(long, default_value = "true", num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    upsample: bool,
    #[arg(long, default_value_t = 0.1)]
    adversarial_weight: f64,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
}

impl ScorerOpts {
    fn config(&self, seed: u64) -> ScorerConfig {
        ScorerConfig {
            n_portions: self.n_portions,
            lr: self.lr,
            batch: self.batch,
            inner_iters: self.inner_iters,
            label_smoothing: self.label_smoothing,
            upsample: self.upsample,
            adversarial_weight: self.adversarial_weight,
            hidden: self.hidden,
            seed,
        }
    }
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Probe for d3/d4: ngram:<order>[:alpha], exec:<cmd> or tcp:<host:port>.
    #[arg(long)]
    probe: Option<String>,
    /// Seconds to wait for each external probe response.
    #[arg(long, default_value_t = 120.0)]
    probe_timeout: f64,
    /// Scorer checkpoint; enables d4 (needs --probe).
    #[arg(long)]
    scorer: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TTR_THRESHOLD)]
    ttr_threshold: f64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma separated metrics to build schedules from.
    #[arg(long, default_value = "d1,d2,d3,d4")]
    metrics: String,
    /// ngram:<order>[:alpha], exec:<cmd> or tcp:<host:port>.
    #[arg(long, default_value = "ngram:2")]
    probe: String,
    #[arg(long, default_value_t = 120.0)]
    probe_timeout: f64,
    /// Steps per schedule.
    #[arg(long = "T", default_value_t = 100)]
    t: usize,
    /// Initial learning scope.
    #[arg(long, default_value_t = 0.01)]
    s1: f64,
    /// Scope progression exponent.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Candidate selection: min, max, random or sequential.
    #[arg(long, default_value = "min")]
    select: SelectionPolicy,
    /// Train every sample at most once across schedules.
    #[arg(long, default_value = "false", num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    dedup: bool,
    /// Candidate perplexities recomputed after each step: selected or all.
    #[arg(long, default_value = "selected", value_parser = parse_refresh)]
    refresh_ppl: PplRefresh,
    /// Re-score only this many positions after the cut when re-sorting.
    #[arg(long)]
    resort_window: Option<usize>,
    /// Stop after this many steps.
    #[arg(long, conflicts_with = "plateau")]
    max_steps: Option<usize>,
    /// Stop once the step loss stops improving.
    #[arg(long, default_value = "false", num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    plateau: bool,
    #[arg(long, default_value_t = 1e-4)]
    plateau_tol: f64,
    #[arg(long, default_value_t = 5)]
    plateau_patience: usize,
    #[arg(long, default_value_t = DEFAULT_TTR_THRESHOLD)]
    ttr_threshold: f64,
    /// Scorer checkpoint for d4; trained on the spot when omitted.
    #[arg(long)]
    scorer: Option<PathBuf>,
    #[command(flatten)]
    scorer_opts: ScorerOpts,
    /// Window size for the composition report.
    #[arg(long, default_value_t = 5000)]
    composition_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "campus-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScorerArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "ngram:2")]
    probe: String,
    #[arg(long, default_value_t = 120.0)]
    probe_timeout: f64,
    #[command(flatten)]
    opts: ScorerOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "campus-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Built-in probe: ngram:<order>[:alpha].
    #[arg(long, default_value = "ngram:2")]
    probe: String,
    /// Vocabulary size of the client's corpus.
    #[arg(long, conflicts_with = "dataset")]
    vocab_size: Option<usize>,
    /// Dataset whose vocabulary size to use.
    #[arg(long)]
    dataset: Vec<PathBuf>,
    #[arg(long)]
    template: Option<PathBuf>,
    /// Listen on host:port instead of stdin/stdout.
    #[arg(long)]
    listen: Option<String>,
    /// With --listen, exit after the first connection closes.
    #[arg(long)]
    once: bool,
}

fn parse_refresh(s: &str) -> Result<PplRefresh, String> {
    match s {
        "selected" => Ok(PplRefresh::Selected),
        "all" => Ok(PplRefresh::All),
        other => Err(format!("expected `selected` or `all`, got `{other}`")),
    }
}

/// A failure with its exit code: 1 config or input, 2 probe, 3 runtime.
#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Probe(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Probe(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Probe(e) | Failure::Runtime(e) => e,
        }
    }
}

type Outcome<T> = Result<T, Failure>;

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn probe_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Probe(e.into())
}

fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn metric_failure(e: MetricError) -> Failure {
    let is_probe = match &e {
        MetricError::Probe(_) | MetricError::Scorer(ScorerError::Probe(_)) => true,
        MetricError::Sample { source, .. } => matches!(
            source.as_ref(),
            MetricError::Probe(_) | MetricError::Scorer(ScorerError::Probe(_))
        ),
        _ => false,
    };
    if is_probe {
        probe_err(e)
    } else {
        config_err(e)
    }
}

fn scorer_failure(e: ScorerError) -> Failure {
    match e {
        ScorerError::Probe(_) => probe_err(e),
        other => config_err(other),
    }
}

fn run_failure(e: RunError) -> Failure {
    if e.probe_error().is_some() {
        probe_err(e)
    } else if matches!(e, RunError::Config(_)) {
        config_err(e)
    } else {
        runtime_err(e)
    }
}

fn load_corpus(data: &DataArgs) -> Outcome<Corpus> {
    if let Some(jobs) = data.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(config_err)?;
    }
    let n = data.dataset.len();
    if data.source.len() > 1 && data.source.len() != n {
        return Err(config_err(anyhow!(
            "got {} --source labels for {n} --dataset files",
            data.source.len()
        )));
    }
    let mut dataset = Dataset::default();
    for (i, path) in data.dataset.iter().enumerate() {
        let source = data.source.get(i).or(data.source.first()).map(String::as_str);
        let part = load_dataset(path, source)
            .with_context(|| format!("loading {}", path.display()))
            .map_err(config_err)?;
        dataset.extend(part);
    }
    if dataset.is_empty() {
        return Err(config_err(anyhow!("dataset is empty")));
    }
    let template = match &data.template {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading template {}", path.display()))
                .map_err(config_err)?;
            RenderTemplate::parse(&text).map_err(config_err)?
        }
        None => RenderTemplate::default(),
    };
    Ok(Corpus::with_template(dataset, template))
}

fn parse_ngram(spec: &str) -> Option<Outcome<(usize, f64)>> {
    let rest = spec.strip_prefix("ngram:")?;
    let mut parts = rest.splitn(2, ':');
    let order = parts.next().unwrap_or("").parse::<usize>().ok().filter(|&o| o >= 1);
    let alpha = match parts.next() {
        Some(a) => a.parse::<f64>().ok().filter(|a| *a > 0.0 && a.is_finite()),
        None => Some(1.0),
    };
    Some(match (order, alpha) {
        (Some(o), Some(a)) => Ok((o, a)),
        _ => Err(config_err(anyhow!(
            "bad probe spec `{spec}`: expected ngram:<order >= 1>[:<alpha > 0>]"
        ))),
    })
}

fn open_probe(spec: &str, corpus: &Corpus, timeout_secs: f64) -> Outcome<Box<dyn Probe>> {
    if let Some(parsed) = parse_ngram(spec) {
        let (order, alpha) = parsed?;
        return Ok(Box::new(NGramProbe::new(order, alpha, corpus.vocab_size())));
    }
    let endpoint = Endpoint::parse(spec).ok_or_else(|| {
        probe_err(anyhow!(
            "invalid probe endpoint `{spec}` (expected ngram:<order>, exec:<cmd> or tcp:<host:port>)"
        ))
    })?;
    let timeout = Duration::try_from_secs_f64(timeout_secs)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| config_err(anyhow!("probe timeout must be positive")))?;
    let probe = ExternalProbe::connect_with(&endpoint, timeout, Some(corpus.vocab.clone()), false)
        .with_context(|| format!("connecting to probe `{spec}`"))
        .map_err(probe_err)?;
    Ok(Box::new(probe))
}

fn load_scorer(path: &Path, probe: &dyn Probe) -> Outcome<ScoringModel> {
    let ckpt = Checkpoint::load(path)
        .with_context(|| format!("loading scorer {}", path.display()))
        .map_err(config_err)?;
    if ckpt.feature_dim != probe.feature_dim() {
        return Err(config_err(anyhow!(
            "scorer expects feature dim {}, probe reports {}",
            ckpt.feature_dim,
            probe.feature_dim()
        )));
    }
    Ok(ckpt.scorer)
}

fn create_dir(path: &Path) -> Outcome<()> {
    fs::create_dir_all(path)
        .with_context(|| format!("creating output directory {}", path.display()))
        .map_err(config_err)
}

fn write_file(path: &Path, contents: &str) -> Outcome<()> {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime_err)
}

fn loss_history_csv(history: &[campus_core::scorer::LossRecord]) -> String {
    let mut out = String::from("round,iteration,model,loss\n");
    for r in history {
        out.push_str(&format!("{},{},{:?},{}\n", r.round + 1, r.iteration + 1, r.model, r.loss));
    }
    out
}

/// Trains a scorer with its own fresh probe and writes checkpoint and history to `out`.
fn train_and_save(
    corpus: &Corpus,
    probe_spec: &str,
    timeout: f64,
    cfg: &ScorerConfig,
    out: &Path,
) -> Outcome<ScoringModel> {
    let mut probe = open_probe(probe_spec, corpus, timeout)?;
    let trained = train_scorer(corpus, probe.as_mut(), cfg).map_err(scorer_failure)?;
    probe.shutdown().map_err(probe_err)?;
    let ckpt = Checkpoint::new(trained.scorer.clone(), Some(trained.discriminator), cfg.clone());
    ckpt.save(&out.join("scorer.json")).map_err(runtime_err)?;
    write_file(&out.join("loss_history.csv"), &loss_history_csv(&trained.history))?;
    Ok(trained.scorer)
}

fn cmd_metrics(args: MetricsArgs) -> Outcome<()> {
    let corpus = load_corpus(&args.data)?;
    let mut probe = args
        .probe
        .as_deref()
        .map(|spec| open_probe(spec, &corpus, args.probe_timeout))
        .transpose()?;
    let scorer = match (&args.scorer, probe.as_deref()) {
        (Some(path), Some(p)) => Some(load_scorer(path, p)?),
        (Some(_), None) => return Err(config_err(anyhow!("--scorer needs --probe"))),
        (None, _) => None,
    };
    let rows = compute_difficulties(
        &corpus,
        probe.as_mut().map(|p| &mut **p as &mut dyn Probe),
        scorer.as_ref(),
        args.ttr_threshold,
    )
    .map_err(metric_failure)?;
    if let Some(p) = probe.as_mut() {
        p.shutdown().map_err(probe_err)?;
    }

    let mut text = String::new();
    for (id, row) in rows.iter().enumerate() {
        let line = json!({
            "id": id,
            "source": corpus.sample(id).source,
            "d1": row.d1,
            "d2": row.d2,
            "d3": row.d3,
            "d4": row.d4,
        });
        text.push_str(&line.to_string());
        text.push('\n');
    }
    match &args.out {
        Some(path) => write_file(path, &text),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(runtime_err),
    }
}

fn cmd_run(args: RunArgs) -> Outcome<()> {
    let metrics = parse_metric_set(&args.metrics).map_err(|e| config_err(anyhow!(e)))?;
    let convergence = match (args.max_steps, args.plateau) {
        (Some(n), _) => Convergence::MaxSteps(n),
        (None, true) => Convergence::Plateau {
            rel_tol: args.plateau_tol,
            patience: args.plateau_patience,
        },
        (None, false) => Convergence::AllExhausted,
    };
    let scope = ScopeConfig::new(args.s1, args.p, args.t).map_err(config_err)?;
    let config = RunConfig {
        scope,
        metrics,
        policy: args.select,
        dedup: args.dedup,
        convergence,
        refresh: args.refresh_ppl,
        resort_window: args.resort_window,
        mtld_threshold: args.ttr_threshold,
        seed: args.seed,
    };
    config.validate().map_err(config_err)?;
    let scorer_cfg = args.scorer_opts.config(args.seed);
    let corpus = load_corpus(&args.data)?;
    create_dir(&args.out)?;

    let mut probe = open_probe(&args.probe, &corpus, args.probe_timeout)?;
    let scorer = if config.metrics.contains(&Metric::Score) {
        Some(match &args.scorer {
            Some(path) => load_scorer(path, probe.as_ref())?,
            None => {
                scorer_cfg.validate().map_err(config_err)?;
                train_and_save(&corpus, &args.probe, args.probe_timeout, &scorer_cfg, &args.out)?
            }
        })
    } else {
        None
    };

    let trace_path = args.out.join("trace.jsonl");
    let file = File::create(&trace_path)
        .with_context(|| format!("creating {}", trace_path.display()))
        .map_err(config_err)?;
    let mut sink = JsonlSink::new(BufWriter::new(file));
    let trace = match run(&corpus, probe.as_mut(), scorer.as_ref(), &config, Some(&mut sink)) {
        Ok(trace) => trace,
        Err(e) => {
            let f = run_failure(e);
            eprintln!("trace so far kept in {}", trace_path.display());
            return Err(f);
        }
    };
    drop(sink);
    probe.shutdown().map_err(probe_err)?;

    let meta = json!({
        "meta": trace.meta,
        "probe": args.probe,
        "scorer": args.scorer.as_ref().map(|p| p.display().to_string()),
        "scorer_config": scorer.as_ref().map(|_| &scorer_cfg),
        "steps": trace.len(),
        "final_loss": trace.final_loss(),
    });
    write_file(
        &args.out.join("run.json"),
        &(serde_json::to_string_pretty(&meta).map_err(runtime_err)? + "\n"),
    )?;
    let composition =
        composition_report(&trace, &corpus.dataset, args.composition_k).map_err(run_failure)?;
    write_file(
        &args.out.join("composition.json"),
        &(serde_json::to_string_pretty(&composition).map_err(runtime_err)? + "\n"),
    )?;
    let convergence = convergence_report(&trace).map_err(run_failure)?;
    write_file(&args.out.join("convergence.csv"), &convergence)?;

    match trace.final_loss() {
        Some(loss) => println!("steps: {}, final loss: {loss:.6}", trace.len()),
        None => println!("steps: {}, final loss: n/a", trace.len()),
    }
    Ok(())
}

fn cmd_scorer(args: ScorerArgs) -> Outcome<()> {
    let cfg = args.opts.config(args.seed);
    cfg.validate().map_err(config_err)?;
    let corpus = load_corpus(&args.data)?;
    create_dir(&args.out)?;
    train_and_save(&corpus, &args.probe, args.probe_timeout, &cfg, &args.out)?;
    println!("scorer written to {}", args.out.join("scorer.json").display());
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Outcome<()> {
    let (order, alpha) = parse_ngram(&args.probe)
        .ok_or_else(|| config_err(anyhow!("serve-probe only serves ngram:<order>[:alpha]")))??;
    let vocab_size = match args.vocab_size {
        Some(v) => v,
        None if !args.dataset.is_empty() => {
            let data = DataArgs {
                dataset: args.dataset.clone(),
                source: Vec::new(),
                template: args.template.clone(),
                jobs: None,
                config: None,
            };
            load_corpus(&data)?.vocab_size()
        }
        None => return Err(config_err(anyhow!("give --vocab-size or --dataset"))),
    };
    if vocab_size == 0 {
        return Err(config_err(anyhow!("vocabulary size must be positive")));
    }
    let mut probe = NGramProbe::new(order, alpha, vocab_size);
    match &args.listen {
        None => {
            let stdin = io::stdin();
            wire::serve(&mut probe, stdin.lock(), io::stdout().lock()).map_err(runtime_err)
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr)
                .with_context(|| format!("binding {addr}"))
                .map_err(config_err)?;
            let local = listener.local_addr().map_err(runtime_err)?;
            eprintln!("listening on {local}");
            for stream in listener.incoming() {
                let stream = stream.map_err(runtime_err)?;
                stream.set_nodelay(true).ok();
                let reader = BufReader::new(stream.try_clone().map_err(runtime_err)?);
                if let Err(e) = wire::serve(&mut probe, reader, &stream) {
                    eprintln!("connection ended: {e}");
                }
                if args.once {
                    break;
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Metrics(a) => cmd_metrics(a),
        Command::Run(a) => cmd_run(a),
        Command::Scorer(a) => cmd_scorer(a),
        Command::ServeProbe(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

