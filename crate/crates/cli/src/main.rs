use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use etnet::corpus::{write_corpus, write_corpus_file};
use etnet::eval::MetricReport;
use etnet::model::{BranchKind, EtNet};
use etnet_cli::output::{error_json, error_kind, is_broken_pipe, write_jsonl, write_plot_data};
use etnet_cli::{ingest, pipeline, RunConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "etnet", version, about = "Similarity learning for event-triggered time series")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Split a corpus, train on the training part, write model and report.
    Train(TrainArgs),
    /// Anomaly scores as JSONL, with AUC when every series is labeled.
    Score(ScoreArgs),
    /// Cluster labels as JSONL, with NMI when every series is labeled.
    Cluster(ClusterArgs),
    /// Reference series along the latent line from a sample to the center.
    Explain(ExplainArgs),
    /// Generate a corpus CSV from a JSON generation spec.
    Synth(SynthArgs),
    /// Pairwise ED/DTW/EDR (and latent) distances.
    EvalDist(EvalDistArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's `data`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    plot_data: bool,
}

#[derive(Args)]
struct Input {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Bins per window for raw value streams.
    #[arg(long, default_value_t = 120)]
    window: usize,
    /// Write files here instead of printing records to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    input: Input,
    /// Flag scores above this percentile of the training scores.
    #[arg(long)]
    threshold_percentile: Option<f64>,
    #[arg(long)]
    plot_data: bool,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    plot_data: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    W,
    D,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    id: String,
    /// Candidate references; defaults to `--data`.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    n_points: usize,
    #[arg(long, default_value_t = 1)]
    k_neighbors: usize,
    /// Defaults to the branch with the larger energy.
    #[arg(long, value_enum)]
    branch: Option<BranchArg>,
}

#[derive(Args)]
struct SynthArgs {
    /// Generation spec JSON.
    #[arg(long, visible_alias = "spec")]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for `corpus.csv`; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalDistArgs {
    #[arg(long)]
    data: PathBuf,
    /// Adds latent distances.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 120)]
    window: usize,
    /// Sakoe-Chiba half-width; unconstrained when absent.
    #[arg(long)]
    dtw_window: Option<usize>,
    /// EDR match tolerance.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = anyhow::anyhow!(e.render().to_string().trim().to_string());
            eprintln!("{}", error_json("usage", &err));
            return ExitCode::from(2);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(error_kind(&e), &e));
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train(a) => train(a),
        Cmd::Score(a) => score(a),
        Cmd::Cluster(a) => cluster(a),
        Cmd::Explain(a) => explain(a),
        Cmd::Synth(a) => synth(a),
        Cmd::EvalDist(a) => eval_dist(a),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_model(path: &Path) -> Result<EtNet> {
    EtNet::load(path).with_context(|| format!("loading model {}", path.display()))
}

/// Metric lines go to `<out>/metrics.json` when writing files, else to stderr
/// so stdout stays pure JSONL.
fn emit_metrics(out: Option<&Path>, reports: &[MetricReport]) -> Result<()> {
    if reports.is_empty() {
        return Ok(());
    }
    match out {
        Some(dir) => write_jsonl(create(dir, "metrics.json")?, reports),
        None => write_jsonl(io::stderr().lock(), reports),
    }
}

fn emit_records<T: serde::Serialize>(out: Option<&Path>, name: &str, rows: &[T]) -> Result<()> {
    match out {
        Some(dir) => write_jsonl(create(dir, name)?, rows),
        None => write_jsonl(io::stdout().lock(), rows),
    }
}

fn plot_dir(out: Option<&Path>, plot: bool) -> Result<Option<&Path>> {
    match (plot, out) {
        (false, _) => Ok(None),
        (true, Some(d)) => Ok(Some(d)),
        (true, None) => bail!("--plot-data needs --out"),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::from_json(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => RunConfig::default(),
    };
    if let Some(d) = a.data {
        cfg.data = Some(d);
    }
    if let Some(o) = a.out {
        cfg.out = Some(o);
    }
    if let Some(s) = a.seed {
        cfg.model.seed = s;
    }
    let Some(data_path) = cfg.data.clone() else {
        bail!("no training data: pass --data or set `data` in the config");
    };
    let Some(out) = cfg.out.clone() else {
        bail!("no output directory: pass --out or set `out` in the config");
    };
    let data = ingest(&data_path, cfg.window)?;
    let (model, split, summary) = pipeline::run_train(&cfg, &data)?;
    fs::create_dir_all(&out)?;
    model.save(out.join("model.json"))?;
    let mut r = create(&out, "report.json")?;
    serde_json::to_writer_pretty(&mut r, &summary)?;
    r.flush()?;
    write_corpus_file(out.join("train.csv"), &split.train)?;
    if !split.test.is_empty() {
        write_corpus_file(out.join("test.csv"), &split.test)?;
    }
    if a.plot_data {
        write_plot_data(create(&out, "plot.csv")?, &model.score(&split.train)?)?;
    }
    let last = |h: &etnet::model::BranchHistory| h.epochs.last().map(|e| e.loss);
    println!(
        "{}",
        json!({
            "model": out.join("model.json"),
            "train": split.train.len(),
            "test": split.test.len(),
            "contaminated": split.contaminated.len(),
            "final_loss_w": last(&summary.history.w),
            "final_loss_d": last(&summary.history.d),
        })
    );
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let model = load_model(&a.input.model)?;
    let data = ingest(&a.input.data, a.input.window)?;
    let res = pipeline::run_score(&model, &data, a.threshold_percentile)?;
    let out = a.input.out.as_deref();
    emit_records(out, "scores.jsonl", &res.rows)?;
    if let Some(dir) = plot_dir(out, a.plot_data)? {
        let samples: Vec<_> = res.rows.iter().map(|r| r.sample.clone()).collect();
        write_plot_data(create(dir, "plot.csv")?, &samples)?;
    }
    let mut reports = Vec::new();
    if let Some(auc) = res.auc {
        reports.push(MetricReport::new("auc", auc, data.len(), json!({})));
    }
    if let (Some(t), Some(p)) = (res.threshold, a.threshold_percentile) {
        let flagged = res.rows.iter().filter(|r| r.flag == Some(true)).count();
        reports.push(MetricReport::new(
            "flag_rate",
            flagged as f64 / data.len() as f64,
            data.len(),
            json!({ "percentile": p, "threshold": t }),
        ));
    }
    emit_metrics(out, &reports)
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let model = load_model(&a.input.model)?;
    let data = ingest(&a.input.data, a.input.window)?;
    let res = pipeline::run_cluster(&model, &data)?;
    let out = a.input.out.as_deref();
    emit_records(out, "clusters.jsonl", &res.rows)?;
    if let Some(dir) = plot_dir(out, a.plot_data)? {
        write_plot_data(create(dir, "plot.csv")?, &res.scored)?;
    }
    let reports: Vec<_> = res
        .nmi
        .map(|v| MetricReport::new("nmi", v, data.len(), json!({ "K": model.config.k })))
        .into_iter()
        .collect();
    emit_metrics(out, &reports)
}

fn explain(a: ExplainArgs) -> Result<()> {
    let model = load_model(&a.input.model)?;
    let data = ingest(&a.input.data, a.input.window)?;
    let reference = match &a.reference {
        Some(p) => ingest(p, a.input.window)?,
        None => data.clone(),
    };
    let branch = a.branch.map(|b| match b {
        BranchArg::W => BranchKind::W,
        BranchArg::D => BranchKind::D,
    });
    let rep = pipeline::run_explain(&model, &data, &reference, &a.id, a.n_points, a.k_neighbors, branch)?;
    match a.input.out.as_deref() {
        Some(dir) => {
            let mut w = create(dir, "explain.json")?;
            serde_json::to_writer_pretty(&mut w, &rep)?;
            w.flush()?;
        }
        None => println!("{}", serde_json::to_string(&rep)?),
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let data = pipeline::run_synth(&spec, a.seed)?;
    match a.out.as_deref() {
        Some(dir) => write_corpus(create(dir, "corpus.csv")?, &data)?,
        None => write_corpus(io::stdout().lock(), &data)?,
    }
    Ok(())
}

fn eval_dist(a: EvalDistArgs) -> Result<()> {
    let data = ingest(&a.data, a.window)?;
    let model = a.model.as_deref().map(load_model).transpose()?;
    let res = pipeline::run_eval_dist(&data, model.as_ref(), a.dtw_window, a.epsilon)?;
    let out = a.out.as_deref();
    emit_records(out, "distances.jsonl", &res.pairs)?;
    emit_metrics(out, &res.reports)
}
