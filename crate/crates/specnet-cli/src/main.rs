//! specnet command-line interface: train, calibrate, evaluate, predict,
//! benchmark, synthesize corpora and apply structural perturbations.
//!
//! Exit codes: 0 success, 2 model errors, 3 data errors, 4 config/usage
//! errors, 5 numeric errors.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use specnet::bundle::{self, ModelBundle};
use specnet::config::{Ablation, TrainConfig};
use specnet::error::Error;
use specnet::ingest::{load_manifest, RawPage};
use specnet::perturb::{self, PerturbationKind, PerturbationSpec};
use specnet::synth::{self, SynthSpec};
use specnet::train;

const EXIT_MODEL: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_CONFIG: u8 = 4;
const EXIT_NUMERIC: u8 = 5;

#[derive(Parser)]
#[command(name = "specnet", version, about = "Reference-free phishing detection from domain names and HTML structure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Suppress informational logging.
    #[arg(long, global = true)]
    quiet: bool,
    /// Override the seed (also SPECNET_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for predict/eval (also SPECNET_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on manifest data.
    Train(TrainArgs),
    /// Recalibrate the reconstruction threshold of an existing model.
    Calibrate(CalibrateArgs),
    /// Evaluate a model on a labeled manifest.
    Eval(EvalArgs),
    /// Classify pages; one JSON report line per page.
    Predict(PredictArgs),
    /// Measure end-to-end latency bucketed by document size.
    Bench(BenchArgs),
    /// Generate a synthetic two-family corpus.
    Synth(SynthArgs),
    /// Apply structural perturbations to a manifest of pages.
    Perturb(PerturbArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Output bundle path.
    #[arg(long)]
    model: PathBuf,
    /// Ablation variant override (none, no_classification_loss,
    /// no_reconstruction_loss, no_decoder, no_autoencoder, no_gcn, no_domain).
    #[arg(long)]
    ablation: Option<String>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Write here instead of updating the input bundle in place.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Write the metrics JSON here as well as to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Manifest of pages to classify.
    #[arg(long, conflicts_with_all = ["html", "domain"])]
    manifest: Option<PathBuf>,
    /// Single HTML file to classify.
    #[arg(long)]
    html: Option<PathBuf>,
    /// Domain for single-page mode.
    #[arg(long, requires = "html")]
    domain: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (created if needed).
    #[arg(long)]
    out: PathBuf,
    /// Total templates across both families.
    #[arg(long, default_value_t = 8)]
    templates: usize,
    /// Pages generated per template.
    #[arg(long, default_value_t = 25)]
    pages: usize,
    /// Structural mutation level in [0, 1].
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    /// Comma-separated per-class page counts for train,val,test manifests.
    #[arg(long)]
    split: Option<String>,
    /// Scales template sizes (for latency benching).
    #[arg(long, default_value_t = 1.0)]
    node_scale: f64,
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Perturbation kind; repeat for several (applied in order).
    #[arg(long = "kind", required = true)]
    kinds: Vec<String>,
    /// Fraction of eligible sites perturbed.
    #[arg(long, default_value_t = 0.1)]
    intensity: f64,
}

fn error_exit_code(err: &Error) -> u8 {
    match err {
        Error::UnsupportedVersion { .. } | Error::CorruptBundle(_) => EXIT_MODEL,
        Error::Config(_) => EXIT_CONFIG,
        Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } | Error::Shape { .. } => {
            EXIT_NUMERIC
        }
        Error::IoFailure { .. }
        | Error::FileMissing { .. }
        | Error::EmptyCorpus
        | Error::EmptyDataset
        | Error::OversizeDocument { .. }
        | Error::MissingDomain
        | Error::DuplicateDomain
        | Error::CalibrationDegenerate => EXIT_DATA,
    }
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(error_exit_code(err))
}

fn fail_with(err: &Error, code: u8) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code)
}

/// Print to stdout, tolerating a closed pipe (e.g. piping into `head`).
fn emit(text: &str) {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let _ = writeln!(lock, "{text}");
    let _ = lock.flush();
}

fn env_u64(name: &str) -> Option<u64> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

fn load_model(path: &Path) -> Result<ModelBundle, ExitCode> {
    bundle::load_bundle(path).map_err(|e| fail_with(&e, EXIT_MODEL))
}

/// Read every page of a manifest; per-page file errors are reported on
/// stderr and skipped.
fn read_pages_lossy(path: &Path) -> Result<(Vec<RawPage>, usize), ExitCode> {
    let reader = load_manifest(path).map_err(|e| fail_with(&e, EXIT_DATA))?;
    let mut pages = Vec::new();
    let mut errors = 0usize;
    for item in reader {
        match item {
            Ok(page) => pages.push(page),
            Err(e) => {
                errors += 1;
                eprintln!("error: {e}");
            }
        }
    }
    Ok((pages, errors))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_CONFIG),
            };
        }
    };

    env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or(if cli.quiet { "error" } else { "info" }),
    )
    .format_timestamp(None)
    .init();

    let seed = cli.seed.or_else(|| env_u64("SPECNET_SEED"));
    let threads = cli
        .threads
        .or_else(|| env_u64("SPECNET_THREADS").map(|v| v as usize))
        .unwrap_or(1)
        .max(1);

    match cli.command {
        Command::Train(args) => cmd_train(args, seed),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Eval(args) => cmd_eval(args, threads),
        Command::Predict(args) => cmd_predict(args, threads),
        Command::Bench(args) => cmd_bench(args),
        Command::Synth(args) => cmd_synth(args, seed),
        Command::Perturb(args) => cmd_perturb(args, seed),
    }
}

fn cmd_train(args: TrainArgs, seed: Option<u64>) -> ExitCode {
    let (mut cfg, warnings) = match &args.config {
        Some(path) => match TrainConfig::from_file(path) {
            Ok(x) => x,
            Err(e) => return fail_with(&e, EXIT_CONFIG),
        },
        None => (TrainConfig::default(), Vec::new()),
    };
    for w in &warnings {
        log::warn!("config: {w}");
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(ablation) = &args.ablation {
        cfg.ablation = match Ablation::parse(ablation) {
            Ok(a) => a,
            Err(e) => return fail_with(&e, EXIT_CONFIG),
        };
    }
    let train_pages = match read_pages_lossy(&args.train) {
        Ok((pages, _)) => pages,
        Err(code) => return code,
    };
    let val_pages = match read_pages_lossy(&args.val) {
        Ok((pages, _)) => pages,
        Err(code) => return code,
    };
    let bundle = match train::train(&cfg, &train_pages, &val_pages) {
        Ok(b) => b,
        Err(e) => return fail(&e),
    };
    if let Err(e) = bundle::save_bundle(&bundle, &args.model) {
        return fail_with(&e, EXIT_MODEL);
    }
    log::info!(
        "model saved to {} (best validation macro-F1 {:.4}, tau {:.6})",
        args.model.display(),
        bundle.metadata.best_val_macro_f1,
        bundle.tau
    );
    ExitCode::SUCCESS
}

fn cmd_calibrate(args: CalibrateArgs) -> ExitCode {
    let mut bundle = match load_model(&args.model) {
        Ok(b) => b,
        Err(code) => return code,
    };
    let val_pages = match read_pages_lossy(&args.val) {
        Ok((pages, _)) => pages,
        Err(code) => return code,
    };
    let tau = match train::calibrate(&mut bundle, &val_pages) {
        Ok(tau) => tau,
        Err(e) => return fail(&e),
    };
    let out = args.out.unwrap_or(args.model);
    if let Err(e) = bundle::save_bundle(&bundle, &out) {
        return fail_with(&e, EXIT_MODEL);
    }
    emit(&format!("{{\"tau\": {tau}}}"));
    ExitCode::SUCCESS
}

fn cmd_eval(args: EvalArgs, threads: usize) -> ExitCode {
    let bundle = match load_model(&args.model) {
        Ok(b) => b,
        Err(code) => return code,
    };
    let pages = match read_pages_lossy(&args.manifest) {
        Ok((pages, _)) => pages,
        Err(code) => return code,
    };
    let report = match train::evaluate(&bundle, &pages, threads) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(path) = &args.report {
        if let Err(e) = std::fs::write(path, &json) {
            return fail_with(&Error::io(path, e), EXIT_DATA);
        }
    }
    emit(&json);
    ExitCode::SUCCESS
}

fn cmd_predict(args: PredictArgs, threads: usize) -> ExitCode {
    let bundle = match load_model(&args.model) {
        Ok(b) => b,
        Err(code) => return code,
    };
    let pages: Vec<RawPage> = if let Some(manifest) = &args.manifest {
        match read_pages_lossy(manifest) {
            Ok((pages, _)) => pages,
            Err(code) => return code,
        }
    } else if let Some(html_path) = &args.html {
        match std::fs::read(html_path) {
            Ok(html) => vec![RawPage {
                html,
                domain: args.domain.clone(),
                label: None,
            }],
            Err(e) => return fail_with(&Error::io(html_path, e), EXIT_DATA),
        }
    } else {
        eprintln!("error: predict needs --manifest or --html");
        return ExitCode::from(EXIT_CONFIG);
    };

    let reports: Vec<Result<specnet::model::ReconstructionReport, Error>> = if threads > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| {
                use rayon::prelude::*;
                pages
                    .par_iter()
                    .map(|p| train::predict_page(&bundle, p))
                    .collect()
            }),
            Err(e) => return fail_with(&Error::Config(format!("thread pool: {e}")), EXIT_CONFIG),
        }
    } else {
        pages
            .iter()
            .map(|p| train::predict_page(&bundle, p))
            .collect()
    };

    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    let mut produced = 0usize;
    for report in reports {
        match report {
            Ok(r) => {
                produced += 1;
                let line = serde_json::to_string(&r).expect("report serializes");
                if writeln!(out, "{line}").is_err() {
                    break; // downstream closed the pipe
                }
            }
            Err(e) => eprintln!("error: {e}"),
        }
    }
    let _ = out.flush();
    if produced == 0 {
        eprintln!("error: zero processable pages");
        return ExitCode::from(EXIT_DATA);
    }
    ExitCode::SUCCESS
}

#[derive(serde::Serialize)]
struct BenchBucket {
    nodes: String,
    pages: usize,
    latency_ms_p50: f64,
    latency_ms_p90: f64,
    latency_ms_mean: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() as f64) * q).ceil() as usize;
    sorted[idx.saturating_sub(1).min(sorted.len() - 1)]
}

fn cmd_bench(args: BenchArgs) -> ExitCode {
    let bundle = match load_model(&args.model) {
        Ok(b) => b,
        Err(code) => return code,
    };
    let pages = match read_pages_lossy(&args.manifest) {
        Ok((pages, _)) => pages,
        Err(code) => return code,
    };
    // Single-threaded timing so per-page numbers are machine-comparable.
    let mut samples: Vec<(usize, f64)> = Vec::with_capacity(pages.len());
    for page in &pages {
        let nodes = match specnet::ingest::parse_html_capped(&page.html, bundle.config.max_nodes) {
            Ok(tree) => tree.len(),
            Err(e) => {
                eprintln!("error: {e}");
                continue;
            }
        };
        match train::predict_page(&bundle, page) {
            Ok(report) => samples.push((nodes, report.latency_ms)),
            Err(e) => eprintln!("error: {e}"),
        }
    }
    if samples.is_empty() {
        eprintln!("error: zero processable pages");
        return ExitCode::from(EXIT_DATA);
    }
    type BucketPredicate = fn(usize) -> bool;
    let buckets: [(&str, BucketPredicate); 4] = [
        ("<500", |n| n < 500),
        ("500-2000", |n| (500..2000).contains(&n)),
        ("2000-10000", |n| (2000..10000).contains(&n)),
        (">10000", |n| n >= 10000),
    ];
    let mut table = Vec::new();
    for (name, pred) in &buckets {
        let mut lat: Vec<f64> = samples
            .iter()
            .filter(|(n, _)| pred(*n))
            .map(|(_, l)| *l)
            .collect();
        lat.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        if lat.is_empty() {
            continue;
        }
        table.push(BenchBucket {
            nodes: name.to_string(),
            pages: lat.len(),
            latency_ms_p50: percentile(&lat, 0.5),
            latency_ms_p90: percentile(&lat, 0.9),
            latency_ms_mean: lat.iter().sum::<f64>() / lat.len() as f64,
        });
    }
    let mut all: Vec<f64> = samples.iter().map(|(_, l)| *l).collect();
    all.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let summary = serde_json::json!({
        "pages": all.len(),
        "latency_ms_p50": percentile(&all, 0.5),
        "latency_ms_p90": percentile(&all, 0.9),
        "buckets": table,
    });
    emit(&serde_json::to_string_pretty(&summary).expect("serializes"));
    ExitCode::SUCCESS
}

fn cmd_synth(args: SynthArgs, seed: Option<u64>) -> ExitCode {
    let spec = SynthSpec {
        templates: args.templates,
        pages_per_template: args.pages,
        noise: args.noise,
        seed: seed.unwrap_or(1),
        node_scale: args.node_scale,
    };
    let splits = match &args.split {
        None => None,
        Some(text) => {
            let names = ["train", "val", "test"];
            let counts: Vec<usize> = text
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .unwrap_or_default();
            if counts.is_empty() || counts.len() > 3 {
                eprintln!("error: --split wants 1-3 comma-separated counts, e.g. 500,100,200");
                return ExitCode::from(EXIT_CONFIG);
            }
            Some(
                counts
                    .into_iter()
                    .enumerate()
                    .map(|(i, n)| (names[i].to_string(), n))
                    .collect::<Vec<_>>(),
            )
        }
    };
    match synth::generate(&args.out, &spec, splits.as_deref()) {
        Ok(summary) => {
            log::info!(
                "wrote {} pages, manifests: {}",
                summary.pages,
                summary
                    .manifests
                    .iter()
                    .map(|m| m.display().to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn cmd_perturb(args: PerturbArgs, seed: Option<u64>) -> ExitCode {
    let kinds: Result<Vec<PerturbationKind>, Error> = args
        .kinds
        .iter()
        .map(|k| PerturbationKind::parse(k))
        .collect();
    let kinds = match kinds {
        Ok(k) => k,
        Err(e) => return fail_with(&e, EXIT_CONFIG),
    };
    let spec = PerturbationSpec {
        kinds,
        intensity: args.intensity,
        seed: seed.unwrap_or(1),
    };
    if let Err(e) = spec.validate() {
        return fail_with(&e, EXIT_CONFIG);
    }
    let reader = match load_manifest(&args.manifest) {
        Ok(r) => r,
        Err(e) => return fail_with(&e, EXIT_DATA),
    };
    let pages_dir = args.out.join("pages");
    if let Err(e) = std::fs::create_dir_all(&pages_dir) {
        return fail_with(&Error::io(&pages_dir, e), EXIT_DATA);
    }
    let mut manifest_lines = Vec::new();
    let mut index = 0u64;
    for item in reader {
        let page = match item {
            Ok(p) => p,
            Err(e) => {
                eprintln!("error: {e}");
                continue;
            }
        };
        let mut rng = perturb::page_rng(spec.seed, index);
        let (html, _log) = match perturb::perturb_html(&page.html, &spec, &mut rng) {
            Ok(x) => x,
            Err(e) => {
                eprintln!("error: {e}");
                continue;
            }
        };
        let file = format!("pages/page_{index:05}.html");
        let path = args.out.join(&file);
        if let Err(e) = std::fs::write(&path, &html) {
            return fail_with(&Error::io(&path, e), EXIT_DATA);
        }
        let domain = match &page.domain {
            Some(d) => format!("\"{}\"", d.replace('"', "")),
            None => "null".to_string(),
        };
        let label = match page.label {
            Some(l) => l.to_string(),
            None => "null".to_string(),
        };
        manifest_lines.push(format!(
            "{{\"html_path\": \"{file}\", \"domain\": {domain}, \"label\": {label}}}"
        ));
        index += 1;
    }
    if manifest_lines.is_empty() {
        eprintln!("error: zero processable pages");
        return ExitCode::from(EXIT_DATA);
    }
    let manifest_path = args.out.join("manifest.jsonl");
    if let Err(e) = std::fs::write(&manifest_path, manifest_lines.join("\n") + "\n") {
        return fail_with(&Error::io(&manifest_path, e), EXIT_DATA);
    }
    log::info!(
        "wrote {} perturbed pages to {}",
        manifest_lines.len(),
        args.out.display()
    );
    ExitCode::SUCCESS
}
