//! `docbench` command-line entry point.
//!
//! Exit codes: 0 on success, 1 when the input (arguments, config or data
//! files) is bad, 2 when something fails internally.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use docbench::assembly::{assemble_document, AssemblyPage, Decision};
use docbench::cmcv::{stratify_manifest, ModelOutputSet};
use docbench::config::Config;
use docbench::ddas::{cluster_weights, kmeans, sample_plan, EmbeddedItem};
use docbench::otsl::{otsl_to_html, parse_otsl, restore_placeholders, PlaceholderMap};
use docbench::protocol::{evaluate_manifest, predictions_from_jsonl, EvalOptions, Manifest, TierLabel};

#[derive(Parser, Debug)]
#[command(name = "docbench", version, about = "Document parsing evaluation and data curation toolkit")]
struct Cli {
    /// TOML config file; falls back to $DOCBENCH_CONFIG, then to defaults.
    #[arg(long, global = true, env = "DOCBENCH_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads for page-parallel work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score predictions against a ground-truth manifest.
    Evaluate(EvaluateArgs),
    /// Assign difficulty tiers from multi-model outputs.
    Stratify(StratifyArgs),
    /// Draw a difficulty-aware sample from embedded items.
    Sample(SampleArgs),
    /// Convert an OTSL table stream to HTML.
    Otsl2html(OtslArgs),
    /// Apply paragraph and cross-page table merge decisions.
    Assemble(AssembleArgs),
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value = "full")]
    tier: TierLabel,
    /// Report JSON; the markdown table goes next to it with a .md extension.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model_name: Option<String>,
    /// Drop per-page scores from the JSON report.
    #[arg(long)]
    summary_only: bool,
}

#[derive(Args, Debug)]
struct StratifyArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    budget: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct OtslArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON object mapping placeholder names to image markup.
    #[arg(long)]
    placeholders: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AssembleArgs {
    #[arg(long)]
    pages: PathBuf,
    #[arg(long)]
    decisions: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

type Outcome<T> = Result<T, Failure>;

trait InputContext<T> {
    fn input(self, what: impl FnOnce() -> String) -> Outcome<T>;
    fn internal(self, what: impl FnOnce() -> String) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> InputContext<T> for Result<T, E> {
    fn input(self, what: impl FnOnce() -> String) -> Outcome<T> {
        self.map_err(|e| Failure::Input(e.into().context(what())))
    }

    fn internal(self, what: impl FnOnce() -> String) -> Outcome<T> {
        self.map_err(|e| Failure::Internal(e.into().context(what())))
    }
}

fn read(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).input(|| format!("reading {}", path.display()))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Outcome<Vec<T>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line).input(|| format!("{} line {}", path.display(), i + 1))?;
        out.push(value);
    }
    Ok(out)
}

fn write(path: &Path, contents: &str) -> Outcome<()> {
    fs::write(path, contents).internal(|| format!("writing {}", path.display()))
}

fn jsonl<T: Serialize>(rows: &[T]) -> Outcome<String> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).internal(|| "serializing output".into())?);
        s.push('\n');
    }
    Ok(s)
}

fn load_config(path: Option<&Path>) -> Outcome<Config> {
    let config = match path {
        Some(p) => toml::from_str(&read(p)?).input(|| format!("parsing config {}", p.display()))?,
        None => Config::default(),
    };
    config.validate().input(|| "invalid config".into())?;
    Ok(config)
}

fn evaluate(args: EvaluateArgs, config: &Config) -> Outcome<()> {
    let manifest = Manifest::from_jsonl(&read(&args.gt)?).input(|| format!("loading {}", args.gt.display()))?;
    let preds = predictions_from_jsonl(&read(&args.pred)?).input(|| format!("loading {}", args.pred.display()))?;
    let name = args.model_name.as_deref().unwrap_or(&config.report.model_name);
    let opts = EvalOptions { mgam: config.mgam };
    let mut report = evaluate_manifest(&manifest, &preds, args.tier, name, &opts, config.report.jobs)
        .input(|| "evaluation failed".into())?;
    let markdown = report.to_markdown();
    if args.summary_only {
        report.pages.clear();
    }
    let json = serde_json::to_string_pretty(&report).internal(|| "serializing report".into())?;
    write(&args.out, &format!("{json}\n"))?;
    write(&args.out.with_extension("md"), &markdown)?;
    for w in &report.warnings {
        tracing::warn!("{w}");
    }
    print!("{markdown}");
    Ok(())
}

fn stratify(args: StratifyArgs, config: &Config) -> Outcome<()> {
    let samples: Vec<ModelOutputSet> = read_jsonl(&args.samples)?;
    let result = stratify_manifest(&samples, &config.cmcv);
    write(&args.out, &jsonl(&result.records)?)?;
    println!("{}", serde_json::to_string(&result.counts).internal(|| "serializing counts".into())?);
    Ok(())
}

fn sample(args: SampleArgs, config: &Config) -> Outcome<()> {
    let items: Vec<EmbeddedItem> = read_jsonl(&args.embeddings)?;
    let mut km = config.ddas.kmeans();
    km.k = args.k.unwrap_or(km.k);
    km.seed = args.seed.unwrap_or(km.seed);
    let weights_params = config.ddas.weights();
    let model = kmeans(&items, &km).input(|| "clustering failed".into())?;
    let weights = cluster_weights(&model, &items, &weights_params).input(|| "cluster weighting failed".into())?;
    let plan = sample_plan(&model, &items, &weights, args.budget, km.seed, &weights_params)
        .input(|| "sampling failed".into())?;
    write(&args.out, &jsonl(&plan.rows(&model, &items))?)?;
    for w in &plan.warnings {
        tracing::warn!("{w}");
    }
    let summary = serde_json::json!({
        "k": model.k,
        "seed": km.seed,
        "budget": plan.budget,
        "selected": plan.included.len(),
        "quotas": plan.quotas,
        "weights": plan.weights,
    });
    println!("{summary}");
    Ok(())
}

fn otsl2html(args: OtslArgs) -> Outcome<()> {
    let stream = read(&args.input)?;
    let mut table = parse_otsl(&stream).input(|| format!("parsing {}", args.input.display()))?;
    if let Some(p) = &args.placeholders {
        let map: PlaceholderMap = serde_json::from_str(&read(p)?).input(|| format!("parsing {}", p.display()))?;
        table = restore_placeholders(&table, &map).input(|| "restoring placeholders".into())?;
    }
    write(&args.out, &format!("{}\n", otsl_to_html(&table)))
}

fn assemble(args: AssembleArgs) -> Outcome<()> {
    let pages: Vec<AssemblyPage> = read_jsonl(&args.pages)?;
    let decisions: Vec<Decision> = read_jsonl(&args.decisions)?;
    let out = assemble_document(&pages, &decisions).input(|| "assembly failed".into())?;
    write(&args.out, &jsonl(&out)?)
}

fn run(cli: Cli) -> Outcome<()> {
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Failure::Input(anyhow!("--jobs must be at least 1")));
        }
        config.report.jobs = j;
    }
    match cli.command {
        Command::Evaluate(a) => evaluate(a, &config),
        Command::Stratify(a) => stratify(a, &config),
        Command::Sample(a) => sample(a, &config),
        Command::Otsl2html(a) => otsl2html(a),
        Command::Assemble(a) => assemble(a),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(2)
        }
    }
}
