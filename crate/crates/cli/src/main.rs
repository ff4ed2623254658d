use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tta_conformal::harness::SimulationReport;
use tta_conformal::io::read_header;
use tta_conformal::report::{self, to_json};
use tta_conformal::{
    aggregate_all, analyze, fit_predictor, generate, read_tensor, split_validation, train_weights,
    write_tensor, ExperimentPlan, Logits, Method, Predictor, RngState, ScoreChoice, SynthConfig, TrainConfig,
    TrialConfig, Weights,
};

#[derive(Parser)]
#[command(name = "ttac", version, about = "Conformal prediction sets over test-time-augmented logits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated-split comparison of baseline and TTA methods on a logit file.
    Run(RunArgs),
    /// Monte Carlo coverage trials on synthetic data.
    Simulate(SimulateArgs),
    /// Rank shift, optimal Top-K and class tables for fitted predictors.
    Analyze(AnalyzeArgs),
    /// Print a logit file header.
    Inspect(InspectArgs),
    /// Fit one predictor on a labelled logit file and save it.
    Calibrate(CalibrateArgs),
    /// Prediction sets for every example of a logit file.
    Predict(PredictArgs),
    /// Write a synthetic logit file.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Markdown,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScoreName {
    Aps,
    Raps,
    RapsAuto,
}

#[derive(Args, Clone)]
struct ScoreArgs {
    /// Conformal score; `raps` needs --k-reg and --lambda.
    #[arg(long, value_enum)]
    score: Option<ScoreName>,
    #[arg(long)]
    k_reg: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
}

impl ScoreArgs {
    fn choice(&self) -> Result<Option<ScoreChoice>> {
        Ok(match self.score {
            None => {
                if self.k_reg.is_some() || self.lambda.is_some() {
                    bail!("--k-reg and --lambda need --score raps");
                }
                None
            }
            Some(ScoreName::Aps) => Some(ScoreChoice::Aps),
            Some(ScoreName::RapsAuto) => Some(ScoreChoice::RapsAuto),
            Some(ScoreName::Raps) => match (self.k_reg, self.lambda) {
                (Some(k_reg), Some(lambda)) => Some(ScoreChoice::Raps { k_reg, lambda }),
                _ => bail!("--score raps needs both --k-reg and --lambda"),
            },
        })
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment plan (TOML); flags override its fields.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    tensor: Option<PathBuf>,
    /// Miscoverage levels; repeat or comma-separate.
    #[arg(long = "alpha", value_delimiter = ',')]
    alphas: Vec<f64>,
    #[command(flatten)]
    score: ScoreArgs,
    /// Methods to compare; repeat or comma-separate.
    #[arg(long = "method", value_delimiter = ',')]
    methods: Vec<Method>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    n_splits: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    n_classes: usize,
    /// Per-augmentation signal strength, identity first.
    #[arg(long, value_delimiter = ',', default_value = "2.25,2.25,2.25,2.25")]
    signal: Vec<f64>,
    /// Per-augmentation noise scale.
    #[arg(long, value_delimiter = ',', default_value = "1.5,1.5,1.5,1.5")]
    noise: Vec<f64>,
}

impl SynthArgs {
    fn config(&self, n_examples: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_examples,
            n_classes: self.n_classes,
            signal_strength: self.signal.clone(),
            noise_scale: self.noise.clone(),
            seed,
            ..SynthConfig::default()
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value = "baseline")]
    method: Method,
    #[command(flatten)]
    score: ScoreArgs,
    #[arg(long, default_value_t = 200)]
    n_trials: usize,
    #[arg(long, default_value_t = 625)]
    n_val: usize,
    #[arg(long, default_value_t = 500)]
    n_test: usize,
    #[arg(long, default_value_t = 0.2)]
    beta: f64,
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    tensor: PathBuf,
    /// Fitted predictor as NAME=PATH or PATH; the first is the reference.
    #[arg(long = "predictor")]
    predictors: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
}

#[derive(Args)]
struct InspectArgs {
    file: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[command(flatten)]
    score: ScoreArgs,
    #[arg(long, default_value = "baseline")]
    method: Method,
    /// Fraction that learns weights for tta-learned; the rest calibrates.
    #[arg(long, default_value_t = 0.2)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    predictor: PathBuf,
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 2000)]
    n_examples: usize,
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut shown = e.to_string();
            eprintln!("error: {shown}");
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !shown.ends_with(&c) {
                    eprintln!("  caused by: {c}");
                }
                shown = c;
            }
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => cmd_run(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

fn emit(outputs: &[(&str, String)], dir: Option<&Path>, stdout: &str) -> Result<()> {
    if let Some(dir) = dir {
        for (name, contents) in outputs {
            let path = dir.join(name);
            report::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    print!("{stdout}");
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut plan = match &a.plan {
        Some(p) => ExperimentPlan::load(p).with_context(|| format!("reading plan {}", p.display()))?,
        None => ExperimentPlan::default(),
    };
    if let Some(t) = a.tensor {
        plan.tensor = t;
    }
    if !a.alphas.is_empty() {
        plan.alphas = a.alphas;
    }
    if let Some(s) = a.score.choice()? {
        plan.score = s;
    }
    if !a.methods.is_empty() {
        plan.methods = a.methods;
    }
    plan.beta = a.beta.unwrap_or(plan.beta);
    plan.n_splits = a.n_splits.unwrap_or(plan.n_splits);
    plan.val_fraction = a.val_fraction.unwrap_or(plan.val_fraction);
    plan.seed = a.seed.unwrap_or(plan.seed);
    if let Some(d) = a.output_dir {
        plan.output_dir = d;
    }
    if plan.tensor.as_os_str().is_empty() {
        bail!("no tensor given (use --tensor or set `tensor` in the plan)");
    }
    let r = tta_conformal::run(&plan).with_context(|| format!("running plan on {}", plan.tensor.display()))?;
    let json = to_json(&r)?;
    let md = report::run_markdown(&r);
    let csv = report::summary_csv(&r);
    let stdout = match a.format {
        Format::Json => json.clone(),
        Format::Markdown => md.clone(),
        Format::Csv => csv.clone(),
    };
    emit(
        &[
            ("report.json", json),
            ("report.md", md),
            ("summary.csv", csv),
            ("splits.csv", report::run_csv(&r)),
        ],
        Some(&plan.output_dir),
        &stdout,
    )
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let trial = TrialConfig {
        alpha: a.alpha,
        score: a.score.choice()?.unwrap_or(ScoreChoice::Aps),
        method: a.method,
        n_val: a.n_val,
        n_test: a.n_test,
        beta: a.beta,
        n_trials: a.n_trials,
        train: TrainConfig::default(),
    };
    let r: SimulationReport = tta_conformal::simulate(&a.synth.config(a.n_val + a.n_test, a.seed), &trial, a.seed)?;
    let json = to_json(&r)?;
    let stdout = match a.format {
        Format::Json => json.clone(),
        Format::Markdown => report::simulation_markdown(&r),
        Format::Csv => report::simulation_csv(&r),
    };
    emit(
        &[
            ("simulation.json", json),
            ("coverage.csv", report::simulation_csv(&r)),
            ("coverage_histogram.csv", report::histogram_csv(&r.samples, 20)),
        ],
        a.output_dir.as_deref(),
        &stdout,
    )
}

fn load_predictor(path: &Path) -> Result<Predictor> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading predictor {}", path.display()))?;
    Predictor::from_document(&text).with_context(|| format!("parsing predictor {}", path.display()))
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    if a.predictors.is_empty() {
        bail!("analyze needs at least one --predictor");
    }
    let tensor = load_tensor(&a.tensor)?;
    let predictors = a
        .predictors
        .iter()
        .map(|spec| {
            let (name, path) = match spec.split_once('=') {
                Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                None => {
                    let p = PathBuf::from(spec);
                    let stem = p.file_stem().map_or_else(|| spec.clone(), |s| s.to_string_lossy().into_owned());
                    (stem, p)
                }
            };
            Ok((name, load_predictor(&path)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let r = analyze(&tensor, &predictors, a.seed)?;
    let json = to_json(&r)?;
    let stdout = match a.format {
        Format::Json => json.clone(),
        Format::Markdown => report::analysis_markdown(&r),
        Format::Csv => report::analysis_csv(&r),
    };
    emit(
        &[
            ("analysis.json", json),
            ("top_k.csv", report::top_k_csv(&r)),
            ("rank_shift.csv", report::rank_shift_csv(&r)),
            ("classes.csv", report::analysis_csv(&r)),
        ],
        a.output_dir.as_deref(),
        &stdout,
    )
}

fn load_tensor(path: &Path) -> Result<Logits> {
    read_tensor(path).with_context(|| format!("reading logit file {}", path.display()))
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let h = read_header(&a.file).with_context(|| format!("reading header of {}", a.file.display()))?;
    match a.format {
        Format::Json => {
            let v = serde_json::json!({
                "version": h.version,
                "n_examples": h.n_examples,
                "n_augs": h.n_augs,
                "n_classes": h.n_classes,
                "aug_names": h.aug_names,
            });
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        Format::Markdown => {
            println!("version: {}", h.version);
            println!("examples: {}", h.n_examples);
            println!("augmentations: {} ({})", h.n_augs, h.aug_names.join(", "));
            println!("classes: {}", h.n_classes);
        }
        Format::Csv => {
            println!("version,n_examples,n_augs,n_classes,aug_names");
            println!("{},{},{},{},{}", h.version, h.n_examples, h.n_augs, h.n_classes, h.aug_names.join(";"));
        }
    }
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let tensor = load_tensor(&a.tensor)?;
    let rng = RngState::new(a.seed);
    let score = a.score.choice()?.unwrap_or(ScoreChoice::Aps);
    let names = tensor.aug_names().to_vec();
    let (weights, cal) = match a.method {
        Method::Baseline => (Weights::identity(names), tensor),
        Method::TtaAvg => (Weights::uniform(names), tensor),
        Method::TtaLearned => {
            let split = split_validation(tensor.n_examples(), a.beta, &rng.derive("tta-split"))?;
            let w = train_weights(&tensor, &split.tta_indices, &TrainConfig::default(), &rng.derive("init"))?;
            (w.weights, tensor.select(&split.cal_indices))
        }
    };
    let probs = aggregate_all(&cal, &weights)?;
    let predictor = fit_predictor(&probs, cal.labels(), a.alpha, score, &rng)?
        .predictor
        .with_weights(weights);
    report::write(&a.out, &predictor.to_document()?).with_context(|| format!("writing {}", a.out.display()))?;
    println!("q_hat = {} on {} calibration examples", predictor.q_hat, predictor.n_cal);
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let predictor = load_predictor(&a.predictor)?;
    let tensor = load_tensor(&a.tensor)?;
    let probs = aggregate_all(&tensor, &predictor.aug_weights)?;
    let sets = predictor.predict_sets(&probs, &RngState::new(a.seed));
    let hits = sets.iter().zip(tensor.labels()).filter(|(s, &y)| s.contains(y)).count();
    let n = sets.len() as f64;
    let avg = sets.iter().map(|s| s.set_size()).sum::<usize>() as f64 / n;
    match a.format {
        Format::Json => {
            let v = serde_json::json!({
                "n_examples": sets.len(),
                "coverage": hits as f64 / n,
                "avg_set_size": avg,
                "sets": sets.iter().map(|s| s.members()).collect::<Vec<_>>(),
            });
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        Format::Csv => {
            println!("example,label,size,members");
            for (i, (s, y)) in sets.iter().zip(tensor.labels()).enumerate() {
                let m: Vec<String> = s.members().iter().map(ToString::to_string).collect();
                println!("{i},{y},{},{}", s.set_size(), m.join(";"));
            }
        }
        Format::Markdown => {
            println!("examples: {}", sets.len());
            println!("coverage: {:.4}", hits as f64 / n);
            println!("average set size: {avg:.4}");
        }
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let t = generate(&a.synth.config(a.n_examples, a.seed))?;
    write_tensor(&t, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "wrote {} examples × {} views × {} classes to {}",
        t.n_examples(),
        t.n_augs(),
        t.n_classes(),
        a.out.display()
    );
    Ok(())
}
