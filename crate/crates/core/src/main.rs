use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pairwise_irt::decimation::run_decimation;
use pairwise_irt::experiment::{
    collect_report, emit_figures_data, fmt_f64, read_json, run_experiment, simulate, write_json, write_report,
    write_sorted, write_sweep, write_trajectory, ExperimentConfig, ExperimentReport, Method, Preset,
};
use pairwise_irt::l1::{default_lambda_grid, lambda_sweep};
use pairwise_irt::metrics::RecoveryMetrics;
use pairwise_irt::model::ModelParams;
use pairwise_irt::sampler::McmcMethod;
use pairwise_irt::scores::ScoreMatrix;

#[derive(Parser)]
#[command(name = "pairwise-irt", version, about = "Detect cheating pairs in answer sheets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a truth and an answer sheet.
    Generate(GenerateArgs),
    /// Decimation on an answer sheet.
    FitDecimation(FitArgs),
    /// L1 penalty sweep on an answer sheet.
    FitL1(FitL1Args),
    /// Batch experiment with report and figure data.
    Sweep(SweepArgs),
    /// Rebuild the report and figure data from an existing output directory.
    Report(ReportArgs),
}

/// Settings shared by every subcommand that builds a configuration.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting point when no config file is given.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of examinees.
    #[arg(long = "I")]
    examinees: Option<usize>,
    /// Number of problems (comma-separated for a grid).
    #[arg(long = "J", value_delimiter = ',')]
    problems: Vec<usize>,
    /// Cheating-pair probability (comma-separated for a grid).
    #[arg(long, value_delimiter = ',')]
    p: Vec<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long = "lambda-grid", value_delimiter = ',')]
    lambda_grid: Vec<f64>,
    /// Variance of the ability and difficulty draws.
    #[arg(long)]
    variance: Option<f64>,
    /// Heat-bath sweeps per column.
    #[arg(long)]
    sweeps: Option<usize>,
    /// Sampler: gibbs or exact.
    #[arg(long)]
    method: Option<String>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name.parse::<Preset>()?),
            (None, None) => ExperimentConfig::default(),
        };
        if let (Some(_), Some(name)) = (&self.config, &self.preset) {
            bail!("--config and --preset {name} are mutually exclusive");
        }
        if let Some(s) = self.seed {
            cfg.base_seed = s;
            cfg.generation.seed = s;
        }
        if let Some(i) = self.examinees {
            cfg.generation.examinees = i;
        }
        if !self.problems.is_empty() {
            cfg.generation.problems = self.problems[0];
            cfg.problem_counts = self.problems.clone();
        }
        if !self.p.is_empty() {
            cfg.generation.p = self.p[0];
            cfg.p_values = self.p.clone();
        }
        if let Some(r) = self.rho {
            cfg.rho = r;
        }
        if !self.lambda_grid.is_empty() {
            cfg.lambda_grid = self.lambda_grid.clone();
        }
        if let Some(v) = self.variance {
            cfg.generation.param_variance = v;
        }
        if let Some(s) = self.sweeps {
            cfg.generation.mcmc_sweeps = s;
        }
        if let Some(m) = &self.method {
            cfg.generation.mcmc_method = m.parse::<McmcMethod>()?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Overrides,
    /// Output directory for scores.csv, truth.json and generation.toml.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Overrides,
    /// Answer sheet CSV (one row per examinee).
    #[arg(long)]
    scores: PathBuf,
    /// Truth JSON, for error and ROC columns.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitL1Args {
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Methods to run: decimation, l1 (comma-separated).
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of a previous sweep.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::FitDecimation(a) => fit_decimation(a),
        Command::FitL1(a) => fit_l1(a.fit),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => {
            let cfg = ExperimentConfig::load(&a.out.join("config.toml"))?;
            let cfg = ExperimentConfig { output_dir: a.out, ..cfg };
            let report = collect_report(&cfg)?;
            write_report(&report)?;
            finish(&report)
        }
    }
}

fn generate(a: GenerateArgs) -> Result<ExitCode> {
    let cfg = a.common.resolve()?;
    let gen = cfg.generation;
    let (truth, scores) = simulate(&gen)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    scores.save(&a.out.join("scores.csv"))?;
    write_json(&a.out.join("truth.json"), &truth)?;
    let toml = toml::to_string(&gen)?;
    std::fs::write(a.out.join("generation.toml"), toml)?;
    println!(
        "{} examinees x {} problems, {} cheating pairs, fraction correct {}",
        scores.examinees(),
        scores.problems(),
        truth.couplings().support().len(),
        fmt_f64(scores.fraction_correct())
    );
    Ok(ExitCode::SUCCESS)
}

fn load_inputs(a: &FitArgs) -> Result<(ExperimentConfig, ScoreMatrix, Option<ModelParams>)> {
    let cfg = a.common.resolve()?;
    let scores = ScoreMatrix::load(&a.scores)?;
    let truth = match &a.truth {
        Some(path) => Some(read_json::<ModelParams>(path)?),
        None => None,
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    Ok((cfg, scores, truth))
}

fn fit_decimation(a: FitArgs) -> Result<ExitCode> {
    let (cfg, scores, truth) = load_inputs(&a)?;
    let traj = run_decimation(&scores, &cfg.prior, cfg.rho, &cfg.fit)?;
    write_trajectory(&a.out, &traj, truth.as_ref())?;
    let term = traj.terminal();
    write_json(&a.out.join("decimation_params.json"), &term.params)?;
    println!(
        "terminal step {} of {}: {} active pairs, x = {}",
        traj.terminal_index,
        traj.steps.len() - 1,
        term.active.len(),
        fmt_f64(term.x)
    );
    if let Some(t) = &truth {
        print_metrics(&RecoveryMetrics::evaluate(t, &term.params, &term.active));
    }
    Ok(ExitCode::SUCCESS)
}

fn fit_l1(a: FitArgs) -> Result<ExitCode> {
    let (cfg, scores, truth) = load_inputs(&a)?;
    let grid = if cfg.lambda_grid.is_empty() {
        default_lambda_grid(&scores, &cfg.prior, &cfg.fit)?
    } else {
        cfg.lambda_grid.clone()
    };
    let sweep = lambda_sweep(&scores, &cfg.prior, &grid, truth.as_ref(), &cfg.fit)?;
    write_sweep(&a.out, &sweep)?;
    if let Some(l) = sweep.empirical_lambda_max {
        println!("every coupling pruned from lambda = {}", fmt_f64(l));
    }
    // Without a truth the smallest penalty is dumped.
    let chosen = sweep.oracle().unwrap_or(&sweep.records[0]);
    write_sorted(&a.out.join("l1_sorted_couplings.csv"), chosen.params())?;
    write_json(&a.out.join("l1_params.json"), chosen.params())?;
    if let (Some(t), Some(o)) = (&truth, sweep.oracle()) {
        println!("oracle lambda = {}", fmt_f64(o.lambda));
        print_metrics(&RecoveryMetrics::evaluate(t, o.params(), &o.support()));
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(a: SweepArgs) -> Result<ExitCode> {
    let mut cfg = a.common.resolve()?;
    if let Some(out) = a.out {
        cfg.output_dir = out;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if !a.methods.is_empty() {
        cfg.methods = a.methods.iter().map(|m| m.parse::<Method>()).collect::<Result<_, _>>()?;
    }
    let report = run_experiment(&cfg)?;
    finish(&report)
}

fn finish(report: &ExperimentReport) -> Result<ExitCode> {
    if !report.rows.is_empty() {
        for path in emit_figures_data(report)? {
            println!("wrote {}", relative(&path, &report.output_dir));
        }
    }
    println!(
        "{} result rows in {}",
        report.rows.len(),
        report.output_dir.join("report.csv").display()
    );
    if report.failures.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!("{} runs failed:", report.failures.len());
    for f in &report.failures {
        eprintln!("  {}: {}", f.dir.display(), f.message);
    }
    Ok(ExitCode::from(2))
}

fn print_metrics(m: &RecoveryMetrics) {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_else(|| "n/a".into());
    println!(
        "err_w {}  err_theta {}  err_d {}  tpr {}  tnr {}",
        opt(m.err_w),
        opt(m.err_theta),
        opt(m.err_d),
        fmt_f64(m.tpr),
        fmt_f64(m.tnr)
    );
}

fn relative(path: &Path, root: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).display().to_string()
}
