//! Seeded batch experiments over cheating probability, problem count and
//! method, with every artifact persisted per run.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! config.toml                    resolved configuration
//! metadata.json                  hash, version, timings (never compared)
//! report.csv, summary.csv        one row per run / per (method, p, J, metric)
//! failures.csv                   only when some run failed
//! runs/p{p}_J{J}/rep{r}/         truth, scores, trajectory, sweep, result.json
//! figures/                       data series from `emit_figures_data`
//! ```
//!
//! A run is complete when its `result.json` exists; re-running skips it.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decimation::{run_decimation, DecimationTrajectory};
use crate::error::{Error, Result};
use crate::l1::{default_lambda_grid, lambda_sweep, sorted_magnitudes, L1SweepResult};
use crate::metrics::{err_w, roc_from_trajectory, RecoveryMetrics, Summary};
use crate::model::ModelParams;
use crate::plm::{FitOptions, PriorConfig};
use crate::rng::{replicate_seed, rng_from_seed};
use crate::sampler::{generate_scores, generate_truth, GenerationConfig};
use crate::scores::ScoreMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Decimation,
    L1,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Decimation => "decimation",
            Method::L1 => "l1",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decimation" => Ok(Method::Decimation),
            "l1" => Ok(Method::L1),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Full protocol: 30 examinees, p from 0 to 0.25, J in {500, 1000, 2000},
    /// 100 replicates, both methods.
    Paper,
    /// ROC series over p in {0.1, 0.125, 0.15} at J = 1000.
    RocP,
    /// ROC series over J in {1000, 1600, 2000} at p = 0.15.
    RocJ,
    /// 15 examinees, J = 1000, p = 0.1, 10 replicates, both methods.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "roc-p" => Ok(Preset::RocP),
            "roc-j" => Ok(Preset::RocJ),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset {other:?} (expected paper, roc-p, roc-j or desk)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Template for every run; `p`, `problems` and `seed` are set per run.
    pub generation: GenerationConfig,
    pub prior: PriorConfig,
    pub fit: FitOptions,
    /// Fraction of all pairs decimated per step.
    pub rho: f64,
    /// Empty means a per-dataset default grid.
    pub lambda_grid: Vec<f64>,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub base_seed: u64,
    /// Empty means `generation.p` alone.
    pub p_values: Vec<f64>,
    /// Empty means `generation.problems` alone.
    pub problem_counts: Vec<usize>,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Write each run's answer sheet next to its truth.
    pub save_scores: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::preset(Preset::Desk)
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = ExperimentConfig {
            generation: GenerationConfig::default(),
            prior: PriorConfig::default(),
            fit: FitOptions::default(),
            rho: 0.05,
            lambda_grid: Vec::new(),
            methods: vec![Method::Decimation, Method::L1],
            replicates: 100,
            base_seed: 0,
            p_values: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25],
            problem_counts: vec![500, 1000, 2000],
            output_dir: PathBuf::from("out"),
            workers: 0,
            save_scores: true,
        };
        match preset {
            Preset::Paper => base,
            Preset::RocP => ExperimentConfig {
                methods: vec![Method::Decimation],
                p_values: vec![0.1, 0.125, 0.15],
                problem_counts: vec![1000],
                ..base
            },
            Preset::RocJ => ExperimentConfig {
                methods: vec![Method::Decimation],
                p_values: vec![0.15],
                problem_counts: vec![1000, 1600, 2000],
                ..base
            },
            Preset::Desk => ExperimentConfig {
                generation: GenerationConfig {
                    examinees: 15,
                    ..GenerationConfig::default()
                },
                replicates: 10,
                p_values: vec![0.1],
                problem_counts: vec![1000],
                ..base
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("config: {e}")))
    }

    /// SHA-256 of the TOML form, hex encoded. The output directory and
    /// worker count do not change results and are left out.
    pub fn hash(&self) -> Result<String> {
        let key = ExperimentConfig {
            output_dir: PathBuf::new(),
            workers: 0,
            ..self.clone()
        };
        Ok(hex::encode(Sha256::digest(key.to_toml()?.as_bytes())))
    }

    pub fn p_grid(&self) -> Vec<f64> {
        if self.p_values.is_empty() {
            vec![self.generation.p]
        } else {
            self.p_values.clone()
        }
    }

    pub fn problem_grid(&self) -> Vec<usize> {
        if self.problem_counts.is_empty() {
            vec![self.generation.problems]
        } else {
            self.problem_counts.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.replicates < 1 {
            return bad("replicates must be >= 1".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite()))
            || self.lambda_grid.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("lambda grid must be non-negative and strictly increasing".into());
        }
        self.prior.validate()?;
        self.fit.validate()?;
        for job in self.jobs() {
            job.generation.validate()?;
        }
        Ok(())
    }

    /// Every (p, J, replicate) in report order.
    pub fn jobs(&self) -> Vec<Job> {
        let mut out = Vec::new();
        for &p in &self.p_grid() {
            for &problems in &self.problem_grid() {
                for r in 0..self.replicates {
                    let seed = replicate_seed(self.base_seed, r as u64);
                    out.push(Job {
                        replicate: r,
                        generation: GenerationConfig {
                            p,
                            problems,
                            seed,
                            ..self.generation.clone()
                        },
                    });
                }
            }
        }
        out
    }
}

/// One replicate of one (p, J) cell.
#[derive(Clone, Debug)]
pub struct Job {
    pub replicate: usize,
    pub generation: GenerationConfig,
}

impl Job {
    /// Directory relative to the output root.
    pub fn dir(&self) -> PathBuf {
        PathBuf::from("runs")
            .join(format!("p{}_J{}", self.generation.p, self.generation.problems))
            .join(format!("rep{:04}", self.replicate))
    }
}

/// Truth and answers from `config.seed`. The same seed gives the same
/// examinees and cheating pairs whatever the number of problems.
pub fn simulate(config: &GenerationConfig) -> Result<(ModelParams, ScoreMatrix)> {
    let mut rng = rng_from_seed(config.seed);
    let truth = generate_truth(config, &mut rng)?;
    let scores = generate_scores(&truth, config, &mut rng)?;
    Ok((truth, scores))
}

/// Metrics of one method on one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: Method,
    pub p: f64,
    pub problems: usize,
    pub replicate: usize,
    pub seed: u64,
    pub err_w: Option<f64>,
    pub err_theta: Option<f64>,
    pub err_d: Option<f64>,
    pub tpr: f64,
    pub tnr: f64,
    pub support_size: usize,
    /// Terminal step for decimation.
    pub selected_step: Option<usize>,
    /// Decimation step with the smallest `err_w`, when the truth has couplings.
    pub min_error_step: Option<usize>,
    /// Oracle penalty for L1.
    pub selected_lambda: Option<f64>,
    /// Run directory relative to the output root.
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub p: f64,
    pub problems: usize,
    pub replicate: usize,
    pub dir: PathBuf,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    /// Sorted by method, then job order.
    pub rows: Vec<RunRow>,
    pub failures: Vec<RunFailure>,
    /// Wall-clock seconds per run directory, for runs computed in this call.
    pub seconds: BTreeMap<PathBuf, f64>,
}

impl ExperimentReport {
    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &RunRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }
}

const RESULT_FILE: &str = "result.json";
pub const TRAJECTORY_FILE: &str = "decimation_trajectory.csv";
pub const ROC_FILE: &str = "decimation_roc.csv";
pub const SWEEP_FILE: &str = "l1_sweep.csv";
pub const SORTED_FILE: &str = "l1_sorted_couplings.csv";

/// Runs every job not already complete, then writes `report.csv`,
/// `summary.csv` and `metadata.json`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let root = &config.output_dir;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let config_path = root.join("config.toml");
    fs::write(&config_path, config.to_toml()?).map_err(|e| Error::io(&config_path, e))?;
    let hash = config.hash()?;
    let started = unix_seconds();
    let clock = Instant::now();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let jobs = config.jobs();
    let outcomes: Vec<(Job, std::result::Result<Option<f64>, String>)> = pool.install(|| {
        jobs.into_par_iter()
            .map(|job| {
                let res = if root.join(job.dir()).join(RESULT_FILE).exists() {
                    Ok(None)
                } else {
                    catch_unwind(AssertUnwindSafe(|| execute_job(config, &job, &hash)))
                        .unwrap_or_else(|panic| Err(Error::InvalidConfig(panic_message(panic))))
                        .map(Some)
                        .map_err(|e| e.to_string())
                };
                (job, res)
            })
            .collect()
    });

    let mut seconds = BTreeMap::new();
    let mut messages = BTreeMap::new();
    for (job, res) in outcomes {
        match res {
            Ok(Some(s)) => {
                seconds.insert(job.dir(), s);
            }
            Ok(None) => {}
            Err(message) => {
                messages.insert(job.dir(), message);
            }
        }
    }
    let mut report = collect_report(config)?;
    for f in &mut report.failures {
        if let Some(m) = messages.remove(&f.dir) {
            f.message = m;
        }
    }
    report.seconds = seconds;
    write_report(&report)?;

    let meta = serde_json::json!({
        "config_hash": hash,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": started,
        "finished_unix": unix_seconds(),
        "elapsed_seconds": clock.elapsed().as_secs_f64(),
        "runs_computed": report.seconds.len(),
        "run_seconds": report.seconds.iter().map(|(k, v)| (k.display().to_string(), *v)).collect::<BTreeMap<_, _>>(),
    });
    write_json(&root.join("metadata.json"), &meta)?;
    Ok(report)
}

/// Builds the report from the run directories already on disk. Runs without
/// a result file are listed as failures.
pub fn collect_report(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let root = &config.output_dir;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for job in config.jobs() {
        let path = root.join(job.dir()).join(RESULT_FILE);
        match read_json::<Vec<RunRow>>(&path) {
            Ok(found) => rows.extend(found.into_iter().filter(|r| config.methods.contains(&r.method))),
            Err(e) => failures.push(RunFailure {
                p: job.generation.p,
                problems: job.generation.problems,
                replicate: job.replicate,
                dir: job.dir(),
                message: if path.exists() {
                    e.to_string()
                } else {
                    "not completed".into()
                },
            }),
        }
    }
    // Stable sort keeps job order within a method.
    rows.sort_by_key(|r| r.method);
    Ok(ExperimentReport {
        output_dir: root.clone(),
        rows,
        failures,
        seconds: BTreeMap::new(),
    })
}

/// Runs one job and writes its directory; returns wall-clock seconds.
fn execute_job(config: &ExperimentConfig, job: &Job, hash: &str) -> Result<f64> {
    let clock = Instant::now();
    let dir = config.output_dir.join(job.dir());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let (truth, scores) = simulate(&job.generation)?;
    write_json(&dir.join("truth.json"), &truth)?;
    if config.save_scores {
        scores.save(&dir.join("scores.csv"))?;
    }
    let mut rows = Vec::new();
    let mut timing = BTreeMap::new();
    for &method in &config.methods {
        let t = Instant::now();
        let row = match method {
            Method::Decimation => {
                let traj = run_decimation(&scores, &config.prior, config.rho, &config.fit)
                    .map_err(|e| e.context("decimation"))?;
                write_trajectory(&dir, &traj, Some(&truth))?;
                let term = traj.terminal();
                write_json(&dir.join("decimation_params.json"), &term.params)?;
                let m = RecoveryMetrics::evaluate(&truth, &term.params, &term.active);
                let mut row = make_row(job, method, &m, term.active.len(), Some(traj.terminal_index), None);
                row.min_error_step = min_error_step(&traj, &truth);
                row
            }
            Method::L1 => {
                let grid = if config.lambda_grid.is_empty() {
                    default_lambda_grid(&scores, &config.prior, &config.fit)?
                } else {
                    config.lambda_grid.clone()
                };
                let sweep = lambda_sweep(&scores, &config.prior, &grid, Some(&truth), &config.fit)
                    .map_err(|e| e.context("L1 sweep"))?;
                write_sweep(&dir, &sweep)?;
                let oracle = sweep
                    .oracle()
                    .ok_or_else(|| Error::InvalidConfig("L1 sweep selected no penalty".into()))?;
                write_json(&dir.join("l1_params.json"), oracle.params())?;
                write_sorted(&dir.join(SORTED_FILE), oracle.params())?;
                let support = oracle.support();
                let m = RecoveryMetrics::evaluate(&truth, oracle.params(), &support);
                make_row(job, method, &m, support.len(), None, Some(oracle.lambda))
            }
        };
        timing.insert(method.as_str(), t.elapsed().as_secs_f64());
        rows.push(row);
    }
    let elapsed = clock.elapsed().as_secs_f64();
    let meta = serde_json::json!({
        "config_hash": hash,
        "seed": job.generation.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "method_seconds": timing,
        "seconds": elapsed,
    });
    write_json(&dir.join("metadata.json"), &meta)?;
    // Written last: its presence marks the run complete.
    let tmp = dir.join("result.json.tmp");
    write_json(&tmp, &rows)?;
    let done = dir.join(RESULT_FILE);
    fs::rename(&tmp, &done).map_err(|e| Error::io(&done, e))?;
    Ok(elapsed)
}

fn make_row(
    job: &Job,
    method: Method,
    m: &RecoveryMetrics,
    support_size: usize,
    selected_step: Option<usize>,
    selected_lambda: Option<f64>,
) -> RunRow {
    RunRow {
        method,
        p: job.generation.p,
        problems: job.generation.problems,
        replicate: job.replicate,
        seed: job.generation.seed,
        err_w: m.err_w,
        err_theta: m.err_theta,
        err_d: m.err_d,
        tpr: m.tpr,
        tnr: m.tnr,
        support_size,
        selected_step,
        min_error_step: None,
        selected_lambda,
        dir: job.dir(),
    }
}

/// First step attaining the smallest `err_w`.
fn min_error_step(traj: &DecimationTrajectory, truth: &ModelParams) -> Option<usize> {
    let errs = traj
        .steps
        .iter()
        .map(|s| err_w(truth.couplings(), s.params.couplings()).ok())
        .collect::<Option<Vec<f64>>>()?;
    Some((0..errs.len()).fold(0, |b, k| if errs[k] < errs[b] { k } else { b }))
}

/// Per-step trajectory CSV, plus the ROC CSV when a truth is given.
pub fn write_trajectory(dir: &Path, traj: &DecimationTrajectory, truth: Option<&ModelParams>) -> Result<()> {
    let mut out = CsvOut::create(
        &dir.join(TRAJECTORY_FILE),
        &[
            "step", "x", "active_pairs", "pl", "pl_tilted", "err_w", "iterations", "converged", "terminal",
        ],
    )?;
    for (k, s) in traj.steps.iter().enumerate() {
        out.row([
            k.to_string(),
            fmt_f64(s.x),
            s.active.len().to_string(),
            fmt_f64(s.pl),
            fmt_f64(s.pl_tilted),
            fmt_opt(truth.and_then(|t| err_w(t.couplings(), s.params.couplings()).ok())),
            s.iterations.to_string(),
            s.converged.to_string(),
            (k == traj.terminal_index).to_string(),
        ])?;
    }
    out.finish()?;
    let Some(truth) = truth else {
        return Ok(());
    };
    let mut roc = CsvOut::create(&dir.join(ROC_FILE), &["step", "tnr", "tpr", "terminal"])?;
    for pt in roc_from_trajectory(traj, &truth.couplings().support()) {
        roc.row([
            pt.step.to_string(),
            fmt_f64(pt.tnr),
            fmt_f64(pt.tpr),
            pt.terminal.to_string(),
        ])?;
    }
    roc.finish()
}

pub fn write_sweep(dir: &Path, sweep: &L1SweepResult) -> Result<()> {
    let mut out = CsvOut::create(
        &dir.join(SWEEP_FILE),
        &[
            "lambda", "objective", "pl", "support_size", "err_w", "iterations", "converged", "oracle",
        ],
    )?;
    for (k, r) in sweep.records.iter().enumerate() {
        out.row([
            fmt_f64(r.lambda),
            fmt_f64(r.fit.objective),
            fmt_f64(r.fit.pl),
            r.support_size.to_string(),
            fmt_opt(r.err_w),
            r.fit.iterations.to_string(),
            r.fit.converged.to_string(),
            (Some(k) == sweep.oracle_index).to_string(),
        ])?;
    }
    out.finish()
}

/// `|w|` in decreasing order as CSV.
pub fn write_sorted(path: &Path, params: &ModelParams) -> Result<()> {
    let mut out = CsvOut::create(path, &["rank", "i", "k", "abs_w"])?;
    for r in sorted_magnitudes(params.couplings()) {
        out.row([r.rank.to_string(), r.lo.to_string(), r.hi.to_string(), fmt_f64(r.magnitude)])?;
    }
    out.finish()
}

const METRICS: [&str; 5] = ["err_w", "err_theta", "err_d", "tpr", "tnr"];

fn metric(row: &RunRow, name: &str) -> Option<f64> {
    match name {
        "err_w" => row.err_w,
        "err_theta" => row.err_theta,
        "err_d" => row.err_d,
        "tpr" => Some(row.tpr),
        "tnr" => Some(row.tnr),
        _ => None,
    }
}

/// Rows grouped by (method, p, J) in report order.
fn cells(report: &ExperimentReport) -> Vec<((Method, f64, usize), Vec<&RunRow>)> {
    let mut out: Vec<((Method, f64, usize), Vec<&RunRow>)> = Vec::new();
    for row in &report.rows {
        let key = (row.method, row.p, row.problems);
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(row),
            None => out.push((key, vec![row])),
        }
    }
    out
}

/// Summary of `name` over the rows of one cell, skipping undefined values.
pub fn cell_summary(rows: &[&RunRow], name: &str) -> Option<Summary> {
    let values: Vec<f64> = rows.iter().filter_map(|r| metric(r, name)).collect();
    Summary::of(&values)
}

/// Writes `report.csv`, `summary.csv` and, when needed, `failures.csv`.
pub fn write_report(report: &ExperimentReport) -> Result<()> {
    let root = &report.output_dir;
    let mut out = CsvOut::create(
        &root.join("report.csv"),
        &[
            "method",
            "p",
            "problems",
            "replicate",
            "seed",
            "err_w",
            "err_theta",
            "err_d",
            "tpr",
            "tnr",
            "support_size",
            "selected_step",
            "min_error_step",
            "selected_lambda",
            "dir",
        ],
    )?;
    for r in &report.rows {
        out.row([
            r.method.to_string(),
            fmt_f64(r.p),
            r.problems.to_string(),
            r.replicate.to_string(),
            r.seed.to_string(),
            fmt_opt(r.err_w),
            fmt_opt(r.err_theta),
            fmt_opt(r.err_d),
            fmt_f64(r.tpr),
            fmt_f64(r.tnr),
            r.support_size.to_string(),
            r.selected_step.map(|s| s.to_string()).unwrap_or_default(),
            r.min_error_step.map(|s| s.to_string()).unwrap_or_default(),
            fmt_opt(r.selected_lambda),
            r.dir.display().to_string(),
        ])?;
    }
    out.finish()?;

    let mut sum = CsvOut::create(
        &root.join("summary.csv"),
        &["method", "p", "problems", "metric", "n", "mean", "sd", "se"],
    )?;
    for ((method, p, problems), rows) in cells(report) {
        for name in METRICS {
            if let Some(s) = cell_summary(&rows, name) {
                sum.row([
                    method.to_string(),
                    fmt_f64(p),
                    problems.to_string(),
                    name.to_string(),
                    s.n.to_string(),
                    fmt_f64(s.mean),
                    fmt_f64(s.sd),
                    fmt_f64(s.se),
                ])?;
            }
        }
    }
    sum.finish()?;

    let failures = root.join("failures.csv");
    if report.failures.is_empty() {
        if failures.exists() {
            fs::remove_file(&failures).map_err(|e| Error::io(&failures, e))?;
        }
    } else {
        let mut out = CsvOut::create(&failures, &["p", "problems", "replicate", "dir", "message"])?;
        for f in &report.failures {
            out.row([
                fmt_f64(f.p),
                f.problems.to_string(),
                f.replicate.to_string(),
                f.dir.display().to_string(),
                f.message.clone(),
            ])?;
        }
        out.finish()?;
    }
    Ok(())
}

/// Writes the figure data series under `output_dir/figures` and returns the
/// files written.
///
/// * `tilted_trajectories.csv`: per decimation step, tilted PL and `err_w`
/// * `roc.csv`: per decimation step, TNR and TPR, terminal step flagged
/// * `err_w_by_cell.csv`: mean and spread of `err_w` per (method, p, J)
/// * `param_errors_by_cell.csv`: the same for ability and difficulty errors
/// * `sorted_couplings.csv`: oracle L1 couplings by decreasing magnitude
pub fn emit_figures_data(report: &ExperimentReport) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(Error::InvalidConfig("report has no completed runs".into()));
    }
    let dir = report.output_dir.join("figures");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut written = Vec::new();
    let prefix = ["p", "problems", "replicate"];
    let key = |r: &RunRow| [fmt_f64(r.p), r.problems.to_string(), r.replicate.to_string()];

    let dec: Vec<&RunRow> = report.rows_for(Method::Decimation).collect();
    if !dec.is_empty() {
        let path = dir.join("tilted_trajectories.csv");
        let mut out = CsvOut::create(
            &path,
            &[&prefix[..], &["step", "x", "pl", "pl_tilted", "err_w", "terminal"]].concat(),
        )?;
        for r in &dec {
            for rec in read_columns(
                &report.output_dir.join(&r.dir).join(TRAJECTORY_FILE),
                &["step", "x", "pl", "pl_tilted", "err_w", "terminal"],
            )? {
                out.row(key(r).into_iter().chain(rec))?;
            }
        }
        out.finish()?;
        written.push(path);

        let path = dir.join("roc.csv");
        let mut out = CsvOut::create(&path, &[&prefix[..], &["step", "tnr", "tpr", "terminal"]].concat())?;
        for r in &dec {
            for rec in read_columns(
                &report.output_dir.join(&r.dir).join(ROC_FILE),
                &["step", "tnr", "tpr", "terminal"],
            )? {
                out.row(key(r).into_iter().chain(rec))?;
            }
        }
        out.finish()?;
        written.push(path);
    }

    let path = dir.join("err_w_by_cell.csv");
    let mut out = CsvOut::create(&path, &["method", "p", "problems", "n", "mean", "sd", "se"])?;
    for ((method, p, problems), rows) in cells(report) {
        if let Some(s) = cell_summary(&rows, "err_w") {
            out.row([
                method.to_string(),
                fmt_f64(p),
                problems.to_string(),
                s.n.to_string(),
                fmt_f64(s.mean),
                fmt_f64(s.sd),
                fmt_f64(s.se),
            ])?;
        }
    }
    out.finish()?;
    written.push(path);

    let path = dir.join("param_errors_by_cell.csv");
    let mut out = CsvOut::create(
        &path,
        &[
            "method",
            "p",
            "problems",
            "n",
            "err_theta_mean",
            "err_theta_sd",
            "err_theta_se",
            "err_d_mean",
            "err_d_sd",
            "err_d_se",
        ],
    )?;
    for ((method, p, problems), rows) in cells(report) {
        if let (Some(t), Some(d)) = (cell_summary(&rows, "err_theta"), cell_summary(&rows, "err_d")) {
            out.row([
                method.to_string(),
                fmt_f64(p),
                problems.to_string(),
                t.n.to_string(),
                fmt_f64(t.mean),
                fmt_f64(t.sd),
                fmt_f64(t.se),
                fmt_f64(d.mean),
                fmt_f64(d.sd),
                fmt_f64(d.se),
            ])?;
        }
    }
    out.finish()?;
    written.push(path);

    let l1: Vec<&RunRow> = report.rows_for(Method::L1).collect();
    if !l1.is_empty() {
        let path = dir.join("sorted_couplings.csv");
        let mut out = CsvOut::create(&path, &[&prefix[..], &["rank", "i", "k", "abs_w"]].concat())?;
        for r in &l1 {
            for rec in read_columns(
                &report.output_dir.join(&r.dir).join(SORTED_FILE),
                &["rank", "i", "k", "abs_w"],
            )? {
                out.row(key(r).into_iter().chain(rec))?;
            }
        }
        out.finish()?;
        written.push(path);
    }
    Ok(written)
}

/// Floats with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

struct CsvOut {
    path: PathBuf,
    w: csv::Writer<BufWriter<fs::File>>,
}

impl CsvOut {
    fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = CsvOut {
            path: path.to_path_buf(),
            w: csv::Writer::from_writer(BufWriter::new(file)),
        };
        out.row(header.iter().map(|s| s.to_string()))?;
        Ok(out)
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<()> {
        let fields: Vec<String> = fields.into_iter().collect();
        self.w.write_record(&fields).map_err(|e| Error::parse(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// The named columns of every record, verbatim.
fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let header = rd.headers().map_err(|e| Error::parse(path, e))?.clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| Error::parse(path, format!("missing column {n}")))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        out.push(idx.iter().map(|&i| rec.get(i).unwrap_or("").to_string()).collect());
    }
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::parse(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

fn unix_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn panic_message(panic: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = panic.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic".into()
    }
}
