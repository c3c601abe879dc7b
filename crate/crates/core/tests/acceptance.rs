//! Acceptance suite. Runs every criterion in order, prints one line per
//! criterion and exits non-zero if any failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use pairwise_irt::decimation::{run_decimation, DecimationTrajectory};
use pairwise_irt::experiment::{run_experiment, simulate, ExperimentConfig, ExperimentReport, Method, Preset};
use pairwise_irt::l1::{default_lambda_grid, lambda_sweep, plm_l1_maximize};
use pairwise_irt::metrics::err_w;
use pairwise_irt::model::{
    column_energy, column_log_distribution, conditional_prob, index_from_state, state_from_index, Couplings,
    ModelParams, Pair,
};
use pairwise_irt::plm::{plm_gradient, plm_maximize, pseudo_log_likelihood, CouplingMask, PriorConfig};
use pairwise_irt::rng::rng_from_seed;
use pairwise_irt::sampler::{exact_sample_column, gibbs_sample_column};
use pairwise_irt::scores::ScoreMatrix;
use rand::Rng;

struct Outcome {
    id: usize,
    pass: bool,
    detail: String,
}

fn random_params(rng: &mut impl Rng, n: usize, m: usize, density: f64) -> ModelParams {
    let theta = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let d = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut w = Couplings::new();
    for p in Pair::all(n) {
        if rng.gen::<f64>() < density {
            w.insert(p, rng.gen_range(-1.5..1.5));
        }
    }
    ModelParams::new(theta, d, w).unwrap()
}

/// Boltzmann weights of every state, written out from the pair list.
fn enumerate(params: &ModelParams, j: usize) -> Vec<f64> {
    let n = params.examinees();
    let weights: Vec<f64> = (0..1usize << n)
        .map(|s| {
            let x: Vec<f64> = (0..n).map(|i| if s >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let mut e = 0.0;
            for i in 0..n {
                e -= (params.theta()[i] - params.d()[j]) * x[i];
            }
            for (p, w) in params.couplings().iter() {
                e -= w * x[p.lo()] * x[p.hi()];
            }
            (-e).exp()
        })
        .collect();
    let z: f64 = weights.iter().sum();
    weights.into_iter().map(|v| v / z).collect()
}

fn gradient_oracle() -> Outcome {
    let mut rng = rng_from_seed(101);
    let prior = PriorConfig::default();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let truth = random_params(&mut rng, 8, 50, 0.2);
        let cols: Vec<Vec<i8>> = (0..50).map(|j| exact_sample_column(&truth, j, &mut rng).unwrap()).collect();
        let data = ScoreMatrix::from_columns(&cols).unwrap();
        let at = random_params(&mut rng, 8, 50, 0.3);
        let g = plm_gradient(&at, &data, &prior, &CouplingMask::all(8)).unwrap();
        let f = |p: &ModelParams| pseudo_log_likelihood(p, &data, &prior).unwrap();
        let mut check = |analytic: f64, plus: ModelParams, minus: ModelParams| {
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            worst = worst.max((fd - analytic).abs() / analytic.abs().max(1.0));
        };
        let (theta, d, w) = at.clone().into_parts();
        for i in 0..8 {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[i] += h;
            down[i] -= h;
            check(
                g.theta[i],
                ModelParams::new(up, d.clone(), w.clone()).unwrap(),
                ModelParams::new(down, d.clone(), w.clone()).unwrap(),
            );
        }
        for j in 0..50 {
            let mut up = d.clone();
            let mut down = d.clone();
            up[j] += h;
            down[j] -= h;
            check(
                g.d[j],
                ModelParams::new(theta.clone(), up, w.clone()).unwrap(),
                ModelParams::new(theta.clone(), down, w.clone()).unwrap(),
            );
        }
        for pair in Pair::all(8) {
            let base = w.get_pair(&pair);
            let mut up = w.clone();
            let mut down = w.clone();
            up.insert(pair, base + h);
            down.insert(pair, base - h);
            check(
                g.w.get_pair(&pair),
                ModelParams::new(theta.clone(), d.clone(), up).unwrap(),
                ModelParams::new(theta.clone(), d.clone(), down).unwrap(),
            );
        }
    }
    Outcome {
        id: 1,
        pass: worst < 1e-6,
        detail: format!("max relative gradient error {worst:.2e} over 20 instances (limit 1e-6)"),
    }
}

fn enumeration_oracle() -> Outcome {
    let mut rng = rng_from_seed(202);
    let (mut sum_err, mut cond_err, mut tv_worst) = (0.0f64, 0.0f64, 0.0f64);
    for n in 1..=4 {
        for _ in 0..10 {
            let p = random_params(&mut rng, n, 2, 0.7);
            for j in 0..2 {
                let logp = column_log_distribution(&p, j).unwrap();
                let exact: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
                sum_err = sum_err.max((exact.iter().sum::<f64>() - 1.0).abs());
                let table = enumerate(&p, j);
                for s in 0..1usize << n {
                    let x = state_from_index(s, n);
                    for i in 0..n {
                        let oracle = table[s] / (table[s] + table[s ^ (1 << i)]);
                        let got = conditional_prob(x[i], i, j, &x, &p).unwrap();
                        cond_err = cond_err.max((got - oracle).abs());
                    }
                }
            }
        }
    }
    for n in 2..=4 {
        let p = random_params(&mut rng, n, 1, 0.8);
        let table = enumerate(&p, 0);
        let mut counts = vec![0.0; 1 << n];
        let samples = 100_000;
        for _ in 0..samples {
            counts[index_from_state(&gibbs_sample_column(&p, 0, 50, &mut rng).unwrap())] += 1.0;
        }
        let tv = 0.5 * counts.iter().zip(&table).map(|(c, q)| (c / samples as f64 - q).abs()).sum::<f64>();
        tv_worst = tv_worst.max(tv);
    }
    Outcome {
        id: 2,
        pass: sum_err < 1e-10 && cond_err < 1e-10 && tv_worst < 0.02,
        detail: format!(
            "normalisation {sum_err:.1e}, conditionals {cond_err:.1e} (limit 1e-10), Gibbs TV {tv_worst:.4} (limit 0.02)"
        ),
    }
}

fn gauge_invariance() -> Outcome {
    let mut rng = rng_from_seed(303);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let p = random_params(&mut rng, 4, 3, 0.6);
        let eta: f64 = rng.gen_range(-3.0..3.0);
        let q = p.gauge_shift(eta);
        for j in 0..3 {
            let a = column_log_distribution(&p, j).unwrap();
            let b = column_log_distribution(&q, j).unwrap();
            for s in 0..16 {
                let x = state_from_index(s, 4);
                let ea = column_energy(&x, p.theta(), p.d()[j], p.couplings()).unwrap();
                let eb = column_energy(&x, q.theta(), q.d()[j], q.couplings()).unwrap();
                worst = worst.max((ea - eb).abs()).max((a[s].exp() - b[s].exp()).abs());
            }
        }
    }
    Outcome {
        id: 3,
        pass: worst < 1e-12,
        detail: format!("max change under 10 shifts {worst:.1e} (limit 1e-12)"),
    }
}

/// Decimation trajectories on the desk seeds for the given cells.
struct Cell {
    p: f64,
    problems: usize,
    runs: Vec<(ModelParams, DecimationTrajectory)>,
    seconds: f64,
}

fn desk() -> ExperimentConfig {
    ExperimentConfig::preset(Preset::Desk)
}

fn decimate_cell(p: f64, problems: usize) -> Cell {
    let cfg = ExperimentConfig {
        p_values: vec![p],
        problem_counts: vec![problems],
        ..desk()
    };
    let clock = Instant::now();
    let runs = cfg
        .jobs()
        .iter()
        .map(|job| {
            let (truth, data) = simulate(&job.generation).unwrap();
            let traj = run_decimation(&data, &cfg.prior, cfg.rho, &cfg.fit).unwrap();
            (truth, traj)
        })
        .collect();
    Cell {
        p,
        problems,
        runs,
        seconds: clock.elapsed().as_secs_f64(),
    }
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, k| if v[k] < v[b] { k } else { b })
}

fn terminal_error(truth: &ModelParams, traj: &DecimationTrajectory) -> f64 {
    err_w(truth.couplings(), traj.terminal().params.couplings()).unwrap()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn anchor_inequality(cells: &[&Cell]) -> Outcome {
    let (mut above, mut below, mut ends, mut count) = (0.0f64, 0.0f64, 0.0f64, 0);
    for cell in cells {
        for (_, t) in &cell.runs {
            count += 1;
            for s in &t.steps {
                above = above.max(s.pl - t.pl_max);
                below = below.max(t.pl_min - s.pl);
            }
            let first = t.steps.first().unwrap();
            let last = t.steps.last().unwrap();
            ends = ends.max((first.pl - t.pl_max).abs()).max((last.pl - t.pl_min).abs());
        }
    }
    Outcome {
        id: 4,
        pass: above <= 1e-8 && below <= 1e-8 && ends <= 1e-6,
        detail: format!(
            "{count} trajectories: max excess over upper anchor {above:.1e}, under lower {below:.1e} (limit 1e-8); endpoint gap {ends:.1e} (limit 1e-6)"
        ),
    }
}

/// Per-run (steps to the error minimum, steps to the tilted maximum) read
/// back from the trajectory files of a finished experiment.
fn trajectory_extrema(report: &ExperimentReport) -> Vec<(usize, usize)> {
    report
        .rows_for(Method::Decimation)
        .map(|row| {
            let path = report.output_dir.join(&row.dir).join("decimation_trajectory.csv");
            let mut rd = csv::Reader::from_path(&path).unwrap();
            let head = rd.headers().unwrap().clone();
            let col = |n: &str| head.iter().position(|h| h == n).unwrap();
            let (e, t) = (col("err_w"), col("terminal"));
            let recs: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
            let errs: Vec<f64> = recs.iter().map(|r| r[e].parse().unwrap()).collect();
            let terminal = recs.iter().position(|r| &r[t] == "true").unwrap();
            (argmin(&errs), terminal)
        })
        .collect()
}

fn desk_trend(report: &ExperimentReport, seconds: f64) -> Outcome {
    let extrema = trajectory_extrema(report);
    let close = extrema.iter().filter(|(a, b)| a.abs_diff(*b) <= 2).count();
    let dec: Vec<_> = report.rows_for(Method::Decimation).collect();
    let tpr = mean(dec.iter().map(|r| r.tpr));
    let tnr = mean(dec.iter().map(|r| r.tnr));
    Outcome {
        id: 5,
        pass: extrema.len() == 10 && close >= 8 && tpr >= 0.9 && tnr >= 0.95,
        detail: format!(
            "error minimum within 2 steps of tilted maximum in {close}/{} seeds (need 8); terminal mean TPR {tpr:.3} (need 0.9), TNR {tnr:.3} (need 0.95); {seconds:.0} s",
            extrema.len()
        ),
    }
}

fn problem_count_trend(cells: &[&Cell]) -> Outcome {
    let means: Vec<(usize, f64)> = cells
        .iter()
        .map(|c| (c.problems, mean(c.runs.iter().map(|(t, tr)| terminal_error(t, tr)))))
        .collect();
    let pass = means.windows(2).all(|w| w[1].1 < w[0].1);
    let seconds: f64 = cells.iter().map(|c| c.seconds).sum();
    let text: Vec<String> = means.iter().map(|(j, e)| format!("J={j}: {e:.3}")).collect();
    Outcome {
        id: 6,
        pass,
        detail: format!(
            "mean terminal err_w at p={}: {} (need strictly decreasing); {seconds:.0} s",
            cells[0].p,
            text.join(", ")
        ),
    }
}

/// Seeds where decimation's terminal error is at most the oracle L1 error.
fn head_to_head(report: &ExperimentReport) -> (usize, usize, f64, f64) {
    let dec: Vec<_> = report.rows_for(Method::Decimation).collect();
    let l1: Vec<_> = report.rows_for(Method::L1).collect();
    let mut wins = 0;
    for (d, l) in dec.iter().zip(&l1) {
        assert_eq!(d.dir, l.dir);
        if d.err_w.unwrap() <= l.err_w.unwrap() {
            wins += 1;
        }
    }
    (
        wins,
        dec.len(),
        mean(dec.iter().map(|r| r.err_w.unwrap())),
        mean(l1.iter().map(|r| r.err_w.unwrap())),
    )
}

fn method_comparison(desk_report: &ExperimentReport, sparse: &ExperimentReport) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (p, report) in [(0.05, sparse), (0.1, desk_report)] {
        let (wins, n, dec, l1) = head_to_head(report);
        pass &= wins >= 6 && n == 10;
        parts.push(format!(
            "p={p}: decimation <= L1 in {wins}/{n} seeds (need 6), mean err_w {dec:.3} vs {l1:.3}"
        ));
    }
    Outcome {
        id: 7,
        pass,
        detail: parts.join("; "),
    }
}

fn short_data_discrepancy(dir: &Path) -> Outcome {
    let cfg = ExperimentConfig {
        methods: vec![Method::Decimation],
        problem_counts: vec![500],
        output_dir: dir.to_path_buf(),
        ..desk()
    };
    let report = run_experiment(&cfg).unwrap();
    let rows: Vec<_> = report.rows_for(Method::Decimation).collect();
    let gaps: Vec<Option<usize>> = rows
        .iter()
        .map(|r| Some(r.selected_step?.abs_diff(r.min_error_step?)))
        .collect();
    let reported = rows.len() == 10 && gaps.iter().all(Option::is_some);
    let gaps: Vec<usize> = gaps.into_iter().flatten().collect();
    let apart = gaps.iter().filter(|g| **g > 2).count();
    Outcome {
        id: 8,
        pass: reported,
        detail: format!(
            "J=500, p=0.1: report gives terminal and error-minimising steps for {}/10 seeds; more than 2 steps apart in {apart} (gaps {gaps:?})",
            gaps.len()
        ),
    }
}

fn l1_sanity() -> Outcome {
    let cfg = desk();
    let job = &cfg.jobs()[0];
    let (truth, data) = simulate(&job.generation).unwrap();
    let n = data.examinees();
    let plain = plm_maximize(
        &data,
        &cfg.prior,
        &CouplingMask::all(n),
        &ModelParams::zeros(n, data.problems()).unwrap(),
        &cfg.fit,
    )
    .unwrap();
    let zero = plm_l1_maximize(&data, &cfg.prior, 0.0, &cfg.fit).unwrap();
    let mut gap = 0.0f64;
    for (a, b) in plain.params.theta().iter().zip(zero.params.theta()) {
        gap = gap.max((a - b).abs());
    }
    for (a, b) in plain.params.d().iter().zip(zero.params.d()) {
        gap = gap.max((a - b).abs());
    }
    for pair in Pair::all(n) {
        gap = gap.max((plain.params.coupling(pair.lo(), pair.hi()) - zero.params.coupling(pair.lo(), pair.hi())).abs());
    }

    let grid = default_lambda_grid(&data, &cfg.prior, &cfg.fit).unwrap();
    let sweep = lambda_sweep(&data, &cfg.prior, &grid, Some(&truth), &cfg.fit).unwrap();
    let lambda_max = sweep.empirical_lambda_max;
    let mut exact = true;
    for r in &sweep.records {
        let nonzero = r.params().couplings().iter().filter(|(_, v)| *v != 0.0).count();
        exact &= nonzero == r.support_size;
        if lambda_max.is_some_and(|l| r.lambda >= l) {
            exact &= r.params().couplings().iter().all(|(_, v)| v == 0.0);
        }
    }
    Outcome {
        id: 9,
        pass: gap < 1e-4 && lambda_max.is_some() && exact,
        detail: format!(
            "zero-penalty gap {gap:.1e} (limit 1e-4); all-zero from lambda = {}; pruned entries exact zeros: {exact}",
            lambda_max.map(|l| format!("{l:.3}")).unwrap_or_else(|| "none".into())
        ),
    }
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism(a: &Path, b: &Path) -> Outcome {
    let files = csv_files(a);
    let same_list = files == csv_files(b);
    let differing: Vec<String> = files
        .iter()
        .filter(|f| fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    Outcome {
        id: 10,
        pass: same_list && differing.is_empty() && !files.is_empty(),
        detail: format!(
            "{} CSV files compared, {} differ{}",
            files.len(),
            differing.len(),
            if same_list { "" } else { ", file lists differ" }
        ),
    }
}

fn run_desk(dir: &Path, p: f64) -> (ExperimentReport, f64) {
    let cfg = ExperimentConfig {
        p_values: vec![p],
        output_dir: dir.to_path_buf(),
        ..desk()
    };
    let clock = Instant::now();
    let report = run_experiment(&cfg).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    pairwise_irt::experiment::emit_figures_data(&report).unwrap();
    (report, clock.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    // Arguments from the test runner (filters, --nocapture) are ignored.
    let report = |o: &Outcome| {
        println!("criterion {:>2}: {}  {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        o.pass
    };
    let mut results = Vec::new();
    results.push(report(&gradient_oracle()));
    results.push(report(&enumeration_oracle()));
    results.push(report(&gauge_invariance()));

    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let sparse = tempfile::tempdir().unwrap();
    let (desk_report, desk_seconds) = run_desk(first.path(), 0.1);
    let _ = run_desk(second.path(), 0.1);
    let (sparse_report, _) = run_desk(sparse.path(), 0.05);

    let trend: Vec<Cell> = [500, 1000, 2000].iter().map(|&j| decimate_cell(0.15, j)).collect();
    let short = tempfile::tempdir().unwrap();

    results.push(report(&anchor_inequality(&trend.iter().collect::<Vec<_>>())));
    results.push(report(&desk_trend(&desk_report, desk_seconds)));
    results.push(report(&problem_count_trend(&trend.iter().collect::<Vec<_>>())));
    results.push(report(&method_comparison(&desk_report, &sparse_report)));
    results.push(report(&short_data_discrepancy(short.path())));
    results.push(report(&l1_sanity()));
    results.push(report(&determinism(first.path(), second.path())));

    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
