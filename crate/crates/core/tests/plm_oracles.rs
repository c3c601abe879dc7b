mod common;

use common::*;
use pairwise_irt::l1::{lambda_sweep, plm_l1_maximize, pruning_threshold};
use pairwise_irt::model::{CouplingSupport, ModelParams, Pair};
use pairwise_irt::plm::{
    plm_gradient, plm_maximize, pseudo_log_likelihood, soft_threshold, CouplingMask, FitOptions, PriorConfig,
};
use pairwise_irt::sampler::GenerationConfig;
use pairwise_irt::experiment::simulate;
use proptest::prelude::*;

fn priors() -> [PriorConfig; 3] {
    [
        PriorConfig::default(),
        PriorConfig::difficulties(0.3, 2.0),
        PriorConfig {
            mu: -0.2,
            sigma2: 0.7,
            coupling_sigma2: 0.4,
        },
    ]
}

#[test]
fn pl_matches_sum_of_log_conditionals() {
    let mut r = rng(10);
    for prior in priors() {
        for _ in 0..5 {
            let p = random_params(&mut r, 5, 12, 0.5, 1.5);
            let data = random_scores(&mut r, 5, 12);
            let got = pseudo_log_likelihood(&p, &data, &prior).unwrap();
            let oracle = brute_pl(&p, &data, prior.mu, prior.sigma2, prior.coupling_sigma2);
            assert!((got - oracle).abs() < 1e-9 * oracle.abs().max(1.0), "{got} vs {oracle}");
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut r = rng(11);
    let h = 1e-5;
    for prior in priors() {
        let p = random_params(&mut r, 6, 30, 0.4, 1.0);
        let data = random_scores(&mut r, 6, 30);
        let g = plm_gradient(&p, &data, &prior, &CouplingMask::all(6)).unwrap();
        let f = |q: &ModelParams| pseudo_log_likelihood(q, &data, &prior).unwrap();
        let check = |analytic: f64, plus: ModelParams, minus: ModelParams| {
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((fd - analytic).abs() <= 1e-6 * analytic.abs().max(1.0), "{fd} vs {analytic}");
        };
        for i in 0..6 {
            let t = p.theta()[i];
            check(g.theta[i], with_theta(&p, i, t + h), with_theta(&p, i, t - h));
        }
        for j in 0..30 {
            let d = p.d()[j];
            check(g.d[j], with_d(&p, j, d + h), with_d(&p, j, d - h));
        }
        for pair in Pair::all(6) {
            let w = p.couplings().get_pair(&pair);
            check(
                g.w.get_pair(&pair),
                with_coupling(&p, pair, w + h),
                with_coupling(&p, pair, w - h),
            );
        }
    }
}

fn small_problem(seed: u64, examinees: usize, problems: usize, p: f64) -> (ModelParams, pairwise_irt::scores::ScoreMatrix) {
    simulate(&GenerationConfig {
        examinees,
        problems,
        p,
        seed,
        ..GenerationConfig::default()
    })
    .unwrap()
}

#[test]
fn maximiser_is_stationary_and_unique() {
    let (_, data) = small_problem(3, 6, 300, 0.3);
    let prior = PriorConfig::default();
    let opts = FitOptions::default();
    let mask = CouplingMask::all(6);
    let fit = plm_maximize(&data, &prior, &mask, &ModelParams::zeros(6, 300).unwrap(), &opts).unwrap();
    assert!(fit.converged);
    let g = plm_gradient(&fit.params, &data, &prior, &mask).unwrap();
    let worst = g
        .theta
        .iter()
        .chain(&g.d)
        .copied()
        .chain(g.w.iter().map(|(_, v)| v))
        .fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(worst < 1e-4, "gradient {worst}");
    // Ascent trace never decreases.
    assert!(fit.trace.windows(2).all(|w| w[1] >= w[0]));

    let mut r = rng(12);
    for _ in 0..3 {
        let start = random_params(&mut r, 6, 300, 0.6, 1.0);
        let other = plm_maximize(&data, &prior, &mask, &start, &opts).unwrap();
        assert!((other.pl - fit.pl).abs() < 1e-7);
        for pair in Pair::all(6) {
            let (a, b) = (fit.params.coupling(pair.lo(), pair.hi()), other.params.coupling(pair.lo(), pair.hi()));
            assert!((a - b).abs() < 1e-4);
        }
    }
}

#[test]
fn frozen_pairs_stay_zero_and_nest() {
    let (_, data) = small_problem(4, 6, 300, 0.3);
    let prior = PriorConfig::default();
    let opts = FitOptions::default();
    let zeros = ModelParams::zeros(6, 300).unwrap();
    let some: CouplingSupport = Pair::all(6).step_by(2).collect();
    let small = plm_maximize(&data, &prior, &CouplingMask::from_support(some.clone()), &zeros, &opts).unwrap();
    for (p, v) in small.params.couplings().iter() {
        assert!(some.contains(&p) || v == 0.0);
    }
    let none = plm_maximize(&data, &prior, &CouplingMask::none(), &zeros, &opts).unwrap();
    let all = plm_maximize(&data, &prior, &CouplingMask::all(6), &zeros, &opts).unwrap();
    assert!(none.params.couplings().is_empty());
    assert!(none.pl <= small.pl + 1e-8 && small.pl <= all.pl + 1e-8);
}

#[test]
fn l1_at_zero_matches_plain_fit() {
    let (_, data) = small_problem(5, 6, 300, 0.3);
    let prior = PriorConfig::default();
    let opts = FitOptions::default();
    let plain = plm_maximize(&data, &prior, &CouplingMask::all(6), &ModelParams::zeros(6, 300).unwrap(), &opts).unwrap();
    let l1 = plm_l1_maximize(&data, &prior, 0.0, &opts).unwrap();
    assert!((plain.pl - l1.pl).abs() < 1e-4);
    for (a, b) in plain.params.theta().iter().zip(l1.params.theta()) {
        assert!((a - b).abs() < 1e-4);
    }
    for pair in Pair::all(6) {
        assert!((plain.params.couplings().get_pair(&pair) - l1.params.couplings().get_pair(&pair)).abs() < 1e-4);
    }
    let sweep = lambda_sweep(&data, &prior, &[0.0], None, &opts).unwrap();
    assert_eq!(sweep.records.len(), 1);
    assert!((sweep.records[0].fit.pl - plain.pl).abs() < 1e-4);
}

#[test]
fn penalty_above_threshold_prunes_everything_exactly() {
    let (_, data) = small_problem(6, 6, 300, 0.3);
    let prior = PriorConfig::default();
    let opts = FitOptions::default();
    let top = pruning_threshold(&data, &prior, &opts).unwrap();
    let fit = plm_l1_maximize(&data, &prior, top * 1.01, &opts).unwrap();
    assert!(fit.params.couplings().iter().all(|(_, v)| v == 0.0));
    let below = plm_l1_maximize(&data, &prior, top * 0.8, &opts).unwrap();
    assert!(below.params.couplings().iter().any(|(_, v)| v != 0.0));
}

#[test]
fn objective_falls_as_penalty_grows() {
    let (truth, data) = small_problem(7, 6, 300, 0.3);
    let prior = PriorConfig::default();
    let opts = FitOptions::default();
    let grid = [0.0, 1.0, 5.0, 20.0, 60.0, 200.0];
    let sweep = lambda_sweep(&data, &prior, &grid, Some(&truth), &opts).unwrap();
    for w in sweep.records.windows(2) {
        assert!(w[1].fit.objective <= w[0].fit.objective + 1e-8);
    }
    let best = sweep.oracle().unwrap().err_w.unwrap();
    assert!(sweep.records.iter().all(|r| best <= r.err_w.unwrap()));
}

#[test]
fn single_proximal_step_from_zero() {
    // One unaccelerated step of rate t on the scaled coupling gradient.
    let (_, data) = small_problem(8, 5, 100, 0.3);
    let prior = PriorConfig::default();
    let rate = 0.3;
    let opts = FitOptions {
        learning_rate: rate,
        max_iterations: 1,
        gradient_tolerance: 0.0,
        accelerated: false,
        adaptive_step: false,
    };
    let zeros = ModelParams::zeros(5, 100).unwrap();
    let g = plm_gradient(&zeros, &data, &prior, &CouplingMask::all(5)).unwrap();
    let lambda = 20.0;
    let fit = pairwise_irt::l1::plm_l1_maximize_from(&data, &prior, lambda, &zeros, &opts).unwrap();
    assert_eq!(fit.iterations, 1);
    let scale = rate / (2.0 * 100.0);
    for (pair, gv) in g.w.iter() {
        let expected = gv.signum() * (gv.abs() * scale - lambda * scale).max(0.0);
        assert!((fit.params.couplings().get_pair(&pair) - expected).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn soft_threshold_properties(v in -10.0f64..10.0, t in 0.0f64..5.0) {
        let s = soft_threshold(v, t);
        prop_assert!(s.abs() <= v.abs());
        prop_assert!(s == 0.0 || s.signum() == v.signum());
        if v.abs() <= t {
            prop_assert_eq!(s, 0.0);
        } else {
            prop_assert!((s.abs() - (v.abs() - t)).abs() < 1e-12);
        }
    }

    #[test]
    fn pl_is_gauge_invariant_without_prior(seed in any::<u64>(), eta in -2.0f64..2.0) {
        let mut r = rng(seed);
        let p = random_params(&mut r, 4, 6, 0.5, 1.0);
        let data = random_scores(&mut r, 4, 6);
        let flat = PriorConfig { mu: 0.0, sigma2: f64::MAX, coupling_sigma2: f64::INFINITY };
        let a = pseudo_log_likelihood(&p, &data, &flat).unwrap();
        let b = pseudo_log_likelihood(&p.gauge_shift(eta), &data, &flat).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }
}
