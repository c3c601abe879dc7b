//! L1-penalised pseudo-likelihood baseline.
//!
//! Maximises `PL - lambda * sum_{i<k} |w_ik|` with proximal steps on the
//! couplings, so pruned couplings are exactly zero. Abilities and
//! difficulties are not penalised.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::err_w;
use crate::model::{CouplingSupport, Couplings, ModelParams, Pair};
use crate::plm::{maximize_penalized, plm_gradient, plm_maximize, CouplingMask, FitOptions, PlmFit, PriorConfig};
use crate::scores::ScoreMatrix;

/// Points in the default grid.
pub const DEFAULT_GRID_POINTS: usize = 20;
/// Smallest grid value relative to the largest.
pub const DEFAULT_GRID_SPAN: f64 = 1e-4;
/// Headroom of the top grid value over the pruning threshold.
const TOP_HEADROOM: f64 = 1.05;

/// Fits every pair with penalty `lambda`, starting from zeros.
pub fn plm_l1_maximize(data: &ScoreMatrix, prior: &PriorConfig, lambda: f64, opts: &FitOptions) -> Result<PlmFit> {
    let init = ModelParams::zeros(data.examinees(), data.problems())?;
    plm_l1_maximize_from(data, prior, lambda, &init, opts)
}

pub fn plm_l1_maximize_from(
    data: &ScoreMatrix,
    prior: &PriorConfig,
    lambda: f64,
    init: &ModelParams,
    opts: &FitOptions,
) -> Result<PlmFit> {
    maximize_penalized(data, prior, &CouplingMask::all(data.examinees()), init, opts, lambda)
}

/// Smallest penalty at which every coupling is zero at the optimum: the
/// largest coupling gradient once abilities and difficulties are fitted with
/// all couplings at zero.
pub fn pruning_threshold(data: &ScoreMatrix, prior: &PriorConfig, opts: &FitOptions) -> Result<f64> {
    let init = ModelParams::zeros(data.examinees(), data.problems())?;
    let fit = plm_maximize(data, prior, &CouplingMask::none(), &init, opts)?;
    let g = plm_gradient(&fit.params, data, prior, &CouplingMask::all(data.examinees()))?;
    Ok(g.w.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max))
}

/// `points` values log-spaced from `span * top` to `top`, increasing.
pub fn log_grid(top: f64, span: f64, points: usize) -> Result<Vec<f64>> {
    if !(top > 0.0 && top.is_finite()) || !(span > 0.0 && span <= 1.0) || points == 0 {
        return Err(Error::InvalidConfig(format!(
            "bad lambda grid (top {top}, span {span}, points {points})"
        )));
    }
    if points == 1 {
        return Ok(vec![top]);
    }
    let (lo, hi) = ((top * span).ln(), top.ln());
    Ok((0..points)
        .map(|k| (lo + (hi - lo) * k as f64 / (points - 1) as f64).exp())
        .collect())
}

/// Default grid for `data`: log-spaced over four decades, topped just above
/// the pruning threshold so the last fit is empty.
pub fn default_lambda_grid(data: &ScoreMatrix, prior: &PriorConfig, opts: &FitOptions) -> Result<Vec<f64>> {
    let top = pruning_threshold(data, prior, opts)? * TOP_HEADROOM;
    if top == 0.0 {
        return Ok(vec![0.0]);
    }
    log_grid(top, DEFAULT_GRID_SPAN, DEFAULT_GRID_POINTS)
}

#[derive(Clone, Debug)]
pub struct L1Record {
    pub lambda: f64,
    pub fit: PlmFit,
    /// Against the truth, when one was given and has couplings.
    pub err_w: Option<f64>,
    pub support_size: usize,
}

impl L1Record {
    pub fn params(&self) -> &ModelParams {
        &self.fit.params
    }

    pub fn support(&self) -> CouplingSupport {
        self.fit.params.couplings().support()
    }
}

#[derive(Clone, Debug)]
pub struct L1SweepResult {
    pub records: Vec<L1Record>,
    /// Index of the record with the smallest `err_w` (first on ties), when a
    /// truth was given.
    pub oracle_index: Option<usize>,
    /// Smallest swept lambda whose fit has no couplings left.
    pub empirical_lambda_max: Option<f64>,
}

impl L1SweepResult {
    pub fn oracle(&self) -> Option<&L1Record> {
        self.oracle_index.map(|k| &self.records[k])
    }
}

/// Fits each lambda in increasing order, warm-starting from the previous fit.
pub fn lambda_sweep(
    data: &ScoreMatrix,
    prior: &PriorConfig,
    lambdas: &[f64],
    truth: Option<&ModelParams>,
    opts: &FitOptions,
) -> Result<L1SweepResult> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("lambda grid is empty".into()));
    }
    if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidConfig("lambda values must be finite and >= 0".into()));
    }
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("lambda values must be strictly increasing".into()));
    }
    let mut init = ModelParams::zeros(data.examinees(), data.problems())?;
    let mut records = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let fit = plm_l1_maximize_from(data, prior, lambda, &init, opts)
            .map_err(|e| e.context(format!("L1 fit at lambda = {lambda}")))?;
        let err = match truth {
            Some(t) => err_w(t.couplings(), fit.params.couplings()).ok(),
            None => None,
        };
        let support_size = fit.params.couplings().support().len();
        init = fit.params.clone();
        records.push(L1Record {
            lambda,
            fit,
            err_w: err,
            support_size,
        });
    }
    // With no true couplings the relative error is undefined; the oracle then
    // minimises the estimated coupling norm instead.
    let score = |r: &L1Record| match truth {
        Some(t) if t.couplings().support().is_empty() => {
            Some(r.fit.params.couplings().iter().map(|(_, v)| v * v).sum::<f64>())
        }
        _ => r.err_w,
    };
    let oracle_index = records
        .iter()
        .enumerate()
        .filter_map(|(k, r)| score(r).map(|e| (k, e)))
        .fold(None, |best: Option<(usize, f64)>, (k, e)| match best {
            Some((_, b)) if b <= e => best,
            _ => Some((k, e)),
        })
        .map(|(k, _)| k);
    let empirical_lambda_max = records.iter().find(|r| r.support_size == 0).map(|r| r.lambda);
    Ok(L1SweepResult {
        records,
        oracle_index,
        empirical_lambda_max,
    })
}

/// Pairs with `|w| > tau`.
pub fn threshold_support(w: &Couplings, tau: f64) -> Result<CouplingSupport> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidConfig(format!("threshold must be >= 0, got {tau}")));
    }
    Ok(w.iter().filter(|(_, v)| v.abs() > tau).map(|(p, _)| p).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RankedCoupling {
    pub rank: usize,
    pub lo: usize,
    pub hi: usize,
    pub magnitude: f64,
}

/// Couplings by decreasing `|w|`, ties in canonical pair order.
pub fn sorted_magnitudes(w: &Couplings) -> Vec<RankedCoupling> {
    let mut all: Vec<(Pair, f64)> = w.iter().map(|(p, v)| (p, v.abs())).collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.into_iter()
        .enumerate()
        .map(|(rank, (p, magnitude))| RankedCoupling {
            rank,
            lo: p.lo(),
            hi: p.hi(),
            magnitude,
        })
        .collect()
}
