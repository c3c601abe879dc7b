//! Recovery metrics against a known truth.

use serde::Serialize;

use crate::decimation::DecimationTrajectory;
use crate::error::{Error, Result};
use crate::model::{CouplingSupport, Couplings, ModelParams};

/// Errors and support-recovery rates for one estimate. An error is `None`
/// when the corresponding truth is identically zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RecoveryMetrics {
    pub err_w: Option<f64>,
    pub err_theta: Option<f64>,
    pub err_d: Option<f64>,
    pub tpr: f64,
    pub tnr: f64,
}

impl RecoveryMetrics {
    /// Metrics of `estimate` with support `est_support` against `truth`.
    pub fn evaluate(truth: &ModelParams, estimate: &ModelParams, est_support: &CouplingSupport) -> Self {
        let universe = CouplingSupport::all(truth.examinees());
        let (tpr, tnr) = tpr_tnr(&truth.couplings().support(), est_support, &universe);
        RecoveryMetrics {
            err_w: err_w(truth.couplings(), estimate.couplings()).ok(),
            err_theta: err_theta(truth.theta(), estimate.theta()).ok(),
            err_d: err_d(truth.d(), estimate.d()).ok(),
            tpr,
            tnr,
        }
    }
}

/// `sqrt(sum (w - w*)^2 / sum w^2)` over all pairs, absent pairs being 0.
pub fn err_w(truth: &Couplings, estimate: &Couplings) -> Result<f64> {
    let denom: f64 = truth.iter().map(|(_, w)| w * w).sum();
    if denom == 0.0 {
        return Err(Error::ZeroDenominator("coupling"));
    }
    let mut num = 0.0;
    for (p, w) in truth.iter() {
        num += (w - estimate.get_pair(&p)).powi(2);
    }
    for (p, w) in estimate.iter() {
        if !truth.contains(&p) {
            num += w * w;
        }
    }
    Ok((num / denom).sqrt())
}

fn relative_error(truth: &[f64], estimate: &[f64], what: &'static str) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::DimensionMismatch {
            what,
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    let denom: f64 = truth.iter().map(|t| t * t).sum();
    if denom == 0.0 {
        return Err(Error::ZeroDenominator(what));
    }
    let num: f64 = truth.iter().zip(estimate).map(|(t, e)| (t - e).powi(2)).sum();
    Ok((num / denom).sqrt())
}

pub fn err_theta(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    relative_error(truth, estimate, "ability")
}

pub fn err_d(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    relative_error(truth, estimate, "difficulty")
}

/// True positive and true negative rates of `est` against `truth` within
/// `universe`. Empty denominators give a rate of 1.
pub fn tpr_tnr(truth: &CouplingSupport, est: &CouplingSupport, universe: &CouplingSupport) -> (f64, f64) {
    let positives = truth.len();
    let hits = truth.intersection_len(est);
    let negatives = universe.len() - universe.intersection_len(truth);
    let true_negatives = universe
        .iter()
        .filter(|p| !truth.contains(p) && !est.contains(p))
        .count();
    let tpr = if positives == 0 { 1.0 } else { hits as f64 / positives as f64 };
    let tnr = if negatives == 0 {
        1.0
    } else {
        true_negatives as f64 / negatives as f64
    };
    (tpr, tnr)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    pub step: usize,
    pub tnr: f64,
    pub tpr: f64,
    pub terminal: bool,
}

/// One ROC point per decimation step, using the step's active pairs as the
/// estimated support.
pub fn roc_from_trajectory(traj: &DecimationTrajectory, truth: &CouplingSupport) -> Vec<RocPoint> {
    let universe = CouplingSupport::all(traj.examinees());
    traj.steps
        .iter()
        .enumerate()
        .map(|(step, s)| {
            let (tpr, tnr) = tpr_tnr(truth, &s.active, &universe);
            RocPoint {
                step,
                tnr,
                tpr,
                terminal: step == traj.terminal_index,
            }
        })
        .collect()
}

/// Mean with standard deviation and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
}

impl Summary {
    /// `None` for an empty sample. `sd` uses the `n - 1` denominator and is 0
    /// for a single value.
    pub fn of(values: &[f64]) -> Option<Summary> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Summary {
            n,
            mean,
            sd,
            se: sd / (n as f64).sqrt(),
        })
    }
}
