//! Pseudo-likelihood maximisation with decimation.
//!
//! Starting with every pair free, each step maximises the pseudo
//! log-likelihood, records it, and freezes the `ceil(rho * total)` free
//! couplings of smallest magnitude at zero for all later steps. The run ends
//! when no pair is left. The returned estimate is the step that maximises the
//! tilted pseudo log-likelihood
//!
//! ```text
//! PL_tilted(x) = PL(x) - (1 - x) PL_max - x PL_min
//! ```
//!
//! where `x` is the decimated fraction, `PL_max` the maximum with every pair
//! free and `PL_min` the maximum with none.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CouplingSupport, Couplings, ModelParams, Pair};
use crate::plm::{plm_maximize, CouplingMask, FitOptions, PlmFit, PriorConfig};
use crate::scores::ScoreMatrix;

/// Where each step's ascent starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartPolicy {
    /// From the previous step's estimate, decimated couplings zeroed.
    #[default]
    Warm,
    /// From all-zero parameters.
    Cold,
}

#[derive(Clone, Debug)]
pub struct DecimationStep {
    /// Fraction of all pairs decimated before this step's fit.
    pub x: f64,
    pub active: CouplingSupport,
    pub params: ModelParams,
    pub pl: f64,
    pub pl_tilted: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct DecimationTrajectory {
    pub steps: Vec<DecimationStep>,
    pub pl_max: f64,
    pub pl_min: f64,
    pub terminal_index: usize,
    pub total_pairs: usize,
}

impl DecimationTrajectory {
    pub fn examinees(&self) -> usize {
        self.steps[0].params.examinees()
    }

    pub fn terminal(&self) -> &DecimationStep {
        &self.steps[self.terminal_index]
    }
}

/// The two anchor fits: every pair free, and every pair frozen.
#[derive(Clone, Debug)]
pub struct Anchors {
    pub full: PlmFit,
    pub empty: PlmFit,
}

impl Anchors {
    pub fn pl_max(&self) -> f64 {
        self.full.pl
    }

    pub fn pl_min(&self) -> f64 {
        self.empty.pl
    }
}

/// Fits the largest and smallest coupling models from all-zero parameters.
pub fn compute_anchors(data: &ScoreMatrix, prior: &PriorConfig, opts: &FitOptions) -> Result<Anchors> {
    let init = ModelParams::zeros(data.examinees(), data.problems())?;
    let full = plm_maximize(data, prior, &CouplingMask::all(data.examinees()), &init, opts)
        .map_err(|e| e.context("fitting all couplings"))?;
    let empty = plm_maximize(data, prior, &CouplingMask::none(), &init, opts)
        .map_err(|e| e.context("fitting without couplings"))?;
    Ok(Anchors { full, empty })
}

pub fn tilted_pl(pl: f64, pl_max: f64, pl_min: f64, x: f64) -> f64 {
    pl - (1.0 - x) * pl_max - x * pl_min
}

/// Number of pairs removed per step.
pub fn decimation_count(rho: f64, total_pairs: usize) -> usize {
    // Guard against products like 0.05 * 100 = 5.000000000000001.
    ((rho * total_pairs as f64) - 1e-9).ceil().max(1.0) as usize
}

/// The `ceil(rho * total_pairs)` active pairs of smallest `|w|` (all of them
/// if fewer remain). Ties go to the lexicographically smaller pair.
pub fn select_decimation_set(active: &Couplings, rho: f64, total_pairs: usize) -> Result<Vec<Pair>> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidConfig(format!("rho must lie in (0, 1), got {rho}")));
    }
    if active.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    let mut ranked: Vec<(Pair, f64)> = active.iter().map(|(p, w)| (p, w.abs())).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let take = decimation_count(rho, total_pairs).min(ranked.len());
    Ok(ranked.into_iter().take(take).map(|(p, _)| p).collect())
}

/// Runs decimation to the end with warm starts.
pub fn run_decimation(
    data: &ScoreMatrix,
    prior: &PriorConfig,
    rho: f64,
    opts: &FitOptions,
) -> Result<DecimationTrajectory> {
    run_decimation_with(data, prior, rho, opts, StartPolicy::Warm)
}

pub fn run_decimation_with(
    data: &ScoreMatrix,
    prior: &PriorConfig,
    rho: f64,
    opts: &FitOptions,
    start: StartPolicy,
) -> Result<DecimationTrajectory> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidConfig(format!("rho must lie in (0, 1), got {rho}")));
    }
    let anchors = compute_anchors(data, prior, opts)?;
    let (pl_max, pl_min) = (anchors.pl_max(), anchors.pl_min());
    let total = Pair::count(data.examinees());
    let zeros = ModelParams::zeros(data.examinees(), data.problems())?;

    let mut active = CouplingSupport::all(data.examinees());
    let mut steps: Vec<DecimationStep> = Vec::new();
    // The first step is the full anchor fit.
    let mut fit = anchors.full;
    loop {
        let x = (total - active.len()) as f64 / total as f64;
        steps.push(DecimationStep {
            x,
            active: active.clone(),
            params: fit.params.clone(),
            pl: fit.pl,
            pl_tilted: tilted_pl(fit.pl, pl_max, pl_min, x),
            iterations: fit.iterations,
            converged: fit.converged,
        });
        if active.is_empty() {
            break;
        }
        let free: Couplings = fit.params.couplings().iter().filter(|(p, _)| active.contains(p)).collect();
        for p in select_decimation_set(&free, rho, total)? {
            active.remove(&p);
        }
        let init = match start {
            StartPolicy::Warm => {
                let (theta, d, w) = fit.params.clone().into_parts();
                let kept = w.iter().filter(|(p, _)| active.contains(p)).collect();
                ModelParams::new(theta, d, kept)?
            }
            StartPolicy::Cold => zeros.clone(),
        };
        let mask = CouplingMask::from_support(active.clone());
        fit = plm_maximize(data, prior, &mask, &init, opts)
            .map_err(|e| e.context(format!("decimation step {} (x = {x:.4})", steps.len())))?;
    }

    let terminal_index = steps
        .iter()
        .enumerate()
        .fold(0, |best, (k, s)| if s.pl_tilted > steps[best].pl_tilted { k } else { best });
    Ok(DecimationTrajectory {
        steps,
        pl_max,
        pl_min,
        terminal_index,
        total_pairs: total,
    })
}
