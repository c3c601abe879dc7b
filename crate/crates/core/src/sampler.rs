//! Ground-truth parameters and synthetic answer sheets.

use rand::Rng as _;
use rand_distr::{Bernoulli, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{column_log_distribution, logistic_sign, Couplings, ModelParams, Pair, MAX_ENUMERATION_SITES};
use crate::rng::{column_rng, Rng};
use crate::scores::ScoreMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McmcMethod {
    Gibbs,
    Exact,
}

impl std::str::FromStr for McmcMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gibbs" => Ok(McmcMethod::Gibbs),
            "exact" => Ok(McmcMethod::Exact),
            other => Err(Error::InvalidConfig(format!("unknown sampling method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub examinees: usize,
    pub problems: usize,
    /// Probability that a pair of examinees is a cheating pair.
    pub p: f64,
    pub coupling_value: f64,
    pub param_mean: f64,
    /// Variance (not standard deviation) of the ability and difficulty draws.
    pub param_variance: f64,
    pub seed: u64,
    /// Heat-bath sweeps per column (burn-in from a random start).
    pub mcmc_sweeps: usize,
    pub mcmc_method: McmcMethod,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            examinees: 30,
            problems: 1000,
            p: 0.1,
            coupling_value: 1.0,
            param_mean: 0.0,
            param_variance: 0.5,
            seed: 0,
            mcmc_sweeps: 100,
            mcmc_method: McmcMethod::Gibbs,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.examinees < 2 {
            return bad(format!("need at least 2 examinees, got {}", self.examinees));
        }
        if self.problems < 1 {
            return bad("need at least 1 problem".into());
        }
        if !(0.0..=1.0).contains(&self.p) {
            return bad(format!("p must lie in [0, 1], got {}", self.p));
        }
        if !(self.param_variance > 0.0 && self.param_variance.is_finite()) {
            return bad(format!("param_variance must be > 0, got {}", self.param_variance));
        }
        if !self.coupling_value.is_finite() || !self.param_mean.is_finite() {
            return bad("coupling_value and param_mean must be finite".into());
        }
        if self.mcmc_method == McmcMethod::Gibbs && self.mcmc_sweeps < 1 {
            return bad("Gibbs sampling needs at least one sweep".into());
        }
        if self.mcmc_method == McmcMethod::Exact && self.examinees > MAX_ENUMERATION_SITES {
            return Err(Error::TooLargeForEnumeration {
                size: self.examinees,
                limit: MAX_ENUMERATION_SITES,
            });
        }
        Ok(())
    }
}

/// Draws abilities, difficulties and the cheating pairs.
///
/// Draw order is fixed: abilities, one Bernoulli per pair in canonical order,
/// then difficulties. For a given seed the examinees and cheating pairs are
/// therefore the same whatever the number of problems.
pub fn generate_truth(config: &GenerationConfig, rng: &mut Rng) -> Result<ModelParams> {
    config.validate()?;
    let normal = Normal::new(config.param_mean, config.param_variance.sqrt())
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let theta: Vec<f64> = (0..config.examinees).map(|_| normal.sample(rng)).collect();
    let cheat = Bernoulli::new(config.p).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let w: Couplings = Pair::all(config.examinees)
        .filter(|_| cheat.sample(rng))
        .map(|p| (p, config.coupling_value))
        .collect();
    let d: Vec<f64> = (0..config.problems).map(|_| normal.sample(rng)).collect();
    ModelParams::new(theta, d, w)
}

/// One column of answers by sequential heat-bath sweeps from a random start.
pub fn gibbs_sample_column(params: &ModelParams, j: usize, sweeps: usize, rng: &mut Rng) -> Result<Vec<i8>> {
    if sweeps < 1 {
        return Err(Error::InvalidConfig("Gibbs sampling needs at least one sweep".into()));
    }
    if j >= params.problems() {
        return Err(Error::IndexOutOfRange {
            what: "problem",
            index: j,
            len: params.problems(),
        });
    }
    let adj = params.neighbours();
    Ok(gibbs_column(params, &adj, j, sweeps, rng))
}

fn gibbs_column(params: &ModelParams, adj: &[Vec<(usize, f64)>], j: usize, sweeps: usize, rng: &mut Rng) -> Vec<i8> {
    let n = params.examinees();
    let bias: Vec<f64> = params.theta().iter().map(|t| t - params.d()[j]).collect();
    let mut x: Vec<i8> = (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
    for _ in 0..sweeps {
        for i in 0..n {
            let h = bias[i] + adj[i].iter().map(|&(k, w)| w * f64::from(x[k])).sum::<f64>();
            let up = logistic_sign(h, 1.0);
            x[i] = if rng.gen::<f64>() < up { 1 } else { -1 };
        }
    }
    x
}

/// One column drawn exactly by inverse CDF over all `2^I` states.
pub fn exact_sample_column(params: &ModelParams, j: usize, rng: &mut Rng) -> Result<Vec<i8>> {
    let logp = column_log_distribution(params, j)?;
    Ok(draw_state(&logp, params.examinees(), rng))
}

fn draw_state(logp: &[f64], n: usize, rng: &mut Rng) -> Vec<i8> {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut chosen = logp.len() - 1;
    for (s, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            chosen = s;
            break;
        }
    }
    crate::model::state_from_index(chosen, n)
}

/// Samples all `J` columns. Column `j` uses its own stream keyed by one draw
/// from `rng`, so the result does not depend on evaluation order.
pub fn generate_scores(params: &ModelParams, config: &GenerationConfig, rng: &mut Rng) -> Result<ScoreMatrix> {
    config.validate()?;
    if params.examinees() != config.examinees || params.problems() != config.problems {
        return Err(Error::DimensionMismatch {
            what: "params vs generation config (examinees x problems)",
            expected: config.examinees * config.problems,
            got: params.examinees() * params.problems(),
        });
    }
    let key: u64 = rng.gen();
    let columns: Vec<Vec<i8>> = match config.mcmc_method {
        McmcMethod::Gibbs => {
            let adj = params.neighbours();
            (0..config.problems)
                .into_par_iter()
                .map(|j| gibbs_column(params, &adj, j, config.mcmc_sweeps, &mut column_rng(key, j)))
                .collect()
        }
        McmcMethod::Exact => (0..config.problems)
            .into_par_iter()
            .map(|j| exact_sample_column(params, j, &mut column_rng(key, j)))
            .collect::<Result<_>>()?,
    };
    ScoreMatrix::from_columns(&columns)
}
