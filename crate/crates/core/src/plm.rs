//! Pseudo log-likelihood of the coupled model, its gradient, and the
//! gradient-ascent maximiser shared by the decimation and L1 drivers.
//!
//! With residuals `E_ij = r_ij - tanh(h_ij)` and local fields
//! `h_ij = theta_i - d_j + sum_k w_ik r_kj`, the gradient blocks are
//!
//! ```text
//! dPL/dtheta_i = sum_j E_ij
//! dPL/dd_j     = -sum_i E_ij - (d_j - mu) / sigma2
//! dPL/dw_ik    = sum_j (E_ij r_kj + E_kj r_ij)
//! ```
//!
//! The last line is `2 sum_j r_ij r_kj - sum_j r_kj A_ij - sum_j r_ij A_kj`
//! with `A = tanh(h)`.

use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log2cosh, log2cosh_tanh, Couplings, CouplingSupport, ModelParams, Pair};
use crate::scores::ScoreMatrix;

/// Gaussian prior `N(mu, sigma2)` on the difficulties and `N(0,
/// coupling_sigma2)` on every free coupling. An infinite coupling variance
/// drops the coupling term.
///
/// Without the coupling term the maximum can sit at infinity: a pair that
/// agrees on nearly every problem lets the ascent trade ever larger couplings
/// against ever larger abilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub mu: f64,
    pub sigma2: f64,
    pub coupling_sigma2: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            mu: 0.0,
            sigma2: 0.5,
            coupling_sigma2: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) || !self.mu.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "prior needs finite mu and sigma2 > 0 (got mu={}, sigma2={})",
                self.mu, self.sigma2
            )));
        }
        if !(self.coupling_sigma2 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "coupling_sigma2 must be > 0 (got {})",
                self.coupling_sigma2
            )));
        }
        Ok(())
    }

    /// Difficulty prior only.
    pub fn difficulties(mu: f64, sigma2: f64) -> Self {
        PriorConfig {
            mu,
            sigma2,
            coupling_sigma2: f64::INFINITY,
        }
    }

    fn coupling_precision(&self) -> f64 {
        1.0 / self.coupling_sigma2
    }
}

/// Settings for the ascent.
///
/// Steps are taken along the gradient scaled per block by the number of
/// terms it sums (`1/J` for abilities, `1/(2J)` for couplings,
/// `1/(I + 1/sigma2)` for difficulties). `learning_rate` is the initial step
/// on that scaled gradient; it is halved whenever a step fails to increase
/// the objective and grows after successful steps. The ascent stops after
/// `max_iterations` accepted steps or once the max-norm of the scaled
/// gradient falls below `gradient_tolerance`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Nesterov extrapolation between steps (with restart on any decrease).
    pub accelerated: bool,
    pub adaptive_step: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            learning_rate: 0.5,
            max_iterations: 5000,
            gradient_tolerance: 1e-8,
            accelerated: true,
            adaptive_step: true,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be > 0 (got {})",
                self.learning_rate
            )));
        }
        if !(self.gradient_tolerance >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gradient_tolerance must be >= 0 (got {})",
                self.gradient_tolerance
            )));
        }
        Ok(())
    }
}

/// Couplings allowed to move during a fit. Every other pair is held at 0.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CouplingMask {
    free: CouplingSupport,
}

impl CouplingMask {
    /// Every pair of `examinees` is free.
    pub fn all(examinees: usize) -> Self {
        CouplingMask {
            free: CouplingSupport::all(examinees),
        }
    }

    /// Every coupling frozen at 0.
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_support(free: CouplingSupport) -> Self {
        CouplingMask { free }
    }

    pub fn free(&self) -> &CouplingSupport {
        &self.free
    }

    pub fn is_free(&self, pair: &Pair) -> bool {
        self.free.contains(pair)
    }
}

/// Gradient of the pseudo log-likelihood. `w` holds free pairs only.
#[derive(Clone, Debug, PartialEq)]
pub struct PlmGradient {
    pub theta: Vec<f64>,
    pub d: Vec<f64>,
    pub w: Couplings,
}

/// Result of a maximisation.
#[derive(Clone, Debug)]
pub struct PlmFit {
    pub params: ModelParams,
    /// Maximised objective (pseudo log-likelihood, minus any L1 penalty).
    pub objective: f64,
    /// Pseudo log-likelihood at `params`, without penalty.
    pub pl: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

fn check_dims(params: &ModelParams, data: &ScoreMatrix) -> Result<()> {
    if params.examinees() != data.examinees() {
        return Err(Error::DimensionMismatch {
            what: "examinees in params vs data",
            expected: data.examinees(),
            got: params.examinees(),
        });
    }
    if params.problems() != data.problems() {
        return Err(Error::DimensionMismatch {
            what: "problems in params vs data",
            expected: data.problems(),
            got: params.problems(),
        });
    }
    Ok(())
}

/// Pseudo log-likelihood including the Gaussian prior on difficulties.
pub fn pseudo_log_likelihood(params: &ModelParams, data: &ScoreMatrix, prior: &PriorConfig) -> Result<f64> {
    check_dims(params, data)?;
    prior.validate()?;
    let free: Vec<Pair> = params.couplings().iter().map(|(p, _)| p).collect();
    let problem = Problem::new(data, *prior, free, 0.0);
    let point = Point::from_params(params, &problem);
    Ok(problem.pl_only(&point))
}

/// Analytic gradient with respect to `theta`, `d` and the free couplings.
pub fn plm_gradient(
    params: &ModelParams,
    data: &ScoreMatrix,
    prior: &PriorConfig,
    mask: &CouplingMask,
) -> Result<PlmGradient> {
    check_dims(params, data)?;
    prior.validate()?;
    // Fields use every stored coupling; the gradient is reported on the mask.
    let mut pairs: Vec<Pair> = params.couplings().iter().map(|(p, _)| p).collect();
    pairs.extend(mask.free().iter());
    pairs.sort();
    pairs.dedup();
    let problem = Problem::new(data, *prior, pairs, 0.0);
    let point = Point::from_params(params, &problem);
    let eval = problem.evaluate(&point);
    let g = problem.gradient(&point, &eval);
    let w = problem
        .free
        .iter()
        .zip(g.w.iter())
        .filter(|(p, _)| mask.is_free(p))
        .map(|(p, v)| (*p, *v))
        .collect();
    Ok(PlmGradient {
        theta: g.theta.to_vec(),
        d: g.d.to_vec(),
        w,
    })
}

/// Maximises the pseudo log-likelihood over abilities, difficulties and the
/// couplings left free by `mask`, starting from `init`.
pub fn plm_maximize(
    data: &ScoreMatrix,
    prior: &PriorConfig,
    mask: &CouplingMask,
    init: &ModelParams,
    opts: &FitOptions,
) -> Result<PlmFit> {
    maximize_penalized(data, prior, mask, init, opts, 0.0)
}

/// Shared ascent for `PL - lambda * sum |w|` over the free pairs.
pub(crate) fn maximize_penalized(
    data: &ScoreMatrix,
    prior: &PriorConfig,
    mask: &CouplingMask,
    init: &ModelParams,
    opts: &FitOptions,
    lambda: f64,
) -> Result<PlmFit> {
    check_dims(init, data)?;
    prior.validate()?;
    opts.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0 (got {lambda})")));
    }
    for (p, w) in init.couplings().iter() {
        if w != 0.0 && !mask.is_free(&p) {
            return Err(Error::InvalidConfig(format!(
                "initial coupling {p} = {w} is frozen by the mask but nonzero"
            )));
        }
    }
    let problem = Problem::new(data, *prior, mask.free().iter().collect(), lambda);
    let start = Point::from_params(init, &problem);
    let outcome = problem.ascend(start, opts)?;
    let pl = problem.pl_only(&outcome.point);
    Ok(PlmFit {
        params: outcome.point.into_params(&problem),
        objective: outcome.objective,
        pl,
        iterations: outcome.iterations,
        converged: outcome.converged,
        trace: outcome.trace,
    })
}

/// Soft-threshold operator `sign(v) * max(|v| - t, 0)`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Data and settings for one fit, with the free pairs in canonical order.
pub(crate) struct Problem {
    r: Array2<f64>,
    prior: PriorConfig,
    free: Vec<Pair>,
    lambda: f64,
    scale_theta: f64,
    scale_d: f64,
    scale_w: f64,
    dense: bool,
}

#[derive(Clone)]
pub(crate) struct Point {
    theta: Array1<f64>,
    d: Array1<f64>,
    /// Coupling values aligned with `Problem::free`.
    w: Array1<f64>,
}

pub(crate) struct Eval {
    pl: f64,
    resid: Array2<f64>,
}

pub(crate) struct Grad {
    theta: Array1<f64>,
    d: Array1<f64>,
    w: Array1<f64>,
}

struct Outcome {
    point: Point,
    objective: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

impl Point {
    fn from_params(params: &ModelParams, problem: &Problem) -> Point {
        Point {
            theta: Array1::from(params.theta().to_vec()),
            d: Array1::from(params.d().to_vec()),
            w: problem.free.iter().map(|p| params.couplings().get_pair(p)).collect(),
        }
    }

    fn into_params(self, problem: &Problem) -> ModelParams {
        let w = problem.free.iter().copied().zip(self.w.iter().copied()).collect();
        ModelParams::new(self.theta.to_vec(), self.d.to_vec(), w)
            .expect("dimensions fixed by the problem")
    }
}

impl Problem {
    pub(crate) fn new(data: &ScoreMatrix, prior: PriorConfig, free: Vec<Pair>, lambda: f64) -> Problem {
        let (n, m) = (data.examinees(), data.problems());
        let dense = free.len() * 4 > n * n;
        Problem {
            r: data.to_f64(),
            prior,
            free,
            lambda,
            scale_theta: 1.0 / m as f64,
            scale_d: 1.0 / (n as f64 + 1.0 / prior.sigma2),
            scale_w: 0.5 / m as f64,
            dense,
        }
    }

    /// Local fields `h_ij`.
    fn fields(&self, point: &Point) -> Array2<f64> {
        let (n, m) = self.r.dim();
        let mut h = if self.free.is_empty() {
            Array2::zeros((n, m))
        } else if self.dense {
            let mut wm = Array2::<f64>::zeros((n, n));
            for (p, &w) in self.free.iter().zip(point.w.iter()) {
                wm[[p.lo(), p.hi()]] = w;
                wm[[p.hi(), p.lo()]] = w;
            }
            wm.dot(&self.r)
        } else {
            let mut h = Array2::<f64>::zeros((n, m));
            for (p, &w) in self.free.iter().zip(point.w.iter()) {
                if w == 0.0 {
                    continue;
                }
                let (i, k) = (p.lo(), p.hi());
                h.row_mut(i).scaled_add(w, &self.r.row(k));
                h.row_mut(k).scaled_add(w, &self.r.row(i));
            }
            h
        };
        for (i, mut row) in h.axis_iter_mut(Axis(0)).enumerate() {
            let t = point.theta[i];
            Zip::from(&mut row).and(&point.d).for_each(|h, &d| *h += t - d);
        }
        h
    }

    fn prior_penalty(&self, point: &Point) -> f64 {
        let s2 = 2.0 * self.prior.sigma2;
        let mut total: f64 = point.d.iter().map(|d| (d - self.prior.mu).powi(2) / s2).sum();
        let prec = self.prior.coupling_precision();
        if prec > 0.0 {
            total += 0.5 * prec * point.w.iter().map(|w| w * w).sum::<f64>();
        }
        total
    }

    fn l1_penalty(&self, point: &Point) -> f64 {
        if self.lambda == 0.0 {
            0.0
        } else {
            self.lambda * point.w.iter().map(|w| w.abs()).sum::<f64>()
        }
    }

    pub(crate) fn pl_only(&self, point: &Point) -> f64 {
        let h = self.fields(point);
        let mut total = 0.0;
        for (hrow, rrow) in h.rows().into_iter().zip(self.r.rows()) {
            let row: f64 = hrow
                .iter()
                .zip(rrow.iter())
                .map(|(&h, &r)| h * r - log2cosh(h))
                .sum();
            total += row;
        }
        total - self.prior_penalty(point)
    }

    pub(crate) fn evaluate(&self, point: &Point) -> Eval {
        let mut h = self.fields(point);
        let mut total = 0.0;
        for (mut hrow, rrow) in h.rows_mut().into_iter().zip(self.r.rows()) {
            let mut row = 0.0;
            for (h, &r) in hrow.iter_mut().zip(rrow.iter()) {
                let (lc, t) = log2cosh_tanh(*h);
                row += *h * r - lc;
                *h = r - t;
            }
            total += row;
        }
        Eval {
            pl: total - self.prior_penalty(point),
            resid: h,
        }
    }

    pub(crate) fn gradient(&self, point: &Point, eval: &Eval) -> Grad {
        let e = &eval.resid;
        let theta = e.sum_axis(Axis(1));
        let s2 = self.prior.sigma2;
        let mu = self.prior.mu;
        let mut d = e.sum_axis(Axis(0));
        Zip::from(&mut d)
            .and(&point.d)
            .for_each(|g, &dj| *g = -*g - (dj - mu) / s2);
        let mut w: Array1<f64> = if self.free.is_empty() {
            Array1::zeros(0)
        } else if self.dense {
            let g = e.dot(&self.r.t());
            self.free
                .iter()
                .map(|p| g[[p.lo(), p.hi()]] + g[[p.hi(), p.lo()]])
                .collect()
        } else {
            self.free
                .iter()
                .map(|p| {
                    let (i, k) = (p.lo(), p.hi());
                    e.row(i).dot(&self.r.row(k)) + e.row(k).dot(&self.r.row(i))
                })
                .collect()
        };
        let prec = self.prior.coupling_precision();
        if prec > 0.0 {
            Zip::from(&mut w).and(&point.w).for_each(|g, &v| *g -= prec * v);
        }
        Grad { theta, d, w }
    }

    /// Proximal step of length `step` along the scaled gradient.
    fn step(&self, point: &Point, grad: &Grad, step: f64) -> Point {
        let st = step * self.scale_theta;
        let sd = step * self.scale_d;
        let sw = step * self.scale_w;
        let thresh = sw * self.lambda;
        Point {
            theta: &point.theta + &(&grad.theta * st),
            d: &point.d + &(&grad.d * sd),
            w: Zip::from(&point.w)
                .and(&grad.w)
                .map_collect(|&w, &g| soft_threshold(w + sw * g, thresh)),
        }
    }

    /// `<g, delta>` and `|delta|^2` in the metric of the scaled step.
    fn model_terms(&self, from: &Point, to: &Point, grad: &Grad) -> (f64, f64) {
        let mut lin = 0.0;
        let mut quad = 0.0;
        let blocks = [
            (&from.theta, &to.theta, &grad.theta, self.scale_theta),
            (&from.d, &to.d, &grad.d, self.scale_d),
            (&from.w, &to.w, &grad.w, self.scale_w),
        ];
        for (a, b, g, scale) in blocks {
            for ((x0, x1), gi) in a.iter().zip(b.iter()).zip(g.iter()) {
                let dx = x1 - x0;
                lin += gi * dx;
                quad += dx * dx / scale;
            }
        }
        (lin, quad)
    }

    fn stationarity(&self, from: &Point, to: &Point, step: f64) -> f64 {
        let mut worst = 0.0f64;
        let blocks = [(&from.theta, &to.theta), (&from.d, &to.d), (&from.w, &to.w)];
        for (a, b) in blocks {
            for (x0, x1) in a.iter().zip(b.iter()) {
                worst = worst.max((x1 - x0).abs());
            }
        }
        worst / step
    }

    /// Accelerated proximal ascent with backtracking and restart.
    ///
    /// Accepted iterates never decrease the objective: when the extrapolated
    /// step would, momentum is dropped and the step is retaken from the last
    /// accepted point.
    fn ascend(&self, start: Point, opts: &FitOptions) -> Result<Outcome> {
        const GROW: f64 = 1.25;
        const MIN_STEP: f64 = 1e-14;

        let mut x = start;
        let mut x_eval = self.evaluate(&x);
        let mut objective = x_eval.pl - self.l1_penalty(&x);
        if !objective.is_finite() {
            return Err(Error::NonFinite { iteration: 0 });
        }
        let mut trace = vec![objective];
        let mut step = opts.learning_rate;
        let mut iterations = 0;
        let mut converged = false;
        // Extrapolated point and its evaluation; `None` means y == x.
        let mut y: Option<(Point, Eval)> = None;
        let mut momentum = 1.0f64;

        'outer: while iterations < opts.max_iterations {
            let (base, base_eval) = match &y {
                Some((p, e)) => (p, e),
                None => (&x, &x_eval),
            };
            let grad = self.gradient(base, base_eval);
            let (cand, cand_eval, cand_obj) = loop {
                let cand = self.step(base, &grad, step);
                if y.is_none() && self.stationarity(base, &cand, step) < opts.gradient_tolerance {
                    converged = true;
                    break 'outer;
                }
                let cand_eval = self.evaluate(&cand);
                let cand_obj = cand_eval.pl - self.l1_penalty(&cand);
                if cand_obj.is_finite() {
                    let (lin, quad) = self.model_terms(base, &cand, &grad);
                    // Sufficient increase against the quadratic model of the smooth part.
                    if cand_eval.pl - base_eval.pl >= lin - quad / (2.0 * step) {
                        break (cand, cand_eval, cand_obj);
                    }
                }
                step *= 0.5;
                if step < MIN_STEP {
                    if !cand_obj.is_finite() {
                        return Err(Error::NonFinite { iteration: iterations });
                    }
                    if y.is_some() {
                        y = None;
                        momentum = 1.0;
                        step = opts.learning_rate;
                        continue 'outer;
                    }
                    // No representable improvement left at this precision.
                    converged = true;
                    break 'outer;
                }
            };
            if cand_obj < objective {
                if y.is_none() {
                    // Only reachable through round-off at the optimum.
                    converged = true;
                    break;
                }
                y = None;
                momentum = 1.0;
                continue;
            }
            let next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
            let beta = (momentum - 1.0) / next;
            momentum = next;
            y = if beta > 0.0 && opts.accelerated {
                let extra = Point {
                    theta: &cand.theta + &((&cand.theta - &x.theta) * beta),
                    d: &cand.d + &((&cand.d - &x.d) * beta),
                    w: self.extrapolate_w(&cand.w, &x.w, beta),
                };
                let e = self.evaluate(&extra);
                e.pl.is_finite().then_some((extra, e))
            } else {
                None
            };
            x = cand;
            x_eval = cand_eval;
            objective = cand_obj;
            trace.push(objective);
            iterations += 1;
            if opts.adaptive_step {
                step *= GROW;
            }
        }
        Ok(Outcome {
            point: x,
            objective,
            iterations,
            converged,
            trace,
        })
    }

    fn extrapolate_w(&self, cur: &Array1<f64>, prev: &Array1<f64>, beta: f64) -> Array1<f64> {
        Zip::from(cur).and(prev).map_collect(|&c, &p| c + beta * (c - p))
    }
}
