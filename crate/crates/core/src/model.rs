//! The item-response model with pairwise couplings between examinees.
//!
//! One column of answers `x` (one problem `j`, all `I` examinees) has energy
//!
//! ```text
//! E(x) = -sum_i (theta_i - d_j) x_i - sum_{i<k} w_ik x_i x_k
//! ```
//!
//! and probability `exp(-E(x)) / Z_j`. Each unordered pair is stored and
//! counted once, so the conditional of a single answer given the rest of the
//! column is a logistic function of the local field
//! `h_i = theta_i - d_j + sum_k w_ik x_k`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest examinee count accepted by the exact enumeration routines.
pub const MAX_ENUMERATION_SITES: usize = 20;

/// An unordered examinee pair, stored canonically with `lo < hi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    lo: usize,
    hi: usize,
}

impl Pair {
    pub fn new(i: usize, k: usize) -> Result<Pair> {
        match i.cmp(&k) {
            std::cmp::Ordering::Less => Ok(Pair { lo: i, hi: k }),
            std::cmp::Ordering::Greater => Ok(Pair { lo: k, hi: i }),
            std::cmp::Ordering::Equal => Err(Error::SelfCoupling(i)),
        }
    }

    pub fn lo(self) -> usize {
        self.lo
    }

    pub fn hi(self) -> usize {
        self.hi
    }

    pub fn contains(self, i: usize) -> bool {
        self.lo == i || self.hi == i
    }

    /// Every pair of `n` examinees in canonical (lexicographic) order.
    pub fn all(n: usize) -> impl Iterator<Item = Pair> {
        (0..n).flat_map(move |lo| (lo + 1..n).map(move |hi| Pair { lo, hi }))
    }

    pub fn count(n: usize) -> usize {
        n * n.saturating_sub(1) / 2
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.lo, self.hi)
    }
}

/// A set of unordered examinee pairs, e.g. the pairs with nonzero coupling.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CouplingSupport(BTreeSet<Pair>);

impl CouplingSupport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn all(n: usize) -> Self {
        CouplingSupport(Pair::all(n).collect())
    }

    pub fn insert(&mut self, pair: Pair) -> bool {
        self.0.insert(pair)
    }

    pub fn remove(&mut self, pair: &Pair) -> bool {
        self.0.remove(pair)
    }

    pub fn contains(&self, pair: &Pair) -> bool {
        self.0.contains(pair)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Pair> + '_ {
        self.0.iter().copied()
    }

    pub fn is_subset(&self, other: &CouplingSupport) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn intersection_len(&self, other: &CouplingSupport) -> usize {
        self.0.intersection(&other.0).count()
    }
}

impl FromIterator<Pair> for CouplingSupport {
    fn from_iter<T: IntoIterator<Item = Pair>>(iter: T) -> Self {
        CouplingSupport(iter.into_iter().collect())
    }
}

/// Symmetric coupling map. Absent pairs have coupling 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Couplings(BTreeMap<Pair, f64>);

impl Couplings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Coupling between `i` and `k`; 0 for absent pairs and for `i == k`.
    pub fn get(&self, i: usize, k: usize) -> f64 {
        Pair::new(i, k)
            .ok()
            .and_then(|p| self.0.get(&p).copied())
            .unwrap_or(0.0)
    }

    pub fn contains(&self, pair: &Pair) -> bool {
        self.0.contains_key(pair)
    }

    pub fn get_pair(&self, pair: &Pair) -> f64 {
        self.0.get(pair).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, i: usize, k: usize, value: f64) -> Result<()> {
        self.0.insert(Pair::new(i, k)?, value);
        Ok(())
    }

    pub fn insert(&mut self, pair: Pair, value: f64) {
        self.0.insert(pair, value);
    }

    pub fn remove(&mut self, pair: &Pair) -> Option<f64> {
        self.0.remove(pair)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Pair, f64)> + '_ {
        self.0.iter().map(|(p, w)| (*p, *w))
    }

    /// Pairs whose stored coupling is nonzero.
    pub fn support(&self) -> CouplingSupport {
        self.iter().filter(|(_, w)| *w != 0.0).map(|(p, _)| p).collect()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.0.keys().map(|p| p.hi).max()
    }
}

impl FromIterator<(Pair, f64)> for Couplings {
    fn from_iter<T: IntoIterator<Item = (Pair, f64)>>(iter: T) -> Self {
        Couplings(iter.into_iter().collect())
    }
}

/// Abilities `theta` (one per examinee), difficulties `d` (one per problem)
/// and the symmetric couplings `w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRecord", into = "ParamsRecord")]
pub struct ModelParams {
    theta: Vec<f64>,
    d: Vec<f64>,
    w: Couplings,
}

impl ModelParams {
    pub fn new(theta: Vec<f64>, d: Vec<f64>, w: Couplings) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidConfig("at least one examinee is required".into()));
        }
        if d.is_empty() {
            return Err(Error::InvalidConfig("at least one problem is required".into()));
        }
        if let Some(max) = w.max_index() {
            if max >= theta.len() {
                return Err(Error::IndexOutOfRange {
                    what: "examinee",
                    index: max,
                    len: theta.len(),
                });
            }
        }
        Ok(ModelParams { theta, d, w })
    }

    /// All-zero parameters with no couplings.
    pub fn zeros(examinees: usize, problems: usize) -> Result<Self> {
        Self::new(vec![0.0; examinees], vec![0.0; problems], Couplings::new())
    }

    pub fn examinees(&self) -> usize {
        self.theta.len()
    }

    pub fn problems(&self) -> usize {
        self.d.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn couplings(&self) -> &Couplings {
        &self.w
    }

    pub fn coupling(&self, i: usize, k: usize) -> f64 {
        self.w.get(i, k)
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>, Couplings) {
        (self.theta, self.d, self.w)
    }

    /// Dense symmetric `I x I` coupling matrix with zero diagonal.
    pub fn coupling_matrix(&self) -> Array2<f64> {
        let n = self.examinees();
        let mut m = Array2::zeros((n, n));
        for (p, w) in self.w.iter() {
            m[[p.lo, p.hi]] = w;
            m[[p.hi, p.lo]] = w;
        }
        m
    }

    /// Neighbour lists `(k, w_ik)` for every examinee, nonzero couplings only.
    pub fn neighbours(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.examinees()];
        for (p, w) in self.w.iter().filter(|(_, w)| *w != 0.0) {
            adj[p.lo].push((p.hi, w));
            adj[p.hi].push((p.lo, w));
        }
        adj
    }

    /// Adds `eta` to every ability and every difficulty. The model
    /// distribution is unchanged by this shift.
    pub fn gauge_shift(&self, eta: f64) -> ModelParams {
        ModelParams {
            theta: self.theta.iter().map(|t| t + eta).collect(),
            d: self.d.iter().map(|d| d + eta).collect(),
            w: self.w.clone(),
        }
    }

    fn check_problem(&self, j: usize) -> Result<()> {
        if j >= self.problems() {
            return Err(Error::IndexOutOfRange {
                what: "problem",
                index: j,
                len: self.problems(),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsRecord {
    theta: Vec<f64>,
    d: Vec<f64>,
    w: Vec<(usize, usize, f64)>,
}

impl TryFrom<ParamsRecord> for ModelParams {
    type Error = Error;

    fn try_from(rec: ParamsRecord) -> Result<Self> {
        let mut w = Couplings::new();
        for (i, k, v) in rec.w {
            w.set(i, k, v)?;
        }
        ModelParams::new(rec.theta, rec.d, w)
    }
}

impl From<ModelParams> for ParamsRecord {
    fn from(p: ModelParams) -> Self {
        ParamsRecord {
            w: p.w.iter().map(|(pair, v)| (pair.lo, pair.hi, v)).collect(),
            theta: p.theta,
            d: p.d,
        }
    }
}

pub(crate) fn check_signs(x: &[i8]) -> Result<()> {
    match x.iter().find(|&&v| v != 1 && v != -1) {
        Some(&v) => Err(Error::InvalidSign(v as i64)),
        None => Ok(()),
    }
}

/// `ln(2 cosh h)` and `tanh h`, sharing one exponential.
#[inline]
pub(crate) fn log2cosh_tanh(h: f64) -> (f64, f64) {
    let a = h.abs();
    let e = (-2.0 * a).exp();
    let t = (1.0 - e) / (1.0 + e);
    (a + e.ln_1p(), t.copysign(h))
}

#[inline]
pub(crate) fn log2cosh(h: f64) -> f64 {
    let a = h.abs();
    a + (-2.0 * a).exp().ln_1p()
}

/// `exp(h r) / (2 cosh h)` for a sign `r`.
#[inline]
pub(crate) fn logistic_sign(h: f64, r: f64) -> f64 {
    let z = h * r;
    if z >= 0.0 {
        1.0 / (1.0 + (-2.0 * z).exp())
    } else {
        let e = (2.0 * z).exp();
        e / (1.0 + e)
    }
}

/// Energy of one answer column for problem difficulty `d_j`.
pub fn column_energy(x: &[i8], theta: &[f64], d_j: f64, w: &Couplings) -> Result<f64> {
    if x.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            what: "column length vs abilities",
            expected: theta.len(),
            got: x.len(),
        });
    }
    check_signs(x)?;
    if let Some(max) = w.max_index() {
        if max >= x.len() {
            return Err(Error::IndexOutOfRange {
                what: "examinee",
                index: max,
                len: x.len(),
            });
        }
    }
    let field: f64 = x
        .iter()
        .zip(theta)
        .map(|(&xi, &t)| (t - d_j) * f64::from(xi))
        .sum();
    let pairs: f64 = w
        .iter()
        .map(|(p, wik)| wik * f64::from(x[p.lo] * x[p.hi]))
        .sum();
    Ok(-field - pairs)
}

/// Sign vector for enumeration index `state`: bit `i` set means `x_i = +1`.
pub fn state_from_index(state: usize, n: usize) -> Vec<i8> {
    (0..n)
        .map(|i| if state >> i & 1 == 1 { 1 } else { -1 })
        .collect()
}

pub fn index_from_state(x: &[i8]) -> usize {
    x.iter()
        .enumerate()
        .filter(|(_, &v)| v > 0)
        .fold(0, |acc, (i, _)| acc | 1 << i)
}

/// Exact log-probabilities of all `2^I` columns of problem `j`, indexed as
/// in [`state_from_index`].
pub fn column_log_distribution(params: &ModelParams, j: usize) -> Result<Vec<f64>> {
    let n = params.examinees();
    if n > MAX_ENUMERATION_SITES {
        return Err(Error::TooLargeForEnumeration {
            size: n,
            limit: MAX_ENUMERATION_SITES,
        });
    }
    params.check_problem(j)?;
    let fields: Vec<f64> = params.theta.iter().map(|t| t - params.d[j]).collect();
    let pairs: Vec<(usize, usize, f64)> =
        params.w.iter().map(|(p, w)| (p.lo, p.hi, w)).collect();

    let neg_energy: Vec<f64> = (0..1usize << n)
        .map(|s| {
            let spin = |i: usize| if s >> i & 1 == 1 { 1.0 } else { -1.0 };
            let f: f64 = fields.iter().enumerate().map(|(i, h)| h * spin(i)).sum();
            let c: f64 = pairs.iter().map(|&(i, k, w)| w * spin(i) * spin(k)).sum();
            f + c
        })
        .collect();
    let max = neg_energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + neg_energy.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
    Ok(neg_energy.into_iter().map(|e| e - log_z).collect())
}

/// `ln P(x)` for column `x` of problem `j`, normalised by enumeration.
pub fn column_log_prob_exact(x: &[i8], params: &ModelParams, j: usize) -> Result<f64> {
    if x.len() != params.examinees() {
        return Err(Error::DimensionMismatch {
            what: "column length vs abilities",
            expected: params.examinees(),
            got: x.len(),
        });
    }
    check_signs(x)?;
    let dist = column_log_distribution(params, j)?;
    Ok(dist[index_from_state(x)])
}

/// Local field on examinee `i` for problem `j` given the rest of the column.
pub fn local_field(i: usize, j: usize, column: &[i8], params: &ModelParams) -> Result<f64> {
    if column.len() != params.examinees() {
        return Err(Error::DimensionMismatch {
            what: "column length vs abilities",
            expected: params.examinees(),
            got: column.len(),
        });
    }
    if i >= params.examinees() {
        return Err(Error::IndexOutOfRange {
            what: "examinee",
            index: i,
            len: params.examinees(),
        });
    }
    params.check_problem(j)?;
    check_signs(column)?;
    let coupled: f64 = params
        .w
        .iter()
        .filter(|(p, _)| p.contains(i))
        .map(|(p, w)| {
            let k = if p.lo == i { p.hi } else { p.lo };
            w * f64::from(column[k])
        })
        .sum();
    Ok(params.theta[i] - params.d[j] + coupled)
}

/// `P(r_ij | rest of column j)`. Entry `i` of `column` is ignored.
pub fn conditional_prob(
    r_ij: i8,
    i: usize,
    j: usize,
    column: &[i8],
    params: &ModelParams,
) -> Result<f64> {
    check_signs(&[r_ij])?;
    let h = local_field(i, j, column, params)?;
    Ok(logistic_sign(h, f64::from(r_ij)))
}
