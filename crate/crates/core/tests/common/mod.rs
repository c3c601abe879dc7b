#![allow(dead_code)]

use pairwise_irt::model::{Couplings, ModelParams, Pair};
use pairwise_irt::scores::ScoreMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random parameters with each pair coupled with probability `density`.
pub fn random_params(rng: &mut ChaCha8Rng, n: usize, m: usize, density: f64, scale: f64) -> ModelParams {
    let theta = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let d = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut w = Couplings::new();
    for p in Pair::all(n) {
        if rng.gen::<f64>() < density {
            w.insert(p, rng.gen_range(-scale..scale));
        }
    }
    ModelParams::new(theta, d, w).unwrap()
}

pub fn random_scores(rng: &mut ChaCha8Rng, n: usize, m: usize) -> ScoreMatrix {
    let v: Vec<i8> = (0..n * m).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
    ScoreMatrix::new(ndarray::Array2::from_shape_vec((n, m), v).unwrap()).unwrap()
}

/// Symmetric dense coupling matrix with a zero diagonal.
pub fn dense(params: &ModelParams) -> Vec<Vec<f64>> {
    let n = params.examinees();
    let mut w = vec![vec![0.0; n]; n];
    for (p, v) in params.couplings().iter() {
        w[p.lo()][p.hi()] = v;
        w[p.hi()][p.lo()] = v;
    }
    w
}

/// `-sum_i b_i x_i - sum_{i<k} w_ik x_i x_k` written out longhand.
pub fn brute_energy(x: &[i8], theta: &[f64], d_j: f64, w: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let mut e = 0.0;
    for i in 0..n {
        e -= (theta[i] - d_j) * x[i] as f64;
        for k in i + 1..n {
            e -= w[i][k] * (x[i] as f64) * (x[k] as f64);
        }
    }
    e
}

/// State `s` with examinee `i` answering +1 when bit `i` is set.
pub fn state(s: usize, n: usize) -> Vec<i8> {
    (0..n).map(|i| if s >> i & 1 == 1 { 1 } else { -1 }).collect()
}

/// Boltzmann probabilities of every state of column `j`.
pub fn brute_distribution(params: &ModelParams, j: usize) -> Vec<f64> {
    let n = params.examinees();
    let w = dense(params);
    let weights: Vec<f64> = (0..1usize << n)
        .map(|s| (-brute_energy(&state(s, n), params.theta(), params.d()[j], &w)).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    weights.into_iter().map(|v| v / z).collect()
}

/// `P(x_i | rest)` by summing the joint over both values of `x_i`.
pub fn brute_conditional(params: &ModelParams, j: usize, x: &[i8], i: usize) -> f64 {
    let w = dense(params);
    let mut flipped = x.to_vec();
    flipped[i] = -x[i];
    let a = (-brute_energy(x, params.theta(), params.d()[j], &w)).exp();
    let b = (-brute_energy(&flipped, params.theta(), params.d()[j], &w)).exp();
    a / (a + b)
}

/// Sum of log conditionals over all entries, minus both Gaussian penalties.
pub fn brute_pl(params: &ModelParams, data: &ScoreMatrix, mu: f64, sigma2: f64, coupling_sigma2: f64) -> f64 {
    let (n, m) = (data.examinees(), data.problems());
    let mut total = 0.0;
    for j in 0..m {
        let x: Vec<i8> = (0..n).map(|i| data.get(i, j)).collect();
        for i in 0..n {
            total += brute_conditional(params, j, &x, i).ln();
        }
    }
    let prior_d: f64 = params.d().iter().map(|d| (d - mu).powi(2) / (2.0 * sigma2)).sum();
    let prior_w: f64 = params.couplings().iter().map(|(_, v)| v * v).sum::<f64>() / (2.0 * coupling_sigma2);
    total - prior_d - prior_w
}

pub fn with_coupling(params: &ModelParams, pair: Pair, value: f64) -> ModelParams {
    let (theta, d, mut w) = params.clone().into_parts();
    w.insert(pair, value);
    ModelParams::new(theta, d, w).unwrap()
}

pub fn with_theta(params: &ModelParams, i: usize, value: f64) -> ModelParams {
    let (mut theta, d, w) = params.clone().into_parts();
    theta[i] = value;
    ModelParams::new(theta, d, w).unwrap()
}

pub fn with_d(params: &ModelParams, j: usize, value: f64) -> ModelParams {
    let (theta, mut d, w) = params.clone().into_parts();
    d[j] = value;
    ModelParams::new(theta, d, w).unwrap()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
