//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the library's numerical code paths; each helper
//! recomputes its quantity the slow, obvious way.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sdr_core::dataset::{Phenotype, PredictorMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
}

/// Three-class response driven by two coordinates, so the central subspace
/// is span(e1, e2).
pub fn three_class(seed: u64, n: usize, p: usize) -> (PredictorMatrix, Phenotype) {
    let mut r = rng(seed);
    let x = normal_matrix(&mut r, n, p);
    let labels = (0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut r);
            if x[(i, 0)] + 0.5 * e > 0.5 {
                2.0
            } else if x[(i, 1)] > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    (
        PredictorMatrix::from_values(x).unwrap().center().unwrap(),
        Phenotype::discrete(labels).unwrap(),
    )
}

/// Small least-squares instance for the penalized step with d = 1.
pub struct TinyStep {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub lambda: f64,
}

pub fn tiny_step(seed: u64) -> TinyStep {
    let mut r = rng(seed);
    let n = 20;
    let p = r.random_range(1..=5);
    let x = normal_matrix(&mut r, n, p);
    let z = DMatrix::from_fn(n, 2, |i, j| if j == 0 || i % 2 == 0 { 1.0 } else { 0.0 });
    let theta = DMatrix::from_column_slice(2, 1, &[-1.0, 2.0]);
    let lambda = r.random_range(0.5..10.0);
    TinyStep {
        x,
        z,
        theta,
        lambda,
    }
}

/// `argmin_{s >= 0} 0.5 (s - a)^2 + t s^(1 - r)` by grid search plus golden section.
pub fn scalar_prox(a: f64, t: f64, r: f64) -> f64 {
    if r == 0.0 {
        return (a - t).max(0.0);
    }
    let f = |s: f64| 0.5 * (s - a).powi(2) + t * if s == 0.0 { 0.0 } else { s.powf(1.0 - r) };
    let m = 200;
    let mut best = (f(0.0), 0.0);
    for i in 1..=m {
        let s = a * i as f64 / m as f64;
        if f(s) < best.0 {
            best = (f(s), s);
        }
    }
    let step = a / m as f64;
    let (mut lo, mut hi) = ((best.1 - step).max(0.0), best.1 + step);
    for _ in 0..60 {
        let u = lo + (hi - lo) * 0.381_966;
        let v = lo + (hi - lo) * 0.618_034;
        if f(u) < f(v) {
            hi = v;
        } else {
            lo = u;
        }
    }
    let s = 0.5 * (lo + hi);
    if f(s) < best.0 {
        s
    } else {
        best.1
    }
}

/// Proximal gradient on `||y - X b||^2 + lambda sum_l |b_l|^(1 - r)`.
pub fn prox_gradient(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    r: f64,
    start: DVector<f64>,
) -> DVector<f64> {
    prox_gradient_steps(x, y, lambda, r, start, 4000)
}

pub fn prox_gradient_steps(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    r: f64,
    start: DVector<f64>,
    steps: usize,
) -> DVector<f64> {
    let step = 1.0 / (2.0 * x.singular_values().max().powi(2));
    let mut b = start;
    for _ in 0..steps {
        let grad = x.transpose() * (x * &b - y) * 2.0;
        let v = &b - grad * step;
        b = v.map(|c| c.signum() * scalar_prox(c.abs(), step * lambda, r));
    }
    b
}

pub fn lasso_objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    b: &DVector<f64>,
    lambda: f64,
    r: f64,
) -> f64 {
    let pen: f64 = b
        .iter()
        .filter(|v| **v != 0.0)
        .map(|v| v.abs().powf(1.0 - r))
        .sum();
    (y - x * b).norm_squared() + lambda * pen
}

/// Minimizer of `rho/2 ||a - v||^2 + lambda((1 - delta)||a||^2 + delta ||a||^(1 - r))`
/// returned as the norm of `a` (the minimizer is parallel to `v`).
pub fn alpha_norm_oracle(norm_v: f64, lambda: f64, delta: f64, r: f64, rho: f64) -> f64 {
    let f = |s: f64| {
        let group = if s == 0.0 { 0.0 } else { s.powf(1.0 - r) };
        0.5 * rho * (s - norm_v).powi(2) + lambda * ((1.0 - delta) * s * s + delta * group)
    };
    let m = 20_000;
    let mut best = (f(0.0), 0.0);
    for i in 1..=m {
        let s = norm_v * i as f64 / m as f64;
        if f(s) < best.0 {
            best = (f(s), s);
        }
    }
    if best.1 == 0.0 {
        return 0.0;
    }
    let step = norm_v / m as f64;
    let (mut lo, mut hi) = ((best.1 - step).max(0.0), best.1 + step);
    for _ in 0..100 {
        let u = lo + (hi - lo) * 0.381_966;
        let v = lo + (hi - lo) * 0.618_034;
        if f(u) < f(v) {
            hi = v;
        } else {
            lo = u;
        }
    }
    0.5 * (lo + hi)
}

/// Between-slice covariance by explicit loops over samples.
pub fn brute_slice_cov(x: &DMatrix<f64>, slice_of: &[usize], h: usize) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut grand = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            grand[j] += x[(i, j)] / n as f64;
        }
    }
    let mut m = DMatrix::zeros(p, p);
    for s in 0..h {
        let rows: Vec<usize> = (0..n).filter(|&i| slice_of[i] == s).collect();
        if rows.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; p];
        for &i in &rows {
            for j in 0..p {
                mean[j] += x[(i, j)] / rows.len() as f64;
            }
        }
        let w = rows.len() as f64 / n as f64;
        for a in 0..p {
            for b in 0..p {
                m[(a, b)] += w * (mean[a] - grand[a]) * (mean[b] - grand[b]);
            }
        }
    }
    m
}

/// Pearson statistic for a 2 x c table, skipping empty columns.
pub fn direct_chi2(case: &[f64], control: &[f64]) -> (f64, usize) {
    let total: f64 = case.iter().chain(control).sum();
    let rows = [case.iter().sum::<f64>(), control.iter().sum::<f64>()];
    let mut stat = 0.0;
    let mut used = 0usize;
    for c in 0..case.len() {
        let col = case[c] + control[c];
        if col == 0.0 {
            continue;
        }
        used += 1;
        for (r, obs) in [case[c], control[c]].into_iter().enumerate() {
            let e = rows[r] * col / total;
            stat += (obs - e).powi(2) / e;
        }
    }
    (stat, used.saturating_sub(1))
}

/// Probability that a random case outscores a random control, ties half.
pub fn pairwise_auc(truth: &[bool], scores: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for i in 0..truth.len() {
        if !truth[i] {
            continue;
        }
        for j in 0..truth.len() {
            if truth[j] {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs
}
