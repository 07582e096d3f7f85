//! Alternating optimal-scoring fit.
//!
//! The objective `sum_i ||Z theta_i - X beta_i||^2 + penalty(B)` is
//! bi-convex: for fixed scores `Theta` the basis `B` comes from the ADMM
//! solver in [`crate::admm`]; for fixed `B` each score vector has a closed
//! fixed point under the constraints `theta_i' D theta_i = 1` and
//! `theta_i' D theta_j = 0` (j < i), with `theta_i` also D-orthogonal to the
//! constant score `e_1`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::admm::{solve_step_a_with, AdmmOptions, GramSolver, PenaltyParams, StepAProblem};
use crate::dataset::PredictorMatrix;
use crate::design::ScoringDesign;
use crate::error::{Result, SdrError};
use crate::linalg::canonical_signs;

/// Below this magnitude `theta' Z'X beta` is treated as zero.
pub const PAIRING_FLOOR: f64 = 1e-12;

const INIT_REDRAWS: usize = 10;

/// Solver for the score fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    #[default]
    Iterate,
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaOptions {
    pub mode: ThetaMode,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ThetaOptions {
    fn default() -> Self {
        Self {
            mode: ThetaMode::Iterate,
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// Everything one call to [`fit`] needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Number of directions; at most `K - 1`.
    pub d: usize,
    pub penalty: PenaltyParams,
    pub admm: AdmmOptions,
    pub outer_tol: f64,
    pub outer_max_iter: usize,
    pub theta: ThetaOptions,
    /// Seed for the random initial scores.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            d: 1,
            penalty: PenaltyParams::default(),
            admm: AdmmOptions::default(),
            outer_tol: 1e-5,
            outer_max_iter: 100,
            theta: ThetaOptions::default(),
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        self.penalty.validate()?;
        if self.d == 0 || self.d + 1 > k {
            return Err(SdrError::validation(format!(
                "d = {} must satisfy 1 <= d <= K - 1 = {}",
                self.d,
                k.saturating_sub(1)
            )));
        }
        if !(self.outer_tol > 0.0) || !(self.admm.tol > 0.0) || !(self.theta.tol > 0.0) {
            return Err(SdrError::validation("tolerances must be positive"));
        }
        if self.outer_max_iter == 0 || self.admm.max_iter == 0 || self.theta.max_iter == 0 {
            return Err(SdrError::validation("iteration caps must be >= 1"));
        }
        Ok(())
    }
}

/// Fitted basis and scores.
#[derive(Debug, Clone)]
pub struct DirectionSet {
    /// p x d basis; rows are exactly zero for dropped features.
    pub b: DMatrix<f64>,
    /// K x d scores.
    pub theta: DMatrix<f64>,
    /// K x (d + 1): the constant score `e_1` followed by the columns of `theta`.
    pub q: DMatrix<f64>,
    pub converged: bool,
    pub outer_iters: usize,
    /// Objective after every basis step, paired with the scores that step used.
    pub objective_history: Vec<f64>,
    /// ADMM iterations used by each outer iteration.
    pub inner_iterations: Vec<usize>,
    /// Whether every ADMM call met its tolerance.
    pub inner_converged: bool,
    /// Worst D-orthonormality violation seen over all outer iterations.
    pub max_constraint_violation: f64,
}

impl DirectionSet {
    pub fn d(&self) -> usize {
        self.b.ncols()
    }

    /// `||b_l||` for every feature.
    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.b.nrows()).map(|l| self.b.row(l).norm()).collect()
    }

    /// Indices of rows that are not identically zero.
    pub fn support(&self) -> Vec<usize> {
        (0..self.b.nrows())
            .filter(|&l| self.b.row(l).iter().any(|&v| v != 0.0))
            .collect()
    }
}

/// Largest violation of the score constraints.
pub fn constraint_violation(theta: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let q = with_constant(theta);
    let gram = q.transpose() * d * &q;
    let mut worst = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..=i {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

fn constant_score(k: usize) -> DVector<f64> {
    let mut e = DVector::zeros(k);
    e[0] = 1.0;
    e
}

fn with_constant(theta: &DMatrix<f64>) -> DMatrix<f64> {
    let k = theta.nrows();
    let mut cols = vec![constant_score(k)];
    cols.extend(theta.column_iter().map(|c| c.into_owned()));
    DMatrix::from_columns(&cols)
}

fn append_column(m: DMatrix<f64>, col: &DVector<f64>) -> DMatrix<f64> {
    let c = m.ncols();
    let mut out = m.insert_column(c, 0.0);
    out.set_column(c, col);
    out
}

fn factor_d(design: &ScoringDesign) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(design.d().clone())
        .ok_or_else(|| SdrError::Numerical("D = Z'Z/n is not positive definite".into()))
}

/// `v - Q Q' D v`, applied twice for numerical orthogonality.
fn deflate(v: &DVector<f64>, q: &DMatrix<f64>, d: &DMatrix<f64>) -> DVector<f64> {
    let mut out = v.clone();
    for _ in 0..2 {
        let coef = q.tr_mul(&(d * &out));
        out -= q * coef;
    }
    out
}

fn d_norm(v: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    v.dot(&(d * v)).max(0.0).sqrt()
}

/// Random D-orthonormal initial scores, deflated against the constant score.
///
/// Returns `(Theta, Q)` with `Q = [e_1, theta_1, .., theta_d]`.
pub fn init_theta(
    design: &ScoringDesign,
    d: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = design.k();
    if d == 0 || d + 1 > k {
        return Err(SdrError::validation(format!(
            "d = {d} must satisfy 1 <= d <= K - 1 = {}",
            k.saturating_sub(1)
        )));
    }
    factor_d(design)?;
    let dm = design.d();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = DMatrix::from_columns(&[constant_score(k)]);
    let mut thetas = Vec::with_capacity(d);
    for i in 0..d {
        let mut accepted = None;
        for _ in 0..INIT_REDRAWS {
            let draw = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
            let t = deflate(&draw, &q, dm);
            let nrm = d_norm(&t, dm);
            if nrm * nrm > 1e-12 {
                accepted = Some(t / nrm);
                break;
            }
        }
        let theta = accepted.ok_or_else(|| {
            SdrError::Numerical(format!(
                "initial score {i} degenerate after {INIT_REDRAWS} draws"
            ))
        })?;
        q = append_column(q, &theta);
        thetas.push(theta);
    }
    Ok((DMatrix::from_columns(&thetas), q))
}

/// Score update for one direction given `g = Z'X beta`.
///
/// Solves `theta = (I - Q Q'D) D^{-1} g / (theta' g)` by fixed-point
/// iteration or Newton's method starting from `init` (or from the
/// numerator when `init` is `None`), then rescales to D-unit length with the
/// sign that makes `theta' g` positive.
pub fn theta_fixed_point(
    g: &DVector<f64>,
    design: &ScoringDesign,
    q: &DMatrix<f64>,
    opts: &ThetaOptions,
    init: Option<&DVector<f64>>,
    direction: usize,
) -> Result<DVector<f64>> {
    let dm = design.d();
    let chol = factor_d(design)?;
    let numerator = deflate(&chol.solve(g), q, dm);
    let degenerate = |denominator: f64| SdrError::DegeneratePairing {
        direction,
        denominator,
    };

    let mut theta = init.cloned().unwrap_or_else(|| numerator.clone());
    match opts.mode {
        ThetaMode::Iterate => {
            for _ in 0..opts.max_iter {
                let denom = theta.dot(g);
                if denom.abs() < PAIRING_FLOOR {
                    return Err(degenerate(denom));
                }
                let next = &numerator / denom;
                let (a, b) = (d_norm(&theta, dm), d_norm(&next, dm));
                if b == 0.0 {
                    return Err(degenerate(denom));
                }
                let step = (&next / b - &theta / a.max(f64::MIN_POSITIVE)).norm();
                theta = next;
                if step <= opts.tol {
                    break;
                }
            }
        }
        ThetaMode::Newton => {
            let k = g.len();
            for _ in 0..opts.max_iter {
                let denom = theta.dot(g);
                if denom.abs() < PAIRING_FLOOR {
                    return Err(degenerate(denom));
                }
                let resid = &theta * denom - &numerator;
                let mut jac = DMatrix::<f64>::identity(k, k) * denom;
                jac.ger(1.0, &theta, g, 1.0);
                let step = jac.lu().solve(&resid).ok_or_else(|| degenerate(denom))?;
                theta -= &step;
                if step.norm() <= opts.tol * theta.norm().max(1.0) {
                    break;
                }
            }
        }
    }

    let denom = theta.dot(g);
    if denom.abs() < PAIRING_FLOOR || !denom.is_finite() {
        return Err(degenerate(denom));
    }
    if denom < 0.0 {
        theta.neg_mut();
    }
    let theta = deflate(&theta, q, dm);
    let nrm = d_norm(&theta, dm);
    if !(nrm > 0.0) {
        return Err(degenerate(denom));
    }
    Ok(theta / nrm)
}

/// [`theta_fixed_point`] from a basis vector: `g = (X'Z)' beta`.
pub fn theta_step(
    xtz: &DMatrix<f64>,
    design: &ScoringDesign,
    beta: &DVector<f64>,
    q: &DMatrix<f64>,
    opts: &ThetaOptions,
) -> Result<DVector<f64>> {
    let g = xtz.tr_mul(beta);
    theta_fixed_point(&g, design, q, opts, None, q.ncols().saturating_sub(1))
}

/// The full penalized objective at `(Theta, B)`.
pub fn objective(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    b: &DMatrix<f64>,
    penalty: &PenaltyParams,
) -> f64 {
    crate::admm::step_a_objective(x, z, theta, b, penalty)
}

/// Alternates the ADMM basis step and the score step until both settle.
///
/// Stops when every `theta_i` and `beta_i` moves by less than
/// `cfg.outer_tol` (2-norm) between outer iterations, or after
/// `cfg.outer_max_iter` iterations; the latter clears `converged`.
///
/// A direction whose basis column is entirely zero carries no information:
/// every feasible score is then optimal, so the previous score is kept after
/// deflating it against the updated earlier directions.
pub fn fit(
    x: &PredictorMatrix,
    design: &ScoringDesign,
    cfg: &SolverConfig,
) -> Result<DirectionSet> {
    if !x.is_centered() {
        return Err(SdrError::validation(
            "predictors must be centered before fitting",
        ));
    }
    if x.n_samples() != design.n_samples() {
        return Err(SdrError::validation(format!(
            "{} predictor rows but {} design rows",
            x.n_samples(),
            design.n_samples()
        )));
    }
    cfg.validate(design.k())?;

    let xv = x.values();
    let z = design.z();
    let dm = design.d();
    let k = design.k();
    let xtz = xv.tr_mul(z);
    let solver = GramSolver::new(xv, cfg.penalty.rho)?;
    let problem = StepAProblem {
        x: xv,
        xtz: &xtz,
        z,
        solver: &solver,
    };

    let (mut theta, _) = init_theta(design, cfg.d, cfg.seed)?;
    let mut worst_violation = constraint_violation(&theta, dm);
    let mut b_prev: Option<DMatrix<f64>> = None;
    let mut history = Vec::new();
    let mut inner_iterations = Vec::new();
    let mut inner_converged = true;
    let mut converged = false;
    let mut b = DMatrix::<f64>::zeros(x.n_features(), cfg.d);

    for _ in 0..cfg.outer_max_iter {
        let state = solve_step_a_with(&problem, &theta, &cfg.penalty, &cfg.admm)?;
        inner_iterations.push(state.iterations);
        inner_converged &= state.converged;
        b = state.alpha;
        history.push(objective(xv, z, &theta, &b, &cfg.penalty));

        let mut q = DMatrix::from_columns(&[constant_score(k)]);
        let mut next = DMatrix::<f64>::zeros(k, cfg.d);
        for i in 0..cfg.d {
            let beta = b.column(i).into_owned();
            let theta_i = if beta.iter().all(|&v| v == 0.0) {
                let kept = deflate(&theta.column(i).into_owned(), &q, dm);
                let nrm = d_norm(&kept, dm);
                if !(nrm * nrm > PAIRING_FLOOR) {
                    return Err(SdrError::DegeneratePairing {
                        direction: i,
                        denominator: 0.0,
                    });
                }
                kept / nrm
            } else {
                let g = xtz.tr_mul(&beta);
                theta_fixed_point(&g, design, &q, &cfg.theta, None, i)?
            };
            q = append_column(q, &theta_i);
            next.set_column(i, &theta_i);
        }
        worst_violation = worst_violation.max(constraint_violation(&next, dm));

        let settled = b_prev.as_ref().is_some_and(|prev| {
            let moved_b = (0..cfg.d).map(|i| (b.column(i) - prev.column(i)).norm());
            let moved_t = (0..cfg.d).map(|i| (next.column(i) - theta.column(i)).norm());
            moved_b.chain(moved_t).all(|m| m < cfg.outer_tol)
        });
        theta = next;
        b_prev = Some(b.clone());
        if settled {
            converged = true;
            break;
        }
    }

    for (j, sign) in canonical_signs(&theta).into_iter().enumerate() {
        if sign < 0.0 {
            theta.column_mut(j).neg_mut();
            b.column_mut(j).neg_mut();
        }
    }
    let q = with_constant(&theta);
    Ok(DirectionSet {
        b,
        theta,
        q,
        converged,
        outer_iters: history.len(),
        objective_history: history,
        inner_iterations,
        inner_converged,
        max_constraint_violation: worst_violation,
    })
}
