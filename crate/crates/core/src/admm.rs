//! ADMM for the penalized multi-response least-squares step.
//!
//! For fixed scores `Theta` the basis matrix solves
//!
//! ```text
//! min_B  sum_j ||Z theta_j - X beta_j||^2
//!        + lambda * ((1 - delta) sum_l ||b_l||^2 + delta sum_l ||b_l||^(1 - r))
//! ```
//!
//! where `b_l` is the l-th row of `B`. The problem is split as `B = A` and
//! iterated in scaled form:
//!
//! 1. `beta_j <- (X'X + rho/2 I)^{-1} [X'Z theta_j + rho/2 (alpha_j - u_j)]`
//! 2. `a_l <- shrink(b_l + u_l)` row by row ([`group_shrink`])
//! 3. `u_j <- u_j + beta_j - alpha_j`
//!
//! The shrinkage acts on whole rows, so a feature is either dropped from
//! every direction or kept in all of them.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdrError};

/// Penalty weight, mixing, exponent and ADMM step parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub lambda: f64,
    /// Weight of the non-smooth group term; `1 - delta` goes to the ridge term.
    pub delta: f64,
    /// Exponent parameter: the group term is `||b_l||^(1 - r)`.
    pub r: f64,
    pub rho: f64,
}

impl Default for PenaltyParams {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            delta: 1.0,
            r: 0.0,
            rho: 1.0,
        }
    }
}

impl PenaltyParams {
    pub fn new(lambda: f64, delta: f64, r: f64, rho: f64) -> Result<Self> {
        let p = Self {
            lambda,
            delta,
            r,
            rho,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SdrError::validation(format!(
                "lambda = {} must be >= 0",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(SdrError::validation(format!(
                "delta = {} outside [0, 1]",
                self.delta
            )));
        }
        if !(0.0..1.0).contains(&self.r) {
            return Err(SdrError::validation(format!(
                "r = {} outside [0, 1)",
                self.r
            )));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(SdrError::validation(format!(
                "rho = {} must be > 0",
                self.rho
            )));
        }
        Ok(())
    }

    /// Row penalty `lambda ((1 - delta) ||a||^2 + delta ||a||^(1 - r))` evaluated at `norm = ||a||`.
    pub fn row_penalty(&self, norm: f64) -> f64 {
        let group = if norm == 0.0 {
            0.0
        } else {
            norm.powf(1.0 - self.r)
        };
        self.lambda * ((1.0 - self.delta) * norm * norm + self.delta * group)
    }

    /// Penalty summed over the rows of `b`.
    pub fn penalty(&self, b: &DMatrix<f64>) -> f64 {
        (0..b.nrows())
            .map(|l| self.row_penalty(b.row(l).norm()))
            .sum()
    }
}

/// Closed-form row shrinkage for the `alpha` update.
///
/// With `T = lambda delta (1 - r^2) / rho` and
/// `s = (||v||^(1+r) - T) / (1 + 2 lambda (1 - delta)(1 + r) / rho)`, returns
/// `v s^(1/(1+r)) / ||v||`, or zero when `s <= 0`. Exact for `r = 0`; for
/// `r > 0` it rests on a first-order expansion and is approximate.
pub fn group_shrink(v: &[f64], params: &PenaltyParams) -> Vec<f64> {
    let mut out = v.to_vec();
    shrink_in_place(&mut out, params);
    out
}

/// Multiplier `c` such that `group_shrink(v) = c v`, given `||v||`.
pub fn shrink_factor(norm: f64, params: &PenaltyParams) -> f64 {
    if norm == 0.0 {
        return 0.0;
    }
    let PenaltyParams {
        lambda,
        delta,
        r,
        rho,
    } = *params;
    let threshold = lambda * delta * (1.0 - r * r) / rho;
    let denom = 1.0 + 2.0 * lambda * (1.0 - delta) * (1.0 + r) / rho;
    let s = (norm.powf(1.0 + r) - threshold) / denom;
    if s <= 0.0 {
        0.0
    } else {
        s.powf(1.0 / (1.0 + r)) / norm
    }
}

fn shrink_in_place(row: &mut [f64], params: &PenaltyParams) {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    let c = shrink_factor(norm, params);
    for v in row.iter_mut() {
        *v = if c == 0.0 { 0.0 } else { *v * c };
    }
}

/// Applies [`group_shrink`] to every row of `v`.
pub fn shrink_rows(v: &DMatrix<f64>, params: &PenaltyParams) -> DMatrix<f64> {
    let mut out = v.clone();
    for l in 0..v.nrows() {
        let c = shrink_factor(v.row(l).norm(), params);
        let mut row = out.row_mut(l);
        if c == 0.0 {
            row.fill(0.0);
        } else {
            row *= c;
        }
    }
    out
}

/// Factorization of `X'X + c I` with `c = rho / 2`.
///
/// For `p <= n` the p x p matrix is factored directly. For `p > n` the
/// Woodbury identity
/// `(X'X + cI)^{-1} = (I - X'(cI + XX')^{-1} X) / c` reduces every solve to
/// an n x n system, so a solve costs `O(np)` after an `O(n^2 p)` setup.
pub struct GramSolver {
    shift: f64,
    kind: GramKind,
}

enum GramKind {
    Primal(Cholesky<f64, Dyn>),
    Dual {
        x: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
    },
}

impl GramSolver {
    /// Chooses the primal form for `p <= n` and the Woodbury form otherwise.
    pub fn new(x: &DMatrix<f64>, rho: f64) -> Result<Self> {
        if x.ncols() > x.nrows() {
            Self::woodbury(x, rho)
        } else {
            Self::primal(x, rho)
        }
    }

    pub fn primal(x: &DMatrix<f64>, rho: f64) -> Result<Self> {
        let shift = rho / 2.0;
        let mut g = x.tr_mul(x);
        for i in 0..g.nrows() {
            g[(i, i)] += shift;
        }
        let chol = Cholesky::new(g)
            .ok_or_else(|| SdrError::Numerical("X'X + rho/2 I not positive definite".into()))?;
        Ok(Self {
            shift,
            kind: GramKind::Primal(chol),
        })
    }

    pub fn woodbury(x: &DMatrix<f64>, rho: f64) -> Result<Self> {
        let shift = rho / 2.0;
        let mut k = x * x.transpose();
        for i in 0..k.nrows() {
            k[(i, i)] += shift;
        }
        let chol = Cholesky::new(k)
            .ok_or_else(|| SdrError::Numerical("rho/2 I + XX' not positive definite".into()))?;
        Ok(Self {
            shift,
            kind: GramKind::Dual { x: x.clone(), chol },
        })
    }

    pub fn is_woodbury(&self) -> bool {
        matches!(self.kind, GramKind::Dual { .. })
    }

    /// Solves `(X'X + rho/2 I) B = rhs` for a p x d right-hand side.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.kind {
            GramKind::Primal(chol) => chol.solve(rhs),
            GramKind::Dual { x, chol } => {
                let inner = chol.solve(&(x * rhs));
                (rhs - x.tr_mul(&inner)) / self.shift
            }
        }
    }
}

/// One `beta` update for every direction at once.
///
/// `xtz_theta` holds `X'Z theta_j` as columns.
pub fn beta_update(
    xtz_theta: &DMatrix<f64>,
    solver: &GramSolver,
    alpha: &DMatrix<f64>,
    u: &DMatrix<f64>,
) -> DMatrix<f64> {
    let rhs = xtz_theta + (alpha - u) * solver.shift;
    solver.solve(&rhs)
}

/// Stopping rule: every column of `beta`, `alpha` and `u` moves by at most
/// `tol` in one iteration, or `max_iter` iterations have run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

/// ADMM iterate triple plus convergence diagnostics.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub beta: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub iterations: usize,
    /// `||beta - alpha||_F` at exit.
    pub primal_residual: f64,
    /// `rho ||alpha^(m+1) - alpha^(m)||_F` at exit.
    pub dual_residual: f64,
    pub converged: bool,
}

impl AdmmState {
    /// The exactly row-sparse iterate, returned as the solution.
    pub fn solution(&self) -> &DMatrix<f64> {
        &self.alpha
    }
}

/// Precomputed pieces shared by every Step-A call on the same data.
pub struct StepAProblem<'a> {
    pub x: &'a DMatrix<f64>,
    /// `X'Z`, p x K.
    pub xtz: &'a DMatrix<f64>,
    /// `Z`, n x K; only used for objective values.
    pub z: &'a DMatrix<f64>,
    pub solver: &'a GramSolver,
}

/// Runs ADMM for fixed `theta` (K x d).
pub fn solve_step_a_with(
    problem: &StepAProblem<'_>,
    theta: &DMatrix<f64>,
    params: &PenaltyParams,
    opts: &AdmmOptions,
) -> Result<AdmmState> {
    params.validate()?;
    if opts.max_iter == 0 {
        return Err(SdrError::validation("max_iter must be >= 1"));
    }
    if theta.nrows() != problem.xtz.ncols() {
        return Err(SdrError::validation(
            "theta rows must equal the basis size K",
        ));
    }
    let xtz_theta = problem.xtz * theta;
    let d = theta.ncols();
    let p = problem.xtz.nrows();

    let mut beta = problem.solver.solve(&xtz_theta);
    let mut alpha = beta.clone();
    let mut u = DMatrix::<f64>::zeros(p, d);
    let mut converged = false;
    let mut iterations = 0;
    let mut dual_residual = 0.0;

    while iterations < opts.max_iter {
        iterations += 1;
        let beta_next = beta_update(&xtz_theta, problem.solver, &alpha, &u);
        let alpha_next = shrink_rows(&(&beta_next + &u), params);
        let u_step = &beta_next - &alpha_next;
        let u_next = &u + &u_step;

        let moved = max_column_norm(&(&beta_next - &beta))
            .max(max_column_norm(&(&alpha_next - &alpha)))
            .max(max_column_norm(&u_step));
        dual_residual = params.rho * (&alpha_next - &alpha).norm();
        beta = beta_next;
        alpha = alpha_next;
        u = u_next;
        if !moved.is_finite() {
            return Err(SdrError::Numerical("ADMM iterates diverged".into()));
        }
        if moved <= opts.tol {
            converged = true;
            break;
        }
    }

    Ok(AdmmState {
        primal_residual: (&beta - &alpha).norm(),
        beta,
        alpha,
        u,
        iterations,
        dual_residual,
        converged,
    })
}

fn max_column_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Step-A solve from scratch: builds `X'Z` and the Gram factorization.
pub fn solve_step_a(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    params: &PenaltyParams,
    opts: &AdmmOptions,
) -> Result<AdmmState> {
    if x.nrows() != z.nrows() {
        return Err(SdrError::validation("X and Z disagree on sample count"));
    }
    let xtz = x.tr_mul(z);
    let solver = GramSolver::new(x, params.rho)?;
    let problem = StepAProblem {
        x,
        xtz: &xtz,
        z,
        solver: &solver,
    };
    solve_step_a_with(&problem, theta, params, opts)
}

/// `sum_j ||Z theta_j - X beta_j||^2 + penalty(B)`.
pub fn step_a_objective(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    b: &DMatrix<f64>,
    params: &PenaltyParams,
) -> f64 {
    let resid = z * theta - x * b;
    resid.norm_squared() + params.penalty(b)
}
