//! Response-side basis expansion for optimal scoring.
//!
//! Each sample's response is mapped to `phi(y) = [1, 1{y in slice 2}, ..,
//! 1{y in slice h}]`, so `K = h`. With indicator functions the optimal
//! scoring problem reproduces sliced inverse regression exactly. Richer bases
//! (splines, polynomials) would slot in here by producing a different `Z`
//! with the same leading constant column.

use nalgebra::DMatrix;

use crate::dataset::{Phenotype, PhenotypeKind};
use crate::error::{Result, SdrError};
use crate::linalg::symmetrize;

/// `Z` (n x K), `D = Z'Z/n`, and the slice assignment behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringDesign {
    z: DMatrix<f64>,
    d: DMatrix<f64>,
    slice_of: Vec<usize>,
    slice_sizes: Vec<usize>,
    slice_bounds: Vec<f64>,
}

impl ScoringDesign {
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// Basis size `K` (equal to the slice count).
    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    pub fn h(&self) -> usize {
        self.slice_sizes.len()
    }

    pub fn n_samples(&self) -> usize {
        self.z.nrows()
    }

    /// Zero-based slice index of each sample.
    pub fn slice_of(&self) -> &[usize] {
        &self.slice_of
    }

    pub fn slice_sizes(&self) -> &[usize] {
        &self.slice_sizes
    }

    /// The `h - 1` cut points for continuous responses (empty otherwise).
    pub fn slice_bounds(&self) -> &[f64] {
        &self.slice_bounds
    }

    /// Builds the design from explicit slice assignments.
    pub fn from_slices(slice_of: Vec<usize>, h: usize) -> Result<Self> {
        if h < 2 {
            return Err(SdrError::validation(format!("slice count h = {h} < 2")));
        }
        let n = slice_of.len();
        if n == 0 {
            return Err(SdrError::validation("zero samples"));
        }
        let mut sizes = vec![0usize; h];
        for &s in &slice_of {
            if s >= h {
                return Err(SdrError::validation(format!("slice index {s} >= h = {h}")));
            }
            sizes[s] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&c| c == 0) {
            return Err(SdrError::validation(format!(
                "slice {} is empty",
                empty + 1
            )));
        }
        let mut z = DMatrix::<f64>::zeros(n, h);
        for (i, &s) in slice_of.iter().enumerate() {
            z[(i, 0)] = 1.0;
            if s > 0 {
                z[(i, s)] = 1.0;
            }
        }
        let mut d = z.tr_mul(&z) / n as f64;
        symmetrize(&mut d);
        Ok(Self {
            z,
            d,
            slice_of,
            slice_sizes: sizes,
            slice_bounds: Vec::new(),
        })
    }

    /// Restricts the design to a subset of samples.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let slices = rows.iter().map(|&i| self.slice_of[i]).collect();
        let mut out = Self::from_slices(slices, self.h())?;
        out.slice_bounds = self.slice_bounds.clone();
        Ok(out)
    }
}

/// Slices the response and forms `Z` and `D`.
///
/// Discrete responses use one slice per level (`h` must equal the level
/// count). Continuous responses are cut at the empirical `i/h` quantiles,
/// ties broken by sample order, which makes slice sizes differ by at most one.
pub fn build_design(y: &Phenotype, h: usize) -> Result<ScoringDesign> {
    if h < 2 {
        return Err(SdrError::validation(format!("slice count h = {h} < 2")));
    }
    match y.kind() {
        PhenotypeKind::Binary | PhenotypeKind::Categorical(_) => {
            let levels = y.level_codes().len();
            if h != levels {
                return Err(SdrError::validation(format!(
                    "discrete response has {levels} levels but h = {h}"
                )));
            }
            ScoringDesign::from_slices(y.level_indices()?, h)
        }
        PhenotypeKind::Continuous => {
            let n = y.len();
            if n < h {
                return Err(SdrError::validation(format!("n = {n} < h = {h}")));
            }
            let labels = y.labels();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| labels[a].total_cmp(&labels[b]).then(a.cmp(&b)));
            let mut slice_of = vec![0usize; n];
            for (rank, &i) in order.iter().enumerate() {
                slice_of[i] = rank * h / n;
            }
            let bounds = (1..h)
                .map(|s| {
                    let first = (s * n).div_ceil(h);
                    labels[order[first]]
                })
                .collect();
            let mut design = ScoringDesign::from_slices(slice_of, h)?;
            design.slice_bounds = bounds;
            Ok(design)
        }
    }
}

/// Default slice count: the number of levels for discrete responses.
pub fn default_slices(y: &Phenotype, continuous_h: usize) -> usize {
    match y.kind() {
        PhenotypeKind::Binary => 2,
        PhenotypeKind::Categorical(h) => h,
        PhenotypeKind::Continuous => continuous_h,
    }
}
