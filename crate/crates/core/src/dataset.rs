//! Predictor and phenotype ingestion, centering, and synthetic cohorts.
//!
//! A [`PredictorMatrix`] is stored samples-by-features in column-major order,
//! so every feature is one contiguous column. Feature identifiers travel with
//! the matrix through every column subset, which is how the screening stages
//! keep track of which original feature a surviving row belongs to.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SdrError};

/// Field separator of a predictor file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    /// Tabs or runs of blanks.
    Tsv,
    Csv,
}

impl Delimiter {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Delimiter::Csv,
            _ => Delimiter::Tsv,
        }
    }

    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Tsv => line.split_whitespace().collect(),
            Delimiter::Csv => line.split(',').map(str::trim).collect(),
        }
    }
}

/// Dense `n_samples x n_features` predictor matrix with identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorMatrix {
    values: DMatrix<f64>,
    feature_ids: Vec<String>,
    sample_ids: Vec<String>,
    centered: bool,
    column_means: Option<Vec<f64>>,
}

impl PredictorMatrix {
    /// Builds an uncentered matrix, validating shape, finiteness and id uniqueness.
    pub fn new(
        values: DMatrix<f64>,
        feature_ids: Vec<String>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        if values.ncols() != feature_ids.len() {
            return Err(SdrError::validation(format!(
                "{} columns but {} feature ids",
                values.ncols(),
                feature_ids.len()
            )));
        }
        if values.nrows() != sample_ids.len() {
            return Err(SdrError::validation(format!(
                "{} rows but {} sample ids",
                values.nrows(),
                sample_ids.len()
            )));
        }
        if values.nrows() == 0 {
            return Err(SdrError::validation("zero samples"));
        }
        if values.ncols() == 0 {
            return Err(SdrError::validation("zero features"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % values.nrows(), pos / values.nrows());
            return Err(SdrError::validation(format!(
                "non-finite value at sample {} feature {}",
                sample_ids[row], feature_ids[col]
            )));
        }
        check_unique(&feature_ids, "feature id")?;
        check_unique(&sample_ids, "sample id")?;
        Ok(Self {
            values,
            feature_ids,
            sample_ids,
            centered: false,
            column_means: None,
        })
    }

    /// Like [`PredictorMatrix::new`] with generated ids `s{i}` / `f{j}`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let feature_ids = (0..values.ncols()).map(|j| format!("f{j}")).collect();
        let sample_ids = (0..values.nrows()).map(|i| format!("s{i}")).collect();
        Self::new(values, feature_ids, sample_ids)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn feature_ids(&self) -> &[String] {
        &self.feature_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Means subtracted by [`center`]; `None` for raw matrices.
    pub fn column_means(&self) -> Option<&[f64]> {
        self.column_means.as_deref()
    }

    /// Subtracts each column mean. Fails if the matrix is already centered.
    pub fn center(mut self) -> Result<Self> {
        if self.centered {
            return Err(SdrError::validation("matrix is already centered"));
        }
        let n = self.n_samples() as f64;
        let mut means = Vec::with_capacity(self.n_features());
        for mut col in self.values.column_iter_mut() {
            let mean = col.sum() / n;
            col.add_scalar_mut(-mean);
            means.push(mean);
        }
        self.centered = true;
        self.column_means = Some(means);
        Ok(self)
    }

    /// Column subset in the given order. Centering state and means carry over.
    pub fn select_columns(&self, columns: &[usize]) -> Self {
        let values = self.values.select_columns(columns);
        Self {
            values,
            feature_ids: columns
                .iter()
                .map(|&j| self.feature_ids[j].clone())
                .collect(),
            sample_ids: self.sample_ids.clone(),
            centered: self.centered,
            column_means: self
                .column_means
                .as_ref()
                .map(|m| columns.iter().map(|&j| m[j]).collect()),
        }
    }

    /// Row subset of a raw matrix (used to carve out cross-validation folds).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if self.centered {
            return Err(SdrError::validation(
                "row subsets are taken from raw matrices; this one is centered",
            ));
        }
        if rows.is_empty() {
            return Err(SdrError::validation("zero samples"));
        }
        Ok(Self {
            values: self.values.select_rows(rows),
            feature_ids: self.feature_ids.clone(),
            sample_ids: rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            centered: false,
            column_means: None,
        })
    }

    /// Map from feature id to column.
    pub fn feature_index(&self) -> HashMap<&str, usize> {
        self.feature_ids
            .iter()
            .enumerate()
            .map(|(j, id)| (id.as_str(), j))
            .collect()
    }
}

/// Free-function form of [`PredictorMatrix::center`].
pub fn center(m: PredictorMatrix) -> Result<PredictorMatrix> {
    m.center()
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(SdrError::validation(format!("duplicate {what} '{id}'")));
        }
    }
    Ok(())
}

/// Reads a predictor file: a header of feature ids (first cell names the id
/// column), then one row per sample with the sample id first.
pub fn load_predictors(path: &Path, delimiter: Delimiter) -> Result<PredictorMatrix> {
    let file = File::open(path).map_err(|source| SdrError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_predictors(BufReader::new(file), delimiter).map_err(|e| attach_path(e, path))
}

fn attach_path(err: SdrError, path: &Path) -> SdrError {
    match err {
        SdrError::Io { source, .. } => SdrError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    }
}

/// [`load_predictors`] over any buffered reader.
pub fn read_predictors<R: BufRead>(reader: R, delimiter: Delimiter) -> Result<PredictorMatrix> {
    let mut lines = reader.lines().enumerate();
    let mut feature_ids: Option<Vec<String>> = None;
    let mut sample_ids = Vec::new();
    let mut data: Vec<f64> = Vec::new();

    while let Some((i, line)) = lines.next() {
        let line_no = i + 1;
        let line = line.map_err(|source| SdrError::Io {
            path: String::from("<reader>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = delimiter.split(&line);
        let Some(ids) = &feature_ids else {
            if fields.len() < 2 {
                return Err(SdrError::Parse {
                    line: line_no,
                    message: "header needs an id column and at least one feature".into(),
                });
            }
            feature_ids = Some(fields[1..].iter().map(|s| s.to_string()).collect());
            continue;
        };
        if fields.len() != ids.len() + 1 {
            return Err(SdrError::Parse {
                line: line_no,
                message: format!(
                    "ragged row: expected {} fields, found {}",
                    ids.len() + 1,
                    fields.len()
                ),
            });
        }
        let row = sample_ids.len();
        sample_ids.push(fields[0].to_string());
        for (col, cell) in fields[1..].iter().enumerate() {
            let value = parse_cell(cell).ok_or_else(|| SdrError::Parse {
                line: line_no,
                message: format!(
                    "non-numeric cell '{cell}' at row {} column {} ({})",
                    row + 1,
                    col + 1,
                    ids[col]
                ),
            })?;
            data.push(value);
        }
    }

    let feature_ids = feature_ids.ok_or_else(|| SdrError::validation("empty predictor file"))?;
    if sample_ids.is_empty() {
        return Err(SdrError::validation("zero samples"));
    }
    let values = DMatrix::from_row_slice(sample_ids.len(), feature_ids.len(), &data);
    PredictorMatrix::new(values, feature_ids, sample_ids)
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Writes a matrix in the format [`load_predictors`] reads.
pub fn write_predictors(path: &Path, m: &PredictorMatrix) -> Result<()> {
    let io = |source| SdrError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut line = String::from("id");
    for id in &m.feature_ids {
        line.push('\t');
        line.push_str(id);
    }
    writeln!(w, "{line}").map_err(io)?;
    for (i, sid) in m.sample_ids.iter().enumerate() {
        line.clear();
        line.push_str(sid);
        for j in 0..m.n_features() {
            line.push('\t');
            line.push_str(&m.values[(i, j)].to_string());
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Kind of response variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhenotypeKind {
    Binary,
    Categorical(usize),
    Continuous,
}

/// Response vector aligned with the rows of a [`PredictorMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct Phenotype {
    labels: Vec<f64>,
    kind: PhenotypeKind,
    level_codes: Vec<f64>,
}

impl Phenotype {
    /// Discrete response; levels are the sorted distinct values.
    pub fn discrete(labels: Vec<f64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(SdrError::validation("zero samples"));
        }
        if labels.iter().any(|v| !v.is_finite()) {
            return Err(SdrError::validation("non-finite phenotype label"));
        }
        let mut levels = labels.clone();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let kind = match levels.len() {
            0 | 1 => {
                return Err(SdrError::validation(
                    "discrete phenotype needs at least two levels",
                ))
            }
            2 => PhenotypeKind::Binary,
            h => PhenotypeKind::Categorical(h),
        };
        Ok(Self {
            labels,
            kind,
            level_codes: levels,
        })
    }

    pub fn continuous(labels: Vec<f64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(SdrError::validation("zero samples"));
        }
        if labels.iter().any(|v| !v.is_finite()) {
            return Err(SdrError::validation("non-finite phenotype value"));
        }
        Ok(Self {
            labels,
            kind: PhenotypeKind::Continuous,
            level_codes: Vec::new(),
        })
    }

    /// Integer-valued responses with at most `max_levels` distinct values are
    /// treated as discrete, everything else as continuous.
    pub fn infer(labels: Vec<f64>, max_levels: usize) -> Result<Self> {
        let mut distinct = labels.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let integral = labels.iter().all(|v| v.fract() == 0.0);
        if integral && distinct.len() >= 2 && distinct.len() <= max_levels {
            Self::discrete(labels)
        } else {
            Self::continuous(labels)
        }
    }

    /// Binary phenotype from case flags (case = 1, control = 0).
    pub fn from_cases(cases: &[bool]) -> Result<Self> {
        let phen = Self::discrete(cases.iter().map(|&c| f64::from(u8::from(c))).collect())?;
        Ok(phen)
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn kind(&self) -> PhenotypeKind {
        self.kind
    }

    pub fn level_codes(&self) -> &[f64] {
        &self.level_codes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Level index of each sample (discrete kinds only).
    pub fn level_indices(&self) -> Result<Vec<usize>> {
        if self.kind == PhenotypeKind::Continuous {
            return Err(SdrError::validation("continuous phenotype has no levels"));
        }
        Ok(self
            .labels
            .iter()
            .map(|v| {
                self.level_codes
                    .binary_search_by(|c| c.total_cmp(v))
                    .expect("label is a level")
            })
            .collect())
    }

    /// Case flags of a binary phenotype; the larger level code is the case.
    pub fn case_mask(&self) -> Result<Vec<bool>> {
        if self.kind != PhenotypeKind::Binary {
            return Err(SdrError::validation("phenotype is not binary"));
        }
        let case = self.level_codes[1];
        Ok(self.labels.iter().map(|&v| v == case).collect())
    }

    /// Row subset; discrete subsets must still contain every level.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let labels: Vec<f64> = rows.iter().map(|&i| self.labels[i]).collect();
        match self.kind {
            PhenotypeKind::Continuous => Self::continuous(labels),
            _ => {
                let sub = Self::discrete(labels)?;
                if sub.level_codes != self.level_codes {
                    return Err(SdrError::validation("subset is missing a phenotype level"));
                }
                Ok(sub)
            }
        }
    }
}

/// Reads a two-column phenotype file (sample id, label), no header.
pub fn load_phenotype_records(path: &Path) -> Result<Vec<(String, f64)>> {
    let io = |source| SdrError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(SdrError::Parse {
                line: i + 1,
                message: format!("expected 2 fields, found {}", fields.len()),
            });
        }
        let value = parse_cell(fields[1]).ok_or_else(|| SdrError::Parse {
            line: i + 1,
            message: format!("non-numeric label '{}'", fields[1]),
        })?;
        out.push((fields[0].to_string(), value));
    }
    Ok(out)
}

/// Reorders phenotype records to the sample order of `x`.
///
/// Every sample of `x` must appear exactly once and no extra ids are allowed.
pub fn align_phenotype(
    x: &PredictorMatrix,
    records: &[(String, f64)],
    max_levels: usize,
) -> Result<Phenotype> {
    let mut by_id: HashMap<&str, f64> = HashMap::with_capacity(records.len());
    for (id, v) in records {
        if by_id.insert(id.as_str(), *v).is_some() {
            return Err(SdrError::validation(format!(
                "duplicate sample id '{id}' in phenotype file"
            )));
        }
    }
    if by_id.len() != x.n_samples() {
        return Err(SdrError::validation(format!(
            "phenotype has {} samples, predictors have {}",
            by_id.len(),
            x.n_samples()
        )));
    }
    let labels = x
        .sample_ids()
        .iter()
        .map(|sid| {
            by_id.get(sid.as_str()).copied().ok_or_else(|| {
                SdrError::validation(format!("sample '{sid}' missing from phenotype file"))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Phenotype::infer(labels, max_levels)
}

pub fn write_phenotype(path: &Path, sample_ids: &[String], labels: &[f64]) -> Result<()> {
    let io = |source| SdrError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for (id, v) in sample_ids.iter().zip(labels) {
        writeln!(w, "{id}\t{v}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Label model used by [`simulate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// Bernoulli draw with success probability `sigmoid(score)`.
    #[default]
    Logistic,
    /// Case when `score + N(0, 1) > 0`.
    Threshold,
}

/// Parameters of a synthetic genotype cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_features: usize,
    /// Minor-allele frequencies are drawn uniformly from this interval.
    pub maf_range: (f64, f64),
    /// `(feature index, effect size)` pairs.
    pub support: Vec<(usize, f64)>,
    pub link: Link,
    /// Disjoint feature blocks. Blocks are mutually independent; inside a
    /// block neighbouring features share an AR(1) latent correlation.
    pub blocks: Option<Vec<Range<usize>>>,
    /// Lag-one latent correlation inside a block.
    pub block_correlation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 200,
            n_features: 50,
            maf_range: (0.1, 0.5),
            support: Vec::new(),
            link: Link::Logistic,
            blocks: None,
            block_correlation: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_features == 0 {
            return Err(SdrError::validation(
                "synthetic cohort needs samples and features",
            ));
        }
        let (lo, hi) = self.maf_range;
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
            return Err(SdrError::validation(format!(
                "maf range [{lo}, {hi}] must satisfy 0 < low <= high <= 0.5"
            )));
        }
        let mut seen = HashSet::new();
        for &(j, effect) in &self.support {
            if j >= self.n_features {
                return Err(SdrError::validation(format!(
                    "support index {j} out of range for {} features",
                    self.n_features
                )));
            }
            if !effect.is_finite() {
                return Err(SdrError::validation("non-finite effect size"));
            }
            if !seen.insert(j) {
                return Err(SdrError::validation(format!("support index {j} repeated")));
            }
        }
        if !(0.0..1.0).contains(&self.block_correlation) {
            return Err(SdrError::validation("block correlation must lie in [0, 1)"));
        }
        if let Some(blocks) = &self.blocks {
            let mut owner = vec![usize::MAX; self.n_features];
            for (b, block) in blocks.iter().enumerate() {
                if block.start >= block.end || block.end > self.n_features {
                    return Err(SdrError::validation(format!(
                        "block {b} is empty or out of range"
                    )));
                }
                for j in block.clone() {
                    if owner[j] != usize::MAX {
                        return Err(SdrError::validation(format!(
                            "blocks overlap at feature {j}"
                        )));
                    }
                    owner[j] = b;
                }
            }
            let support_blocks: HashSet<usize> =
                self.support.iter().map(|&(j, _)| owner[j]).collect();
            if support_blocks.len() > 1 || support_blocks.contains(&usize::MAX) {
                return Err(SdrError::validation(
                    "support must lie inside a single block",
                ));
            }
        }
        Ok(())
    }
}

/// Output of [`simulate`].
#[derive(Debug, Clone)]
pub struct SimulatedCohort {
    pub x: PredictorMatrix,
    pub y: Phenotype,
    /// Sorted indices of the features with nonzero effect.
    pub support: Vec<usize>,
    pub allele_frequencies: Vec<f64>,
}

/// Draws a genotype cohort with a known causal support.
pub fn simulate(spec: &SyntheticSpec) -> Result<SimulatedCohort> {
    spec.validate()?;
    let n = spec.n_samples;
    let p = spec.n_features;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.maf_range;
    let freqs: Vec<f64> = (0..p)
        .map(|_| {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        })
        .collect();

    let mut block_of = vec![None; p];
    if let Some(blocks) = &spec.blocks {
        for (b, r) in blocks.iter().enumerate() {
            for j in r.clone() {
                block_of[j] = Some(b);
            }
        }
    }

    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let c = spec.block_correlation;
    let innovation = (1.0 - c * c).sqrt();
    let mut values = DMatrix::<f64>::zeros(n, p);
    // latent haplotype states for the block currently being walked
    let mut latent = vec![[0.0f64; 2]; n];
    let mut prev_block: Option<usize> = None;
    for j in 0..p {
        let q = freqs[j];
        let mut col = values.column_mut(j);
        match block_of[j] {
            None => {
                prev_block = None;
                for i in 0..n {
                    let a = u8::from(rng.random::<f64>() < q) + u8::from(rng.random::<f64>() < q);
                    col[i] = f64::from(a);
                }
            }
            Some(b) => {
                let cut = normal.inverse_cdf(q);
                let fresh = prev_block != Some(b);
                for (i, state) in latent.iter_mut().enumerate() {
                    let mut dose = 0u8;
                    for h in state.iter_mut() {
                        let e: f64 = rng.sample(StandardNormal);
                        *h = if fresh { e } else { c * *h + innovation * e };
                        dose += u8::from(*h < cut);
                    }
                    col[i] = f64::from(dose);
                }
                prev_block = Some(b);
            }
        }
    }

    let mut score = DVector::<f64>::zeros(n);
    for &(j, effect) in &spec.support {
        let mean = 2.0 * freqs[j];
        for i in 0..n {
            score[i] += effect * (values[(i, j)] - mean);
        }
    }
    let labels: Vec<f64> = score
        .iter()
        .map(|&s| {
            let case = match spec.link {
                Link::Logistic => rng.random::<f64>() < 1.0 / (1.0 + (-s).exp()),
                Link::Threshold => {
                    let e: f64 = rng.sample(StandardNormal);
                    s + e > 0.0
                }
            };
            f64::from(u8::from(case))
        })
        .collect();

    let x = PredictorMatrix::from_values(values)?;
    let y = Phenotype::discrete(labels)
        .map_err(|_| SdrError::validation("simulated labels contain a single class"))?;
    let mut support: Vec<usize> = spec.support.iter().map(|&(j, _)| j).collect();
    support.sort_unstable();
    Ok(SimulatedCohort {
        x,
        y,
        support,
        allele_frequencies: freqs,
    })
}
