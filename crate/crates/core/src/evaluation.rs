//! Classification on the reduced predictors, metrics, and cross-validation.
//!
//! Two arms are evaluated fold by fold: the sparse SDR pipeline (screening,
//! then a nearest-centroid rule on `X B`) and a chi-square ranking baseline
//! feeding a k-nearest-neighbour classifier. All selection and fitting in a
//! fold sees the training rows only.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dataset::{Phenotype, PhenotypeKind, PredictorMatrix};
use crate::design::build_design;
use crate::error::{Result, SdrError};
use crate::screening::{run_plan, write_file, ScreeningPlan};

/// Nearest-centroid rule in the projected space `x B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionClassifier {
    pub feature_ids: Vec<String>,
    /// Rows of `B` for `feature_ids`.
    pub b: Vec<Vec<f64>>,
    /// Training means of `feature_ids`, subtracted from every new row.
    pub column_means: Vec<f64>,
    /// Class codes, ascending. For binary responses the second is the case.
    pub classes: Vec<f64>,
    pub centroids: Vec<Vec<f64>>,
    pub class_counts: Vec<usize>,
    /// Set when all centroids coincide (for example `B = 0`).
    pub degenerate: bool,
}

/// Labels and scores for a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<f64>,
    /// Binary: distance to the control centroid minus distance to the case
    /// centroid. Otherwise: minus the distance to the nearest centroid.
    pub scores: Vec<f64>,
}

impl Prediction {
    pub fn is_case(&self, case_code: f64) -> Vec<bool> {
        self.labels.iter().map(|&l| l == case_code).collect()
    }
}

/// Fits the centroid rule on a centered training matrix.
///
/// `features` are columns of `x_train` in the row order of `b`.
pub fn fit_classifier(
    x_train: &PredictorMatrix,
    y: &Phenotype,
    features: &[usize],
    b: &DMatrix<f64>,
) -> Result<ProjectionClassifier> {
    let means = x_train
        .column_means()
        .filter(|_| x_train.is_centered())
        .ok_or_else(|| SdrError::validation("classifier training data must be centered"))?;
    if features.is_empty() || b.ncols() == 0 {
        return Err(SdrError::validation(
            "classifier needs at least one feature and direction",
        ));
    }
    if b.nrows() != features.len() {
        return Err(SdrError::validation(
            "basis rows must match the feature list",
        ));
    }
    if y.len() != x_train.n_samples() {
        return Err(SdrError::validation(
            "labels and predictors disagree on sample count",
        ));
    }
    if y.kind() == PhenotypeKind::Continuous {
        return Err(SdrError::validation("classifier needs a discrete response"));
    }
    let classes = y.level_codes().to_vec();
    if classes.len() < 2 {
        return Err(SdrError::validation(
            "training labels contain a single class",
        ));
    }
    let idx = y.level_indices()?;
    let proj = x_train.values().select_columns(features) * b;
    let d = b.ncols();
    let mut centroids = vec![vec![0.0; d]; classes.len()];
    let mut counts = vec![0usize; classes.len()];
    for (i, &c) in idx.iter().enumerate() {
        counts[c] += 1;
        for j in 0..d {
            centroids[c][j] += proj[(i, j)];
        }
    }
    for (c, cent) in centroids.iter_mut().enumerate() {
        if counts[c] == 0 {
            return Err(SdrError::validation(format!(
                "class {} absent from training",
                classes[c]
            )));
        }
        cent.iter_mut().for_each(|v| *v /= counts[c] as f64);
    }
    if centroids.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SdrError::Numerical("non-finite class centroid".into()));
    }
    let degenerate = centroids.iter().all(|c| c == &centroids[0]);
    Ok(ProjectionClassifier {
        feature_ids: features
            .iter()
            .map(|&j| x_train.feature_ids()[j].clone())
            .collect(),
        b: b.row_iter().map(|r| r.iter().copied().collect()).collect(),
        column_means: features.iter().map(|&j| means[j]).collect(),
        classes,
        centroids,
        class_counts: counts,
        degenerate,
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl ProjectionClassifier {
    pub fn d(&self) -> usize {
        self.centroids[0].len()
    }

    /// Projects raw rows (centered here with the training means).
    pub fn project(&self, x_raw: &PredictorMatrix) -> Result<DMatrix<f64>> {
        let index = x_raw.feature_index();
        let missing: Vec<&str> = self
            .feature_ids
            .iter()
            .filter(|id| !index.contains_key(id.as_str()))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(SdrError::validation(format!(
                "missing feature columns: {}",
                missing.join(", ")
            )));
        }
        let cols: Vec<usize> = self
            .feature_ids
            .iter()
            .map(|id| index[id.as_str()])
            .collect();
        let mut sub = x_raw.values().select_columns(&cols);
        for (j, mut col) in sub.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.column_means[j]);
        }
        let b = DMatrix::from_fn(self.b.len(), self.d(), |i, j| self.b[i][j]);
        Ok(sub * b)
    }

    /// Nearest-centroid labels; exact ties go to the class with more
    /// training samples, then to the smaller code.
    pub fn predict(&self, x_raw: &PredictorMatrix) -> Result<Prediction> {
        let proj = self.project(x_raw)?;
        let mut labels = Vec::with_capacity(proj.nrows());
        let mut scores = Vec::with_capacity(proj.nrows());
        for row in proj.row_iter() {
            let z: Vec<f64> = row.iter().copied().collect();
            let dist: Vec<f64> = self.centroids.iter().map(|c| distance(&z, c)).collect();
            let mut best = 0;
            for c in 1..dist.len() {
                let closer = dist[c] < dist[best];
                let tie_wins =
                    dist[c] == dist[best] && self.class_counts[c] > self.class_counts[best];
                if closer || tie_wins {
                    best = c;
                }
            }
            labels.push(self.classes[best]);
            scores.push(if dist.len() == 2 {
                dist[0] - dist[1]
            } else {
                -dist[best]
            });
        }
        Ok(Prediction { labels, scores })
    }
}

/// Free-function form of [`ProjectionClassifier::predict`].
pub fn predict(clf: &ProjectionClassifier, x_raw: &PredictorMatrix) -> Result<Prediction> {
    clf.predict(x_raw)
}

/// Confusion counts and rates for a binary problem (`true` = case).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub auc: f64,
}

impl MetricBundle {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `accuracy - (sens n_case + spec n_control) / n`.
    pub fn identity_gap(&self) -> f64 {
        let n = self.n() as f64;
        let cases = (self.tp + self.fn_) as f64;
        let controls = (self.tn + self.fp) as f64;
        (self.accuracy - (self.sensitivity * cases + self.specificity * controls) / n).abs()
    }

    /// Rates from counts; AUC is left at 0.5.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        if tp + fn_ == 0 || tn + fp == 0 {
            return Err(SdrError::DegenerateFold {
                fold: 0,
                message: "truth labels contain a single class".into(),
            });
        }
        let n = (tp + fp + tn + fn_) as f64;
        Ok(Self {
            tp,
            fp,
            tn,
            fn_,
            sensitivity: tp as f64 / (tp + fn_) as f64,
            specificity: tn as f64 / (tn + fp) as f64,
            accuracy: (tp + tn) as f64 / n,
            auc: 0.5,
        })
    }
}

/// Twice the Mann–Whitney count: `2 #{case > control} + #{case == control}`.
fn mann_whitney_twice(truth: &[bool], scores: &[f64]) -> u64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut total = 0u64;
    let mut controls_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let cases = group.iter().filter(|&&k| truth[k]).count() as u64;
        let controls = group.len() as u64 - cases;
        total += cases * (2 * controls_below + controls);
        controls_below += controls;
        i = j;
    }
    total
}

/// Probability that a random case outscores a random control, ties half.
pub fn auc(truth: &[bool], scores: &[f64]) -> Result<f64> {
    if truth.len() != scores.len() {
        return Err(SdrError::validation("truth and scores differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(SdrError::validation("NaN score"));
    }
    let cases = truth.iter().filter(|&&t| t).count() as u64;
    let controls = truth.len() as u64 - cases;
    if cases == 0 || controls == 0 {
        return Err(SdrError::DegenerateFold {
            fold: 0,
            message: "AUC needs both classes".into(),
        });
    }
    Ok(mann_whitney_twice(truth, scores) as f64 / (2 * cases * controls) as f64)
}

pub fn metrics(truth: &[bool], pred: &[bool], scores: &[f64]) -> Result<MetricBundle> {
    if truth.len() != pred.len() || truth.len() != scores.len() {
        return Err(SdrError::validation("metric inputs differ in length"));
    }
    let mut c = [0usize; 4];
    for (&t, &p) in truth.iter().zip(pred) {
        c[match (t, p) {
            (true, true) => 0,
            (false, true) => 1,
            (false, false) => 2,
            (true, false) => 3,
        }] += 1;
    }
    let mut m = MetricBundle::from_counts(c[0], c[1], c[2], c[3])?;
    m.auc = auc(truth, scores)?;
    Ok(m)
}

/// Association test result for one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chi2Result {
    pub index: usize,
    pub feature_id: String,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// A single genotype observed: statistic 0, p 1.
    pub degenerate: bool,
}

/// Pearson chi-square for a 2 x 3 genotype table, empty columns dropped.
///
/// Returns `(statistic, df, p)`. Each column's two cells are added before the
/// columns are summed, so swapping the rows gives a bit-identical statistic.
pub fn chi2_table(case: [u64; 3], control: [u64; 3]) -> (f64, usize, f64) {
    let n_case: u64 = case.iter().sum();
    let n_control: u64 = control.iter().sum();
    let n = (n_case + n_control) as f64;
    let mut stat = 0.0;
    let mut nonempty = 0usize;
    for g in 0..3 {
        let col = case[g] + control[g];
        if col == 0 {
            continue;
        }
        nonempty += 1;
        let e_case = n_case as f64 * col as f64 / n;
        let e_control = n_control as f64 * col as f64 / n;
        let term = |o: u64, e: f64| {
            if e > 0.0 {
                (o as f64 - e).powi(2) / e
            } else {
                0.0
            }
        };
        stat += term(case[g], e_case) + term(control[g], e_control);
    }
    let df = nonempty.saturating_sub(1);
    if df == 0 {
        return (0.0, 0, 1.0);
    }
    let p = ChiSquared::new(df as f64)
        .map(|d| d.sf(stat))
        .unwrap_or(1.0);
    (stat, df, p)
}

/// Tests every feature of a raw dosage matrix and sorts by p (then index).
pub fn chi2_rank(x_raw: &PredictorMatrix, cases: &[bool]) -> Result<Vec<Chi2Result>> {
    if cases.len() != x_raw.n_samples() {
        return Err(SdrError::validation(
            "labels and predictors disagree on sample count",
        ));
    }
    if cases.iter().all(|&c| c) || cases.iter().all(|&c| !c) {
        return Err(SdrError::validation(
            "association test needs cases and controls",
        ));
    }
    let xv = x_raw.values();
    let mut out = (0..x_raw.n_features())
        .map(|j| {
            let mut case = [0u64; 3];
            let mut control = [0u64; 3];
            for (i, &is_case) in cases.iter().enumerate() {
                let v = xv[(i, j)];
                let g = match v {
                    v if v == 0.0 => 0,
                    v if v == 1.0 => 1,
                    v if v == 2.0 => 2,
                    _ => {
                        return Err(SdrError::validation(format!(
                            "feature {} has non-dosage value {v}",
                            x_raw.feature_ids()[j]
                        )))
                    }
                };
                if is_case {
                    case[g] += 1;
                } else {
                    control[g] += 1;
                }
            }
            let (statistic, df, p_value) = chi2_table(case, control);
            Ok(Chi2Result {
                index: j,
                feature_id: x_raw.feature_ids()[j].clone(),
                statistic,
                df,
                p_value,
                degenerate: df == 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.p_value.total_cmp(&b.p_value).then(a.index.cmp(&b.index)));
    Ok(out)
}

pub fn chi2_tsv(results: &[Chi2Result]) -> String {
    let mut out = String::from("feature_id\tchi2\tdf\tp\n");
    for r in results {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.feature_id, r.statistic, r.df, r.p_value
        );
    }
    out
}

fn check_k(k: usize, n_train: usize, binary: bool) -> Result<()> {
    if k == 0 {
        return Err(SdrError::validation("k must be >= 1"));
    }
    if binary && k % 2 == 0 {
        return Err(SdrError::validation(format!(
            "k = {k} must be odd for binary labels"
        )));
    }
    if k > n_train {
        return Err(SdrError::validation(format!(
            "k = {k} exceeds {n_train} training rows"
        )));
    }
    Ok(())
}

/// Indices of the `k` nearest rows of `train` to `query`, optionally skipping one.
fn neighbours(train: &DMatrix<f64>, query: &[f64], k: usize, skip: Option<usize>) -> Vec<usize> {
    let mut dist: Vec<(f64, usize)> = (0..train.nrows())
        .filter(|&i| Some(i) != skip)
        .map(|i| {
            let d2: f64 = query
                .iter()
                .enumerate()
                .map(|(j, q)| (train[(i, j)] - q).powi(2))
                .sum();
            (d2, i)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dist.truncate(k);
    dist.into_iter().map(|(_, i)| i).collect()
}

/// Majority label among the neighbours; ties go to the label of the nearest one.
fn vote(nbrs: &[usize], labels: &[f64]) -> f64 {
    let mut tally: Vec<(f64, usize, usize)> = Vec::new();
    for (rank, &i) in nbrs.iter().enumerate() {
        match tally.iter_mut().find(|t| t.0 == labels[i]) {
            Some(t) => t.1 += 1,
            None => tally.push((labels[i], 1, rank)),
        }
    }
    tally.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    tally[0].0
}

/// Euclidean k-NN majority vote.
pub fn knn_predict(
    x_train: &DMatrix<f64>,
    labels: &[f64],
    x_test: &DMatrix<f64>,
    k: usize,
) -> Result<Vec<f64>> {
    Ok(knn_with_scores(x_train, labels, x_test, k, None)?.0)
}

/// k-NN labels plus, for binary labels, the fraction of neighbours carrying
/// the larger code (used as a ranking score).
pub fn knn_with_scores(
    x_train: &DMatrix<f64>,
    labels: &[f64],
    x_test: &DMatrix<f64>,
    k: usize,
    case_code: Option<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if labels.len() != x_train.nrows() || x_train.ncols() != x_test.ncols() {
        return Err(SdrError::validation("k-NN inputs have inconsistent shapes"));
    }
    let distinct: HashSet<u64> = labels.iter().map(|l| l.to_bits()).collect();
    check_k(k, x_train.nrows(), distinct.len() <= 2)?;
    let mut out = Vec::with_capacity(x_test.nrows());
    let mut scores = Vec::with_capacity(x_test.nrows());
    for row in x_test.row_iter() {
        let q: Vec<f64> = row.iter().copied().collect();
        let nbrs = neighbours(x_train, &q, k, None);
        out.push(vote(&nbrs, labels));
        let hits = case_code.map_or(0, |c| nbrs.iter().filter(|&&i| labels[i] == c).count());
        scores.push(hits as f64 / k as f64);
    }
    Ok((out, scores))
}

/// Leave-one-out k-NN predictions on the training set itself.
fn knn_loo(x: &DMatrix<f64>, labels: &[f64], k: usize, case_code: f64) -> (Vec<f64>, Vec<f64>) {
    (0..x.nrows())
        .map(|i| {
            let q: Vec<f64> = x.row(i).iter().copied().collect();
            let nbrs = neighbours(x, &q, k, Some(i));
            let hits = nbrs.iter().filter(|&&j| labels[j] == case_code).count();
            (vote(&nbrs, labels), hits as f64 / k as f64)
        })
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CvMethod {
    /// Screening plan, then the nearest-centroid classifier.
    SparseSdr { plan: ScreeningPlan },
    /// Chi-square ranking and k-NN; every `(top_m, k)` pair is scored by
    /// leave-one-out accuracy on the training fold and the best one is used
    /// (ties: smaller `top_m`, then smaller `k`).
    PvalueRank { top_m: Vec<usize>, k: Vec<usize> },
}

impl CvMethod {
    pub fn name(&self) -> &'static str {
        match self {
            CvMethod::SparseSdr { .. } => "sparse_sdr",
            CvMethod::PvalueRank { .. } => "pvalue_rank",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train: MetricBundle,
    pub test: MetricBundle,
    pub n_selected: usize,
    pub selected: Vec<String>,
    /// `(top_m, k)` chosen by the baseline's inner search.
    pub chosen: Option<(usize, usize)>,
}

/// Which samples each stage of a fold looked at, by sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub fold: usize,
    pub test_rows: Vec<usize>,
    pub selection_samples: Vec<String>,
    pub classifier_samples: Vec<String>,
}

impl FoldAudit {
    /// True when no test sample reached selection or classifier fitting.
    pub fn is_clean(&self, sample_ids: &[String]) -> bool {
        let test: HashSet<&str> = self
            .test_rows
            .iter()
            .map(|&i| sample_ids[i].as_str())
            .collect();
        self.selection_samples
            .iter()
            .chain(&self.classifier_samples)
            .all(|s| !test.contains(s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub train_sensitivity: f64,
    pub train_specificity: f64,
    pub train_accuracy: f64,
    pub train_auc: f64,
    pub test_sensitivity: f64,
    pub test_specificity: f64,
    pub test_accuracy: f64,
    pub test_auc: f64,
    pub n_selected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub method: String,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub average: AverageRow,
    #[serde(skip)]
    pub audit: Vec<FoldAudit>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

impl CvReport {
    fn new(method: &str, seed: u64, folds: Vec<FoldResult>, audit: Vec<FoldAudit>) -> Self {
        let avg = |f: fn(&FoldResult) -> f64| mean(folds.iter().map(f));
        let average = AverageRow {
            train_sensitivity: avg(|f| f.train.sensitivity),
            train_specificity: avg(|f| f.train.specificity),
            train_accuracy: avg(|f| f.train.accuracy),
            train_auc: avg(|f| f.train.auc),
            test_sensitivity: avg(|f| f.test.sensitivity),
            test_specificity: avg(|f| f.test.specificity),
            test_accuracy: avg(|f| f.test.accuracy),
            test_auc: avg(|f| f.test.auc),
            n_selected: avg(|f| f.n_selected as f64),
        };
        Self {
            method: method.to_string(),
            seed,
            folds,
            average,
            audit,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "fold\ttrain_sensitivity\ttrain_specificity\ttrain_accuracy\ttest_sensitivity\ttest_specificity\ttest_accuracy\tn_selected\n",
        );
        for f in &self.folds {
            let _ = writeln!(
                out,
                "CV-{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
                f.fold,
                f.train.sensitivity,
                f.train.specificity,
                f.train.accuracy,
                f.test.sensitivity,
                f.test.specificity,
                f.test.accuracy,
                f.n_selected
            );
        }
        let a = &self.average;
        let _ = writeln!(
            out,
            "Average\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
            a.train_sensitivity,
            a.train_specificity,
            a.train_accuracy,
            a.test_sensitivity,
            a.test_specificity,
            a.test_accuracy,
            a.n_selected
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn write(&self, tsv: &Path, json: &Path) -> Result<()> {
        write_file(tsv, &self.to_tsv())?;
        write_file(json, &self.to_json())
    }
}

/// Stratified fold id (0-based) for every sample.
///
/// Cases and controls are shuffled separately and dealt round-robin, the
/// controls continuing where the cases stopped, so fold sizes differ by at
/// most one and every fold holds both classes whenever each class has at
/// least `folds` members.
pub fn stratified_folds(cases: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(SdrError::validation("need at least 2 folds"));
    }
    let mut case_idx: Vec<usize> = (0..cases.len()).filter(|&i| cases[i]).collect();
    let mut control_idx: Vec<usize> = (0..cases.len()).filter(|&i| !cases[i]).collect();
    for (name, group) in [("cases", &case_idx), ("controls", &control_idx)] {
        if group.len() < folds {
            return Err(SdrError::DegenerateFold {
                fold: group.len() + 1,
                message: format!(
                    "only {} {name} for {folds} folds; every fold needs both classes",
                    group.len()
                ),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    case_idx.shuffle(&mut rng);
    control_idx.shuffle(&mut rng);
    let mut assignment = vec![0usize; cases.len()];
    for (pos, &i) in case_idx.iter().chain(&control_idx).enumerate() {
        assignment[i] = pos % folds;
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub method: CvMethod,
    pub seed: u64,
}

fn relabel_fold(e: SdrError, fold: usize) -> SdrError {
    match e {
        SdrError::DegenerateFold { message, .. } => SdrError::DegenerateFold { fold, message },
        other => other,
    }
}

/// k-fold cross-validation on a raw matrix with a binary response.
pub fn cross_validate(x: &PredictorMatrix, y: &Phenotype, cfg: &CvConfig) -> Result<CvReport> {
    if x.is_centered() {
        return Err(SdrError::validation(
            "cross-validation expects the raw matrix",
        ));
    }
    if y.kind() != PhenotypeKind::Binary {
        return Err(SdrError::validation(
            "cross-validation needs a binary response",
        ));
    }
    if y.len() != x.n_samples() {
        return Err(SdrError::validation(
            "labels and predictors disagree on sample count",
        ));
    }
    if let CvMethod::PvalueRank { top_m, k } = &cfg.method {
        if top_m.is_empty() || k.is_empty() || top_m.contains(&0) {
            return Err(SdrError::validation(
                "pvalue_rank needs non-empty top_m and k grids",
            ));
        }
    }
    let cases = y.case_mask()?;
    let assignment = stratified_folds(&cases, cfg.folds, cfg.seed)?;
    let results = (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let test: Vec<usize> = (0..x.n_samples()).filter(|&i| assignment[i] == f).collect();
            let train: Vec<usize> = (0..x.n_samples()).filter(|&i| assignment[i] != f).collect();
            run_fold(x, y, &cases, &train, &test, cfg)
                .map_err(|e| relabel_fold(e, f + 1))
                .map(|(mut result, mut audit)| {
                    result.fold = f + 1;
                    audit.fold = f + 1;
                    audit.test_rows = test;
                    (result, audit)
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let (folds, audit) = results.into_iter().unzip();
    Ok(CvReport::new(cfg.method.name(), cfg.seed, folds, audit))
}

fn run_fold(
    x: &PredictorMatrix,
    y: &Phenotype,
    cases: &[bool],
    train: &[usize],
    test: &[usize],
    cfg: &CvConfig,
) -> Result<(FoldResult, FoldAudit)> {
    let x_train_raw = x.select_rows(train)?;
    let x_test_raw = x.select_rows(test)?;
    let y_train = y.select(train)?;
    let truth_train: Vec<bool> = train.iter().map(|&i| cases[i]).collect();
    let truth_test: Vec<bool> = test.iter().map(|&i| cases[i]).collect();
    let case_code = y.level_codes()[1];

    match &cfg.method {
        CvMethod::SparseSdr { plan } => {
            let x_train = x_train_raw.clone().center()?;
            let design = build_design(&y_train, 2)?;
            let report = run_plan(&x_train, &design, plan, cfg.seed)?;
            if report.selected.is_empty() {
                return Err(SdrError::DegenerateFold {
                    fold: 0,
                    message: "screening selected no features".into(),
                });
            }
            let features = report.selected_indices();
            let clf = fit_classifier(&x_train, &y_train, &features, &report.b_selected)?;
            let on_train = clf.predict(&x_train_raw)?;
            let on_test = clf.predict(&x_test_raw)?;
            let train_m = metrics(&truth_train, &on_train.is_case(case_code), &on_train.scores)?;
            let test_m = metrics(&truth_test, &on_test.is_case(case_code), &on_test.scores)?;
            let seen = x_train.sample_ids().to_vec();
            Ok((
                FoldResult {
                    fold: 0,
                    train: train_m,
                    test: test_m,
                    n_selected: features.len(),
                    selected: clf.feature_ids.clone(),
                    chosen: None,
                },
                FoldAudit {
                    fold: 0,
                    test_rows: Vec::new(),
                    selection_samples: seen.clone(),
                    classifier_samples: seen,
                },
            ))
        }
        CvMethod::PvalueRank { top_m, k } => {
            let ranking = chi2_rank(&x_train_raw, &truth_train)?;
            let labels_train = y_train.labels();
            let mut best: Option<(usize, usize, usize, Vec<usize>)> = None;
            for &m in top_m {
                let cols: Vec<usize> = ranking.iter().take(m).map(|r| r.index).collect();
                let sub = x_train_raw.values().select_columns(&cols);
                for &kk in k {
                    check_k(kk, train.len() - 1, true)?;
                    let (pred, _) = knn_loo(&sub, labels_train, kk, case_code);
                    let correct = pred
                        .iter()
                        .zip(labels_train)
                        .filter(|(a, b)| a == b)
                        .count();
                    if best.as_ref().is_none_or(|b| correct > b.0) {
                        best = Some((correct, m, kk, cols.clone()));
                    }
                }
            }
            let (_, m, kk, cols) = best.expect("grids are non-empty");
            let sub_train = x_train_raw.values().select_columns(&cols);
            let sub_test = x_test_raw.values().select_columns(&cols);
            let (loo, loo_scores) = knn_loo(&sub_train, labels_train, kk, case_code);
            let (pred, scores) =
                knn_with_scores(&sub_train, labels_train, &sub_test, kk, Some(case_code))?;
            let is_case = |v: &[f64]| v.iter().map(|&l| l == case_code).collect::<Vec<_>>();
            let train_m = metrics(&truth_train, &is_case(&loo), &loo_scores)?;
            let test_m = metrics(&truth_test, &is_case(&pred), &scores)?;
            let seen = x_train_raw.sample_ids().to_vec();
            Ok((
                FoldResult {
                    fold: 0,
                    train: train_m,
                    test: test_m,
                    n_selected: cols.len(),
                    selected: cols.iter().map(|&j| x.feature_ids()[j].clone()).collect(),
                    chosen: Some((m, kk)),
                },
                FoldAudit {
                    fold: 0,
                    test_rows: Vec::new(),
                    selection_samples: seen.clone(),
                    classifier_samples: seen,
                },
            ))
        }
    }
}
