//! Split-and-conquer feature screening.
//!
//! Each stage cuts the surviving features into contiguous partitions, fits
//! every partition on its own, keeps the rows of largest norm from each, and
//! merges the survivors in original feature order. A last fit on the merged
//! set yields the reported basis. When the partitions respect independent
//! predictor blocks, a zero-padded block solution is also a solution of the
//! whole problem, which is what makes the per-partition fits meaningful.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::PredictorMatrix;
use crate::design::ScoringDesign;
use crate::error::{Result, SdrError};
use crate::scoring::{fit, DirectionSet, SolverConfig};

/// One stage: `n_partitions` fits, each keeping its top `keep` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub n_partitions: usize,
    pub keep: usize,
}

impl Stage {
    pub fn new(n_partitions: usize, keep: usize) -> Self {
        Self { n_partitions, keep }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningPlan {
    pub stages: Vec<Stage>,
    /// Solver used inside every partition.
    pub stage_fit: SolverConfig,
    /// Solver for the merged survivors.
    pub final_fit: SolverConfig,
    /// Cap on the number of reported features (nonzero rows only).
    pub final_keep: Option<usize>,
}

impl ScreeningPlan {
    /// Plan whose stage and final fits share one configuration.
    pub fn new(stages: Vec<Stage>, cfg: SolverConfig) -> Self {
        Self {
            stages,
            stage_fit: cfg,
            final_fit: cfg,
            final_keep: None,
        }
    }

    /// Stage sizes only; feature-count checks happen in [`ScreeningPlan::pool_sizes`].
    pub fn validate(&self) -> Result<()> {
        for (s, st) in self.stages.iter().enumerate() {
            if st.n_partitions == 0 || st.keep == 0 {
                return Err(SdrError::validation(format!(
                    "stage {}: partitions and keep must be >= 1",
                    s + 1
                )));
            }
        }
        if self.final_keep == Some(0) {
            return Err(SdrError::validation("final_keep must be >= 1"));
        }
        Ok(())
    }

    /// Input size of every stage followed by the merged pool size, for `p`
    /// starting features. Fails when a stage has fewer inputs than partitions.
    pub fn pool_sizes(&self, p: usize) -> Result<Vec<usize>> {
        self.validate()?;
        let mut sizes = vec![p];
        let mut current = p;
        for (s, st) in self.stages.iter().enumerate() {
            let parts = partition_features(current, st.n_partitions).map_err(|_| {
                SdrError::validation(format!(
                    "stage {} needs {} partitions but only {current} features reach it",
                    s + 1,
                    st.n_partitions
                ))
            })?;
            current = parts.iter().map(|r| r.len().min(st.keep)).sum();
            sizes.push(current);
        }
        Ok(sizes)
    }
}

/// Contiguous balanced ranges covering `0..p`; the first `p % k` are one longer.
pub fn partition_features(p: usize, k: usize) -> Result<Vec<Range<usize>>> {
    if k == 0 || k > p {
        return Err(SdrError::validation(format!(
            "cannot split {p} features into {k} partitions"
        )));
    }
    let (base, extra) = (p / k, p % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        out.push(start..start + len);
        start += len;
    }
    Ok(out)
}

/// Top rows of a fitted basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// Positions into the fitted matrix's columns, best first.
    pub kept: Vec<usize>,
    pub norms: Vec<f64>,
    /// Set when every row of `B` is zero.
    pub no_signal: bool,
}

/// Sorts rows by norm (descending, ties by index) and keeps the first `k`.
pub fn rank_and_keep(ds: &DirectionSet, k: usize) -> Ranking {
    rank_norms(&ds.row_norms(), k)
}

pub fn rank_norms(norms: &[f64], k: usize) -> Ranking {
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    order.truncate(k.min(norms.len()));
    Ranking {
        norms: order.iter().map(|&i| norms[i]).collect(),
        kept: order,
        no_signal: norms.iter().all(|&v| v == 0.0),
    }
}

/// A surviving feature, identified by its column in the original matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeptFeature {
    pub index: usize,
    pub feature_id: String,
    pub row_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub partition: usize,
    /// Slice of the stage input handed to this partition.
    pub range: Range<usize>,
    /// Survivors in rank order.
    pub kept: Vec<KeptFeature>,
    pub no_signal: bool,
    pub converged: bool,
    pub outer_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    /// Original column indices entering the stage, ascending.
    pub input: Vec<usize>,
    pub partitions: Vec<PartitionReport>,
    /// Survivors of all partitions, ascending by original index.
    pub merged: Vec<usize>,
}

/// A reported feature and the partition it passed through at every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFeature {
    pub index: usize,
    pub feature_id: String,
    pub row_norm: f64,
    /// `(stage, partition)` pairs, both 1-based, in stage order.
    pub provenance: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct SelectionReport {
    pub stages: Vec<StageReport>,
    /// Original indices of the pool handed to the final fit.
    pub pool: Vec<usize>,
    /// Final fit over the pool (rows follow `pool`).
    pub pool_fit: DirectionSet,
    /// Reported features in rank order.
    pub selected: Vec<SelectedFeature>,
    /// Rows of the final basis for `selected`, in the same order.
    pub b_selected: DMatrix<f64>,
    pub final_no_signal: bool,
}

#[derive(Serialize)]
struct StageSummary {
    stage: usize,
    n_partitions: usize,
    input_features: usize,
    kept_features: usize,
    no_signal_partitions: usize,
    unconverged_partitions: usize,
}

#[derive(Serialize)]
struct ReportSummary<'a> {
    stages: Vec<StageSummary>,
    pool_size: usize,
    final_converged: bool,
    final_outer_iters: usize,
    final_no_signal: bool,
    n_selected: usize,
    selected: &'a [SelectedFeature],
    theta: Vec<Vec<f64>>,
}

impl SelectionReport {
    pub fn selected_indices(&self) -> Vec<usize> {
        self.selected.iter().map(|f| f.index).collect()
    }

    /// Stage-s candidate count (after keep and merge), 1-based.
    pub fn stage_candidates(&self, stage: usize) -> usize {
        self.stages[stage - 1].merged.len()
    }

    /// Rows `feature_id, row_norm, stage, partition`; one row per kept
    /// feature per stage, then the final selection with stage `final`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("feature_id\trow_norm\tstage\tpartition\n");
        for st in &self.stages {
            for part in &st.partitions {
                for f in &part.kept {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{}",
                        f.feature_id, f.row_norm, st.stage, part.partition
                    );
                }
            }
        }
        for f in &self.selected {
            let last = f.provenance.last().map_or(0, |&(_, p)| p);
            let _ = writeln!(out, "{}\t{}\tfinal\t{}", f.feature_id, f.row_norm, last);
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let summary = ReportSummary {
            stages: self
                .stages
                .iter()
                .map(|st| StageSummary {
                    stage: st.stage,
                    n_partitions: st.partitions.len(),
                    input_features: st.input.len(),
                    kept_features: st.merged.len(),
                    no_signal_partitions: st.partitions.iter().filter(|p| p.no_signal).count(),
                    unconverged_partitions: st.partitions.iter().filter(|p| !p.converged).count(),
                })
                .collect(),
            pool_size: self.pool.len(),
            final_converged: self.pool_fit.converged,
            final_outer_iters: self.pool_fit.outer_iters,
            final_no_signal: self.final_no_signal,
            n_selected: self.selected.len(),
            selected: &self.selected,
            theta: self
                .pool_fit
                .theta
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
        };
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"
    }

    pub fn write(&self, tsv: &Path, json: &Path) -> Result<()> {
        write_file(tsv, &self.to_tsv())?;
        write_file(json, &self.summary_json())
    }
}

pub(crate) fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|source| SdrError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn fit_partition(
    x: &PredictorMatrix,
    design: &ScoringDesign,
    columns: &[usize],
    cfg: &SolverConfig,
) -> Result<DirectionSet> {
    fit(&x.select_columns(columns), design, cfg)
}

/// Runs the staged plan on a centered matrix.
///
/// Every fit uses `seed` for its initial scores, so the result depends only
/// on the inputs and never on how partitions are scheduled.
pub fn run_plan(
    x: &PredictorMatrix,
    design: &ScoringDesign,
    plan: &ScreeningPlan,
    seed: u64,
) -> Result<SelectionReport> {
    if !x.is_centered() {
        return Err(SdrError::validation("screening expects a centered matrix"));
    }
    plan.pool_sizes(x.n_features())?;
    let stage_cfg = SolverConfig {
        seed,
        ..plan.stage_fit
    };
    let final_cfg = SolverConfig {
        seed,
        ..plan.final_fit
    };
    let ids = x.feature_ids();

    let mut input: Vec<usize> = (0..x.n_features()).collect();
    let mut stages = Vec::with_capacity(plan.stages.len());
    for (s, st) in plan.stages.iter().enumerate() {
        let ranges = partition_features(input.len(), st.n_partitions)?;
        let partitions = ranges
            .par_iter()
            .enumerate()
            .map(|(k, range)| {
                let cols = &input[range.clone()];
                let ds = fit_partition(x, design, cols, &stage_cfg).map_err(|e| {
                    SdrError::Partition {
                        stage: s + 1,
                        partition: k + 1,
                        source: Box::new(e),
                    }
                })?;
                let ranking = rank_and_keep(&ds, st.keep);
                let kept = ranking
                    .kept
                    .iter()
                    .zip(&ranking.norms)
                    .map(|(&pos, &row_norm)| KeptFeature {
                        index: cols[pos],
                        feature_id: ids[cols[pos]].clone(),
                        row_norm,
                    })
                    .collect();
                Ok(PartitionReport {
                    partition: k + 1,
                    range: range.clone(),
                    kept,
                    no_signal: ranking.no_signal,
                    converged: ds.converged,
                    outer_iters: ds.outer_iters,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut merged: Vec<usize> = partitions
            .iter()
            .flat_map(|p| p.kept.iter().map(|f| f.index))
            .collect();
        merged.sort_unstable();
        stages.push(StageReport {
            stage: s + 1,
            input: std::mem::take(&mut input),
            partitions,
            merged: merged.clone(),
        });
        input = merged;
    }

    let pool = input;
    let pool_fit = fit_partition(x, design, &pool, &final_cfg)?;
    let norms = pool_fit.row_norms();
    let nonzero = norms.iter().filter(|&&v| v > 0.0).count();
    let cap = plan.final_keep.map_or(nonzero, |m| m.min(nonzero));
    let ranking = rank_norms(&norms, cap);

    let mut chains: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
    for st in &stages {
        for part in &st.partitions {
            for f in &part.kept {
                chains
                    .entry(f.index)
                    .or_default()
                    .push((st.stage, part.partition));
            }
        }
    }
    let provenance_of = |index: usize| chains.get(&index).cloned().unwrap_or_default();
    let selected: Vec<SelectedFeature> = ranking
        .kept
        .iter()
        .zip(&ranking.norms)
        .map(|(&pos, &row_norm)| SelectedFeature {
            index: pool[pos],
            feature_id: ids[pool[pos]].clone(),
            row_norm,
            provenance: provenance_of(pool[pos]),
        })
        .collect();
    let b_selected = pool_fit.b.select_rows(&ranking.kept);
    Ok(SelectionReport {
        final_no_signal: ranking.no_signal,
        stages,
        pool,
        pool_fit,
        selected,
        b_selected,
    })
}

/// Recomputes one partition of a finished report from its recorded input.
pub fn replay_partition(
    x: &PredictorMatrix,
    design: &ScoringDesign,
    plan: &ScreeningPlan,
    report: &SelectionReport,
    seed: u64,
    stage: usize,
    partition: usize,
) -> Result<Vec<KeptFeature>> {
    let st = &report.stages[stage - 1];
    let part = &st.partitions[partition - 1];
    let cols = &st.input[part.range.clone()];
    let cfg = SolverConfig {
        seed,
        ..plan.stage_fit
    };
    let ds = fit_partition(x, design, cols, &cfg)?;
    let ranking = rank_and_keep(&ds, plan.stages[stage - 1].keep);
    Ok(ranking
        .kept
        .iter()
        .zip(&ranking.norms)
        .map(|(&pos, &row_norm)| KeptFeature {
            index: cols[pos],
            feature_id: x.feature_ids()[cols[pos]].clone(),
            row_norm,
        })
        .collect())
}

/// Whole-matrix fit reporting nonzero rows in rank order, capped at `keep`.
pub fn select_single_shot(
    x: &PredictorMatrix,
    design: &ScoringDesign,
    cfg: &SolverConfig,
    keep: Option<usize>,
) -> Result<(Vec<usize>, DirectionSet)> {
    let ds = fit(x, design, cfg)?;
    let norms = ds.row_norms();
    let nonzero = norms.iter().filter(|&&v| v > 0.0).count();
    let ranking = rank_norms(&norms, keep.map_or(nonzero, |m| m.min(nonzero)));
    Ok((ranking.kept, ds))
}
