use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use sdr_core::dataset::{
    align_phenotype, load_phenotype_records, load_predictors, simulate, Delimiter, Phenotype,
    PhenotypeKind, PredictorMatrix,
};
use sdr_core::design::{build_design, default_slices, ScoringDesign};
use sdr_core::evaluation::{
    chi2_rank, chi2_tsv, cross_validate, fit_classifier, metrics, CvConfig, ProjectionClassifier,
};
use sdr_core::scoring::{fit, DirectionSet};
use sdr_core::screening::run_plan;

use crate::config::RunConfig;
use crate::manifest;
use crate::{Common, IoFailure};

/// Slice count used for continuous responses when `design.h` is absent.
const CONTINUOUS_SLICES: usize = 5;

/// Files produced by a command, in write order.
pub type Outputs = Vec<(String, Vec<u8>)>;

/// Merges flags into the config, runs the command and writes outputs plus
/// the manifest.
pub fn dispatch(command: &str, flags: &Common, model: Option<PathBuf>) -> Result<()> {
    let needs_config = matches!(command, "fit" | "screen" | "cv" | "simulate");
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?.0,
        None if needs_config => bail!("missing --config (see 'ssdr {command} --help')"),
        None => RunConfig::default(),
    };
    let path_text = |p: &Path| p.display().to_string();
    if let Some(x) = &flags.x {
        cfg.set("input.x", path_text(x));
    }
    if let Some(y) = &flags.y {
        cfg.set("input.y", path_text(y));
    }
    if let Some(m) = &model {
        cfg.set("input.model", path_text(m));
    }
    if let Some(seed) = flags.seed {
        cfg.set("seed", seed.to_string());
    }
    let out = match (&flags.out, cfg.raw("output.dir")) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => PathBuf::from(o),
        (None, None) => bail!("missing --out (see 'ssdr {command} --help')"),
    };
    cfg.remove("output.dir");
    let outputs = execute(command, &cfg)?;
    manifest::write_run(command, &cfg, &out, &outputs)
}

fn input_path(cfg: &RunConfig, key: &str, flag: &str, command: &str) -> Result<PathBuf> {
    cfg.raw(key)
        .map(PathBuf::from)
        .ok_or_else(|| anyhow!("missing --{flag} (see 'ssdr {command} --help')"))
}

/// Input files a command reads, as `(role, path)`.
pub fn inputs(command: &str, cfg: &RunConfig) -> Vec<(String, PathBuf)> {
    let keys: &[(&str, &str)] = match command {
        "simulate" => &[],
        "predict" => &[("x", "input.x"), ("model", "input.model"), ("y", "input.y")],
        _ => &[("x", "input.x"), ("y", "input.y")],
    };
    keys.iter()
        .filter_map(|(role, key)| cfg.raw(key).map(|p| (role.to_string(), PathBuf::from(p))))
        .collect()
}

pub fn execute(command: &str, cfg: &RunConfig) -> Result<Outputs> {
    match command {
        "fit" => cmd_fit(cfg),
        "screen" => cmd_screen(cfg),
        "cv" => cmd_cv(cfg),
        "assoc" => cmd_assoc(cfg),
        "simulate" => cmd_simulate(cfg),
        "predict" => cmd_predict(cfg),
        other => bail!("unknown command '{other}'"),
    }
}

fn load_x(cfg: &RunConfig, command: &str) -> Result<PredictorMatrix> {
    let path = input_path(cfg, "input.x", "x", command)?;
    Ok(load_predictors(&path, Delimiter::from_path(&path))?)
}

fn load_xy(cfg: &RunConfig, command: &str) -> Result<(PredictorMatrix, Phenotype)> {
    let x = load_x(cfg, command)?;
    let ypath = input_path(cfg, "input.y", "y", command)?;
    let records = load_phenotype_records(&ypath)?;
    let y = align_phenotype(&x, &records, cfg.get_or("design.max_levels", 10)?)?;
    Ok((x, y))
}

fn design_for(cfg: &RunConfig, y: &Phenotype) -> Result<ScoringDesign> {
    let h = cfg.get_or("design.h", default_slices(y, CONTINUOUS_SLICES))?;
    Ok(build_design(y, h)?)
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn directions_tsv(ids: &[String], b: &nalgebra::DMatrix<f64>) -> Vec<u8> {
    let mut out = String::from("feature_id");
    for j in 0..b.ncols() {
        let _ = write!(out, "\tb{}", j + 1);
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(id);
        for j in 0..b.ncols() {
            let _ = write!(out, "\t{}", b[(i, j)]);
        }
        out.push('\n');
    }
    out.into_bytes()
}

fn theta_tsv(theta: &nalgebra::DMatrix<f64>) -> Vec<u8> {
    let mut out = String::from("basis");
    for j in 0..theta.ncols() {
        let _ = write!(out, "\ttheta{}", j + 1);
    }
    out.push('\n');
    for k in 0..theta.nrows() {
        if k == 0 {
            out.push_str("const");
        } else {
            let _ = write!(out, "slice{}", k + 1);
        }
        for j in 0..theta.ncols() {
            let _ = write!(out, "\t{}", theta[(k, j)]);
        }
        out.push('\n');
    }
    out.into_bytes()
}

#[derive(Serialize)]
struct FitSummary<'a> {
    converged: bool,
    outer_iters: usize,
    inner_converged: bool,
    inner_iterations: &'a [usize],
    objective_history: &'a [f64],
    max_constraint_violation: f64,
    n_features: usize,
    n_nonzero: usize,
    d: usize,
    k: usize,
    slice_sizes: &'a [usize],
    slice_bounds: &'a [f64],
    response: PhenotypeKind,
}

fn fit_summary<'a>(
    ds: &'a DirectionSet,
    design: &'a ScoringDesign,
    y: &Phenotype,
) -> FitSummary<'a> {
    FitSummary {
        converged: ds.converged,
        outer_iters: ds.outer_iters,
        inner_converged: ds.inner_converged,
        inner_iterations: &ds.inner_iterations,
        objective_history: &ds.objective_history,
        max_constraint_violation: ds.max_constraint_violation,
        n_features: ds.b.nrows(),
        n_nonzero: ds.support().len(),
        d: ds.d(),
        k: design.k(),
        slice_sizes: design.slice_sizes(),
        slice_bounds: design.slice_bounds(),
        response: y.kind(),
    }
}

/// Classifier over the given rows of `b`, when the response is discrete and
/// at least one feature survived.
fn maybe_model(
    xc: &PredictorMatrix,
    y: &Phenotype,
    features: &[usize],
    b: &nalgebra::DMatrix<f64>,
) -> Result<Option<ProjectionClassifier>> {
    if y.kind() == PhenotypeKind::Continuous || features.is_empty() {
        return Ok(None);
    }
    Ok(Some(fit_classifier(xc, y, features, b)?))
}

fn cmd_fit(cfg: &RunConfig) -> Result<Outputs> {
    let (x, y) = load_xy(cfg, "fit")?;
    let design = design_for(cfg, &y)?;
    let solver = cfg.solver("", design.k())?;
    let xc = x.center()?;
    let ds = fit(&xc, &design, &solver)?;
    let mut outputs = vec![
        (
            "directions.tsv".to_string(),
            directions_tsv(xc.feature_ids(), &ds.b),
        ),
        ("theta.tsv".to_string(), theta_tsv(&ds.theta)),
        ("fit.json".to_string(), json(&fit_summary(&ds, &design, &y))),
    ];
    let support = ds.support();
    if let Some(model) = maybe_model(&xc, &y, &support, &ds.b.select_rows(&support))? {
        outputs.push(("model.json".to_string(), json(&model)));
    }
    Ok(outputs)
}

fn cmd_screen(cfg: &RunConfig) -> Result<Outputs> {
    let (x, y) = load_xy(cfg, "screen")?;
    let design = design_for(cfg, &y)?;
    let plan = cfg.plan(design.k())?;
    let xc = x.center()?;
    let report = run_plan(&xc, &design, &plan, cfg.seed()?)?;
    let mut outputs = vec![
        ("selection.tsv".to_string(), report.to_tsv().into_bytes()),
        (
            "selection.json".to_string(),
            report.summary_json().into_bytes(),
        ),
    ];
    if let Some(model) = maybe_model(&xc, &y, &report.selected_indices(), &report.b_selected)? {
        outputs.push(("model.json".to_string(), json(&model)));
    }
    Ok(outputs)
}

fn cmd_cv(cfg: &RunConfig) -> Result<Outputs> {
    let (x, y) = load_xy(cfg, "cv")?;
    if y.kind() != PhenotypeKind::Binary {
        bail!("cv needs a binary phenotype");
    }
    let (folds, method) = cfg.cv(2)?;
    let report = cross_validate(
        &x,
        &y,
        &CvConfig {
            folds,
            method,
            seed: cfg.seed()?,
        },
    )?;
    Ok(vec![
        ("cv_report.tsv".to_string(), report.to_tsv().into_bytes()),
        ("cv_report.json".to_string(), report.to_json().into_bytes()),
    ])
}

fn cmd_assoc(cfg: &RunConfig) -> Result<Outputs> {
    let (x, y) = load_xy(cfg, "assoc")?;
    let cases = y.case_mask().context("assoc needs a binary phenotype")?;
    let results = chi2_rank(&x, &cases)?;
    Ok(vec![(
        "chi2.tsv".to_string(),
        chi2_tsv(&results).into_bytes(),
    )])
}

#[derive(Serialize)]
struct Truth<'a> {
    seed: u64,
    n_samples: usize,
    n_features: usize,
    n_cases: usize,
    support: &'a [usize],
    support_ids: Vec<&'a str>,
    effects: Vec<f64>,
    allele_frequencies: &'a [f64],
}

fn cmd_simulate(cfg: &RunConfig) -> Result<Outputs> {
    let spec = cfg.synthetic()?;
    let cohort = simulate(&spec)?;
    let x = &cohort.x;
    let mut xt = String::with_capacity(x.n_samples() * (x.n_features() * 2 + 8));
    xt.push_str("id");
    for id in x.feature_ids() {
        xt.push('\t');
        xt.push_str(id);
    }
    xt.push('\n');
    for (i, sid) in x.sample_ids().iter().enumerate() {
        xt.push_str(sid);
        for j in 0..x.n_features() {
            // dosages are small integers
            let _ = write!(xt, "\t{}", x.values()[(i, j)] as u8);
        }
        xt.push('\n');
    }
    let mut yt = String::new();
    for (sid, v) in x.sample_ids().iter().zip(cohort.y.labels()) {
        let _ = writeln!(yt, "{sid}\t{v}");
    }
    let mut effects: Vec<(usize, f64)> = spec.support.clone();
    effects.sort_by_key(|e| e.0);
    let truth = Truth {
        seed: spec.seed,
        n_samples: spec.n_samples,
        n_features: spec.n_features,
        n_cases: cohort.y.case_mask()?.iter().filter(|&&c| c).count(),
        support: &cohort.support,
        support_ids: cohort
            .support
            .iter()
            .map(|&j| x.feature_ids()[j].as_str())
            .collect(),
        effects: effects.iter().map(|e| e.1).collect(),
        allele_frequencies: &cohort.allele_frequencies,
    };
    Ok(vec![
        ("x.tsv".to_string(), xt.into_bytes()),
        ("y.tsv".to_string(), yt.into_bytes()),
        ("truth.json".to_string(), json(&truth)),
    ])
}

fn cmd_predict(cfg: &RunConfig) -> Result<Outputs> {
    let x = load_x(cfg, "predict")?;
    let mpath = input_path(cfg, "input.model", "model", "predict")?;
    let text = std::fs::read_to_string(&mpath)
        .map_err(|e| IoFailure(format!("{}: {e}", mpath.display())))?;
    let model: ProjectionClassifier = serde_json::from_str(&text)
        .with_context(|| format!("parsing model {}", mpath.display()))?;
    let pred = model.predict(&x)?;
    let mut out = String::from("sample_id\tlabel\tscore\n");
    for ((sid, l), s) in x.sample_ids().iter().zip(&pred.labels).zip(&pred.scores) {
        let _ = writeln!(out, "{sid}\t{l}\t{s}");
    }
    let mut outputs = vec![("predictions.tsv".to_string(), out.into_bytes())];
    if let Some(ypath) = cfg.raw("input.y") {
        let records = load_phenotype_records(Path::new(ypath))?;
        let y = align_phenotype(&x, &records, cfg.get_or("design.max_levels", 10)?)?;
        if model.classes.len() == 2 {
            let case = model.classes[1];
            let truth: Vec<bool> = y.labels().iter().map(|&l| l == case).collect();
            let m = metrics(&truth, &pred.is_case(case), &pred.scores)?;
            outputs.push(("metrics.json".to_string(), json(&m)));
        }
    }
    Ok(outputs)
}
