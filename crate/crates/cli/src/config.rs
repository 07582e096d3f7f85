//! `key = value` run configuration.
//!
//! Keys are dotted (`penalty.lambda = 0.5`). Blank lines and lines starting
//! with `#` are ignored. Unknown or repeated keys are rejected so typos do
//! not silently fall back to defaults. Keys under `final.` override the
//! solver settings for the last fit of a screening plan only.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use sdr_core::admm::PenaltyParams;
use sdr_core::dataset::{Link, SyntheticSpec};
use sdr_core::evaluation::CvMethod;
use sdr_core::scoring::{SolverConfig, ThetaMode};
use sdr_core::screening::{ScreeningPlan, Stage};

const SOLVER_KEYS: &[&str] = &[
    "penalty.lambda",
    "penalty.delta",
    "penalty.r",
    "penalty.rho",
    "admm.tol",
    "admm.max_iter",
    "solver.d",
    "solver.outer_tol",
    "solver.outer_max_iter",
    "solver.theta_mode",
    "solver.theta_tol",
    "solver.theta_max_iter",
];

const OTHER_KEYS: &[&str] = &[
    "seed",
    "input.x",
    "input.y",
    "input.model",
    "output.dir",
    "design.h",
    "design.max_levels",
    "plan.stages",
    "plan.final_keep",
    "cv.folds",
    "cv.method",
    "cv.top_m",
    "cv.k",
    "sim.n_samples",
    "sim.n_features",
    "sim.maf_low",
    "sim.maf_high",
    "sim.support",
    "sim.support_count",
    "sim.effect",
    "sim.link",
    "sim.blocks",
    "sim.block_correlation",
];

fn known(key: &str) -> bool {
    let bare = key.strip_prefix("final.").unwrap_or(key);
    SOLVER_KEYS.contains(&bare) || (bare == key && OTHER_KEYS.contains(&key))
}

/// Parsed configuration; values stay as text until a command asks for them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected 'key = value'", i + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if !known(key) {
                bail!("config line {}: unknown key '{key}'", i + 1);
            }
            if value.is_empty() {
                bail!("config line {}: empty value for '{key}'", i + 1);
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                bail!("config line {}: key '{key}' given twice", i + 1);
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::IoFailure(format!("{}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn remove(&mut self, key: &str) {
        self.entries.remove(key);
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.entries.insert(key.to_string(), value);
    }

    /// Canonical `key = value` text (sorted keys).
    pub fn canonical(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| anyhow!("config key '{key}' = '{v}': {e}"))
            })
            .transpose()
    }

    pub fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|item| {
                        let item = item.trim();
                        item.parse::<T>()
                            .map_err(|e| anyhow!("config key '{key}' item '{item}': {e}"))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 0)
    }

    /// Solver settings; `prefix` is `""` or `"final."`, the latter falling
    /// back to the unprefixed keys. `k` fixes the default `d = K - 1`.
    pub fn solver(&self, prefix: &str, k: usize) -> Result<SolverConfig> {
        let pick = |key: &str| {
            let full = format!("{prefix}{key}");
            if self.entries.contains_key(&full) {
                full
            } else {
                key.to_string()
            }
        };
        let defaults = SolverConfig::default();
        let dp = PenaltyParams::default();
        let penalty = PenaltyParams {
            lambda: self.get_or(&pick("penalty.lambda"), dp.lambda)?,
            delta: self.get_or(&pick("penalty.delta"), dp.delta)?,
            r: self.get_or(&pick("penalty.r"), dp.r)?,
            rho: self.get_or(&pick("penalty.rho"), dp.rho)?,
        };
        let mode = match self.raw(&pick("solver.theta_mode")) {
            None | Some("iterate") => ThetaMode::Iterate,
            Some("newton") => ThetaMode::Newton,
            Some(other) => bail!("solver.theta_mode must be 'iterate' or 'newton', got '{other}'"),
        };
        let mut cfg = SolverConfig {
            d: self.get_or(&pick("solver.d"), k.saturating_sub(1).max(1))?,
            penalty,
            outer_tol: self.get_or(&pick("solver.outer_tol"), defaults.outer_tol)?,
            outer_max_iter: self.get_or(&pick("solver.outer_max_iter"), defaults.outer_max_iter)?,
            seed: self.seed()?,
            ..defaults
        };
        cfg.admm.tol = self.get_or(&pick("admm.tol"), cfg.admm.tol)?;
        cfg.admm.max_iter = self.get_or(&pick("admm.max_iter"), cfg.admm.max_iter)?;
        cfg.theta.mode = mode;
        cfg.theta.tol = self.get_or(&pick("solver.theta_tol"), cfg.theta.tol)?;
        cfg.theta.max_iter = self.get_or(&pick("solver.theta_max_iter"), cfg.theta.max_iter)?;
        cfg.validate(k)?;
        Ok(cfg)
    }

    /// `plan.stages = 20x2000, 4x1500` (partitions x keep).
    pub fn plan(&self, k: usize) -> Result<ScreeningPlan> {
        let text = self
            .raw("plan.stages")
            .ok_or_else(|| anyhow!("config key 'plan.stages' is required"))?;
        let stages = text
            .split(',')
            .map(|s| {
                let s = s.trim();
                let (parts, keep) = s
                    .split_once('x')
                    .ok_or_else(|| anyhow!("plan stage '{s}' must look like 20x2000"))?;
                Ok(Stage::new(
                    parts
                        .trim()
                        .parse()
                        .with_context(|| format!("plan stage '{s}'"))?,
                    keep.trim()
                        .parse()
                        .with_context(|| format!("plan stage '{s}'"))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let plan = ScreeningPlan {
            stages,
            stage_fit: self.solver("", k)?,
            final_fit: self.solver("final.", k)?,
            final_keep: self.get("plan.final_keep")?,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn cv(&self, k: usize) -> Result<(usize, CvMethod)> {
        let folds = self.get_or("cv.folds", 5usize)?;
        let method = match self.raw("cv.method").unwrap_or("sparse_sdr") {
            "sparse_sdr" => CvMethod::SparseSdr {
                plan: self.plan(k)?,
            },
            "pvalue_rank" => CvMethod::PvalueRank {
                top_m: self
                    .list("cv.top_m")?
                    .unwrap_or_else(|| vec![10, 20, 50, 100]),
                k: self.list("cv.k")?.unwrap_or_else(|| vec![1, 3, 5, 7, 9]),
            },
            other => bail!("cv.method must be 'sparse_sdr' or 'pvalue_rank', got '{other}'"),
        };
        Ok((folds, method))
    }

    pub fn synthetic(&self) -> Result<SyntheticSpec> {
        let base = SyntheticSpec::default();
        let n_features: usize = self.get_or("sim.n_features", base.n_features)?;
        let explicit = self.raw("sim.support").map(parse_support).transpose()?;
        let support = match explicit {
            Some(s) => {
                if self.raw("sim.support_count").is_some() {
                    bail!("give either sim.support or sim.support_count, not both");
                }
                s
            }
            None => {
                let count: usize = self.get_or("sim.support_count", 0)?;
                let effect: f64 = self.get_or("sim.effect", 1.0)?;
                if count > n_features {
                    bail!("sim.support_count = {count} exceeds sim.n_features = {n_features}");
                }
                // spread evenly, offset into the first stride
                let stride = n_features / count.max(1);
                (0..count)
                    .map(|i| (i * stride + stride / 5, effect))
                    .collect()
            }
        };
        let link = match self.raw("sim.link").unwrap_or("logistic") {
            "logistic" => Link::Logistic,
            "threshold" => Link::Threshold,
            other => bail!("sim.link must be 'logistic' or 'threshold', got '{other}'"),
        };
        let blocks = self.raw("sim.blocks").map(parse_blocks).transpose()?;
        let spec = SyntheticSpec {
            n_samples: self.get_or("sim.n_samples", base.n_samples)?,
            n_features,
            maf_range: (
                self.get_or("sim.maf_low", base.maf_range.0)?,
                self.get_or("sim.maf_high", base.maf_range.1)?,
            ),
            support,
            link,
            blocks,
            block_correlation: self.get_or("sim.block_correlation", base.block_correlation)?,
            seed: self.seed()?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// `index:effect` pairs separated by commas.
fn parse_support(text: &str) -> Result<Vec<(usize, f64)>> {
    text.split(',')
        .map(|item| {
            let item = item.trim();
            let (j, e) = item
                .split_once(':')
                .ok_or_else(|| anyhow!("sim.support item '{item}' must look like 12:1.5"))?;
            Ok((
                j.trim()
                    .parse()
                    .with_context(|| format!("sim.support item '{item}'"))?,
                e.trim()
                    .parse()
                    .with_context(|| format!("sim.support item '{item}'"))?,
            ))
        })
        .collect()
}

/// `start-end` half-open ranges separated by commas.
fn parse_blocks(text: &str) -> Result<Vec<Range<usize>>> {
    text.split(',')
        .map(|item| {
            let item = item.trim();
            let (a, b) = item
                .split_once('-')
                .ok_or_else(|| anyhow!("sim.blocks item '{item}' must look like 0-100"))?;
            Ok(a.trim().parse()?..b.trim().parse()?)
        })
        .collect()
}
