//! Deterministic hyperparameter grid search.
//!
//! The sweep section of the config lists candidate values per
//! hyperparameter; the runner trains one booster per cell of the cartesian
//! product on the training split and ranks cells by validation Sharpe of
//! the main target. Grids must stay inside fixed per-parameter bounds, the
//! published search ranges this implementation inherits. A `max_cells` cap
//! subsamples the product deterministically from the master seed. Cells
//! run in a parallel worker pool; results are ordered, so the output never
//! depends on thread scheduling.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Deserialize;

use tempora_core::gbdt::{BoostConfig, Booster};
use tempora_core::io::fmt_sig17;
use tempora_core::metrics::{era_corr, summarize, CorrSeries};
use tempora_core::rng::{sub_rng, sub_seed};
use tempora_core::split::make_split;
use tempora_core::{Error, PanelSet, Result};

use crate::config::{ModelConfig, ModelKind, RunConfig};
use crate::pipeline::{engineer, load_panel, resolve_split};

/// Hyperparameter grids; a parameter with an empty list keeps the base
/// model's value. Bounds (inclusive) per parameter:
///
/// | parameter         | low   | high  |
/// |-------------------|-------|-------|
/// | n_estimators      | 50    | 1000  |
/// | learning_rate     | 0.005 | 0.1   |
/// | min_data_in_leaf  | 2500  | 40000 |
/// | lambda_l1         | 0.01  | 1     |
/// | lambda_l2         | 0.01  | 1     |
/// | feature_fraction  | 0.1   | 1     |
/// | bagging_fraction  | 0.5   | 1     |
/// | bagging_freq      | 10    | 50    |
/// | drop_rate         | 0.1   | 0.5   |
/// | skip_drop         | 0.1   | 0.8   |
/// | top_rate          | 0.1   | 0.4   |
/// | other_rate        | 0.05  | 0.2   |
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    /// Name of the model whose hyperparameters vary; default: the first
    /// boosted model.
    pub model: Option<String>,
    pub n_estimators: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub min_data_in_leaf: Vec<usize>,
    pub lambda_l1: Vec<f64>,
    pub lambda_l2: Vec<f64>,
    pub feature_fraction: Vec<f64>,
    pub bagging_fraction: Vec<f64>,
    pub bagging_freq: Vec<usize>,
    pub drop_rate: Vec<f64>,
    pub skip_drop: Vec<f64>,
    pub top_rate: Vec<f64>,
    pub other_rate: Vec<f64>,
    /// Deterministically subsample the product down to this many cells.
    pub max_cells: Option<usize>,
}

/// One grid coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridValue {
    Int(usize),
    Float(f64),
}

impl fmt::Display for GridValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridValue::Int(v) => write!(f, "{v}"),
            // Rust's shortest-roundtrip float formatting keeps the cell
            // readable while still parsing back to the identical value.
            GridValue::Float(v) => write!(f, "{v}"),
        }
    }
}

fn apply(cfg: &mut BoostConfig, name: &str, value: GridValue) {
    match (name, value) {
        ("n_estimators", GridValue::Int(v)) => cfg.n_estimators = v,
        ("learning_rate", GridValue::Float(v)) => cfg.learning_rate = v,
        ("min_data_in_leaf", GridValue::Int(v)) => cfg.min_data_in_leaf = v,
        ("lambda_l1", GridValue::Float(v)) => cfg.lambda_l1 = v,
        ("lambda_l2", GridValue::Float(v)) => cfg.lambda_l2 = v,
        ("feature_fraction", GridValue::Float(v)) => cfg.feature_fraction = v,
        ("bagging_fraction", GridValue::Float(v)) => cfg.bagging_fraction = v,
        ("bagging_freq", GridValue::Int(v)) => cfg.bagging_freq = v,
        ("drop_rate", GridValue::Float(v)) => cfg.drop_rate = v,
        ("skip_drop", GridValue::Float(v)) => cfg.skip_drop = v,
        ("top_rate", GridValue::Float(v)) => cfg.top_rate = v,
        ("other_rate", GridValue::Float(v)) => cfg.other_rate = v,
        _ => unreachable!("axis names and value kinds are fixed at construction"),
    }
}

impl SweepSpec {
    /// Non-empty grids in declared order.
    pub fn axes(&self) -> Vec<(&'static str, Vec<GridValue>)> {
        fn ints(values: &[usize]) -> Vec<GridValue> {
            values.iter().map(|&v| GridValue::Int(v)).collect()
        }
        fn floats(values: &[f64]) -> Vec<GridValue> {
            values.iter().map(|&v| GridValue::Float(v)).collect()
        }
        let all: [(&'static str, Vec<GridValue>); 12] = [
            ("n_estimators", ints(&self.n_estimators)),
            ("learning_rate", floats(&self.learning_rate)),
            ("min_data_in_leaf", ints(&self.min_data_in_leaf)),
            ("lambda_l1", floats(&self.lambda_l1)),
            ("lambda_l2", floats(&self.lambda_l2)),
            ("feature_fraction", floats(&self.feature_fraction)),
            ("bagging_fraction", floats(&self.bagging_fraction)),
            ("bagging_freq", ints(&self.bagging_freq)),
            ("drop_rate", floats(&self.drop_rate)),
            ("skip_drop", floats(&self.skip_drop)),
            ("top_rate", floats(&self.top_rate)),
            ("other_rate", floats(&self.other_rate)),
        ];
        all.into_iter().filter(|(_, values)| !values.is_empty()).collect()
    }

    pub fn validate(&self, models: &[ModelConfig]) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.target_model(models)?;

        let int_bounds: [(&str, &[usize], usize, usize); 3] = [
            ("n_estimators", &self.n_estimators, 50, 1000),
            ("min_data_in_leaf", &self.min_data_in_leaf, 2500, 40_000),
            ("bagging_freq", &self.bagging_freq, 10, 50),
        ];
        for (name, values, low, high) in int_bounds {
            for &v in values {
                if v < low || v > high {
                    return bad(format!("sweep {name} value {v} outside [{low}, {high}]"));
                }
            }
        }
        let float_bounds: [(&str, &[f64], f64, f64); 9] = [
            ("learning_rate", &self.learning_rate, 0.005, 0.1),
            ("lambda_l1", &self.lambda_l1, 0.01, 1.0),
            ("lambda_l2", &self.lambda_l2, 0.01, 1.0),
            ("feature_fraction", &self.feature_fraction, 0.1, 1.0),
            ("bagging_fraction", &self.bagging_fraction, 0.5, 1.0),
            ("drop_rate", &self.drop_rate, 0.1, 0.5),
            ("skip_drop", &self.skip_drop, 0.1, 0.8),
            ("top_rate", &self.top_rate, 0.1, 0.4),
            ("other_rate", &self.other_rate, 0.05, 0.2),
        ];
        for (name, values, low, high) in float_bounds {
            for &v in values {
                if !v.is_finite() || v < low || v > high {
                    return bad(format!("sweep {name} value {v} outside [{low}, {high}]"));
                }
            }
        }

        if self.axes().is_empty() {
            return bad("sweep needs at least one non-empty grid".into());
        }
        if self.max_cells == Some(0) {
            return bad("max_cells must be at least 1".into());
        }
        Ok(())
    }

    /// The model whose hyperparameters the sweep varies.
    pub fn target_model<'m>(&self, models: &'m [ModelConfig]) -> Result<&'m ModelConfig> {
        let model = match &self.model {
            Some(name) => models.iter().find(|m| &m.name == name).ok_or_else(|| {
                Error::Config(format!("sweep references unknown model {name:?}"))
            })?,
            None => models
                .iter()
                .find(|m| m.kind == ModelKind::Boost)
                .ok_or_else(|| Error::Config("sweep needs a boosted model".into()))?,
        };
        if model.kind != ModelKind::Boost {
            return Err(Error::Config(format!(
                "sweep model {:?} is not a boosted model",
                model.name
            )));
        }
        Ok(model)
    }

    /// All grid cells in row-major order (first axis slowest), after the
    /// optional deterministic subsample. Each cell pairs axis names with
    /// the chosen values.
    pub fn cells(&self, master_seed: u64) -> Vec<(usize, Vec<(&'static str, GridValue)>)> {
        let axes = self.axes();
        let total: usize = axes.iter().map(|(_, v)| v.len()).product();
        let mut keep: Vec<usize> = (0..total).collect();
        if let Some(cap) = self.max_cells {
            if cap < total {
                let mut rng = sub_rng(master_seed, "sweep-subsample", 0);
                let mut drawn: Vec<usize> =
                    rand::seq::index::sample(&mut rng, total, cap).into_iter().collect();
                drawn.sort_unstable();
                keep = drawn;
            }
        }
        keep.into_iter()
            .map(|cell| {
                let mut remainder = cell;
                let mut stride: usize = axes.iter().map(|(_, v)| v.len()).product();
                let mut values = Vec::with_capacity(axes.len());
                for (name, axis) in &axes {
                    stride /= axis.len();
                    let pick = remainder / stride;
                    remainder %= stride;
                    values.push((*name, axis[pick]));
                }
                (cell, values)
            })
            .collect()
    }
}

/// One evaluated sweep cell.
#[derive(Debug, Clone)]
pub struct SweepRow {
    /// Index of the cell in the full grid, before subsampling.
    pub cell: usize,
    pub values: Vec<(&'static str, GridValue)>,
    pub mean: f64,
    pub volatility: f64,
    pub sharpe: f64,
}

/// Runs the grid, ranks cells by validation Sharpe (descending, ties by
/// cell index), writes `sweep.csv` into the output directory and returns
/// the rows in ranked order.
pub fn run_sweep(config: &RunConfig) -> Result<(PathBuf, Vec<SweepRow>)> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [sweep] section".into()))?;
    let base = sweep.target_model(&config.models)?.boost.clone();
    let target = config.main_target().to_string();

    let panel = load_panel(config)?;
    let engineered = engineer(config, &panel)?;
    let spec = resolve_split(config, &engineered)?;
    let (train, validation, _) = make_split(&engineered, &spec)?;

    let cells = sweep.cells(config.seed);
    let mut rows: Vec<SweepRow> = cells
        .into_par_iter()
        .map(|(cell, values)| -> Result<SweepRow> {
            let mut cfg = base.clone();
            for &(name, value) in &values {
                apply(&mut cfg, name, value);
            }
            cfg.seed = sub_seed(config.seed, "sweep-cell", cell as u64);
            cfg.validate()?;

            let booster = Booster::train(&train, &target, &cfg, Some(&validation))?;
            let series = validation_series(&booster, &validation, &target)?;
            let summary = summarize(&series)?;
            Ok(SweepRow {
                cell,
                values,
                mean: summary.mean,
                volatility: summary.volatility,
                sharpe: summary.sharpe,
            })
        })
        .collect::<Result<_>>()?;

    rows.sort_by(|a, b| {
        b.sharpe
            .partial_cmp(&a.sharpe)
            .expect("summarize yields finite sharpe")
            .then(a.cell.cmp(&b.cell))
    });

    std::fs::create_dir_all(&config.output.dir)?;
    let path = config.output.dir.join("sweep.csv");
    let mut out = BufWriter::new(File::create(&path)?);
    let axis_names: Vec<&str> = sweep.axes().iter().map(|(n, _)| *n).collect();
    writeln!(out, "cell,{},mean,volatility,sharpe", axis_names.join(","))?;
    for row in &rows {
        let values: Vec<String> = row.values.iter().map(|(_, v)| v.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{}",
            row.cell,
            values.join(","),
            fmt_sig17(row.mean),
            fmt_sig17(row.volatility),
            fmt_sig17(row.sharpe)
        )?;
    }
    out.flush()?;
    Ok((path, rows))
}

/// Per-era validation Corr of one fitted booster. Eras with undefined
/// correlation are skipped.
pub fn validation_series(
    booster: &Booster,
    validation: &PanelSet,
    target: &str,
) -> Result<CorrSeries> {
    let mut pairs = Vec::with_capacity(validation.eras().len());
    for era in validation.eras() {
        let scores = booster.predict(era, 0)?;
        let t = era
            .target(target)
            .ok_or_else(|| Error::Data(format!("era {} lacks target {target:?}", era.era())))?;
        match era_corr(&scores, t) {
            Ok(c) => pairs.push((era.era(), c)),
            Err(Error::UndefinedCorrelation(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    CorrSeries::from_pairs(pairs)
}
