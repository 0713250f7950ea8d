//! Panel CSV formats and the synthetic panel generator.
//!
//! Panel files are plain UTF-8 CSV with `\n` line endings and `.` decimal
//! separators: a header `era,id,f_<name>,...,t_<name>,...` followed by one
//! row per stock. Feature cells are centered integer bins; target cells hold
//! one of the five centered levels, or are empty for eras whose targets are
//! not known yet (per era and target it is all or nothing). Rows may arrive
//! in any era order; reading re-groups and sorts them.
//!
//! Prediction files are `era,id,score` with scores printed to 17 significant
//! digits, enough for any reader to reconstruct the exact doubles.
//!
//! The generator draws a latent-factor panel: per era, every stock gets
//! standard-normal factor exposures; features are per-era quantile-binned
//! noisy linear views of those exposures (the first `n_factors` features are
//! direct views of one factor each, the rest use random fixed loadings); the
//! raw return is `exposures . weights + noise` under the regime phase active
//! that era, and the target bins the per-era return ranking. All randomness
//! comes from per-era named sub-streams of the config seed, so output is
//! reproducible row for row regardless of thread count.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{
    feature_bound, EraId, FeatureMatrix, PanelEra, PanelSet, TARGET_LEVELS,
};
use crate::rng::sub_rng;

/// Formats a finite double with exactly 17 significant digits in plain
/// positional notation, the shortest length that survives any correct
/// parse-print round trip.
pub fn fmt_sig17(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".to_string()
        } else if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let sci = format!("{:.16e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent in scientific form");
    let exp: i32 = exp.parse().expect("numeric exponent");
    let neg = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    debug_assert_eq!(digits.len(), 17);

    // The value is 0.<digits> * 10^(exp + 1); `point` counts how many of the
    // digits sit left of the decimal point.
    let point = exp + 1;
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if point <= 0 {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-point) as usize));
        out.push_str(&digits);
    } else if point as usize >= digits.len() {
        out.push_str(&digits);
        out.extend(std::iter::repeat_n('0', point as usize - digits.len()));
    } else {
        out.push_str(&digits[..point as usize]);
        out.push('.');
        out.push_str(&digits[point as usize..]);
    }
    out
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, csv::Position::line);
    parse_err(line, e.to_string())
}

/// Reads a panel CSV. Rows are grouped by era and eras sorted ascending; row
/// order within an era follows the file.
pub fn read_panel_csv(path: impl AsRef<Path>) -> Result<PanelSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;

    let headers = reader.headers().map_err(csv_err)?.clone();
    let mut fields = headers.iter();
    if fields.next() != Some("era") || fields.next() != Some("id") {
        return Err(parse_err(1, "header must start with era,id"));
    }
    let mut feature_names: Vec<String> = Vec::new();
    let mut target_names: Vec<String> = Vec::new();
    for name in fields {
        if let Some(feature) = name.strip_prefix("f_") {
            if !target_names.is_empty() {
                return Err(parse_err(
                    1,
                    format!("feature column {name} appears after target columns"),
                ));
            }
            feature_names.push(feature.to_string());
        } else if let Some(target) = name.strip_prefix("t_") {
            target_names.push(target.to_string());
        } else {
            return Err(parse_err(
                1,
                format!("column {name} is neither era, id, f_<name> nor t_<name>"),
            ));
        }
    }

    enum TargetState {
        Absent,
        Present(Vec<f64>),
    }
    struct EraAccum {
        ids: Vec<String>,
        seen: HashSet<String>,
        columns: Vec<Vec<i8>>,
        targets: Vec<TargetState>,
    }

    let mut eras: BTreeMap<u32, EraAccum> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, csv::Position::line);
        if record.len() != 2 + feature_names.len() + target_names.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, got {}", 2 + feature_names.len() + target_names.len(), record.len()),
            ));
        }

        let era: u32 = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("bad era {:?}", &record[0])))?;
        if era == 0 {
            return Err(parse_err(line, "era ids start at 1"));
        }
        let id = record[1].to_string();

        let accum = eras.entry(era).or_insert_with(|| EraAccum {
            ids: Vec::new(),
            seen: HashSet::new(),
            columns: vec![Vec::new(); feature_names.len()],
            targets: Vec::new(),
        });
        if !accum.seen.insert(id.clone()) {
            return Err(parse_err(line, format!("duplicate id {id:?} in era {era}")));
        }
        let row_in_era = accum.ids.len();
        accum.ids.push(id);

        for (col, name) in feature_names.iter().enumerate() {
            let raw = &record[2 + col];
            let v: i8 = raw
                .parse()
                .map_err(|_| parse_err(line, format!("feature f_{name} value {raw:?} is not an integer")))?;
            let bound = feature_bound(name);
            if v < -bound || v > bound {
                return Err(parse_err(
                    line,
                    format!("feature f_{name} value {v} outside -{bound}..={bound}"),
                ));
            }
            accum.columns[col].push(v);
        }

        for (t, name) in target_names.iter().enumerate() {
            let raw = &record[2 + feature_names.len() + t];
            let parsed = if raw.is_empty() {
                None
            } else {
                let v: f64 = raw.parse().map_err(|_| {
                    parse_err(line, format!("target t_{name} value {raw:?} is not a number"))
                })?;
                if !TARGET_LEVELS.contains(&v) {
                    return Err(parse_err(
                        line,
                        format!("target t_{name} value {v} is not one of the five levels"),
                    ));
                }
                Some(v)
            };
            if row_in_era == 0 {
                accum.targets.push(match parsed {
                    Some(v) => TargetState::Present(vec![v]),
                    None => TargetState::Absent,
                });
            } else {
                match (&mut accum.targets[t], parsed) {
                    (TargetState::Present(values), Some(v)) => values.push(v),
                    (TargetState::Absent, None) => {}
                    _ => {
                        return Err(parse_err(
                            line,
                            format!("target t_{name} of era {era} is only partially filled"),
                        ))
                    }
                }
            }
        }
    }

    let built: Vec<PanelEra> = eras
        .into_iter()
        .map(|(era, accum)| {
            let mut targets = BTreeMap::new();
            for (state, name) in accum.targets.into_iter().zip(&target_names) {
                if let TargetState::Present(values) = state {
                    targets.insert(name.clone(), values);
                }
            }
            PanelEra::new(
                EraId::new(era),
                accum.ids,
                FeatureMatrix::from_columns(accum.columns)?,
                targets,
            )
        })
        .collect::<Result<_>>()?;

    PanelSet::new(feature_names, built)
}

fn display_target(v: f64) -> String {
    // The five levels all have short exact decimal forms.
    format!("{v}")
}

/// Writes a panel CSV (the inverse of [`read_panel_csv`]). Target columns
/// are the union of target names across eras, sorted; eras lacking one get
/// empty cells.
pub fn write_panel_csv(panel: &PanelSet, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);

    let target_names: BTreeSet<&str> = panel
        .eras()
        .iter()
        .flat_map(PanelEra::target_names)
        .collect();

    write!(out, "era,id")?;
    for name in panel.feature_names() {
        write!(out, ",f_{name}")?;
    }
    for name in &target_names {
        write!(out, ",t_{name}")?;
    }
    writeln!(out)?;

    for era in panel.eras() {
        let targets: Vec<Option<&[f64]>> =
            target_names.iter().map(|name| era.target(name)).collect();
        for row in 0..era.n_rows() {
            write!(out, "{},{}", era.era(), era.ids()[row])?;
            for col in 0..era.features().n_cols() {
                write!(out, ",{}", era.features().get(row, col))?;
            }
            for values in &targets {
                match values {
                    Some(v) => write!(out, ",{}", display_target(v[row]))?,
                    None => write!(out, ",")?,
                }
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One scored stock for the prediction CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub era: EraId,
    pub id: String,
    pub score: f64,
}

/// Writes `era,id,score` rows sorted by `(era, id)`, scores at 17
/// significant digits.
pub fn write_predictions_csv(rows: &[PredictionRow], path: impl AsRef<Path>) -> Result<()> {
    let mut sorted: Vec<&PredictionRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (a.era, &a.id).cmp(&(b.era, &b.id)));

    let mut out = BufWriter::new(File::create(path.as_ref())?);
    writeln!(out, "era,id,score")?;
    for row in sorted {
        writeln!(out, "{},{},{}", row.era, row.id, fmt_sig17(row.score))?;
    }
    out.flush()?;
    Ok(())
}

/// One phase of the generator's regime schedule, active from `start_era`
/// until the next phase begins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimePhase {
    pub start_era: u32,
    /// Return loading of each latent factor; length `n_factors`.
    pub factor_weights: Vec<f64>,
    /// Scale of the idiosyncratic noise on both feature views and returns.
    pub noise_scale: f64,
}

/// Layout of a synthetic latent-factor panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_eras: u32,
    /// Inclusive `[low, high]` range the per-era stock count is drawn from.
    pub stocks_per_era: [usize; 2],
    pub n_factors: usize,
    pub n_features: usize,
    pub regimes: Vec<RegimePhase>,
    /// Share of stocks per target level, lowest return bucket first.
    pub target_bin_proportions: [f64; 5],
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_eras: 120,
            stocks_per_era: [150, 250],
            n_factors: 3,
            n_features: 20,
            regimes: vec![RegimePhase {
                start_era: 1,
                factor_weights: vec![1.0, 0.7, 0.4],
                noise_scale: 0.5,
            }],
            target_bin_proportions: [0.05, 0.20, 0.50, 0.20, 0.05],
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_eras == 0 {
            return bad("n_eras must be at least 1".into());
        }
        let [lo, hi] = self.stocks_per_era;
        if lo < 5 || hi < lo {
            return bad(format!("stocks_per_era {:?} must satisfy 5 <= low <= high", self.stocks_per_era));
        }
        if self.n_factors == 0 {
            return bad("n_factors must be at least 1".into());
        }
        if self.n_features < self.n_factors {
            return bad(format!(
                "n_features ({}) must be at least n_factors ({})",
                self.n_features, self.n_factors
            ));
        }
        if self.regimes.is_empty() {
            return bad("at least one regime phase is required".into());
        }
        for pair in self.regimes.windows(2) {
            if pair[0].start_era >= pair[1].start_era {
                return bad("regime phases must have strictly increasing start_era".into());
            }
        }
        if self.regimes[0].start_era != 1 {
            return bad("the first regime phase must start at era 1".into());
        }
        for (i, phase) in self.regimes.iter().enumerate() {
            if phase.factor_weights.len() != self.n_factors {
                return bad(format!(
                    "regime phase {i} has {} factor weights, expected {}",
                    phase.factor_weights.len(),
                    self.n_factors
                ));
            }
            if !phase.noise_scale.is_finite() || phase.noise_scale < 0.0 {
                return bad(format!(
                    "regime phase {i} needs a finite non-negative noise_scale"
                ));
            }
        }
        let sum: f64 = self.target_bin_proportions.iter().sum();
        if self.target_bin_proportions.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return bad("target_bin_proportions must be non-negative and sum to 1".into());
        }
        Ok(())
    }

    fn phase_at(&self, era: u32) -> &RegimePhase {
        self.regimes
            .iter()
            .rev()
            .find(|p| p.start_era <= era)
            .expect("validated schedule covers era 1 onwards")
    }
}

/// Splits `values` into ranked buckets with the given proportions (0 =
/// lowest values). Ties are broken by a seeded shuffle ahead of a stable
/// sort, so bucket membership is deterministic but unbiased.
fn quantile_bins(
    values: &[f64],
    proportions: &[f64],
    rng: &mut impl Rng,
) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));

    let mut out = vec![0usize; n];
    let mut cum = 0.0;
    let mut start = 0usize;
    for (bin, &p) in proportions.iter().enumerate() {
        cum += p;
        let end = if bin + 1 == proportions.len() {
            n
        } else {
            ((cum * n as f64).round() as usize).min(n)
        };
        for &row in &order[start..end.max(start)] {
            out[row] = bin;
        }
        start = end.max(start);
    }
    out
}

/// Generates a synthetic panel per `cfg`; the sole target is named `main`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<PanelSet> {
    cfg.validate()?;

    // Fixed feature definitions: the first n_factors features view one
    // factor each, the rest mix all factors with random loadings.
    let mut loadings: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_features);
    let mut loading_rng = sub_rng(cfg.seed, "feature-loadings", 0);
    for j in 0..cfg.n_features {
        let mut row = vec![0.0; cfg.n_factors];
        if j < cfg.n_factors {
            row[j] = 1.0;
        } else {
            for w in &mut row {
                *w = loading_rng.sample(StandardNormal);
            }
        }
        loadings.push(row);
    }

    let equal_fifths = [0.2; 5];
    let eras: Vec<PanelEra> = (1..=cfg.n_eras)
        .into_par_iter()
        .map(|era| {
            let phase = cfg.phase_at(era);
            let era64 = u64::from(era);
            let [lo, hi] = cfg.stocks_per_era;
            let n = sub_rng(cfg.seed, "stock-count", era64).random_range(lo..=hi);

            let mut expo_rng = sub_rng(cfg.seed, "exposures", era64);
            let exposures: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..cfg.n_factors).map(|_| expo_rng.sample(StandardNormal)).collect())
                .collect();

            let mut view_noise = sub_rng(cfg.seed, "feature-noise", era64);
            let mut tie_rng = sub_rng(cfg.seed, "feature-ties", era64);
            let mut columns = Vec::with_capacity(cfg.n_features);
            for loading in &loadings {
                let views: Vec<f64> = exposures
                    .iter()
                    .map(|x| {
                        let lin: f64 = x.iter().zip(loading).map(|(a, b)| a * b).sum();
                        let eps: f64 = view_noise.sample(StandardNormal);
                        lin + phase.noise_scale * eps
                    })
                    .collect();
                let bins = quantile_bins(&views, &equal_fifths, &mut tie_rng);
                columns.push(bins.into_iter().map(|b| b as i8 - 2).collect::<Vec<i8>>());
            }

            let mut ret_noise = sub_rng(cfg.seed, "return-noise", era64);
            let returns: Vec<f64> = exposures
                .iter()
                .map(|x| {
                    let lin: f64 = x.iter().zip(&phase.factor_weights).map(|(a, b)| a * b).sum();
                    let eps: f64 = ret_noise.sample(StandardNormal);
                    lin + phase.noise_scale * eps
                })
                .collect();
            let mut target_ties = sub_rng(cfg.seed, "target-ties", era64);
            let target: Vec<f64> = quantile_bins(&returns, &cfg.target_bin_proportions, &mut target_ties)
                .into_iter()
                .map(|b| b as f64 * 0.25 - 0.5)
                .collect();

            let ids = (0..n).map(|i| format!("e{era}_s{i:05}")).collect();
            PanelEra::new(
                EraId::new(era),
                ids,
                FeatureMatrix::from_columns(columns)?,
                BTreeMap::from([("main".to_string(), target)]),
            )
        })
        .collect::<Result<_>>()?;

    let names = (0..cfg.n_features).map(|j| format!("v{j:03}")).collect();
    PanelSet::new(names, eras)
}
