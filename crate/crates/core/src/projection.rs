//! Linear feature neutralization with fixed or rolling-stat feature sets.
//!
//! Projection removes from a score vector the part explainable by a chosen
//! era feature submatrix: `y_hat = y - beta * P y`, with `P` the orthogonal
//! projector onto the submatrix column space (rank-revealing SVD, singular
//! values under `1e-10 * sigma_max` treated as zero) and `beta` the
//! neutralization strength. Scoring the projected vector gives the
//! feature-neutral Corr.
//!
//! The projected set is either a fixed feature-name list or is re-picked
//! every era from rolling per-feature statistics: the mean and population
//! std of each feature's per-era Corr with the target over a trailing
//! window that ends `lag` eras back, so stats never touch eras whose
//! targets were not yet observable. During warm-up, before any lagged
//! history exists, scores pass through unprojected and the caller is told.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{era_corr, feature_corr};
use crate::panel::{EraId, PanelEra, PanelSet};

/// Default trailing window (eras) for the rolling feature statistics.
pub const DEFAULT_PROJECTION_WINDOW: usize = 52;
/// Default reporting lag (eras) between a scored era and its availability.
pub const DEFAULT_PROJECTION_LAG: u32 = 6;
/// Relative singular-value cutoff of the rank-revealing projector.
pub const RANK_RTOL: f64 = 1e-10;

/// How the projected feature subset is chosen each era.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    /// A caller-supplied fixed feature list (static neutralization).
    Fixed,
    /// The k features with the smallest rolling mean Corr.
    LowMean,
    /// The k features with the largest rolling mean Corr.
    HighMean,
    /// The k features whose Corr varied least.
    LowVol,
    /// The k features whose Corr varied most.
    HighVol,
}

/// Feature-set selection rule for [`dynamic_project`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionRule {
    pub kind: ProjectionKind,
    /// Subset size; 0 means a third of the feature count (at least 1).
    pub k: usize,
    /// Feature names to project out; required when `kind` is `fixed`.
    pub fixed_set: Vec<String>,
    pub window: usize,
    pub lag: u32,
}

impl Default for ProjectionRule {
    fn default() -> Self {
        ProjectionRule {
            kind: ProjectionKind::LowMean,
            k: 0,
            fixed_set: Vec::new(),
            window: DEFAULT_PROJECTION_WINDOW,
            lag: DEFAULT_PROJECTION_LAG,
        }
    }
}

impl ProjectionRule {
    /// Subset size against a concrete feature count.
    pub fn resolved_k(&self, n_features: usize) -> usize {
        if self.k == 0 {
            (n_features / 3).max(1)
        } else {
            self.k
        }
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("projection window must be at least 1".into()));
        }
        if self.kind == ProjectionKind::Fixed {
            if self.fixed_set.is_empty() {
                return Err(Error::Config(
                    "fixed projection needs a non-empty fixed_set".into(),
                ));
            }
        } else if self.resolved_k(n_features) > n_features {
            return Err(Error::Config(format!(
                "projection k {} exceeds the {n_features} available features",
                self.resolved_k(n_features)
            )));
        }
        Ok(())
    }
}

/// Projects `beta * (component of y in the column space)` out of `y`.
/// `columns` holds the k columns of the era feature submatrix, each aligned
/// with `y`. An empty or all-zero submatrix leaves `y` unchanged.
pub fn project_linear(y: &[f64], columns: &[Vec<f64>], beta: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta {beta} outside [0, 1]")));
    }
    let n = y.len();
    for column in columns {
        if column.len() != n {
            return Err(Error::Shape(format!(
                "projection column of length {} against {n} scores",
                column.len()
            )));
        }
    }
    if y.iter().chain(columns.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in projection input".into()));
    }
    if columns.is_empty() || n == 0 {
        return Ok(y.to_vec());
    }

    let x = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    let svd = x.svd(true, false);
    let u = svd.u.expect("left singular vectors were requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = RANK_RTOL * sigma_max;

    let yv = DVector::from_column_slice(y);
    let mut projected = DVector::zeros(n);
    for (i, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma > cutoff {
            let ui = u.column(i);
            let coefficient = ui.dot(&yv);
            projected.axpy(coefficient, &ui, 1.0);
        }
    }
    Ok((0..n).map(|i| y[i] - beta * projected[i]).collect())
}

/// Feature-neutral Corr: era Corr of already-projected scores.
pub fn fnc(projected_scores: &[f64], target: &[f64]) -> Result<f64> {
    era_corr(projected_scores, target)
}

/// Rolling per-feature Corr statistics available at one era.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCorrStats {
    /// The era these stats serve (stats cover eras `<= era - lag`).
    pub era: EraId,
    /// Rolling mean of per-era Corr, one entry per panel feature.
    pub means: Vec<f64>,
    /// Rolling population std of per-era Corr, aligned with `means`.
    pub stds: Vec<f64>,
    /// How many scored eras entered the window.
    pub n_eras: usize,
}

/// Computes per-feature rolling Corr statistics for `era` from the trailing
/// `window` scored eras ending at `era - lag`. Eras without the target or
/// with a degenerate (constant) target are skipped; if none remain the
/// history is not ready yet.
pub fn feature_corr_stats(
    panel: &PanelSet,
    target: &str,
    era: EraId,
    window: usize,
    lag: u32,
) -> Result<FeatureCorrStats> {
    if window == 0 {
        return Err(Error::Config("projection window must be at least 1".into()));
    }
    let last = era.minus(lag);
    if last.get() == 0 {
        return Err(Error::NotReady(format!(
            "era {era} has no scored history at lag {lag}"
        )));
    }
    let first = last.get().saturating_sub(window as u32 - 1).max(1);

    let in_window: Vec<&PanelEra> = panel
        .eras_up_to(last)
        .iter()
        .filter(|e| e.era().get() >= first)
        .collect();
    let per_era: Vec<Option<Vec<f64>>> = in_window
        .par_iter()
        .map(|e| -> Result<Option<Vec<f64>>> {
            let Some(t) = e.target(target) else {
                return Ok(None);
            };
            let mut corrs = Vec::with_capacity(e.features().n_cols());
            for col in 0..e.features().n_cols() {
                match feature_corr(e.features().column(col), t) {
                    Ok(c) => corrs.push(c),
                    Err(Error::UndefinedCorrelation(_)) => return Ok(None),
                    Err(other) => return Err(other),
                }
            }
            Ok(Some(corrs))
        })
        .collect::<Result<_>>()?;

    let scored: Vec<&Vec<f64>> = per_era.iter().flatten().collect();
    if scored.is_empty() {
        return Err(Error::NotReady(format!(
            "no scored eras in the {window}-era window ending at era {last}"
        )));
    }

    let m = panel.n_features();
    let n = scored.len() as f64;
    let mut means = vec![0.0; m];
    let mut stds = vec![0.0; m];
    for f in 0..m {
        let mean = scored.iter().map(|c| c[f]).sum::<f64>() / n;
        let var = scored.iter().map(|c| (c[f] - mean) * (c[f] - mean)).sum::<f64>() / n;
        means[f] = mean;
        stds[f] = var.sqrt();
    }
    Ok(FeatureCorrStats { era, means, stds, n_eras: scored.len() })
}

/// Picks the projected feature names for one era: the fixed list, or the k
/// extreme features under the rule's statistic. Ties break by feature name.
pub fn select_projection_set(
    feature_names: &[String],
    stats: &FeatureCorrStats,
    rule: &ProjectionRule,
) -> Result<Vec<String>> {
    rule.validate(feature_names.len())?;
    if rule.kind == ProjectionKind::Fixed {
        for name in &rule.fixed_set {
            if !feature_names.contains(name) {
                return Err(Error::Config(format!(
                    "fixed projection feature {name:?} is not in the panel"
                )));
            }
        }
        return Ok(rule.fixed_set.clone());
    }
    if stats.means.len() != feature_names.len() {
        return Err(Error::Shape(format!(
            "stats cover {} features, panel has {}",
            stats.means.len(),
            feature_names.len()
        )));
    }

    let (values, ascending): (&[f64], bool) = match rule.kind {
        ProjectionKind::LowMean => (&stats.means, true),
        ProjectionKind::HighMean => (&stats.means, false),
        ProjectionKind::LowVol => (&stats.stds, true),
        ProjectionKind::HighVol => (&stats.stds, false),
        ProjectionKind::Fixed => unreachable!("handled above"),
    };
    let mut order: Vec<usize> = (0..feature_names.len()).collect();
    order.sort_by(|&a, &b| {
        let primary = values[a].partial_cmp(&values[b]).expect("finite corr stats");
        let primary = if ascending { primary } else { primary.reverse() };
        primary.then_with(|| feature_names[a].cmp(&feature_names[b]))
    });
    Ok(order[..rule.resolved_k(feature_names.len())]
        .iter()
        .map(|&i| feature_names[i].clone())
        .collect())
}

/// Projects one era's scores using the rule's feature set. Returns the
/// scores and whether projection actually ran: with no stats yet (warm-up)
/// and a non-fixed rule, `y` passes through unchanged and the flag is
/// false.
pub fn dynamic_project(
    y: &[f64],
    era: &PanelEra,
    feature_names: &[String],
    rule: &ProjectionRule,
    stats: Option<&FeatureCorrStats>,
    beta: f64,
) -> Result<(Vec<f64>, bool)> {
    rule.validate(feature_names.len())?;
    let selected = match (rule.kind, stats) {
        (ProjectionKind::Fixed, _) => select_projection_set(
            feature_names,
            &FeatureCorrStats { era: era.era(), means: Vec::new(), stds: Vec::new(), n_eras: 0 },
            rule,
        )?,
        (_, Some(stats)) => select_projection_set(feature_names, stats, rule)?,
        (_, None) => return Ok((y.to_vec(), false)),
    };

    let mut columns = Vec::with_capacity(selected.len());
    for name in &selected {
        let idx = feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("unknown projection feature {name:?}")))?;
        columns.push(era.features().column(idx).iter().map(|&v| f64::from(v)).collect());
    }
    Ok((project_linear(y, &columns, beta)?, true))
}
