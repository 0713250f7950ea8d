//! Per-era scoring and series summaries.
//!
//! The unit of performance is `Corr`: the Pearson correlation between
//! rank-normalized prediction scores and the raw binned target of one era.
//! Rank normalization uses average ranks for ties and maps rank `r` of `N`
//! to `(r - 0.5) / N`, so scores only matter through their ordering.
//!
//! A backtest produces a [`CorrSeries`] (one Corr per scored era), which
//! [`summarize`] reduces to mean, volatility (population standard deviation),
//! maximum drawdown of the cumulative sum, and the derived Sharpe and Calmar
//! ratios.
//!
//! Market regimes are derived from the series of a fixed factor-momentum
//! baseline ([`nmi_series`]): its 52-week rolling volatility ([`nrvix`])
//! splits eras into high- and low-volatility regimes at a fixed threshold,
//! and [`regime_report`] summarizes a prediction series on each regime
//! subset separately.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model;
use crate::panel::{EraId, PanelSet};

/// Regime threshold on the baseline's rolling volatility; values strictly
/// above it are the high-volatility regime.
pub const DEFAULT_REGIME_THRESHOLD: f64 = 0.025;

/// Window length, in eras, of the rolling volatility behind the regimes.
pub const DEFAULT_REGIME_WINDOW: usize = 52;

/// Ordered per-era correlation values, each within `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrSeries {
    pairs: Vec<(EraId, f64)>,
}

impl CorrSeries {
    pub fn from_pairs(pairs: Vec<(EraId, f64)>) -> Result<Self> {
        for pair in pairs.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(Error::Data(format!(
                    "corr series eras must strictly increase, found {} then {}",
                    pair[0].0, pair[1].0
                )));
            }
        }
        for &(era, v) in &pairs {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(Error::Data(format!(
                    "corr {v} at era {era} is outside [-1, 1]"
                )));
            }
        }
        Ok(CorrSeries { pairs })
    }

    /// Convenience constructor over consecutive eras starting at `start`.
    pub fn from_values(start: EraId, values: &[f64]) -> Result<Self> {
        Self::from_pairs(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| (start.plus(i as u32), v))
                .collect(),
        )
    }

    pub fn pairs(&self) -> &[(EraId, f64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.pairs.iter().map(|&(_, v)| v)
    }

    /// The sub-series on the given eras.
    pub fn subset(&self, keep: impl Fn(EraId) -> bool) -> CorrSeries {
        CorrSeries {
            pairs: self
                .pairs
                .iter()
                .filter(|&&(era, _)| keep(era))
                .copied()
                .collect(),
        }
    }
}

/// Average ranks (1-based, ties averaged) mapped to `(r - 0.5) / N`.
fn rank_normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));

    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Rows order[i..j] are tied; their 1-based ranks run i+1 ..= j.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let normalized = (avg_rank - 0.5) / n as f64;
        for &row in &order[i..j] {
            out[row] = normalized;
        }
        i = j;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("scores are constant".into()));
    }
    if syy == 0.0 {
        return Err(Error::UndefinedCorrelation("target is constant".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Corr of one era: Pearson correlation between rank-normalized scores and
/// the raw target values. Both sides need at least two rows and some
/// variation; the result is clamped to `[-1, 1]` against rounding spill.
pub fn era_corr(scores: &[f64], target: &[f64]) -> Result<f64> {
    if scores.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} scores against {} target values",
            scores.len(),
            target.len()
        )));
    }
    if scores.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: scores.len(),
        });
    }
    if let Some(v) = scores.iter().chain(target).find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite value {v} in scoring input")));
    }
    Ok(pearson(&rank_normalize(scores), target)?.clamp(-1.0, 1.0))
}

/// Corr of a raw feature column against the target. A constant column has no
/// ordering information and scores exactly 0 instead of erroring; this keeps
/// rolling per-feature statistics total.
pub(crate) fn feature_corr(column: &[i8], target: &[f64]) -> Result<f64> {
    let first = match column.first() {
        Some(&v) => v,
        None => return Err(Error::TooShort { needed: 2, got: 0 }),
    };
    if column.iter().all(|&v| v == first) {
        return Ok(0.0);
    }
    let as_scores: Vec<f64> = column.iter().map(|&v| f64::from(v)).collect();
    era_corr(&as_scores, target)
}

/// Summary of a per-era Corr series.
///
/// `calmar` is `+inf` when the series never draws down; `sharpe` cannot be
/// formed at zero volatility and summarizing such a series is an error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryMetrics {
    pub mean: f64,
    pub volatility: f64,
    pub max_drawdown: f64,
    pub sharpe: f64,
    pub calmar: f64,
}

impl SummaryMetrics {
    /// Builds the ratio metrics from already-computed moments.
    pub fn from_moments(mean: f64, volatility: f64, max_drawdown: f64) -> Result<Self> {
        if volatility == 0.0 {
            return Err(Error::Data(
                "sharpe is undefined: series volatility is zero".into(),
            ));
        }
        let calmar = if max_drawdown == 0.0 {
            f64::INFINITY
        } else {
            mean / max_drawdown
        };
        Ok(SummaryMetrics {
            mean,
            volatility,
            max_drawdown,
            sharpe: mean / volatility,
            calmar,
        })
    }
}

/// Maximum drawdown of the cumulative sum path of `values`.
///
/// The path starts at 0 before the first value, so an initial decline counts
/// as a drawdown from that starting point.
pub fn max_drawdown(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut cum = 0.0;
    let mut peak = 0.0f64;
    let mut worst = 0.0f64;
    for v in values {
        cum += v;
        peak = peak.max(cum);
        worst = worst.max(peak - cum);
    }
    worst
}

/// Mean, population-standard-deviation volatility, max drawdown and the
/// Sharpe/Calmar ratios of a Corr series (at least two entries).
pub fn summarize(series: &CorrSeries) -> Result<SummaryMetrics> {
    if series.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: series.len(),
        });
    }
    let n = series.len() as f64;
    let mean = series.values().sum::<f64>() / n;
    let var = series.values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    SummaryMetrics::from_moments(mean, var.sqrt(), max_drawdown(series.values()))
}

/// Per-era Corr of the fixed factor-momentum baseline over a whole panel; a
/// market meta index tracking how well recent factor direction carries over.
///
/// Eras are skipped when they lack the target, when no lagged scored history
/// exists yet, or when the baseline degenerates to a constant (every feature
/// sign zero); the series simply has no entry there.
pub fn nmi_series(panel: &PanelSet, target: &str) -> Result<CorrSeries> {
    let corrs = era_feature_corrs(panel, target)?;
    let mut pairs = Vec::new();
    for era in panel.eras() {
        let Some(own) = era.target(target) else {
            continue;
        };
        let signs = match model::momentum_signs_at(
            &corrs,
            era.era(),
            model::DEFAULT_MOMENTUM_WINDOW,
            model::DEFAULT_MOMENTUM_LAG,
        ) {
            Some(s) => s,
            None => continue,
        };
        let scores = model::signed_feature_sum(era, &signs);
        match era_corr(&scores, own) {
            Ok(c) => pairs.push((era.era(), c)),
            Err(Error::UndefinedCorrelation(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    CorrSeries::from_pairs(pairs)
}

/// Per-era, per-feature Corr values for a whole panel; `None` for eras
/// without the target. Shared by the baseline, the rolling feature
/// statistics and the panel-wide momentum signs.
pub(crate) struct EraFeatureCorrs {
    pub eras: Vec<EraId>,
    pub by_era: Vec<Option<Vec<f64>>>,
}

impl EraFeatureCorrs {
    /// Corr vectors of all scored eras with id <= `last`, oldest first.
    pub fn scored_up_to(&self, last: EraId) -> Vec<&Vec<f64>> {
        self.eras
            .iter()
            .zip(&self.by_era)
            .filter(|&(&e, _)| e <= last)
            .filter_map(|(_, c)| c.as_ref())
            .collect()
    }
}

pub(crate) fn era_feature_corrs(panel: &PanelSet, target: &str) -> Result<EraFeatureCorrs> {
    let by_era: Vec<Option<Vec<f64>>> = panel
        .eras()
        .par_iter()
        .map(|era| -> Result<Option<Vec<f64>>> {
            let Some(t) = era.target(target) else {
                return Ok(None);
            };
            let mut corrs = Vec::with_capacity(era.features().n_cols());
            for col in 0..era.features().n_cols() {
                corrs.push(feature_corr(era.features().column(col), t)?);
            }
            Ok(Some(corrs))
        })
        .collect::<Result<_>>()?;
    Ok(EraFeatureCorrs {
        eras: panel.eras().iter().map(|e| e.era()).collect(),
        by_era,
    })
}

/// Rolling population standard deviation over the trailing `window` values
/// of the baseline series; `None` until `window` values have accumulated.
pub fn nrvix(nmi: &CorrSeries, window: usize) -> Vec<(EraId, Option<f64>)> {
    let pairs = nmi.pairs();
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(era, _))| {
            if i + 1 < window {
                return (era, None);
            }
            let tail = &pairs[i + 1 - window..=i];
            let n = tail.len() as f64;
            let mean = tail.iter().map(|&(_, v)| v).sum::<f64>() / n;
            let var = tail
                .iter()
                .map(|&(_, v)| (v - mean) * (v - mean))
                .sum::<f64>()
                / n;
            (era, Some(var.sqrt()))
        })
        .collect()
}

/// Market regime of one era, from the baseline's rolling volatility.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeLabel {
    /// Rolling volatility strictly above the threshold.
    High,
    /// Rolling volatility at or below the threshold.
    Low,
    /// Not enough history for the rolling volatility.
    Undefined,
}

impl fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegimeLabel::High => "high",
            RegimeLabel::Low => "low",
            RegimeLabel::Undefined => "undefined",
        })
    }
}

pub fn classify_regime(rolling_vol: Option<f64>, threshold: f64) -> RegimeLabel {
    match rolling_vol {
        None => RegimeLabel::Undefined,
        Some(v) if v > threshold => RegimeLabel::High,
        Some(_) => RegimeLabel::Low,
    }
}

/// Which subset of eras a summary row covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RegimeScope {
    All,
    High,
    Low,
}

impl fmt::Display for RegimeScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegimeScope::All => "all",
            RegimeScope::High => "high",
            RegimeScope::Low => "low",
        })
    }
}

/// Summarizes a Corr series on all eras and on the high/low regime subsets.
///
/// Every series era must have a label. Drawdowns are computed within each
/// subset's own cumulative path. Subsets with fewer than two eras have no
/// meaningful volatility and are omitted from the report; the full series
/// itself must be summarizable.
pub fn regime_report(
    series: &CorrSeries,
    labels: &BTreeMap<EraId, RegimeLabel>,
) -> Result<Vec<(RegimeScope, SummaryMetrics)>> {
    for &(era, _) in series.pairs() {
        if !labels.contains_key(&era) {
            return Err(Error::Data(format!("era {era} has no regime label")));
        }
    }
    let mut out = vec![(RegimeScope::All, summarize(series)?)];
    for (scope, label) in [
        (RegimeScope::High, RegimeLabel::High),
        (RegimeScope::Low, RegimeLabel::Low),
    ] {
        let sub = series.subset(|era| labels[&era] == label);
        if sub.len() >= 2 {
            out.push((scope, summarize(&sub)?));
        }
    }
    Ok(out)
}
