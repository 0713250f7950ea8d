//! Online model selection over per-era score histories.
//!
//! Several candidate rankers score the same eras. Each era, a selection
//! rule looks at every method's realized Corr history, restricted to eras
//! old enough to have observable targets (the lag), and produces ensemble
//! weights: equal weights for plain averaging or during warm-up, otherwise
//! one-hot on the method whose trailing window looks best under the rule's
//! statistic. Because a method's era-t Corr enters the history only after
//! era t has been scored, and the lag pushes the usable prefix further
//! back, no era's weights ever depend on that era's own outcome.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{era_corr, max_drawdown, CorrSeries};
use crate::panel::{EraId, PanelSet};

/// Default trailing window (eras) for the per-method statistic.
pub const DEFAULT_SELECT_WINDOW: usize = 52;
/// Default lag (eras) before an era's Corr becomes usable.
pub const DEFAULT_SELECT_LAG: u32 = 6;
/// Default number of usable eras required before leaving equal weights.
pub const DEFAULT_WARM_UP: usize = 52;

/// Statistic used to pick the method that gets all the weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Equal weights always; no selection.
    Average,
    /// Highest trailing mean Corr.
    Momentum,
    /// Highest trailing mean over population std. Zero std resolves to
    /// signed infinity (zero when the mean is also zero).
    Sharpe,
    /// Highest trailing mean over max drawdown. Zero drawdown resolves to
    /// positive infinity.
    Calmar,
}

/// Per-method realized Corr history, appended era by era.
#[derive(Debug, Clone)]
pub struct MethodHistory {
    names: Vec<String>,
    eras: Vec<EraId>,
    /// Method-major: `scores[m][i]` is method m's Corr at `eras[i]`.
    scores: Vec<Vec<f64>>,
    pub warm_up: usize,
    pub window: usize,
    pub lag: u32,
}

impl MethodHistory {
    pub fn new(names: Vec<String>, warm_up: usize, window: usize, lag: u32) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("selection needs at least one method".into()));
        }
        if warm_up == 0 {
            return Err(Error::Config("selection warm_up must be at least 1".into()));
        }
        if window == 0 {
            return Err(Error::Config("selection window must be at least 1".into()));
        }
        let n = names.len();
        Ok(MethodHistory {
            names,
            eras: Vec::new(),
            scores: vec![Vec::new(); n],
            warm_up,
            window,
            lag,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_methods(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.eras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eras.is_empty()
    }

    /// Appends one era's Corr, one value per method in registration order.
    /// Eras must arrive strictly increasing.
    pub fn push(&mut self, era: EraId, corrs: &[f64]) -> Result<()> {
        if corrs.len() != self.names.len() {
            return Err(Error::Shape(format!(
                "{} corr values for {} methods",
                corrs.len(),
                self.names.len()
            )));
        }
        if let Some(&last) = self.eras.last() {
            if era <= last {
                return Err(Error::Data(format!(
                    "era {era} pushed after era {last}; history must be increasing"
                )));
            }
        }
        if corrs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Data(format!("non-finite corr pushed for era {era}")));
        }
        self.eras.push(era);
        for (column, &value) in self.scores.iter_mut().zip(corrs) {
            column.push(value);
        }
        Ok(())
    }
}

fn windowed_stat(slice: &[f64], rule: SelectionRule) -> f64 {
    let n = slice.len() as f64;
    let mean = slice.iter().sum::<f64>() / n;
    match rule {
        SelectionRule::Average => unreachable!("average never ranks methods"),
        SelectionRule::Momentum => mean,
        SelectionRule::Sharpe => {
            let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let vol = var.sqrt();
            if vol == 0.0 {
                if mean == 0.0 {
                    0.0
                } else {
                    mean.signum() * f64::INFINITY
                }
            } else {
                mean / vol
            }
        }
        SelectionRule::Calmar => {
            let dd = max_drawdown(slice.iter().copied());
            if dd == 0.0 {
                f64::INFINITY
            } else {
                mean / dd
            }
        }
    }
}

/// Ensemble weights for `era`: equal weights under the average rule or
/// while fewer than `warm_up` usable eras exist, otherwise one-hot on the
/// best trailing-window statistic. Ties keep the earliest-registered
/// method.
pub fn select_method(history: &MethodHistory, era: EraId, rule: SelectionRule) -> Result<Vec<f64>> {
    let k = history.n_methods();
    let equal = vec![1.0 / k as f64; k];

    let cutoff = era.minus(history.lag);
    let usable = history.eras.partition_point(|&e| e <= cutoff);
    if rule == SelectionRule::Average || usable < history.warm_up {
        return Ok(equal);
    }

    let mut best = 0usize;
    let mut best_stat = f64::NEG_INFINITY;
    for m in 0..k {
        let prefix = &history.scores[m][..usable];
        let slice = &prefix[prefix.len() - prefix.len().min(history.window)..];
        let stat = windowed_stat(slice, rule);
        if stat > best_stat {
            best_stat = stat;
            best = m;
        }
    }
    let mut weights = vec![0.0; k];
    weights[best] = 1.0;
    Ok(weights)
}

/// Combines aligned prediction vectors with the given weights.
pub fn weighted_average(predictions: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    if predictions.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} prediction vectors for {} weights",
            predictions.len(),
            weights.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Shape("nothing to average".into()));
    }
    let n = predictions[0].len();
    if predictions.iter().any(|p| p.len() != n) {
        return Err(Error::Shape("prediction vectors differ in length".into()));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Data("non-finite ensemble weight".into()));
    }
    let mut out = vec![0.0; n];
    for (pred, &w) in predictions.iter().zip(weights) {
        for (acc, &p) in out.iter_mut().zip(*pred) {
            *acc += w * p;
        }
    }
    Ok(out)
}

/// One candidate ranker's scores for every backtest era.
#[derive(Debug, Clone)]
pub struct MethodPredictions {
    pub name: String,
    pub by_era: BTreeMap<EraId, Vec<f64>>,
}

/// Result of an online-selection backtest.
#[derive(Debug, Clone)]
pub struct OnlineSelection {
    /// Corr of the weighted ensemble, era by era.
    pub combined: CorrSeries,
    /// The weights used at each scored era, aligned with `combined`.
    pub weights: Vec<(EraId, Vec<f64>)>,
    /// Each method's own realized Corr series, registration order.
    pub method_series: Vec<CorrSeries>,
}

/// Runs the full online loop over a panel: pick weights from history,
/// combine, then score the era and append every method's Corr for later
/// eras. Targets are unlocked era by era right before scoring, so a
/// target-read audit on `panel` will flag any look-ahead. Eras where Corr
/// is undefined (degenerate scores or target) are skipped entirely.
pub fn run_online_ensemble(
    methods: &[MethodPredictions],
    panel: &PanelSet,
    target: &str,
    rule: SelectionRule,
    warm_up: usize,
    window: usize,
    lag: u32,
) -> Result<OnlineSelection> {
    if methods.is_empty() {
        return Err(Error::Config("selection needs at least one method".into()));
    }
    let eras: Vec<EraId> = methods[0].by_era.keys().copied().collect();
    for m in &methods[1..] {
        if m.by_era.keys().copied().ne(eras.iter().copied()) {
            return Err(Error::Shape(format!(
                "method {:?} scores a different era set than {:?}",
                m.name, methods[0].name
            )));
        }
    }

    let mut history = MethodHistory::new(
        methods.iter().map(|m| m.name.clone()).collect(),
        warm_up,
        window,
        lag,
    )?;
    let mut combined_pairs = Vec::with_capacity(eras.len());
    let mut weights_used = Vec::with_capacity(eras.len());
    let mut per_method: Vec<Vec<(EraId, f64)>> = vec![Vec::new(); methods.len()];

    for &era in &eras {
        let weights = select_method(&history, era, rule)?;
        let preds: Vec<&[f64]> = methods.iter().map(|m| m.by_era[&era].as_slice()).collect();
        let combined = weighted_average(&preds, &weights)?;

        panel.permit_target(era);
        let panel_era = panel
            .era(era)
            .ok_or_else(|| Error::Data(format!("panel has no era {era}")))?;
        let t = panel_era
            .target(target)
            .ok_or_else(|| Error::Data(format!("era {era} lacks target {target:?}")))?;

        let combined_corr = match era_corr(&combined, t) {
            Ok(c) => c,
            Err(Error::UndefinedCorrelation(_)) => continue,
            Err(other) => return Err(other),
        };
        let mut corrs = Vec::with_capacity(methods.len());
        let mut degenerate = false;
        for pred in &preds {
            match era_corr(pred, t) {
                Ok(c) => corrs.push(c),
                Err(Error::UndefinedCorrelation(_)) => {
                    degenerate = true;
                    break;
                }
                Err(other) => return Err(other),
            }
        }
        if degenerate {
            continue;
        }

        combined_pairs.push((era, combined_corr));
        weights_used.push((era, weights));
        for (series, &corr) in per_method.iter_mut().zip(&corrs) {
            series.push((era, corr));
        }
        history.push(era, &corrs)?;
    }

    Ok(OnlineSelection {
        combined: CorrSeries::from_pairs(combined_pairs)?,
        weights: weights_used,
        method_series: per_method
            .into_iter()
            .map(CorrSeries::from_pairs)
            .collect::<Result<_>>()?,
    })
}
