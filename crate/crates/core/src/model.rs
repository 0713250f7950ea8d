//! Prediction interface, factor-momentum baseline, and ensembling.
//!
//! Anything that can score the stocks of one era implements
//! [`RankingModel`]. Scores are compared only by rank downstream, so models
//! are free to emit any finite values.
//!
//! The factor-momentum baseline carries recent feature direction forward:
//! for each feature it takes the sign of the mean per-era Corr against the
//! target over the trailing window of scored eras ending `lag` weeks before
//! the prediction era, then scores each stock as the sign-weighted sum of its
//! feature values. Features with mean exactly zero are dropped. The baseline
//! is also the engine behind the market meta index in [`crate::metrics`].

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::metrics::{self, summarize, CorrSeries, SummaryMetrics};
use crate::panel::{EraId, PanelEra, PanelSet};

/// Trailing eras the momentum sign estimate may use.
pub const DEFAULT_MOMENTUM_WINDOW: usize = 52;

/// Weeks between the last usable era and the prediction era, covering target
/// resolution delay.
pub const DEFAULT_MOMENTUM_LAG: u32 = 6;

/// A fitted model scoring one era at a time.
pub trait RankingModel: Send + Sync {
    /// Scores every row of `era`; higher means better expected outcome.
    fn predict(&self, era: &PanelEra) -> Result<Vec<f64>>;
}

impl<T: RankingModel + ?Sized> RankingModel for Box<T> {
    fn predict(&self, era: &PanelEra) -> Result<Vec<f64>> {
        (**self).predict(era)
    }
}

/// Per-feature direction at `at`: sign of the mean per-era Corr over the
/// trailing `window` scored eras ending at `at - lag`. `None` when no scored
/// era is available yet.
pub(crate) fn momentum_signs_at(
    corrs: &metrics::EraFeatureCorrs,
    at: EraId,
    window: usize,
    lag: u32,
) -> Option<Vec<i8>> {
    let usable = corrs.scored_up_to(at.minus(lag));
    if usable.is_empty() {
        return None;
    }
    let tail = &usable[usable.len().saturating_sub(window)..];
    let n_features = tail[0].len();
    let mut signs = vec![0i8; n_features];
    for (f, sign) in signs.iter_mut().enumerate() {
        let mean = tail.iter().map(|c| c[f]).sum::<f64>() / tail.len() as f64;
        *sign = if mean > 0.0 {
            1
        } else if mean < 0.0 {
            -1
        } else {
            0
        };
    }
    Some(signs)
}

/// Sign-weighted sum of feature values per row.
pub(crate) fn signed_feature_sum(era: &PanelEra, signs: &[i8]) -> Vec<f64> {
    let mut scores = vec![0.0; era.n_rows()];
    for (f, &sign) in signs.iter().enumerate() {
        if sign == 0 {
            continue;
        }
        for (row, &v) in era.features().column(f).iter().enumerate() {
            scores[row] += f64::from(sign) * f64::from(v);
        }
    }
    scores
}

/// Factor-momentum scores for `era`, given the historical panel.
///
/// Only eras of `history` with id at most `era - lag` and a `target` vector
/// contribute; of those, the trailing `window` feed the sign estimate. With
/// no usable history at all the call is not ready.
pub fn factor_momentum_predict(
    history: &PanelSet,
    era: &PanelEra,
    target: &str,
    window: usize,
    lag: u32,
) -> Result<Vec<f64>> {
    if history.n_features() != era.features().n_cols() {
        return Err(Error::Shape(format!(
            "history has {} features, era {} has {}",
            history.n_features(),
            era.era(),
            era.features().n_cols()
        )));
    }
    let corrs = metrics::era_feature_corrs(history, target)?;
    match momentum_signs_at(&corrs, era.era(), window, lag) {
        Some(signs) => Ok(signed_feature_sum(era, &signs)),
        None => Err(Error::NotReady(format!(
            "no scored era at or before era {} for the momentum baseline",
            era.era().minus(lag)
        ))),
    }
}

/// The factor-momentum baseline bound to a historical panel, ready to score
/// eras. The panel may extend past the eras being predicted; the lag rule
/// keeps later targets out of reach.
#[derive(Clone)]
pub struct FactorMomentumModel {
    history: Arc<PanelSet>,
    target: String,
    pub window: usize,
    pub lag: u32,
}

impl FactorMomentumModel {
    pub fn new(history: Arc<PanelSet>, target: impl Into<String>) -> Self {
        FactorMomentumModel {
            history,
            target: target.into(),
            window: DEFAULT_MOMENTUM_WINDOW,
            lag: DEFAULT_MOMENTUM_LAG,
        }
    }
}

impl RankingModel for FactorMomentumModel {
    fn predict(&self, era: &PanelEra) -> Result<Vec<f64>> {
        factor_momentum_predict(&self.history, era, &self.target, self.window, self.lag)
    }
}

/// How an ensemble's members are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragingMode {
    /// Average the member score vectors, then score the average once.
    OverPredictions,
    /// Score each member separately, then average the summary metrics.
    OverModels,
}

/// Ensemble shape: how many seeds per target, which targets, and how the
/// members are combined.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSpec {
    pub mode: AveragingMode,
    pub n_seeds: usize,
    pub targets: Vec<String>,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec {
            mode: AveragingMode::OverPredictions,
            n_seeds: 10,
            targets: vec!["main".to_string()],
        }
    }
}

/// Element-wise mean of equally long member score vectors.
pub fn average_predictions(members: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = members
        .first()
        .ok_or_else(|| Error::Config("cannot average zero prediction vectors".into()))?;
    let n = first.len();
    if let Some(bad) = members.iter().position(|m| m.len() != n) {
        return Err(Error::Shape(format!(
            "prediction vector {bad} has {} rows, expected {n}",
            members[bad].len()
        )));
    }
    let mut out = vec![0.0; n];
    for m in members {
        for (o, v) in out.iter_mut().zip(m) {
            *o += v;
        }
    }
    let k = members.len() as f64;
    for o in &mut out {
        *o /= k;
    }
    Ok(out)
}

/// Summarizes each member's Corr series and averages the metrics
/// arithmetically. All members must cover the same eras.
pub fn average_metrics(members: &[CorrSeries]) -> Result<SummaryMetrics> {
    let first = members
        .first()
        .ok_or_else(|| Error::Config("cannot average zero corr series".into()))?;
    let eras: Vec<EraId> = first.pairs().iter().map(|&(e, _)| e).collect();
    for (i, m) in members.iter().enumerate() {
        let m_eras: Vec<EraId> = m.pairs().iter().map(|&(e, _)| e).collect();
        if m_eras != eras {
            return Err(Error::Shape(format!(
                "corr series {i} covers different eras than series 0"
            )));
        }
    }
    let summaries: Vec<SummaryMetrics> = members.iter().map(summarize).collect::<Result<_>>()?;
    let k = summaries.len() as f64;
    Ok(SummaryMetrics {
        mean: summaries.iter().map(|s| s.mean).sum::<f64>() / k,
        volatility: summaries.iter().map(|s| s.volatility).sum::<f64>() / k,
        max_drawdown: summaries.iter().map(|s| s.max_drawdown).sum::<f64>() / k,
        sharpe: summaries.iter().map(|s| s.sharpe).sum::<f64>() / k,
        calmar: summaries.iter().map(|s| s.calmar).sum::<f64>() / k,
    })
}

/// Averages the per-target predictions of one era. Every requested target
/// must have a fitted model.
pub fn multi_target_average<M: RankingModel>(
    models: &BTreeMap<String, M>,
    targets: &[String],
    era: &PanelEra,
) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Err(Error::Config("no targets configured".into()));
    }
    let mut per_target = Vec::with_capacity(targets.len());
    for t in targets {
        let model = models
            .get(t)
            .ok_or_else(|| Error::Config(format!("no fitted model for target {t:?}")))?;
        per_target.push(model.predict(era)?);
    }
    average_predictions(&per_target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::FeatureMatrix;
    use approx::assert_abs_diff_eq;

    fn era_with(
        id: u32,
        cols: Vec<Vec<i8>>,
        target: Option<Vec<f64>>,
    ) -> PanelEra {
        let n = cols[0].len();
        let ids = (0..n).map(|i| format!("s{i}")).collect();
        let mut targets = BTreeMap::new();
        if let Some(t) = target {
            targets.insert("main".to_string(), t);
        }
        PanelEra::new(
            EraId::new(id),
            ids,
            FeatureMatrix::from_columns(cols).unwrap(),
            targets,
        )
        .unwrap()
    }

    /// History where feature 0 tracks the target and feature 1 opposes it,
    /// era after era.
    fn two_feature_history() -> PanelSet {
        let t = vec![-0.5, -0.25, 0.0, 0.25, 0.5];
        let up = vec![-2i8, -1, 0, 1, 2];
        let down = vec![2i8, 1, 0, -1, -2];
        PanelSet::new(
            vec!["a".into(), "b".into()],
            (1..=3)
                .map(|id| era_with(id, vec![up.clone(), down.clone()], Some(t.clone())))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn momentum_follows_recent_feature_direction() {
        let history = two_feature_history();
        let live = era_with(10, vec![vec![1, -2, 0], vec![0, 1, -1]], None);
        let scores = factor_momentum_predict(&history, &live, "main", 52, 6).unwrap();
        // Signs are (+1, -1), so each row scores a - b.
        assert_eq!(scores, vec![1.0, -3.0, 1.0]);
    }

    #[test]
    fn momentum_drops_features_with_zero_mean_corr() {
        // Feature 0 aligns with the target in era 1 and opposes the exactly
        // negated target in era 2: the two Corr values cancel to mean zero.
        let up = vec![-2i8, -1, 0, 1, 2];
        let t = vec![-0.5, -0.25, 0.0, 0.25, 0.5];
        let t_neg: Vec<f64> = t.iter().map(|v| -v).collect();
        let history = PanelSet::new(
            vec!["a".into()],
            vec![
                era_with(1, vec![up.clone()], Some(t.clone())),
                era_with(2, vec![up.clone()], Some(t_neg)),
            ],
        )
        .unwrap();
        let live = era_with(10, vec![vec![2, -2]], None);
        let scores = factor_momentum_predict(&history, &live, "main", 52, 6).unwrap();
        assert_eq!(scores, vec![0.0, 0.0]);
    }

    #[test]
    fn momentum_without_history_is_not_ready() {
        let history = two_feature_history();
        // Lag 6 pushes the cutoff before the first scored era.
        let live = era_with(4, vec![vec![1], vec![0]], None);
        assert!(matches!(
            factor_momentum_predict(&history, &live, "main", 52, 6),
            Err(Error::NotReady(_))
        ));
    }

    #[test]
    fn momentum_ignores_eras_inside_the_lag() {
        // Prediction at era 10 with lag 6 may use eras 1..=4 only. Poisoning
        // era 5 and later with reversed targets must not change anything.
        let t = vec![-0.5, -0.25, 0.0, 0.25, 0.5];
        let up = vec![-2i8, -1, 0, 1, 2];
        let clean: Vec<PanelEra> = (1..=4)
            .map(|id| era_with(id, vec![up.clone()], Some(t.clone())))
            .collect();
        let mut poisoned = clean.clone();
        for id in 5..=9 {
            let rev: Vec<f64> = t.iter().rev().copied().collect();
            poisoned.push(era_with(id, vec![up.clone()], Some(rev)));
        }
        let live = era_with(10, vec![vec![1, 2, -1]], None);
        let a = factor_momentum_predict(
            &PanelSet::new(vec!["a".into()], clean).unwrap(),
            &live,
            "main",
            52,
            6,
        )
        .unwrap();
        let b = factor_momentum_predict(
            &PanelSet::new(vec!["a".into()], poisoned).unwrap(),
            &live,
            "main",
            52,
            6,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn average_predictions_is_the_elementwise_mean() {
        let avg = average_predictions(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(avg, vec![2.0, 3.0]);

        let single = average_predictions(&[vec![0.5, -0.5]]).unwrap();
        assert_eq!(single, vec![0.5, -0.5]);

        assert!(average_predictions(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(average_predictions(&[]).is_err());
    }

    #[test]
    fn average_metrics_averages_each_summary_field() {
        let a = CorrSeries::from_values(EraId::new(1), &[0.02, 0.04, 0.0]).unwrap();
        let b = CorrSeries::from_values(EraId::new(1), &[0.04, 0.0, 0.02]).unwrap();
        let got = average_metrics(&[a.clone(), b.clone()]).unwrap();
        let sa = summarize(&a).unwrap();
        let sb = summarize(&b).unwrap();
        assert_abs_diff_eq!(got.mean, (sa.mean + sb.mean) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            got.volatility,
            (sa.volatility + sb.volatility) / 2.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(got.sharpe, (sa.sharpe + sb.sharpe) / 2.0, epsilon = 1e-15);

        // Identical members average to themselves.
        let same = average_metrics(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same, sa);

        // Era coverage must match.
        let shifted = CorrSeries::from_values(EraId::new(2), &[0.02, 0.04, 0.0]).unwrap();
        assert!(average_metrics(&[a, shifted]).is_err());
    }

    #[test]
    fn multi_target_average_needs_every_model() {
        struct Constant(f64);
        impl RankingModel for Constant {
            fn predict(&self, era: &PanelEra) -> Result<Vec<f64>> {
                Ok(vec![self.0; era.n_rows()])
            }
        }
        let live = era_with(10, vec![vec![0, 0]], None);
        let mut models: BTreeMap<String, Constant> = BTreeMap::new();
        models.insert("main".into(), Constant(1.0));
        models.insert("aux".into(), Constant(3.0));

        let both = ["main".to_string(), "aux".to_string()];
        assert_eq!(
            multi_target_average(&models, &both, &live).unwrap(),
            vec![2.0, 2.0]
        );

        let missing = ["main".to_string(), "other".to_string()];
        assert!(matches!(
            multi_target_average(&models, &missing, &live),
            Err(Error::Config(_))
        ));
    }
}
