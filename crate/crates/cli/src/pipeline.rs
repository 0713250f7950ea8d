//! The pipeline stages behind the subcommands.
//!
//! A backtest runs in the published stage order: engineer features, train
//! the seed ensembles on the training split, then walk the test eras in
//! time order. At each era the selector picks method weights from lagged
//! history, every method scores the era (projection, when enabled, runs
//! here because its rolling statistics may only touch eras whose targets
//! are already resolved), the weighted combination is scored against the
//! era's target, and only then does the era's own Corr enter the history.
//! Regime labels and summaries are derived afterwards from the baseline
//! series. Targets are unlocked era by era right before scoring, so a
//! target-read audit installed on the input panel proves the loop never
//! looks ahead.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rayon::prelude::*;

use tempora_core::features::engineer_features;
use tempora_core::gbdt::Booster;
use tempora_core::io::{
    fmt_sig17, generate_synthetic, read_panel_csv, write_panel_csv, write_predictions_csv,
    PredictionRow,
};
use tempora_core::metrics::{
    classify_regime, era_corr, nmi_series, nrvix, regime_report, CorrSeries, RegimeScope,
    DEFAULT_REGIME_THRESHOLD, DEFAULT_REGIME_WINDOW,
};
use tempora_core::model::{average_predictions, factor_momentum_predict, AveragingMode};
use tempora_core::projection::{dynamic_project, feature_corr_stats, ProjectionKind};
use tempora_core::select::{select_method, weighted_average, MethodHistory};
use tempora_core::split::{make_split, GroupedSplitSpec};
use tempora_core::{EraId, Error, PanelSet, Result, SummaryMetrics};

use crate::config::{member_seed, ModelKind, RunConfig};

/// Loads the panel from whichever source the config sets.
pub fn load_panel(config: &RunConfig) -> Result<PanelSet> {
    match (&config.data.path, &config.data.synthetic) {
        (Some(path), None) => read_panel_csv(path),
        (None, Some(synthetic)) => generate_synthetic(synthetic),
        _ => Err(Error::Config(
            "data needs exactly one of path or synthetic".into(),
        )),
    }
}

/// Applies the configured feature engineering to a panel.
pub fn engineer(config: &RunConfig, panel: &PanelSet) -> Result<PanelSet> {
    engineer_features(panel, &config.features.resolve(config.seed))
}

/// The configured split, clamped to the panel's actual last era.
pub fn resolve_split(config: &RunConfig, panel: &PanelSet) -> Result<GroupedSplitSpec> {
    let last = panel
        .last_era()
        .ok_or_else(|| Error::Data("panel has no eras".into()))?;
    config.split.resolve()?.clamped_to_last(last)
}

/// Writes a synthetic panel to `panel.csv` in the output directory.
pub fn run_generate(config: &RunConfig) -> Result<PathBuf> {
    let synthetic = config.data.synthetic.as_ref().ok_or_else(|| {
        Error::Config("generate needs a [data.synthetic] section".into())
    })?;
    let panel = generate_synthetic(synthetic)?;
    fs::create_dir_all(&config.output.dir)?;
    let path = config.output.dir.join("panel.csv");
    write_panel_csv(&panel, &path)?;
    Ok(path)
}

/// Trains every boosted member and serializes it under `models/` as
/// `<model>_<target>_s<seed index>.txt`. Momentum models are stateless and
/// produce no artifact.
pub fn run_train(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let panel = load_panel(config)?;
    let engineered = engineer(config, &panel)?;
    let spec = resolve_split(config, &engineered)?;
    let (train, validation, _) = make_split(&engineered, &spec)?;

    let mut jobs = Vec::new();
    for (m, model) in config.models.iter().enumerate() {
        if model.kind != ModelKind::Boost {
            continue;
        }
        for (t, target) in config.ensemble.targets.iter().enumerate() {
            for s in 0..config.ensemble.n_seeds {
                jobs.push((m, t, s, model.name.clone(), target.clone()));
            }
        }
    }

    let trained: Vec<(String, String)> = jobs
        .par_iter()
        .map(|(m, t, s, name, target)| -> Result<(String, String)> {
            let mut cfg = config.models[*m].boost.clone();
            cfg.seed = member_seed(config.seed, *m, *t, *s);
            let booster = Booster::train(&train, target, &cfg, Some(&validation))?;
            Ok((format!("{name}_{target}_s{s}.txt"), booster.to_text()))
        })
        .collect::<Result<_>>()?;

    let dir = config.output.dir.join("models");
    fs::create_dir_all(&dir)?;
    let mut paths = Vec::with_capacity(trained.len());
    for (file, text) in trained {
        let path = dir.join(file);
        fs::write(&path, text)?;
        paths.push(path);
    }
    Ok(paths)
}

/// A trained candidate method, ready to score eras.
enum Method {
    /// Per-target seed ensembles; scores average over seeds, then targets.
    Boost { boosters: Vec<Vec<Booster>> },
    /// Factor-momentum baseline over the raw panel.
    Momentum { window: usize, lag: u32 },
}

/// Everything a backtest produces, plus the written artifact paths.
pub struct BacktestOutput {
    pub predictions_path: PathBuf,
    pub corr_regime_path: PathBuf,
    pub summary_path: PathBuf,
    pub selection_path: PathBuf,
    /// Corr of the combined prediction over the scored test eras.
    pub combined: CorrSeries,
    /// Selection weights per scored era, method order as configured.
    pub weights: Vec<(EraId, Vec<f64>)>,
    /// Each method's own Corr series.
    pub method_series: Vec<CorrSeries>,
    /// Summary rows as written to `summary.csv`.
    pub summary: Vec<(RegimeScope, SummaryMetrics)>,
}

/// Runs a backtest on the configured data source.
pub fn run_backtest(config: &RunConfig) -> Result<BacktestOutput> {
    run_backtest_on(config, load_panel(config)?)
}

/// Runs a backtest on an already loaded panel. Callers can install a
/// target-read audit on the panel first; the pipeline unlocks each test
/// era right before scoring it.
pub fn run_backtest_on(config: &RunConfig, raw: PanelSet) -> Result<BacktestOutput> {
    if config.ensemble.mode == AveragingMode::OverModels {
        return Err(Error::Config(
            "backtests combine member predictions before scoring; \
             metric averaging over models is an offline analysis mode"
                .into(),
        ));
    }
    let main_target = config.main_target().to_string();
    let engineered = engineer(config, &raw)?;
    let spec = resolve_split(config, &engineered)?;
    let (train, validation, test) = make_split(&engineered, &spec)?;

    let methods = train_methods(config, &train, &validation)?;
    let names: Vec<String> = config.models.iter().map(|m| m.name.clone()).collect();

    let projection = if config.projection.enabled {
        Some((config.projection.resolve()?, config.projection.beta))
    } else {
        None
    };

    let mut history = MethodHistory::new(
        names.clone(),
        config.selection.warm_up,
        config.selection.window,
        config.selection.lag,
    )?;
    let mut combined_pairs = Vec::new();
    let mut weights_used: Vec<(EraId, Vec<f64>)> = Vec::new();
    let mut per_method: Vec<Vec<(EraId, f64)>> = vec![Vec::new(); methods.len()];
    let mut prediction_rows: Vec<PredictionRow> = Vec::new();

    for test_era in test.eras() {
        let era_id = test_era.era();
        let raw_era = raw
            .era(era_id)
            .ok_or_else(|| Error::Data(format!("era {era_id} missing from the raw panel")))?;

        let weights = select_method(&history, era_id, config.selection.rule)?;

        let mut scores: Vec<Vec<f64>> = Vec::with_capacity(methods.len());
        for method in &methods {
            scores.push(match method {
                Method::Boost { boosters } => {
                    let mut per_target = Vec::with_capacity(boosters.len());
                    for members in boosters {
                        let member_scores: Vec<Vec<f64>> = members
                            .iter()
                            .map(|b| b.predict(test_era, 0))
                            .collect::<Result<_>>()?;
                        per_target.push(average_predictions(&member_scores)?);
                    }
                    average_predictions(&per_target)?
                }
                Method::Momentum { window, lag } => {
                    // Truncate the history panel at the lag cutoff so the
                    // baseline cannot touch unresolved targets.
                    let cutoff = era_id.minus(*lag);
                    let past = PanelSet::new_unchecked(
                        raw.feature_names().to_vec(),
                        raw.eras_up_to(cutoff).to_vec(),
                    );
                    factor_momentum_predict(&past, raw_era, &main_target, *window, *lag)?
                }
            });
        }

        if let Some((rule, beta)) = &projection {
            let stats = if rule.kind == ProjectionKind::Fixed {
                None
            } else {
                match feature_corr_stats(&raw, &main_target, era_id, rule.window, rule.lag) {
                    Ok(stats) => Some(stats),
                    Err(Error::NotReady(_)) => None,
                    Err(e) => return Err(e),
                }
            };
            for y in &mut scores {
                let (projected, _) = dynamic_project(
                    y,
                    raw_era,
                    raw.feature_names(),
                    rule,
                    stats.as_ref(),
                    *beta,
                )?;
                *y = projected;
            }
        }

        let refs: Vec<&[f64]> = scores.iter().map(Vec::as_slice).collect();
        let combined = weighted_average(&refs, &weights)?;

        raw.permit_target(era_id);
        let target = raw_era.target(&main_target).ok_or_else(|| {
            Error::Data(format!("era {era_id} lacks target {main_target:?}"))
        })?;

        let combined_corr = match era_corr(&combined, target) {
            Ok(c) => c,
            Err(Error::UndefinedCorrelation(_)) => continue,
            Err(e) => return Err(e),
        };
        let mut method_corrs = Vec::with_capacity(methods.len());
        let mut degenerate = false;
        for y in &refs {
            match era_corr(y, target) {
                Ok(c) => method_corrs.push(c),
                Err(Error::UndefinedCorrelation(_)) => {
                    degenerate = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if degenerate {
            continue;
        }

        for (id, &score) in raw_era.ids().iter().zip(&combined) {
            prediction_rows.push(PredictionRow {
                era: era_id,
                id: id.clone(),
                score,
            });
        }
        combined_pairs.push((era_id, combined_corr));
        weights_used.push((era_id, weights));
        for (series, &corr) in per_method.iter_mut().zip(&method_corrs) {
            series.push((era_id, corr));
        }
        history.push(era_id, &method_corrs)?;
    }

    let combined = CorrSeries::from_pairs(combined_pairs)?;
    let method_series: Vec<CorrSeries> = per_method
        .into_iter()
        .map(CorrSeries::from_pairs)
        .collect::<Result<_>>()?;

    // Regime labelling happens after the loop: by now every scored era's
    // target is unlocked, and the baseline index only summarizes realized
    // history.
    let nmi = nmi_series(&raw, &main_target)?;
    let rolling = nrvix(&nmi, DEFAULT_REGIME_WINDOW);
    let nmi_map: BTreeMap<EraId, f64> = nmi.pairs().iter().copied().collect();
    let vol_map: BTreeMap<EraId, Option<f64>> = rolling.into_iter().collect();
    let labels: BTreeMap<_, _> = combined
        .pairs()
        .iter()
        .map(|&(era, _)| {
            let vol = vol_map.get(&era).copied().flatten();
            (era, classify_regime(vol, DEFAULT_REGIME_THRESHOLD))
        })
        .collect();
    let summary = regime_report(&combined, &labels)?;

    fs::create_dir_all(&config.output.dir)?;
    let predictions_path = config.output.dir.join("predictions.csv");
    write_predictions_csv(&prediction_rows, &predictions_path)?;

    let corr_regime_path = config.output.dir.join("corr_regime.csv");
    let mut out = BufWriter::new(File::create(&corr_regime_path)?);
    writeln!(out, "era,corr,nmi,nrvix,regime")?;
    for &(era, corr) in combined.pairs() {
        let nmi_cell = nmi_map.get(&era).map(|v| fmt_sig17(*v)).unwrap_or_default();
        let vol_cell = vol_map
            .get(&era)
            .copied()
            .flatten()
            .map(fmt_sig17)
            .unwrap_or_default();
        writeln!(
            out,
            "{era},{},{nmi_cell},{vol_cell},{}",
            fmt_sig17(corr),
            labels[&era]
        )?;
    }
    out.flush()?;

    let summary_path = config.output.dir.join("summary.csv");
    let mut out = BufWriter::new(File::create(&summary_path)?);
    writeln!(out, "scope,mean,volatility,max_drawdown,sharpe,calmar")?;
    for (scope, metrics) in &summary {
        writeln!(
            out,
            "{scope},{},{},{},{},{}",
            fmt_sig17(metrics.mean),
            fmt_sig17(metrics.volatility),
            fmt_sig17(metrics.max_drawdown),
            fmt_sig17(metrics.sharpe),
            fmt_sig17(metrics.calmar)
        )?;
    }
    out.flush()?;

    let selection_path = config.output.dir.join("selection.csv");
    let mut out = BufWriter::new(File::create(&selection_path)?);
    let weight_columns: Vec<String> = names.iter().map(|n| format!("weight_{n}")).collect();
    writeln!(out, "era,chosen_method,{},combined_corr", weight_columns.join(","))?;
    for ((era, weights), &(_, corr)) in weights_used.iter().zip(combined.pairs()) {
        let chosen = match weights.iter().position(|&w| w == 1.0) {
            Some(index) if methods.len() > 1 => names[index].as_str(),
            _ if methods.len() == 1 => names[0].as_str(),
            _ => "equal",
        };
        let cells: Vec<String> = weights.iter().map(|&w| fmt_sig17(w)).collect();
        writeln!(out, "{era},{chosen},{},{}", cells.join(","), fmt_sig17(corr))?;
    }
    out.flush()?;

    Ok(BacktestOutput {
        predictions_path,
        corr_regime_path,
        summary_path,
        selection_path,
        combined,
        weights: weights_used,
        method_series,
        summary,
    })
}

/// Trains the configured methods on the training split.
fn train_methods(
    config: &RunConfig,
    train: &PanelSet,
    validation: &PanelSet,
) -> Result<Vec<Method>> {
    config
        .models
        .iter()
        .enumerate()
        .map(|(m, model)| -> Result<Method> {
            match model.kind {
                ModelKind::Momentum => Ok(Method::Momentum {
                    window: model.window,
                    lag: model.lag,
                }),
                ModelKind::Boost => {
                    let boosters: Vec<Vec<Booster>> = config
                        .ensemble
                        .targets
                        .iter()
                        .enumerate()
                        .map(|(t, target)| -> Result<Vec<Booster>> {
                            (0..config.ensemble.n_seeds)
                                .into_par_iter()
                                .map(|s| {
                                    let mut cfg = model.boost.clone();
                                    cfg.seed = member_seed(config.seed, m, t, s);
                                    Booster::train(train, target, &cfg, Some(validation))
                                })
                                .collect()
                        })
                        .collect::<Result<_>>()?;
                    Ok(Method::Boost { boosters })
                }
            }
        })
        .collect()
}

/// Prints a human-readable block from the artifacts of an earlier
/// backtest or sweep in the output directory.
pub fn run_report(config: &RunConfig, out: &mut impl Write) -> Result<()> {
    let dir = &config.output.dir;
    let summary_path = dir.join("summary.csv");
    if !summary_path.exists() {
        return Err(Error::Data(format!(
            "no summary.csv under {}; run backtest first",
            dir.display()
        )));
    }

    writeln!(out, "backtest summary ({})", dir.display())?;
    let text = fs::read_to_string(&summary_path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let columns: Vec<&str> = header.split(',').collect();
    writeln!(
        out,
        "  {:<6} {:>12} {:>12} {:>14} {:>10} {:>10}",
        columns.first().copied().unwrap_or("scope"),
        "mean",
        "volatility",
        "max_drawdown",
        "sharpe",
        "calmar"
    )?;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 6 {
            return Err(Error::Data(format!("malformed summary row: {line}")));
        }
        let short: Vec<String> = cells[1..]
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|_| (*c).to_string())
            })
            .collect();
        writeln!(
            out,
            "  {:<6} {:>12} {:>12} {:>14} {:>10} {:>10}",
            cells[0], short[0], short[1], short[2], short[3], short[4]
        )?;
    }

    let selection_path = dir.join("selection.csv");
    if selection_path.exists() {
        let text = fs::read_to_string(&selection_path)?;
        let mut picks: BTreeMap<String, usize> = BTreeMap::new();
        let mut eras = 0usize;
        for line in text.lines().skip(1) {
            if let Some(method) = line.split(',').nth(1) {
                *picks.entry(method.to_string()).or_default() += 1;
                eras += 1;
            }
        }
        let parts: Vec<String> = picks
            .iter()
            .map(|(name, count)| format!("{name} x{count}"))
            .collect();
        writeln!(out, "selection over {eras} eras: {}", parts.join(", "))?;
    }

    let sweep_path = dir.join("sweep.csv");
    if sweep_path.exists() {
        let text = fs::read_to_string(&sweep_path)?;
        if let Some(best) = text.lines().nth(1) {
            writeln!(out, "best sweep cell: {best}")?;
        }
    }
    Ok(())
}
