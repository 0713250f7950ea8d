//! From-scratch gradient-boosted trees over integer-binned features.
//!
//! The booster minimizes squared error: it starts from the target mean and
//! each round fits one regression tree to the current residuals, added with
//! learning-rate shrinkage. Trees grow leaf-wise (best gain first) up to
//! `num_leaves`, with the variance-gain criterion
//!
//! ```text
//! gain = S_L^2/(n_L + l2) + S_R^2/(n_R + l2) - S_P^2/(n_P + l2)
//! ```
//!
//! over residual sums `S` and occupancy counts `n`. Because features take
//! at most nine integer levels, candidate thresholds are just the midpoints
//! of adjacent observed values and split finding enumerates them exactly.
//! Leaf values are L1-shrunk regularized means.
//!
//! Three modes share the tree grower. `gbdt` is plain boosting with
//! optional row bagging and early stopping on a validation panel. `dart`
//! drops a random subset of existing trees when computing residuals, then
//! rescales so the ensemble stays an average (new tree weight `1/(k+1)`,
//! dropped weights times `k/(k+1)`). `goss` keeps the rows with the largest
//! gradients and a reweighted random sample of the rest. Dropout and
//! sampling draw from named per-round sub-streams of the config seed, so a
//! fixed `(data, config)` pair always yields a bit-identical booster, no
//! matter how many worker threads run split finding.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_sig17;
use crate::model::RankingModel;
use crate::panel::{FeatureMatrix, PanelEra, PanelSet};
use crate::rng::sub_rng;

/// Boosting flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostMode {
    Gbdt,
    Dart,
    Goss,
}

impl fmt::Display for BoostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoostMode::Gbdt => "gbdt",
            BoostMode::Dart => "dart",
            BoostMode::Goss => "goss",
        })
    }
}

impl FromStr for BoostMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gbdt" => Ok(BoostMode::Gbdt),
            "dart" => Ok(BoostMode::Dart),
            "goss" => Ok(BoostMode::Goss),
            other => Err(Error::Config(format!("unknown boosting mode {other:?}"))),
        }
    }
}

/// Booster hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoostConfig {
    pub mode: BoostMode,
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub num_leaves: usize,
    pub max_depth: usize,
    /// Minimum occupancy per leaf, in effective (weighted) rows.
    pub min_data_in_leaf: usize,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    /// Fraction of features offered to each tree.
    pub feature_fraction: f64,
    /// Fraction of rows per bag; bags redraw every `bagging_freq` rounds
    /// (gbdt mode only, 0 disables bagging).
    pub bagging_fraction: f64,
    pub bagging_freq: usize,
    /// dart: per-tree drop probability within a dropout round.
    pub drop_rate: f64,
    /// dart: probability that a round skips dropout entirely.
    pub skip_drop: f64,
    /// goss: fraction of rows kept by gradient magnitude (`a`).
    pub top_rate: f64,
    /// goss: fraction of remaining rows sampled randomly (`b`).
    pub other_rate: f64,
    /// gbdt: stop after this many rounds without validation improvement
    /// (0 disables; requires a validation panel).
    pub early_stopping_patience: usize,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            mode: BoostMode::Gbdt,
            n_estimators: 100,
            learning_rate: 0.1,
            num_leaves: 31,
            max_depth: 8,
            min_data_in_leaf: 20,
            lambda_l1: 0.0,
            lambda_l2: 0.0,
            feature_fraction: 1.0,
            bagging_fraction: 1.0,
            bagging_freq: 0,
            drop_rate: 0.1,
            skip_drop: 0.5,
            top_rate: 0.2,
            other_rate: 0.1,
            early_stopping_patience: 0,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.num_leaves < 2 {
            return bad(format!("num_leaves {} must be at least 2", self.num_leaves));
        }
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1".into());
        }
        if self.min_data_in_leaf < 1 {
            return bad("min_data_in_leaf must be at least 1".into());
        }
        if !(self.lambda_l1 >= 0.0 && self.lambda_l2 >= 0.0) {
            return bad("lambda_l1 and lambda_l2 must be non-negative".into());
        }
        for (name, v) in [
            ("feature_fraction", self.feature_fraction),
            ("bagging_fraction", self.bagging_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} {v} outside (0, 1]"));
            }
        }
        for (name, v) in [("drop_rate", self.drop_rate), ("skip_drop", self.skip_drop)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.mode == BoostMode::Goss {
            if !(self.top_rate > 0.0 && self.other_rate > 0.0) {
                return bad("top_rate and other_rate must be positive".into());
            }
            if self.top_rate + self.other_rate > 1.0 {
                return bad(format!(
                    "top_rate + other_rate = {} exceeds 1",
                    self.top_rate + self.other_rate
                ));
            }
        }
        Ok(())
    }
}

/// One tree node; splits send `value <= threshold` left.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A fitted regression tree, nodes stored in pre-order with the root at
/// index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    /// Ensemble multiplier; 1 except for dart-normalized trees.
    pub weight: f64,
}

impl Tree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    /// Depth of the deepest leaf; 0 for a single-leaf tree.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn evaluate(&self, features: &FeatureMatrix, row: usize) -> f64 {
        self.eval_columns(features.columns(), row)
    }

    fn eval_columns(&self, columns: &[Vec<i8>], row: usize) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if f64::from(columns[feature][row]) <= threshold { left } else { right };
                }
            }
        }
    }

    /// Index of the leaf `row` lands in (position within `nodes`).
    pub fn leaf_of(&self, features: &FeatureMatrix, row: usize) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { .. } => return at,
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if f64::from(features.get(row, feature)) <= threshold { left } else { right };
                }
            }
        }
    }
}

/// Regularized leaf value: `sign(S) * max(|S| - l1, 0) / (n + l2)` for a
/// weighted residual sum `S` over effective occupancy `n`.
pub fn leaf_value(sum: f64, count: f64, cfg: &BoostConfig) -> f64 {
    let shrunk = (sum.abs() - cfg.lambda_l1).max(0.0);
    if shrunk == 0.0 {
        0.0
    } else {
        sum.signum() * shrunk / (count + cfg.lambda_l2)
    }
}

/// Winning split of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitDecision {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy)]
struct SegSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
    left_sum: f64,
    left_wsum: f64,
}

/// Scans one feature for the best threshold within a row segment. Buckets
/// residual sums by feature level, then walks the cuts between adjacent
/// observed levels in ascending order, keeping the first strictly best
/// gain. All arithmetic follows the documented gain formula term for term.
#[allow(clippy::too_many_arguments)]
fn scan_feature(
    column: &[i8],
    residuals: &[f64],
    rows: &[u32],
    wts: Option<&[f64]>,
    lo: usize,
    hi: usize,
    feature: usize,
    cfg: &BoostConfig,
    parent_sum: f64,
    parent_wsum: f64,
) -> Option<SegSplit> {
    let mut sums = [0.0f64; 9];
    let mut wsums = [0.0f64; 9];
    let mut counts = [0u32; 9];
    for i in lo..hi {
        let row = rows[i] as usize;
        let w = wts.map_or(1.0, |w| w[i]);
        let bucket = (column[row] + 4) as usize;
        sums[bucket] += w * residuals[row];
        wsums[bucket] += w;
        counts[bucket] += 1;
    }
    let observed: Vec<usize> = (0..9).filter(|&b| counts[b] > 0).collect();

    let l2 = cfg.lambda_l2;
    let min_leaf = cfg.min_data_in_leaf as f64;
    let parent_term = parent_sum * parent_sum / (parent_wsum + l2);
    let mut best: Option<SegSplit> = None;
    let mut left_sum = 0.0;
    let mut left_wsum = 0.0;
    for pair in observed.windows(2) {
        left_sum += sums[pair[0]];
        left_wsum += wsums[pair[0]];
        let right_sum = parent_sum - left_sum;
        let right_wsum = parent_wsum - left_wsum;
        if left_wsum < min_leaf || right_wsum < min_leaf {
            continue;
        }
        let gain = left_sum * left_sum / (left_wsum + l2)
            + right_sum * right_sum / (right_wsum + l2)
            - parent_term;
        if best.is_none_or(|b| gain > b.gain) {
            let threshold = ((pair[0] as f64 - 4.0) + (pair[1] as f64 - 4.0)) / 2.0;
            best = Some(SegSplit { feature, threshold, gain, left_sum, left_wsum });
        }
    }
    best
}

/// Best split over a candidate feature set within `rows[lo..hi]`. Features
/// are scanned in ascending order and ties keep the earlier feature (and,
/// within a feature, the smaller threshold). Large segments scan features
/// in parallel; the reduction runs in fixed feature order either way, so
/// the result does not depend on thread count.
#[allow(clippy::too_many_arguments)]
fn best_split_in_segment(
    columns: &[Vec<i8>],
    residuals: &[f64],
    rows: &[u32],
    wts: Option<&[f64]>,
    lo: usize,
    hi: usize,
    features: &[usize],
    cfg: &BoostConfig,
    parent_sum: f64,
    parent_wsum: f64,
) -> Option<SegSplit> {
    let scan = |&f: &usize| {
        scan_feature(&columns[f], residuals, rows, wts, lo, hi, f, cfg, parent_sum, parent_wsum)
    };
    let per_feature: Vec<Option<SegSplit>> = if hi - lo >= 8192 && features.len() >= 8 {
        features.par_iter().map(scan).collect()
    } else {
        features.iter().map(scan).collect()
    };

    let mut best: Option<SegSplit> = None;
    for candidate in per_feature.into_iter().flatten() {
        if best.is_none_or(|b| candidate.gain > b.gain) {
            best = Some(candidate);
        }
    }
    best.filter(|b| b.gain > 0.0)
}

/// Best `(feature, threshold, gain)` over a whole dataset, or `None` when
/// no split has positive gain and admissible child occupancy. `weights`
/// scale both residual sums and effective occupancy counts.
pub fn find_best_split(
    features: &FeatureMatrix,
    residuals: &[f64],
    weights: Option<&[f64]>,
    cfg: &BoostConfig,
) -> Result<Option<SplitDecision>> {
    cfg.validate()?;
    let n = features.n_rows();
    if residuals.len() != n {
        return Err(Error::Shape(format!(
            "{} residuals for {n} rows",
            residuals.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Shape(format!("{} weights for {n} rows", w.len())));
        }
    }
    let rows: Vec<u32> = (0..n as u32).collect();
    let mut sum = 0.0;
    let mut wsum = 0.0;
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        sum += w * residuals[i];
        wsum += w;
    }
    let all: Vec<usize> = (0..features.n_cols()).collect();
    Ok(best_split_in_segment(
        features.columns(),
        residuals,
        &rows,
        weights,
        0,
        n,
        &all,
        cfg,
        sum,
        wsum,
    )
    .map(|s| SplitDecision { feature: s.feature, threshold: s.threshold, gain: s.gain }))
}

enum TempNode {
    Leaf { sum: f64, wsum: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

struct Candidate {
    gain: f64,
    seq: u64,
    node: usize,
    lo: usize,
    hi: usize,
    depth: usize,
    feature: usize,
    threshold: f64,
    left_sum: f64,
    left_wsum: f64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // Max-heap: higher gain wins, earlier discovery breaks ties.
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .partial_cmp(&other.gain)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Stable-partitions `rows[lo..hi]` (and aligned weights) around the
/// threshold; returns the index where the right side starts.
fn partition_segment(
    rows: &mut [u32],
    wts: &mut Option<Vec<f64>>,
    column: &[i8],
    lo: usize,
    hi: usize,
    threshold: f64,
) -> usize {
    let mut left_rows = Vec::with_capacity(hi - lo);
    let mut right_rows = Vec::with_capacity(hi - lo);
    let mut left_w = Vec::new();
    let mut right_w = Vec::new();
    for i in lo..hi {
        let goes_left = f64::from(column[rows[i] as usize]) <= threshold;
        if goes_left {
            left_rows.push(rows[i]);
        } else {
            right_rows.push(rows[i]);
        }
        if let Some(w) = wts {
            if goes_left {
                left_w.push(w[i]);
            } else {
                right_w.push(w[i]);
            }
        }
    }
    let mid = lo + left_rows.len();
    rows[lo..mid].copy_from_slice(&left_rows);
    rows[mid..hi].copy_from_slice(&right_rows);
    if let Some(w) = wts {
        w[lo..mid].copy_from_slice(&left_w);
        w[mid..hi].copy_from_slice(&right_w);
    }
    mid
}

/// Grows one tree leaf-wise on `residuals` over the given row subset.
fn grow_tree(
    columns: &[Vec<i8>],
    residuals: &[f64],
    mut rows: Vec<u32>,
    mut wts: Option<Vec<f64>>,
    features: &[usize],
    cfg: &BoostConfig,
) -> Tree {
    let n = rows.len();
    let mut sum = 0.0;
    let mut wsum = 0.0;
    for i in 0..n {
        let w = wts.as_ref().map_or(1.0, |w| w[i]);
        sum += w * residuals[rows[i] as usize];
        wsum += w;
    }

    let mut temp: Vec<TempNode> = vec![TempNode::Leaf { sum, wsum }];
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::new();
    let mut seq = 0u64;

    let push_candidate =
        |heap: &mut BinaryHeap<Candidate>, seq: &mut u64, rows: &[u32], wts: &Option<Vec<f64>>,
         node: usize, lo: usize, hi: usize, depth: usize, sum: f64, wsum: f64| {
            if wsum < 2.0 * cfg.min_data_in_leaf as f64 {
                return;
            }
            if let Some(s) = best_split_in_segment(
                columns, residuals, rows, wts.as_deref(), lo, hi, features, cfg, sum, wsum,
            ) {
                heap.push(Candidate {
                    gain: s.gain,
                    seq: *seq,
                    node,
                    lo,
                    hi,
                    depth,
                    feature: s.feature,
                    threshold: s.threshold,
                    left_sum: s.left_sum,
                    left_wsum: s.left_wsum,
                });
                *seq += 1;
            }
        };

    push_candidate(&mut heap, &mut seq, &rows, &wts, 0, 0, n, 0, sum, wsum);
    let mut leaves = 1;
    while leaves < cfg.num_leaves {
        let Some(c) = heap.pop() else { break };
        let mid = partition_segment(&mut rows, &mut wts, &columns[c.feature], c.lo, c.hi, c.threshold);

        let (parent_sum, parent_wsum) = match temp[c.node] {
            TempNode::Leaf { sum, wsum } => (sum, wsum),
            TempNode::Split { .. } => unreachable!("candidates always point at leaves"),
        };
        let right_sum = parent_sum - c.left_sum;
        let right_wsum = parent_wsum - c.left_wsum;

        let left_idx = temp.len();
        temp.push(TempNode::Leaf { sum: c.left_sum, wsum: c.left_wsum });
        let right_idx = temp.len();
        temp.push(TempNode::Leaf { sum: right_sum, wsum: right_wsum });
        temp[c.node] = TempNode::Split {
            feature: c.feature,
            threshold: c.threshold,
            left: left_idx,
            right: right_idx,
        };
        leaves += 1;

        let child_depth = c.depth + 1;
        if child_depth < cfg.max_depth {
            push_candidate(&mut heap, &mut seq, &rows, &wts, left_idx, c.lo, mid, child_depth, c.left_sum, c.left_wsum);
            push_candidate(&mut heap, &mut seq, &rows, &wts, right_idx, mid, c.hi, child_depth, right_sum, right_wsum);
        }
    }

    // Emit in pre-order so node order matches the text serialization.
    fn emit(temp: &[TempNode], at: usize, out: &mut Vec<TreeNode>, cfg: &BoostConfig) -> usize {
        let idx = out.len();
        match temp[at] {
            TempNode::Leaf { sum, wsum } => {
                out.push(TreeNode::Leaf { value: leaf_value(sum, wsum, cfg) });
            }
            TempNode::Split { feature, threshold, left, right } => {
                out.push(TreeNode::Leaf { value: 0.0 });
                let l = emit(temp, left, out, cfg);
                let r = emit(temp, right, out, cfg);
                out[idx] = TreeNode::Split { feature, threshold, left: l, right: r };
            }
        }
        idx
    }
    let mut nodes = Vec::with_capacity(temp.len());
    emit(&temp, 0, &mut nodes, cfg);
    Tree { nodes, weight: 1.0 }
}

/// Splits rows into the large-gradient top set (weight 1) and a random
/// reweighted sample of the rest, per the one-sided sampling scheme: the
/// top `ceil(a*n)` rows by |gradient| are kept, `ceil(b*n)` of the others
/// are drawn uniformly with weight `(1-a)/b`. Returns ascending row
/// indices with aligned weights. Falls back to all rows at weight 1 when
/// the two groups would not fit.
pub fn goss_sample(
    gradients: &[f64],
    top_rate: f64,
    other_rate: f64,
    rng: &mut impl Rng,
) -> (Vec<u32>, Vec<f64>) {
    let n = gradients.len();
    let top = (top_rate * n as f64).ceil() as usize;
    let rest = (other_rate * n as f64).ceil() as usize;
    if top == 0 || rest == 0 || top + rest > n {
        return ((0..n as u32).collect(), vec![1.0; n]);
    }

    let mut by_magnitude: Vec<u32> = (0..n as u32).collect();
    by_magnitude.sort_by(|&a, &b| {
        gradients[b as usize]
            .abs()
            .partial_cmp(&gradients[a as usize].abs())
            .expect("finite gradients")
            .then(a.cmp(&b))
    });

    let weight = (1.0 - top_rate) / other_rate;
    let mut selected: Vec<(u32, f64)> =
        by_magnitude[..top].iter().map(|&r| (r, 1.0)).collect();
    let remainder = &by_magnitude[top..];
    for pick in sample(rng, remainder.len(), rest) {
        selected.push((remainder[pick], weight));
    }
    selected.sort_unstable_by_key(|&(r, _)| r);
    selected.into_iter().unzip()
}

/// A fitted boosting ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Booster {
    pub mode: BoostMode,
    pub f0: f64,
    pub learning_rate: f64,
    n_features: usize,
    trees: Vec<Tree>,
}

fn flatten(panel: &PanelSet, target: &str) -> Result<(Vec<Vec<i8>>, Vec<f64>)> {
    let mut columns: Vec<Vec<i8>> = vec![Vec::new(); panel.n_features()];
    let mut y = Vec::new();
    for era in panel.eras() {
        let t = era
            .target(target)
            .ok_or_else(|| Error::Data(format!("target {target} missing in era {}", era.era())))?;
        y.extend_from_slice(t);
        for (c, column) in columns.iter_mut().enumerate() {
            column.extend_from_slice(era.features().column(c));
        }
    }
    Ok((columns, y))
}

fn draw_features(n_features: usize, cfg: &BoostConfig, round: usize) -> Vec<usize> {
    if cfg.feature_fraction >= 1.0 {
        return (0..n_features).collect();
    }
    let amount = ((cfg.feature_fraction * n_features as f64).ceil() as usize).clamp(1, n_features);
    let mut rng = sub_rng(cfg.seed, "feature-fraction", round as u64);
    let mut features: Vec<usize> = sample(&mut rng, n_features, amount).into_iter().collect();
    features.sort_unstable();
    features
}

fn l2_loss(pred: &[f64], y: &[f64]) -> f64 {
    let sum: f64 = pred.iter().zip(y).map(|(p, t)| (t - p) * (t - p)).sum();
    sum / y.len() as f64
}

impl Booster {
    /// Fits a booster to `target` over the whole training panel. In gbdt
    /// mode with `early_stopping_patience > 0` and a validation panel, the
    /// ensemble is cut back to the round with the best validation loss once
    /// `patience` rounds pass without improvement.
    pub fn train(
        train: &PanelSet,
        target: &str,
        cfg: &BoostConfig,
        validation: Option<&PanelSet>,
    ) -> Result<Booster> {
        cfg.validate()?;
        let (columns, y) = flatten(train, target)?;
        let n = y.len();
        if n == 0 {
            return Err(Error::Data("training panel has no rows".into()));
        }
        let n_features = columns.len();
        let f0 = y.iter().sum::<f64>() / n as f64;

        let early = cfg.mode == BoostMode::Gbdt
            && cfg.early_stopping_patience > 0
            && validation.is_some();
        let val = match validation {
            Some(v) if early => Some(flatten(v, target)?),
            _ => None,
        };
        let mut val_pred = val.as_ref().map(|(_, vy)| vec![f0; vy.len()]);

        let mut pred = vec![f0; n];
        let mut trees: Vec<Tree> = Vec::new();
        let mut bag: Option<Vec<u32>> = None;
        let mut best_loss = f64::INFINITY;
        let mut best_round = 0usize;
        let mut stale = 0usize;

        for round in 0..cfg.n_estimators {
            let features = draw_features(n_features, cfg, round);
            let round64 = round as u64;

            let plain_round = |pred: &[f64], rows: Vec<u32>, wts: Option<Vec<f64>>| {
                let residuals: Vec<f64> = y.iter().zip(pred).map(|(t, p)| t - p).collect();
                grow_tree(&columns, &residuals, rows, wts, &features, cfg)
            };

            match cfg.mode {
                BoostMode::Gbdt => {
                    if cfg.bagging_freq > 0
                        && cfg.bagging_fraction < 1.0
                        && (bag.is_none() || round % cfg.bagging_freq == 0)
                    {
                        let amount =
                            ((cfg.bagging_fraction * n as f64).ceil() as usize).clamp(1, n);
                        let mut rng = sub_rng(cfg.seed, "bagging", round64);
                        let mut drawn: Vec<u32> =
                            sample(&mut rng, n, amount).into_iter().map(|i| i as u32).collect();
                        drawn.sort_unstable();
                        bag = Some(drawn);
                    }
                    let rows = bag.clone().unwrap_or_else(|| (0..n as u32).collect());
                    let tree = plain_round(&pred, rows, None);
                    for (i, p) in pred.iter_mut().enumerate() {
                        *p += cfg.learning_rate * tree.eval_columns(&columns, i);
                    }
                    if let (Some((vc, _)), Some(vp)) = (&val, &mut val_pred) {
                        for (i, p) in vp.iter_mut().enumerate() {
                            *p += cfg.learning_rate * tree.eval_columns(vc, i);
                        }
                    }
                    trees.push(tree);

                    if early {
                        let (_, vy) = val.as_ref().expect("validation flattened");
                        let loss = l2_loss(val_pred.as_ref().expect("validation predictions"), vy);
                        if loss < best_loss {
                            best_loss = loss;
                            best_round = trees.len() - 1;
                            stale = 0;
                        } else {
                            stale += 1;
                            if stale >= cfg.early_stopping_patience {
                                trees.truncate(best_round + 1);
                                break;
                            }
                        }
                    }
                }
                BoostMode::Goss => {
                    let gradients: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
                    let mut rng = sub_rng(cfg.seed, "goss", round64);
                    let (rows, wts) = goss_sample(&gradients, cfg.top_rate, cfg.other_rate, &mut rng);
                    let tree = grow_tree(&columns, &gradients, rows, Some(wts), &features, cfg);
                    for (i, p) in pred.iter_mut().enumerate() {
                        *p += cfg.learning_rate * tree.eval_columns(&columns, i);
                    }
                    trees.push(tree);
                }
                BoostMode::Dart => {
                    let mut rng = sub_rng(cfg.seed, "dart", round64);
                    let skip = trees.is_empty() || rng.random::<f64>() < cfg.skip_drop;
                    if skip {
                        let tree = plain_round(&pred, (0..n as u32).collect(), None);
                        for (i, p) in pred.iter_mut().enumerate() {
                            *p += cfg.learning_rate * tree.eval_columns(&columns, i);
                        }
                        trees.push(tree);
                    } else {
                        let mut dropped: Vec<usize> = Vec::new();
                        for t in 0..trees.len() {
                            if rng.random::<f64>() < cfg.drop_rate {
                                dropped.push(t);
                            }
                        }
                        if dropped.is_empty() {
                            dropped.push(rng.random_range(0..trees.len()));
                        }
                        let k = dropped.len() as f64;

                        let mut drop_contrib = vec![0.0; n];
                        for &t in &dropped {
                            let w = cfg.learning_rate * trees[t].weight;
                            for (i, d) in drop_contrib.iter_mut().enumerate() {
                                *d += w * trees[t].eval_columns(&columns, i);
                            }
                        }
                        let residuals: Vec<f64> = y
                            .iter()
                            .zip(&pred)
                            .zip(&drop_contrib)
                            .map(|((t, p), d)| t - (p - d))
                            .collect();
                        let mut tree = grow_tree(
                            &columns,
                            &residuals,
                            (0..n as u32).collect(),
                            None,
                            &features,
                            cfg,
                        );

                        let scale = k / (k + 1.0);
                        for &t in &dropped {
                            trees[t].weight *= scale;
                        }
                        tree.weight = 1.0 / (k + 1.0);
                        for (i, p) in pred.iter_mut().enumerate() {
                            *p += cfg.learning_rate * tree.weight * tree.eval_columns(&columns, i)
                                - drop_contrib[i] / (k + 1.0);
                        }
                        trees.push(tree);
                    }
                }
            }
        }

        Ok(Booster { mode: cfg.mode, f0, learning_rate: cfg.learning_rate, n_features, trees })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// A copy keeping only the first `k` trees.
    pub fn truncated(&self, k: usize) -> Booster {
        let mut out = self.clone();
        out.trees.truncate(k);
        out
    }

    /// Scores an era, optionally skipping the first `prune_first` trees
    /// (capped at half the ensemble, rounded down).
    pub fn predict(&self, era: &PanelEra, prune_first: usize) -> Result<Vec<f64>> {
        let max_allowed = self.trees.len() / 2;
        if prune_first > max_allowed {
            return Err(Error::PruneCap {
                requested: prune_first,
                n_trees: self.trees.len(),
                max_allowed,
            });
        }
        if era.features().n_cols() < self.n_features {
            return Err(Error::Shape(format!(
                "booster uses {} features, era {} has only {}",
                self.n_features,
                era.era(),
                era.features().n_cols()
            )));
        }
        let columns = era.features().columns();
        Ok((0..era.n_rows())
            .map(|row| {
                let mut score = self.f0;
                for tree in &self.trees[prune_first..] {
                    score += self.learning_rate * tree.weight * tree.eval_columns(columns, row);
                }
                score
            })
            .collect())
    }

    /// Versioned text form: a header line, then each tree as a `tree`
    /// line followed by its nodes in pre-order.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "tempora-booster v1 mode={} f0={} lr={}\n",
            self.mode,
            fmt_sig17(self.f0),
            fmt_sig17(self.learning_rate)
        );
        fn write_node(nodes: &[TreeNode], at: usize, out: &mut String) {
            match nodes[at] {
                TreeNode::Leaf { value } => {
                    out.push_str(&format!("leaf({})\n", fmt_sig17(value)));
                }
                TreeNode::Split { feature, threshold, left, right } => {
                    out.push_str(&format!("node({feature},{})\n", fmt_sig17(threshold)));
                    write_node(nodes, left, out);
                    write_node(nodes, right, out);
                }
            }
        }
        for tree in &self.trees {
            out.push_str(&format!("tree weight={}\n", fmt_sig17(tree.weight)));
            write_node(&tree.nodes, 0, &mut out);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Booster> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i as u64 + 1, l.trim_end()))
            .filter(|(_, l)| !l.is_empty())
            .peekable();

        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, message: "empty booster file".into() })?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        let header_err = |message: String| Error::Parse { line: 1, message };
        if tokens.len() != 5 || tokens[0] != "tempora-booster" || tokens[1] != "v1" {
            return Err(header_err(format!("unrecognized header {header:?}")));
        }
        let field = |token: &str, prefix: &str| -> Result<String> {
            token
                .strip_prefix(prefix)
                .map(str::to_string)
                .ok_or_else(|| header_err(format!("expected {prefix}<value>, got {token:?}")))
        };
        let mode: BoostMode = field(tokens[2], "mode=")?.parse()?;
        let f0: f64 = field(tokens[3], "f0=")?
            .parse()
            .map_err(|_| header_err("bad f0".into()))?;
        let learning_rate: f64 = field(tokens[4], "lr=")?
            .parse()
            .map_err(|_| header_err("bad lr".into()))?;

        type Lines<'a> = std::iter::Peekable<Box<dyn Iterator<Item = (u64, &'a str)> + 'a>>;
        fn parse_node(lines: &mut Lines<'_>, nodes: &mut Vec<TreeNode>) -> Result<usize> {
            let (line, text) = lines
                .next()
                .ok_or(Error::Parse { line: 0, message: "booster text ends mid-tree".into() })?;
            let bad = |message: String| Error::Parse { line, message };
            if let Some(body) = text.strip_prefix("leaf(").and_then(|r| r.strip_suffix(')')) {
                let value: f64 = body.parse().map_err(|_| bad(format!("bad leaf value {body:?}")))?;
                nodes.push(TreeNode::Leaf { value });
                Ok(nodes.len() - 1)
            } else if let Some(body) = text.strip_prefix("node(").and_then(|r| r.strip_suffix(')')) {
                let (f, t) = body
                    .split_once(',')
                    .ok_or_else(|| bad(format!("bad split node {body:?}")))?;
                let feature: usize =
                    f.parse().map_err(|_| bad(format!("bad feature index {f:?}")))?;
                let threshold: f64 =
                    t.parse().map_err(|_| bad(format!("bad threshold {t:?}")))?;
                let at = nodes.len();
                nodes.push(TreeNode::Leaf { value: 0.0 });
                let left = parse_node(lines, nodes)?;
                let right = parse_node(lines, nodes)?;
                nodes[at] = TreeNode::Split { feature, threshold, left, right };
                Ok(at)
            } else {
                Err(bad(format!("expected node(...) or leaf(...), got {text:?}")))
            }
        }

        let boxed: Box<dyn Iterator<Item = (u64, &str)>> = Box::new(lines);
        let mut lines: Lines<'_> = boxed.peekable();
        let mut trees = Vec::new();
        while let Some(&(line, text)) = lines.peek() {
            let weight = text
                .strip_prefix("tree weight=")
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("expected tree weight=..., got {text:?}"),
                })?
                .parse::<f64>()
                .map_err(|_| Error::Parse { line, message: "bad tree weight".into() })?;
            lines.next();
            let mut nodes = Vec::new();
            parse_node(&mut lines, &mut nodes)?;
            trees.push(Tree { nodes, weight });
        }

        let n_features = trees
            .iter()
            .flat_map(|t| t.nodes.iter())
            .filter_map(|n| match n {
                TreeNode::Split { feature, .. } => Some(feature + 1),
                TreeNode::Leaf { .. } => None,
            })
            .max()
            .unwrap_or(0);
        Ok(Booster { mode, f0, learning_rate, n_features, trees })
    }
}

impl RankingModel for Booster {
    fn predict(&self, era: &PanelEra) -> Result<Vec<f64>> {
        Booster::predict(self, era, 0)
    }
}
