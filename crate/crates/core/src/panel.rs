//! The era-grouped panel data model.
//!
//! A [`PanelSet`] is an ordered sequence of weekly [`PanelEra`]s. Each era
//! holds one cross-section of stocks: opaque row ids, integer-binned features
//! stored column-major, and zero or more named target vectors. Eras are
//! numbered from 1; era `k` corresponds to the Friday `2003-01-03 + 7*(k-1)`
//! days, so era ids and dates convert losslessly in both directions.
//!
//! Features are stored already centered: raw bins `0..=4` shifted down by 2
//! to `-2..=2`. Targets are the five binned levels `0, 0.25, 0.5, 0.75, 1`
//! shifted down by `0.5`. [`normalize_features`] and [`normalize_targets`]
//! perform exactly that shift on raw data. Derived product columns (names
//! starting with `p_`) may take values in `-4..=4`; everything else must stay
//! within `-2..=2`. [`validate_panel`] reports each violation of these rules
//! with its coordinates instead of failing on the first one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{Days, NaiveDate};

use crate::error::{Error, Result};
use crate::features::PRODUCT_PREFIX;

/// Centered target levels a panel may contain.
pub const TARGET_LEVELS: [f64; 5] = [-0.5, -0.25, 0.0, 0.25, 0.5];

/// Raw (file-level, uncentered) target levels.
pub const RAW_TARGET_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// 1-based weekly era index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EraId(u32);

impl EraId {
    /// Wraps a week index. Valid eras are `>= 1`; zero is accepted here so
    /// that validators can report it, but every date conversion rejects it.
    pub const fn new(index: u32) -> Self {
        EraId(index)
    }

    pub const fn get(self) -> u32 {
        self.0
    }

    /// The era `n` weeks later.
    pub const fn plus(self, weeks: u32) -> Self {
        EraId(self.0 + weeks)
    }

    /// The era `n` weeks earlier, saturating at era 0 (invalid) rather than
    /// wrapping.
    pub const fn minus(self, weeks: u32) -> Self {
        EraId(self.0.saturating_sub(weeks))
    }
}

impl fmt::Display for EraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn anchor_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2003, 1, 3).expect("valid anchor date")
}

/// Calendar date of an era: `2003-01-03 + 7 * (era - 1)` days.
pub fn era_to_date(era: EraId) -> Result<NaiveDate> {
    if era.get() == 0 {
        return Err(Error::Schema("era ids start at 1".into()));
    }
    anchor_date()
        .checked_add_days(Days::new(7 * u64::from(era.get() - 1)))
        .ok_or_else(|| Error::Schema(format!("era {era} is out of the calendar range")))
}

/// Inverse of [`era_to_date`]; the date must lie on the weekly grid.
pub fn era_of_date(date: NaiveDate) -> Result<EraId> {
    let days = (date - anchor_date()).num_days();
    if days < 0 || days % 7 != 0 {
        return Err(Error::Schema(format!(
            "{date} is not a whole number of weeks after 2003-01-03"
        )));
    }
    Ok(EraId::new(u32::try_from(days / 7).map_err(|_| {
        Error::Schema(format!("{date} is out of the era range"))
    })? + 1))
}

/// Centers raw integer feature bins `0..=4` to `-2..=2`.
///
/// Input and output are column-major. A value outside `0..=4` is a schema
/// error naming the offending column and row.
pub fn normalize_features(raw_columns: &[Vec<u8>]) -> Result<Vec<Vec<i8>>> {
    raw_columns
        .iter()
        .enumerate()
        .map(|(col, column)| {
            column
                .iter()
                .enumerate()
                .map(|(row, &v)| {
                    if v > 4 {
                        Err(Error::Schema(format!(
                            "feature bin {v} at column {col}, row {row} is outside 0..=4"
                        )))
                    } else {
                        Ok(v as i8 - 2)
                    }
                })
                .collect()
        })
        .collect()
}

/// Centers raw target levels `{0, 0.25, 0.5, 0.75, 1}` to `-0.5..=0.5`.
pub fn normalize_targets(raw: &[f64]) -> Result<Vec<f64>> {
    raw.iter()
        .enumerate()
        .map(|(row, &v)| {
            if RAW_TARGET_LEVELS.contains(&v) {
                Ok(v - 0.5)
            } else {
                Err(Error::Schema(format!(
                    "target value {v} at row {row} is not one of the five levels"
                )))
            }
        })
        .collect()
}

/// Largest absolute value a column may contain, by column name. Product
/// columns are products of two centered bins, hence `-4..=4`.
pub fn feature_bound(name: &str) -> i8 {
    if name.starts_with(PRODUCT_PREFIX) {
        4
    } else {
        2
    }
}

/// Integer feature matrix stored as a list of columns of equal length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMatrix {
    n_rows: usize,
    columns: Vec<Vec<i8>>,
}

impl FeatureMatrix {
    pub fn from_columns(columns: Vec<Vec<i8>>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().position(|c| c.len() != n_rows) {
            return Err(Error::Shape(format!(
                "feature column {bad} has {} rows, expected {n_rows}",
                columns[bad].len()
            )));
        }
        Ok(FeatureMatrix { n_rows, columns })
    }

    /// An empty matrix with a definite row count but no columns.
    pub fn with_rows(n_rows: usize) -> Self {
        FeatureMatrix {
            n_rows,
            columns: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, col: usize) -> &[i8] {
        &self.columns[col]
    }

    pub fn columns(&self) -> &[Vec<i8>] {
        &self.columns
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.columns[col][row]
    }
}

/// One weekly cross-section.
///
/// Construction only enforces the structural rules that keep indexing safe
/// (ids, feature columns and target vectors all have the same length).
/// Value-level rules are the domain of [`validate_panel`].
#[derive(Debug, Clone)]
pub struct PanelEra {
    era: EraId,
    ids: Vec<String>,
    features: FeatureMatrix,
    targets: BTreeMap<String, Vec<f64>>,
    audit: Option<Arc<TargetAudit>>,
}

impl PanelEra {
    pub fn new(
        era: EraId,
        ids: Vec<String>,
        features: FeatureMatrix,
        targets: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self> {
        if features.n_rows() != ids.len() {
            return Err(Error::Shape(format!(
                "era {era}: {} ids but {} feature rows",
                ids.len(),
                features.n_rows()
            )));
        }
        for (name, values) in &targets {
            if values.len() != ids.len() {
                return Err(Error::Shape(format!(
                    "era {era}: target {name} has {} values for {} rows",
                    values.len(),
                    ids.len()
                )));
            }
        }
        Ok(PanelEra {
            era,
            ids,
            features,
            targets,
            audit: None,
        })
    }

    pub fn era(&self) -> EraId {
        self.era
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    /// The named target vector, if this era has it.
    ///
    /// When a [`TargetAudit`] is installed on the owning panel, every call
    /// for a watched era is recorded against the audit.
    pub fn target(&self, name: &str) -> Option<&[f64]> {
        let found = self.targets.get(name).map(Vec::as_slice);
        if let (Some(audit), Some(_)) = (&self.audit, found) {
            audit.record_read(self.era, name);
        }
        found
    }

    /// Presence check that deliberately bypasses the audit: knowing that a
    /// target exists is not reading it.
    pub fn has_target(&self, name: &str) -> bool {
        self.targets.contains_key(name)
    }

    pub fn target_names(&self) -> impl Iterator<Item = &str> {
        self.targets.keys().map(String::as_str)
    }

    /// The same era with its feature matrix replaced; ids, targets and any
    /// installed audit are carried over unchanged.
    pub fn with_features(&self, features: FeatureMatrix) -> Result<Self> {
        if features.n_rows() != self.ids.len() {
            return Err(Error::Shape(format!(
                "era {}: replacement features have {} rows, expected {}",
                self.era,
                features.n_rows(),
                self.ids.len()
            )));
        }
        Ok(PanelEra {
            era: self.era,
            ids: self.ids.clone(),
            features,
            targets: self.targets.clone(),
            audit: self.audit.clone(),
        })
    }

    fn with_audit(&self, audit: Arc<TargetAudit>) -> Self {
        PanelEra {
            era: self.era,
            ids: self.ids.clone(),
            features: self.features.clone(),
            targets: self.targets.clone(),
            audit: Some(audit),
        }
    }
}

impl PartialEq for PanelEra {
    fn eq(&self, other: &Self) -> bool {
        // The audit handle is bookkeeping, not data.
        self.era == other.era
            && self.ids == other.ids
            && self.features == other.features
            && self.targets == other.targets
    }
}

/// An ordered panel: strictly increasing eras over a fixed feature schema.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSet {
    feature_names: Vec<String>,
    eras: Vec<PanelEra>,
}

impl PanelSet {
    pub fn new(feature_names: Vec<String>, eras: Vec<PanelEra>) -> Result<Self> {
        for era in &eras {
            if era.features.n_cols() != feature_names.len() {
                return Err(Error::Shape(format!(
                    "era {} has {} feature columns, schema has {}",
                    era.era,
                    era.features.n_cols(),
                    feature_names.len()
                )));
            }
        }
        for pair in eras.windows(2) {
            if pair[0].era >= pair[1].era {
                return Err(Error::Data(format!(
                    "eras must strictly increase, found {} then {}",
                    pair[0].era, pair[1].era
                )));
            }
        }
        Ok(PanelSet {
            feature_names,
            eras,
        })
    }

    /// Builds without any consistency checks. Intended for constructing
    /// deliberately broken panels to exercise [`validate_panel`]; real code
    /// paths should use [`PanelSet::new`].
    pub fn new_unchecked(feature_names: Vec<String>, eras: Vec<PanelEra>) -> Self {
        PanelSet {
            feature_names,
            eras,
        }
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn eras(&self) -> &[PanelEra] {
        &self.eras
    }

    pub fn is_empty(&self) -> bool {
        self.eras.is_empty()
    }

    pub fn first_era(&self) -> Option<EraId> {
        self.eras.first().map(PanelEra::era)
    }

    pub fn last_era(&self) -> Option<EraId> {
        self.eras.last().map(PanelEra::era)
    }

    /// Looks up an era by id.
    pub fn era(&self, id: EraId) -> Option<&PanelEra> {
        self.eras
            .binary_search_by_key(&id, PanelEra::era)
            .ok()
            .map(|i| &self.eras[i])
    }

    /// All eras with `id <= last`, in order.
    pub fn eras_up_to(&self, last: EraId) -> &[PanelEra] {
        let end = self.eras.partition_point(|e| e.era <= last);
        &self.eras[..end]
    }

    /// A copy of this panel with a target-read audit installed on every era.
    pub fn with_target_audit(&self, audit: Arc<TargetAudit>) -> PanelSet {
        PanelSet {
            feature_names: self.feature_names.clone(),
            eras: self
                .eras
                .iter()
                .map(|e| e.with_audit(Arc::clone(&audit)))
                .collect(),
        }
    }

    /// Marks an era's targets as fair game for the installed audit (no-op
    /// without one). Called by scoring code immediately before it consumes
    /// the realized target of that era.
    pub fn permit_target(&self, era: EraId) {
        if let Some(e) = self.era(era) {
            if let Some(audit) = &e.audit {
                audit.permit(era);
            }
        }
    }
}

/// Records target reads of watched eras, distinguishing reads that happen
/// before the era was explicitly permitted (leaks) from reads after.
#[derive(Debug)]
pub struct TargetAudit {
    watched: BTreeSet<EraId>,
    permitted: Mutex<BTreeSet<EraId>>,
    violations: Mutex<Vec<TargetAccess>>,
    permitted_reads: AtomicUsize,
}

/// One offending read: which era's target was touched, and which target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetAccess {
    pub era: EraId,
    pub target: String,
}

impl TargetAudit {
    pub fn watching(eras: impl IntoIterator<Item = EraId>) -> Arc<Self> {
        Arc::new(TargetAudit {
            watched: eras.into_iter().collect(),
            permitted: Mutex::new(BTreeSet::new()),
            violations: Mutex::new(Vec::new()),
            permitted_reads: AtomicUsize::new(0),
        })
    }

    pub fn permit(&self, era: EraId) {
        self.permitted.lock().expect("audit lock").insert(era);
    }

    fn record_read(&self, era: EraId, target: &str) {
        if !self.watched.contains(&era) {
            return;
        }
        if self.permitted.lock().expect("audit lock").contains(&era) {
            self.permitted_reads.fetch_add(1, Ordering::Relaxed);
        } else {
            self.violations.lock().expect("audit lock").push(TargetAccess {
                era,
                target: target.to_string(),
            });
        }
    }

    pub fn violations(&self) -> Vec<TargetAccess> {
        self.violations.lock().expect("audit lock").clone()
    }

    /// How many watched-era reads happened after their permit; a sanity
    /// signal that the audited code did consume targets at all.
    pub fn permitted_read_count(&self) -> usize {
        self.permitted_reads.load(Ordering::Relaxed)
    }
}

/// One broken invariant, with as much position information as applies.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub era: Option<EraId>,
    pub row: Option<usize>,
    pub column: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(era) = self.era {
            write!(f, "era {era}: ")?;
        }
        if let Some(row) = self.row {
            write!(f, "row {row}: ")?;
        }
        if let Some(col) = &self.column {
            write!(f, "column {col}: ")?;
        }
        write!(f, "{}", self.message)
    }
}

fn violation(
    era: Option<EraId>,
    row: Option<usize>,
    column: Option<&str>,
    message: String,
) -> Violation {
    Violation {
        era,
        row,
        column: column.map(str::to_string),
        message,
    }
}

/// Checks every panel invariant and returns all violations found; an empty
/// list means the panel is well-formed.
pub fn validate_panel(panel: &PanelSet) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut prev: Option<EraId> = None;
    for era in panel.eras() {
        if era.era().get() == 0 {
            out.push(violation(Some(era.era()), None, None, "era ids start at 1".into()));
        }
        if let Some(p) = prev {
            if era.era() <= p {
                out.push(violation(
                    Some(era.era()),
                    None,
                    None,
                    format!("era out of order after era {p}"),
                ));
            }
        }
        prev = Some(era.era());

        if era.features.n_cols() != panel.n_features() {
            out.push(violation(
                Some(era.era()),
                None,
                None,
                format!(
                    "{} feature columns, schema has {}",
                    era.features.n_cols(),
                    panel.n_features()
                ),
            ));
        }

        let mut seen = BTreeMap::new();
        for (row, id) in era.ids().iter().enumerate() {
            if let Some(first) = seen.insert(id.as_str(), row) {
                out.push(violation(
                    Some(era.era()),
                    Some(row),
                    None,
                    format!("duplicate id {id:?} (first at row {first})"),
                ));
            }
        }

        for (col, name) in panel.feature_names().iter().enumerate() {
            if col >= era.features.n_cols() {
                break;
            }
            let bound = feature_bound(name);
            for (row, &v) in era.features.column(col).iter().enumerate() {
                if v < -bound || v > bound {
                    out.push(violation(
                        Some(era.era()),
                        Some(row),
                        Some(name),
                        format!("feature value {v} outside -{bound}..={bound}"),
                    ));
                }
            }
        }

        for (name, values) in &era.targets {
            for (row, &v) in values.iter().enumerate() {
                if !TARGET_LEVELS.contains(&v) {
                    out.push(violation(
                        Some(era.era()),
                        Some(row),
                        Some(name),
                        format!("target value {v} is not one of the five levels"),
                    ));
                }
            }
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn normalize_features_centers_bins() {
        let cols = vec![vec![0u8, 2, 4], vec![1, 3, 2]];
        let got = normalize_features(&cols).unwrap();
        assert_eq!(got, vec![vec![-2i8, 0, 2], vec![-1, 1, 0]]);
    }

    #[test]
    fn normalize_features_rejects_out_of_range_bins() {
        let err = normalize_features(&[vec![0u8, 5]]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("column 0"), "{msg}");
        assert!(msg.contains("row 1"), "{msg}");
    }

    #[test]
    fn normalize_targets_centers_levels() {
        let got = normalize_targets(&[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        assert_eq!(got, vec![-0.5, -0.25, 0.0, 0.25, 0.5]);
        assert!(normalize_targets(&[0.3]).is_err());
    }

    #[test]
    fn era_dates_match_known_weeks() {
        let cases = [
            (1, date(2003, 1, 3)),
            (500, date(2012, 7, 27)),
            (521, date(2012, 12, 21)),
            (620, date(2014, 11, 14)),
            (646, date(2015, 5, 15)),
            (1030, date(2022, 9, 23)),
        ];
        for (era, d) in cases {
            assert_eq!(era_to_date(EraId::new(era)).unwrap(), d, "era {era}");
            assert_eq!(era_of_date(d).unwrap(), EraId::new(era), "{d}");
        }
    }

    #[test]
    fn consecutive_eras_are_seven_days_apart() {
        for k in 1..1100u32 {
            let a = era_to_date(EraId::new(k)).unwrap();
            let b = era_to_date(EraId::new(k + 1)).unwrap();
            assert_eq!((b - a).num_days(), 7);
        }
    }

    #[test]
    fn era_date_conversion_rejects_bad_input() {
        assert!(era_to_date(EraId::new(0)).is_err());
        assert!(era_of_date(date(2003, 1, 4)).is_err());
        assert!(era_of_date(date(2002, 12, 27)).is_err());
    }

    fn era(id: u32, ids: &[&str], col: Vec<i8>, target: Option<Vec<f64>>) -> PanelEra {
        let mut targets = BTreeMap::new();
        if let Some(t) = target {
            targets.insert("main".to_string(), t);
        }
        PanelEra::new(
            EraId::new(id),
            ids.iter().map(|s| s.to_string()).collect(),
            FeatureMatrix::from_columns(vec![col]).unwrap(),
            targets,
        )
        .unwrap()
    }

    #[test]
    fn well_formed_panel_validates_clean() {
        let panel = PanelSet::new(
            vec!["alpha".into()],
            vec![
                era(1, &["a", "b"], vec![-2, 2], Some(vec![0.5, -0.5])),
                era(2, &["a", "b"], vec![0, 1], None),
            ],
        )
        .unwrap();
        assert!(validate_panel(&panel).is_empty());
    }

    #[test]
    fn each_broken_rule_is_reported() {
        // Feature value outside the plain-column range.
        let p = PanelSet::new_unchecked(
            vec!["alpha".into()],
            vec![era(1, &["a", "b"], vec![3, 0], None)],
        );
        let v = validate_panel(&p);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].row, Some(0));
        assert_eq!(v[0].column.as_deref(), Some("alpha"));

        // Product columns get the wider bound.
        let p = PanelSet::new_unchecked(
            vec!["p_0_1".into()],
            vec![era(1, &["a", "b"], vec![4, -4], None)],
        );
        assert!(validate_panel(&p).is_empty());
        let p = PanelSet::new_unchecked(
            vec!["p_0_1".into()],
            vec![era(1, &["a", "b"], vec![5, 0], None)],
        );
        assert_eq!(validate_panel(&p).len(), 1);

        // Bad target level.
        let p = PanelSet::new_unchecked(
            vec!["alpha".into()],
            vec![era(1, &["a", "b"], vec![0, 0], Some(vec![0.3, 0.0]))],
        );
        let v = validate_panel(&p);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].column.as_deref(), Some("main"));

        // Duplicate id within an era.
        let p = PanelSet::new_unchecked(
            vec!["alpha".into()],
            vec![era(1, &["a", "a"], vec![0, 0], None)],
        );
        assert_eq!(validate_panel(&p).len(), 1);

        // Eras out of order.
        let p = PanelSet::new_unchecked(
            vec!["alpha".into()],
            vec![
                era(2, &["a"], vec![0], None),
                era(1, &["a"], vec![0], None),
            ],
        );
        assert_eq!(validate_panel(&p).len(), 1);
    }

    #[test]
    fn audit_flags_unpermitted_reads_only() {
        let panel = PanelSet::new(
            vec!["alpha".into()],
            vec![
                era(1, &["a"], vec![0], Some(vec![0.5])),
                era(2, &["a"], vec![0], Some(vec![-0.5])),
            ],
        )
        .unwrap();
        let audit = TargetAudit::watching([EraId::new(2)]);
        let audited = panel.with_target_audit(Arc::clone(&audit));

        // Era 1 is not watched; reading it is free.
        audited.era(EraId::new(1)).unwrap().target("main");
        assert!(audit.violations().is_empty());

        // Era 2 before permit: violation. After permit: counted as fair.
        audited.era(EraId::new(2)).unwrap().target("main");
        assert_eq!(audit.violations().len(), 1);
        audited.permit_target(EraId::new(2));
        audited.era(EraId::new(2)).unwrap().target("main");
        assert_eq!(audit.violations().len(), 1);
        assert_eq!(audit.permitted_read_count(), 1);
    }
}
