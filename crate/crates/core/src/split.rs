//! Grouped walk-forward splits over eras with purge gaps.
//!
//! A split carves a panel into train, validation and test sets along era
//! boundaries, leaving at least `gap1` whole eras between train and
//! validation and `gap2` between validation and test. Rows of one era never
//! straddle sets, and eras falling inside a gap are dropped outright rather
//! than reassigned; with weekly eras a 20-era gap purges any label overlap
//! from multi-week forward returns.
//!
//! [`walk_forward_presets`] returns the three standard windows used for
//! model selection, each stepping the train end forward by 100 weeks.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{era_of_date, EraId, PanelSet};

/// Inclusive era range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRange", into = "RawRange")]
pub struct EraRange {
    start: EraId,
    end: EraId,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRange {
    start: u32,
    end: u32,
}

impl TryFrom<RawRange> for EraRange {
    type Error = Error;
    fn try_from(raw: RawRange) -> Result<Self> {
        EraRange::new(EraId::new(raw.start), EraId::new(raw.end))
    }
}

impl From<EraRange> for RawRange {
    fn from(r: EraRange) -> Self {
        RawRange { start: r.start.get(), end: r.end.get() }
    }
}

impl EraRange {
    pub fn new(start: EraId, end: EraId) -> Result<Self> {
        if start.get() == 0 {
            return Err(Error::Config("era ranges start at era 1".into()));
        }
        if start > end {
            return Err(Error::Config(format!(
                "era range {}..={} is reversed",
                start, end
            )));
        }
        Ok(EraRange { start, end })
    }

    pub fn start(self) -> EraId {
        self.start
    }

    pub fn end(self) -> EraId {
        self.end
    }

    pub fn contains(self, era: EraId) -> bool {
        self.start <= era && era <= self.end
    }

    /// Number of eras in the range; at least 1 by construction.
    pub fn n_eras(self) -> u32 {
        self.end.get() - self.start.get() + 1
    }

    pub fn iter(self) -> impl Iterator<Item = EraId> {
        (self.start.get()..=self.end.get()).map(EraId::new)
    }
}

/// A train/validation/test carve-up with minimum purge gaps (in eras)
/// between consecutive sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupedSplitSpec {
    pub train: EraRange,
    /// Minimum count of whole eras strictly between train and validation.
    pub gap1: u32,
    pub validation: EraRange,
    /// Minimum count of whole eras strictly between validation and test.
    pub gap2: u32,
    pub test: EraRange,
}

impl GroupedSplitSpec {
    /// Checks ordering: `validation.start - train.end > gap1` and
    /// `test.start - validation.end > gap2`, which puts more than `gap`
    /// whole weeks between the boundary eras.
    pub fn validate(&self) -> Result<()> {
        let lead = |name: &str, prev: EraRange, next: EraRange, gap: u32| -> Result<()> {
            let have = i64::from(next.start.get()) - i64::from(prev.end.get());
            if have <= i64::from(gap) {
                return Err(Error::Config(format!(
                    "{name} must start more than {gap} eras after era {}, got era {}",
                    prev.end, next.start
                )));
            }
            Ok(())
        };
        lead("validation", self.train, self.validation, self.gap1)?;
        lead("test", self.validation, self.test, self.gap2)
    }

    /// Counts of eras strictly between the sets, `(train-validation,
    /// validation-test)`.
    pub fn actual_gaps(&self) -> (u32, u32) {
        (
            self.validation.start.get() - self.train.end.get() - 1,
            self.test.start.get() - self.validation.end.get() - 1,
        )
    }

    /// Shrinks the test range to end at `last` for panels shorter than the
    /// preset horizon. Fails if the panel ends before the test range opens.
    pub fn clamped_to_last(&self, last: EraId) -> Result<GroupedSplitSpec> {
        if last < self.test.start {
            return Err(Error::Config(format!(
                "panel ends at era {last}, before the test range opens at era {}",
                self.test.start
            )));
        }
        let mut out = *self;
        out.test = EraRange::new(self.test.start, self.test.end.min(last))?;
        Ok(out)
    }
}

/// Cuts `panel` into `(train, validation, test)` per `spec`. Each output
/// holds exactly the panel eras inside its range; every output must be
/// non-empty.
pub fn make_split(
    panel: &PanelSet,
    spec: &GroupedSplitSpec,
) -> Result<(PanelSet, PanelSet, PanelSet)> {
    spec.validate()?;
    let cut = |range: EraRange, name: &str| -> Result<PanelSet> {
        let eras: Vec<_> = panel
            .eras()
            .iter()
            .filter(|e| range.contains(e.era()))
            .cloned()
            .collect();
        if eras.is_empty() {
            return Err(Error::Data(format!(
                "{name} range {}..={} contains no panel eras",
                range.start, range.end
            )));
        }
        PanelSet::new(panel.feature_names().to_vec(), eras)
    };
    Ok((
        cut(spec.train, "train")?,
        cut(spec.validation, "validation")?,
        cut(spec.test, "test")?,
    ))
}

/// Purge gap between train and validation in every preset, in eras.
pub const PRESET_GAP1: u32 = 20;
/// Purge gap between validation and test in every preset, in eras.
pub const PRESET_GAP2: u32 = 25;

fn grid_era(year: i32, month: u32, day: u32) -> EraId {
    let date = NaiveDate::from_ymd_opt(year, month, day).expect("valid preset date");
    era_of_date(date).expect("preset dates sit on the weekly grid")
}

/// The three standard walk-forward windows. All trains start at era 1; each
/// window shifts train end, validation and test entry forward by 100 eras;
/// every test runs to the end of the reference history (September 2022).
/// Clamp with [`GroupedSplitSpec::clamped_to_last`] for shorter panels.
pub fn walk_forward_presets() -> Vec<GroupedSplitSpec> {
    let train_start = EraId::new(1);
    let test_end = grid_era(2022, 9, 23);
    let window = |train_end: EraId, val: (EraId, EraId), test_start: EraId| GroupedSplitSpec {
        train: EraRange::new(train_start, train_end).expect("preset train range"),
        gap1: PRESET_GAP1,
        validation: EraRange::new(val.0, val.1).expect("preset validation range"),
        gap2: PRESET_GAP2,
        test: EraRange::new(test_start, test_end).expect("preset test range"),
    };
    vec![
        window(
            grid_era(2012, 7, 27),
            (grid_era(2012, 12, 21), grid_era(2014, 11, 14)),
            grid_era(2015, 5, 15),
        ),
        window(
            grid_era(2014, 6, 27),
            (grid_era(2014, 11, 21), grid_era(2016, 10, 14)),
            grid_era(2017, 4, 14),
        ),
        window(
            grid_era(2016, 5, 27),
            (grid_era(2016, 10, 21), grid_era(2018, 9, 14)),
            grid_era(2019, 3, 15),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{FeatureMatrix, PanelEra};
    use std::collections::{BTreeMap, BTreeSet};

    fn panel(n_eras: u32) -> PanelSet {
        let eras = (1..=n_eras)
            .map(|e| {
                PanelEra::new(
                    EraId::new(e),
                    vec!["a".into(), "b".into()],
                    FeatureMatrix::from_columns(vec![vec![0, 1]]).unwrap(),
                    BTreeMap::new(),
                )
                .unwrap()
            })
            .collect();
        PanelSet::new(vec!["x".into()], eras).unwrap()
    }

    fn range(start: u32, end: u32) -> EraRange {
        EraRange::new(EraId::new(start), EraId::new(end)).unwrap()
    }

    #[test]
    fn first_preset_matches_the_reference_windows() {
        let presets = walk_forward_presets();
        assert_eq!(presets.len(), 3);
        let cv1 = &presets[0];
        assert_eq!(cv1.train, range(1, 500));
        assert_eq!(cv1.validation, range(521, 620));
        assert_eq!(cv1.test, range(646, 1030));
        assert_eq!(cv1.actual_gaps(), (20, 25));
    }

    #[test]
    fn presets_step_forward_by_100_eras() {
        let presets = walk_forward_presets();
        // Era numbers recomputed from the anchor by hand: each window's
        // train end, validation and test entry sit 100 weeks after the
        // previous window's.
        for (i, preset) in presets.iter().enumerate() {
            let step = 100 * i as u32;
            assert_eq!(preset.train.start(), EraId::new(1));
            assert_eq!(preset.train.end(), EraId::new(500 + step));
            assert_eq!(preset.validation.start(), EraId::new(521 + step));
            assert_eq!(preset.validation.end(), EraId::new(620 + step));
            assert_eq!(preset.test.start(), EraId::new(646 + step));
            assert_eq!(preset.test.end(), EraId::new(1030));
            preset.validate().unwrap();
        }
    }

    #[test]
    fn contiguous_zero_gap_split_partitions_the_panel() {
        let spec = GroupedSplitSpec {
            train: range(1, 4),
            gap1: 0,
            validation: range(5, 7),
            gap2: 0,
            test: range(8, 10),
        };
        let p = panel(10);
        let (train, val, test) = make_split(&p, &spec).unwrap();
        assert_eq!(train.eras().len(), 4);
        assert_eq!(val.eras().len(), 3);
        assert_eq!(test.eras().len(), 3);

        let mut seen = BTreeSet::new();
        for part in [&train, &val, &test] {
            for era in part.eras() {
                assert!(seen.insert(era.era()), "era {} appears twice", era.era());
            }
        }
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn gap_eras_are_dropped_not_reassigned() {
        let spec = GroupedSplitSpec {
            train: range(1, 3),
            gap1: 2,
            validation: range(6, 7),
            gap2: 1,
            test: range(9, 12),
        };
        let p = panel(12);
        let (train, val, test) = make_split(&p, &spec).unwrap();
        let all: BTreeSet<u32> = [&train, &val, &test]
            .iter()
            .flat_map(|s| s.eras().iter().map(|e| e.era().get()))
            .collect();
        assert!(!all.contains(&4) && !all.contains(&5) && !all.contains(&8));
        assert_eq!(all.len(), 9);
        assert_eq!(train.last_era(), Some(EraId::new(3)));
        assert_eq!(val.first_era(), Some(EraId::new(6)));
        assert_eq!(test.first_era(), Some(EraId::new(9)));
    }

    #[test]
    fn overlap_and_short_gaps_are_rejected() {
        let overlap = GroupedSplitSpec {
            train: range(1, 5),
            gap1: 0,
            validation: range(5, 7),
            gap2: 0,
            test: range(8, 10),
        };
        assert!(matches!(make_split(&panel(10), &overlap), Err(Error::Config(_))));

        // validation.start - train.end must strictly exceed gap1.
        let boundary = GroupedSplitSpec {
            train: range(1, 4),
            gap1: 2,
            validation: range(6, 7),
            gap2: 0,
            test: range(8, 10),
        };
        assert!(boundary.validate().is_err());
        let ok = GroupedSplitSpec { validation: range(7, 7), gap2: 0, test: range(8, 10), ..boundary };
        ok.validate().unwrap();

        assert!(EraRange::new(EraId::new(5), EraId::new(3)).is_err());
        assert!(EraRange::new(EraId::new(0), EraId::new(3)).is_err());
    }

    #[test]
    fn split_outputs_preserve_order_and_contents() {
        let spec = GroupedSplitSpec {
            train: range(2, 9),
            gap1: 3,
            validation: range(13, 18),
            gap2: 4,
            test: range(23, 30),
        };
        let p = panel(30);
        let (train, val, test) = make_split(&p, &spec).unwrap();
        for (part, range) in [(&train, spec.train), (&val, spec.validation), (&test, spec.test)] {
            let eras: Vec<u32> = part.eras().iter().map(|e| e.era().get()).collect();
            let expect: Vec<u32> = (range.start().get()..=range.end().get()).collect();
            assert_eq!(eras, expect);
        }
        assert_eq!(train.feature_names(), p.feature_names());
    }

    #[test]
    fn empty_selection_is_an_error() {
        let spec = GroupedSplitSpec {
            train: range(1, 4),
            gap1: 0,
            validation: range(5, 7),
            gap2: 0,
            test: range(9, 10),
        };
        // Panel only has 8 eras, so the test range selects nothing.
        assert!(matches!(make_split(&panel(8), &spec), Err(Error::Data(_))));
    }

    #[test]
    fn clamping_shortens_or_rejects() {
        let preset = walk_forward_presets().remove(0);
        let clamped = preset.clamped_to_last(EraId::new(800)).unwrap();
        assert_eq!(clamped.test, range(646, 800));
        assert_eq!(clamped.train, preset.train);
        assert!(preset.clamped_to_last(EraId::new(645)).is_err());
        // A panel longer than the preset keeps the preset end.
        let long = preset.clamped_to_last(EraId::new(2000)).unwrap();
        assert_eq!(long.test, preset.test);
    }

    #[test]
    fn ranges_validate_during_deserialization() {
        let spec: GroupedSplitSpec = toml::from_str(
            "gap1 = 2\ngap2 = 2\n\
             [train]\nstart = 1\nend = 10\n\
             [validation]\nstart = 13\nend = 20\n\
             [test]\nstart = 23\nend = 30\n",
        )
        .unwrap();
        assert_eq!(spec.train, range(1, 10));
        assert_eq!(spec.validation, range(13, 20));
        spec.validate().unwrap();

        let reversed = toml::from_str::<GroupedSplitSpec>(
            "gap1 = 2\ngap2 = 2\n\
             [train]\nstart = 10\nend = 1\n\
             [validation]\nstart = 13\nend = 20\n\
             [test]\nstart = 23\nend = 30\n",
        );
        assert!(reversed.is_err());
    }
}
