//! Run configuration: a TOML document describing one end-to-end run.
//!
//! The file covers the whole pipeline: where the panel comes from (a CSV
//! file or the synthetic generator), how it is split, which features get
//! engineered, the candidate models with their hyperparameters, how member
//! predictions ensemble, the projection and selection rules, and where
//! artifacts land. Unknown keys anywhere are errors so typos fail fast.
//! `--seed` and `--out` override the file at the command line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use tempora_core::features::FeatureEngConfig;
use tempora_core::gbdt::{BoostConfig, BoostMode};
use tempora_core::model::{DEFAULT_MOMENTUM_LAG, DEFAULT_MOMENTUM_WINDOW};
use tempora_core::projection::{ProjectionKind, ProjectionRule};
use tempora_core::rng::sub_seed;
use tempora_core::select::{
    SelectionRule, DEFAULT_SELECT_LAG, DEFAULT_SELECT_WINDOW, DEFAULT_WARM_UP,
};
use tempora_core::split::{walk_forward_presets, GroupedSplitSpec};
use tempora_core::{EnsembleSpec, Error, Result, SyntheticConfig};

use crate::sweep::SweepSpec;

/// Full configuration of one run, as parsed from the TOML file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random stream below derives from it.
    pub seed: u64,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub features: FeatureSection,
    #[serde(rename = "model")]
    pub models: Vec<ModelConfig>,
    pub ensemble: EnsembleSpec,
    pub projection: ProjectionSection,
    pub selection: SelectionSection,
    pub output: OutputSection,
    pub sweep: Option<SweepSpec>,
}

/// Where the panel comes from. Exactly one source must be set.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Panel CSV on disk.
    pub path: Option<PathBuf>,
    /// Parameters for the synthetic generator.
    pub synthetic: Option<SyntheticConfig>,
}

/// Which split to use: a named walk-forward preset or an explicit spec.
/// Exactly one must be set.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// One of `cv1`, `cv2`, `cv3`.
    pub preset: Option<String>,
    pub spec: Option<GroupedSplitSpec>,
}

impl SplitConfig {
    /// The concrete split spec, before clamping to the panel's last era.
    pub fn resolve(&self) -> Result<GroupedSplitSpec> {
        match (&self.preset, &self.spec) {
            (Some(name), None) => {
                let presets = walk_forward_presets();
                let index = match name.as_str() {
                    "cv1" => 0,
                    "cv2" => 1,
                    "cv3" => 2,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown split preset {other:?}; expected cv1, cv2 or cv3"
                        )))
                    }
                };
                Ok(presets[index])
            }
            (None, Some(spec)) => {
                spec.validate()?;
                Ok(*spec)
            }
            (None, None) => Err(Error::Config(
                "split needs either a preset name or an explicit spec".into(),
            )),
            (Some(_), Some(_)) => Err(Error::Config(
                "split preset and explicit spec are mutually exclusive".into(),
            )),
        }
    }
}

/// Feature engineering controls. The mask seed derives from the master seed
/// unless pinned explicitly.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSection {
    pub n_products: usize,
    pub dropout_pct: f64,
    pub fixed_mask: bool,
    pub seed: Option<u64>,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection {
            n_products: 0,
            dropout_pct: 0.0,
            fixed_mask: false,
            seed: None,
        }
    }
}

impl FeatureSection {
    pub fn resolve(&self, master_seed: u64) -> FeatureEngConfig {
        FeatureEngConfig {
            n_products: self.n_products,
            dropout_pct: self.dropout_pct,
            fixed_mask: self.fixed_mask,
            seed: self.seed.unwrap_or_else(|| sub_seed(master_seed, "features", 0)),
        }
    }
}

/// What a candidate method is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// A seed ensemble of gradient-boosted trees.
    Boost,
    /// The factor-momentum linear baseline.
    Momentum,
}

/// One candidate model; backtests select between these online.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub name: String,
    pub kind: ModelKind,
    /// Hyperparameters; the per-member seed is derived from the master
    /// seed, so the `seed` key here is ignored.
    pub boost: BoostConfig,
    /// Momentum baseline: trailing eras feeding the sign estimate.
    pub window: usize,
    /// Momentum baseline: reporting lag in eras.
    pub lag: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            name: "boost".to_string(),
            kind: ModelKind::Boost,
            boost: BoostConfig::default(),
            window: DEFAULT_MOMENTUM_WINDOW,
            lag: DEFAULT_MOMENTUM_LAG,
        }
    }
}

/// Post-prediction neutralization controls; disabled by default.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionSection {
    pub enabled: bool,
    pub kind: ProjectionKind,
    /// Projected subset size; 0 picks a third of the features.
    pub k: usize,
    /// Neutralization strength in [0, 1].
    pub beta: f64,
    pub window: usize,
    pub lag: u32,
    /// Explicit feature list for the fixed rule.
    pub fixed_set: Vec<String>,
    /// Alternative to `fixed_set`: a file with one feature name per line.
    pub fixed_set_file: Option<PathBuf>,
}

impl Default for ProjectionSection {
    fn default() -> Self {
        let rule = ProjectionRule::default();
        ProjectionSection {
            enabled: false,
            kind: rule.kind,
            k: rule.k,
            beta: 1.0,
            window: rule.window,
            lag: rule.lag,
            fixed_set: Vec::new(),
            fixed_set_file: None,
        }
    }
}

impl ProjectionSection {
    /// The projection rule, with the fixed set loaded from file if needed.
    pub fn resolve(&self) -> Result<ProjectionRule> {
        let fixed_set = match (&self.fixed_set_file, self.fixed_set.is_empty()) {
            (Some(path), true) => fs::read_to_string(path)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
            (Some(_), false) => {
                return Err(Error::Config(
                    "fixed_set and fixed_set_file are mutually exclusive".into(),
                ))
            }
            (None, _) => self.fixed_set.clone(),
        };
        Ok(ProjectionRule {
            kind: self.kind,
            k: self.k,
            fixed_set,
            window: self.window,
            lag: self.lag,
        })
    }
}

/// Online model-selection controls.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSection {
    pub rule: SelectionRule,
    pub warm_up: usize,
    pub window: usize,
    pub lag: u32,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            rule: SelectionRule::Average,
            warm_up: DEFAULT_WARM_UP,
            window: DEFAULT_SELECT_WINDOW,
            lag: DEFAULT_SELECT_LAG,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parses and validates a config file. Paths inside the file are
    /// interpreted relative to the process working directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if config.models.is_empty() {
            config.models.push(ModelConfig::default());
        }
        config.validate()?;
        Ok(config)
    }

    /// Applies command-line overrides on top of the file.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<PathBuf>) {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(dir) = out {
            self.output.dir = dir;
        }
    }

    /// The target driving sweeps, projection statistics and the baseline.
    pub fn main_target(&self) -> &str {
        &self.ensemble.targets[0]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));

        match (&self.data.path, &self.data.synthetic) {
            (Some(path), None) => {
                if !path.exists() {
                    return bad(format!("data file {} does not exist", path.display()));
                }
            }
            (None, Some(synthetic)) => synthetic.validate()?,
            (None, None) => return bad("data needs either a path or a synthetic section".into()),
            (Some(_), Some(_)) => {
                return bad("data path and synthetic section are mutually exclusive".into())
            }
        }
        self.split.resolve()?;

        if !(0.0..=1.0).contains(&self.features.dropout_pct) {
            return bad(format!(
                "dropout_pct {} outside [0, 1]",
                self.features.dropout_pct
            ));
        }

        if self.ensemble.n_seeds == 0 {
            return bad("ensemble needs at least one seed".into());
        }
        if self.ensemble.targets.is_empty() {
            return bad("ensemble needs at least one target".into());
        }

        let mut names = std::collections::BTreeSet::new();
        for model in &self.models {
            if model.name.is_empty() {
                return bad("every model needs a non-empty name".into());
            }
            if !names.insert(&model.name) {
                return bad(format!("duplicate model name {:?}", model.name));
            }
            match model.kind {
                ModelKind::Boost => model.boost.validate()?,
                ModelKind::Momentum => {
                    if model.window == 0 {
                        return bad(format!("model {:?} needs window >= 1", model.name));
                    }
                }
            }
        }

        if self.projection.enabled {
            if !(0.0..=1.0).contains(&self.projection.beta) {
                return bad(format!("beta {} outside [0, 1]", self.projection.beta));
            }
            if self.projection.kind == ProjectionKind::Fixed {
                if self.projection.fixed_set.is_empty() && self.projection.fixed_set_file.is_none()
                {
                    return bad("fixed projection needs fixed_set or fixed_set_file".into());
                }
                if let Some(path) = &self.projection.fixed_set_file {
                    if !path.exists() {
                        return bad(format!(
                            "fixed_set_file {} does not exist",
                            path.display()
                        ));
                    }
                }
            } else if self.projection.lag == 0 {
                // Statistics at lag 0 would read the scored era's own target.
                return bad("dynamic projection needs lag >= 1".into());
            }
        }

        if self.selection.warm_up == 0 {
            return bad("selection warm_up must be at least 1".into());
        }
        if self.selection.window == 0 {
            return bad("selection window must be at least 1".into());
        }

        if let Some(sweep) = &self.sweep {
            sweep.validate(&self.models)?;
        }
        Ok(())
    }
}

/// Seed for one ensemble member, derived from the master seed and the
/// member's position so every member stream is independent.
pub fn member_seed(master: u64, model_index: usize, target_index: usize, seed_index: usize) -> u64 {
    let slot = ((model_index as u64) << 40) | ((target_index as u64) << 20) | seed_index as u64;
    sub_seed(master, "member", slot)
}

/// Known boost mode names, used by diagnostics.
pub fn mode_name(mode: BoostMode) -> &'static str {
    match mode {
        BoostMode::Gbdt => "gbdt",
        BoostMode::Dart => "dart",
        BoostMode::Goss => "goss",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("run.toml");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn minimal() -> &'static str {
        r#"
seed = 7

[data.synthetic]
n_eras = 30

[split.spec]
train = { start = 1, end = 15 }
gap1 = 2
validation = { start = 18, end = 24 }
gap2 = 2
test = { start = 27, end = 30 }
"#
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), minimal());
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.models.len(), 1);
        assert_eq!(config.models[0].name, "boost");
        assert_eq!(config.main_target(), "main");
        assert!(!config.projection.enabled);
        assert_eq!(config.output.dir, PathBuf::from("out"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{}\nnonsense = 1\n", minimal());
        let path = write_config(dir.path(), &body);
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn data_source_must_be_exactly_one() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"
[split]
preset = "cv1"
"#;
        let path = write_config(dir.path(), body);
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));

        let body = r#"
[data]
path = "does-not-exist.csv"

[split]
preset = "cv1"
"#;
        let path = write_config(dir.path(), body);
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn split_presets_resolve_and_validate() {
        let config = SplitConfig {
            preset: Some("cv2".into()),
            spec: None,
        };
        let spec = config.resolve().unwrap();
        assert_eq!(spec.train.start().get(), 1);
        assert_eq!(spec.train.end().get(), 600);

        let bad = SplitConfig {
            preset: Some("cv9".into()),
            spec: None,
        };
        assert!(bad.resolve().is_err());

        let none = SplitConfig::default();
        assert!(none.resolve().is_err());
    }

    #[test]
    fn model_names_must_be_unique() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{}\n[[model]]\nname = \"a\"\n\n[[model]]\nname = \"a\"\n",
            minimal()
        );
        let path = write_config(dir.path(), &body);
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn dynamic_projection_rejects_zero_lag() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{}\n[projection]\nenabled = true\nlag = 0\n", minimal());
        let path = write_config(dir.path(), &body);
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn fixed_set_file_loads_names() {
        let dir = tempfile::tempdir().unwrap();
        let list = dir.path().join("features.txt");
        fs::write(&list, "v000\n v001 \n\nv002\n").unwrap();
        let section = ProjectionSection {
            enabled: true,
            kind: ProjectionKind::Fixed,
            fixed_set_file: Some(list),
            ..ProjectionSection::default()
        };
        let rule = section.resolve().unwrap();
        assert_eq!(rule.fixed_set, ["v000", "v001", "v002"]);
    }

    #[test]
    fn overrides_replace_seed_and_out() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), minimal());
        let mut config = RunConfig::load(&path).unwrap();
        config.apply_overrides(Some(99), Some(PathBuf::from("elsewhere")));
        assert_eq!(config.seed, 99);
        assert_eq!(config.output.dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn member_seeds_are_distinct_across_positions() {
        let mut seen = std::collections::BTreeSet::new();
        for model in 0..3 {
            for target in 0..3 {
                for seed in 0..10 {
                    assert!(seen.insert(member_seed(7, model, target, seed)));
                }
            }
        }
    }
}
