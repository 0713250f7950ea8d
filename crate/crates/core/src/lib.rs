//! Modelling toolkit for era-grouped stock panels.
//!
//! A panel is a sequence of weekly cross-sections ("eras"): each era holds the
//! integer-binned features and binned forward returns of the stocks tradable
//! that week. The crate covers the full research loop on such data:
//!
//! * [`panel`] and [`io`] define the data model, its CSV representation and a
//!   latent-factor synthetic generator for desk-scale experiments,
//! * [`split`] builds grouped walk-forward train/validation/test splits with
//!   embargo gaps between the groups,
//! * [`features`] derives product features and applies feature dropout,
//! * [`gbdt`] is a self-contained gradient boosting engine over integer
//!   features with regular, dart and goss round types,
//! * [`metrics`] scores predictions per era and summarizes the resulting
//!   series, including market-regime classification,
//! * [`model`] holds the prediction interface, a factor-momentum baseline and
//!   seed/target ensembling helpers,
//! * [`projection`] removes linear feature exposure from predictions, either
//!   against a fixed feature set or sets re-selected from rolling statistics,
//! * [`select`] picks between competing prediction methods online, using only
//!   lagged realized scores.
//!
//! Everything is deterministic given the configured seeds: repeated runs and
//! runs under different thread counts produce identical bytes.

pub mod error;
pub mod features;
pub mod gbdt;
pub mod io;
pub mod metrics;
pub mod model;
pub mod panel;
pub mod projection;
pub mod rng;
pub mod select;
pub mod split;

pub use error::{Error, ErrorClass, Result};
pub use features::FeatureEngConfig;
pub use gbdt::{BoostConfig, BoostMode, Booster, Tree};
pub use io::SyntheticConfig;
pub use metrics::{CorrSeries, RegimeLabel, SummaryMetrics};
pub use model::{EnsembleSpec, FactorMomentumModel, RankingModel};
pub use panel::{EraId, PanelEra, PanelSet};
pub use projection::{FeatureCorrStats, ProjectionRule};
pub use select::{MethodHistory, SelectionRule};
pub use split::{EraRange, GroupedSplitSpec};
