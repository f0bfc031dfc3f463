//! Causal excursion effect estimation for zero-inflated count proximal outcomes.
//!
//! The crate covers the full pipeline for micro-randomized trial (MRT) and
//! observational mHealth panels:
//!
//! - [`panel`]: longitudinal data model, CSV ingestion, design materialization.
//! - [`nuisance`]: hurdle (two-part) penalized-spline outcome means and propensities.
//! - [`estimators`]: ECE, ECE-NonP, EMEE, EMEE-NonP, DR-EMEE-NonP and GEE baselines,
//!   a damped Newton root finder and sandwich inference.
//! - [`simulation`]: scenario generators with analytic ground truth and a
//!   replication harness reporting Bias/SE/SD/RMSE/CP.
//!
//! Replications and per-participant score sums run on rayon when the
//! `parallel` feature is enabled (the default) and sequentially otherwise.
//! Results are bit-identical in both modes.

pub mod config;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod nuisance;
pub mod panel;
pub mod par;
pub mod simulation;

pub use error::{Error, Result};
pub use estimators::{estimate, EstimandKind, EstimandSpec, EstimateReport, EstimatorKind};
pub use nuisance::{NuisanceConfig, NuisanceFit, NuisanceValues, PropensityMode};
pub use panel::{DecisionRecord, DesignBundle, EffectModelSpec, PanelDataset, PanelSchema};
pub use simulation::{ReplicationSummary, ScenarioConfig, ScenarioId};
