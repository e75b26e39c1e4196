//! Monte Carlo laboratory for estimating state-level policy effects when a
//! second, co-occurring policy is enacted close in time to the policy of
//! interest.
//!
//! The pipeline for one replication is: sample treated units and enactment
//! dates ([`policy`]), add the simulated effects to a null-condition panel
//! ([`outcome`]), fit AR or DID models ([`estimators`]), and aggregate the
//! per-replication estimates into performance metrics ([`metrics`]).
//! [`runner`] drives full factorial grids deterministically in parallel;
//! [`config`] describes such grids declaratively and [`figures`] reshapes
//! their results into plot-ready tables.

pub mod config;
pub mod error;
pub mod estimators;
pub mod figures;
pub mod metrics;
pub mod outcome;
pub mod panel;
pub mod policy;
pub mod reference;
pub mod runner;

pub use config::{FieldError, RunConfig};
pub use error::{Error, Result};
pub use estimators::{fit_policy_model, FitResult, ModelClass, ModelSpec, Specification};
pub use metrics::{summarize, MetricSummary, ReplicationRecord};
pub use outcome::{apply_effects, EffectSpec, ScaleMode, TreatedPanel};
pub use panel::{load_panel, synth_panel, Panel, SynthConfig};
pub use policy::{ExposureMatrix, GapCondition, OrderingMode, PhaseIn};
pub use runner::{run_grid, run_scenario, GridSpec, PanelContext, PanelSource, PolicyScenario, RunSettings, ScenarioResult};
