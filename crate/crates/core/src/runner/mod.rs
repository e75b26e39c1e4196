//! Deterministic, parallel execution of scenario grids.
//!
//! Every replication draws from its own counter-derived RNG stream
//! ([`derive_seed`]) and results are collected by replication index, so a
//! run's output depends only on the panel, the grid, and the master seed.

mod results;
mod seed;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit_policy_model, ModelSpec};
use crate::metrics::{summarize, MetricSummary, ReplicationRecord};
use crate::outcome::{apply_effects_with, EffectSpec};
use crate::panel::{load_panel, panel_summary, synth_panel, ColumnMap, Panel, PanelSummary, SynthConfig};
use crate::policy::{draw_policies, sample_enactments, GapCondition, OrderingMode, PhaseIn};

pub use results::{
    read_results_csv, replication_csv, results_csv, write_results_csv, Manifest, ResultRow, RESULTS_HEADER,
};
pub use seed::{derive_seed, MAX_REPS, MAX_SCENARIOS};

/// Replication failure rate above which a scenario is abandoned.
pub const ABORT_FAIL_RATE: f64 = 0.05;

/// Where the null-condition panel comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelSource {
    Synth(SynthConfig),
    Csv { path: PathBuf, columns: ColumnMap },
}

impl Default for PanelSource {
    fn default() -> Self {
        PanelSource::Synth(SynthConfig::default())
    }
}

/// A loaded panel plus the summaries every replication reuses.
#[derive(Debug, Clone)]
pub struct PanelContext {
    pub panel: Panel,
    pub summary: PanelSummary,
    pub digest: String,
}

impl PanelContext {
    pub fn new(panel: Panel) -> Self {
        let summary = panel_summary(&panel);
        let digest = panel.digest();
        PanelContext { panel, summary, digest }
    }

    pub fn from_source(source: &PanelSource) -> Result<Self> {
        let panel = match source {
            PanelSource::Synth(cfg) => synth_panel(cfg)?,
            PanelSource::Csv { path, columns } => load_panel(path, columns)?,
        };
        Ok(Self::new(panel))
    }
}

/// The data-generating factors of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataCell {
    pub effects: EffectSpec,
    pub gap: GapCondition,
    pub n_treated: usize,
    pub phase_in: PhaseIn,
    pub ordering: OrderingMode,
}

impl DataCell {
    /// Checks the cell against the panel before any replication runs.
    pub fn validate(&self, panel: &Panel) -> Result<()> {
        self.effects.validate()?;
        if self.n_treated == 0 || self.n_treated > panel.n_units() {
            return Err(Error::KTooLarge {
                k: self.n_treated,
                n: panel.n_units(),
            });
        }
        let mut probe = derive_seed(0, 0, 0);
        sample_enactments(&self.gap, self.ordering, (panel.first_year(), panel.last_year()), &mut probe)?;
        Ok(())
    }
}

/// One fully specified simulation: a data cell fit by one estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyScenario {
    pub cell: DataCell,
    pub model: ModelSpec,
    pub n_reps: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyRole {
    Primary,
    Secondary,
}

impl std::fmt::Display for PolicyRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PolicyRole::Primary => "primary",
            PolicyRole::Secondary => "secondary",
        })
    }
}

/// One replication's outcome for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RepOutcome {
    Fit {
        primary: ReplicationRecord,
        secondary: Option<ReplicationRecord>,
    },
    Failed(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioResult {
    pub scenario_id: String,
    pub scenario_index: u64,
    pub scenario: PolicyScenario,
    pub primary: MetricSummary,
    /// Present for the correct specification only.
    pub secondary: Option<MetricSummary>,
    pub n_failed: usize,
    pub fail_rate: f64,
    /// Per-replication outcomes in replication order, when retained.
    pub records: Option<Vec<RepOutcome>>,
    pub elapsed_secs: f64,
}

/// Execution knobs that do not affect results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSettings {
    pub workers: usize,
    /// Retain per-replication records when `n_reps` is at most this.
    pub retain_records_up_to: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            workers: 1,
            retain_records_up_to: 10_000,
        }
    }
}

/// Runs one replication of `cell` and fits every model in `models` to the same data.
pub fn run_replication(
    ctx: &PanelContext,
    cell: &DataCell,
    models: &[ModelSpec],
    master_seed: u64,
    scenario_index: u64,
    rep_index: u64,
) -> Vec<RepOutcome> {
    let mut rng = derive_seed(master_seed, scenario_index, rep_index);
    let panel = &ctx.panel;
    let draw = match draw_policies(panel, cell.n_treated, &cell.gap, cell.ordering, cell.phase_in, &mut rng) {
        Ok(d) => d,
        Err(e) => return vec![RepOutcome::Failed(e.to_string()); models.len()],
    };
    let tp = match apply_effects_with(panel, &ctx.summary, &draw.exposures, &cell.effects) {
        Ok(tp) => tp,
        Err(e) => return vec![RepOutcome::Failed(e.to_string()); models.len()],
    };
    let (truth1, truth2) = cell.effects.reference_truth(&ctx.summary);
    let record = |est: &crate::estimators::PolicyEstimate, truth: f64| ReplicationRecord {
        estimate: est.estimate,
        se: est.se,
        ci_low: est.ci_low,
        ci_high: est.ci_high,
        p_value: est.p_value,
        truth,
    };
    models
        .iter()
        .map(|spec| match fit_policy_model(&tp, &draw.exposures, spec) {
            Ok(fit) => RepOutcome::Fit {
                primary: record(&fit.alpha1, truth1),
                secondary: fit.alpha2.as_ref().map(|a| record(a, truth2)),
            },
            Err(e) => RepOutcome::Failed(e.to_string()),
        })
        .collect()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
}

/// Runs every replication of one data cell for all `models`, returning one
/// result per model in `models` order.
pub fn run_cell(
    ctx: &PanelContext,
    cell: &DataCell,
    models: &[ModelSpec],
    n_reps: usize,
    master_seed: u64,
    scenario_index: u64,
    settings: &RunSettings,
    progress: Option<&AtomicUsize>,
) -> Result<Vec<ScenarioResult>> {
    if n_reps == 0 {
        return Err(Error::InvalidConfig("n_reps must be at least 1".into()));
    }
    if n_reps as u64 > MAX_REPS || scenario_index >= MAX_SCENARIOS {
        return Err(Error::InvalidConfig("scenario or replication index out of range".into()));
    }
    cell.validate(&ctx.panel)?;
    let started = Instant::now();
    let outcomes: Vec<Vec<RepOutcome>> = pool(settings.workers)?.install(|| {
        (0..n_reps as u64)
            .into_par_iter()
            .map(|r| {
                let out = run_replication(ctx, cell, models, master_seed, scenario_index, r);
                if let Some(p) = progress {
                    p.fetch_add(1, Ordering::Relaxed);
                }
                out
            })
            .collect()
    });
    let elapsed_secs = started.elapsed().as_secs_f64();

    models
        .iter()
        .enumerate()
        .map(|(m, model)| {
            let per_model: Vec<RepOutcome> = outcomes.iter().map(|o| o[m].clone()).collect();
            let scenario = PolicyScenario {
                cell: *cell,
                model: *model,
                n_reps,
                master_seed,
            };
            summarize_scenario(ctx, scenario, scenario_index, per_model, settings, elapsed_secs)
        })
        .collect()
}

fn summarize_scenario(
    ctx: &PanelContext,
    scenario: PolicyScenario,
    scenario_index: u64,
    outcomes: Vec<RepOutcome>,
    settings: &RunSettings,
    elapsed_secs: f64,
) -> Result<ScenarioResult> {
    let mut primary = Vec::with_capacity(outcomes.len());
    let mut secondary = Vec::new();
    for o in &outcomes {
        if let RepOutcome::Fit { primary: p, secondary: s } = o {
            primary.push(*p);
            secondary.extend(s.iter().copied());
        }
    }
    let n_failed = outcomes.len() - primary.len();
    let fail_rate = n_failed as f64 / outcomes.len() as f64;
    if fail_rate > ABORT_FAIL_RATE {
        return Err(Error::AbortThreshold {
            rate: fail_rate,
            threshold: ABORT_FAIL_RATE,
        });
    }
    let alpha = scenario.model.alpha;
    let sd = ctx.summary.outcome_sd;
    let summarize_role = |recs: &[ReplicationRecord]| -> Result<MetricSummary> {
        let truth_is_null = recs.first().is_some_and(|r| r.truth == 0.0);
        summarize(recs, truth_is_null, sd, alpha)
    };
    let primary_summary = summarize_role(&primary)?;
    let secondary_summary = if secondary.is_empty() {
        None
    } else {
        Some(summarize_role(&secondary)?)
    };
    Ok(ScenarioResult {
        scenario_id: scenario_id(scenario_index, &scenario.model),
        scenario_index,
        scenario,
        primary: primary_summary,
        secondary: secondary_summary,
        n_failed,
        fail_rate,
        records: (outcomes.len() <= settings.retain_records_up_to).then_some(outcomes),
        elapsed_secs,
    })
}

pub fn scenario_id(scenario_index: u64, model: &ModelSpec) -> String {
    format!("c{scenario_index:04}-{}-{}", model.model_class, model.specification)
}

/// Runs a single scenario as scenario index 0.
pub fn run_scenario(ctx: &PanelContext, scenario: &PolicyScenario, settings: &RunSettings) -> Result<ScenarioResult> {
    let mut results = run_cell(
        ctx,
        &scenario.cell,
        std::slice::from_ref(&scenario.model),
        scenario.n_reps,
        scenario.master_seed,
        0,
        settings,
        None,
    )?;
    Ok(results.remove(0))
}

/// Factor levels of a full factorial grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub effects: Vec<(f64, f64)>,
    pub scale_mode: crate::outcome::ScaleMode,
    pub gaps: Vec<GapCondition>,
    pub n_treated: Vec<usize>,
    pub phase_in: Vec<PhaseIn>,
    pub ordering: Vec<OrderingMode>,
    pub models: Vec<ModelSpec>,
}

impl GridSpec {
    /// Data cells in canonical order: effects, gaps, treated counts, phase-in, ordering.
    pub fn cells(&self) -> Vec<DataCell> {
        let mut out = Vec::new();
        for &(p1, p2) in &self.effects {
            for &gap in &self.gaps {
                for &n_treated in &self.n_treated {
                    for &phase_in in &self.phase_in {
                        for &ordering in &self.ordering {
                            out.push(DataCell {
                                effects: EffectSpec {
                                    pct_primary: p1,
                                    pct_secondary: p2,
                                    scale_mode: self.scale_mode,
                                },
                                gap,
                                n_treated,
                                phase_in,
                                ordering,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self, panel: &Panel) -> Result<()> {
        let empty = [
            ("effects", self.effects.is_empty()),
            ("gaps", self.gaps.is_empty()),
            ("n_treated", self.n_treated.is_empty()),
            ("phase_in", self.phase_in.is_empty()),
            ("ordering", self.ordering.is_empty()),
            ("models", self.models.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::InvalidConfig(format!("grid.{name} must not be empty")));
        }
        if self.cells().len() as u64 > MAX_SCENARIOS {
            return Err(Error::InvalidConfig("grid has too many cells".into()));
        }
        self.cells().iter().try_for_each(|c| c.validate(panel))
    }
}

/// Runs every cell of `grid`, returning results in cell order then model order.
pub fn run_grid(
    ctx: &PanelContext,
    grid: &GridSpec,
    n_reps: usize,
    master_seed: u64,
    settings: &RunSettings,
    progress: Option<&AtomicUsize>,
) -> Result<Vec<ScenarioResult>> {
    grid.validate(&ctx.panel)?;
    let mut out = Vec::new();
    for (i, cell) in grid.cells().iter().enumerate() {
        out.extend(run_cell(ctx, cell, &grid.models, n_reps, master_seed, i as u64, settings, progress)?);
    }
    Ok(out)
}
