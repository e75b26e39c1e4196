//! Declarative run configuration (TOML or JSON).
//!
//! A config names the panel, the factor levels of the grid, and run
//! settings. Unknown keys are rejected at parse time; [`RunConfig::check`]
//! then reports every invalid field at once.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{FixedEffects, ModelClass, ModelSpec, SeType, Specification, Weighting};
use crate::outcome::ScaleMode;
use crate::panel::{ColumnMap, Panel, SynthConfig};
use crate::policy::{sample_enactments, GapCondition, OrderingMode, PhaseIn};
use crate::runner::{derive_seed, GridSpec, PanelSource, RunSettings, MAX_REPS};

pub const DEFAULT_MASTER_SEED: u64 = 20_211_001;
pub const DEFAULT_REPS: usize = 5000;

/// The eight effect pairs of the full design, as fractions of the outcome.
pub const DEFAULT_EFFECTS: [(f64, f64); 8] = [
    (0.0, 0.0),
    (0.0, -0.15),
    (-0.15, 0.0),
    (-0.10, -0.10),
    (-0.15, -0.05),
    (-0.05, -0.15),
    (-0.10, -0.20),
    (-0.20, -0.10),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub reps: usize,
    /// Worker threads; `None` defers to the environment or one worker.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub output: OutputConfig,
    pub panel: PanelConfig,
    pub grid: GridConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: DEFAULT_MASTER_SEED,
            reps: DEFAULT_REPS,
            workers: None,
            output: OutputConfig::default(),
            panel: PanelConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write every replication's estimates.
    pub keep_reps: bool,
    /// Scenarios with more replications than this drop per-replication records from memory.
    pub max_retained_reps: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("results"),
            keep_reps: false,
            max_retained_reps: RunSettings::default().retain_records_up_to,
        }
    }
}

/// Either a CSV panel or the synthetic generator (used when `csv` is absent).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    pub columns: ColumnMap,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub class: ModelClass,
    pub spec: Specification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// `[primary, secondary]` effects as signed fractions, e.g. `[-0.1, -0.1]`.
    pub effects: Vec<[f64; 2]>,
    pub gaps: Vec<GapCondition>,
    pub n_treated: Vec<usize>,
    pub phase_in: Vec<PhaseIn>,
    pub ordering: Vec<OrderingMode>,
    pub models: Vec<ModelEntry>,
    pub scale_mode: ScaleMode,
    pub weighting: Weighting,
    pub se_type: SeType,
    pub alpha: f64,
    pub fixed_effects: FixedEffects,
}

impl Default for GridConfig {
    fn default() -> Self {
        let models = [ModelClass::Ar, ModelClass::Did]
            .into_iter()
            .flat_map(|class| {
                [Specification::Correct, Specification::Misspecified]
                    .into_iter()
                    .map(move |spec| ModelEntry { class, spec })
            })
            .collect();
        GridConfig {
            effects: DEFAULT_EFFECTS.iter().map(|&(a, b)| [a, b]).collect(),
            gaps: GapCondition::ALL.to_vec(),
            n_treated: vec![5, 30],
            phase_in: vec![PhaseIn::Instantaneous, PhaseIn::Linear3yr],
            ordering: vec![OrderingMode::Random, OrderingMode::PrimaryFirst],
            models,
            scale_mode: ScaleMode::default(),
            weighting: Weighting::default(),
            se_type: SeType::default(),
            alpha: 0.05,
            fixed_effects: FixedEffects::default(),
        }
    }
}

/// One invalid field, addressed by its dotted path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FieldErrors(pub Vec<FieldError>);

impl fmt::Display for FieldErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|e| format!("{}: {}", e.field, e.message)).collect();
        f.write_str(&parts.join("; "))
    }
}

impl From<FieldErrors> for Error {
    fn from(e: FieldErrors) -> Self {
        Error::InvalidConfig(e.to_string())
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Reads `.json` files as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text)?
        } else {
            Self::from_toml_str(&text)?
        };
        // Relative panel paths are relative to the config file.
        if let (Some(csv), Some(dir)) = (&cfg.panel.csv, path.parent()) {
            if csv.is_relative() {
                cfg.panel.csv = Some(dir.join(csv));
            }
        }
        Ok(cfg)
    }

    pub fn panel_source(&self) -> PanelSource {
        match &self.panel.csv {
            Some(path) => PanelSource::Csv {
                path: path.clone(),
                columns: self.panel.columns.clone(),
            },
            None => PanelSource::Synth(self.panel.synth.clone()),
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        let g = &self.grid;
        GridSpec {
            effects: g.effects.iter().map(|&[a, b]| (a, b)).collect(),
            scale_mode: g.scale_mode,
            gaps: g.gaps.clone(),
            n_treated: g.n_treated.clone(),
            phase_in: g.phase_in.clone(),
            ordering: g.ordering.clone(),
            models: g
                .models
                .iter()
                .map(|m| ModelSpec {
                    weighting: g.weighting,
                    se_type: g.se_type,
                    alpha: g.alpha,
                    fixed_effects: g.fixed_effects,
                    ..ModelSpec::new(m.class, m.spec)
                })
                .collect(),
        }
    }

    pub fn run_settings(&self, default_workers: usize) -> RunSettings {
        RunSettings {
            workers: self.workers.unwrap_or(default_workers).max(1),
            retain_records_up_to: if self.output.keep_reps { usize::MAX } else { self.output.max_retained_reps },
        }
    }

    /// Reports every invalid field. With a loaded `panel`, treated counts and
    /// gap windows are checked against its dimensions; otherwise against the
    /// synthetic configuration when that is the source.
    pub fn check(&self, panel: Option<&Panel>) -> std::result::Result<(), FieldErrors> {
        let mut errs = Vec::new();
        let mut err = |f: &str, m: String| errs.push(FieldError::new(f, m));

        if self.reps == 0 || self.reps as u64 >= MAX_REPS {
            err("reps", format!("must be between 1 and {}", MAX_REPS - 1));
        }
        if self.workers == Some(0) {
            err("workers", "must be at least 1".into());
        }
        if self.output.max_retained_reps == 0 {
            err("output.max_retained_reps", "must be at least 1".into());
        }
        if self.panel.csv.is_none() {
            if let Err(e) = self.panel.synth.validate() {
                err("panel.synth", e.to_string());
            }
        }

        let g = &self.grid;
        for (name, empty) in [
            ("grid.effects", g.effects.is_empty()),
            ("grid.gaps", g.gaps.is_empty()),
            ("grid.n_treated", g.n_treated.is_empty()),
            ("grid.phase_in", g.phase_in.is_empty()),
            ("grid.ordering", g.ordering.is_empty()),
            ("grid.models", g.models.is_empty()),
        ] {
            if empty {
                err(name, "must list at least one level".into());
            }
        }
        for (i, pair) in g.effects.iter().enumerate() {
            if pair.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                err(&format!("grid.effects[{i}]"), format!("{pair:?} must lie in [-1, 1]"));
            }
        }
        if !(g.alpha > 0.0 && g.alpha < 1.0) {
            err("grid.alpha", format!("{} must lie in (0, 1)", g.alpha));
        }

        let dims = match panel {
            Some(p) => Some((p.n_units(), p.first_year(), p.last_year())),
            None if self.panel.csv.is_none() => {
                let s = &self.panel.synth;
                Some((s.n_units, s.first_year, s.first_year + s.n_years as i32 - 1))
            }
            None => None,
        };
        if let Some((n_units, first, last)) = dims {
            for &k in &g.n_treated {
                if k == 0 || k > n_units {
                    err("grid.n_treated", format!("{k} treated units requested but the panel has {n_units}"));
                }
            }
            for gap in &g.gaps {
                let ordering = g.ordering.first().copied().unwrap_or(OrderingMode::Random);
                if let Err(e) = sample_enactments(gap, ordering, (first, last), &mut derive_seed(0, 0, 0)) {
                    err("grid.gaps", e.to_string());
                }
            }
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(FieldErrors(errs))
        }
    }

    /// The configuration as JSON, for manifests and cache keys.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
