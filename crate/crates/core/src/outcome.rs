//! Applies simulated policy effects to a null-condition panel.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{panel_summary, Panel, PanelSummary};
use crate::policy::ExposureMatrix;

/// What a percentage effect is a percentage of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Each treated unit's own mean outcome over the panel years.
    UnitMean,
    /// The panel's mean outcome over all unit-years.
    #[default]
    GrandMean,
}

impl fmt::Display for ScaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScaleMode::UnitMean => "unit_mean",
            ScaleMode::GrandMean => "grand_mean",
        })
    }
}

/// Policy effects as proportions of the outcome scale (`-0.10` is a 10% reduction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSpec {
    pub pct_primary: f64,
    pub pct_secondary: f64,
    #[serde(default)]
    pub scale_mode: ScaleMode,
}

impl EffectSpec {
    pub fn new(pct_primary: f64, pct_secondary: f64) -> Self {
        EffectSpec {
            pct_primary,
            pct_secondary,
            scale_mode: ScaleMode::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.pct_primary, self.pct_secondary] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("effect {v} outside [-1, 1]")));
            }
        }
        Ok(())
    }

    /// Rate-scale effect reported as the estimand.
    ///
    /// Under `UnitMean` the per-unit effects vary; the reported truth is the
    /// percentage of the average unit mean, which on a balanced panel equals
    /// the grand mean, so both modes share one estimand.
    pub fn reference_truth(&self, summary: &PanelSummary) -> (f64, f64) {
        true_effect_on_rate(self, summary.grand_mean)
    }
}

/// Converts percentage effects to the rate scale: `te_k = pct_k * scale`.
pub fn true_effect_on_rate(spec: &EffectSpec, scale: f64) -> (f64, f64) {
    (spec.pct_primary * scale, spec.pct_secondary * scale)
}

/// A panel whose treated units carry simulated effects.
#[derive(Debug, Clone)]
pub struct TreatedPanel<'a> {
    pub panel: &'a Panel,
    /// Observed outcome under treatment, in panel row order. May be negative
    /// for extreme effects on low-rate units; it is deliberately not truncated.
    pub y_star: Vec<f64>,
    /// Per-unit rate-scale effect of the primary policy.
    pub te1: Vec<f64>,
    pub te2: Vec<f64>,
}

/// `y*_it = y_it + te1_i * a1_it + te2_i * a2_it`.
pub fn apply_effects<'a>(panel: &'a Panel, exposures: &ExposureMatrix, spec: &EffectSpec) -> Result<TreatedPanel<'a>> {
    let summary = panel_summary(panel);
    apply_effects_with(panel, &summary, exposures, spec)
}

/// As [`apply_effects`], reusing a precomputed summary of `panel`.
pub fn apply_effects_with<'a>(
    panel: &'a Panel,
    summary: &PanelSummary,
    exposures: &ExposureMatrix,
    spec: &EffectSpec,
) -> Result<TreatedPanel<'a>> {
    let (nu, ny) = (panel.n_units(), panel.n_years());
    if exposures.n_years() != ny {
        return Err(Error::MissingExposure(format!(
            "exposures cover {} years, panel has {ny}",
            exposures.n_years()
        )));
    }
    if exposures.n_units() != nu {
        let first_missing = panel.units().get(exposures.n_units()).cloned().unwrap_or_default();
        return Err(Error::MissingExposure(first_missing));
    }

    let scales: Vec<f64> = match spec.scale_mode {
        ScaleMode::UnitMean => summary.unit_means.clone(),
        ScaleMode::GrandMean => vec![summary.grand_mean; nu],
    };
    let (te1, te2): (Vec<f64>, Vec<f64>) = scales.iter().map(|&s| true_effect_on_rate(spec, s)).unzip();

    let mut y_star = panel.outcomes();
    for u in 0..nu {
        if !exposures.treated[u] {
            continue;
        }
        for t in 0..ny {
            let i = u * ny + t;
            y_star[i] += te1[u] * exposures.a1[i] + te2[u] * exposures.a2[i];
        }
    }
    Ok(TreatedPanel {
        panel,
        y_star,
        te1,
        te2,
    })
}
