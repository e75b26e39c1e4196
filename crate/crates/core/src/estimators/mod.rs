//! Policy-effect estimators: autoregressive (AR) and two-way fixed-effects
//! difference-in-differences (DID) models, each correctly specified or with
//! the co-occurring policy omitted.

mod covariance;
mod design;
mod fit;
mod wls;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use covariance::{cluster_robust_cov, iid_cov};
pub use design::{build_design, Absorption, ColumnRole, DesignMatrix};
pub use fit::{fit_policy_model, FitResult, PolicyEstimate};
pub use wls::{fit_wls, WlsFit, RCOND_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelClass {
    /// Lagged outcome + year effects, change-coded policies.
    #[serde(rename = "AR")]
    Ar,
    /// Unit + year effects, level-coded policies.
    #[serde(rename = "DID")]
    Did,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Specification {
    Correct,
    /// Omits the co-occurring policy.
    Misspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Population,
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeType {
    #[default]
    ClusterRobust,
    Iid,
}

/// How fixed effects enter the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedEffects {
    /// One factor is swept out by weighted within-group demeaning. Policy
    /// coefficients, residuals and covariances equal the dummy-variable fit.
    #[default]
    Absorbed,
    /// Explicit dummy columns with the first level as reference, plus an intercept.
    Dummies,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_class: ModelClass,
    pub specification: Specification,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default)]
    pub se_type: SeType,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub fixed_effects: FixedEffects,
}

fn default_alpha() -> f64 {
    0.05
}

impl ModelSpec {
    pub fn new(model_class: ModelClass, specification: Specification) -> Self {
        ModelSpec {
            model_class,
            specification,
            weighting: Weighting::default(),
            se_type: SeType::default(),
            alpha: default_alpha(),
            fixed_effects: FixedEffects::default(),
        }
    }

    pub fn includes_secondary(&self) -> bool {
        self.specification == Specification::Correct
    }
}

impl fmt::Display for ModelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelClass::Ar => "AR",
            ModelClass::Did => "DID",
        })
    }
}

impl fmt::Display for Specification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Specification::Correct => "correct",
            Specification::Misspecified => "misspecified",
        })
    }
}
