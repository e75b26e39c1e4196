//! Performance metrics over Monte Carlo replications: bias, variance, RMSE,
//! Type I and Type S error rates, and confidence-interval coverage.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One replication's estimate of one policy coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    /// True effect on the rate scale.
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n_reps: usize,
    pub truth: f64,
    /// `mean(estimate) − truth`, rate scale.
    pub bias: f64,
    /// Bias over the outcome SD; null settings only.
    pub std_bias: Option<f64>,
    /// `100 · bias / truth`; non-null settings only. Positive means the
    /// estimate overshoots in the direction of the true effect.
    pub rel_bias_pct: Option<f64>,
    /// Mean squared standard error.
    pub var_model: f64,
    /// Sample variance of the estimates.
    pub var_empirical: f64,
    pub rmse: f64,
    pub type1_rate: Option<f64>,
    pub type_s_rate: Option<f64>,
    pub coverage: f64,
}

/// Aggregates replication records that share one true effect.
///
/// `sd_scale` standardizes bias in null settings and must be positive there.
pub fn summarize(records: &[ReplicationRecord], truth_is_null: bool, sd_scale: f64, alpha: f64) -> Result<MetricSummary> {
    let first = records.first().ok_or(Error::EmptyInput)?;
    let truth = first.truth;
    if let Some(r) = records.iter().find(|r| r.truth != truth) {
        return Err(Error::MixedTruths(truth, r.truth));
    }
    let n_reps = records.len();
    if n_reps < 2 {
        return Err(Error::InvalidConfig("need at least 2 replications to summarize".into()));
    }
    if truth_is_null && !(sd_scale > 0.0) {
        return Err(Error::InvalidConfig("sd_scale must be positive for null settings".into()));
    }
    if truth_is_null && truth != 0.0 {
        return Err(Error::InvalidConfig(format!("null setting with nonzero truth {truth}")));
    }

    let n = n_reps as f64;
    let mean_est = records.iter().map(|r| r.estimate).sum::<f64>() / n;
    let bias = mean_est - truth;
    let var_empirical = records.iter().map(|r| (r.estimate - mean_est).powi(2)).sum::<f64>() / (n - 1.0);
    let var_model = records.iter().map(|r| r.se * r.se).sum::<f64>() / n;
    let rmse = (records.iter().map(|r| (r.estimate - truth).powi(2)).sum::<f64>() / n).sqrt();

    let rate = |pred: &dyn Fn(&ReplicationRecord) -> bool| records.iter().filter(|r| pred(r)).count() as f64 / n;
    let coverage = rate(&|r| r.ci_low <= truth && truth <= r.ci_high);
    let type1_rate = truth_is_null.then(|| rate(&|r| r.p_value < alpha));
    let type_s_rate = if truth < 0.0 {
        Some(rate(&|r| r.ci_low > 0.0))
    } else if truth > 0.0 {
        Some(rate(&|r| r.ci_high < 0.0))
    } else {
        None
    };

    Ok(MetricSummary {
        n_reps,
        truth,
        bias,
        std_bias: truth_is_null.then(|| bias / sd_scale),
        rel_bias_pct: (truth != 0.0).then(|| 100.0 * bias / truth),
        var_model,
        var_empirical,
        rmse,
        type1_rate,
        type_s_rate,
        coverage,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasRegime {
    /// Standardized bias, effect-size scale.
    Null,
    /// Relative bias in percent.
    NonNull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasClass {
    None,
    Small,
    Moderate,
    Large,
}

impl fmt::Display for BiasClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BiasClass::None => "none",
            BiasClass::Small => "small",
            BiasClass::Moderate => "moderate",
            BiasClass::Large => "large",
        })
    }
}

/// Relative-bias band edges in percent: none / small / moderate / large.
pub const NON_NULL_BAND_EDGES: [f64; 3] = [5.0, 10.0, 20.0];
/// Standardized-bias band edges: small / moderate / large.
pub const NULL_BAND_EDGES: [f64; 2] = [0.2, 0.4];

/// Labels a bias value; band edges belong to the higher category.
///
/// In the null regime an exactly zero bias is `None`, anything below the
/// first edge is `Small`.
pub fn classify_bias(value: f64, regime: BiasRegime) -> BiasClass {
    let v = value.abs();
    match regime {
        BiasRegime::NonNull => {
            let [a, b, c] = NON_NULL_BAND_EDGES;
            if v < a {
                BiasClass::None
            } else if v < b {
                BiasClass::Small
            } else if v < c {
                BiasClass::Moderate
            } else {
                BiasClass::Large
            }
        }
        BiasRegime::Null => {
            let [a, b] = NULL_BAND_EDGES;
            if v == 0.0 {
                BiasClass::None
            } else if v < a {
                BiasClass::Small
            } else if v < b {
                BiasClass::Moderate
            } else {
                BiasClass::Large
            }
        }
    }
}
