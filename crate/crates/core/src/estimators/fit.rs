use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{build_design, cluster_robust_cov, fit_wls, iid_cov, ColumnRole, DesignMatrix, ModelSpec, SeType};
use crate::error::{Error, Result};
use crate::outcome::TreatedPanel;
use crate::policy::ExposureMatrix;

/// Inference for one policy coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyEstimate {
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Primary-policy effect on the rate scale.
    pub alpha1: PolicyEstimate,
    /// Co-occurring-policy effect; `None` for the misspecified model.
    pub alpha2: Option<PolicyEstimate>,
    /// Covariate coefficient.
    pub beta_hat: f64,
    /// Lagged-outcome coefficient (AR only).
    pub gamma_hat: Option<f64>,
    /// Year effects relative to the first design year (which is 0).
    pub year_effects: Vec<f64>,
    /// Unit effects relative to the first unit (DID only).
    pub unit_effects: Option<Vec<f64>>,
    /// Covariance of the explicitly estimated coefficients, in design column order.
    pub cov: DMatrix<f64>,
    pub coef: DVector<f64>,
    pub residuals: DVector<f64>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub df: f64,
    pub rcond: f64,
}

thread_local! {
    static T_CRIT: RefCell<HashMap<(u64, u64), f64>> = RefCell::new(HashMap::new());
}

/// Two-sided critical value of Student's t.
pub(crate) fn t_critical(df: f64, alpha: f64) -> f64 {
    T_CRIT.with(|cache| {
        *cache.borrow_mut().entry((df.to_bits(), alpha.to_bits())).or_insert_with(|| {
            StudentsT::new(0.0, 1.0, df)
                .expect("positive degrees of freedom")
                .inverse_cdf(1.0 - alpha / 2.0)
        })
    })
}

fn two_sided_p(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Builds the design, solves WLS, and attaches inference for the policy terms.
///
/// Cluster-robust intervals use `G − 1` degrees of freedom, model-based ones `N − K`.
pub fn fit_policy_model(tp: &TreatedPanel<'_>, exposures: &ExposureMatrix, spec: &ModelSpec) -> Result<FitResult> {
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {} outside (0, 1)", spec.alpha)));
    }
    let design = build_design(tp, exposures, spec)?;
    fit_design(&design, spec)
}

pub(crate) fn fit_design(design: &DesignMatrix, spec: &ModelSpec) -> Result<FitResult> {
    let wls = fit_wls(design)?;
    let n_clusters = design.n_clusters();
    let (cov, df) = match spec.se_type {
        SeType::ClusterRobust => (
            cluster_robust_cov(design, &wls.residuals, &wls.bread)?,
            n_clusters as f64 - 1.0,
        ),
        SeType::Iid => (
            iid_cov(design, &wls.residuals, &wls.bread),
            (design.n_obs() - design.n_params()) as f64,
        ),
    };
    if df < 1.0 {
        return Err(Error::TooFewClusters(n_clusters));
    }
    let crit = t_critical(df, spec.alpha);

    let inference = |j: usize| {
        let estimate = wls.coef[j];
        let se = cov[(j, j)].max(0.0).sqrt();
        let p_value = if se > 0.0 { two_sided_p(estimate / se, df) } else { f64::NAN };
        PolicyEstimate {
            estimate,
            se,
            ci_low: estimate - crit * se,
            ci_high: estimate + crit * se,
            p_value,
        }
    };
    let col = |role| design.column(role);
    let alpha1 = inference(col(ColumnRole::Policy1).expect("policy column"));
    let alpha2 = col(ColumnRole::Policy2).map(inference);
    let beta_hat = wls.coef[col(ColumnRole::Covariate).expect("covariate column")];
    let gamma_hat = col(ColumnRole::Lag).map(|j| wls.coef[j]);

    let (year_effects, unit_effects) = fixed_effects(design, &wls.coef);

    Ok(FitResult {
        alpha1,
        alpha2,
        beta_hat,
        gamma_hat,
        year_effects,
        unit_effects,
        cov,
        coef: wls.coef,
        residuals: wls.residuals,
        n_obs: design.n_obs(),
        n_clusters,
        df,
        rcond: wls.rcond,
    })
}

// Recovers FE contrasts from dummy coefficients or, for an absorbed factor,
// from weighted group means of the partial residual.
fn fixed_effects(design: &DesignMatrix, coef: &DVector<f64>) -> (Vec<f64>, Option<Vec<f64>>) {
    let dummies = |role: ColumnRole| -> Vec<f64> {
        let mut v = vec![0.0];
        v.extend(
            design
                .roles
                .iter()
                .zip(coef.iter())
                .filter(|(&r, _)| r == role)
                .map(|(_, &c)| c),
        );
        v
    };
    let has_unit_fe = design.roles.contains(&ColumnRole::UnitFe)
        || design.absorbed.as_ref().is_some_and(|a| a.role == ColumnRole::UnitFe);

    match &design.absorbed {
        None => {
            let units = has_unit_fe.then(|| dummies(ColumnRole::UnitFe));
            (dummies(ColumnRole::YearFe), units)
        }
        Some(a) => {
            let partial = &a.y_raw - &a.x_raw * coef;
            let mut num = vec![0.0; a.n_groups];
            let mut den = vec![0.0; a.n_groups];
            for ((&g, &w), &r) in a.groups.iter().zip(&design.weights).zip(partial.iter()) {
                num[g] += w * r;
                den[g] += w;
            }
            let levels: Vec<f64> = num.iter().zip(&den).map(|(n, d)| n / d).collect();
            let contrasts: Vec<f64> = levels.iter().map(|l| l - levels[0]).collect();
            match a.role {
                ColumnRole::YearFe => (contrasts, None),
                _ => (dummies(ColumnRole::YearFe), Some(contrasts)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_critical_values() {
        assert!((t_critical(49.0, 0.05) - 2.009575237).abs() < 1e-6);
        assert!((t_critical(800.0, 0.05) - 1.962940).abs() < 1e-5, "{}", t_critical(800.0, 0.05));
        assert!((two_sided_p(2.009575237, 49.0) - 0.05).abs() < 1e-7);
    }
}
