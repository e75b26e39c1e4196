use nalgebra::{DMatrix, DVector};

use super::{FixedEffects, ModelClass, ModelSpec, Weighting};
use crate::error::{Error, Result};
use crate::outcome::TreatedPanel;
use crate::policy::ExposureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    Policy1,
    Policy2,
    Covariate,
    Lag,
    YearFe,
    UnitFe,
    Intercept,
}

/// A factor swept out of `y` and `x` by weighted within-group demeaning.
#[derive(Debug, Clone)]
pub struct Absorption {
    pub role: ColumnRole,
    /// Group index per row.
    pub groups: Vec<usize>,
    pub n_groups: usize,
    pub y_raw: DVector<f64>,
    pub x_raw: DMatrix<f64>,
}

/// Response, regressors and weights for one WLS fit.
///
/// When `absorbed` is set, `y` and `x` are already demeaned within its
/// groups, and the absorbed levels (intercept included) count towards the
/// model's parameter total through [`DesignMatrix::n_params`].
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub roles: Vec<ColumnRole>,
    pub weights: Vec<f64>,
    pub clusters: Vec<usize>,
    /// Panel year offset of each row.
    pub row_years: Vec<usize>,
    pub row_units: Vec<usize>,
    pub absorbed: Option<Absorption>,
}

impl DesignMatrix {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Total number of estimated parameters, absorbed levels included.
    pub fn n_params(&self) -> usize {
        self.x.ncols() + self.absorbed.as_ref().map_or(0, |a| a.n_groups)
    }

    pub fn column(&self, role: ColumnRole) -> Option<usize> {
        self.roles.iter().position(|&r| r == role)
    }

    pub fn n_clusters(&self) -> usize {
        let mut ids = self.clusters.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// Builds the regression for `spec` on a treated panel.
///
/// AR rows cover every year but the first (lost to the lag); DID rows cover
/// all years. Reference levels are the first unit and the first design year.
pub fn build_design(tp: &TreatedPanel<'_>, exposures: &ExposureMatrix, spec: &ModelSpec) -> Result<DesignMatrix> {
    let panel = tp.panel;
    let (nu, ny) = (panel.n_units(), panel.n_years());
    if ny < 2 {
        return Err(Error::TooFewYears(ny));
    }
    if exposures.n_units() != nu || exposures.n_years() != ny {
        return Err(Error::MissingExposure("exposure matrix does not match panel".into()));
    }
    let is_ar = spec.model_class == ModelClass::Ar;
    let t0 = usize::from(is_ar);
    let design_years = ny - t0;
    let n = nu * design_years;

    // (unit, year offset) -> panel row index
    let mut src = Vec::with_capacity(n);
    let mut row_units = Vec::with_capacity(n);
    let mut row_years = Vec::with_capacity(n);
    for u in 0..nu {
        for t in t0..ny {
            src.push(u * ny + t);
            row_units.push(u);
            row_years.push(t);
        }
    }

    let mut cols: Vec<(ColumnRole, Vec<f64>)> = Vec::new();
    let (p1, p2) = if is_ar {
        (&exposures.da1, &exposures.da2)
    } else {
        (&exposures.a1, &exposures.a2)
    };
    cols.push((ColumnRole::Policy1, src.iter().map(|&i| p1[i]).collect()));
    if spec.includes_secondary() {
        cols.push((ColumnRole::Policy2, src.iter().map(|&i| p2[i]).collect()));
    }
    cols.push((ColumnRole::Covariate, src.iter().map(|&i| panel.rows()[i].covariate).collect()));
    if is_ar {
        cols.push((ColumnRole::Lag, src.iter().map(|&i| tp.y_star[i - 1]).collect()));
    }

    let dummy = |levels: &[usize], level: usize| -> Vec<f64> {
        levels.iter().map(|&l| if l == level { 1.0 } else { 0.0 }).collect()
    };
    let absorb_role = match (spec.fixed_effects, spec.model_class) {
        (FixedEffects::Dummies, _) => None,
        (FixedEffects::Absorbed, ModelClass::Ar) => Some(ColumnRole::YearFe),
        (FixedEffects::Absorbed, ModelClass::Did) => Some(ColumnRole::UnitFe),
    };
    if !is_ar && absorb_role.is_none() {
        for u in 1..nu {
            cols.push((ColumnRole::UnitFe, dummy(&row_units, u)));
        }
    }
    if absorb_role != Some(ColumnRole::YearFe) {
        for t in t0 + 1..ny {
            cols.push((ColumnRole::YearFe, dummy(&row_years, t)));
        }
    }
    if absorb_role.is_none() {
        cols.push((ColumnRole::Intercept, vec![1.0; n]));
    }

    let roles: Vec<ColumnRole> = cols.iter().map(|(r, _)| *r).collect();
    let mut x = DMatrix::<f64>::zeros(n, cols.len());
    for (j, (_, c)) in cols.iter().enumerate() {
        x.column_mut(j).copy_from_slice(c);
    }
    let y = DVector::from_iterator(n, src.iter().map(|&i| tp.y_star[i]));
    let weights: Vec<f64> = match spec.weighting {
        Weighting::Population => src.iter().map(|&i| panel.rows()[i].population).collect(),
        Weighting::Unweighted => vec![1.0; n],
    };

    let mut design = DesignMatrix {
        y,
        x,
        roles,
        weights,
        clusters: row_units.clone(),
        row_years,
        row_units,
        absorbed: None,
    };
    if let Some(role) = absorb_role {
        let (groups, n_groups) = match role {
            ColumnRole::YearFe => (design.row_years.iter().map(|&t| t - t0).collect(), design_years),
            _ => (design.row_units.clone(), nu),
        };
        absorb(&mut design, role, groups, n_groups);
    }
    Ok(design)
}

fn absorb(d: &mut DesignMatrix, role: ColumnRole, groups: Vec<usize>, n_groups: usize) {
    let mut wsum = vec![0.0; n_groups];
    for (&g, &w) in groups.iter().zip(&d.weights) {
        wsum[g] += w;
    }
    let demean = |v: &mut [f64]| {
        let mut acc = vec![0.0; n_groups];
        for ((&g, &w), &x) in groups.iter().zip(&d.weights).zip(v.iter()) {
            acc[g] += w * x;
        }
        for (a, s) in acc.iter_mut().zip(&wsum) {
            *a /= s;
        }
        for (x, &g) in v.iter_mut().zip(&groups) {
            *x -= acc[g];
        }
    };
    let y_raw = d.y.clone();
    let x_raw = d.x.clone();
    demean(d.y.as_mut_slice());
    for mut c in d.x.column_iter_mut() {
        demean(c.as_mut_slice());
    }
    d.absorbed = Some(Absorption {
        role,
        groups,
        n_groups,
        y_raw,
        x_raw,
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Specification;
    use crate::outcome::{apply_effects, EffectSpec};
    use crate::panel::{synth_panel, Panel};
    use crate::policy::{draw_policies, GapCondition, OrderingMode, PhaseIn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Panel, ExposureMatrix) {
        let panel = synth_panel(&Default::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = draw_policies(&panel, 30, &GapCondition::C2, OrderingMode::Random, PhaseIn::Instantaneous, &mut rng).unwrap();
        (panel, d.exposures)
    }

    fn spec(class: ModelClass, s: Specification, fe: FixedEffects) -> ModelSpec {
        ModelSpec {
            fixed_effects: fe,
            ..ModelSpec::new(class, s)
        }
    }

    fn count(d: &DesignMatrix, role: ColumnRole) -> usize {
        d.roles.iter().filter(|&&r| r == role).count()
    }

    #[test]
    fn ar_shapes() {
        let (panel, ex) = setup();
        let tp = apply_effects(&panel, &ex, &EffectSpec::new(-0.1, -0.1)).unwrap();
        let d = build_design(&tp, &ex, &spec(ModelClass::Ar, Specification::Correct, FixedEffects::Dummies)).unwrap();
        assert_eq!(d.n_obs(), 850);
        assert_eq!(count(&d, ColumnRole::Policy1) + count(&d, ColumnRole::Policy2), 2);
        assert_eq!(count(&d, ColumnRole::YearFe), 16);
        assert_eq!(d.n_params(), 21);
        let m = build_design(&tp, &ex, &spec(ModelClass::Ar, Specification::Misspecified, FixedEffects::Dummies)).unwrap();
        assert_eq!(count(&m, ColumnRole::Policy1) + count(&m, ColumnRole::Policy2), 1);

        let a = build_design(&tp, &ex, &spec(ModelClass::Ar, Specification::Correct, FixedEffects::Absorbed)).unwrap();
        assert_eq!(a.x.ncols(), 4);
        assert_eq!(a.n_params(), 21);
    }

    #[test]
    fn ar_lag_and_change_coding() {
        let (panel, ex) = setup();
        let tp = apply_effects(&panel, &ex, &EffectSpec::new(-0.1, -0.1)).unwrap();
        let d = build_design(&tp, &ex, &spec(ModelClass::Ar, Specification::Correct, FixedEffects::Dummies)).unwrap();
        let lag = d.column(ColumnRole::Lag).unwrap();
        // row 0 is (unit 0, year offset 1)
        assert_eq!(d.x[(0, lag)], tp.y_star[0]);
        assert_eq!(d.y[0], tp.y_star[1]);
        let p1 = d.column(ColumnRole::Policy1).unwrap();
        assert_eq!(d.x[(0, p1)], ex.da1[1]);
    }

    #[test]
    fn did_shapes() {
        let (panel, ex) = setup();
        let tp = apply_effects(&panel, &ex, &EffectSpec::new(-0.1, -0.1)).unwrap();
        let d = build_design(&tp, &ex, &spec(ModelClass::Did, Specification::Correct, FixedEffects::Dummies)).unwrap();
        assert_eq!(d.n_obs(), 900);
        assert_eq!(d.x.ncols(), 70);
        assert_eq!(count(&d, ColumnRole::UnitFe), 49);
        assert_eq!(count(&d, ColumnRole::YearFe), 17);
        let a = build_design(&tp, &ex, &spec(ModelClass::Did, Specification::Correct, FixedEffects::Absorbed)).unwrap();
        assert_eq!(a.x.ncols(), 20);
        assert_eq!(a.n_params(), 70);
    }

    #[test]
    fn weights_follow_population() {
        let (panel, ex) = setup();
        let tp = apply_effects(&panel, &ex, &EffectSpec::new(0.0, 0.0)).unwrap();
        let mut s = spec(ModelClass::Did, Specification::Correct, FixedEffects::Dummies);
        let d = build_design(&tp, &ex, &s).unwrap();
        assert_eq!(d.weights[0], panel.row(0, 0).population);
        s.weighting = Weighting::Unweighted;
        let d = build_design(&tp, &ex, &s).unwrap();
        assert!(d.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn step_exposures_change_code_once() {
        let (panel, _) = setup();
        let mut ex = ExposureMatrix::untreated(panel.n_units(), panel.n_years());
        let step: Vec<f64> = (0..18).map(|t| if t >= 6 { 1.0 } else { 0.0 }).collect();
        for u in [2, 7, 11] {
            ex.set_unit(u, &step, &step);
        }
        let tp = apply_effects(&panel, &ex, &EffectSpec::new(-0.1, -0.1)).unwrap();
        let d = build_design(&tp, &ex, &spec(ModelClass::Ar, Specification::Misspecified, FixedEffects::Dummies)).unwrap();
        let p1 = d.column(ColumnRole::Policy1).unwrap();
        for u in 0..panel.n_units() {
            let vals: Vec<f64> = (0..d.n_obs()).filter(|&i| d.row_units[i] == u).map(|i| d.x[(i, p1)]).collect();
            let ones = vals.iter().filter(|&&v| v == 1.0).count();
            let zeros = vals.iter().filter(|&&v| v == 0.0).count();
            let expect_ones = usize::from([2, 7, 11].contains(&u));
            assert_eq!((ones, zeros), (expect_ones, 17 - expect_ones));
        }
    }
}
