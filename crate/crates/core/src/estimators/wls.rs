use nalgebra::{DMatrix, DVector};

use super::DesignMatrix;
use crate::error::{Error, Result};

/// Fits with a smaller reciprocal 1-norm condition number are refused.
pub const RCOND_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct WlsFit {
    pub coef: DVector<f64>,
    /// `(XᵀWX)⁻¹`.
    pub bread: DMatrix<f64>,
    pub residuals: DVector<f64>,
    /// Reciprocal 1-norm condition number of the column-equilibrated R factor.
    pub rcond: f64,
}

/// Weighted least squares by Householder QR of `W^½ X` with equilibrated columns.
pub fn fit_wls(design: &DesignMatrix) -> Result<WlsFit> {
    let (n, p) = design.x.shape();
    if design.weights.len() != n || design.y.len() != n {
        return Err(Error::InvalidConfig("design dimensions disagree".into()));
    }
    if design.weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidValue {
            row: design.weights.iter().position(|&w| !(w > 0.0 && w.is_finite())).unwrap(),
            message: "weights must be positive".into(),
        });
    }
    if p == 0 || n < p {
        return Err(Error::RankDeficient { rcond: 0.0 });
    }

    let sqrt_w: Vec<f64> = design.weights.iter().map(|w| w.sqrt()).collect();
    let mut xs = design.x.clone();
    for (i, &s) in sqrt_w.iter().enumerate() {
        xs.row_mut(i).scale_mut(s);
    }
    // Scale against the pre-absorption columns so a column swept out by the
    // fixed effects shows up as (near) zero rather than being renormalized.
    let reference = design.absorbed.as_ref().map_or(&design.x, |a| &a.x_raw);
    let mut col_scale = Vec::with_capacity(p);
    for j in 0..p {
        let norm = reference
            .column(j)
            .iter()
            .zip(&sqrt_w)
            .map(|(v, s)| (v * s).powi(2))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Err(Error::RankDeficient { rcond: 0.0 });
        }
        col_scale.push(norm);
        xs.column_mut(j).unscale_mut(norm);
    }

    let qr = xs.qr();
    let r = qr.r();
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or(Error::RankDeficient { rcond: 0.0 })?;
    let rcond = 1.0 / (norm1(&r) * norm1(&r_inv));
    if !(rcond >= RCOND_THRESHOLD) {
        return Err(Error::RankDeficient { rcond });
    }

    let mut qty = DVector::from_iterator(n, design.y.iter().zip(&sqrt_w).map(|(y, s)| y * s));
    qr.q_tr_mul(&mut qty);
    let mut coef = &r_inv * qty.rows(0, p);
    let mut bread = &r_inv * r_inv.transpose();
    for j in 0..p {
        coef[j] /= col_scale[j];
    }
    for i in 0..p {
        for j in 0..p {
            bread[(i, j)] /= col_scale[i] * col_scale[j];
        }
    }
    let residuals = &design.y - &design.x * &coef;
    Ok(WlsFit {
        coef,
        bread,
        residuals,
        rcond,
    })
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::ColumnRole;

    pub(crate) fn plain_design(x: DMatrix<f64>, y: DVector<f64>, w: Vec<f64>) -> DesignMatrix {
        let n = y.len();
        DesignMatrix {
            roles: vec![ColumnRole::Covariate; x.ncols()],
            x,
            y,
            weights: w,
            clusters: (0..n).collect(),
            row_years: vec![0; n],
            row_units: (0..n).collect(),
            absorbed: None,
        }
    }

    #[test]
    fn exact_line() {
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(6, |i, _| 3.0 - 0.5 * i as f64);
        let fit = fit_wls(&plain_design(x, y, vec![1.0; 6])).unwrap();
        assert!((fit.coef[0] - 3.0).abs() < 1e-12);
        assert!((fit.coef[1] + 0.5).abs() < 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let x = DMatrix::from_fn(8, 3, |i, j| match j {
            0 => 1.0,
            _ => (i * i) as f64,
        });
        let y = DVector::from_fn(8, |i, _| i as f64);
        assert!(matches!(
            fit_wls(&plain_design(x, y, vec![1.0; 8])),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn zero_column_is_rank_deficient() {
        let x = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 + i as f64 } else { 0.0 });
        let y = DVector::from_element(5, 1.0);
        assert!(matches!(
            fit_wls(&plain_design(x, y, vec![1.0; 5])),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn nonpositive_weight_rejected() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_element(3, 1.0);
        assert!(fit_wls(&plain_design(x, y, vec![1.0, 0.0, 1.0])).is_err());
    }
}
