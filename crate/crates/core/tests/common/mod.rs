//! Brute-force reference implementations used as test oracles.
//!
//! Plain `Vec` arithmetic with Gauss-Jordan elimination, sharing no code
//! with the library's QR path.

#![allow(dead_code)]

use copol::estimators::{ColumnRole, DesignMatrix};
use copol::panel::UnitYearRow;
use copol::Panel;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub type Mat = Vec<Vec<f64>>;

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &Mat) -> Mat {
    let n = a.len();
    let mut m: Mat = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        assert!(d.abs() > 1e-300, "singular matrix");
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn to_mat(x: &DMatrix<f64>) -> Mat {
    (0..x.nrows()).map(|i| (0..x.ncols()).map(|j| x[(i, j)]).collect()).collect()
}

/// `(XᵀWX)⁻¹` and `β = (XᵀWX)⁻¹ XᵀWy`.
pub fn normal_equations(x: &Mat, y: &[f64], w: &[f64]) -> (Vec<f64>, Mat) {
    let p = x[0].len();
    let mut xtwx = vec![vec![0.0; p]; p];
    let mut xtwy = vec![0.0; p];
    for i in 0..x.len() {
        for a in 0..p {
            xtwy[a] += w[i] * x[i][a] * y[i];
            for b in 0..p {
                xtwx[a][b] += w[i] * x[i][a] * x[i][b];
            }
        }
    }
    let inv = invert(&xtwx);
    let beta = (0..p).map(|a| (0..p).map(|b| inv[a][b] * xtwy[b]).sum()).collect();
    (beta, inv)
}

/// CR1 sandwich `c · B M B` built cluster by cluster as an explicit triple product.
pub fn sandwich(x: &Mat, w: &[f64], e: &[f64], clusters: &[usize], bread: &Mat, k_total: usize) -> Mat {
    let p = x[0].len();
    let n = x.len();
    let mut ids: Vec<usize> = clusters.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut meat = vec![vec![0.0; p]; p];
    for &g in &ids {
        let mut s = vec![0.0; p];
        for i in (0..n).filter(|&i| clusters[i] == g) {
            for a in 0..p {
                s[a] += x[i][a] * w[i] * e[i];
            }
        }
        for a in 0..p {
            for b in 0..p {
                meat[a][b] += s[a] * s[b];
            }
        }
    }
    let bm = matmul(bread, &meat);
    let v = matmul(&bm, bread);
    let (g, nf, k) = (ids.len() as f64, n as f64, k_total as f64);
    let c = g / (g - 1.0) * (nf - 1.0) / (nf - k);
    v.into_iter().map(|r| r.into_iter().map(|z| z * c).collect()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..p).map(|j| (0..m).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

/// Largest elementwise difference relative to the largest magnitude in `want`.
pub fn max_rel_diff(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max) / scale
}

pub fn flat(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub fn dflat(m: &DMatrix<f64>) -> Vec<f64> {
    flat(&to_mat(m))
}

/// A random well-conditioned clustered WLS problem.
pub fn random_design<R: Rng>(rng: &mut R) -> DesignMatrix {
    let n = rng.random_range(30..80);
    let p = rng.random_range(2..7);
    let g = rng.random_range(5..12);
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) * (1.0 + j as f64) });
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
    let y = DVector::from_fn(n, |i, _| {
        (0..p).map(|j| x[(i, j)] * beta[j]).sum::<f64>() + rng.sample::<f64, _>(StandardNormal)
    });
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..5.0)).collect();
    let clusters: Vec<usize> = (0..n).map(|i| (i * 7919) % g).collect();
    DesignMatrix {
        y,
        x,
        roles: vec![ColumnRole::Covariate; p],
        weights,
        row_years: vec![0; n],
        row_units: clusters.clone(),
        clusters,
        absorbed: None,
    }
}

/// Balanced panel with outcome `f(unit, t)`, random covariate and population `pop(unit)`.
pub fn panel_from<R: Rng>(
    n_units: usize,
    n_years: usize,
    rng: &mut R,
    pop: impl Fn(usize) -> f64,
    mut outcome: impl FnMut(usize, usize, f64) -> f64,
) -> Panel {
    let mut rows = Vec::new();
    for u in 0..n_units {
        for t in 0..n_years {
            let covariate = 5.0 + rng.sample::<f64, _>(StandardNormal);
            rows.push(UnitYearRow {
                unit_id: format!("S{u:02}"),
                year: 2000 + t as i32,
                outcome_rate: outcome(u, t, covariate),
                covariate,
                population: pop(u),
            });
        }
    }
    Panel::from_rows(rows).unwrap()
}
