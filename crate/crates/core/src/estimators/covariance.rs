use nalgebra::{DMatrix, DVector};

use super::DesignMatrix;
use crate::error::{Error, Result};

/// Cluster-robust sandwich covariance `c · B (Σ_g s_g s_gᵀ) B` with cluster
/// scores `s_g = Σ_{i∈g} w_i x_i e_i` and small-sample factor
/// `c = G/(G−1) · (N−1)/(N−K)`.
pub fn cluster_robust_cov(design: &DesignMatrix, residuals: &DVector<f64>, bread: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = design.x.shape();
    let n_clusters = design.n_clusters();
    if n_clusters < 2 {
        return Err(Error::TooFewClusters(n_clusters));
    }

    // dense relabelling of cluster ids
    let mut ids = design.clusters.clone();
    ids.sort_unstable();
    ids.dedup();
    let mut scores = DMatrix::<f64>::zeros(n_clusters, p);
    for i in 0..n {
        let g = ids.binary_search(&design.clusters[i]).unwrap();
        let we = design.weights[i] * residuals[i];
        for j in 0..p {
            scores[(g, j)] += we * design.x[(i, j)];
        }
    }
    let meat = scores.transpose() * &scores;

    let k = design.n_params() as f64;
    let (g, nf) = (n_clusters as f64, n as f64);
    let factor = g / (g - 1.0) * (nf - 1.0) / (nf - k);
    let mut v = bread * meat * bread * factor;
    symmetrize(&mut v);
    Ok(v)
}

/// Model-based covariance `σ̂² (XᵀWX)⁻¹` with `σ̂² = Σ w e² / (N − K)`.
pub fn iid_cov(design: &DesignMatrix, residuals: &DVector<f64>, bread: &DMatrix<f64>) -> DMatrix<f64> {
    let n = design.n_obs() as f64;
    let k = design.n_params() as f64;
    let ssr: f64 = residuals.iter().zip(&design.weights).map(|(e, w)| w * e * e).sum();
    let mut v = bread * (ssr / (n - k));
    symmetrize(&mut v);
    v
}

fn symmetrize(v: &mut DMatrix<f64>) {
    let p = v.nrows();
    for i in 0..p {
        for j in 0..i {
            let m = 0.5 * (v[(i, j)] + v[(j, i)]);
            v[(i, j)] = m;
            v[(j, i)] = m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{fit_wls, ColumnRole};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn design(x: DMatrix<f64>, y: DVector<f64>, w: Vec<f64>, clusters: Vec<usize>) -> DesignMatrix {
        let n = y.len();
        DesignMatrix {
            roles: vec![ColumnRole::Covariate; x.ncols()],
            x,
            y,
            weights: w,
            clusters,
            row_years: vec![0; n],
            row_units: vec![0; n],
            absorbed: None,
        }
    }

    #[test]
    fn singleton_clusters_reduce_to_hc1() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, p) = (40, 3);
        let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() });
        let y = DVector::from_fn(n, |i, _| x[(i, 1)] * 2.0 + rng.random::<f64>());
        let d = design(x.clone(), y, vec![1.0; n], (0..n).collect());
        let fit = fit_wls(&d).unwrap();
        let v = cluster_robust_cov(&d, &fit.residuals, &fit.bread).unwrap();
        // HC1: n/(n-k) (XᵀX)⁻¹ Xᵀ diag(e²) X (XᵀX)⁻¹
        let mut meat = DMatrix::zeros(p, p);
        for i in 0..n {
            let xi = x.row(i).transpose();
            meat += &xi * xi.transpose() * fit.residuals[i].powi(2);
        }
        let hc1 = &fit.bread * meat * &fit.bread * (n as f64 / (n - p) as f64);
        assert!((v - hc1).abs().max() < 1e-12);
    }

    #[test]
    fn one_cluster_rejected() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let d = design(x, y, vec![1.0; 4], vec![7; 4]);
        let fit = fit_wls(&d).unwrap();
        assert!(matches!(
            cluster_robust_cov(&d, &fit.residuals, &fit.bread),
            Err(Error::TooFewClusters(1))
        ));
    }

    #[test]
    fn iid_matches_classical_formula() {
        let x = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_vec(vec![1.0, 3.0, 2.0, 5.0, 4.0]);
        let d = design(x, y, vec![1.0; 5], (0..5).collect());
        let fit = fit_wls(&d).unwrap();
        let v = iid_cov(&d, &fit.residuals, &fit.bread);
        // slope = Sxy/Sxx = 8/10, SSR = 3.6, s² = 3.6/3, Var(slope) = s²/Sxx
        assert!((fit.coef[1] - 0.8).abs() < 1e-12);
        assert!((v[(1, 1)] - 0.12).abs() < 1e-12);
    }
}
