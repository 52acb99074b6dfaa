//! Joint inference across all marginal fits for one baseline-category
//! pair: influence stacking, the covariance and correlation of the stacked
//! slope estimators, Z-statistics, and raw two-sided p-values.
//!
//! Features whose marginal fit failed are masked out rather than aborting
//! the batch; every vector and matrix here is indexed over the surviving
//! features, with `active` mapping positions back to original feature
//! indices.

use crate::multinomial::MarginalFit;
use crate::normal::two_sided_pvalue;
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MmmError {
    #[error("influence matrices disagree on n: found {found}, expected {expected}")]
    InconsistentSampleSize { found: usize, expected: usize },
    #[error("category {category} outside 1..={max}")]
    CategoryOutOfRange { category: usize, max: usize },
    #[error("covariance diagonal entry {index} is not strictly positive")]
    NonPositiveVariance { index: usize },
    #[error("no feature produced a successful fit")]
    NoActiveFeatures,
}

/// Influence columns of the successful fits, in feature-index order.
pub struct StackedInfluence {
    /// `n x p'` matrix; column `j` is the influence of the `j`-th
    /// surviving feature for the requested category.
    pub psi: Array2<f64>,
    /// Original feature index of each column.
    pub active: Vec<usize>,
}

/// Collect the per-feature influence columns for `category` into an
/// `n x p'` matrix, skipping failed fits.
pub fn stack_influence(fits: &[MarginalFit], category: usize) -> Result<StackedInfluence, MmmError> {
    let mut n: Option<usize> = None;
    let mut active = Vec::new();
    for (j, fit) in fits.iter().enumerate() {
        if let Some(inf) = fit.influence.as_ref() {
            let m = inf.ncols();
            if category == 0 || category > m {
                return Err(MmmError::CategoryOutOfRange { category, max: m });
            }
            match n {
                None => n = Some(inf.nrows()),
                Some(expected) => {
                    if inf.nrows() != expected {
                        return Err(MmmError::InconsistentSampleSize {
                            found: inf.nrows(),
                            expected,
                        });
                    }
                }
            }
            active.push(j);
        }
    }
    let n = n.ok_or(MmmError::NoActiveFeatures)?;
    let mut psi = Array2::<f64>::zeros((n, active.len()));
    for (col, &j) in active.iter().enumerate() {
        let inf = fits[j].influence.as_ref().unwrap();
        for i in 0..n {
            psi[[i, col]] = inf[[i, category - 1]];
        }
    }
    Ok(StackedInfluence { psi, active })
}

/// Covariance of the stacked slope estimators: `(1/n) psi^T psi`.
/// Symmetric positive semi-definite by construction.
pub fn covariance_estimate(psi: &Array2<f64>) -> Array2<f64> {
    let n = psi.nrows();
    assert!(n >= 2, "covariance needs n >= 2");
    let mut sigma = psi.t().dot(psi);
    sigma.mapv_inplace(|v| v / n as f64);
    // enforce exact symmetry against accumulation-order noise
    let p = sigma.nrows();
    for i in 0..p {
        for j in i + 1..p {
            let s = 0.5 * (sigma[[i, j]] + sigma[[j, i]]);
            sigma[[i, j]] = s;
            sigma[[j, i]] = s;
        }
    }
    sigma
}

/// `Z_j = beta_j * sqrt(n) / sqrt(sigma_jj)`.
pub fn z_statistics(
    beta_hat: &[f64],
    sigma_hat: &Array2<f64>,
    n: usize,
) -> Result<Vec<f64>, MmmError> {
    assert_eq!(beta_hat.len(), sigma_hat.nrows());
    let sqrt_n = (n as f64).sqrt();
    beta_hat
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let v = sigma_hat[[j, j]];
            if v <= 0.0 || !v.is_finite() {
                Err(MmmError::NonPositiveVariance { index: j })
            } else {
                Ok(b * sqrt_n / v.sqrt())
            }
        })
        .collect()
}

/// Rescale a covariance matrix to a correlation matrix. The diagonal is
/// forced to exactly 1 and off-diagonal magnitudes are clamped to 1.
pub fn correlation_matrix(sigma_hat: &Array2<f64>) -> Result<Array2<f64>, MmmError> {
    let p = sigma_hat.nrows();
    let mut inv_sd = Vec::with_capacity(p);
    for j in 0..p {
        let v = sigma_hat[[j, j]];
        if v <= 0.0 || !v.is_finite() {
            return Err(MmmError::NonPositiveVariance { index: j });
        }
        inv_sd.push(1.0 / v.sqrt());
    }
    let mut corr = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        corr[[i, i]] = 1.0;
        for j in i + 1..p {
            let r = (sigma_hat[[i, j]] * inv_sd[i] * inv_sd[j]).clamp(-1.0, 1.0);
            corr[[i, j]] = r;
            corr[[j, i]] = r;
        }
    }
    Ok(corr)
}

/// Two-sided p-values `2 * Phi(-|z|)`, floored at 1e-300.
pub fn raw_pvalues(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&zj| two_sided_pvalue(zj)).collect()
}

/// Everything the thresholding stage needs for one baseline-category pair.
#[derive(Debug, Clone)]
pub struct CategoryInference {
    /// Baseline-category pair index, `1..=q-1`.
    pub category: usize,
    pub n: usize,
    /// Total feature count, including failed fits.
    pub p_total: usize,
    /// Original index of each surviving feature.
    pub active: Vec<usize>,
    /// `active_mask[j]` is true when feature `j` survived.
    pub active_mask: Vec<bool>,
    pub beta_hat: Vec<f64>,
    pub sigma_hat: Array2<f64>,
    pub corr_hat: Array2<f64>,
    pub z: Vec<f64>,
    pub p_raw: Vec<f64>,
}

impl CategoryInference {
    /// Standard error of each surviving slope, `sqrt(sigma_jj / n)`.
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.active.len())
            .map(|j| (self.sigma_hat[[j, j]] / self.n as f64).sqrt())
            .collect()
    }
}

/// Run the full stacking pipeline for one baseline-category pair.
///
/// Features with a failed fit, or whose influence column has zero
/// variance, are masked out.
pub fn infer_category(fits: &[MarginalFit], category: usize) -> Result<CategoryInference, MmmError> {
    let p_total = fits.len();
    let stacked = stack_influence(fits, category)?;
    let n = stacked.psi.nrows();

    // Drop columns that cannot yield a positive variance before forming
    // the covariance, so the correlation matrix is well defined.
    let keep: Vec<usize> = (0..stacked.active.len())
        .filter(|&col| stacked.psi.column(col).iter().any(|&v| v != 0.0))
        .collect();
    if keep.is_empty() {
        return Err(MmmError::NoActiveFeatures);
    }
    let (psi, active) = if keep.len() == stacked.active.len() {
        (stacked.psi, stacked.active)
    } else {
        let mut psi = Array2::<f64>::zeros((n, keep.len()));
        let mut active = Vec::with_capacity(keep.len());
        for (new_col, &col) in keep.iter().enumerate() {
            for i in 0..n {
                psi[[i, new_col]] = stacked.psi[[i, col]];
            }
            active.push(stacked.active[col]);
        }
        (psi, active)
    };

    let beta_hat: Vec<f64> =
        active.iter().map(|&j| fits[j].params.beta[category - 1]).collect();
    let sigma_hat = covariance_estimate(&psi);
    let z = z_statistics(&beta_hat, &sigma_hat, n)?;
    let corr_hat = correlation_matrix(&sigma_hat)?;
    let p_raw = raw_pvalues(&z);

    let mut active_mask = vec![false; p_total];
    for &j in &active {
        active_mask[j] = true;
    }

    Ok(CategoryInference {
        category,
        n,
        p_total,
        active,
        active_mask,
        beta_hat,
        sigma_hat,
        corr_hat,
        z,
        p_raw,
    })
}
