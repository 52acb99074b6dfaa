//! Principal factor approximation of the false discovery proportion:
//! spectral decomposition of the Z-statistic correlation matrix, factor
//! count selection, latent factor estimation by trimmed least squares or
//! least absolute deviations, the FDP estimator, dependency-adjusted
//! p-values, and threshold selection.

use crate::linalg::{self, Cholesky};
use crate::normal::{norm_cdf, norm_quantile, two_sided_pvalue};
use ndarray::Array2;
use thiserror::Error;

/// Fraction of features (smallest |Z| first) kept by the trimmed
/// least-squares factor estimator.
pub const DEFAULT_L2_TRIM: f64 = 0.95;

/// Floor for `1 - sum_h b_jh^2` before taking the inverse square root.
const SCALE_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PfaError {
    #[error("correlation matrix is not symmetric (max deviation {deviation:.3e})")]
    NotSymmetric { deviation: f64 },
    #[error(transparent)]
    Eigen(#[from] linalg::LinalgError),
    #[error("factor count {k} outside 0..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("eigenvalue-share threshold {tau} outside (0, 1)")]
    BadShareThreshold { tau: f64 },
    #[error("threshold t = {t} outside [0, 1]")]
    ThresholdOutOfRange { t: f64 },
    #[error("invalid grid: {reason}")]
    InvalidGrid { reason: String },
    #[error("alpha = {alpha} outside (0, 1)")]
    BadAlpha { alpha: f64 },
}

/// Eigenpairs of a correlation matrix, eigenvalues non-increasing and
/// clamped at zero.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `h` is the eigenvector paired with `eigenvalues[h]`.
    pub eigenvectors: Array2<f64>,
    /// How many negative eigenvalues were clamped to zero.
    pub clamped: usize,
    /// Total magnitude removed by clamping.
    pub clamp_magnitude: f64,
}

/// Full eigendecomposition of a symmetric correlation matrix. Negative
/// eigenvalues (numerical noise in an estimated correlation) clamp to
/// zero; the clamp count and magnitude are recorded.
pub fn spectral_decompose(corr: &Array2<f64>) -> Result<SpectralDecomposition, PfaError> {
    let deviation = linalg::asymmetry(corr);
    if deviation > 1e-8 {
        return Err(PfaError::NotSymmetric { deviation });
    }
    let (mut eigenvalues, eigenvectors) = linalg::sym_eigen_desc(corr)?;
    let mut clamped = 0;
    let mut clamp_magnitude = 0.0;
    for v in eigenvalues.iter_mut() {
        if *v < 0.0 {
            clamped += 1;
            clamp_magnitude += -*v;
            *v = 0.0;
        }
    }
    Ok(SpectralDecomposition { eigenvalues, eigenvectors, clamped, clamp_magnitude })
}

/// How to pick the number of retained factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KPolicy {
    /// Use exactly this many factors.
    Explicit(usize),
    /// Smallest k whose next eigenvalue contributes less than this share
    /// of the total spectrum.
    Threshold(f64),
}

/// Resolve a [`KPolicy`] against a sorted eigenvalue sequence.
pub fn choose_k(eigenvalues: &[f64], policy: KPolicy) -> Result<usize, PfaError> {
    let p = eigenvalues.len();
    match policy {
        KPolicy::Explicit(k) => {
            if k > p {
                return Err(PfaError::KOutOfRange { k, max: p });
            }
            Ok(k)
        }
        KPolicy::Threshold(tau) => {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(PfaError::BadShareThreshold { tau });
            }
            let total: f64 = eigenvalues.iter().sum();
            if total <= 0.0 {
                return Ok(0);
            }
            for k in 0..p {
                if eigenvalues[k] / total < tau {
                    return Ok(k);
                }
            }
            Ok(p)
        }
    }
}

/// Loadings `b` (`p' x k`, column h = sqrt(lambda_h) * gamma_h) and the
/// residual scale factors `a_j = (1 - sum_h b_jh^2)^{-1/2}`.
#[derive(Debug, Clone)]
pub struct FactorLoadings {
    pub b: Array2<f64>,
    pub a: Vec<f64>,
    /// Features whose residual variance hit the clamp floor.
    pub clamped: usize,
}

pub fn factor_loadings(
    decomp: &SpectralDecomposition,
    k: usize,
) -> Result<FactorLoadings, PfaError> {
    let p = decomp.eigenvalues.len();
    if k > p {
        return Err(PfaError::KOutOfRange { k, max: p });
    }
    let mut b = Array2::<f64>::zeros((p, k));
    for h in 0..k {
        let s = decomp.eigenvalues[h].sqrt();
        for j in 0..p {
            b[[j, h]] = s * decomp.eigenvectors[[j, h]];
        }
    }
    let mut clamped = 0;
    let mut a = Vec::with_capacity(p);
    for j in 0..p {
        let explained: f64 = (0..k).map(|h| b[[j, h]] * b[[j, h]]).sum();
        let mut resid = 1.0 - explained;
        if resid < SCALE_EPS {
            resid = SCALE_EPS;
            clamped += 1;
        }
        a.push(resid.powf(-0.5));
    }
    Ok(FactorLoadings { b, a, clamped })
}

/// Estimated factor vector plus fitting diagnostics.
#[derive(Debug, Clone)]
pub struct FactorEstimate {
    pub w: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// True when a rank-deficient system forced a minimum-norm solution.
    pub degenerate: bool,
}

/// Solve the normal equations `g w = rhs` (`g` symmetric PSD, k x k),
/// falling back to the minimum-norm solution through an eigendecomposition
/// when `g` is singular.
fn solve_normal_equations(g: &Array2<f64>, rhs: &[f64]) -> (Vec<f64>, bool) {
    if let Some(chol) = Cholesky::new(g) {
        return (chol.solve(rhs), false);
    }
    let (vals, vecs) = linalg::sym_eigen_desc(g).expect("k x k eigen cannot fail on PSD input");
    let cutoff = vals.first().copied().unwrap_or(0.0).max(0.0) * 1e-12;
    let k = rhs.len();
    let mut w = vec![0.0; k];
    for (h, &lam) in vals.iter().enumerate() {
        if lam > cutoff {
            let proj: f64 = (0..k).map(|i| vecs[[i, h]] * rhs[i]).sum();
            let coef = proj / lam;
            for i in 0..k {
                w[i] += coef * vecs[[i, h]];
            }
        }
    }
    (w, true)
}

/// Least-squares factor estimate over the `floor(trim * p')` features with
/// the smallest |Z| (ties broken by feature index).
pub fn estimate_factors_l2(z: &[f64], b: &Array2<f64>, trim: f64) -> FactorEstimate {
    let p = z.len();
    let k = b.ncols();
    assert_eq!(b.nrows(), p, "loadings row count != z length");
    assert!(k >= 1, "factor estimation needs k >= 1");
    assert!(trim > 0.0 && trim <= 1.0);

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| {
        z[i].abs().partial_cmp(&z[j].abs()).unwrap().then(i.cmp(&j))
    });
    let m = ((trim * p as f64).floor() as usize).min(p);
    let kept = &order[..m];

    let mut g = Array2::<f64>::zeros((k, k));
    let mut rhs = vec![0.0; k];
    for &j in kept {
        for h in 0..k {
            let bjh = b[[j, h]];
            rhs[h] += bjh * z[j];
            for h2 in h..k {
                g[[h, h2]] += bjh * b[[j, h2]];
            }
        }
    }
    for h in 0..k {
        for h2 in 0..h {
            g[[h, h2]] = g[[h2, h]];
        }
    }
    let (w, degenerate) = solve_normal_equations(&g, &rhs);
    FactorEstimate { w, converged: true, iterations: 1, degenerate }
}

/// Least-absolute-deviation factor estimate over all features, by
/// iteratively reweighted least squares with smoothing 1e-8.
pub fn estimate_factors_l1(z: &[f64], b: &Array2<f64>) -> FactorEstimate {
    let p = z.len();
    let k = b.ncols();
    assert_eq!(b.nrows(), p, "loadings row count != z length");
    assert!(k >= 1, "factor estimation needs k >= 1");

    const SMOOTH: f64 = 1e-8;
    const MAX_ITER: usize = 200;
    const TOL: f64 = 1e-8;

    let objective = |w: &[f64]| -> f64 {
        (0..p)
            .map(|j| {
                let fit: f64 = (0..k).map(|h| b[[j, h]] * w[h]).sum();
                (z[j] - fit).abs()
            })
            .sum()
    };

    // warm start from the untrimmed least-squares solution
    let mut est = estimate_factors_l2(z, b, 1.0);
    let mut w = est.w.clone();
    let mut obj = objective(&w);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=MAX_ITER {
        iterations = iter;
        let mut g = Array2::<f64>::zeros((k, k));
        let mut rhs = vec![0.0; k];
        for j in 0..p {
            let fit: f64 = (0..k).map(|h| b[[j, h]] * w[h]).sum();
            let weight = 1.0 / (z[j] - fit).abs().max(SMOOTH);
            for h in 0..k {
                let bw = b[[j, h]] * weight;
                rhs[h] += bw * z[j];
                for h2 in h..k {
                    g[[h, h2]] += bw * b[[j, h2]];
                }
            }
        }
        for h in 0..k {
            for h2 in 0..h {
                g[[h, h2]] = g[[h2, h]];
            }
        }
        let (w_new, degenerate) = solve_normal_equations(&g, &rhs);
        est.degenerate |= degenerate;

        let obj_new = objective(&w_new);
        if obj_new > obj + 1e-12 * (1.0 + obj) {
            // reweighting overshot at the smoothing boundary; keep the
            // previous iterate so the objective stays non-increasing
            converged = true;
            break;
        }
        let delta = w
            .iter()
            .zip(&w_new)
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        w = w_new;
        obj = obj_new;
        if delta <= TOL {
            converged = true;
            break;
        }
    }

    FactorEstimate { w, converged, iterations, degenerate: est.degenerate }
}

/// Fitted common component `eta_j = b_j . w`.
pub fn fitted_common_component(b: &Array2<f64>, w: &[f64]) -> Vec<f64> {
    let p = b.nrows();
    let k = b.ncols();
    assert_eq!(w.len(), k);
    (0..p).map(|j| (0..k).map(|h| b[[j, h]] * w[h]).sum()).collect()
}

/// The FDP estimate at one threshold.
#[derive(Debug, Clone, Copy)]
pub struct FdpPoint {
    /// Estimated count of true-null p-values at or below t, before the
    /// min with R(t).
    pub v_hat: f64,
    pub fdp_hat: f64,
}

/// Estimated count of null rejections at threshold `t`, given residual
/// scales `a` and fitted common components `eta`.
pub fn fdp_numerator(a: &[f64], eta: &[f64], t: f64) -> f64 {
    assert_eq!(a.len(), eta.len());
    let z_half = norm_quantile(t / 2.0);
    a.iter()
        .zip(eta)
        .map(|(&aj, &ej)| norm_cdf(aj * (z_half + ej)) + norm_cdf(aj * (z_half - ej)))
        .sum()
}

/// The FDP estimator: `min(v_hat, R(t)) / R(t)`, zero when nothing is
/// rejected.
pub fn fdp_estimate(a: &[f64], eta: &[f64], t: f64, r_t: usize) -> Result<FdpPoint, PfaError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(PfaError::ThresholdOutOfRange { t });
    }
    let v_hat = fdp_numerator(a, eta, t);
    let fdp_hat = if r_t > 0 { v_hat.min(r_t as f64) / r_t as f64 } else { 0.0 };
    Ok(FdpPoint { v_hat, fdp_hat })
}

/// Dependency-adjusted p-values `2 Phi(-|a_j (z_j - eta_j)|)`.
pub fn adjusted_pvalues(z: &[f64], a: &[f64], eta: &[f64]) -> Vec<f64> {
    assert_eq!(z.len(), a.len());
    assert_eq!(z.len(), eta.len());
    z.iter()
        .zip(a)
        .zip(eta)
        .map(|((&zj, &aj), &ej)| two_sided_pvalue(aj * (zj - ej)))
        .collect()
}

/// Rejection counts at threshold `t`. With a null indicator (`true` =
/// feature is a true null) the false/true discovery split is returned too.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Counts {
    pub r: usize,
    pub v: Option<usize>,
    pub s: Option<usize>,
}

pub fn empirical_counts(pvalues: &[f64], t: f64, truth: Option<&[bool]>) -> Counts {
    if let Some(truth) = truth {
        assert_eq!(truth.len(), pvalues.len());
        let mut v = 0;
        let mut s = 0;
        for (&p, &is_null) in pvalues.iter().zip(truth) {
            if p <= t {
                if is_null {
                    v += 1;
                } else {
                    s += 1;
                }
            }
        }
        Counts { r: v + s, v: Some(v), s: Some(s) }
    } else {
        Counts { r: pvalues.iter().filter(|&&p| p <= t).count(), v: None, s: None }
    }
}

/// Which p-values the rejection counts R(t) are taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvalueKind {
    Raw,
    Adjusted,
}

impl PvalueKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PvalueKind::Raw => "raw",
            PvalueKind::Adjusted => "adjusted",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FdpRow {
    pub t: f64,
    pub r: usize,
    pub v_hat: f64,
    pub fdp_hat: f64,
}

/// The FDP curve over a threshold grid and the selected threshold.
#[derive(Debug, Clone)]
pub struct FdpReport {
    pub rows: Vec<FdpRow>,
    /// Largest grid threshold whose estimated FDP stays at or below
    /// `alpha`; absent when no grid point qualifies.
    pub t_alpha: Option<f64>,
    pub alpha: f64,
    pub pvalue_kind: PvalueKind,
}

/// Log-spaced threshold grid, inclusive of both endpoints.
pub fn default_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>, PfaError> {
    if !(min > 0.0 && max < 1.0 && min < max) {
        return Err(PfaError::InvalidGrid {
            reason: format!("need 0 < min < max < 1, got [{min}, {max}]"),
        });
    }
    if points < 2 {
        return Err(PfaError::InvalidGrid { reason: "need at least 2 grid points".into() });
    }
    let (lmin, lmax) = (min.ln(), max.ln());
    let step = (lmax - lmin) / (points - 1) as f64;
    let mut grid: Vec<f64> = (0..points).map(|i| (lmin + step * i as f64).exp()).collect();
    grid[0] = min;
    grid[points - 1] = max;
    Ok(grid)
}

fn validate_grid(grid: &[f64]) -> Result<(), PfaError> {
    if grid.is_empty() {
        return Err(PfaError::InvalidGrid { reason: "empty grid".into() });
    }
    for &t in grid {
        if !(t > 0.0 && t < 1.0) {
            return Err(PfaError::InvalidGrid { reason: format!("grid value {t} outside (0, 1)") });
        }
    }
    for w in grid.windows(2) {
        if w[0] >= w[1] {
            return Err(PfaError::InvalidGrid { reason: "grid not strictly ascending".into() });
        }
    }
    Ok(())
}

/// Evaluate the FDP estimator over a grid and pick the largest threshold
/// whose estimate does not exceed `alpha`.
pub fn threshold_search(
    a: &[f64],
    eta: &[f64],
    pvalues: &[f64],
    alpha: f64,
    grid: &[f64],
    pvalue_kind: PvalueKind,
) -> Result<FdpReport, PfaError> {
    validate_grid(grid)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PfaError::BadAlpha { alpha });
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &t in grid {
        let counts = empirical_counts(pvalues, t, None);
        let point = fdp_estimate(a, eta, t, counts.r)?;
        rows.push(FdpRow { t, r: counts.r, v_hat: point.v_hat, fdp_hat: point.fdp_hat });
    }
    let t_alpha = rows.iter().rev().find(|row| row.fdp_hat <= alpha).map(|row| row.t);
    Ok(FdpReport { rows, t_alpha, alpha, pvalue_kind })
}

/// Which regression estimates the latent factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorRegression {
    L1,
    L2,
}

impl FactorRegression {
    pub fn as_str(&self) -> &'static str {
        match self {
            FactorRegression::L1 => "l1",
            FactorRegression::L2 => "l2",
        }
    }
}

/// The fitted factor structure of one Z-vector: eigenpairs, loadings,
/// residual scales, and estimated factors.
#[derive(Debug, Clone)]
pub struct FactorModel {
    pub decomposition: SpectralDecomposition,
    pub k: usize,
    /// `p' x k` loadings.
    pub loadings: Array2<f64>,
    /// Residual scale factors `a_j >= 1`.
    pub scale: Vec<f64>,
    pub scale_clamped: usize,
    pub w_hat: Vec<f64>,
    pub eta_hat: Vec<f64>,
    pub estimator: FactorRegression,
    pub factor_converged: bool,
    pub factor_degenerate: bool,
}

impl FactorModel {
    /// Decompose a correlation matrix, resolve the factor count, and
    /// estimate the latent factors from `z`.
    pub fn fit(
        corr: &Array2<f64>,
        z: &[f64],
        policy: KPolicy,
        estimator: FactorRegression,
        l2_trim: f64,
    ) -> Result<Self, PfaError> {
        let decomposition = spectral_decompose(corr)?;
        let k = choose_k(&decomposition.eigenvalues, policy)?;
        let loadings = factor_loadings(&decomposition, k)?;
        let (w_hat, factor_converged, factor_degenerate) = if k == 0 {
            (Vec::new(), true, false)
        } else {
            let est = match estimator {
                FactorRegression::L2 => estimate_factors_l2(z, &loadings.b, l2_trim),
                FactorRegression::L1 => estimate_factors_l1(z, &loadings.b),
            };
            (est.w, est.converged, est.degenerate)
        };
        let eta_hat = if k == 0 {
            vec![0.0; z.len()]
        } else {
            fitted_common_component(&loadings.b, &w_hat)
        };
        Ok(FactorModel {
            decomposition,
            k,
            loadings: loadings.b,
            scale: loadings.a,
            scale_clamped: loadings.clamped,
            w_hat,
            eta_hat,
            estimator,
            factor_converged,
            factor_degenerate,
        })
    }

    pub fn adjusted_pvalues(&self, z: &[f64]) -> Vec<f64> {
        adjusted_pvalues(z, &self.scale, &self.eta_hat)
    }

    pub fn fdp_estimate(&self, t: f64, r_t: usize) -> Result<FdpPoint, PfaError> {
        fdp_estimate(&self.scale, &self.eta_hat, t, r_t)
    }

    pub fn threshold_search(
        &self,
        pvalues: &[f64],
        alpha: f64,
        grid: &[f64],
        pvalue_kind: PvalueKind,
    ) -> Result<FdpReport, PfaError> {
        threshold_search(&self.scale, &self.eta_hat, pvalues, alpha, grid, pvalue_kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn equicorrelation(p: usize, rho: f64) -> Array2<f64> {
        Array2::from_shape_fn((p, p), |(i, j)| if i == j { 1.0 } else { rho })
    }

    #[test]
    fn identity_spectrum() {
        let corr = Array2::<f64>::eye(6);
        let d = spectral_decompose(&corr).unwrap();
        for v in &d.eigenvalues {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert_eq!(d.clamped, 0);
    }

    #[test]
    fn equicorrelation_closed_form() {
        let p = 500;
        let rho = 0.8;
        let d = spectral_decompose(&equicorrelation(p, rho)).unwrap();
        assert!((d.eigenvalues[0] - (1.0 + (p as f64 - 1.0) * rho)).abs() < 1e-8);
        for h in 1..p {
            assert!((d.eigenvalues[h] - (1.0 - rho)).abs() < 1e-8);
        }
        let total: f64 = d.eigenvalues.iter().sum();
        assert!((total - p as f64).abs() < 1e-6);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let mut corr = Array2::<f64>::eye(3);
        corr[[0, 1]] = 0.5;
        assert!(matches!(spectral_decompose(&corr), Err(PfaError::NotSymmetric { .. })));
    }

    #[test]
    fn choose_k_policies() {
        // equi-correlation rho=0.8, p=500: lambda_1 = 400.2, rest 0.2
        let mut eig = vec![400.2];
        eig.extend(std::iter::repeat(0.2).take(499));
        assert_eq!(choose_k(&eig, KPolicy::Threshold(0.01)).unwrap(), 1);
        assert_eq!(choose_k(&eig, KPolicy::Explicit(10)).unwrap(), 10);
        assert!(choose_k(&eig, KPolicy::Explicit(501)).is_err());
        // identity: even the top eigenvalue is below the share threshold
        let flat = vec![1.0; 500];
        assert_eq!(choose_k(&flat, KPolicy::Threshold(0.01)).unwrap(), 0);
        assert!(choose_k(&flat, KPolicy::Threshold(0.0)).is_err());
    }

    #[test]
    fn loadings_equicorrelation() {
        let p = 100;
        let rho = 0.6;
        let d = spectral_decompose(&equicorrelation(p, rho)).unwrap();
        let fl = factor_loadings(&d, 1).unwrap();
        let lam1 = 1.0 + (p as f64 - 1.0) * rho;
        let expect_b = (lam1 / p as f64).sqrt();
        let expect_a = (1.0 - lam1 / p as f64).powf(-0.5);
        for j in 0..p {
            assert!((fl.b[[j, 0]].abs() - expect_b).abs() < 1e-10);
            assert!((fl.a[j] - expect_a).abs() < 1e-9);
            assert!(fl.a[j] >= 1.0);
        }
    }

    #[test]
    fn loadings_k_zero() {
        let d = spectral_decompose(&Array2::<f64>::eye(5)).unwrap();
        let fl = factor_loadings(&d, 0).unwrap();
        assert_eq!(fl.b.ncols(), 0);
        assert!(fl.a.iter().all(|&a| a == 1.0));
    }

    #[test]
    fn l2_recovers_exact_interpolation() {
        // z = b * w0, no noise
        let p = 40;
        let k = 2;
        let mut b = Array2::<f64>::zeros((p, k));
        for j in 0..p {
            b[[j, 0]] = ((j + 1) as f64 * 0.37).sin() * 0.3;
            b[[j, 1]] = ((j + 1) as f64 * 0.73).cos() * 0.3;
        }
        let w0 = vec![1.7, -0.9];
        let z = fitted_common_component(&b, &w0);
        let est = estimate_factors_l2(&z, &b, DEFAULT_L2_TRIM);
        assert!((est.w[0] - w0[0]).abs() < 1e-10);
        assert!((est.w[1] - w0[1]).abs() < 1e-10);
        assert!(!est.degenerate);
    }

    #[test]
    fn l2_constant_loadings_is_trimmed_mean() {
        let z = vec![3.0, -1.0, 0.5, 2.0, -0.25, 1.5, 0.75, -2.0, 0.1, 4.0];
        let c = 0.5;
        let b = Array2::from_elem((10, 1), c);
        let est = estimate_factors_l2(&z, &b, DEFAULT_L2_TRIM);
        // floor(0.95 * 10) = 9 kept; |z| sorted drops z = 4.0
        let kept_mean = (3.0 - 1.0 + 0.5 + 2.0 - 0.25 + 1.5 + 0.75 - 2.0 + 0.1) / 9.0;
        assert!((est.w[0] - kept_mean / c).abs() < 1e-12);
    }

    #[test]
    fn l2_subset_size() {
        let p = 1000;
        let z: Vec<f64> = (0..p).map(|j| (j as f64 * 0.01).sin()).collect();
        let b = Array2::from_elem((p, 1), 1.0);
        // check the subset length through the math: with constant unit
        // loadings the estimate is the mean of the kept 950 values
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| z[i].abs().partial_cmp(&z[j].abs()).unwrap().then(i.cmp(&j)));
        let kept_mean: f64 = order[..950].iter().map(|&j| z[j]).sum::<f64>() / 950.0;
        let est = estimate_factors_l2(&z, &b, DEFAULT_L2_TRIM);
        assert!((est.w[0] - kept_mean).abs() < 1e-12);
    }

    #[test]
    fn l1_unit_loadings_is_median() {
        let z = vec![5.0, -2.0, 0.25, 1.0, 3.0, -4.0, 0.5, 2.5, -1.5];
        let b = Array2::from_elem((9, 1), 1.0);
        let est = estimate_factors_l1(&z, &b);
        let mut sorted = z.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[4];
        assert!(est.converged);
        assert!((est.w[0] - median).abs() < 1e-6, "w = {}, median = {median}", est.w[0]);
    }

    #[test]
    fn l1_exact_fit_has_zero_objective() {
        let p = 30;
        let mut b = Array2::<f64>::zeros((p, 2));
        for j in 0..p {
            b[[j, 0]] = ((j + 1) as f64 * 0.21).sin() * 0.4;
            b[[j, 1]] = ((j + 1) as f64 * 0.83).cos() * 0.4;
        }
        let w0 = vec![-0.8, 1.2];
        let z = fitted_common_component(&b, &w0);
        let est = estimate_factors_l1(&z, &b);
        assert!((est.w[0] - w0[0]).abs() < 1e-6);
        assert!((est.w[1] - w0[1]).abs() < 1e-6);
    }

    #[test]
    fn l1_beats_or_ties_l2_objective() {
        let p = 50;
        let mut b = Array2::<f64>::zeros((p, 2));
        let mut z = Vec::with_capacity(p);
        let mut state = 0xABCDEF12345u64;
        let mut unit = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for j in 0..p {
            b[[j, 0]] = unit() - 0.5;
            b[[j, 1]] = unit() - 0.5;
            z.push(2.0 * unit() - 1.0 + if j % 11 == 0 { 5.0 } else { 0.0 });
        }
        let l1_obj = |w: &[f64]| -> f64 {
            (0..p)
                .map(|j| (z[j] - b[[j, 0]] * w[0] - b[[j, 1]] * w[1]).abs())
                .sum()
        };
        let l2 = estimate_factors_l2(&z, &b, 1.0);
        let l1 = estimate_factors_l1(&z, &b);
        assert!(l1_obj(&l1.w) <= l1_obj(&l2.w) + 1e-8);
    }

    #[test]
    fn fdp_numerator_matches_reference() {
        // frozen high-precision evaluation at t = 0.01
        let a = vec![1.2, 1.05, 2.0];
        let eta = vec![0.3, -0.4, 1.1];
        let v = fdp_numerator(&a, &eta, 0.01);
        assert!((v - 0.01707450170204896960863).abs() < 1e-12, "v = {v:.18}");
    }

    #[test]
    fn fdp_with_no_factors_is_p_times_t() {
        let p = 500;
        let a = vec![1.0; p];
        let eta = vec![0.0; p];
        let v = fdp_numerator(&a, &eta, 1e-4);
        assert!((v - 0.05).abs() < 1e-10);
    }

    #[test]
    fn fdp_zero_rejections() {
        let point = fdp_estimate(&[1.0, 1.0], &[0.0, 0.0], 0.01, 0).unwrap();
        assert_eq!(point.fdp_hat, 0.0);
        assert!(fdp_estimate(&[1.0], &[0.0], 1.5, 1).is_err());
    }

    #[test]
    fn fdp_endpoints() {
        let a = vec![1.3, 2.0, 1.0];
        let eta = vec![0.5, -1.0, 0.0];
        assert_eq!(fdp_numerator(&a, &eta, 0.0), 0.0);
        assert!((fdp_numerator(&a, &eta, 1.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn adjusted_pvalue_reductions() {
        let z = vec![1.5, -2.0, 0.3];
        // k = 0: adjusted equals raw
        let adj = adjusted_pvalues(&z, &[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]);
        let raw = crate::mmm::raw_pvalues(&z);
        for (a, r) in adj.iter().zip(&raw) {
            assert!((a - r).abs() < 1e-15);
        }
        // fully explained: p = 1
        let adj2 = adjusted_pvalues(&[1.5], &[2.0], &[1.5]);
        assert_eq!(adj2[0], 1.0);
        // a > 1 shrinks the p-value of a fixed residual
        let r = 1.0;
        let base = adjusted_pvalues(&[r], &[1.0], &[0.0])[0];
        let scaled = adjusted_pvalues(&[r], &[1.7], &[0.0])[0];
        assert!(scaled < base);
    }

    #[test]
    fn counts_partition() {
        let p = vec![0.001, 0.2, 0.04, 0.9, 0.0499];
        let truth = vec![true, true, false, false, true];
        let c = empirical_counts(&p, 0.05, Some(&truth));
        assert_eq!(c.r, 3);
        assert_eq!(c.v, Some(2));
        assert_eq!(c.s, Some(1));
        let all = empirical_counts(&p, 1.0, None);
        assert_eq!(all.r, 5);
        let none = empirical_counts(&p, 0.0, None);
        assert_eq!(none.r, 0);
    }

    #[test]
    fn threshold_search_selects_largest_feasible() {
        let p = 200;
        let a = vec![1.0; p];
        let eta = vec![0.0; p];
        // 10 tiny p-values, the rest uniform-ish
        let mut pvals = vec![1e-9; 10];
        pvals.extend((0..p - 10).map(|i| (i + 1) as f64 / (p - 10) as f64));
        let grid = default_grid(1e-8, 0.05, 60).unwrap();
        let report = threshold_search(&a, &eta, &pvals, 0.05, &grid, PvalueKind::Raw).unwrap();
        let t_alpha = report.t_alpha.expect("a feasible threshold exists");
        for row in &report.rows {
            assert!(row.fdp_hat >= 0.0 && row.fdp_hat <= 1.0);
            if row.t > t_alpha {
                assert!(row.fdp_hat > 0.05);
            }
        }
        // v_hat monotone over the grid
        for w in report.rows.windows(2) {
            assert!(w[1].v_hat >= w[0].v_hat - 1e-12);
            assert!(w[1].r >= w[0].r);
        }
    }

    #[test]
    fn factor_model_end_to_end_reductions() {
        // identity correlation, k = 0: everything reduces to the raw scale
        let p = 150;
        let corr = Array2::<f64>::eye(p);
        let z: Vec<f64> = (0..p).map(|j| ((j * 37 + 11) % 100) as f64 / 25.0 - 2.0).collect();
        let model =
            FactorModel::fit(&corr, &z, KPolicy::Threshold(0.01), FactorRegression::L2, 0.95)
                .unwrap();
        assert_eq!(model.k, 0);
        let adj = model.adjusted_pvalues(&z);
        let raw = crate::mmm::raw_pvalues(&z);
        for (a, r) in adj.iter().zip(&raw) {
            assert!((a - r).abs() < 1e-12);
        }
        let point = model.fdp_estimate(1e-3, 10).unwrap();
        assert!((point.v_hat - p as f64 * 1e-3).abs() < 1e-10);
    }

    #[test]
    fn full_rank_reconstruction() {
        // random-ish symmetric PSD matrix via A^T A, rescaled to correlation
        let p = 20;
        let mut m = Array2::<f64>::zeros((p, p));
        let mut state = 77777u64;
        let mut unit = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for i in 0..p {
            for j in 0..p {
                m[[i, j]] = unit() - 0.5;
            }
        }
        let gram = m.t().dot(&m);
        let corr = crate::mmm::correlation_matrix(&gram).unwrap();
        let d = spectral_decompose(&corr).unwrap();
        let mut rec = Array2::<f64>::zeros((p, p));
        for h in 0..p {
            let lam = d.eigenvalues[h];
            for i in 0..p {
                for j in 0..p {
                    rec[[i, j]] += lam * d.eigenvectors[[i, h]] * d.eigenvectors[[j, h]];
                }
            }
        }
        for i in 0..p {
            for j in 0..p {
                assert!(
                    (rec[[i, j]] - corr[[i, j]]).abs() < 1e-9,
                    "reconstruction off at ({i},{j})"
                );
            }
        }
    }
}
