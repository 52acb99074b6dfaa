//! Marginal baseline-category multinomial logistic regression for a single
//! feature, fitted by Newton-Raphson with step-halving, plus the
//! per-observation influence contributions consumed by the covariance
//! stacking stage.
//!
//! The model pairs each response category `c < q` with the baseline `q`:
//!
//! ```text
//! log(P(Y = c | x) / P(Y = q | x)) = alpha_c + beta_c * x
//! ```
//!
//! Parameters are ordered `(alpha_1, beta_1, ..., alpha_{q-1}, beta_{q-1})`,
//! so the slope coordinates are the odd (0-based) positions. The influence
//! row of observation `i` holds those slope coordinates of
//! `F_avg^{-1} * score_i`, where `F_avg` is the Fisher information averaged
//! over observations. With the averaged convention the influence columns
//! sum to zero at the optimum and the stacked covariance estimator is a
//! consistent sandwich.

use crate::linalg::Cholesky;
use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

/// Settings for the Newton-Raphson fit.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Maximum Newton iterations.
    pub max_iter: usize,
    /// Convergence tolerance on the gradient sup-norm.
    pub grad_tol: f64,
    /// Stop when the relative log-likelihood change falls below this;
    /// the fit still only counts as converged if the gradient test holds.
    pub ll_tol: f64,
    /// Declare separation when `max |beta_c|` exceeds this while the
    /// gradient is still above tolerance.
    pub sep_bound: f64,
    /// Maximum number of step halvings per iteration.
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iter: 100, grad_tol: 1e-8, ll_tol: 1e-12, sep_bound: 30.0, max_halvings: 30 }
    }
}

/// Intercepts and slopes for the `q - 1` baseline-category logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl MarginalParams {
    pub fn zeros(q: usize) -> Self {
        assert!(q >= 2);
        MarginalParams { alpha: vec![0.0; q - 1], beta: vec![0.0; q - 1] }
    }

    pub fn q(&self) -> usize {
        self.alpha.len() + 1
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.alpha.len());
        for c in 0..self.alpha.len() {
            v.push(self.alpha[c]);
            v.push(self.beta[c]);
        }
        v
    }

    fn from_flat(flat: &[f64]) -> Self {
        let m = flat.len() / 2;
        let mut alpha = Vec::with_capacity(m);
        let mut beta = Vec::with_capacity(m);
        for c in 0..m {
            alpha.push(flat[2 * c]);
            beta.push(flat[2 * c + 1]);
        }
        MarginalParams { alpha, beta }
    }
}

/// Why a fit was abandoned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitFailure {
    MaxIterations,
    SeparationDetected,
    SingularInformation,
    /// A response category never occurs, so no intercept is estimable.
    MissingCategory,
    /// The log-likelihood stopped moving while the gradient stayed above
    /// tolerance.
    Stalled,
}

impl FitFailure {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitFailure::MaxIterations => "max-iterations",
            FitFailure::SeparationDetected => "separation-detected",
            FitFailure::SingularInformation => "singular-information",
            FitFailure::MissingCategory => "missing-category",
            FitFailure::Stalled => "stalled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Ok,
    Failed(FitFailure),
}

/// Result of one marginal fit. Failed fits keep their last parameter
/// iterate for diagnostics but carry no influence matrix.
#[derive(Debug, Clone)]
pub struct MarginalFit {
    pub params: MarginalParams,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Average Fisher information at the final iterate,
    /// `2(q-1) x 2(q-1)`.
    pub fisher: Array2<f64>,
    /// `n x (q-1)` slope influence contributions; `None` on failure.
    pub influence: Option<Array2<f64>>,
    pub status: FitStatus,
}

impl MarginalFit {
    pub fn is_ok(&self) -> bool {
        matches!(self.status, FitStatus::Ok)
    }
}

/// Category probabilities `(pi_1, ..., pi_q)` at a single design point,
/// computed with max-subtraction so large logits cannot overflow.
pub fn category_probs(params: &MarginalParams, x: f64, q: usize) -> Vec<f64> {
    assert_eq!(params.q(), q, "parameter count inconsistent with q");
    let mut probs = vec![0.0; q];
    probs_into(params, x, &mut probs);
    probs
}

/// Write the probabilities into `out` (length `q`); baseline is last.
fn probs_into(params: &MarginalParams, x: f64, out: &mut [f64]) {
    let m = params.alpha.len();
    // logit of the baseline is 0
    let mut max_logit = 0.0_f64;
    for c in 0..m {
        let l = params.alpha[c] + params.beta[c] * x;
        out[c] = l;
        if l > max_logit {
            max_logit = l;
        }
    }
    let mut denom = (-max_logit).exp();
    out[m] = denom;
    for c in 0..m {
        let e = (out[c] - max_logit).exp();
        out[c] = e;
        denom += e;
    }
    for v in out.iter_mut() {
        *v /= denom;
    }
}

/// Log-likelihood of the baseline-category model over a sample,
/// overflow-safe via log-sum-exp.
pub fn log_likelihood(params: &MarginalParams, xs: &[f64], ys: &[usize], q: usize) -> f64 {
    assert_eq!(params.q(), q, "parameter count inconsistent with q");
    assert_eq!(xs.len(), ys.len(), "xs and ys length mismatch");
    let m = q - 1;
    let mut total = 0.0;
    let mut logits = vec![0.0_f64; m];
    for (&x, &y) in xs.iter().zip(ys) {
        debug_assert!((1..=q).contains(&y));
        let mut max_logit = 0.0_f64;
        for c in 0..m {
            let l = params.alpha[c] + params.beta[c] * x;
            logits[c] = l;
            if l > max_logit {
                max_logit = l;
            }
        }
        let mut sum = (-max_logit).exp();
        for c in 0..m {
            sum += (logits[c] - max_logit).exp();
        }
        let lin = if y < q { logits[y - 1] } else { 0.0 };
        total += lin - max_logit - sum.ln();
    }
    total
}

/// Score vector (sum over observations) and average Fisher information of
/// the sample, both in the interleaved `(alpha_c, beta_c)` ordering.
pub fn score_and_fisher(
    params: &MarginalParams,
    xs: &[f64],
    ys: &[usize],
    q: usize,
) -> (Vec<f64>, Array2<f64>) {
    assert_eq!(params.q(), q, "parameter count inconsistent with q");
    assert_eq!(xs.len(), ys.len(), "xs and ys length mismatch");
    let m = q - 1;
    let dim = 2 * m;
    let n = xs.len();
    let mut grad = vec![0.0; dim];
    let mut fisher = Array2::<f64>::zeros((dim, dim));
    let mut probs = vec![0.0; q];
    for (&x, &y) in xs.iter().zip(ys) {
        probs_into(params, x, &mut probs);
        for c in 0..m {
            let ind = if y == c + 1 { 1.0 } else { 0.0 };
            let resid = ind - probs[c];
            grad[2 * c] += resid;
            grad[2 * c + 1] += resid * x;
        }
        let xx = x * x;
        for a in 0..m {
            for b in 0..m {
                let w = if a == b { probs[a] * (1.0 - probs[b]) } else { -probs[a] * probs[b] };
                fisher[[2 * a, 2 * b]] += w;
                fisher[[2 * a, 2 * b + 1]] += w * x;
                fisher[[2 * a + 1, 2 * b]] += w * x;
                fisher[[2 * a + 1, 2 * b + 1]] += w * xx;
            }
        }
    }
    fisher.mapv_inplace(|v| v / n as f64);
    (grad, fisher)
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()))
}

/// Factor the average Fisher matrix, retrying once with a small ridge
/// (`1e-10 * trace / dim`) when it is not numerically positive definite.
fn factor_fisher(fisher: &Array2<f64>) -> Option<Cholesky> {
    if let Some(c) = Cholesky::new(fisher) {
        return Some(c);
    }
    let dim = fisher.nrows();
    let ridge = 1e-10 * fisher.diag().sum() / dim as f64;
    let mut ridged = fisher.clone();
    for i in 0..dim {
        ridged[[i, i]] += ridge;
    }
    Cholesky::new(&ridged)
}

/// Fit the marginal model for one feature by maximum likelihood.
///
/// Failures are encoded in the returned status, never thrown, so a batch
/// over thousands of features cannot abort on a degenerate column.
pub fn fit_marginal(xs: &[f64], ys: &[usize], q: usize, opts: &FitOptions) -> MarginalFit {
    assert_eq!(xs.len(), ys.len(), "xs and ys length mismatch");
    assert!(q >= 2);
    let n = xs.len();
    let m = q - 1;
    let dim = 2 * m;

    let mut counts = vec![0usize; q];
    for &y in ys {
        assert!((1..=q).contains(&y), "category {y} outside 1..={q}");
        counts[y - 1] += 1;
    }
    if counts.iter().any(|&c| c == 0) {
        return MarginalFit {
            params: MarginalParams::zeros(q),
            converged: false,
            iterations: 0,
            grad_norm: f64::INFINITY,
            fisher: Array2::zeros((dim, dim)),
            influence: None,
            status: FitStatus::Failed(FitFailure::MissingCategory),
        };
    }
    // A constant feature cannot identify any slope; the information matrix
    // is structurally singular.
    if n == 0 || xs.iter().all(|&x| x == xs[0]) {
        return MarginalFit {
            params: MarginalParams::zeros(q),
            converged: false,
            iterations: 0,
            grad_norm: f64::INFINITY,
            fisher: Array2::zeros((dim, dim)),
            influence: None,
            status: FitStatus::Failed(FitFailure::SingularInformation),
        };
    }

    // intercept-only MLE as the starting point
    let mut params = MarginalParams::zeros(q);
    for c in 0..m {
        params.alpha[c] = (counts[c] as f64 / counts[q - 1] as f64).ln();
    }

    let mut ll = log_likelihood(&params, xs, ys, q);
    let mut iterations = 0usize;
    // Quadratic convergence flattens the log-likelihood one step before
    // the gradient meets its tolerance, so a single tiny change is normal;
    // two in a row with a large gradient means the iteration is stuck.
    let mut tiny_changes = 0usize;

    loop {
        let (grad, fisher) = score_and_fisher(&params, xs, ys, q);
        let gnorm = sup_norm(&grad);

        if gnorm <= opts.grad_tol {
            return finish_converged(params, iterations, gnorm, fisher, xs, ys, q);
        }
        if sup_norm(&params.beta) > opts.sep_bound {
            return failed(params, iterations, gnorm, fisher, FitFailure::SeparationDetected);
        }
        if iterations >= opts.max_iter {
            return failed(params, iterations, gnorm, fisher, FitFailure::MaxIterations);
        }
        if tiny_changes >= 2 {
            return failed(params, iterations, gnorm, fisher, FitFailure::Stalled);
        }

        let chol = match factor_fisher(&fisher) {
            Some(c) => c,
            None => {
                return failed(params, iterations, gnorm, fisher, FitFailure::SingularInformation);
            }
        };
        // Newton direction for the average objective: F_avg d = grad / n
        let mut direction: Vec<f64> = grad.iter().map(|g| g / n as f64).collect();
        chol.solve_into(&mut direction);

        let flat = params.to_flat();
        // Ascent holds mathematically for every small enough step; the
        // slack only absorbs round-off in the log-likelihood evaluation.
        let slack = 1e-13 * (1.0 + ll.abs());
        let mut step = 1.0_f64;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> =
                flat.iter().zip(&direction).map(|(t, d)| t + step * d).collect();
            let trial_params = MarginalParams::from_flat(&trial);
            let trial_ll = log_likelihood(&trial_params, xs, ys, q);
            if trial_ll.is_finite() && trial_ll >= ll - slack {
                accepted = Some((trial_params, trial_ll));
                break;
            }
            step *= 0.5;
        }
        let (new_params, new_ll) = match accepted {
            Some(a) => a,
            None => return failed(params, iterations, gnorm, fisher, FitFailure::Stalled),
        };
        debug_assert!(new_ll >= ll - slack, "accepted Newton step decreased the log-likelihood");
        let rel_change = (new_ll - ll).abs() / ll.abs().max(1.0);
        if rel_change <= opts.ll_tol {
            tiny_changes += 1;
        } else {
            tiny_changes = 0;
        }
        params = new_params;
        ll = new_ll;
        iterations += 1;
    }
}

fn failed(
    params: MarginalParams,
    iterations: usize,
    grad_norm: f64,
    fisher: Array2<f64>,
    reason: FitFailure,
) -> MarginalFit {
    MarginalFit {
        params,
        converged: false,
        iterations,
        grad_norm,
        fisher,
        influence: None,
        status: FitStatus::Failed(reason),
    }
}

fn finish_converged(
    params: MarginalParams,
    iterations: usize,
    grad_norm: f64,
    fisher: Array2<f64>,
    xs: &[f64],
    ys: &[usize],
    q: usize,
) -> MarginalFit {
    let n = xs.len();
    let m = q - 1;
    let chol = match factor_fisher(&fisher) {
        Some(c) => c,
        None => {
            return failed(params, iterations, grad_norm, fisher, FitFailure::SingularInformation);
        }
    };
    let mut influence = Array2::<f64>::zeros((n, m));
    let mut probs = vec![0.0; q];
    let mut score = vec![0.0; 2 * m];
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        probs_into(&params, x, &mut probs);
        for c in 0..m {
            let ind = if y == c + 1 { 1.0 } else { 0.0 };
            let resid = ind - probs[c];
            score[2 * c] = resid;
            score[2 * c + 1] = resid * x;
        }
        chol.solve_into(&mut score);
        for c in 0..m {
            influence[[i, c]] = score[2 * c + 1];
        }
    }
    MarginalFit {
        params,
        converged: true,
        iterations,
        grad_norm,
        fisher,
        influence: Some(influence),
        status: FitStatus::Ok,
    }
}

/// Fit every feature column independently. The batch is embarrassingly
/// parallel; results come back in feature-index order regardless of
/// scheduling.
pub fn fit_all(
    features: ArrayView2<f64>,
    ys: &[usize],
    q: usize,
    opts: &FitOptions,
) -> Vec<MarginalFit> {
    assert_eq!(features.nrows(), ys.len(), "feature rows and response length mismatch");
    let p = features.ncols();
    (0..p)
        .into_par_iter()
        .map(|j| {
            let xs: Vec<f64> = features.index_axis(Axis(1), j).to_vec();
            fit_marginal(&xs, ys, q, opts)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probs_uniform_when_params_zero() {
        let p = category_probs(&MarginalParams::zeros(3), 123.4, 3);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn probs_binary_logistic_at_zero() {
        let params = MarginalParams { alpha: vec![0.0], beta: vec![1.0] };
        let p = category_probs(&params, 0.0, 2);
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn probs_match_softmax_reference() {
        // proportional to (e, e^-1, 1)
        let params = MarginalParams { alpha: vec![1.0, -1.0], beta: vec![0.0, 0.0] };
        let p = category_probs(&params, 7.0, 3);
        assert!((p[0] - 0.66524095577482188953).abs() < 1e-14);
        assert!((p[1] - 0.090030573170380457998).abs() < 1e-14);
        assert!((p[2] - 0.24472847105479765247).abs() < 1e-14);
    }

    #[test]
    fn probs_survive_extreme_logits() {
        let params = MarginalParams { alpha: vec![800.0, -800.0], beta: vec![0.0, 0.0] };
        let p = category_probs(&params, 1.0, 3);
        assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loglik_uniform_baseline() {
        let params = MarginalParams::zeros(3);
        let ll = log_likelihood(&params, &[0.7], &[3], 3);
        assert!((ll - (1.0_f64 / 3.0).ln()).abs() < 1e-14);
        let ll2 = log_likelihood(&params, &[0.7, -0.3], &[1, 2], 3);
        assert!((ll2 - 2.0 * (1.0_f64 / 3.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn loglik_matches_reference_value() {
        let params = MarginalParams { alpha: vec![0.5, -0.2], beta: vec![1.0, 0.3] };
        let ll = log_likelihood(&params, &[0.0, 1.0, -1.0], &[1, 3, 2], 3);
        assert!((ll - (-3.92287356024851737731)).abs() < 1e-12);
    }

    #[test]
    fn fit_converges_on_simple_data() {
        // deterministic synthetic data with a real signal
        let n = 200;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        let mut state = 88172645463325252u64;
        let mut unit = || {
            // xorshift for test data only
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..n {
            let x = 2.0 * unit() - 1.0;
            let params = MarginalParams { alpha: vec![0.2, -0.1], beta: vec![1.5, -0.8] };
            let probs = category_probs(&params, x, 3);
            let u = unit();
            let y = if u < probs[0] {
                1
            } else if u < probs[0] + probs[1] {
                2
            } else {
                3
            };
            xs.push(x);
            ys.push(y);
        }
        let fit = fit_marginal(&xs, &ys, 3, &FitOptions::default());
        assert!(fit.is_ok(), "status {:?}", fit.status);
        assert!(fit.converged);
        assert!(fit.grad_norm <= 1e-8);
        // influence columns sum to ~0 (score identity)
        let inf = fit.influence.as_ref().unwrap();
        for c in 0..2 {
            let s: f64 = inf.column(c).sum();
            assert!(s.abs() < 1e-6, "influence column {c} sums to {s}");
        }
        // Fisher symmetric and PSD-ish
        let f = &fit.fisher;
        for i in 0..4 {
            for j in 0..4 {
                assert!((f[[i, j]] - f[[j, i]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn separation_is_detected() {
        // x separates category 1 from the rest perfectly
        let xs: Vec<f64> = (0..30).map(|i| if i < 10 { 5.0 + i as f64 } else { -5.0 - i as f64 }).collect();
        let ys: Vec<usize> = (0..30).map(|i| if i < 10 { 1 } else if i < 20 { 2 } else { 3 }).collect();
        let fit = fit_marginal(&xs, &ys, 3, &FitOptions::default());
        assert_eq!(fit.status, FitStatus::Failed(FitFailure::SeparationDetected));
        assert!(fit.influence.is_none());
    }

    #[test]
    fn missing_category_is_reported() {
        let xs = vec![0.0, 1.0, 2.0, 3.0];
        let ys = vec![1, 1, 2, 2];
        let fit = fit_marginal(&xs, &ys, 3, &FitOptions::default());
        assert_eq!(fit.status, FitStatus::Failed(FitFailure::MissingCategory));
    }

    #[test]
    fn constant_feature_fails_singular() {
        let xs = vec![2.5; 12];
        let ys = vec![1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3];
        let fit = fit_marginal(&xs, &ys, 3, &FitOptions::default());
        assert_eq!(fit.status, FitStatus::Failed(FitFailure::SingularInformation));
        assert!(fit.influence.is_none());
    }

    #[test]
    fn batch_preserves_order() {
        let n = 60;
        let xs1: Vec<f64> = (0..n).map(|i| (i as f64 * 0.77).sin()).collect();
        let xs2: Vec<f64> = (0..n).map(|i| (i as f64 * 0.33).cos()).collect();
        let ys: Vec<usize> = (0..n).map(|i| i % 3 + 1).collect();
        let mut feats = Array2::zeros((n, 2));
        for i in 0..n {
            feats[[i, 0]] = xs1[i];
            feats[[i, 1]] = xs2[i];
        }
        let fits = fit_all(feats.view(), &ys, 3, &FitOptions::default());
        let solo0 = fit_marginal(&xs1, &ys, 3, &FitOptions::default());
        let solo1 = fit_marginal(&xs2, &ys, 3, &FitOptions::default());
        assert_eq!(fits[0].params, solo0.params);
        assert_eq!(fits[1].params, solo1.params);
    }
}
