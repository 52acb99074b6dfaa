//! Synthetic data generation under the two dependency scenarios, the
//! Monte Carlo driver for the full pipeline, and table-style aggregation.
//!
//! Reproducibility contract: all sampling uses ChaCha8 streams derived
//! from the root seed. Repetition `r` draws from stream `r + 1` of the
//! root seed; stream 0 is reserved for the bootstrap resampling in the
//! aggregation step. Repetitions can therefore run in any order, in
//! parallel, and still produce bitwise-identical summaries.

use crate::mmm::{self, MmmError};
use crate::multinomial::{fit_all, FitOptions};
use crate::pfa::{
    default_grid, empirical_counts, FactorModel, FactorRegression, KPolicy, PfaError, PvalueKind,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Mmm(#[from] MmmError),
    #[error(transparent)]
    Pfa(#[from] PfaError),
}

/// Dependency structure of the feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// All features i.i.d. standard normal.
    Independent,
    /// Inactive features share an equi-correlation structure; active
    /// features stay independent of them.
    EquiCorrelated,
}

impl Scenario {
    pub fn number(&self) -> u8 {
        match self {
            Scenario::Independent => 1,
            Scenario::EquiCorrelated => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Scenario::Independent),
            2 => Some(Scenario::EquiCorrelated),
            _ => None,
        }
    }
}

/// Threshold grid specification for the t_alpha search.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { min: 1e-8, max: 0.05, points: 200 }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<Vec<f64>, PfaError> {
        default_grid(self.min, self.max, self.points)
    }
}

/// Full configuration of one Monte Carlo study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    /// Number of active features (nonzero coefficients in both
    /// baseline-category pairs).
    pub p1: usize,
    /// Equi-correlation of the inactive block (scenario 2 only).
    pub rho: f64,
    /// Coefficient value shared by all active features and both pairs.
    pub beta_active: f64,
    /// Number of retained factors handed to the factor model.
    pub k: usize,
    /// Fixed reporting threshold.
    pub t_fixed: f64,
    /// Target level for the t_alpha search.
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub grid: GridSpec,
    /// Count rejections on raw p-values (the convention the reference
    /// tables follow) instead of dependency-adjusted ones.
    #[serde(default = "default_count_raw")]
    pub count_raw: bool,
    /// Factor regression; simulations default to least squares.
    #[serde(default = "default_estimator")]
    pub estimator: FactorRegressionConfig,
}

fn default_count_raw() -> bool {
    true
}

/// Serializable mirror of [`FactorRegression`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorRegressionConfig {
    L1,
    L2,
}

fn default_estimator() -> FactorRegressionConfig {
    FactorRegressionConfig::L2
}

impl From<FactorRegressionConfig> for FactorRegression {
    fn from(c: FactorRegressionConfig) -> Self {
        match c {
            FactorRegressionConfig::L1 => FactorRegression::L1,
            FactorRegressionConfig::L2 => FactorRegression::L2,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: String| Err(SimError::InvalidConfig(m));
        if self.n < 5 {
            return fail(format!("n = {} too small", self.n));
        }
        if self.p == 0 || self.p1 > self.p {
            return fail(format!("need 0 < p1 <= p, got p1 = {}, p = {}", self.p1, self.p));
        }
        if self.scenario == Scenario::EquiCorrelated {
            let p0 = self.p - self.p1;
            if p0 < 2 {
                return fail("scenario 2 needs at least 2 inactive features".into());
            }
            let lower = -1.0 / (p0 as f64 - 1.0);
            if !(self.rho > lower && self.rho < 1.0) {
                return fail(format!(
                    "rho = {} outside ({lower:.6}, 1) for p0 = {p0}",
                    self.rho
                ));
            }
        }
        if !(self.t_fixed > 0.0 && self.t_fixed < 1.0) {
            return fail(format!("t_fixed = {} outside (0, 1)", self.t_fixed));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha = {} outside (0, 1)", self.alpha));
        }
        if self.reps == 0 {
            return fail("reps must be >= 1".into());
        }
        if self.k > self.p {
            return fail(format!("k = {} exceeds p = {}", self.k, self.p));
        }
        self.grid.build().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

/// RNG stream for one repetition.
pub fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64 + 1);
    rng
}

/// i.i.d. standard normal feature matrix (scenario 1).
pub fn gen_features_scenario1(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut x = Array2::<f64>::zeros((n, p));
    for v in x.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    x
}

/// Scenario 2: active features i.i.d. N(0,1); inactive features follow the
/// exact one-factor construction `sqrt(rho) * g_i + sqrt(1 - rho) * e_ij`,
/// independent of the active block.
pub fn gen_features_scenario2(
    n: usize,
    p: usize,
    p1: usize,
    rho: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>, SimError> {
    let p0 = p - p1;
    let lower = if p0 > 1 { -1.0 / (p0 as f64 - 1.0) } else { -1.0 };
    if !(rho > lower && rho < 1.0) {
        return Err(SimError::InvalidConfig(format!("rho = {rho} outside ({lower:.6}, 1)")));
    }
    if rho < 0.0 {
        // the one-factor construction needs sqrt(rho); fall back to the
        // general case only when actually asked for negative correlation
        return Err(SimError::InvalidConfig(
            "negative equi-correlation is not supported by the one-factor construction".into(),
        ));
    }
    let mut x = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        for j in 0..p1 {
            x[[i, j]] = rng.sample(StandardNormal);
        }
    }
    let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let sr = rho.sqrt();
    let se = (1.0 - rho).sqrt();
    for i in 0..n {
        for j in p1..p {
            let e: f64 = rng.sample(StandardNormal);
            x[[i, j]] = sr * g[i] + se * e;
        }
    }
    Ok(x)
}

/// Sample the three-category response. Both baseline-category logits share
/// the same linear predictor `beta * sum of the active features`; all
/// intercepts are zero.
pub fn gen_response(
    x: &Array2<f64>,
    p1: usize,
    beta_active: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = x.nrows();
    assert!(p1 <= x.ncols());
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let eta: f64 = (0..p1).map(|j| beta_active * x[[i, j]]).sum();
        // softmax of (eta, eta, 0), overflow-safe
        let m = eta.max(0.0);
        let e = (eta - m).exp();
        let e0 = (-m).exp();
        let denom = 2.0 * e + e0;
        let p1_prob = e / denom;
        let p2_prob = e / denom;
        let u: f64 = rng.random();
        let y = if u < p1_prob {
            1
        } else if u < p1_prob + p2_prob {
            2
        } else {
            3
        };
        ys.push(y);
    }
    ys
}

/// One repetition's outcome for one baseline-category pair.
#[derive(Debug, Clone, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub category: usize,
    pub fdp_t: f64,
    pub r_t: usize,
    pub v_t: usize,
    pub s_t: usize,
    pub t_alpha: Option<f64>,
    pub s_t_alpha: usize,
    pub failed_fits: usize,
}

/// Table row per baseline-category pair, mirroring the reported summary
/// statistics: median/SE of the estimated FDP at the fixed threshold,
/// mean/SE of R and S at the fixed threshold, the median selected
/// threshold, and the mean S at the selected threshold.
#[derive(Debug, Clone, Serialize)]
pub struct CategorySummary {
    pub category: usize,
    pub median_fdp_t: f64,
    pub se_fdp_t: f64,
    pub mean_r_t: f64,
    pub se_r_t: f64,
    pub mean_s_t: f64,
    pub se_s_t: f64,
    pub median_t_alpha: Option<f64>,
    pub mean_s_t_alpha: f64,
}

#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub summaries: Vec<CategorySummary>,
    pub records: Vec<RepRecord>,
}

fn run_one_rep(cfg: &SimConfig, rep: usize, grid: &[f64]) -> Result<Vec<RepRecord>, SimError> {
    let mut rng = rep_rng(cfg.seed, rep);
    let x = match cfg.scenario {
        Scenario::Independent => gen_features_scenario1(cfg.n, cfg.p, &mut rng),
        Scenario::EquiCorrelated => {
            gen_features_scenario2(cfg.n, cfg.p, cfg.p1, cfg.rho, &mut rng)?
        }
    };
    let ys = gen_response(&x, cfg.p1, cfg.beta_active, &mut rng);
    let fits = fit_all(x.view(), &ys, 3, &FitOptions::default());
    let failed_fits = fits.iter().filter(|f| !f.is_ok()).count();

    let mut records = Vec::with_capacity(2);
    for category in 1..=2usize {
        let inference = mmm::infer_category(&fits, category)?;
        let model = FactorModel::fit(
            &inference.corr_hat,
            &inference.z,
            KPolicy::Explicit(cfg.k.min(inference.active.len())),
            cfg.estimator.into(),
            crate::pfa::DEFAULT_L2_TRIM,
        )?;
        let adjusted_owned;
        let pvalues: &[f64] = if cfg.count_raw {
            &inference.p_raw
        } else {
            adjusted_owned = model.adjusted_pvalues(&inference.z);
            &adjusted_owned
        };
        // truth over the surviving features: indices >= p1 are true nulls
        let truth: Vec<bool> = inference.active.iter().map(|&j| j >= cfg.p1).collect();

        let counts = empirical_counts(pvalues, cfg.t_fixed, Some(&truth));
        let (v_t, s_t) = (counts.v.unwrap(), counts.s.unwrap());
        debug_assert_eq!(counts.r, v_t + s_t);
        debug_assert!(s_t <= cfg.p1);
        debug_assert!(v_t <= cfg.p - cfg.p1);
        let point = model.fdp_estimate(cfg.t_fixed, counts.r)?;

        let kind = if cfg.count_raw { PvalueKind::Raw } else { PvalueKind::Adjusted };
        let report = model.threshold_search(pvalues, cfg.alpha, grid, kind)?;
        let s_t_alpha = report
            .t_alpha
            .map(|ta| empirical_counts(pvalues, ta, Some(&truth)).s.unwrap())
            .unwrap_or(0);

        records.push(RepRecord {
            rep,
            category,
            fdp_t: point.fdp_hat,
            r_t: counts.r,
            v_t,
            s_t,
            t_alpha: report.t_alpha,
            s_t_alpha,
            failed_fits,
        });
    }
    Ok(records)
}

/// Run the full Monte Carlo study. Repetitions execute in parallel with
/// private RNG streams and are merged in repetition order, so the result
/// is identical for any thread count.
pub fn run_monte_carlo(cfg: &SimConfig) -> Result<MonteCarloResult, SimError> {
    cfg.validate()?;
    let grid = cfg.grid.build().map_err(SimError::Pfa)?;
    let per_rep: Vec<Vec<RepRecord>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_one_rep(cfg, rep, &grid))
        .collect::<Result<_, _>>()?;
    let records: Vec<RepRecord> = per_rep.into_iter().flatten().collect();

    let mut boot_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    boot_rng.set_stream(0);

    let mut summaries = Vec::new();
    for category in 1..=2usize {
        let rows: Vec<&RepRecord> = records.iter().filter(|r| r.category == category).collect();
        let fdp: Vec<f64> = rows.iter().map(|r| r.fdp_t).collect();
        let r_counts: Vec<f64> = rows.iter().map(|r| r.r_t as f64).collect();
        let s_counts: Vec<f64> = rows.iter().map(|r| r.s_t as f64).collect();
        let t_alphas: Vec<f64> = rows.iter().filter_map(|r| r.t_alpha).collect();
        let s_t_alpha: Vec<f64> = rows.iter().map(|r| r.s_t_alpha as f64).collect();

        summaries.push(CategorySummary {
            category,
            median_fdp_t: median(&fdp),
            se_fdp_t: bootstrap_median_se(&fdp, 1000, &mut boot_rng),
            mean_r_t: mean(&r_counts),
            se_r_t: sample_sd(&r_counts),
            mean_s_t: mean(&s_counts),
            se_s_t: sample_sd(&s_counts),
            median_t_alpha: if t_alphas.is_empty() { None } else { Some(median(&t_alphas)) },
            mean_s_t_alpha: mean(&s_t_alpha),
        });
    }
    Ok(MonteCarloResult { summaries, records })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard deviation across repetitions (n - 1 denominator); zero for a
/// single repetition.
fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Bootstrap standard error of the median over repetitions.
fn bootstrap_median_se(v: &[f64], resamples: usize, rng: &mut ChaCha8Rng) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mut medians = Vec::with_capacity(resamples);
    let mut buf = vec![0.0; v.len()];
    for _ in 0..resamples {
        for slot in buf.iter_mut() {
            *slot = v[rng.random_range(0..v.len())];
        }
        medians.push(median(&buf));
    }
    sample_sd(&medians)
}
