//! Writers for the emitted file formats: per-feature result tables, FDP
//! curves, JSON summaries, simulation tables, and run manifests. Every
//! file is written to a temporary sibling and renamed into place, so a
//! failed run never leaves a partial file behind.

use crate::mmm::CategoryInference;
use crate::multinomial::{FitStatus, MarginalFit};
use crate::pfa::{FactorModel, FdpReport};
use crate::simulate::{CategorySummary, RepRecord};
use serde_json::json;
use std::fmt::Write as FmtWrite;
use std::fs;
use std::io;
use std::path::Path;

/// Write `contents` to `path` atomically (temp file + rename).
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Per-feature results for one baseline-category pair:
/// `feature,beta_hat,se,z,p_raw,p_adjusted`, surviving features only.
pub fn features_csv(
    inference: &CategoryInference,
    feature_names: &[String],
    p_adjusted: &[f64],
) -> String {
    let se = inference.standard_errors();
    let mut out = String::from("feature,beta_hat,se,z,p_raw,p_adjusted\n");
    for (pos, &j) in inference.active.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            feature_names[j],
            inference.beta_hat[pos],
            se[pos],
            inference.z[pos],
            inference.p_raw[pos],
            p_adjusted[pos],
        );
    }
    out
}

/// FDP curve rows: `t,R,V_hat,FDP_hat`.
pub fn fdp_csv(report: &FdpReport) -> String {
    let mut out = String::from("t,R,V_hat,FDP_hat\n");
    for row in &report.rows {
        let _ = writeln!(out, "{},{},{},{}", row.t, row.r, row.v_hat, row.fdp_hat);
    }
    out
}

/// JSON summary of one category run: selected threshold, factor model
/// diagnostics, and failure accounting.
#[allow(clippy::too_many_arguments)]
pub fn category_summary_json(
    inference: &CategoryInference,
    model: &FactorModel,
    report: &FdpReport,
    category_label: &str,
    baseline_label: &str,
    fits: &[MarginalFit],
    spectrum_head: usize,
) -> serde_json::Value {
    let failures: Vec<serde_json::Value> = fits
        .iter()
        .enumerate()
        .filter_map(|(j, f)| match f.status {
            FitStatus::Ok => None,
            FitStatus::Failed(reason) => Some(json!({
                "feature_index": j,
                "reason": reason.as_str(),
            })),
        })
        .collect();
    json!({
        "category": inference.category,
        "category_label": category_label,
        "baseline_label": baseline_label,
        "n": inference.n,
        "p_total": inference.p_total,
        "p_active": inference.active.len(),
        "t_alpha": report.t_alpha,
        "alpha": report.alpha,
        "pvalue_kind": report.pvalue_kind.as_str(),
        "k": model.k,
        "estimator": model.estimator.as_str(),
        "factor_converged": model.factor_converged,
        "factor_degenerate": model.factor_degenerate,
        "eigenvalues_head": model
            .decomposition
            .eigenvalues
            .iter()
            .take(spectrum_head)
            .copied()
            .collect::<Vec<f64>>(),
        "eigenvalue_clamped_count": model.decomposition.clamped,
        "eigenvalue_clamp_magnitude": model.decomposition.clamp_magnitude,
        "scale_clamped_count": model.scale_clamped,
        "failed_fits": failures.len(),
        "failures": failures,
    })
}

/// Dense matrix as CSV, row per line.
pub fn matrix_csv(m: &ndarray::Array2<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[[i, j]]);
        }
        out.push('\n');
    }
    out
}

/// One JSON line of fit diagnostics per feature.
pub fn fit_diagnostics_jsonl(fits: &[MarginalFit], feature_names: &[String]) -> String {
    let mut out = String::new();
    for (j, fit) in fits.iter().enumerate() {
        let status = match fit.status {
            FitStatus::Ok => "ok".to_string(),
            FitStatus::Failed(r) => format!("failed({})", r.as_str()),
        };
        let line = json!({
            "feature_index": j,
            "feature": feature_names[j],
            "status": status,
            "converged": fit.converged,
            "iterations": fit.iterations,
            "grad_norm": fit.grad_norm,
            "alpha": fit.params.alpha,
            "beta": fit.params.beta,
        });
        let _ = writeln!(out, "{line}");
    }
    out
}

/// Simulation summary table, one row per baseline-category pair, columns
/// mirroring the reported tables.
pub fn sim_summary_csv(summaries: &[CategorySummary]) -> String {
    let mut out = String::from(
        "category,median_fdp_t,se_fdp_t,mean_r_t,se_r_t,mean_s_t,se_s_t,median_t_alpha,mean_s_t_alpha\n",
    );
    for s in summaries {
        let t_alpha = s.median_t_alpha.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.category,
            s.median_fdp_t,
            s.se_fdp_t,
            s.mean_r_t,
            s.se_r_t,
            s.mean_s_t,
            s.se_s_t,
            t_alpha,
            s.mean_s_t_alpha,
        );
    }
    out
}

/// Raw per-repetition records for re-aggregation:
/// `rep,category,fdp_t,r_t,v_t,s_t,t_alpha,s_t_alpha,failed_fits`.
pub fn sim_records_csv(records: &[RepRecord]) -> String {
    let mut out = String::from("rep,category,fdp_t,r_t,v_t,s_t,t_alpha,s_t_alpha,failed_fits\n");
    for r in records {
        let t_alpha = r.t_alpha.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.rep, r.category, r.fdp_t, r.r_t, r.v_t, r.s_t, t_alpha, r.s_t_alpha, r.failed_fits,
        );
    }
    out
}
