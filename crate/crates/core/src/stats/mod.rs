//! Inferential pipeline over priming trajectories: design matrices with
//! categorical step coding, linear mixed-effects models fit by maximum
//! likelihood, likelihood-ratio and Wald tests, multiple-comparison
//! correction, and the distribution tails they need.

pub mod adjust;
pub mod design;
pub mod dist;
pub mod lmm;

mod linalg;

pub use adjust::{adjust_pvalues, Correction};
pub use design::{build_design, DesignMatrix, LmmSpec};
pub use dist::{chi2_sf, t_sf, t_sf_two_sided};
pub use lmm::{fit_lmm, lrt, wald_t, LmmFit, LmmMethod, LrtResult, WaldResult};

use std::collections::BTreeMap;

use serde::Serialize;

use crate::priming::{PrimeType, PrimingMeasurement};

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("p-value {0} outside [0, 1]")]
    InvalidPValue(f64),
    #[error("{0}")]
    InvalidInput(String),
    #[error("{0}")]
    TooFewLevels(String),
    #[error("baseline step {step} absent from the data")]
    MissingBaseline { step: u64 },
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("model has {p} fixed effects but only {n} rows")]
    NotEnoughRows { n: usize, p: usize },
    #[error("likelihood optimization did not converge")]
    NonConvergence,
    #[error("models are not nested: {0}")]
    NotNested(String),
    #[error("unknown coefficient {0:?}")]
    UnknownCoefficient(String),
}

/// One row of the coefficient report. `p_adjusted` is only populated for the
/// family the correction was applied to (the prime-by-step interactions).
#[derive(Debug, Clone, Serialize)]
pub struct CoefRow {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_adjusted: Option<f64>,
    /// Set on interaction terms: the non-baseline step the term belongs to.
    pub step: Option<u64>,
}

#[derive(Debug, Clone, Copy)]
pub struct AnalysisOptions {
    pub baseline_step: u64,
    pub correction: Correction,
    pub alpha: f64,
    /// Model the logit of the normalized probability instead of the
    /// probability itself.
    pub logit_response: bool,
}

#[derive(Debug)]
pub struct AnalysisReport {
    pub fit: LmmFit,
    pub lrt: LrtResult,
    pub coefficients: Vec<CoefRow>,
    /// Smallest non-baseline step whose interaction survives correction.
    pub earliest_significant_step: Option<u64>,
    /// (step, mean over items of P_N(PO|PO prime) − P_N(PO|DO prime)).
    pub mean_effect_by_step: Vec<(u64, f64)>,
    pub alpha: f64,
    pub correction: Correction,
}

/// Mean per-step priming effect: for each item the difference of normalized
/// PO-target probabilities under the two primes, averaged over items.
pub fn mean_effect_by_step(measurements: &[PrimingMeasurement]) -> Vec<(u64, f64)> {
    let mut cells: BTreeMap<(u64, u64), [Option<f64>; 2]> = BTreeMap::new();
    for m in measurements {
        let slot = match m.prime_type {
            PrimeType::Po => 0,
            PrimeType::Do => 1,
        };
        cells.entry((m.step, m.item_id)).or_default()[slot] = Some(m.p_n_po_target);
    }
    let mut by_step: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for ((step, _), [po, do_]) in cells {
        if let (Some(po), Some(do_)) = (po, do_) {
            let entry = by_step.entry(step).or_insert((0.0, 0));
            entry.0 += po - do_;
            entry.1 += 1;
        }
    }
    by_step.into_iter().map(|(step, (sum, k))| (step, sum / k as f64)).collect()
}

/// Full analysis of a sweep: fit the interaction model and the no-interaction
/// reduction by maximum likelihood, test the interaction block with a
/// likelihood-ratio test, report per-coefficient Wald tests with the chosen
/// correction over the interaction family, and locate the earliest step whose
/// interaction survives correction.
pub fn analyze_sweep(
    measurements: &[PrimingMeasurement],
    opts: &AnalysisOptions,
) -> Result<AnalysisReport, StatsError> {
    let spec = LmmSpec { baseline_step: opts.baseline_step, logit_response: opts.logit_response };
    let full_design = build_design(measurements, &spec, true)?;
    let reduced_design = build_design(measurements, &spec, false)?;
    let fit = fit_lmm(&full_design, LmmMethod::MaximumLikelihood)?;
    let reduced = fit_lmm(&reduced_design, LmmMethod::MaximumLikelihood)?;
    let lrt_result = lrt(&fit, &reduced)?;

    let interaction_steps: Vec<(String, u64)> = full_design
        .column_names
        .iter()
        .zip(&full_design.column_steps)
        .filter_map(|(name, step)| {
            step.filter(|_| name.starts_with("primePO:")).map(|s| (name.clone(), s))
        })
        .collect();
    let mut rows = Vec::with_capacity(fit.p);
    for name in &fit.column_names {
        let w = wald_t(&fit, name)?;
        rows.push(CoefRow {
            term: name.clone(),
            estimate: w.estimate,
            se: w.se,
            t: w.t,
            df: w.df,
            p_raw: w.p_value,
            p_adjusted: None,
            step: interaction_steps.iter().find(|(n, _)| n == name).map(|&(_, s)| s),
        });
    }
    let family: Vec<usize> =
        (0..rows.len()).filter(|&i| rows[i].step.is_some()).collect();
    let raw: Vec<f64> = family.iter().map(|&i| rows[i].p_raw).collect();
    let adjusted = adjust_pvalues(&raw, opts.correction)?;
    for (&i, adj) in family.iter().zip(adjusted) {
        rows[i].p_adjusted = Some(adj);
    }
    let earliest_significant_step = rows
        .iter()
        .filter(|r| r.p_adjusted.is_some_and(|p| p < opts.alpha))
        .filter_map(|r| r.step)
        .min();

    Ok(AnalysisReport {
        fit,
        lrt: lrt_result,
        coefficients: rows,
        earliest_significant_step,
        mean_effect_by_step: mean_effect_by_step(measurements),
        alpha: opts.alpha,
        correction: opts.correction,
    })
}
