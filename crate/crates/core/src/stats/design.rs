//! Fixed-effects design construction from sweep measurements: treatment
//! coding with baseline (DO prime, baseline step), categorical step dummies,
//! and prime-by-step interactions, plus the item grouping vector for the
//! random intercept.

use std::collections::BTreeSet;

use super::linalg::Cholesky;
use super::StatsError;
use crate::priming::{PrimeType, PrimingMeasurement};

#[derive(Debug, Clone, Copy)]
pub struct LmmSpec {
    /// Step whose dummy is dropped (the reference level).
    pub baseline_step: u64,
    /// Model logit(P_N) instead of P_N.
    pub logit_response: bool,
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub y: Vec<f64>,
    /// Row-major n×p.
    pub x: Vec<f64>,
    pub n: usize,
    pub p: usize,
    /// Item group index per row, in 0..g.
    pub group: Vec<usize>,
    pub g: usize,
    pub column_names: Vec<String>,
    /// For step-specific columns (dummies and interactions), which step.
    pub column_steps: Vec<Option<u64>>,
    /// Distinct steps in the data, ascending.
    pub steps: Vec<u64>,
    /// Distinct item ids, ascending; index = group id.
    pub item_ids: Vec<u64>,
}

/// Build the treatment-coded design. Columns, in order: intercept, PO-prime
/// indicator, one dummy per non-baseline step (ascending), and — when
/// `with_interaction` — one PO×step column per non-baseline step (ascending).
pub fn build_design(
    measurements: &[PrimingMeasurement],
    spec: &LmmSpec,
    with_interaction: bool,
) -> Result<DesignMatrix, StatsError> {
    let steps: BTreeSet<u64> = measurements.iter().map(|m| m.step).collect();
    let item_ids: BTreeSet<u64> = measurements.iter().map(|m| m.item_id).collect();
    let primes: BTreeSet<PrimeType> = measurements.iter().map(|m| m.prime_type).collect();
    if steps.len() < 2 {
        return Err(StatsError::TooFewLevels(format!(
            "need measurements from at least 2 steps, found {}",
            steps.len()
        )));
    }
    if item_ids.len() < 2 {
        return Err(StatsError::TooFewLevels(format!(
            "need at least 2 items, found {}",
            item_ids.len()
        )));
    }
    if primes.len() < 2 {
        return Err(StatsError::TooFewLevels("need both prime types".into()));
    }
    if !steps.contains(&spec.baseline_step) {
        return Err(StatsError::MissingBaseline { step: spec.baseline_step });
    }
    let steps: Vec<u64> = steps.into_iter().collect();
    let item_ids: Vec<u64> = item_ids.into_iter().collect();
    let contrast_steps: Vec<u64> =
        steps.iter().copied().filter(|&s| s != spec.baseline_step).collect();

    let mut column_names = vec!["(Intercept)".to_string(), "primePO".to_string()];
    let mut column_steps: Vec<Option<u64>> = vec![None, None];
    for &s in &contrast_steps {
        column_names.push(format!("step{s}"));
        column_steps.push(Some(s));
    }
    if with_interaction {
        for &s in &contrast_steps {
            column_names.push(format!("primePO:step{s}"));
            column_steps.push(Some(s));
        }
    }
    let p = column_names.len();
    let n = measurements.len();

    let mut y = Vec::with_capacity(n);
    let mut x = vec![0.0; n * p];
    let mut group = Vec::with_capacity(n);
    for (r, m) in measurements.iter().enumerate() {
        let response = if spec.logit_response {
            if !(m.p_n_po_target > 0.0 && m.p_n_po_target < 1.0) {
                return Err(StatsError::InvalidInput(format!(
                    "logit response needs probabilities strictly inside (0,1); \
                     step {} item {} has {}",
                    m.step, m.item_id, m.p_n_po_target
                )));
            }
            (m.p_n_po_target / (1.0 - m.p_n_po_target)).ln()
        } else {
            m.p_n_po_target
        };
        y.push(response);
        group.push(item_ids.binary_search(&m.item_id).expect("id collected above"));
        let po = if m.prime_type == PrimeType::Po { 1.0 } else { 0.0 };
        let row = &mut x[r * p..(r + 1) * p];
        row[0] = 1.0;
        row[1] = po;
        if let Ok(si) = contrast_steps.binary_search(&m.step) {
            row[2 + si] = 1.0;
            if with_interaction {
                row[2 + contrast_steps.len() + si] = po;
            }
        }
    }

    // Gram-matrix rank check; a Cholesky failure means some column is a
    // linear combination of the others (e.g. a step observed with only one
    // prime type makes its interaction column zero or collinear).
    let mut gram = vec![0.0; p * p];
    for r in 0..n {
        let row = &x[r * p..(r + 1) * p];
        for i in 0..p {
            if row[i] == 0.0 {
                continue;
            }
            for j in 0..=i {
                gram[i * p + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[j * p + i] = gram[i * p + j];
        }
    }
    if Cholesky::decompose(&gram, p).is_none() {
        return Err(StatsError::RankDeficient(
            "fixed-effect columns are linearly dependent (is some step or prime \
             combination unobserved?)"
                .into(),
        ));
    }

    Ok(DesignMatrix { y, x, n, p, group, g: item_ids.len(), column_names, column_steps, steps, item_ids })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measurement(step: u64, item_id: u64, prime_type: PrimeType, p: f64) -> PrimingMeasurement {
        PrimingMeasurement {
            step,
            item_id,
            prime_type,
            lp_po_target: p.ln(),
            lp_do_target: (1.0 - p).ln(),
            p_n_po_target: p,
        }
    }

    fn grid(steps: &[u64], items: u64) -> Vec<PrimingMeasurement> {
        let mut out = Vec::new();
        for &s in steps {
            for i in 1..=items {
                // mildly varying response, strictly inside (0,1)
                let base = 0.4 + 0.01 * ((s + i) % 13) as f64;
                out.push(measurement(s, i, PrimeType::Po, base + 0.05));
                out.push(measurement(s, i, PrimeType::Do, base));
            }
        }
        out
    }

    fn spec(baseline: u64) -> LmmSpec {
        LmmSpec { baseline_step: baseline, logit_response: false }
    }

    #[test]
    fn twenty_one_steps_give_forty_two_columns() {
        let steps: Vec<u64> = (0..21).map(|i| 500_000 + 10 * i).collect();
        let d = build_design(&grid(&steps, 4), &spec(500_000), true).unwrap();
        assert_eq!(d.p, 42);
        let interactions =
            d.column_names.iter().filter(|c| c.starts_with("primePO:step")).count();
        assert_eq!(interactions, 20);
        assert_eq!(d.n, 21 * 4 * 2);
        assert_eq!(d.g, 4);
    }

    #[test]
    fn two_by_two_factorial_has_four_columns() {
        let d = build_design(&grid(&[100, 200], 3), &spec(100), true).unwrap();
        assert_eq!(d.p, 4);
        assert_eq!(
            d.column_names,
            vec!["(Intercept)", "primePO", "step200", "primePO:step200"]
        );
        assert_eq!(d.column_steps, vec![None, None, Some(200), Some(200)]);
    }

    #[test]
    fn reduced_design_drops_only_the_interactions() {
        let d = build_design(&grid(&[100, 200, 300], 3), &spec(100), false).unwrap();
        assert_eq!(
            d.column_names,
            vec!["(Intercept)", "primePO", "step200", "step300"]
        );
    }

    #[test]
    fn single_step_is_rejected() {
        assert!(matches!(
            build_design(&grid(&[100], 3), &spec(100), true),
            Err(StatsError::TooFewLevels(_))
        ));
    }

    #[test]
    fn missing_baseline_is_rejected() {
        assert!(matches!(
            build_design(&grid(&[100, 200], 3), &spec(150), true),
            Err(StatsError::MissingBaseline { step: 150 })
        ));
    }

    #[test]
    fn single_item_is_rejected() {
        assert!(matches!(
            build_design(&grid(&[100, 200], 1), &spec(100), true),
            Err(StatsError::TooFewLevels(_))
        ));
    }

    #[test]
    fn step_with_one_prime_type_is_rank_deficient() {
        let mut ms = grid(&[100, 200], 3);
        // remove every PO row at step 200: its interaction column becomes zero
        ms.retain(|m| !(m.step == 200 && m.prime_type == PrimeType::Po));
        assert!(matches!(
            build_design(&ms, &spec(100), true),
            Err(StatsError::RankDeficient(_))
        ));
    }

    #[test]
    fn rows_follow_input_order_and_coding() {
        let ms = vec![
            measurement(200, 2, PrimeType::Po, 0.6),
            measurement(100, 1, PrimeType::Do, 0.4),
            measurement(200, 1, PrimeType::Do, 0.5),
            measurement(100, 2, PrimeType::Po, 0.7),
        ];
        let d = build_design(&ms, &spec(100), true).unwrap();
        assert_eq!(d.y, vec![0.6, 0.4, 0.5, 0.7]);
        // row 0: PO at non-baseline step by item 2
        assert_eq!(&d.x[0..4], &[1.0, 1.0, 1.0, 1.0]);
        // row 1: DO at baseline by item 1
        assert_eq!(&d.x[4..8], &[1.0, 0.0, 0.0, 0.0]);
        // row 2: DO at step 200
        assert_eq!(&d.x[8..12], &[1.0, 0.0, 1.0, 0.0]);
        // row 3: PO at baseline
        assert_eq!(&d.x[12..16], &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(d.group, vec![1, 0, 0, 1]);
    }

    #[test]
    fn logit_response_transforms_y() {
        let ms = grid(&[100, 200], 2);
        let d = build_design(&ms, &LmmSpec { baseline_step: 100, logit_response: true }, true)
            .unwrap();
        let p0 = ms[0].p_n_po_target;
        assert!((d.y[0] - (p0 / (1.0 - p0)).ln()).abs() < 1e-15);
    }
}
