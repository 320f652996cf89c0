//! Multiple-comparison corrections: Holm step-down (default), Bonferroni,
//! and Benjamini–Hochberg step-up. Input order is preserved.

use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    Holm,
    Bonferroni,
    Bh,
}

impl std::str::FromStr for Correction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_lowercase().as_str() {
            "holm" => Ok(Correction::Holm),
            "bonferroni" => Ok(Correction::Bonferroni),
            "bh" => Ok(Correction::Bh),
            other => Err(format!("unknown correction {other:?} (holm, bonferroni, bh)")),
        }
    }
}

impl std::fmt::Display for Correction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Correction::Holm => write!(f, "holm"),
            Correction::Bonferroni => write!(f, "bonferroni"),
            Correction::Bh => write!(f, "bh"),
        }
    }
}

pub fn adjust_pvalues(ps: &[f64], method: Correction) -> Result<Vec<f64>, StatsError> {
    for &p in ps {
        if !(0.0..=1.0).contains(&p) {
            return Err(StatsError::InvalidPValue(p));
        }
    }
    let m = ps.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| ps[a].total_cmp(&ps[b]));
    let mut out = vec![0.0; m];
    match method {
        Correction::Bonferroni => {
            for (i, &p) in ps.iter().enumerate() {
                out[i] = (p * m as f64).min(1.0);
            }
        }
        Correction::Holm => {
            let mut running = 0.0f64;
            for (rank, &i) in order.iter().enumerate() {
                let val = ((m - rank) as f64 * ps[i]).min(1.0);
                running = running.max(val);
                out[i] = running;
            }
        }
        Correction::Bh => {
            let mut running = 1.0f64;
            for (rank, &i) in order.iter().enumerate().rev() {
                let val = (ps[i] * m as f64 / (rank + 1) as f64).min(1.0);
                running = running.min(val);
                // p·m/(rank+1) ≥ p holds exactly, but the division can
                // round a hair below; keep the adjusted value dominant
                out[i] = running.max(ps[i]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn holm_hand_computed_anchor() {
        let adjusted = adjust_pvalues(&[0.001, 0.01, 0.04], Correction::Holm).unwrap();
        assert_eq!(adjusted, vec![0.003, 0.02, 0.04]);
    }

    #[test]
    fn holm_enforces_the_running_maximum() {
        // second-smallest would get 2*0.03 = 0.06 < 3*0.029 = 0.087
        let adjusted = adjust_pvalues(&[0.029, 0.03, 0.9], Correction::Holm).unwrap();
        assert!((adjusted[0] - 0.087).abs() < 1e-12);
        assert!((adjusted[1] - 0.087).abs() < 1e-12);
        assert_eq!(adjusted[2], 0.9);
    }

    #[test]
    fn bonferroni_is_identity_for_a_single_test() {
        assert_eq!(adjust_pvalues(&[0.01], Correction::Bonferroni).unwrap(), vec![0.01]);
    }

    #[test]
    fn bh_matches_a_hand_example() {
        // sorted: 0.01*4/1=0.04, 0.02*4/2=0.04, 0.03*4/3=0.04, 0.9
        let adjusted = adjust_pvalues(&[0.02, 0.9, 0.01, 0.03], Correction::Bh).unwrap();
        assert!((adjusted[0] - 0.04).abs() < 1e-12);
        assert_eq!(adjusted[1], 0.9);
        assert!((adjusted[2] - 0.04).abs() < 1e-12);
        assert!((adjusted[3] - 0.04).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_pvalues_are_rejected() {
        for bad in [-0.1, 1.1, f64::NAN] {
            assert!(adjust_pvalues(&[0.5, bad], Correction::Holm).is_err());
        }
    }

    #[test]
    fn input_order_is_preserved() {
        let ps = [0.04, 0.001, 0.01];
        let adjusted = adjust_pvalues(&ps, Correction::Holm).unwrap();
        assert_eq!(adjusted, vec![0.04, 0.003, 0.02]);
    }

    #[test]
    fn dominance_and_monotonicity_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let m = rng.random_range(1..25);
            let ps: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            for method in [Correction::Holm, Correction::Bonferroni, Correction::Bh] {
                let adj = adjust_pvalues(&ps, method).unwrap();
                for (&raw, &a) in ps.iter().zip(&adj) {
                    assert!(a >= raw, "{method}: adjusted {a} < raw {raw}");
                    assert!(a <= 1.0);
                }
                // adjusted values sorted by raw p must be non-decreasing
                let mut order: Vec<usize> = (0..m).collect();
                order.sort_by(|&a, &b| ps[a].total_cmp(&ps[b]));
                let sorted_adj: Vec<f64> = order.iter().map(|&i| adj[i]).collect();
                assert!(
                    sorted_adj.windows(2).all(|w| w[0] <= w[1] + 1e-15),
                    "{method}: not monotone: {sorted_adj:?}"
                );
            }
        }
    }

    #[test]
    fn permuting_input_permutes_output() {
        let ps = [0.2, 0.01, 0.8, 0.05];
        let adj = adjust_pvalues(&ps, Correction::Bh).unwrap();
        let perm = [2usize, 0, 3, 1];
        let ps_perm: Vec<f64> = perm.iter().map(|&i| ps[i]).collect();
        let adj_perm = adjust_pvalues(&ps_perm, Correction::Bh).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(adj_perm[k], adj[i]);
        }
    }
}
