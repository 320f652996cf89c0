//! Linear mixed-effects model with a single random intercept per group,
//! fit by maximum likelihood.
//!
//! The model is y ~ N(Xβ, σ²(I + λZZᵀ)) with λ = τ²/σ² and Z the group
//! indicator matrix. Because ZZᵀ is block-constant, (I + λZZᵀ)⁻¹ acts on
//! group sums: with c_i = λ/(1 + λn_i),
//!   XᵀV₀⁻¹X = XᵀX − Σ_i c_i s_i s_iᵀ,   s_i = Σ_{r∈i} x_r,
//!   XᵀV₀⁻¹y = Xᵀy − Σ_i c_i u_i s_i,    u_i = Σ_{r∈i} y_r,
//!   ln det V₀ = Σ_i ln(1 + λn_i),
//! so each candidate λ costs O(np + gp²) after one pass over the data.
//! σ² and β are profiled out analytically; λ is maximized on a log grid
//! followed by golden-section refinement.

use super::dist::{chi2_sf, t_sf_two_sided};
use super::linalg::Cholesky;
use super::{DesignMatrix, StatsError};

const LN_LAMBDA_LO: f64 = -12.0;
const LN_LAMBDA_HI: f64 = 12.0;
const COARSE_POINTS: usize = 49;
const GOLDEN_TOL: f64 = 1e-10;
const GOLDEN_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmmMethod {
    MaximumLikelihood,
}

#[derive(Debug, Clone)]
pub struct LmmFit {
    pub beta: Vec<f64>,
    /// Residual variance σ̂².
    pub sigma2: f64,
    /// Random-intercept variance τ̂² = λ̂σ̂².
    pub tau2: f64,
    /// Variance ratio τ̂²/σ̂² at the optimum (0 on the boundary).
    pub lambda: f64,
    pub loglik: f64,
    /// Covariance of β̂, row-major p×p: σ̂²(XᵀV₀⁻¹X)⁻¹.
    pub cov: Vec<f64>,
    pub n: usize,
    pub p: usize,
    pub g: usize,
    pub column_names: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct LrtResult {
    /// 2(ll_full − ll_reduced), clamped up to 0 when a hair negative.
    pub statistic: f64,
    pub df: u64,
    pub p_value: f64,
    /// True when a tiny negative statistic was clamped to zero.
    pub clamped: bool,
}

#[derive(Debug, Clone)]
pub struct WaldResult {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Data reductions that make each λ evaluation cheap.
struct Sufficient {
    xtx: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
    /// g×p row-major group sums of covariate rows.
    s: Vec<f64>,
    /// Group sums of the response.
    u: Vec<f64>,
    counts: Vec<f64>,
    n: usize,
    p: usize,
}

impl Sufficient {
    fn from_design(d: &DesignMatrix) -> Self {
        let (n, p, g) = (d.n, d.p, d.g);
        let mut xtx = vec![0.0; p * p];
        let mut xty = vec![0.0; p];
        let mut yty = 0.0;
        let mut s = vec![0.0; g * p];
        let mut u = vec![0.0; g];
        let mut counts = vec![0.0; g];
        for r in 0..n {
            let row = &d.x[r * p..(r + 1) * p];
            let yr = d.y[r];
            let gi = d.group[r];
            yty += yr * yr;
            u[gi] += yr;
            counts[gi] += 1.0;
            for i in 0..p {
                let xi = row[i];
                if xi == 0.0 {
                    continue;
                }
                xty[i] += xi * yr;
                s[gi * p + i] += xi;
                for j in 0..=i {
                    xtx[i * p + j] += xi * row[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                xtx[j * p + i] = xtx[i * p + j];
            }
        }
        Sufficient { xtx, xty, yty, s, u, counts, n, p }
    }

    /// Profiled log-likelihood and GLS solution at a fixed variance ratio.
    /// None when the shrunken Gram matrix is not positive definite or the
    /// generalized residual sum of squares is not strictly positive.
    fn eval(&self, lambda: f64) -> Option<Eval> {
        let p = self.p;
        let mut a = self.xtx.clone();
        let mut b = self.xty.clone();
        let mut quad = self.yty;
        let mut ln_det = 0.0;
        for (gi, (&ni, &ui)) in self.counts.iter().zip(&self.u).enumerate() {
            let c = lambda / (1.0 + lambda * ni);
            ln_det += (1.0 + lambda * ni).ln();
            quad -= c * ui * ui;
            let si = &self.s[gi * p..(gi + 1) * p];
            for i in 0..p {
                if si[i] == 0.0 {
                    continue;
                }
                b[i] -= c * ui * si[i];
                for j in 0..p {
                    a[i * p + j] -= c * si[i] * si[j];
                }
            }
        }
        let chol = Cholesky::decompose(&a, p)?;
        let beta = chol.solve(&b);
        let q = quad - beta.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
        if !(q > 0.0) || !q.is_finite() {
            return None;
        }
        let n = self.n as f64;
        let sigma2 = q / n;
        let loglik =
            -0.5 * n * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0) - 0.5 * ln_det;
        if !loglik.is_finite() {
            return None;
        }
        Some(Eval { lambda, loglik, beta, sigma2, chol })
    }
}

struct Eval {
    lambda: f64,
    loglik: f64,
    beta: Vec<f64>,
    sigma2: f64,
    chol: Cholesky,
}

pub fn fit_lmm(design: &DesignMatrix, method: LmmMethod) -> Result<LmmFit, StatsError> {
    let LmmMethod::MaximumLikelihood = method;
    if design.n <= design.p {
        return Err(StatsError::NotEnoughRows { n: design.n, p: design.p });
    }
    let suff = Sufficient::from_design(design);

    let Some(at_zero) = suff.eval(0.0) else {
        return Err(StatsError::RankDeficient(
            "Gram matrix of the fixed effects is not positive definite".into(),
        ));
    };
    let mut best = at_zero;

    let grid: Vec<f64> = (0..COARSE_POINTS)
        .map(|k| {
            LN_LAMBDA_LO
                + (LN_LAMBDA_HI - LN_LAMBDA_LO) * k as f64 / (COARSE_POINTS - 1) as f64
        })
        .collect();
    let mut best_grid: Option<(usize, f64)> = None;
    for (k, &ln_l) in grid.iter().enumerate() {
        if let Some(e) = suff.eval(ln_l.exp()) {
            if best_grid.is_none_or(|(_, ll)| e.loglik > ll) {
                best_grid = Some((k, e.loglik));
            }
            if e.loglik > best.loglik {
                best = e;
            }
        }
    }

    // Refine around the best coarse point; the bracket is its neighbors.
    if let Some((k, _)) = best_grid {
        let lo = if k == 0 { LN_LAMBDA_LO } else { grid[k - 1] };
        let hi = if k + 1 == grid.len() { LN_LAMBDA_HI } else { grid[k + 1] };
        let refined = golden_max(&suff, lo, hi)?;
        if let Some(e) = refined {
            if e.loglik > best.loglik {
                best = e;
            }
        }
    }

    let Eval { lambda, loglik, beta, sigma2, chol } = best;
    let mut cov = chol.inverse();
    for v in &mut cov {
        *v *= sigma2;
    }
    Ok(LmmFit {
        beta,
        sigma2,
        tau2: lambda * sigma2,
        lambda,
        loglik,
        cov,
        n: design.n,
        p: design.p,
        g: design.g,
        column_names: design.column_names.clone(),
    })
}

/// Golden-section maximization of the profiled log-likelihood over ln λ.
fn golden_max(suff: &Sufficient, mut lo: f64, mut hi: f64) -> Result<Option<Eval>, StatsError> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let ll_of = |ln_l: f64| suff.eval(ln_l.exp()).map_or(f64::NEG_INFINITY, |e| e.loglik);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = ll_of(x1);
    let mut f2 = ll_of(x2);
    let mut iter = 0;
    while hi - lo > GOLDEN_TOL {
        if iter >= GOLDEN_MAX_ITER {
            return Err(StatsError::NonConvergence);
        }
        iter += 1;
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = ll_of(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = ll_of(x2);
        }
    }
    Ok(suff.eval((0.5 * (lo + hi)).exp()))
}

/// Likelihood-ratio test of `full` against the nested `reduced` model.
pub fn lrt(full: &LmmFit, reduced: &LmmFit) -> Result<LrtResult, StatsError> {
    if full.n != reduced.n || full.g != reduced.g {
        return Err(StatsError::NotNested(format!(
            "fits use different data: {} vs {} rows, {} vs {} groups",
            full.n, reduced.n, full.g, reduced.g
        )));
    }
    if let Some(missing) =
        reduced.column_names.iter().find(|c| !full.column_names.contains(c))
    {
        return Err(StatsError::NotNested(format!(
            "reduced model has a term {missing:?} the full model lacks"
        )));
    }
    let df = (full.p - reduced.p) as u64;
    let mut statistic = 2.0 * (full.loglik - reduced.loglik);
    let mut clamped = false;
    if statistic < 0.0 {
        if statistic > -1e-6 {
            statistic = 0.0;
            clamped = true;
        } else {
            return Err(StatsError::NotNested(format!(
                "full model fits worse than its reduction (2Δll = {statistic:.3e})"
            )));
        }
    }
    let p_value = if df == 0 { 1.0 } else { chi2_sf(statistic, df as f64)? };
    Ok(LrtResult { statistic, df, p_value, clamped })
}

/// Wald t-test of a single coefficient against zero, with n − p degrees of
/// freedom.
pub fn wald_t(fit: &LmmFit, term: &str) -> Result<WaldResult, StatsError> {
    let j = fit
        .column_names
        .iter()
        .position(|c| c == term)
        .ok_or_else(|| StatsError::UnknownCoefficient(term.to_string()))?;
    let estimate = fit.beta[j];
    let var = fit.cov[j * fit.p + j];
    if !(var > 0.0) {
        return Err(StatsError::RankDeficient(format!(
            "coefficient {term:?} has non-positive variance {var}"
        )));
    }
    let se = var.sqrt();
    let t = estimate / se;
    let df = (fit.n - fit.p) as f64;
    let p_value = t_sf_two_sided(t, df)?;
    Ok(WaldResult { term: term.to_string(), estimate, se, t, df, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Hand-built design: columns are an intercept and `p − 1` standard
    /// normal covariates; `g` equal groups.
    fn synth_design(
        rng: &mut ChaCha8Rng,
        n: usize,
        p: usize,
        g: usize,
        beta: &[f64],
        sigma: f64,
        tau: f64,
        zero_sum_noise: bool,
    ) -> DesignMatrix {
        assert_eq!(beta.len(), p);
        let mut x = vec![0.0; n * p];
        let mut group = Vec::with_capacity(n);
        for r in 0..n {
            x[r * p] = 1.0;
            for j in 1..p {
                x[r * p + j] = rng.sample::<f64, _>(StandardNormal);
            }
            group.push(r % g);
        }
        let b: Vec<f64> =
            (0..g).map(|_| tau * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut eps: Vec<f64> =
            (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        if zero_sum_noise {
            // center the noise within each group so the ML variance-ratio
            // optimum sits on the λ = 0 boundary
            let mut sums = vec![0.0; g];
            let mut counts = vec![0.0; g];
            for r in 0..n {
                sums[group[r]] += eps[r];
                counts[group[r]] += 1.0;
            }
            for r in 0..n {
                eps[r] -= sums[group[r]] / counts[group[r]];
            }
        }
        let y: Vec<f64> = (0..n)
            .map(|r| {
                let mut v = b[group[r]] + eps[r];
                for j in 0..p {
                    v += beta[j] * x[r * p + j];
                }
                v
            })
            .collect();
        DesignMatrix {
            y,
            x,
            n,
            p,
            group,
            g,
            column_names: (0..p).map(|j| format!("x{j}")).collect(),
            column_steps: vec![None; p],
            steps: vec![],
            item_ids: vec![],
        }
    }

    /// Gaussian elimination with partial pivoting; returns the solution of
    /// `a`·x = rhs for a dense square system. Test-local oracle only.
    fn ge_solve(a: &[f64], rhs: &[f64], n: usize) -> Vec<f64> {
        let mut m = a.to_vec();
        let mut b = rhs.to_vec();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
                .unwrap();
            if piv != col {
                for k in 0..n {
                    m.swap(col * n + k, piv * n + k);
                }
                b.swap(col, piv);
            }
            assert!(m[col * n + col].abs() > 1e-12, "singular oracle system");
            for row in col + 1..n {
                let f = m[row * n + col] / m[col * n + col];
                if f == 0.0 {
                    continue;
                }
                for k in col..n {
                    m[row * n + k] -= f * m[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut v = b[row];
            for k in row + 1..n {
                v -= m[row * n + k] * x[k];
            }
            x[row] = v / m[row * n + row];
        }
        x
    }

    /// Dense-matrix profiled log-likelihood at a fixed λ: builds the n×n
    /// marginal correlation matrix explicitly and uses Gaussian elimination,
    /// sharing no code with the fitter.
    fn dense_profile(d: &DesignMatrix, lambda: f64) -> (f64, Vec<f64>) {
        let (n, p) = (d.n, d.p);
        let mut v = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                let mut val = if r == c { 1.0 } else { 0.0 };
                if d.group[r] == d.group[c] {
                    val += lambda;
                }
                v[r * n + c] = val;
            }
        }
        // LU without pivoting (V is symmetric positive definite), storing
        // the multipliers below the diagonal; the determinant is the
        // product of the pivots.
        let mut lu = v.clone();
        let mut ln_det = 0.0;
        for col in 0..n {
            ln_det += lu[col * n + col].ln();
            for row in col + 1..n {
                let f = lu[row * n + col] / lu[col * n + col];
                lu[row * n + col] = f;
                if f == 0.0 {
                    continue;
                }
                for k in col + 1..n {
                    lu[row * n + k] -= f * lu[col * n + k];
                }
            }
        }
        let solve = |rhs: &[f64]| -> Vec<f64> {
            let mut z = rhs.to_vec();
            for col in 0..n {
                for row in col + 1..n {
                    z[row] -= lu[row * n + col] * z[col];
                }
            }
            let mut x = vec![0.0; n];
            for row in (0..n).rev() {
                let mut val = z[row];
                for k in row + 1..n {
                    val -= lu[row * n + k] * x[k];
                }
                x[row] = val / lu[row * n + row];
            }
            x
        };
        let v_inv_y = solve(&d.y);
        let mut a = vec![0.0; p * p];
        let mut bvec = vec![0.0; p];
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(p);
        for j in 0..p {
            let col: Vec<f64> = (0..n).map(|r| d.x[r * p + j]).collect();
            cols.push(solve(&col));
        }
        for i in 0..p {
            for j in 0..p {
                a[i * p + j] = (0..n).map(|r| d.x[r * p + i] * cols[j][r]).sum();
            }
            bvec[i] = (0..n).map(|r| d.x[r * p + i] * v_inv_y[r]).sum();
        }
        let beta = ge_solve(&a, &bvec, p);
        let yvy: f64 = d.y.iter().zip(&v_inv_y).map(|(a, b)| a * b).sum();
        let q = yvy - beta.iter().zip(&bvec).map(|(a, b)| a * b).sum::<f64>();
        let sigma2 = q / n as f64;
        let ll = -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0)
            - 0.5 * ln_det;
        (ll, beta)
    }

    #[test]
    fn collapses_to_least_squares_when_groups_carry_no_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let d = synth_design(&mut rng, 60, 3, 10, &[1.0, -2.0, 0.5], 0.7, 0.0, true);
        let fit = fit_lmm(&d, LmmMethod::MaximumLikelihood).unwrap();
        assert!(fit.tau2 <= 1e-6, "tau2 = {}", fit.tau2);

        // ordinary least squares through the test-local oracle
        let (n, p) = (d.n, d.p);
        let mut xtx = vec![0.0; p * p];
        let mut xty = vec![0.0; p];
        for r in 0..n {
            for i in 0..p {
                xty[i] += d.x[r * p + i] * d.y[r];
                for j in 0..p {
                    xtx[i * p + j] += d.x[r * p + i] * d.x[r * p + j];
                }
            }
        }
        let ols = ge_solve(&xtx, &xty, p);
        for (a, b) in fit.beta.iter().zip(&ols) {
            assert!((a - b).abs() < 1e-6, "beta {a} vs OLS {b}");
        }
    }

    #[test]
    fn matches_dense_oracle_over_seeded_datasets() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let d = synth_design(
                &mut rng,
                50,
                3,
                10,
                &[0.3, 1.5, -0.8],
                1.0,
                2.0_f64.sqrt(),
                false,
            );
            let fit = fit_lmm(&d, LmmMethod::MaximumLikelihood).unwrap();

            // the fast path must agree with the dense path at the optimum
            let (ll_dense, beta_dense) = dense_profile(&d, fit.lambda);
            assert!(
                (ll_dense - fit.loglik).abs() < 1e-8 * fit.loglik.abs().max(1.0),
                "seed {seed}: ll {} vs dense {}",
                fit.loglik,
                ll_dense
            );
            for (a, b) in fit.beta.iter().zip(&beta_dense) {
                assert!((a - b).abs() < 1e-8, "seed {seed}: beta {a} vs dense {b}");
            }

            // and the optimum must dominate a dense grid over the search range
            for k in 0..1000 {
                let ln_l = -12.0 + 24.0 * k as f64 / 999.0;
                let (ll, _) = dense_profile(&d, ln_l.exp());
                assert!(
                    fit.loglik >= ll - 1e-6,
                    "seed {seed}: grid lnλ={ln_l} beats fit: {ll} > {}",
                    fit.loglik
                );
            }
        }
    }

    #[test]
    fn recovers_moderate_variance_ratio() {
        // large balanced dataset: λ̂ should land near the true τ²/σ² = 2
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = synth_design(
            &mut rng,
            2000,
            3,
            100,
            &[0.3, 1.5, -0.8],
            1.0,
            2.0_f64.sqrt(),
            false,
        );
        let fit = fit_lmm(&d, LmmMethod::MaximumLikelihood).unwrap();
        assert!(
            fit.lambda > 1.0 && fit.lambda < 4.0,
            "lambda = {} should be near 2",
            fit.lambda
        );
        assert!((fit.sigma2 - 1.0).abs() < 0.2, "sigma2 = {}", fit.sigma2);
    }

    #[test]
    fn is_invariant_to_row_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = synth_design(&mut rng, 50, 3, 10, &[0.3, 1.5, -0.8], 1.0, 1.0, false);
        let fit = fit_lmm(&d, LmmMethod::MaximumLikelihood).unwrap();

        let mut perm: Vec<usize> = (0..d.n).collect();
        // deterministic interleave permutation
        perm.sort_by_key(|&r| (r % 7, r));
        let mut d2 = d.clone();
        for (new_r, &old_r) in perm.iter().enumerate() {
            d2.y[new_r] = d.y[old_r];
            d2.group[new_r] = d.group[old_r];
            d2.x[new_r * d.p..(new_r + 1) * d.p]
                .copy_from_slice(&d.x[old_r * d.p..(old_r + 1) * d.p]);
        }
        let fit2 = fit_lmm(&d2, LmmMethod::MaximumLikelihood).unwrap();
        assert!((fit.loglik - fit2.loglik).abs() < 1e-9);
        assert!((fit.lambda - fit2.lambda).abs() < 1e-9 * (1.0 + fit.lambda));
        for (a, b) in fit.beta.iter().zip(&fit2.beta) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn covariance_is_symmetric_positive_and_cauchy_schwarz_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = synth_design(&mut rng, 80, 4, 8, &[0.1, 0.2, -0.3, 0.4], 1.0, 1.0, false);
        let fit = fit_lmm(&d, LmmMethod::MaximumLikelihood).unwrap();
        let p = fit.p;
        for i in 0..p {
            assert!(fit.cov[i * p + i] > 0.0);
            for j in 0..p {
                assert!((fit.cov[i * p + j] - fit.cov[j * p + i]).abs() < 1e-12);
                let bound = (fit.cov[i * p + i] * fit.cov[j * p + j]).sqrt();
                assert!(fit.cov[i * p + j].abs() <= bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn wald_reports_unit_probability_for_null_coefficient() {
        // antisymmetric response in the second covariate, so its estimate
        // vanishes up to rounding
        let n = 40;
        let p = 2;
        let mut x = vec![0.0; n * p];
        let mut y = vec![0.0; n];
        let mut group = vec![0; n];
        for r in 0..n {
            x[r * p] = 1.0;
            let v = if r % 2 == 0 { 1.0 } else { -1.0 };
            x[r * p + 1] = v;
            y[r] = 2.0 + if r % 4 < 2 { 0.3 } else { -0.3 };
            group[r] = r % 5;
        }
        let d = DesignMatrix {
            y,
            x,
            n,
            p,
            group,
            g: 5,
            column_names: vec!["(Intercept)".into(), "x1".into()],
            column_steps: vec![None, None],
            steps: vec![],
            item_ids: vec![],
        };
        let fit = fit_lmm(&d, LmmMethod::MaximumLikelihood).unwrap();
        let w = wald_t(&fit, "x1").unwrap();
        assert!(w.t.abs() < 1e-8, "t = {}", w.t);
        assert!(w.p_value > 1.0 - 1e-6);
        assert_eq!(w.df, (n - p) as f64);

        assert!(matches!(
            wald_t(&fit, "x9"),
            Err(StatsError::UnknownCoefficient(_))
        ));
    }

    #[test]
    fn lrt_of_a_model_against_itself_is_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = synth_design(&mut rng, 50, 3, 10, &[0.3, 1.5, -0.8], 1.0, 1.0, false);
        let fit = fit_lmm(&d, LmmMethod::MaximumLikelihood).unwrap();
        let r = lrt(&fit, &fit.clone()).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.df, 0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn lrt_rejects_non_nested_and_mismatched_fits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = synth_design(&mut rng, 50, 3, 10, &[0.3, 1.5, -0.8], 1.0, 1.0, false);
        let full = fit_lmm(&d, LmmMethod::MaximumLikelihood).unwrap();
        let mut foreign = full.clone();
        foreign.column_names[2] = "z9".into();
        assert!(matches!(lrt(&full, &foreign), Err(StatsError::NotNested(_))));

        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        let d2 = synth_design(&mut rng2, 40, 3, 10, &[0.3, 1.5, -0.8], 1.0, 1.0, false);
        let other = fit_lmm(&d2, LmmMethod::MaximumLikelihood).unwrap();
        assert!(matches!(lrt(&full, &other), Err(StatsError::NotNested(_))));
    }

    #[test]
    fn lrt_statistic_is_invariant_to_affine_response_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = synth_design(&mut rng, 60, 3, 12, &[0.3, 0.4, -0.2], 1.0, 1.0, false);
        let mut reduced_d = d.clone();
        // drop the last column for the reduced model
        reduced_d.p = 2;
        reduced_d.column_names.truncate(2);
        reduced_d.column_steps.truncate(2);
        reduced_d.x = (0..d.n).flat_map(|r| d.x[r * 3..r * 3 + 2].to_vec()).collect();

        let stat = |dd: &DesignMatrix, rd: &DesignMatrix| {
            let full = fit_lmm(dd, LmmMethod::MaximumLikelihood).unwrap();
            let red = fit_lmm(rd, LmmMethod::MaximumLikelihood).unwrap();
            lrt(&full, &red).unwrap().statistic
        };
        let s1 = stat(&d, &reduced_d);

        let mut d_scaled = d.clone();
        let mut r_scaled = reduced_d.clone();
        for v in d_scaled.y.iter_mut().chain(r_scaled.y.iter_mut()) {
            *v = 3.7 * *v - 1.2;
        }
        let s2 = stat(&d_scaled, &r_scaled);
        assert!((s1 - s2).abs() < 1e-6, "{s1} vs {s2}");
    }

    #[test]
    fn too_many_columns_for_the_rows_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = synth_design(&mut rng, 4, 4, 2, &[0.0; 4], 1.0, 0.0, false);
        assert!(matches!(
            fit_lmm(&d, LmmMethod::MaximumLikelihood),
            Err(StatsError::NotEnoughRows { n: 4, p: 4 })
        ));
    }

    #[test]
    fn interaction_estimates_cover_the_truth() {
        // coverage check: the true coefficient should fall within ±3
        // standard errors in nearly every replicate
        use crate::priming::{PrimeType, PrimingMeasurement};
        use crate::stats::{build_design, LmmSpec};

        let delta = 0.08;
        let mut covered = 0;
        let reps = 100;
        for rep in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
            let mut ms = Vec::new();
            for step_idx in 0..3u64 {
                let step = 100 * (step_idx + 1);
                for item in 1..=16u64 {
                    let item_eff = 0.03 * rng.sample::<f64, _>(StandardNormal);
                    for &prime in &[PrimeType::Po, PrimeType::Do] {
                        let po = (prime == PrimeType::Po) as u64 as f64;
                        let bump = if step_idx > 0 { delta * po } else { 0.0 };
                        let noise = 0.01 * rng.sample::<f64, _>(StandardNormal);
                        let y = 0.45 + 0.02 * po + 0.01 * step_idx as f64
                            + bump
                            + item_eff
                            + noise;
                        ms.push(PrimingMeasurement {
                            step,
                            item_id: item,
                            prime_type: prime,
                            lp_po_target: y.ln(),
                            lp_do_target: (1.0 - y).ln(),
                            p_n_po_target: y,
                        });
                    }
                }
            }
            let d = build_design(
                &ms,
                &LmmSpec { baseline_step: 100, logit_response: false },
                true,
            )
            .unwrap();
            let fit = fit_lmm(&d, LmmMethod::MaximumLikelihood).unwrap();
            let w = wald_t(&fit, "primePO:step200").unwrap();
            if (w.estimate - delta).abs() <= 3.0 * w.se {
                covered += 1;
            }
        }
        assert!(covered >= 95, "covered {covered}/{reps}");
    }
}
