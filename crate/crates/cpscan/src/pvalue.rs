//! The three p-value estimators for the scan maximum and the variance
//! diagnostics for the model-based one.

use rayon::prelude::*;

use crate::cov::{sigma_empirical, sigma_first_order, CovarianceModel};
use crate::matrix::SquareMat;
use crate::mvn::mvn_orthant;
use crate::scan::{scan, ScanWindow};
use crate::sim::{gen_null, standard_normal, FeatureMatrix, SeedSpec};
use crate::specfun::{chisq_sf_raw, chisq_to_std_normal, ln_gamma, Probability};
use crate::{Error, Result};

/// Closed-form tail approximation for the scan maximum:
/// `min(1, 2^{-q/2} Gamma(q/2)^{-1} ln(m1/m0) b^q e^{-b^2/2})` with
/// `b = sqrt(b_sq)`. Requires `m0 >= 1`; callers working with `m0 = 0`
/// windows must clamp explicitly (the formula has `ln(m1/m0)`).
pub fn asymp_pvalue(b_sq: f64, q: usize, m0: usize, m1: usize) -> Result<Probability> {
    if m0 == 0 {
        return Err(Error::Domain(
            "asymptotic p-value requires m0 >= 1 (ln(m1/m0) is undefined at m0 = 0)".into(),
        ));
    }
    if m1 < m0 {
        return Err(Error::Domain(format!(
            "asymptotic p-value needs m0 <= m1, got ({m0}, {m1})"
        )));
    }
    if b_sq < 0.0 || b_sq.is_nan() {
        return Err(Error::Domain(format!("b_sq must be >= 0, got {b_sq}")));
    }
    if q < 1 {
        return Err(Error::Domain("q must be >= 1".into()));
    }
    if m1 == m0 || b_sq == 0.0 {
        return Ok(Probability::ZERO);
    }
    let qf = q as f64;
    let log_p = -0.5 * qf * std::f64::consts::LN_2 - ln_gamma(0.5 * qf)
        + (m1 as f64 / m0 as f64).ln().ln()
        + 0.5 * qf * b_sq.ln()
        - 0.5 * b_sq;
    Ok(Probability::clamped(log_p.exp()))
}

/// Direct Monte Carlo p-value: the fraction of B fresh null scan maxima at
/// or above `q_obs`. Always a multiple of 1/B.
pub fn mc_pvalue(
    q_obs: f64,
    q: usize,
    n: usize,
    w: ScanWindow,
    b: usize,
    seed: SeedSpec,
) -> Result<Probability> {
    if b < 1 {
        return Err(Error::Domain("mc_pvalue needs B >= 1".into()));
    }
    w.validate_for(n)?;
    if q_obs.is_nan() {
        return Err(Error::Domain("q_obs is NaN".into()));
    }
    let hits: usize = (0..b)
        .into_par_iter()
        .map(|rep| {
            let y = gen_null(q, n, seed.derive(&[rep as u64])).expect("validated dims");
            usize::from(scan(&y, w).expect("validated").q_stat >= q_obs)
        })
        .sum();
    Ok(Probability::clamped(hits as f64 / b as f64))
}

/// Variance coefficient of the model-based p-value estimator, so that
/// `var(p_hat) ~ c_a p^2 / B` for an empirical covariance built from B
/// replicates.
#[derive(Debug, Clone)]
pub struct CaEstimate {
    /// Delta-method coefficient contracting the sensitivity terms with the
    /// exact large-B covariance of sample correlations.
    pub c_a: f64,
    /// Variant with the cross terms approximated by the product-moment
    /// coefficient `(S_ik + S_ij S_jk)`.
    pub c_a_product_moment: f64,
    /// Variant keeping only the squared per-pair terms.
    pub c_a_diagonal: f64,
    /// Block standard error of `c_a` over the conditional sample.
    pub std_error: f64,
    /// Conditional means `h[i][j] = E[w_i w_j | max y > a]`, row-major
    /// m x m, where `w = Sigma^{-1} y`.
    pub h: Vec<f64>,
    /// Dimension of `h`.
    pub dim: usize,
    /// Draws taken from the unconditioned distribution.
    pub samples_used: usize,
    /// Draws that landed in the conditioning event.
    pub hits: usize,
}

impl CaEstimate {
    pub fn h_entry(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.dim + j]
    }
}

/// Large-B covariance of two sample correlations `r_ab` and `r_cd` from a
/// multivariate normal, times B (Olkin-Siotani / Pearson-Filon form).
fn corr_cov(s: &SquareMat, a: usize, b: usize, c: usize, d: usize) -> f64 {
    let r = |i: usize, j: usize| s.get(i, j);
    0.5 * r(a, b)
        * r(c, d)
        * (r(a, c).powi(2) + r(a, d).powi(2) + r(b, c).powi(2) + r(b, d).powi(2))
        + r(a, c) * r(b, d)
        + r(a, d) * r(b, c)
        - (r(a, b) * r(a, c) * r(a, d)
            + r(a, b) * r(b, c) * r(b, d)
            + r(c, d) * r(a, c) * r(b, c)
            + r(c, d) * r(a, d) * r(b, d))
}

fn assemble_ca(s: &SquareMat, dmat: &SquareMat) -> (f64, f64, f64) {
    let m = s.dim;
    let mut pairs = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            pairs.push((i, j));
        }
    }
    let mut diagonal = 0.0;
    for &(i, j) in &pairs {
        diagonal += dmat.get(i, j).powi(2) * (1.0 - s.get(i, j).powi(2)).powi(2);
    }
    let mut product_cross = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            for k in (j + 1)..m {
                product_cross += 2.0
                    * dmat.get(i, j)
                    * dmat.get(j, k)
                    * (s.get(i, k) + s.get(i, j) * s.get(j, k));
            }
        }
    }
    let mut full = 0.0;
    for &(i, j) in &pairs {
        for &(k, l) in &pairs {
            full += dmat.get(i, j) * dmat.get(k, l) * corr_cov(s, i, j, k, l);
        }
    }
    (full, diagonal + product_cross, diagonal)
}

/// Estimates the conditional quadratic-form means `h_ij(a)` by rejection
/// sampling from the unconditioned normal, then assembles the variance
/// coefficient. Needs enough samples for at least 200 conditional hits.
pub fn estimate_ca(
    cov: &CovarianceModel,
    a_crit: f64,
    n_samples: usize,
    seed: SeedSpec,
) -> Result<CaEstimate> {
    let m = cov.dim();
    if n_samples < 1 {
        return Err(Error::Domain("estimate_ca needs n_samples >= 1".into()));
    }
    if m == 1 {
        // No pairs: every variant is zero.
        return Ok(CaEstimate {
            c_a: 0.0,
            c_a_product_moment: 0.0,
            c_a_diagonal: 0.0,
            std_error: 0.0,
            h: vec![0.0],
            dim: 1,
            samples_used: 0,
            hits: 0,
        });
    }
    let l = cov.mat().cholesky()?;
    let sinv = cov.mat().inverse_spd()?;

    // Conditional draws, kept in replicate order for determinism.
    const CHUNK: usize = 8192;
    let mut kept: Vec<Vec<f64>> = Vec::new();
    let mut start = 0usize;
    let mut buf: Vec<Option<Vec<f64>>> = Vec::new();
    while start < n_samples {
        let count = CHUNK.min(n_samples - start);
        (start..start + count)
            .into_par_iter()
            .map(|rep| {
                let mut rng = seed.derive(&[rep as u64]).rng();
                let z: Vec<f64> = (0..m).map(|_| standard_normal(&mut rng)).collect();
                let mut y = vec![0.0; m];
                let mut max = f64::NEG_INFINITY;
                for i in 0..m {
                    let mut x = 0.0;
                    for k in 0..=i {
                        x += l.get(i, k) * z[k];
                    }
                    y[i] = x;
                    max = max.max(x);
                }
                if max > a_crit {
                    let mut w = vec![0.0; m];
                    for (i, wi) in w.iter_mut().enumerate() {
                        *wi = (0..m).map(|k| sinv.get(i, k) * y[k]).sum();
                    }
                    Some(w)
                } else {
                    None
                }
            })
            .collect_into_vec(&mut buf);
        kept.extend(buf.drain(..).flatten());
        start += count;
    }
    let hits = kept.len();
    if hits < 200 {
        return Err(Error::Convergence(format!(
            "only {hits} conditional hits at a_crit={a_crit}; increase n_samples \
             (expected hits = n_samples * Pr(max > a))"
        )));
    }

    let mut h = SquareMat::zeros(m);
    for w in &kept {
        for i in 0..m {
            for j in 0..m {
                h.set(i, j, h.get(i, j) + w[i] * w[j]);
            }
        }
    }
    for v in h.data.iter_mut() {
        *v /= hits as f64;
    }
    let mut dmat = SquareMat::zeros(m);
    for i in 0..m {
        for j in 0..m {
            dmat.set(i, j, sinv.get(i, j) - h.get(i, j));
        }
    }
    let (c_a, c_a_product_moment, c_a_diagonal) = assemble_ca(cov.mat(), &dmat);

    // Block standard error: re-assemble c_a from 10 consecutive hit blocks.
    let blocks = 10usize;
    let mut block_vals = Vec::with_capacity(blocks);
    for bidx in 0..blocks {
        let lo = bidx * hits / blocks;
        let hi = (bidx + 1) * hits / blocks;
        if hi <= lo {
            continue;
        }
        let mut hb = SquareMat::zeros(m);
        for w in &kept[lo..hi] {
            for i in 0..m {
                for j in 0..m {
                    hb.set(i, j, hb.get(i, j) + w[i] * w[j]);
                }
            }
        }
        for v in hb.data.iter_mut() {
            *v /= (hi - lo) as f64;
        }
        let mut db = SquareMat::zeros(m);
        for i in 0..m {
            for j in 0..m {
                db.set(i, j, sinv.get(i, j) - hb.get(i, j));
            }
        }
        block_vals.push(assemble_ca(cov.mat(), &db).0);
    }
    let nb = block_vals.len() as f64;
    let bmean = block_vals.iter().sum::<f64>() / nb;
    let bvar = block_vals.iter().map(|v| (v - bmean).powi(2)).sum::<f64>() / (nb - 1.0);
    let std_error = (bvar / nb).sqrt();

    Ok(CaEstimate {
        c_a,
        c_a_product_moment,
        c_a_diagonal,
        std_error,
        h: h.data,
        dim: m,
        samples_used: n_samples,
        hits,
    })
}

/// Which covariance model backs the model-based p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovMode {
    Empirical,
    FirstOrder,
}

impl std::fmt::Display for CovMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CovMode::Empirical => write!(f, "empirical"),
            CovMode::FirstOrder => write!(f, "firstorder"),
        }
    }
}

/// Simulation and integration budgets for [`full_report`].
#[derive(Debug, Clone, Copy)]
pub struct Budgets {
    /// Replicates behind an empirical covariance estimate.
    pub sigma_b: usize,
    /// Replicates behind the direct Monte Carlo p-value.
    pub mc_b: usize,
    /// Integration tolerance for the orthant probability.
    pub mvn_tol: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets { sigma_b: 10_000, mc_b: 10_000, mvn_tol: 1e-4 }
    }
}

/// P-values from all three estimators for one observed matrix.
#[derive(Debug, Clone)]
pub struct PValueReport {
    /// Closed-form tail approximation; absent when the window has m0 = 0.
    pub p_asymp: Option<Probability>,
    /// Model-based estimate from covariance estimation plus integration.
    pub p_hat: Probability,
    /// Integration standard error behind `p_hat`.
    pub p_hat_std_error: f64,
    /// Direct Monte Carlo estimate.
    pub p_tilde: Probability,
    /// Replicates behind `p_tilde`.
    pub p_tilde_b: usize,
    /// Observed scan maximum the p-values refer to.
    pub q_stat: f64,
    /// Most likely change-point index.
    pub khat: usize,
    /// Free-form diagnostics, one line per entry.
    pub method_details: Vec<String>,
}

/// Stream labels separating the independent randomness consumers.
pub(crate) mod streams {
    pub const SIGMA: u64 = 1;
    pub const MVN: u64 = 2;
    pub const MC: u64 = 3;
    pub const CA: u64 = 4;
}

/// Runs the scan and fills in all three p-values.
pub fn full_report(
    y: &FeatureMatrix,
    w: ScanWindow,
    cov_mode: CovMode,
    budgets: &Budgets,
    seed: SeedSpec,
) -> Result<PValueReport> {
    let r = scan(y, w)?;
    let mut details = Vec::new();

    let cov = match cov_mode {
        CovMode::Empirical => {
            let c =
                sigma_empirical(y.q(), y.n(), w, budgets.sigma_b, seed.derive(&[streams::SIGMA]))?;
            details.push(format!("covariance: empirical, B={}", budgets.sigma_b));
            c
        }
        CovMode::FirstOrder => {
            details.push("covariance: first-order offset ratios".into());
            sigma_first_order(y.n(), w)?
        }
    };

    let (p_hat, p_hat_std_error) = if cov.dim() == 1 {
        (Probability::clamped(chisq_sf_raw(r.q_stat, y.q())), 0.0)
    } else {
        let a_crit = chisq_to_std_normal(r.q_stat, y.q());
        let orthant = mvn_orthant(&cov, a_crit, budgets.mvn_tol, seed.derive(&[streams::MVN]))?;
        if !orthant.tol_met {
            details.push(format!(
                "integration tolerance not met: std_error={:.2e}",
                orthant.std_error
            ));
        }
        (Probability::clamped(1.0 - orthant.value.value()), orthant.std_error)
    };

    let p_tilde = mc_pvalue(r.q_stat, y.q(), y.n(), w, budgets.mc_b, seed.derive(&[streams::MC]))?;

    let p_asymp = if w.m0 >= 1 {
        Some(asymp_pvalue(r.q_stat, y.q(), w.m0, w.m1)?)
    } else {
        details.push("asymptotic p-value unavailable: window has m0 = 0".into());
        None
    };

    Ok(PValueReport {
        p_asymp,
        p_hat,
        p_hat_std_error,
        p_tilde,
        p_tilde_b: budgets.mc_b,
        q_stat: r.q_stat,
        khat: r.khat,
        method_details: details,
    })
}
