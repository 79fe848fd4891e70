//! Orthant probabilities for a centered multivariate normal with a common
//! upper limit, and the p-value / critical-value wrappers built on them.
//!
//! The integral is transformed to the unit cube by a separation-of-variables
//! substitution through a Cholesky factorization with variable reordering
//! (most restrictive coordinate first), then integrated by a randomly shifted
//! rank-1 lattice with a baker transform. The spread across randomizations
//! gives the Monte Carlo standard error; the point budget doubles until the
//! requested tolerance is met or the cap is reached.

use rayon::prelude::*;

use crate::cov::CovarianceModel;
use crate::matrix::SquareMat;
use crate::sim::{uniform_open, SeedSpec};
use crate::specfun::{
    chisq_sf_raw, chisq_to_std_normal, norm_cdf_raw, norm_pdf, norm_quantile_raw, Probability,
};
use crate::{Error, Result};

/// Largest integration dimension accepted.
pub const MAX_DIM: usize = 64;

/// Randomizations per stage; their spread yields the error estimate.
const RANDOMIZATIONS: usize = 12;

/// Point budgets per randomization, doubled until `tol` is met.
const STAGES: [usize; 5] = [1 << 10, 1 << 12, 1 << 14, 1 << 16, 1 << 17];

/// Result of one orthant-probability integration.
#[derive(Debug, Clone, Copy)]
pub struct OrthantResult {
    /// Estimated Pr(max component < a_crit).
    pub value: Probability,
    /// Standard error over the lattice randomizations.
    pub std_error: f64,
    /// Points behind the reported estimate.
    pub points_used: usize,
    /// False when the point cap was hit with `std_error` still above `tol`.
    pub tol_met: bool,
}

impl OrthantResult {
    fn exact(value: f64) -> Self {
        OrthantResult {
            value: Probability::clamped(value),
            std_error: 0.0,
            points_used: 0,
            tol_met: true,
        }
    }
}

/// Fractional parts of sqrt(prime): the lattice generating vector.
fn generating_vector(dim: usize) -> Vec<f64> {
    let mut gs = Vec::with_capacity(dim);
    let mut candidate = 2u64;
    while gs.len() < dim {
        let is_prime = (2..=((candidate as f64).sqrt() as u64 + 1))
            .all(|d| d >= candidate || candidate % d != 0);
        if is_prime {
            let r = (candidate as f64).sqrt();
            gs.push(r - r.floor());
            candidate += 1;
        } else {
            candidate += 1;
        }
    }
    gs
}

/// Cholesky factor of `sigma` with coordinates reordered so the most
/// restrictive variable is integrated first. Works for the common-limit case
/// with lower limits at -infinity.
fn reordered_cholesky(sigma: &SquareMat, a: f64) -> Result<SquareMat> {
    let m = sigma.dim;
    let mut c = sigma.clone();
    let mut l = SquareMat::zeros(m);
    let mut y = vec![0.0; m];
    for i in 0..m {
        // Pick the remaining coordinate with the smallest conditional
        // probability given the expected values of those already placed.
        let mut best = i;
        let mut best_p = f64::INFINITY;
        for j in i..m {
            let mut num = a;
            let mut ssq = c.get(j, j);
            for lcol in 0..i {
                num -= l.get(j, lcol) * y[lcol];
                ssq -= l.get(j, lcol) * l.get(j, lcol);
            }
            let p = if ssq > 1e-14 {
                norm_cdf_raw(num / ssq.sqrt())
            } else if num >= 0.0 {
                1.0
            } else {
                0.0
            };
            if p < best_p {
                best_p = p;
                best = j;
            }
        }
        if best != i {
            for k in 0..m {
                let t = c.get(i, k);
                c.set(i, k, c.get(best, k));
                c.set(best, k, t);
            }
            for k in 0..m {
                let t = c.get(k, i);
                c.set(k, i, c.get(k, best));
                c.set(k, best, t);
            }
            for k in 0..i {
                let t = l.get(i, k);
                l.set(i, k, l.get(best, k));
                l.set(best, k, t);
            }
        }
        let mut piv = c.get(i, i);
        for k in 0..i {
            piv -= l.get(i, k) * l.get(i, k);
        }
        if piv < -1e-8 {
            return Err(Error::Domain(format!(
                "covariance is not positive semidefinite (pivot {piv:.3e})"
            )));
        }
        let lii = piv.max(1e-20).sqrt();
        l.set(i, i, lii);
        for r in (i + 1)..m {
            let mut s = c.get(r, i);
            for k in 0..i {
                s -= l.get(r, k) * l.get(i, k);
            }
            l.set(r, i, s / lii);
        }
        let mut num = a;
        for k in 0..i {
            num -= l.get(i, k) * y[k];
        }
        let at = num / lii;
        let e = norm_cdf_raw(at);
        y[i] = if e > 1e-300 { -norm_pdf(at) / e } else { at };
    }
    Ok(l)
}

/// Integrand over the unit cube after the separation-of-variables transform.
#[inline]
fn orthant_integrand(l: &SquareMat, a: f64, e1: f64, u: &[f64], ys: &mut [f64]) -> f64 {
    let m = l.dim;
    let mut f = e1;
    let mut e_prev = e1;
    for i in 1..m {
        let p = (u[i - 1] * e_prev).clamp(1e-300, 1.0 - 1e-16);
        ys[i - 1] = norm_quantile_raw(p);
        let mut num = a;
        for k in 0..i {
            num -= l.get(i, k) * ys[k];
        }
        let e = norm_cdf_raw(num / l.get(i, i));
        f *= e;
        e_prev = e;
    }
    f
}

/// Estimates Pr(all m components of N(0, cov) are < a_crit).
pub fn mvn_orthant(
    cov: &CovarianceModel,
    a_crit: f64,
    tol: f64,
    seed: SeedSpec,
) -> Result<OrthantResult> {
    if !(tol > 0.0 && tol <= 0.01) {
        return Err(Error::Domain(format!("tol must be in (0, 0.01], got {tol}")));
    }
    if cov.dim() > MAX_DIM {
        return Err(Error::Domain(format!(
            "integration dimension {} exceeds the {MAX_DIM} cap",
            cov.dim()
        )));
    }
    if a_crit == f64::INFINITY {
        return Ok(OrthantResult::exact(1.0));
    }
    if a_crit == f64::NEG_INFINITY {
        return Ok(OrthantResult::exact(0.0));
    }
    if a_crit.is_nan() {
        return Err(Error::Domain("a_crit is NaN".into()));
    }

    // Collapse duplicated coordinates: with a common upper limit the event
    // only depends on one representative of each duplicated set. The
    // threshold absorbs the perturbation the eigenvalue repair introduces on
    // exactly singular inputs.
    let m0 = cov.dim();
    let mut keep: Vec<usize> = Vec::with_capacity(m0);
    for j in 0..m0 {
        if !keep.iter().any(|&i| cov.entry(i, j) >= 1.0 - 1e-9) {
            keep.push(j);
        }
    }
    let m = keep.len();
    if m == 1 {
        return Ok(OrthantResult::exact(norm_cdf_raw(a_crit)));
    }
    let mut sigma = SquareMat::zeros(m);
    for (ri, &i) in keep.iter().enumerate() {
        for (rj, &j) in keep.iter().enumerate() {
            sigma.set(ri, rj, cov.entry(i, j));
        }
    }

    let l = reordered_cholesky(&sigma, a_crit)?;
    let e1 = norm_cdf_raw(a_crit / l.get(0, 0));
    if e1 <= 0.0 {
        return Ok(OrthantResult::exact(0.0));
    }

    let dim = m - 1;
    let gv = generating_vector(dim);
    let mut rng = seed.rng();

    let mut best: Option<OrthantResult> = None;
    for &n_points in STAGES.iter() {
        // Shifts are drawn up front in a fixed order so the parallel section
        // stays deterministic.
        let shifts: Vec<Vec<f64>> = (0..RANDOMIZATIONS)
            .map(|_| (0..dim).map(|_| uniform_open(&mut rng)).collect())
            .collect();
        let means: Vec<f64> = shifts
            .par_iter()
            .map(|shift| {
                let mut u = vec![0.0; dim];
                let mut ys = vec![0.0; m];
                let mut acc = 0.0;
                for k in 1..=n_points {
                    let kf = k as f64;
                    for j in 0..dim {
                        let t = kf * gv[j] + shift[j];
                        let fr = t - t.floor();
                        u[j] = (2.0 * fr - 1.0).abs();
                    }
                    acc += orthant_integrand(&l, a_crit, e1, &u, &mut ys);
                }
                acc / n_points as f64
            })
            .collect();
        let mean = means.iter().sum::<f64>() / RANDOMIZATIONS as f64;
        let var = means.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (RANDOMIZATIONS as f64 - 1.0);
        let se = (var / RANDOMIZATIONS as f64).sqrt();
        let result = OrthantResult {
            value: Probability::clamped(mean),
            std_error: se,
            points_used: n_points * RANDOMIZATIONS,
            tol_met: se <= tol,
        };
        best = Some(result);
        if se <= tol {
            break;
        }
    }
    Ok(best.expect("at least one stage runs"))
}

/// Tail probability Pr(Q >= b^2) under the multivariate normal model of the
/// transformed scan vector: the threshold is mapped to the normal scale and
/// the complement of the orthant probability is returned. The one-coordinate
/// case bypasses integration and is exact.
pub fn pvalue_from_sigma(
    cov: &CovarianceModel,
    b_sq: f64,
    q: usize,
    tol: f64,
    seed: SeedSpec,
) -> Result<Probability> {
    if b_sq < 0.0 || b_sq.is_nan() {
        return Err(Error::Domain(format!("b_sq must be >= 0, got {b_sq}")));
    }
    if q < 1 {
        return Err(Error::Domain("q must be >= 1".into()));
    }
    if cov.dim() == 1 {
        return Ok(Probability::clamped(chisq_sf_raw(b_sq, q)));
    }
    let a_crit = chisq_to_std_normal(b_sq, q);
    let orthant = mvn_orthant(cov, a_crit, tol, seed)?;
    Ok(Probability::clamped(1.0 - orthant.value.value()))
}

/// Threshold `b_sq` whose model p-value equals `alpha`, found by bracketed
/// bisection on the (seed-fixed, hence deterministic) p-value curve.
pub fn critical_value(
    cov: &CovarianceModel,
    alpha: Probability,
    q: usize,
    tol: f64,
    seed: SeedSpec,
) -> Result<f64> {
    let alpha = alpha.value();
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "critical_value needs 0 < alpha < 1, got {alpha}"
        )));
    }
    let p_of = |b_sq: f64| pvalue_from_sigma(cov, b_sq, q, tol, seed).map(|p| p.value());

    let mut lo = 0.0;
    let mut p_lo = 1.0;
    let mut hi = q as f64 + 10.0;
    let mut p_hi = p_of(hi)?;
    let mut expansions = 0;
    while p_hi >= alpha {
        lo = hi;
        p_lo = p_hi;
        hi *= 1.6;
        p_hi = p_of(hi)?;
        expansions += 1;
        if expansions > 60 {
            return Err(Error::Bracket { lo, hi, p_lo, p_hi });
        }
    }

    let exact = cov.dim() == 1;
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let p_mid = p_of(mid)?;
        let p_close = (p_mid - alpha).abs() <= 2.0 * tol;
        // The exact one-coordinate curve costs nothing to evaluate, so also
        // tighten the abscissa itself.
        let x_close = (hi - lo) <= 1e-10 * mid.max(1.0);
        if (p_close && !exact) || (exact && p_close && x_close) || (hi - lo) < 1e-12 {
            return Ok(mid);
        }
        if p_mid > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}
