//! The likelihood-ratio scan: per-feature statistic, pooled statistic, scan
//! maximum, and the normalizing transform onto the standard normal scale.

use crate::sim::FeatureMatrix;
use crate::specfun::chisq_to_std_normal;
use crate::{Error, Result};

/// Candidate change-point offsets, counted back from the end of the series.
///
/// The scan evaluates offsets `d = n - k` for `d` in `[max(m0, 1), m1]`.
/// Offset 0 (a change after the final observation) leaves an empty
/// post-change segment and an undefined statistic, so `m0 = 0` is accepted
/// but rounds up to an effective minimum offset of 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanWindow {
    pub m0: usize,
    pub m1: usize,
}

impl ScanWindow {
    pub fn new(m0: usize, m1: usize) -> Result<Self> {
        if m0 >= m1 {
            return Err(Error::Domain(format!(
                "scan window needs m0 < m1, got ({m0}, {m1})"
            )));
        }
        Ok(ScanWindow { m0, m1 })
    }

    /// Smallest offset actually scanned.
    #[inline]
    pub fn d_min(&self) -> usize {
        self.m0.max(1)
    }

    /// Number of scan coordinates.
    #[inline]
    pub fn m_star(&self) -> usize {
        self.m1 - self.d_min() + 1
    }

    /// Offsets in ascending order (most recent candidate first).
    pub fn offsets(&self) -> impl Iterator<Item = usize> {
        self.d_min()..=self.m1
    }

    pub fn validate_for(&self, n: usize) -> Result<()> {
        if self.m1 >= n {
            return Err(Error::Domain(format!(
                "scan window m1={} must be < n={n}",
                self.m1
            )));
        }
        Ok(())
    }
}

/// All per-offset statistics from one scan.
///
/// `z[idx]` and `z_star[idx]` correspond to offset `d = d_min + idx`
/// (ascending offsets, so index 0 is the most recent candidate). This
/// ordering is the contract shared with the covariance and integration
/// modules.
#[derive(Debug, Clone)]
pub struct ScanResult {
    /// Pooled statistics over the window, ordered by offset.
    pub z: Vec<f64>,
    /// Normal-scale transforms of `z`.
    pub z_star: Vec<f64>,
    /// Maximum of `z`.
    pub q_stat: f64,
    /// Maximum of `z_star`; equals the transform of `q_stat`.
    pub q_star: f64,
    /// Arg-max change-point index `k`; ties resolve to the largest (most
    /// recent) `k`.
    pub khat: usize,
    /// Number of scan coordinates.
    pub m_star: usize,
    /// Series length the scan ran over.
    pub n: usize,
    /// The window that produced this result.
    pub window: ScanWindow,
}

/// Per-feature likelihood-ratio statistic for a change at time `k`:
/// the centered post-`k` sum over `sqrt(k (n-k) / n)`.
pub fn u_stat(y: &[f64], k: usize) -> Result<f64> {
    let n = y.len();
    if n < 2 {
        return Err(Error::Domain("u_stat needs at least two observations".into()));
    }
    if k < 1 || k > n - 1 {
        return Err(Error::Domain(format!(
            "u_stat change index k={k} outside [1, {}]",
            n - 1
        )));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let tail: f64 = y[k..].iter().map(|v| v - mean).sum();
    let kf = k as f64;
    let df = (n - k) as f64;
    Ok(tail / (kf * df / n as f64).sqrt())
}

/// Pooled statistic at time `k`: the sum over features of `u_stat` squared.
pub fn z_stat(y: &FeatureMatrix, k: usize) -> Result<f64> {
    let mut total = 0.0;
    for row in y.rows() {
        let u = u_stat(row, k)?;
        total += u * u;
    }
    Ok(total)
}

/// Runs the scan over the window and applies the normalizing transform.
pub fn scan(y: &FeatureMatrix, w: ScanWindow) -> Result<ScanResult> {
    let n = y.n();
    let q = y.q();
    w.validate_for(n)?;
    let d_min = w.d_min();
    let m_star = w.m_star();

    let mut z = vec![0.0; m_star];
    for row in y.rows() {
        let mean = row.iter().sum::<f64>() / n as f64;
        let mut tail = 0.0;
        for (dist, &v) in row.iter().rev().enumerate() {
            let d = dist + 1;
            if d > w.m1 {
                break;
            }
            tail += v - mean;
            if d >= d_min {
                let k = (n - d) as f64;
                let u = tail / (k * d as f64 / n as f64).sqrt();
                z[d - d_min] += u * u;
            }
        }
    }

    // Ascending offsets with a strict comparison: the first maximum is the
    // smallest offset, i.e. the largest (most recent) k.
    let mut best = 0usize;
    for idx in 1..m_star {
        if z[idx] > z[best] {
            best = idx;
        }
    }
    let z_star: Vec<f64> = z.iter().map(|&v| chisq_to_std_normal(v, q)).collect();

    Ok(ScanResult {
        q_stat: z[best],
        q_star: z_star[best],
        khat: n - (d_min + best),
        z,
        z_star,
        m_star,
        n,
        window: w,
    })
}

/// The normalizing transform `Phi^{-1}(F_q(z))` applied to one statistic.
pub fn z_star_transform(z: f64, q: usize) -> f64 {
    chisq_to_std_normal(z, q)
}
