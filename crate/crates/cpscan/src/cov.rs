//! Correlation models for the transformed scan vector: the analytic
//! first-order approximation and the simulation-based empirical estimate.

use rayon::prelude::*;

use crate::matrix::SquareMat;
use crate::scan::{scan, ScanWindow};
use crate::sim::{gen_null, SeedSpec};
use crate::{Error, Result};

/// How a covariance model was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    /// Sample correlation of B simulated null scan vectors.
    Empirical { b: usize, seed: SeedSpec },
    /// The analytic offset-ratio approximation.
    FirstOrder,
    /// Loaded from a CSV file without embedded provenance metadata.
    Imported,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Empirical { b, seed } => write!(
                f,
                "empirical B={b} master={} stream={}",
                seed.master_seed, seed.stream_id
            ),
            Provenance::FirstOrder => write!(f, "first_order"),
            Provenance::Imported => write!(f, "imported"),
        }
    }
}

/// Correlation matrix of the transformed scan vector, sized m* x m* with
/// rows/columns ordered by ascending offset (the scan ordering contract).
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    sigma: SquareMat,
    pub provenance: Provenance,
    pub window: ScanWindow,
    pub n: usize,
    /// Feature count used for an empirical estimate; 0 for models that do
    /// not depend on q (the first-order entries are offset ratios only).
    pub q: usize,
}

/// Eigenvalue floor enforced by the repair step.
pub const EIGEN_FLOOR: f64 = 1e-10;

impl CovarianceModel {
    fn checked(
        mut sigma: SquareMat,
        provenance: Provenance,
        window: ScanWindow,
        n: usize,
        q: usize,
    ) -> Result<Self> {
        let m = sigma.dim;
        if m != window.m_star() {
            return Err(Error::InvalidInput(format!(
                "covariance dimension {m} does not match window m*={}",
                window.m_star()
            )));
        }
        if !sigma.is_symmetric(1e-9) {
            return Err(Error::InvalidInput("covariance must be symmetric".into()));
        }
        for i in 0..m {
            if (sigma.get(i, i) - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "correlation matrix needs a unit diagonal, got {} at {i}",
                    sigma.get(i, i)
                )));
            }
            for j in 0..m {
                if sigma.get(i, j).abs() > 1.0 + 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "correlation entry out of [-1, 1] at ({i},{j}): {}",
                        sigma.get(i, j)
                    )));
                }
            }
        }
        // Exact symmetry and unit diagonal, then an eigenvalue floor so the
        // integrator always receives a usable matrix.
        for i in 0..m {
            sigma.set(i, i, 1.0);
            for j in (i + 1)..m {
                let v = 0.5 * (sigma.get(i, j) + sigma.get(j, i));
                sigma.set(i, j, v);
                sigma.set(j, i, v);
            }
        }
        let (vals, vecs) = sigma.jacobi_eigen();
        if vals.iter().any(|&v| v < EIGEN_FLOOR) {
            // Clip with headroom: the unit-diagonal rescale below can shrink
            // the smallest eigenvalue slightly.
            let clipped: Vec<f64> = vals.iter().map(|&v| v.max(2.0 * EIGEN_FLOOR)).collect();
            let mut repaired = SquareMat::zeros(m);
            for i in 0..m {
                for j in 0..m {
                    let mut s = 0.0;
                    for k in 0..m {
                        s += vecs.get(i, k) * clipped[k] * vecs.get(j, k);
                    }
                    repaired.set(i, j, s);
                }
            }
            let scale: Vec<f64> = (0..m).map(|i| repaired.get(i, i).sqrt()).collect();
            for i in 0..m {
                for j in 0..m {
                    let v = repaired.get(i, j) / (scale[i] * scale[j]);
                    repaired.set(i, j, if i == j { 1.0 } else { v });
                }
            }
            sigma = repaired;
        }
        Ok(CovarianceModel { sigma, provenance, window, n, q })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.sigma.dim
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.sigma.get(i, j)
    }

    pub(crate) fn mat(&self) -> &SquareMat {
        &self.sigma
    }

    /// Eigenvalues of the stored matrix (diagnostic).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let (mut vals, _) = self.sigma.jacobi_eigen();
        vals.sort_by(f64::total_cmp);
        vals
    }

    /// Serializes as CSV: a metadata comment, a header row of offsets, then
    /// the matrix rows with round-trippable float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# cpscan-covariance n={} q={} m0={} m1={} provenance={}\n",
            self.n, self.q, self.window.m0, self.window.m1, self.provenance
        ));
        let offsets: Vec<String> = self.window.offsets().map(|d| format!("offset_{d}")).collect();
        out.push_str(&offsets.join(","));
        out.push('\n');
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim()).map(|j| format!("{}", self.entry(i, j))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses the CSV form written by [`CovarianceModel::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().peekable();
        let mut meta: Option<(usize, usize, usize, usize, Provenance)> = None;
        if let Some(first) = lines.peek() {
            if let Some(rest) = first.strip_prefix("# cpscan-covariance ") {
                let mut n = None;
                let mut q = None;
                let mut m0 = None;
                let mut m1 = None;
                let mut prov = Provenance::Imported;
                let mut b_val = None;
                let mut master = None;
                let mut stream = None;
                let mut first_order = false;
                for tok in rest.split_whitespace() {
                    if let Some((key, val)) = tok.split_once('=') {
                        match key {
                            "n" => n = val.parse().ok(),
                            "q" => q = val.parse().ok(),
                            "m0" => m0 = val.parse().ok(),
                            "m1" => m1 = val.parse().ok(),
                            "provenance" => first_order = val == "first_order",
                            "B" => b_val = val.parse().ok(),
                            "master" => master = val.parse().ok(),
                            "stream" => stream = val.parse().ok(),
                            _ => {}
                        }
                    }
                }
                if let (Some(b), Some(ms), Some(st)) = (b_val, master, stream) {
                    prov = Provenance::Empirical { b, seed: SeedSpec::new(ms, st) };
                } else if first_order {
                    prov = Provenance::FirstOrder;
                }
                if let (Some(n), Some(q), Some(m0), Some(m1)) = (n, q, m0, m1) {
                    meta = Some((n, q, m0, m1, prov));
                }
                lines.next();
            }
        }
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("covariance CSV missing header".into()))?;
        let offsets: Vec<usize> = header
            .split(',')
            .map(|c| {
                c.trim()
                    .strip_prefix("offset_")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::InvalidInput(format!("bad covariance header cell: {c}")))
            })
            .collect::<Result<_>>()?;
        let m = offsets.len();
        if m == 0 {
            return Err(Error::InvalidInput("covariance CSV has no offsets".into()));
        }
        for w in offsets.windows(2) {
            if w[1] != w[0] + 1 {
                return Err(Error::InvalidInput("covariance offsets must be consecutive".into()));
            }
        }
        let mut data = Vec::with_capacity(m * m);
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != m {
                return Err(Error::InvalidInput(format!(
                    "covariance row {} has {} cells, expected {m}",
                    i + 1,
                    cells.len()
                )));
            }
            for c in cells {
                let v: f64 = c.trim().parse().map_err(|_| {
                    Error::InvalidInput(format!("bad covariance value: {c}"))
                })?;
                data.push(v);
            }
        }
        if data.len() != m * m {
            return Err(Error::InvalidInput(format!(
                "covariance CSV has {} rows of data, expected {m}",
                data.len() / m
            )));
        }
        let fallback_m0 = if offsets[0] == 1 { 0 } else { offsets[0] };
        let (n, q, m0, m1, prov) =
            meta.unwrap_or((0, 0, fallback_m0, offsets[m - 1], Provenance::Imported));
        let window = ScanWindow::new(m0, m1.max(m0 + 1))?;
        if window.m_star() != m {
            return Err(Error::InvalidInput(format!(
                "covariance metadata window ({m0},{m1}) does not match {m} offsets"
            )));
        }
        let n = if n == 0 { m1 + 2 } else { n };
        CovarianceModel::checked(SquareMat::from_rows(m, data), prov, window, n, q)
    }
}

/// First-order analytic correlation: for change indices `j1 < j2` the entry
/// is `(n - j2) / (n - j1)`, i.e. the ratio of the smaller offset to the
/// larger. Depends only on the offsets, not on q.
pub fn sigma_first_order(n: usize, w: ScanWindow) -> Result<CovarianceModel> {
    w.validate_for(n)?;
    let offsets: Vec<usize> = w.offsets().collect();
    let m = offsets.len();
    let mut sigma = SquareMat::zeros(m);
    for i in 0..m {
        for j in 0..m {
            let (lo, hi) = if offsets[i] <= offsets[j] {
                (offsets[i], offsets[j])
            } else {
                (offsets[j], offsets[i])
            };
            sigma.set(i, j, lo as f64 / hi as f64);
        }
    }
    CovarianceModel::checked(sigma, Provenance::FirstOrder, w, n, 0)
}

/// Sample correlation of the transformed scan vector over B simulated null
/// replicates. Replicate b draws from sub-stream b of `seed`, so the result
/// does not depend on thread count.
pub fn sigma_empirical(
    q: usize,
    n: usize,
    w: ScanWindow,
    b: usize,
    seed: SeedSpec,
) -> Result<CovarianceModel> {
    w.validate_for(n)?;
    let m = w.m_star();
    if b < m + 1 {
        return Err(Error::Domain(format!(
            "empirical covariance needs B >= m*+1 = {}, got {b}",
            m + 1
        )));
    }
    let mut sum = vec![0.0; m];
    let mut cross = vec![0.0; m * m];
    const CHUNK: usize = 4096;
    let mut start = 0usize;
    let mut buf: Vec<Vec<f64>> = Vec::new();
    while start < b {
        let count = CHUNK.min(b - start);
        (start..start + count)
            .into_par_iter()
            .map(|rep| {
                let y = gen_null(q, n, seed.derive(&[rep as u64]))
                    .expect("validated dimensions");
                scan(&y, w).expect("validated window").z_star
            })
            .collect_into_vec(&mut buf);
        // Sequential, index-ordered reduction keeps the result independent
        // of the rayon thread count.
        for v in &buf {
            for i in 0..m {
                sum[i] += v[i];
                for j in i..m {
                    cross[i * m + j] += v[i] * v[j];
                }
            }
        }
        start += count;
    }
    let bf = b as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / bf).collect();
    let mut cov = SquareMat::zeros(m);
    for i in 0..m {
        for j in i..m {
            let c = (cross[i * m + j] - bf * mean[i] * mean[j]) / (bf - 1.0);
            cov.set(i, j, c);
            cov.set(j, i, c);
        }
    }
    let sd: Vec<f64> = (0..m).map(|i| cov.get(i, i).sqrt()).collect();
    let mut corr = SquareMat::zeros(m);
    for i in 0..m {
        for j in 0..m {
            let v = if i == j { 1.0 } else { cov.get(i, j) / (sd[i] * sd[j]) };
            corr.set(i, j, v.clamp(-1.0, 1.0));
        }
    }
    CovarianceModel::checked(corr, Provenance::Empirical { b, seed }, w, n, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_order_entries() {
        // n=100, change indices 95 and 99 sit at offsets 5 and 1: entry 1/5.
        let w = ScanWindow::new(0, 6).unwrap();
        let c = sigma_first_order(100, w).unwrap();
        // Ascending offsets: index 0 is offset 1 (k=99), index 4 is offset 5 (k=95).
        assert!((c.entry(0, 4) - 0.2).abs() < 1e-15);
        for i in 0..c.dim() {
            assert_eq!(c.entry(i, i), 1.0);
        }
    }

    #[test]
    fn first_order_product_structure() {
        // entry(94,97) * entry(97,99) = (3/6)*(1/3) = 1/6 = entry(94,99).
        let w = ScanWindow::new(0, 6).unwrap();
        let c = sigma_first_order(100, w).unwrap();
        let idx = |k: usize| 100 - k - 1; // offset d = n-k, index d-1
        let a = c.entry(idx(94), idx(97));
        let b = c.entry(idx(97), idx(99));
        let direct = c.entry(idx(94), idx(99));
        assert!((a * b - direct).abs() < 1e-15);
        assert!((direct - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn first_order_entries_open_unit_interval() {
        let w = ScanWindow::new(3, 11).unwrap();
        let c = sigma_first_order(50, w).unwrap();
        for i in 0..c.dim() {
            for j in 0..c.dim() {
                if i != j {
                    let v = c.entry(i, j);
                    assert!(v > 0.0 && v < 1.0, "({i},{j}) = {v}");
                }
            }
        }
    }

    #[test]
    fn empirical_is_deterministic() {
        let w = ScanWindow::new(0, 4).unwrap();
        let s = SeedSpec::new(21, 0);
        let a = sigma_empirical(3, 20, w, 200, s).unwrap();
        let b = sigma_empirical(3, 20, w, 200, s).unwrap();
        for i in 0..a.dim() {
            for j in 0..a.dim() {
                assert_eq!(a.entry(i, j), b.entry(i, j));
            }
        }
    }

    #[test]
    fn empirical_unit_diagonal_and_symmetry() {
        let w = ScanWindow::new(0, 5).unwrap();
        let c = sigma_empirical(4, 30, w, 300, SeedSpec::new(5, 9)).unwrap();
        for i in 0..c.dim() {
            assert_eq!(c.entry(i, i), 1.0);
            for j in 0..c.dim() {
                assert_eq!(c.entry(i, j), c.entry(j, i));
            }
        }
    }

    #[test]
    fn empirical_rejects_tiny_b() {
        let w = ScanWindow::new(0, 6).unwrap();
        assert!(sigma_empirical(2, 20, w, 6, SeedSpec::new(1, 1)).is_err());
    }

    #[test]
    fn repair_floors_eigenvalues() {
        // A nearly duplicated coordinate drives an eigenvalue to ~0; the
        // repaired model must satisfy the floor.
        let m = SquareMat::from_rows(
            3,
            vec![1.0, 1.0, 0.5, 1.0, 1.0, 0.5, 0.5, 0.5, 1.0],
        );
        let w = ScanWindow::new(0, 3).unwrap();
        let c = CovarianceModel::checked(m, Provenance::Imported, w, 10, 2).unwrap();
        let eigs = c.eigenvalues();
        assert!(eigs[0] >= EIGEN_FLOOR, "eigenvalues {eigs:?}");
        assert_eq!(c.entry(0, 0), 1.0);
    }

    #[test]
    fn csv_roundtrip_bit_exact() {
        let w = ScanWindow::new(0, 5).unwrap();
        let c = sigma_empirical(3, 25, w, 120, SeedSpec::new(77, 2)).unwrap();
        let text = c.to_csv();
        let back = CovarianceModel::from_csv(&text).unwrap();
        assert_eq!(back.dim(), c.dim());
        assert_eq!(back.n, c.n);
        assert_eq!(back.q, c.q);
        assert_eq!(back.provenance, c.provenance);
        for i in 0..c.dim() {
            for j in 0..c.dim() {
                assert_eq!(back.entry(i, j), c.entry(i, j), "({i},{j})");
            }
        }
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let text = "offset_1,offset_2\n1.0,0.5\n0.5\n";
        assert!(CovarianceModel::from_csv(text).is_err());
    }
}
