//! Seedable generation of data from the mean change-point model.
//!
//! Observations follow `Y[i][j] = mu_i + delta_i * I{j > k} + eps[i][j]` with
//! i.i.d. standard normal errors. Generation is a pure function of the seed:
//! every replicate of every experiment draws from its own
//! `(master_seed, stream_id)` stream, so results are identical no matter how
//! work is split across threads.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::specfun::norm_quantile_raw;
use crate::{Error, Result};

/// Identifies one independent random stream.
///
/// Distinct `(master_seed, stream_id)` pairs yield statistically independent
/// streams; the same pair always reproduces the same draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

/// SplitMix64 finalizer, used to mix sub-stream labels into a stream id.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        SeedSpec { master_seed, stream_id }
    }

    /// Derives a sub-stream by folding the given labels into the stream id.
    /// Used by the experiment harnesses to give each (purpose, cell,
    /// replicate) tuple its own stream.
    pub fn derive(&self, labels: &[u64]) -> SeedSpec {
        let mut id = mix(self.stream_id ^ 0xa076_1d64_78bd_642f);
        for &l in labels {
            id = mix(id ^ l.wrapping_mul(0xe703_7ed1_a0b4_28db));
        }
        SeedSpec { master_seed: self.master_seed, stream_id: id }
    }

    /// The ChaCha stream for this seed.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// A uniform draw strictly inside (0, 1) on the 2^-53 lattice.
#[inline]
pub(crate) fn uniform_open(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// Standard normal draw by inversion. Inversion (rather than rejection or
/// ziggurat) keeps every consumer of a stream aligned on the same draws.
#[inline]
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    norm_quantile_raw(uniform_open(rng))
}

/// A q x n matrix of daily features: row i is feature i, column j is day j.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    q: usize,
    n: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    /// Builds from row-major values; `values.len()` must equal `q * n`.
    pub fn from_values(q: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        if q < 1 || n < 2 {
            return Err(Error::InvalidInput(format!(
                "feature matrix needs q >= 1 and n >= 2, got q={q}, n={n}"
            )));
        }
        if values.len() != q * n {
            return Err(Error::InvalidInput(format!(
                "expected {} values for a {q}x{n} matrix, got {}",
                q * n,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("matrix entries must be finite".into()));
        }
        Ok(FeatureMatrix { q, n, values })
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Feature row `i` as a slice of length `n`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n)
    }
}

/// The alternative hypothesis: a mean shift of `deltas[i]` in feature i for
/// every day strictly after `k`.
#[derive(Debug, Clone)]
pub struct AlternativeSpec {
    /// Change-point index, in `[1, n-1]`.
    pub k: usize,
    /// Per-feature shift, length q.
    pub deltas: Vec<f64>,
    /// Per-feature baseline mean, length q. Zero by default; the scan is
    /// location-invariant so this never affects the statistics.
    pub mus: Vec<f64>,
}

impl AlternativeSpec {
    pub fn new(k: usize, deltas: Vec<f64>) -> Self {
        let mus = vec![0.0; deltas.len()];
        AlternativeSpec { k, deltas, mus }
    }

    fn validate(&self, q: usize, n: usize) -> Result<()> {
        if self.k < 1 || self.k > n - 1 {
            return Err(Error::Domain(format!(
                "change point k={} outside [1, {}]",
                self.k,
                n - 1
            )));
        }
        if self.deltas.len() != q || self.mus.len() != q {
            return Err(Error::InvalidInput(format!(
                "alternative has {} deltas / {} mus for q={q}",
                self.deltas.len(),
                self.mus.len()
            )));
        }
        Ok(())
    }
}

/// Generates a null matrix of i.i.d. standard normal entries.
pub fn gen_null(q: usize, n: usize, seed: SeedSpec) -> Result<FeatureMatrix> {
    if q < 1 || n < 2 {
        return Err(Error::Domain(format!(
            "gen_null needs q >= 1 and n >= 2, got q={q}, n={n}"
        )));
    }
    let mut rng = seed.rng();
    let values = (0..q * n).map(|_| standard_normal(&mut rng)).collect();
    Ok(FeatureMatrix { q, n, values })
}

/// Generates from the alternative: the null draw for the same seed plus the
/// deterministic mean surface.
pub fn gen_alt(q: usize, n: usize, alt: &AlternativeSpec, seed: SeedSpec) -> Result<FeatureMatrix> {
    alt.validate(q, n)?;
    let mut m = gen_null(q, n, seed)?;
    for i in 0..q {
        let mu = alt.mus[i];
        let delta = alt.deltas[i];
        let row = m.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            // Day index is 1-based in the model; the shift applies to j > k.
            *v += mu + if j + 1 > alt.k { delta } else { 0.0 };
        }
    }
    Ok(m)
}
