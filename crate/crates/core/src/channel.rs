//! Doubly-dispersive channels with integer delays.
//!
//! A realization is a list of paths `(h_i, l_i, ν_i)`. The received sample
//! stream is `r_n = Σ_i h_i exp(j2π ν_i n / N) s_{n - l_i} + w_n`, evaluated on
//! the prefixed block. With the prefix removed this is `r = H s + w` with
//! `H = Σ_p h_p Γ_p Δ_p Π^{l_p}`, and in the DAFT domain `y = H̄ x + w̄` with
//! `H̄ = A H Aᴴ`.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::daft::{cis_neg, AfdmParams, DaftOperator};
use crate::{Error, Result, C64};

/// Relative magnitude below which effective-channel entries are dropped from
/// the sparse column views.
pub const DEFAULT_SPARSITY_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelPath {
    pub gain: C64,
    /// Integer delay in samples.
    pub delay: usize,
    /// Doppler shift normalised so that the path rotates as `exp(j2π ν n / N)`.
    pub doppler: f64,
}

/// Statistics a realization is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub num_paths: usize,
    pub max_delay: usize,
    pub max_doppler: usize,
    /// Per-path average power. Empty means equal power `1/P`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub power_profile: Vec<f64>,
}

impl ChannelProfile {
    pub fn new(num_paths: usize, max_delay: usize, max_doppler: usize) -> Self {
        Self {
            num_paths,
            max_delay,
            max_doppler,
            power_profile: Vec::new(),
        }
    }

    /// Per-path powers, expanding the equal-power default.
    pub fn powers(&self) -> Vec<f64> {
        if self.power_profile.is_empty() {
            vec![1.0 / self.num_paths as f64; self.num_paths]
        } else {
            self.power_profile.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_paths == 0 {
            return Err(Error::Config("num_paths must be at least 1".into()));
        }
        if self.max_delay + 1 < self.num_paths {
            return Err(Error::Config(format!(
                "{} paths need distinct delays but max_delay is {}",
                self.num_paths, self.max_delay
            )));
        }
        if !self.power_profile.is_empty() {
            if self.power_profile.len() != self.num_paths {
                return Err(Error::Config(format!(
                    "power_profile has {} entries for {} paths",
                    self.power_profile.len(),
                    self.num_paths
                )));
            }
            if self.power_profile.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Config("path powers must be non-negative".into()));
            }
            let sum: f64 = self.power_profile.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("path powers sum to {sum}, not 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub paths: Vec<ChannelPath>,
}

impl ChannelRealization {
    /// Single unit path with no delay and no Doppler.
    pub fn identity() -> Self {
        Self {
            paths: vec![ChannelPath {
                gain: C64::new(1.0, 0.0),
                delay: 0,
                doppler: 0.0,
            }],
        }
    }

    pub fn max_delay(&self) -> usize {
        self.paths.iter().map(|p| p.delay).max().unwrap_or(0)
    }

    fn check_prefix(&self, params: &AfdmParams) -> Result<()> {
        let delay = self.max_delay();
        if delay > params.l_cpp {
            return Err(Error::DelayExceedsPrefix {
                delay,
                l_cpp: params.l_cpp,
            });
        }
        Ok(())
    }
}

/// Draws Rayleigh gains, distinct delays (the first pinned at zero) and
/// integer Dopplers.
pub fn sample_realization<R: Rng + ?Sized>(
    profile: &ChannelProfile,
    rng: &mut R,
) -> Result<ChannelRealization> {
    profile.validate()?;
    let p = profile.num_paths;
    let mut delays = vec![0usize];
    if p > 1 {
        let picked = rand::seq::index::sample(rng, profile.max_delay, p - 1);
        delays.extend(picked.into_iter().map(|d| d + 1));
    }
    let nu = profile.max_doppler as i64;
    let paths = profile
        .powers()
        .into_iter()
        .zip(delays)
        .map(|(power, delay)| {
            let sd = (power / 2.0).sqrt();
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let doppler = rng.random_range(-nu..=nu) as f64;
            ChannelPath {
                gain: C64::new(re * sd, im * sd),
                delay,
                doppler,
            }
        })
        .collect();
    Ok(ChannelRealization { paths })
}

/// Prefix-compensation phase `Γ_p[n]`.
fn prefix_compensation(params: &AfdmParams, n: usize, delay: usize) -> C64 {
    if n >= delay {
        C64::new(1.0, 0.0)
    } else {
        let nn = params.n as f64;
        cis_neg(params.c1 * (nn * nn + 2.0 * nn * (n as f64 - delay as f64)))
    }
}

fn doppler_phase(doppler: f64, n: usize, frame: usize) -> C64 {
    let x = (doppler * n as f64 / frame as f64).rem_euclid(1.0);
    C64::from_polar(1.0, TAU * x)
}

/// Time-domain channel matrix `H = Σ_p h_p Γ_p Δ_p Π^{l_p}` acting on the
/// prefix-stripped block.
pub fn build_time_matrix(real: &ChannelRealization, params: &AfdmParams) -> Result<DMatrix<C64>> {
    real.check_prefix(params)?;
    let n = params.n;
    let mut h = DMatrix::<C64>::zeros(n, n);
    for path in &real.paths {
        for row in 0..n {
            let col = (row + n - path.delay % n) % n;
            h[(row, col)] += path.gain
                * prefix_compensation(params, row, path.delay)
                * doppler_phase(path.doppler, row, n);
        }
    }
    Ok(h)
}

/// Sample-level reference: runs the prefixed stream through the multipath
/// sum, adds `CN(0, n0)` noise and discards the prefix.
pub fn apply_channel_time<R: Rng + ?Sized>(
    s_cpp: &[C64],
    real: &ChannelRealization,
    params: &AfdmParams,
    n0: f64,
    rng: &mut R,
) -> Result<Vec<C64>> {
    let n = params.n;
    let l = params.l_cpp;
    if s_cpp.len() != n + l {
        return Err(Error::Dimension {
            expected: n + l,
            got: s_cpp.len(),
        });
    }
    real.check_prefix(params)?;
    let sd = (n0 / 2.0).sqrt();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let mut acc = C64::new(0.0, 0.0);
        for path in &real.paths {
            // stream index of s_{t - l_i}
            let idx = t + l - path.delay;
            acc += path.gain * doppler_phase(path.doppler, t, n) * s_cpp[idx];
        }
        if n0 > 0.0 {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            acc += C64::new(re * sd, im * sd);
        }
        out.push(acc);
    }
    Ok(out)
}

/// Dense effective channel plus per-column sparse views.
#[derive(Debug, Clone)]
pub struct EffectiveChannel {
    dense: DMatrix<C64>,
    columns: Vec<Vec<(usize, C64)>>,
    rows: Vec<Vec<(usize, C64)>>,
    col_norms_sq: Vec<f64>,
    threshold: f64,
}

impl EffectiveChannel {
    /// Wraps an arbitrary square matrix, keeping entries whose magnitude
    /// exceeds `threshold` times the largest magnitude in their column.
    pub fn from_dense(dense: DMatrix<C64>, threshold: f64) -> Result<Self> {
        if dense.nrows() != dense.ncols() {
            return Err(Error::Dimension {
                expected: dense.nrows(),
                got: dense.ncols(),
            });
        }
        let n = dense.ncols();
        let mut columns = Vec::with_capacity(n);
        let mut col_norms_sq = Vec::with_capacity(n);
        let mut rows = vec![Vec::new(); n];
        for (c, col) in dense.column_iter().enumerate() {
            let peak = col.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let cut = threshold * peak;
            let entries: Vec<(usize, C64)> = col
                .iter()
                .enumerate()
                .filter(|(_, v)| peak > 0.0 && v.norm() > cut)
                .map(|(r, v)| (r, *v))
                .collect();
            for &(r, v) in &entries {
                rows[r].push((c, v));
            }
            columns.push(entries);
            col_norms_sq.push(col.iter().map(|v| v.norm_sqr()).sum());
        }
        Ok(Self {
            dense,
            columns,
            rows,
            col_norms_sq,
            threshold,
        })
    }

    pub fn n(&self) -> usize {
        self.dense.ncols()
    }

    pub fn dense(&self) -> &DMatrix<C64> {
        &self.dense
    }

    /// Sparse entries `(row, value)` of column `n`.
    pub fn column(&self, n: usize) -> &[(usize, C64)] {
        &self.columns[n]
    }

    /// Sparse entries `(column, value)` of row `r`.
    pub fn row(&self, r: usize) -> &[(usize, C64)] {
        &self.rows[r]
    }

    pub fn col_norm_sq(&self, n: usize) -> f64 {
        self.col_norms_sq[n]
    }

    pub fn col_norms_sq(&self) -> &[f64] {
        &self.col_norms_sq
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn max_column_support(&self) -> usize {
        self.columns.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Number of stored sparse entries.
    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    /// `H̄ x` using the dense matrix.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        crate::linalg::mat_vec(&self.dense, x)
    }

    /// Multiplies `H̄` and the noise variance by a common scale; `(y, H̄, N0)`
    /// mapped to `(c y, c H̄, |c|² N0)` leaves the posterior unchanged.
    pub fn scaled(&self, c: C64) -> Self {
        Self::from_dense(self.dense.map(|v| v * c), self.threshold)
            .expect("square matrix stays square")
    }
}

/// `H̄ = A H Aᴴ`.
pub fn effective_channel(
    h_time: &DMatrix<C64>,
    op: &DaftOperator,
    threshold: f64,
) -> Result<EffectiveChannel> {
    let n = op.n();
    if h_time.shape() != (n, n) {
        return Err(Error::Dimension {
            expected: n,
            got: h_time.nrows(),
        });
    }
    // H Aᴴ row by row over the nonzeros of H, then A (·) by fast transforms.
    let a_h = op.adjoint();
    let mut m = DMatrix::<C64>::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let v = h_time[(r, c)];
            if v.re == 0.0 && v.im == 0.0 {
                continue;
            }
            for k in 0..n {
                m[(r, k)] += v * a_h[(c, k)];
            }
        }
    }
    let dense = op.forward_columns(&m)?;
    EffectiveChannel::from_dense(dense, threshold)
}
