//! Discrete affine Fourier transform (DAFT) and the chirp-periodic prefix.
//!
//! `A = Λ_{c2} F Λ_{c1}` with `Λ_c = diag(exp(-j2π c n²))` and the unitary DFT
//! `F[n, m] = exp(-j2π nm/N) / √N`. Modulation is `s = Aᴴ x`, demodulation is
//! `y = A r`. The dense matrix is the reference; the chirp-FFT-chirp path is
//! checked against it.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

/// Frame length, chirp rates and prefix length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AfdmParams {
    pub n: usize,
    pub c1: f64,
    pub c2: f64,
    pub l_cpp: usize,
}

impl AfdmParams {
    pub fn new(n: usize, c1: f64, c2: f64, l_cpp: usize) -> Result<Self> {
        let p = Self { n, c1, c2, l_cpp };
        p.validate()?;
        Ok(p)
    }

    /// `c1 = (2 ν_max + 1) / (2N)`, `c2 = 0`.
    pub fn with_default_chirp(n: usize, max_doppler: usize, l_cpp: usize) -> Result<Self> {
        Self::new(n, default_c1(n, max_doppler), 0.0, l_cpp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("frame length {} < 2", self.n)));
        }
        if !self.c1.is_finite() || !self.c2.is_finite() {
            return Err(Error::Config("chirp rates must be finite".into()));
        }
        Ok(())
    }

    /// True when `2 N c1` is an integer and `N` is even, i.e. the chirp-periodic
    /// prefix is an ordinary cyclic prefix.
    pub fn prefix_is_cyclic(&self) -> bool {
        let t = 2.0 * self.n as f64 * self.c1;
        self.n.is_multiple_of(2) && (t - t.round()).abs() < 1e-9
    }
}

pub fn default_c1(n: usize, max_doppler: usize) -> f64 {
    (2 * max_doppler + 1) as f64 / (2 * n) as f64
}

/// `exp(-j2π x)` with `x` reduced modulo one first.
pub(crate) fn cis_neg(x: f64) -> C64 {
    let f = x.rem_euclid(1.0);
    C64::from_polar(1.0, -TAU * f)
}

/// Diagonal of `Λ_c`.
pub fn chirp_diagonal(c: f64, n: usize) -> Vec<C64> {
    (0..n).map(|i| cis_neg(c * (i * i) as f64)).collect()
}

/// The DAFT matrix `A`, its adjoint, and an FFT plan for the fast path.
#[derive(Clone)]
pub struct DaftOperator {
    params: AfdmParams,
    a: DMatrix<C64>,
    a_h: DMatrix<C64>,
    chirp1: Vec<C64>,
    chirp2: Vec<C64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for DaftOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DaftOperator")
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

/// Builds the dense DAFT matrix for `params`.
pub fn build_daft(params: &AfdmParams) -> Result<DaftOperator> {
    params.validate()?;
    let n = params.n;
    let chirp1 = chirp_diagonal(params.c1, n);
    let chirp2 = chirp_diagonal(params.c2, n);
    let scale = 1.0 / (n as f64).sqrt();
    let a = DMatrix::from_fn(n, n, |row, col| {
        let dft = cis_neg(((row * col) % n) as f64 / n as f64) * scale;
        chirp2[row] * dft * chirp1[col]
    });
    let a_h = a.adjoint();
    let mut planner = FftPlanner::new();
    Ok(DaftOperator {
        params: *params,
        a,
        a_h,
        chirp1,
        chirp2,
        fwd: planner.plan_fft_forward(n),
        inv: planner.plan_fft_inverse(n),
    })
}

impl DaftOperator {
    pub fn params(&self) -> &AfdmParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.a
    }

    pub fn adjoint(&self) -> &DMatrix<C64> {
        &self.a_h
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.params.n {
            return Err(Error::Dimension {
                expected: self.params.n,
                got: len,
            });
        }
        Ok(())
    }

    /// `A v` via chirp, FFT, chirp.
    pub fn forward_fast(&self, v: &[C64]) -> Result<Vec<C64>> {
        self.check_len(v.len())?;
        let mut buf: Vec<C64> = v.iter().zip(&self.chirp1).map(|(x, c)| x * c).collect();
        self.forward_fast_in_place(&mut buf);
        Ok(buf)
    }

    fn forward_fast_in_place(&self, buf: &mut [C64]) {
        self.fwd.process(buf);
        let scale = 1.0 / (self.params.n as f64).sqrt();
        for (x, c) in buf.iter_mut().zip(&self.chirp2) {
            *x *= c * scale;
        }
    }

    /// `Aᴴ v` via chirp, inverse FFT, chirp.
    pub fn inverse_fast(&self, v: &[C64]) -> Result<Vec<C64>> {
        self.check_len(v.len())?;
        let mut buf: Vec<C64> = v
            .iter()
            .zip(&self.chirp2)
            .map(|(x, c)| x * c.conj())
            .collect();
        self.inv.process(&mut buf);
        let scale = 1.0 / (self.params.n as f64).sqrt();
        for (x, c) in buf.iter_mut().zip(&self.chirp1) {
            *x *= c.conj() * scale;
        }
        Ok(buf)
    }

    /// `A M` for a dense `M`, one fast transform per column.
    pub fn forward_columns(&self, m: &DMatrix<C64>) -> Result<DMatrix<C64>> {
        self.check_len(m.nrows())?;
        let mut out = m.clone();
        for mut col in out.column_iter_mut() {
            let buf = col.as_mut_slice();
            for (x, c) in buf.iter_mut().zip(&self.chirp1) {
                *x *= c;
            }
            self.forward_fast_in_place(buf);
        }
        Ok(out)
    }
}

/// `s = Aᴴ x`.
pub fn modulate(x: &[C64], op: &DaftOperator) -> Result<Vec<C64>> {
    op.check_len(x.len())?;
    let v = &op.a_h * DVector::from_column_slice(x);
    Ok(v.as_slice().to_vec())
}

/// `y = A r`; the prefix must already be removed.
pub fn demodulate(r: &[C64], op: &DaftOperator) -> Result<Vec<C64>> {
    op.check_len(r.len())?;
    let v = &op.a * DVector::from_column_slice(r);
    Ok(v.as_slice().to_vec())
}

/// Phase applied to prefix sample `n` (with `-l_cpp <= n < 0`), which copies
/// `s[N + n]`: `exp(-j2π c1 (N² + 2Nn))`.
///
/// This is the sign that makes the prefixed block the periodic extension of
/// the inverse transform, and the one the prefix-compensation matrix of the
/// channel model assumes.
pub fn cpp_phase(params: &AfdmParams, n: isize) -> C64 {
    let nn = params.n as f64;
    cis_neg(params.c1 * (nn * nn + 2.0 * nn * n as f64))
}

/// Prepends the chirp-periodic prefix.
pub fn append_cpp(s: &[C64], params: &AfdmParams) -> Result<Vec<C64>> {
    let n = params.n;
    if s.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: s.len(),
        });
    }
    if params.l_cpp > n {
        return Err(Error::Config(format!(
            "prefix length {} exceeds frame length {n}",
            params.l_cpp
        )));
    }
    let l = params.l_cpp as isize;
    let mut out = Vec::with_capacity(n + params.l_cpp);
    for m in -l..0 {
        out.push(s[(n as isize + m) as usize] * cpp_phase(params, m));
    }
    out.extend_from_slice(s);
    Ok(out)
}

/// Drops the first `l_cpp` samples.
pub fn strip_cpp(r: &[C64], params: &AfdmParams) -> Result<Vec<C64>> {
    if r.len() != params.n + params.l_cpp {
        return Err(Error::Dimension {
            expected: params.n + params.l_cpp,
            got: r.len(),
        });
    }
    Ok(r[params.l_cpp..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
        (0..n)
            .map(|_| {
                C64::new(
                    StandardNormal.sample(&mut *rng),
                    StandardNormal.sample(&mut *rng),
                )
            })
            .collect()
    }

    fn norm(v: &[C64]) -> f64 {
        v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    fn unitarity_error(op: &DaftOperator) -> f64 {
        let g = op.adjoint() * op.matrix();
        max_abs_diff(&g, &DMatrix::identity(op.n(), op.n()))
    }

    #[test]
    fn two_point_plain_dft() {
        let op = build_daft(&AfdmParams::new(2, 0.0, 0.0, 0).unwrap()).unwrap();
        let s = FRAC_1_SQRT_2;
        let expected = DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(s, 0.0), C64::new(s, 0.0), C64::new(s, 0.0), C64::new(-s, 0.0)],
        );
        assert!(max_abs_diff(op.matrix(), &expected) < 1e-15);
    }

    #[test]
    fn chirped_four_point_matches_scalar_loop() {
        // A = F diag(1, e^{-jπ/4}, e^{-jπ}, e^{-jπ 9/4}) evaluated independently
        let n = 4;
        let op = build_daft(&AfdmParams::new(n, 1.0 / 8.0, 0.0, 0).unwrap()).unwrap();
        let diag = [0.0, PI / 4.0, PI, 9.0 * PI / 4.0];
        for r in 0..n {
            for c in 0..n {
                let f = C64::from_polar(0.5, -2.0 * PI * (r * c) as f64 / n as f64);
                let expected = f * C64::from_polar(1.0, -diag[c]);
                assert!((op.matrix()[(r, c)] - expected).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn unitary_for_random_chirps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 3, 8, 17, 64] {
            for _ in 0..5 {
                let p = AfdmParams::new(n, rng.random::<f64>(), rng.random::<f64>(), 0).unwrap();
                assert!(unitarity_error(&build_daft(&p).unwrap()) < 1e-10);
            }
        }
    }

    #[test]
    fn unitary_at_512() {
        let p = AfdmParams::with_default_chirp(512, 2, 0).unwrap();
        assert!(unitarity_error(&build_daft(&p).unwrap()) < 1e-10);
    }

    #[test]
    fn zero_chirp_modulation_is_inverse_dft() {
        let n = 8;
        let op = build_daft(&AfdmParams::new(n, 0.0, 0.0, 0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_vec(&mut rng, n);
        let s = modulate(&x, &op).unwrap();
        for (k, sk) in s.iter().enumerate() {
            let idft: C64 = x
                .iter()
                .enumerate()
                .map(|(m, xm)| xm * C64::from_polar(1.0, 2.0 * PI * (k * m) as f64 / n as f64))
                .sum::<C64>()
                / (n as f64).sqrt();
            assert!((sk - idft).norm() < 1e-12);
        }
    }

    #[test]
    fn round_trip_and_norm_preservation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [4, 16, 100] {
            let p = AfdmParams::new(n, rng.random(), rng.random(), 0).unwrap();
            let op = build_daft(&p).unwrap();
            let x = rand_vec(&mut rng, n);
            let s = modulate(&x, &op).unwrap();
            assert!((norm(&s) - norm(&x)).abs() < 1e-10);
            let y = demodulate(&s, &op).unwrap();
            let err: Vec<C64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            assert!(norm(&err) / norm(&x) < 1e-10);
        }
    }

    #[test]
    fn demodulate_zero_and_dimension_errors() {
        let op = build_daft(&AfdmParams::new(8, 0.1, 0.2, 0).unwrap()).unwrap();
        let y = demodulate(&vec![C64::new(0.0, 0.0); 8], &op).unwrap();
        assert!(y.iter().all(|v| v.norm() == 0.0));
        assert!(matches!(
            modulate(&[C64::new(1.0, 0.0); 3], &op),
            Err(Error::Dimension { expected: 8, got: 3 })
        ));
        assert!(demodulate(&[C64::new(1.0, 0.0); 9], &op).is_err());
    }

    #[test]
    fn demodulated_noise_stays_white() {
        // sample covariance of A w over 10^4 draws against N0 I
        let n = 4;
        let n0 = 0.5;
        let op = build_daft(&AfdmParams::new(n, 0.3, 0.7, 0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let draws = 10_000;
        let mut cov = DMatrix::<C64>::zeros(n, n);
        for _ in 0..draws {
            let w: Vec<C64> = rand_vec(&mut rng, n)
                .into_iter()
                .map(|v| v * (n0 / 2.0f64).sqrt())
                .collect();
            let y = DVector::from_vec(demodulate(&w, &op).unwrap());
            cov += &y * y.adjoint();
        }
        cov /= C64::new(draws as f64, 0.0);
        // |ŷ_i ŷ_j*| has std n0/√draws for i != j
        let std_err = n0 / (draws as f64).sqrt();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    assert!((cov[(i, i)].re - n0).abs() < 5.0 * std_err);
                } else {
                    assert!(cov[(i, j)].norm() < 5.0 * std_err);
                }
            }
        }
    }

    #[test]
    fn fast_path_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for n in [64, 256] {
            let p = AfdmParams::new(n, rng.random(), rng.random(), 0).unwrap();
            let op = build_daft(&p).unwrap();
            let x = rand_vec(&mut rng, n);
            let dense_fwd = demodulate(&x, &op).unwrap();
            let dense_inv = modulate(&x, &op).unwrap();
            let fast_fwd = op.forward_fast(&x).unwrap();
            let fast_inv = op.inverse_fast(&x).unwrap();
            let rel = |a: &[C64], b: &[C64]| {
                let d: Vec<C64> = a.iter().zip(b).map(|(u, v)| u - v).collect();
                norm(&d) / norm(b)
            };
            assert!(rel(&fast_fwd, &dense_fwd) < 1e-9);
            assert!(rel(&fast_inv, &dense_inv) < 1e-9);

            let m = DMatrix::from_fn(n, 3, |_, _| x[rng.random_range(0..n)]);
            let fast = op.forward_columns(&m).unwrap();
            let dense = op.matrix() * &m;
            assert!(max_abs_diff(&fast, &dense) < 1e-9);
        }
    }

    #[test]
    fn prefix_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = rand_vec(&mut rng, 4);

        let p = AfdmParams::new(4, 0.3, 0.0, 0).unwrap();
        assert_eq!(append_cpp(&s, &p).unwrap(), s);

        // N=4, c1=1/16, one prefix sample: exponent c1 (N² - 2N) = 1/2
        let p = AfdmParams::new(4, 1.0 / 16.0, 0.0, 1).unwrap();
        let out = append_cpp(&s, &p).unwrap();
        assert_eq!(out.len(), 5);
        assert!((out[0] - s[3] * C64::from_polar(1.0, PI)).norm() < 1e-14);
        assert_eq!(&out[1..], &s[..]);
        assert_eq!(strip_cpp(&out, &p).unwrap(), s);

        let p = AfdmParams::new(4, 0.1, 0.0, 5).unwrap();
        assert!(append_cpp(&s, &p).is_err());
    }

    #[test]
    fn prefix_reduces_to_cyclic_when_2nc1_integer() {
        for n in [4usize, 8, 64, 256] {
            for k in 0..7 {
                let p = AfdmParams::new(n, k as f64 / (2 * n) as f64, 0.0, n).unwrap();
                assert!(p.prefix_is_cyclic());
                for m in -(n as isize)..0 {
                    assert!((cpp_phase(&p, m) - C64::new(1.0, 0.0)).norm() < 1e-12);
                }
            }
        }
        assert!(!AfdmParams::new(5, 0.1, 0.0, 0).unwrap().prefix_is_cyclic());
        assert!(!AfdmParams::new(8, 0.01, 0.0, 0).unwrap().prefix_is_cyclic());
    }

    #[test]
    fn prefix_extends_inverse_transform_periodically() {
        // s_n from the IDAFT sum, evaluated at negative n, equals the prefix sample
        let n = 6;
        let p = AfdmParams::new(n, 0.137, 0.29, 4).unwrap();
        let op = build_daft(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = rand_vec(&mut rng, n);
        let s = modulate(&x, &op).unwrap();
        let prefixed = append_cpp(&s, &p).unwrap();
        for (i, m) in (-(p.l_cpp as isize)..0).enumerate() {
            let direct: C64 = x
                .iter()
                .enumerate()
                .map(|(k, xk)| {
                    let ph = p.c1 * (m * m) as f64
                        + p.c2 * (k * k) as f64
                        + (m * k as isize) as f64 / n as f64;
                    xk * C64::from_polar(1.0, TAU * ph)
                })
                .sum::<C64>()
                / (n as f64).sqrt();
            assert!((prefixed[i] - direct).norm() < 1e-10);
        }
    }

    #[test]
    fn params_validation() {
        assert!(AfdmParams::new(1, 0.0, 0.0, 0).is_err());
        assert!(AfdmParams::new(4, f64::NAN, 0.0, 0).is_err());
        assert!((default_c1(64, 2) - 5.0 / 128.0).abs() < 1e-16);
    }
}
