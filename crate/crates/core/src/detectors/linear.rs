use std::time::Instant;

use nalgebra::DMatrix;

use super::{check_inputs, DetectionResult};
use crate::channel::EffectiveChannel;
use crate::constellation::Constellation;
use crate::linalg::{mat_vec, solve_hpd, solve_square};
use crate::{Result, C64};

/// Unquantised zero-forcing estimate `H̄⁻¹ y`.
pub fn zf_estimate(y: &[C64], eff: &EffectiveChannel) -> Result<Vec<C64>> {
    solve_square(eff.dense(), y)
}

/// Unquantised LMMSE estimate `H̄ᴴ (H̄ H̄ᴴ + N0 I)⁻¹ y`.
pub fn lmmse_estimate(y: &[C64], eff: &EffectiveChannel, n0: f64) -> Result<Vec<C64>> {
    check_inputs(y, eff, n0)?;
    let h = eff.dense();
    let n = eff.n();
    let gram = h * h.adjoint() + DMatrix::<C64>::identity(n, n) * C64::new(n0, 0.0);
    let u = solve_hpd(gram, y)?;
    Ok(mat_vec(&h.adjoint(), &u))
}

pub fn zf_detect(y: &[C64], eff: &EffectiveChannel, c: &Constellation) -> Result<DetectionResult> {
    let started = Instant::now();
    let est = zf_estimate(y, eff)?;
    let idx = est.iter().map(|&z| c.nearest_index(z)).collect();
    Ok(DetectionResult::from_indices(idx, c, started))
}

pub fn lmmse_detect(
    y: &[C64],
    eff: &EffectiveChannel,
    n0: f64,
    c: &Constellation,
) -> Result<DetectionResult> {
    let started = Instant::now();
    let est = lmmse_estimate(y, eff, n0)?;
    let idx = est.iter().map(|&z| c.nearest_index(z)).collect();
    Ok(DetectionResult::from_indices(idx, c, started))
}
