use std::time::Instant;

use super::{check_inputs, DetectionResult};
use crate::channel::EffectiveChannel;
use crate::constellation::Constellation;
use crate::{Error, Result, C64};

/// Largest alphabet-power `K^N` the exhaustive search accepts.
pub const MAP_SEARCH_LIMIT: f64 = 1_048_576.0;

/// Exhaustive MAP search under a uniform prior, i.e. minimum `‖y - H̄x‖²`.
///
/// Candidates are visited in lexicographic order of symbol indices (symbol 0
/// most significant) and only a strictly better metric replaces the incumbent,
/// so ties resolve to the lexicographically first vector.
pub fn map_detect(
    y: &[C64],
    eff: &EffectiveChannel,
    n0: f64,
    c: &Constellation,
) -> Result<DetectionResult> {
    check_inputs(y, eff, n0)?;
    let started = Instant::now();
    let n = eff.n();
    let k = c.size();
    let candidates = (k as f64).powi(n as i32);
    if candidates > MAP_SEARCH_LIMIT {
        return Err(Error::SearchTooLarge(candidates));
    }
    let h = eff.dense();

    let mut digits = vec![0usize; n];
    // e = y - H̄ x for the current candidate
    let mut e: Vec<C64> = y.to_vec();
    let a0 = c.point(0);
    for col in 0..n {
        for row in 0..n {
            e[row] -= h[(row, col)] * a0;
        }
    }
    let metric = |e: &[C64]| e.iter().map(|v| v.norm_sqr()).sum::<f64>();
    let mut best = digits.clone();
    let mut best_metric = metric(&e);

    let change = |e: &mut [C64], col: usize, from: usize, to: usize| {
        let delta = c.point(to) - c.point(from);
        for row in 0..n {
            e[row] -= h[(row, col)] * delta;
        }
    };

    loop {
        // odometer step: last symbol varies fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                let mut res = DetectionResult::from_indices(best, c, started);
                res.elapsed = started.elapsed();
                return Ok(res);
            }
            pos -= 1;
            let old = digits[pos];
            if old + 1 < k {
                digits[pos] = old + 1;
                change(&mut e, pos, old, old + 1);
                break;
            }
            digits[pos] = 0;
            change(&mut e, pos, old, 0);
        }
        let m = metric(&e);
        if m < best_metric {
            best_metric = m;
            best.copy_from_slice(&digits);
        }
    }
}
