//! Variational Bayesian detector: mean-field coordinate ascent over the
//! per-symbol categorical posteriors `q_n(x_n = a_k) = π_n^k`.
//!
//! One sweep visits the symbols in ascending order. For symbol `n` it
//!
//! 1. removes the current mean estimates of all other symbols from `y`,
//! 2. projects the residual onto column `n` to get the scalar model
//!    `z_n = H̄(:,n)ᴴ μ_n / ‖H̄(:,n)‖²` with variance `σ_n² = v_n / ‖H̄(:,n)‖²`,
//! 3. sets `π_n ∝ exp(-|z_n - a_k|² / σ_n²)` and refreshes the mean and
//!    variance of `q_n`.
//!
//! The residual `y - H̄ x̂` is held as one vector and patched along the sparse
//! support of column `n` after each update, so a sweep costs `O(N P + N K)`.

use std::time::Instant;

use super::{
    argmax, check_inputs, lmmse_estimate, softmax_in_place, DetectionResult, DetectorConfig,
    InterferenceModel, ScalarObservation,
};
use crate::channel::EffectiveChannel;
use crate::constellation::Constellation;
use crate::{Error, Result, C64};

/// Lower bound on the scalar-model variance.
pub const SIGMA_SQ_FLOOR: f64 = 1e-12;

/// Deliberate defects for exercising the self-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flips the sign of the matched-filter correction in `z_n`.
    ScalarObservationSign,
}

/// Full belief state of the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct VbState {
    /// `probs[n][k] = π_n^k`.
    pub probs: Vec<Vec<f64>>,
    pub means: Vec<C64>,
    pub vars: Vec<f64>,
    pub residual_trace: Vec<f64>,
    /// Variational objective after each sweep (diagnostic only).
    pub elbo_trace: Vec<f64>,
    pub iterations_run: usize,
}

/// `max_{n,k} |curr[n][k] - prev[n][k]|`.
pub fn residual_vb(prev: &[Vec<f64>], curr: &[Vec<f64>]) -> Result<f64> {
    if prev.len() != curr.len() {
        return Err(Error::Dimension {
            expected: prev.len(),
            got: curr.len(),
        });
    }
    let mut res: f64 = 0.0;
    for (p, c) in prev.iter().zip(curr) {
        if p.len() != c.len() {
            return Err(Error::Dimension {
                expected: p.len(),
                got: c.len(),
            });
        }
        for (a, b) in p.iter().zip(c) {
            res = res.max((a - b).abs());
        }
    }
    Ok(res)
}

/// Stepwise driver for the coordinate ascent, exposing the per-symbol scalar
/// model for inspection.
pub struct VbSession<'a> {
    y: &'a [C64],
    eff: &'a EffectiveChannel,
    n0: f64,
    c: &'a Constellation,
    model: InterferenceModel,
    fault: Option<Fault>,
    state: VbState,
    /// `y - H̄ x̂` over the sparse support.
    residual: Vec<C64>,
    /// `N0 + Σ_n |H̄(r,n)|² v̂_n` per row.
    row_var: Vec<f64>,
    /// `Σ_n ‖H̄(:,n)‖² v̂_n`.
    total_var: f64,
    ops: u64,
    scratch: Vec<f64>,
}

impl<'a> VbSession<'a> {
    /// Initialises `π = 1/K`, `x̂ = ` LMMSE estimate, `v̂ = cfg.init_var`.
    pub fn new(
        y: &'a [C64],
        eff: &'a EffectiveChannel,
        n0: f64,
        c: &'a Constellation,
        cfg: &DetectorConfig,
    ) -> Result<Self> {
        check_inputs(y, eff, n0)?;
        cfg.validate()?;
        let means = lmmse_estimate(y, eff, n0)?;
        Ok(Self::with_means(y, eff, n0, c, cfg, means))
    }

    /// Same as [`VbSession::new`] but starting from the given means.
    pub fn with_means(
        y: &'a [C64],
        eff: &'a EffectiveChannel,
        n0: f64,
        c: &'a Constellation,
        cfg: &DetectorConfig,
        means: Vec<C64>,
    ) -> Self {
        let n = eff.n();
        let k = c.size();
        let vars = vec![cfg.init_var; n];

        let mut residual = y.to_vec();
        let mut row_var = vec![n0; n];
        let mut total_var = 0.0;
        for col in 0..n {
            for &(r, h) in eff.column(col) {
                residual[r] -= h * means[col];
                row_var[r] += h.norm_sqr() * vars[col];
            }
            total_var += eff.col_norm_sq(col) * vars[col];
        }

        Self {
            y,
            eff,
            n0,
            c,
            model: cfg.interference,
            fault: None,
            state: VbState {
                probs: vec![vec![1.0 / k as f64; k]; n],
                means,
                vars,
                residual_trace: Vec::new(),
                elbo_trace: Vec::new(),
                iterations_run: 0,
            },
            residual,
            row_var,
            total_var,
            ops: 0,
            scratch: vec![0.0; k],
        }
    }

    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn state(&self) -> &VbState {
        &self.state
    }

    pub fn into_state(self) -> VbState {
        self.state
    }

    pub fn op_count(&self) -> u64 {
        self.ops
    }

    /// Incrementally maintained `y - H̄ x̂`.
    pub fn residual(&self) -> &[C64] {
        &self.residual
    }

    /// `μ_n = y - Σ_{n'≠n} H̄(:,n') x̂_{n'}` from the maintained residual.
    pub fn interference_cancelled(&self, n: usize) -> Vec<C64> {
        let mut mu = self.residual.clone();
        for &(r, h) in self.eff.column(n) {
            mu[r] += h * self.state.means[n];
        }
        mu
    }

    /// Effective noise variance `v_n` of symbol `n` under the configured
    /// interference model.
    pub fn effective_noise_variance(&self, n: usize) -> f64 {
        let norm = self.eff.col_norm_sq(n);
        let v_own = self.state.vars[n];
        match self.model {
            InterferenceModel::AllColumns => {
                self.n0 + (self.total_var - norm * v_own).max(0.0)
            }
            InterferenceModel::SupportRows => {
                let mut acc = 0.0;
                let mut weight = 0.0;
                for &(r, h) in self.eff.column(n) {
                    let w = h.norm_sqr();
                    acc += w * (self.row_var[r] - w * v_own).max(self.n0);
                    weight += w;
                }
                if weight > 0.0 {
                    acc / weight
                } else {
                    self.n0
                }
            }
        }
    }

    /// Scalar model of symbol `n` given the current beliefs of the others.
    pub fn scalar_observation(&self, n: usize) -> ScalarObservation {
        let norm = self.eff.col_norm_sq(n);
        let mut corr = C64::new(0.0, 0.0);
        for &(r, h) in self.eff.column(n) {
            corr += h.conj() * self.residual[r];
        }
        let mut correction = corr / norm;
        if self.fault == Some(Fault::ScalarObservationSign) {
            correction = -correction;
        }
        let z = self.state.means[n] + correction;
        let sigma_sq = (self.effective_noise_variance(n) / norm).max(SIGMA_SQ_FLOOR);
        ScalarObservation { z, sigma_sq }
    }

    /// Coordinate update of `q_n`; returns `max_k |Δπ_n^k|`.
    pub fn update_symbol(&mut self, n: usize) -> f64 {
        let norm = self.eff.col_norm_sq(n);
        let support = self.eff.column(n).len() as u64;
        if !(norm > 0.0) {
            // symbol is unobservable; its prior is already the optimum
            return 0.0;
        }
        let obs = self.scalar_observation(n);
        self.ops += match self.model {
            InterferenceModel::SupportRows => 2 * support,
            InterferenceModel::AllColumns => support,
        };

        for (s, a) in self.scratch.iter_mut().zip(self.c.points()) {
            *s = -(obs.z - a).norm_sqr() / obs.sigma_sq;
        }
        softmax_in_place(&mut self.scratch);

        let mean: C64 = self
            .scratch
            .iter()
            .zip(self.c.points())
            .map(|(p, a)| a * *p)
            .sum();
        let var: f64 = self
            .scratch
            .iter()
            .zip(self.c.points())
            .map(|(p, a)| p * (a - mean).norm_sqr())
            .sum();

        let delta_mean = mean - self.state.means[n];
        let delta_var = var - self.state.vars[n];
        for &(r, h) in self.eff.column(n) {
            self.residual[r] -= h * delta_mean;
            self.row_var[r] += h.norm_sqr() * delta_var;
        }
        self.ops += 2 * support;
        self.total_var += norm * delta_var;

        let row = &mut self.state.probs[n];
        let mut change: f64 = 0.0;
        for (old, new) in row.iter_mut().zip(&self.scratch) {
            change = change.max((*old - new).abs());
            *old = *new;
        }
        self.state.means[n] = mean;
        self.state.vars[n] = var;
        change
    }

    /// One sweep over all symbols in ascending order; returns the residual
    /// `max_{n,k} |π^(t) - π^(t-1)|` and appends it to the trace.
    pub fn sweep(&mut self) -> f64 {
        let mut res: f64 = 0.0;
        for n in 0..self.eff.n() {
            res = res.max(self.update_symbol(n));
        }
        self.state.residual_trace.push(res);
        self.state.iterations_run += 1;
        let elbo = self.elbo();
        self.state.elbo_trace.push(elbo);
        log::trace!("vb sweep {}: residual {res:.3e}, elbo {elbo:.6}", self.state.iterations_run);
        res
    }

    /// `-(‖y - H̄x̂‖² + Σ ‖H̄(:,n)‖² v̂_n)/N0 - Σ_n (Σ_k π log π + log K)`.
    pub fn elbo(&self) -> f64 {
        let fit: f64 = self.residual.iter().map(|v| v.norm_sqr()).sum::<f64>()
            + self
                .eff
                .col_norms_sq()
                .iter()
                .zip(&self.state.vars)
                .map(|(h, v)| h * v)
                .sum::<f64>();
        let log_k = (self.c.size() as f64).ln();
        let kl: f64 = self
            .state
            .probs
            .iter()
            .map(|row| {
                row.iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| p * p.ln())
                    .sum::<f64>()
                    + log_k
            })
            .sum();
        -fit / self.n0 - kl
    }

    /// Recomputes `y - H̄ x̂` from scratch with the dense channel.
    pub fn recomputed_residual(&self) -> Vec<C64> {
        let hx = self.eff.apply(&self.state.means);
        self.y.iter().zip(hx).map(|(a, b)| a - b).collect()
    }

    pub fn hard_indices(&self) -> Vec<usize> {
        self.state.probs.iter().map(|row| argmax(row)).collect()
    }
}

/// Runs the coordinate ascent until the residual falls below `cfg.tol`
/// (checked after each full sweep) or `cfg.max_iter` sweeps.
pub fn vb_detect(
    y: &[C64],
    eff: &EffectiveChannel,
    n0: f64,
    c: &Constellation,
    cfg: &DetectorConfig,
) -> Result<(DetectionResult, VbState)> {
    run(y, eff, n0, c, cfg, None)
}

pub(crate) fn run(
    y: &[C64],
    eff: &EffectiveChannel,
    n0: f64,
    c: &Constellation,
    cfg: &DetectorConfig,
    fault: Option<Fault>,
) -> Result<(DetectionResult, VbState)> {
    let started = Instant::now();
    let mut session = VbSession::new(y, eff, n0, c, cfg)?;
    if let Some(f) = fault {
        session.inject_fault(f);
    }
    for _ in 0..cfg.max_iter {
        let res = session.sweep();
        if cfg.early_stop && res < cfg.tol {
            break;
        }
    }
    let indices = session.hard_indices();
    let ops = session.op_count();
    let state = session.into_state();
    let mut result = DetectionResult::from_indices(indices, c, started);
    result.soft_probs = Some(state.probs.clone());
    result.residual_trace = Some(state.residual_trace.clone());
    result.iterations = state.iterations_run;
    result.op_count = ops;
    result.elapsed = started.elapsed();
    Ok((result, state))
}
