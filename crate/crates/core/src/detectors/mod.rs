//! Symbol detectors for `y = H̄ x + w̄`.
//!
//! All detectors take the same inputs (observation, effective channel, noise
//! variance, alphabet) and produce a [`DetectionResult`]. Hard decisions break
//! ties towards the lowest constellation index.
//!
//! `op_count` tallies multiply-accumulates performed in loops over the sparse
//! support of `H̄`: products with a channel entry and accumulations across
//! factor-graph neighbours. Per-symbol scalar work over the alphabet (softmax
//! normalisation, posterior moments) and one-off initialisation are not
//! counted.

mod linear;
mod map;
mod mpa;
pub(crate) mod vb;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::channel::EffectiveChannel;
use crate::constellation::{indices_to_bits, Constellation};
use crate::{Error, Result, C64};

pub use linear::{lmmse_detect, lmmse_estimate, zf_detect, zf_estimate};
pub use map::{map_detect, MAP_SEARCH_LIMIT};
pub use mpa::mpa_detect;
pub use vb::{residual_vb, vb_detect, Fault, VbSession, VbState, SIGMA_SQ_FLOOR};

/// How the variational detector accounts for the uncertainty of the other
/// symbols when forming the scalar model of symbol `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InterferenceModel {
    /// Noise plus residual-symbol variance on the rows where column `n` is
    /// supported, averaged with weights `|H̄(r,n)|² / ‖H̄(:,n)‖²`.
    #[default]
    SupportRows,
    /// `N0 + Σ_{n'≠n} ‖H̄(:,n')‖² v̂_{n'}` summed over every other column.
    AllColumns,
}

/// Iteration controls shared by the iterative detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Message damping in `(0, 1]`; message passing only.
    pub damping: f64,
    /// Stop as soon as the residual drops below `tol`.
    pub early_stop: bool,
    /// Variational detector only.
    pub interference: InterferenceModel,
    /// Initial per-symbol variance of the variational detector.
    pub init_var: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            max_iter: 5,
            tol: 1e-4,
            damping: 0.6,
            early_stop: true,
            interference: InterferenceModel::default(),
            init_var: 1.0,
        }
    }
}

impl DetectorConfig {
    pub fn with_iters(max_iter: usize) -> Self {
        Self {
            max_iter,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config("damping must lie in (0, 1]".into()));
        }
        if !(self.init_var >= 0.0) || !self.init_var.is_finite() {
            return Err(Error::Config("init_var must be a finite non-negative number".into()));
        }
        Ok(())
    }
}

/// Scalar model `z_n = x_n + w̃_n`, `w̃_n ~ CN(0, σ_n²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarObservation {
    pub z: C64,
    pub sigma_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub hard_indices: Vec<usize>,
    pub hard_symbols: Vec<C64>,
    pub hard_bits: Vec<u8>,
    /// Per-symbol probabilities over the alphabet (iterative detectors).
    pub soft_probs: Option<Vec<Vec<f64>>>,
    pub residual_trace: Option<Vec<f64>>,
    pub iterations: usize,
    pub elapsed: Duration,
    pub op_count: u64,
}

impl DetectionResult {
    pub(crate) fn from_indices(indices: Vec<usize>, c: &Constellation, started: Instant) -> Self {
        Self {
            hard_symbols: indices.iter().map(|&i| c.point(i)).collect(),
            hard_bits: indices_to_bits(&indices, c),
            hard_indices: indices,
            soft_probs: None,
            residual_trace: None,
            iterations: 0,
            elapsed: started.elapsed(),
            op_count: 0,
        }
    }

    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let strip = |r: &Self| Self {
            elapsed: Duration::ZERO,
            ..r.clone()
        };
        strip(self) == strip(other)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Normalises log-weights in place into probabilities.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Zf,
    Lmmse,
    Map,
    Mpa,
    Vb,
}

impl DetectorKind {
    pub fn is_iterative(self) -> bool {
        matches!(self, DetectorKind::Mpa | DetectorKind::Vb)
    }

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Zf => "zf",
            DetectorKind::Lmmse => "lmmse",
            DetectorKind::Map => "map",
            DetectorKind::Mpa => "mpa",
            DetectorKind::Vb => "vb",
        }
    }
}

/// A detector as configured in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    /// Row label in outputs; defaults to the kind, plus the iteration count for
    /// iterative detectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub config: DetectorConfig,
}

impl DetectorSpec {
    pub fn new(kind: DetectorKind, config: DetectorConfig) -> Self {
        Self {
            kind,
            label: None,
            config,
        }
    }

    pub fn label(&self) -> String {
        match (&self.label, self.kind.is_iterative()) {
            (Some(l), _) => l.clone(),
            (None, true) => format!("{}{}", self.kind.name(), self.config.max_iter),
            (None, false) => self.kind.name().to_string(),
        }
    }

    pub fn run(
        &self,
        y: &[C64],
        eff: &EffectiveChannel,
        n0: f64,
        c: &Constellation,
    ) -> Result<DetectionResult> {
        match self.kind {
            DetectorKind::Zf => zf_detect(y, eff, c),
            DetectorKind::Lmmse => lmmse_detect(y, eff, n0, c),
            DetectorKind::Map => map_detect(y, eff, n0, c),
            DetectorKind::Mpa => mpa_detect(y, eff, n0, c, &self.config),
            DetectorKind::Vb => vb_detect(y, eff, n0, c, &self.config).map(|(r, _)| r),
        }
    }
}

pub(crate) fn check_inputs(y: &[C64], eff: &EffectiveChannel, n0: f64) -> Result<()> {
    if y.len() != eff.n() {
        return Err(Error::Dimension {
            expected: eff.n(),
            got: y.len(),
        });
    }
    if !(n0 > 0.0) {
        return Err(Error::Config(format!("noise variance must be positive, got {n0}")));
    }
    Ok(())
}
