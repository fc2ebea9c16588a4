//! Seeded Monte-Carlo BER and convergence experiments.
//!
//! Every trial owns a generator derived from `(master_seed, trial)`, so the
//! transmitted bits, the channel realization and the unit-variance noise draw
//! of a trial are shared by all SNR points (the noise is rescaled to each
//! point's `N0`) and by all detectors. Trials run on a worker pool and are
//! reduced in trial order, so the worker count never changes the output.

mod seed;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    apply_channel_time, build_time_matrix, effective_channel, sample_realization,
    ChannelProfile, ChannelRealization, EffectiveChannel, DEFAULT_SPARSITY_THRESHOLD,
};
use crate::constellation::{map_bits, Constellation};
use crate::daft::{append_cpp, build_daft, default_c1, demodulate, modulate, AfdmParams, DaftOperator};
use crate::detectors::{DetectionResult, DetectorSpec};
use crate::{Error, Result, C64};

pub use seed::{derive_seed, rng_from_seed, split_seed};

/// Environment variable capping the worker pool size.
pub const MAX_WORKERS_ENV: &str = "AFDM_MAX_WORKERS";

pub const SNR_DEFINITION: &str = "Es/N0 in dB with unit average symbol energy (N0 = 10^(-snr/10))";

/// Chirp rates: `"auto"` or explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChirpSetting {
    Auto(AutoTag),
    Explicit { c1: f64, c2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for ChirpSetting {
    fn default() -> Self {
        ChirpSetting::Auto(AutoTag::Auto)
    }
}

fn default_k() -> usize {
    4
}

fn default_threshold() -> f64 {
    DEFAULT_SPARSITY_THRESHOLD
}

fn default_carrier() -> f64 {
    4e9
}

fn default_bandwidth() -> f64 {
    100e6
}

/// Full description of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub frame_len: usize,
    #[serde(default = "default_k")]
    pub constellation_k: usize,
    #[serde(default)]
    pub chirp: ChirpSetting,
    /// Defaults to the profile's maximum delay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_cpp: Option<usize>,
    pub profile: ChannelProfile,
    pub snr_db_grid: Vec<f64>,
    pub num_frames: usize,
    pub detectors: Vec<DetectorSpec>,
    #[serde(default)]
    pub master_seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    /// SNR of the convergence experiment; defaults to the first grid point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_snr_db: Option<f64>,
    #[serde(default = "default_threshold")]
    pub sparsity_threshold: f64,
    /// Recorded for provenance; the discrete model uses normalised Doppler.
    #[serde(default = "default_carrier")]
    pub carrier_hz: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
}

impl SimConfig {
    /// Checks the invariants, naming the offending key.
    pub fn validate(&self) -> std::result::Result<(), (String, Error)> {
        let key = |k: &str, e: Error| (k.to_string(), e);
        self.afdm_params().map_err(|e| key("frame_len", e))?;
        Constellation::new(self.constellation_k).map_err(|e| key("constellation_k", e))?;
        self.profile.validate().map_err(|e| key("profile", e))?;
        let l_cpp = self.l_cpp.unwrap_or(self.profile.max_delay);
        if l_cpp < self.profile.max_delay {
            return Err(key(
                "l_cpp",
                Error::Config(format!(
                    "prefix length {l_cpp} is shorter than the maximum delay {}",
                    self.profile.max_delay
                )),
            ));
        }
        if l_cpp > self.frame_len {
            return Err(key(
                "l_cpp",
                Error::Config(format!("prefix length {l_cpp} exceeds frame length")),
            ));
        }
        if self.snr_db_grid.is_empty() {
            return Err(key("snr_db_grid", Error::Config("SNR grid is empty".into())));
        }
        if self.snr_db_grid.iter().any(|s| !s.is_finite()) {
            return Err(key("snr_db_grid", Error::Config("SNR values must be finite".into())));
        }
        if self.num_frames == 0 {
            return Err(key("num_frames", Error::Config("num_frames must be at least 1".into())));
        }
        if self.detectors.is_empty() {
            return Err(key("detectors", Error::Config("no detectors configured".into())));
        }
        for d in &self.detectors {
            d.config.validate().map_err(|e| key("detectors", e))?;
        }
        let mut labels: Vec<String> = self.detectors.iter().map(DetectorSpec::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(key(
                "detectors",
                Error::Config("detector labels must be unique".into()),
            ));
        }
        if !(self.sparsity_threshold >= 0.0 && self.sparsity_threshold < 1.0) {
            return Err(key(
                "sparsity_threshold",
                Error::Config("threshold must lie in [0, 1)".into()),
            ));
        }
        Ok(())
    }

    pub fn afdm_params(&self) -> Result<AfdmParams> {
        let (c1, c2) = match self.chirp {
            ChirpSetting::Auto(_) => (default_c1(self.frame_len, self.profile.max_doppler), 0.0),
            ChirpSetting::Explicit { c1, c2 } => (c1, c2),
        };
        AfdmParams::new(
            self.frame_len,
            c1,
            c2,
            self.l_cpp.unwrap_or(self.profile.max_delay),
        )
    }
}

/// Noise variance for an Es/N0 in dB with `Es = 1`.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Precomputed transmitter/receiver state shared by all trials.
pub struct Experiment {
    pub config: SimConfig,
    pub constellation: Constellation,
    pub params: AfdmParams,
    pub op: DaftOperator,
}

/// Everything a detector sees for one frame, plus the ground truth.
pub struct Frame {
    pub bits: Vec<u8>,
    pub symbols: Vec<C64>,
    pub realization: ChannelRealization,
    pub y: Vec<C64>,
    pub eff: EffectiveChannel,
    pub n0: f64,
}

/// Outcome of one detector on one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorOutcome {
    /// `None` when the detector failed on this frame (e.g. singular ZF).
    pub bit_errors: Option<u64>,
    pub iterations: usize,
    pub op_count: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub residual_trace: Vec<f64>,
}

impl DetectorOutcome {
    fn from_result(res: &Result<DetectionResult>, truth: &[u8]) -> Self {
        match res {
            Ok(r) => Self {
                bit_errors: Some(
                    r.hard_bits
                        .iter()
                        .zip(truth)
                        .filter(|(a, b)| a != b)
                        .count() as u64,
                ),
                iterations: r.iterations,
                op_count: r.op_count,
                residual_trace: r.residual_trace.clone().unwrap_or_default(),
            },
            Err(e) => {
                log::debug!("detector failed: {e}");
                Self {
                    bit_errors: None,
                    iterations: 0,
                    op_count: 0,
                    residual_trace: Vec::new(),
                }
            }
        }
    }
}

/// Per-trial record kept for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub outcomes: Vec<DetectorOutcome>,
}

impl Experiment {
    pub fn new(config: SimConfig) -> Result<Self> {
        config
            .validate()
            .map_err(|(k, e)| Error::Config(format!("{k}: {e}")))?;
        let params = config.afdm_params()?;
        Ok(Self {
            constellation: Constellation::new(config.constellation_k)?,
            op: build_daft(&params)?,
            params,
            config,
        })
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(self.config.master_seed, &[trial as u64])
    }

    /// Generates one frame: bits, symbols, channel, noise, demodulation.
    pub fn frame(&self, snr_db: f64, seed: u64) -> Result<Frame> {
        let mut rng = rng_from_seed(seed);
        let c = &self.constellation;
        let n = self.params.n;
        let bits: Vec<u8> = (0..n * c.bits_per_symbol())
            .map(|_| rng.random_range(0..2u8))
            .collect();
        let symbols = map_bits(&bits, c)?;
        let realization = sample_realization(&self.config.profile, &mut rng)?;
        let s_cpp = append_cpp(&modulate(&symbols, &self.op)?, &self.params)?;
        let n0 = noise_variance(snr_db);
        let r = apply_channel_time(&s_cpp, &realization, &self.params, n0, &mut rng)?;
        let y = demodulate(&r, &self.op)?;
        let h = build_time_matrix(&realization, &self.params)?;
        let eff = effective_channel(&h, &self.op, self.config.sparsity_threshold)?;
        Ok(Frame {
            bits,
            symbols,
            realization,
            y,
            eff,
            n0,
        })
    }

    /// Runs every configured detector on one frame.
    pub fn run_trial(&self, trial: usize, snr_db: f64, seed: u64) -> Result<TrialRecord> {
        self.run_trial_with(trial, snr_db, seed, &self.config.detectors)
    }

    pub fn run_trial_with(
        &self,
        trial: usize,
        snr_db: f64,
        seed: u64,
        detectors: &[DetectorSpec],
    ) -> Result<TrialRecord> {
        let frame = self.frame(snr_db, seed)?;
        let outcomes = detectors
            .iter()
            .map(|d| {
                let res = d.run(&frame.y, &frame.eff, frame.n0, &self.constellation);
                DetectorOutcome::from_result(&res, &frame.bits)
            })
            .collect();
        Ok(TrialRecord {
            trial,
            snr_db,
            seed,
            outcomes,
        })
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut workers = self.config.workers;
        if let Some(cap) = std::env::var(MAX_WORKERS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&c| c > 0)
        {
            workers = if workers == 0 { cap } else { workers.min(cap) };
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }

    fn run_grid(&self, snrs: &[f64], detectors: &[DetectorSpec]) -> Result<Vec<TrialRecord>> {
        let jobs: Vec<(f64, usize)> = snrs
            .iter()
            .flat_map(|&s| (0..self.config.num_frames).map(move |t| (s, t)))
            .collect();
        self.pool()?.install(|| {
            jobs.par_iter()
                .map(|&(snr, t)| self.run_trial_with(t, snr, self.trial_seed(t), detectors))
                .collect()
        })
    }
}

/// Tally for one (detector, SNR) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub detector: String,
    pub snr_db: f64,
    pub bits_total: u64,
    pub bit_errors: u64,
    pub ber: f64,
    /// Frames that entered the tally.
    pub frames: u64,
    pub frame_errors: u64,
    /// Frames on which the detector failed; excluded from the tally.
    pub failed_frames: u64,
    pub mean_iterations: f64,
    pub mean_op_count: f64,
}

impl BerPoint {
    /// Binomial standard error of the BER estimate.
    pub fn std_err(&self) -> f64 {
        if self.bits_total == 0 {
            return 0.0;
        }
        (self.ber * (1.0 - self.ber) / self.bits_total as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerResult {
    pub config: SimConfig,
    pub snr_definition: String,
    /// Ordered by detector (config order), then SNR (grid order).
    pub points: Vec<BerPoint>,
    /// Seed of each trial index; shared across SNR points.
    pub trial_seeds: Vec<u64>,
    pub trials: Vec<TrialRecord>,
}

impl BerResult {
    pub fn point(&self, detector: &str, snr_db: f64) -> Option<&BerPoint> {
        self.points
            .iter()
            .find(|p| p.detector == detector && p.snr_db == snr_db)
    }
}

fn tally(label: String, snr_db: f64, idx: usize, bits_per_frame: u64, trials: &[&TrialRecord]) -> BerPoint {
    let mut p = BerPoint {
        detector: label,
        snr_db,
        bits_total: 0,
        bit_errors: 0,
        ber: 0.0,
        frames: 0,
        frame_errors: 0,
        failed_frames: 0,
        mean_iterations: 0.0,
        mean_op_count: 0.0,
    };
    let mut iters = 0u64;
    let mut ops = 0u64;
    for t in trials {
        let o = &t.outcomes[idx];
        match o.bit_errors {
            Some(e) => {
                p.frames += 1;
                p.bits_total += bits_per_frame;
                p.bit_errors += e;
                p.frame_errors += u64::from(e > 0);
                iters += o.iterations as u64;
                ops += o.op_count;
            }
            None => p.failed_frames += 1,
        }
    }
    if p.frames > 0 {
        p.ber = p.bit_errors as f64 / p.bits_total as f64;
        p.mean_iterations = iters as f64 / p.frames as f64;
        p.mean_op_count = ops as f64 / p.frames as f64;
    }
    p
}

/// Sweeps the SNR grid with every configured detector.
pub fn run_ber(cfg: &SimConfig) -> Result<BerResult> {
    let exp = Experiment::new(cfg.clone())?;
    let trials = exp.run_grid(&cfg.snr_db_grid, &cfg.detectors)?;
    let bits_per_frame = (exp.params.n * exp.constellation.bits_per_symbol()) as u64;
    let mut points = Vec::new();
    for (idx, d) in cfg.detectors.iter().enumerate() {
        for &snr in &cfg.snr_db_grid {
            let at: Vec<&TrialRecord> = trials.iter().filter(|t| t.snr_db == snr).collect();
            points.push(tally(d.label(), snr, idx, bits_per_frame, &at));
        }
    }
    Ok(BerResult {
        config: cfg.clone(),
        snr_definition: SNR_DEFINITION.to_string(),
        points,
        trial_seeds: (0..cfg.num_frames).map(|t| exp.trial_seed(t)).collect(),
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualTrace {
    pub detector: String,
    pub trial: usize,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub detector: String,
    /// 1-based iteration index.
    pub iteration: usize,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub config: SimConfig,
    pub snr_db: f64,
    pub traces: Vec<ResidualTrace>,
    pub summary: Vec<ResidualSummary>,
}

impl ResidualReport {
    pub fn summary_for(&self, detector: &str) -> Vec<&ResidualSummary> {
        self.summary.iter().filter(|s| s.detector == detector).collect()
    }

    /// Per-trial first iteration (1-based) whose residual is below `level`.
    pub fn first_below(&self, detector: &str, level: f64) -> Vec<Option<usize>> {
        self.traces
            .iter()
            .filter(|t| t.detector == detector)
            .map(|t| t.residuals.iter().position(|&r| r < level).map(|i| i + 1))
            .collect()
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Records per-iteration residuals of the iterative detectors at one SNR.
/// Early stopping is disabled so every trace has `max_iter` entries.
pub fn run_residuals(cfg: &SimConfig) -> Result<ResidualReport> {
    let detectors: Vec<DetectorSpec> = cfg
        .detectors
        .iter()
        .filter(|d| d.kind.is_iterative())
        .map(|d| {
            let mut d = d.clone();
            d.label = Some(d.label());
            d.config.early_stop = false;
            d
        })
        .collect();
    if detectors.is_empty() {
        return Err(Error::Config(
            "detectors: residual runs need at least one iterative detector".into(),
        ));
    }
    let snr = cfg.residual_snr_db.unwrap_or(cfg.snr_db_grid[0]);
    let exp = Experiment::new(cfg.clone())?;
    let trials = exp.run_grid(&[snr], &detectors)?;

    let mut traces = Vec::new();
    let mut summary = Vec::new();
    for (idx, d) in detectors.iter().enumerate() {
        let label = d.label();
        let mine: Vec<ResidualTrace> = trials
            .iter()
            .filter(|t| t.outcomes[idx].bit_errors.is_some())
            .map(|t| ResidualTrace {
                detector: label.clone(),
                trial: t.trial,
                residuals: t.outcomes[idx].residual_trace.clone(),
            })
            .collect();
        let depth = mine.iter().map(|t| t.residuals.len()).max().unwrap_or(0);
        for it in 0..depth {
            let mut vals: Vec<f64> = mine
                .iter()
                .filter_map(|t| t.residuals.get(it).copied())
                .collect();
            vals.sort_by(f64::total_cmp);
            summary.push(ResidualSummary {
                detector: label.clone(),
                iteration: it + 1,
                p25: quantile(&vals, 0.25),
                median: quantile(&vals, 0.5),
                p75: quantile(&vals, 0.75),
                count: vals.len(),
            });
        }
        traces.extend(mine);
    }
    Ok(ResidualReport {
        config: cfg.clone(),
        snr_db: snr,
        traces,
        summary,
    })
}
