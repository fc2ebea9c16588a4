//! Fast invariant suite behind `afdm selftest`.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::channel::{
    apply_channel_time, build_time_matrix, effective_channel, sample_realization, ChannelProfile,
    DEFAULT_SPARSITY_THRESHOLD,
};
use crate::constellation::Constellation;
use crate::daft::{
    append_cpp, build_daft, cpp_phase, demodulate, modulate, strip_cpp, AfdmParams,
};
use crate::detectors::{map_detect, DetectorConfig, Fault, VbSession};
use crate::linalg::relative_error;
use crate::sim::{noise_variance, split_seed};
use crate::C64;

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub millis: u128,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub fault: Option<String>,
    pub passed: bool,
    pub checks: Vec<CheckReport>,
}

impl SelftestReport {
    pub fn first_failure(&self) -> Option<&CheckReport> {
        self.checks.iter().find(|c| !c.passed)
    }
}

type Outcome = std::result::Result<String, String>;
type Check = fn(&Ctx) -> Outcome;

struct Ctx {
    seed: u64,
    fault: Option<Fault>,
}

fn random_symbols<R: Rng>(c: &Constellation, n: usize, rng: &mut R) -> Vec<C64> {
    (0..n).map(|_| c.point(rng.random_range(0..c.size()))).collect()
}

fn random_vector<R: Rng>(n: usize, rng: &mut R) -> Vec<C64> {
    (0..n)
        .map(|_| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
        .collect()
}

fn add_noise<R: Rng>(v: &mut [C64], n0: f64, rng: &mut R) {
    let sd = (n0 / 2.0).sqrt();
    for x in v {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *x += C64::new(re * sd, im * sd);
    }
}

fn unitarity(ctx: &Ctx) -> Outcome {
    let mut worst: f64 = 0.0;
    for (i, n) in [8usize, 64, 256].into_iter().enumerate() {
        let mut rng = split_seed(ctx.seed, &[1, i as u64]);
        for _ in 0..20 {
            let (c1, c2) = (rng.random::<f64>(), rng.random::<f64>());
            let op = build_daft(&AfdmParams::new(n, c1, c2, 0).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let gram = op.adjoint() * op.matrix();
            let err = (gram - DMatrix::<C64>::identity(n, n))
                .iter()
                .map(|v| v.norm())
                .fold(0.0, f64::max);
            if err >= 1e-10 {
                return Err(format!("N={n} c1={c1} c2={c2}: max|AᴴA-I| = {err:e}"));
            }
            worst = worst.max(err);
        }
    }
    Ok(format!("max|AᴴA-I| = {worst:.2e}"))
}

fn round_trip(ctx: &Ctx) -> Outcome {
    let mut worst: f64 = 0.0;
    for (i, n) in [8usize, 64, 256].into_iter().enumerate() {
        let mut rng = split_seed(ctx.seed, &[2, i as u64]);
        let params = AfdmParams::new(n, rng.random(), rng.random(), 0).map_err(|e| e.to_string())?;
        let op = build_daft(&params).map_err(|e| e.to_string())?;
        let x = random_vector(n, &mut rng);
        let back = demodulate(&modulate(&x, &op).map_err(|e| e.to_string())?, &op)
            .map_err(|e| e.to_string())?;
        let err = relative_error(&back, &x);
        if err >= 1e-9 {
            return Err(format!("N={n} {params:?}: relative error {err:e}"));
        }
        worst = worst.max(err);
    }
    Ok(format!("max relative error {worst:.2e}"))
}

fn matrix_vs_convolution(ctx: &Ctx) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut case = 0u64;
    for n in [8usize, 16, 32] {
        for p in [1usize, 3, 5] {
            for _ in 0..12 {
                case += 1;
                let mut rng = split_seed(ctx.seed, &[3, case]);
                let profile = ChannelProfile::new(p, (n / 2).max(p), 1);
                let params = AfdmParams::with_default_chirp(n, 1, profile.max_delay)
                    .map_err(|e| e.to_string())?;
                let op = build_daft(&params).map_err(|e| e.to_string())?;
                let real = sample_realization(&profile, &mut rng).map_err(|e| e.to_string())?;
                let x = random_vector(n, &mut rng);
                let h = build_time_matrix(&real, &params).map_err(|e| e.to_string())?;
                let eff = effective_channel(&h, &op, 0.0).map_err(|e| e.to_string())?;
                let via_matrix = eff.apply(&x);
                let s = append_cpp(&modulate(&x, &op).map_err(|e| e.to_string())?, &params)
                    .map_err(|e| e.to_string())?;
                let r = apply_channel_time(&s, &real, &params, 0.0, &mut rng)
                    .map_err(|e| e.to_string())?;
                let via_samples = demodulate(&r, &op).map_err(|e| e.to_string())?;
                let err = relative_error(&via_matrix, &via_samples);
                if err >= 1e-9 {
                    return Err(format!(
                        "seed {} case {case}: N={n} P={p} paths={:?}: relative error {err:e}",
                        ctx.seed, real.paths
                    ));
                }
                worst = worst.max(err);
            }
        }
    }
    Ok(format!("{case} configs, max relative error {worst:.2e}"))
}

fn cpp_degeneration(_: &Ctx) -> Outcome {
    for n in [8usize, 16, 64] {
        for m in 1..4 {
            let c1 = m as f64 / (2 * n) as f64;
            let params = AfdmParams::new(n, c1, 0.0, n / 2).map_err(|e| e.to_string())?;
            for i in 1..=params.l_cpp as isize {
                let ph = cpp_phase(&params, -i);
                if (ph - C64::new(1.0, 0.0)).norm() >= 1e-12 {
                    return Err(format!("N={n} c1={c1} n=-{i}: phase {ph}"));
                }
            }
            let x: Vec<C64> = (0..n).map(|k| C64::new(k as f64, 1.0)).collect();
            let s = append_cpp(&x, &params).map_err(|e| e.to_string())?;
            if relative_error(&s[..params.l_cpp], &x[n - params.l_cpp..]) >= 1e-12
                || strip_cpp(&s, &params).map_err(|e| e.to_string())? != x
            {
                return Err(format!("N={n} c1={c1}: prefix is not cyclic"));
            }
        }
    }
    Ok("phase factors equal 1".into())
}

/// `z_n` of the session against the dense projection of `y - Σ_{m≠n} h_m x̂_m`.
fn scalar_observation(ctx: &Ctx) -> Outcome {
    let c = Constellation::qpsk();
    let cfg = DetectorConfig::default();
    let mut worst: f64 = 0.0;
    for case in 0..8u64 {
        let mut rng = split_seed(ctx.seed, &[5, case]);
        let n = 32;
        let profile = ChannelProfile::new(3, 8, 2);
        let params = AfdmParams::with_default_chirp(n, 2, 8).map_err(|e| e.to_string())?;
        let op = build_daft(&params).map_err(|e| e.to_string())?;
        let real = sample_realization(&profile, &mut rng).map_err(|e| e.to_string())?;
        let eff = effective_channel(
            &build_time_matrix(&real, &params).map_err(|e| e.to_string())?,
            &op,
            DEFAULT_SPARSITY_THRESHOLD,
        )
        .map_err(|e| e.to_string())?;
        let x = random_symbols(&c, n, &mut rng);
        let mut y = eff.apply(&x);
        let n0 = 0.05;
        add_noise(&mut y, n0, &mut rng);
        let mut session = VbSession::new(&y, &eff, n0, &c, &cfg).map_err(|e| e.to_string())?;
        if let Some(f) = ctx.fault {
            session.inject_fault(f);
        }
        for sweep in 0..2 {
            for sym in 0..n {
                let means = &session.state().means;
                let mut mu = y.clone();
                for (m, xm) in means.iter().enumerate() {
                    if m != sym {
                        for (r, v) in mu.iter_mut().enumerate() {
                            *v -= eff.dense()[(r, m)] * xm;
                        }
                    }
                }
                let proj: C64 = eff
                    .dense()
                    .column(sym)
                    .iter()
                    .zip(&mu)
                    .map(|(h, v)| h.conj() * v)
                    .sum();
                let want = proj / eff.col_norm_sq(sym);
                let got = session.scalar_observation(sym).z;
                let err = (got - want).norm() / want.norm().max(1.0);
                if err >= 1e-9 {
                    return Err(format!(
                        "seed {} case {case} sweep {sweep} symbol {sym}: z = {got}, projection = {want}",
                        ctx.seed
                    ));
                }
                worst = worst.max(err);
                session.update_symbol(sym);
            }
        }
    }
    Ok(format!("max deviation {worst:.2e}"))
}

fn posterior_moments(ctx: &Ctx) -> Outcome {
    let c = Constellation::new(16).map_err(|e| e.to_string())?;
    let cfg = DetectorConfig::default();
    for case in 0..20u64 {
        let mut rng = split_seed(ctx.seed, &[6, case]);
        let n = 16;
        let profile = ChannelProfile::new(3, 4, 1);
        let params = AfdmParams::with_default_chirp(n, 1, 4).map_err(|e| e.to_string())?;
        let op = build_daft(&params).map_err(|e| e.to_string())?;
        let real = sample_realization(&profile, &mut rng).map_err(|e| e.to_string())?;
        let eff = effective_channel(
            &build_time_matrix(&real, &params).map_err(|e| e.to_string())?,
            &op,
            DEFAULT_SPARSITY_THRESHOLD,
        )
        .map_err(|e| e.to_string())?;
        let x = random_symbols(&c, n, &mut rng);
        let n0 = noise_variance(rng.random_range(0.0..30.0));
        let mut y = eff.apply(&x);
        add_noise(&mut y, n0, &mut rng);
        let mut session = VbSession::new(&y, &eff, n0, &c, &cfg).map_err(|e| e.to_string())?;
        if let Some(f) = ctx.fault {
            session.inject_fault(f);
        }
        session.sweep();
        let st = session.state();
        for (i, row) in st.probs.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(format!("seed {} case {case} symbol {i}: π sums to {sum}", ctx.seed));
            }
            let mean: C64 = row.iter().zip(c.points()).map(|(p, a)| a * *p).sum();
            let second: f64 = row.iter().zip(c.points()).map(|(p, a)| p * a.norm_sqr()).sum();
            let var = second - mean.norm_sqr();
            if (mean - st.means[i]).norm() > 1e-12 || (var - st.vars[i]).abs() > 1e-12 {
                return Err(format!(
                    "seed {} case {case} symbol {i}: stored moments ({}, {}) vs ({mean}, {var})",
                    ctx.seed, st.means[i], st.vars[i]
                ));
            }
        }
    }
    Ok("20 cases".into())
}

fn map_vb_agreement(ctx: &Ctx) -> Outcome {
    let c = Constellation::qpsk();
    let params = AfdmParams::with_default_chirp(4, 1, 1).map_err(|e| e.to_string())?;
    let op = build_daft(&params).map_err(|e| e.to_string())?;
    let profile = ChannelProfile::new(2, 1, 1);
    let n0 = noise_variance(20.0);
    let trials = 1000u64;
    let mut agree = 0usize;
    for t in 0..trials {
        let mut rng = split_seed(ctx.seed, &[7, t]);
        let real = sample_realization(&profile, &mut rng).map_err(|e| e.to_string())?;
        let eff = effective_channel(
            &build_time_matrix(&real, &params).map_err(|e| e.to_string())?,
            &op,
            DEFAULT_SPARSITY_THRESHOLD,
        )
        .map_err(|e| e.to_string())?;
        let x = random_symbols(&c, 4, &mut rng);
        let mut y = eff.apply(&x);
        add_noise(&mut y, n0, &mut rng);
        let map = map_detect(&y, &eff, n0, &c).map_err(|e| e.to_string())?;
        let (vb, _) = crate::detectors::vb::run(&y, &eff, n0, &c, &DetectorConfig::default(), ctx.fault)
            .map_err(|e| e.to_string())?;
        agree += map
            .hard_indices
            .iter()
            .zip(&vb.hard_indices)
            .filter(|(a, b)| a == b)
            .count();
    }
    let rate = agree as f64 / (4 * trials) as f64;
    if rate < 0.99 {
        return Err(format!("seed {} N=4 P=2 20 dB: agreement {rate:.4} < 0.99", ctx.seed));
    }
    Ok(format!("agreement {rate:.4} over {trials} trials"))
}

fn determinism(ctx: &Ctx) -> Outcome {
    let c = Constellation::qpsk();
    let cfg = DetectorConfig::default();
    let mut rng = split_seed(ctx.seed, &[8]);
    let n = 16;
    let params = AfdmParams::with_default_chirp(n, 1, 4).map_err(|e| e.to_string())?;
    let op = build_daft(&params).map_err(|e| e.to_string())?;
    let real =
        sample_realization(&ChannelProfile::new(3, 4, 1), &mut rng).map_err(|e| e.to_string())?;
    let eff = effective_channel(
        &build_time_matrix(&real, &params).map_err(|e| e.to_string())?,
        &op,
        DEFAULT_SPARSITY_THRESHOLD,
    )
    .map_err(|e| e.to_string())?;
    let mut y = eff.apply(&random_symbols(&c, n, &mut rng));
    add_noise(&mut y, 0.1, &mut rng);
    let run = || crate::detectors::vb::run(&y, &eff, 0.1, &c, &cfg, ctx.fault);
    let (a, sa) = run().map_err(|e| e.to_string())?;
    let (b, sb) = run().map_err(|e| e.to_string())?;
    if !a.same_outcome(&b) || sa != sb {
        return Err(format!("seed {}: repeated VB runs differ", ctx.seed));
    }
    Ok("bit-identical reruns".into())
}

const CHECKS: &[(&str, Check)] = &[
    ("daft-unitarity", unitarity),
    ("daft-round-trip", round_trip),
    ("channel-matrix-vs-convolution", matrix_vs_convolution),
    ("cpp-degeneration", cpp_degeneration),
    ("scalar-observation", scalar_observation),
    ("posterior-moments", posterior_moments),
    ("map-vb-agreement", map_vb_agreement),
    ("determinism", determinism),
];

/// Runs every check; a failure does not stop the remaining checks.
pub fn run_selftest(seed: u64, fault: Option<Fault>) -> SelftestReport {
    let ctx = Ctx { seed, fault };
    let checks: Vec<CheckReport> = CHECKS
        .iter()
        .map(|(name, f)| {
            let started = Instant::now();
            let out = f(&ctx);
            let millis = started.elapsed().as_millis();
            let (passed, detail) = match out {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckReport {
                name,
                passed,
                detail,
                millis,
            }
        })
        .collect();
    SelftestReport {
        seed,
        fault: fault.map(|f| format!("{f:?}")),
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}
