use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use afdm::channel::{
    build_time_matrix, effective_channel, sample_realization, ChannelProfile, EffectiveChannel,
    DEFAULT_SPARSITY_THRESHOLD,
};
use afdm::constellation::Constellation;
use afdm::daft::{build_daft, AfdmParams};
use afdm::detectors::{
    mpa_detect, residual_vb, vb_detect, DetectorConfig, InterferenceModel, VbSession,
};
use afdm::sim::{noise_variance, split_seed};
use afdm::C64;

#[derive(Debug)]
struct Instance {
    c: Constellation,
    eff: EffectiveChannel,
    y: Vec<C64>,
    n0: f64,
}

fn instance(seed: u64, n: usize, paths: usize, k: usize, snr_db: f64) -> Instance {
    let mut rng = split_seed(seed, &[]);
    let c = Constellation::new(k).unwrap();
    let max_delay = (n / 4).max(paths);
    let params = AfdmParams::with_default_chirp(n, 1, max_delay).unwrap();
    let op = build_daft(&params).unwrap();
    let real = sample_realization(&ChannelProfile::new(paths, max_delay, 1), &mut rng).unwrap();
    let eff = effective_channel(
        &build_time_matrix(&real, &params).unwrap(),
        &op,
        DEFAULT_SPARSITY_THRESHOLD,
    )
    .unwrap();
    let n0 = noise_variance(snr_db);
    let sd = (n0 / 2.0).sqrt();
    let x: Vec<C64> = (0..n).map(|_| c.point(rng.random_range(0..k))).collect();
    let y = eff
        .apply(&x)
        .into_iter()
        .map(|v| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            v + C64::new(re * sd, im * sd)
        })
        .collect();
    Instance { c, eff, y, n0 }
}

fn arb_instance() -> impl Strategy<Value = Instance> {
    (
        any::<u64>(),
        prop::sample::select(vec![8usize, 16, 32]),
        1usize..=4,
        prop::sample::select(vec![4usize, 16]),
        -5.0f64..35.0,
    )
        .prop_map(|(seed, n, p, k, snr)| instance(seed, n, p, k, snr))
}

fn arb_model() -> impl Strategy<Value = InterferenceModel> {
    prop::sample::select(vec![InterferenceModel::SupportRows, InterferenceModel::AllColumns])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn vb_factors_are_distributions_with_consistent_moments(
        inst in arb_instance(), iters in 1usize..6, model in arb_model()
    ) {
        let cfg = DetectorConfig { interference: model, ..DetectorConfig::with_iters(iters) };
        let (res, st) = vb_detect(&inst.y, &inst.eff, inst.n0, &inst.c, &cfg).unwrap();
        for (n, row) in st.probs.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            let mean: C64 = row.iter().zip(inst.c.points()).map(|(p, a)| a * *p).sum();
            let second: f64 = row.iter().zip(inst.c.points()).map(|(p, a)| p * a.norm_sqr()).sum();
            prop_assert!((mean - st.means[n]).norm() < 1e-12);
            prop_assert!((second - mean.norm_sqr() - st.vars[n]).abs() < 1e-12);
            prop_assert!(st.vars[n] >= 0.0);
            // hard decision is the mode
            let best = row.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(row[res.hard_indices[n]], best);
        }
        prop_assert!(st.residual_trace.iter().all(|&r| (0.0..=1.0).contains(&r)));
        prop_assert!(st.residual_trace.len() <= iters);
    }

    #[test]
    fn incremental_residual_tracks_definition(inst in arb_instance(), sweeps in 1usize..5) {
        let cfg = DetectorConfig::default();
        let mut s = VbSession::new(&inst.y, &inst.eff, inst.n0, &inst.c, &cfg).unwrap();
        let mut prev = s.state().probs.clone();
        for _ in 0..sweeps {
            let r = s.sweep();
            let direct = residual_vb(&prev, &s.state().probs).unwrap();
            prop_assert!((r - direct).abs() < 1e-15);
            prev = s.state().probs.clone();
        }
        let fresh = s.recomputed_residual();
        let scale = inst.y.iter().map(|v| v.norm()).fold(1.0, f64::max);
        for (a, b) in s.residual().iter().zip(&fresh) {
            prop_assert!((a - b).norm() < 1e-10 * scale);
        }
    }

    #[test]
    fn mpa_marginals_are_distributions(inst in arb_instance(), iters in 1usize..6) {
        let r = mpa_detect(&inst.y, &inst.eff, inst.n0, &inst.c, &DetectorConfig::with_iters(iters)).unwrap();
        for row in r.soft_probs.unwrap() {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
        let trace = r.residual_trace.unwrap();
        prop_assert!(!trace.is_empty() && trace.len() <= iters);
        prop_assert!(trace.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn posteriors_are_scale_covariant(
        inst in arb_instance(), mag in 0.1f64..10.0, phase in -3.0f64..3.0
    ) {
        let a = C64::from_polar(mag, phase);
        let ys: Vec<C64> = inst.y.iter().map(|v| v * a).collect();
        let effs = inst.eff.scaled(a);
        let n0s = inst.n0 * a.norm_sqr();
        let cfg = DetectorConfig::default();
        let (r1, s1) = vb_detect(&inst.y, &inst.eff, inst.n0, &inst.c, &cfg).unwrap();
        let (r2, s2) = vb_detect(&ys, &effs, n0s, &inst.c, &cfg).unwrap();
        for (p, q) in s1.probs.iter().flatten().zip(s2.probs.iter().flatten()) {
            prop_assert!((p - q).abs() < 1e-6);
        }
        prop_assert_eq!(r1.hard_indices, r2.hard_indices);
        let m1 = mpa_detect(&inst.y, &inst.eff, inst.n0, &inst.c, &cfg).unwrap();
        let m2 = mpa_detect(&ys, &effs, n0s, &inst.c, &cfg).unwrap();
        for (p, q) in m1.soft_probs.unwrap().iter().flatten().zip(m2.soft_probs.unwrap().iter().flatten()) {
            prop_assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn detectors_are_deterministic(inst in arb_instance()) {
        let cfg = DetectorConfig::default();
        let (a, sa) = vb_detect(&inst.y, &inst.eff, inst.n0, &inst.c, &cfg).unwrap();
        let (b, sb) = vb_detect(&inst.y, &inst.eff, inst.n0, &inst.c, &cfg).unwrap();
        prop_assert!(a.same_outcome(&b));
        prop_assert_eq!(sa, sb);
        let m = mpa_detect(&inst.y, &inst.eff, inst.n0, &inst.c, &cfg).unwrap();
        let m2 = mpa_detect(&inst.y, &inst.eff, inst.n0, &inst.c, &cfg).unwrap();
        prop_assert!(m.same_outcome(&m2));
    }
}

#[test]
fn vb_on_identity_is_exact_after_concentration() {
    let c = Constellation::qpsk();
    let n = 16;
    let eff = EffectiveChannel::from_dense(nalgebra::DMatrix::identity(n, n), 1e-8).unwrap();
    let mut rng = split_seed(3, &[]);
    let x: Vec<C64> = (0..n).map(|_| c.point(rng.random_range(0..4))).collect();
    let cfg = DetectorConfig {
        early_stop: false,
        ..DetectorConfig::with_iters(4)
    };
    let (r, st) = vb_detect(&x, &eff, 1e-6, &c, &cfg).unwrap();
    assert_eq!(r.hard_symbols, x);
    assert!(st.residual_trace[1] < 1e-9);
}
