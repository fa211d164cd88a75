mod common;

use crossed_gibbs::autoregression::build_m;
use crossed_gibbs::missingness::{make_pattern, sample_z, simulate, synthesize_responses, EffectScales};
use crossed_gibbs::rng::{derive_indexed, rng_from_seed};
use crossed_gibbs::samplers::{collapsed_sweep, run_chain, seeded_sweep, Chain, Init};
use crossed_gibbs::{
    LatentState, ObservationSet, Regime, RegimeSpec, SamplerConfig, SamplerKind, SparsePattern, VarianceComponents,
};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

fn complete(r: usize, c: usize) -> SparsePattern {
    let cells: Vec<(usize, usize)> = (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).collect();
    SparsePattern::from_entries(r, c, &cells).unwrap()
}

fn small_data() -> (ObservationSet, VarianceComponents) {
    let (obs, _) = synthesize_responses(&complete(2, 2), EffectScales::new(1.0, 1.0, 1.0).unwrap(), 2.0, 77);
    (obs, VarianceComponents::new(0.8, 1.3, 0.5).unwrap())
}

fn chain_draws(obs: &ObservationSet, vc: VarianceComponents, kind: SamplerKind, sweeps: usize, seed: u64) -> Vec<Vec<f64>> {
    let cfg = SamplerConfig {
        kind,
        iterations: sweeps + 1000,
        burn_in: 1000,
        fix_precisions: true,
        seed,
        init: Init::Zeros,
    };
    let mut chain = Chain::new(obs, vc, &cfg).unwrap();
    let mut out = Vec::with_capacity(sweeps);
    for it in 0..cfg.iterations {
        chain.step().unwrap();
        if it >= cfg.burn_in {
            let s = chain.state();
            out.push(s.a1.iter().chain(&s.a2).copied().collect());
        }
    }
    out
}

#[test]
fn both_samplers_match_closed_form_posterior_2x2() {
    let (obs, vc) = small_data();
    let (mean, cov) = common::gaussian_posterior(&obs, &vc);
    let m: Vec<f64> = mean.iter().skip(1).copied().collect();
    let v: Vec<f64> = (1..5).map(|k| cov[(k, k)]).collect();
    for (kind, seed) in [(SamplerKind::Collapsed, 1), (SamplerKind::Vanilla, 2)] {
        let draws = chain_draws(&obs, vc, kind, 100_000, seed);
        let (zm, zv) = common::moment_z_scores(&draws, &m, &v);
        assert!(zm < 3.0 && zv < 3.0, "{kind:?}: mean z {zm}, var z {zv}");
    }
}

#[test]
fn one_sweep_preserves_the_posterior() {
    let (obs, vc) = small_data();
    let (mean, cov) = common::gaussian_posterior(&obs, &vc);
    let chol = cov.clone().cholesky().unwrap().l();
    let reps = 100_000;
    for kind in [SamplerKind::Collapsed, SamplerKind::Vanilla] {
        let mut rng = rng_from_seed(9);
        let mut sum = DVector::<f64>::zeros(4);
        let mut sq = DVector::<f64>::zeros(4);
        for r in 0..reps {
            let e = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let th = &mean + &chol * e;
            let mut state = LatentState {
                a0: th[0],
                a1: vec![th[1], th[2]],
                a2: vec![th[3], th[4]],
            };
            seeded_sweep(kind, &mut state, &obs, &vc, derive_indexed(10, kind.name(), r as u64)).unwrap();
            let x = DVector::from_vec(state.a1.iter().chain(&state.a2).copied().collect());
            sum += &x;
            sq += x.component_mul(&x);
        }
        for k in 0..4 {
            let mu = mean[k + 1];
            let var = cov[(k + 1, k + 1)];
            let m = sum[k] / reps as f64;
            let se = (var / reps as f64).sqrt();
            assert!((m - mu).abs() < 4.0 * se, "{kind:?} coord {k}: mean {m} vs {mu}");
            let v = sq[k] / reps as f64 - m * m;
            // Var of a sample variance of Gaussians is 2σ⁴/n
            let se_v = (2.0 * var * var / reps as f64).sqrt();
            assert!((v - var).abs() < 4.0 * se_v, "{kind:?} coord {k}: var {v} vs {var}");
        }
    }
}

#[test]
fn collapsed_sweep_is_affine_in_a2_with_matrix_m() {
    // With common random numbers the new a⁽²⁾ differs by exactly M Δ.
    for (k, regime) in [
        Regime::Mcar,
        Regime::BoundedInhom { upsilon: 1.3 },
        Regime::AlmostBalanced {
            upsilon: 1.5,
            eps_target: 0.05,
        },
    ]
    .into_iter()
    .enumerate()
    {
        let spec = RegimeSpec::new(150.0, 0.6, 0.55, regime, 40 + k as u64).unwrap();
        let z = sample_z(&make_pattern(&spec).unwrap(), 41);
        let (obs, _) = synthesize_responses(&z, EffectScales::new(1.0, 1.0, 1.0).unwrap(), 2.0, 42);
        let vc = VarianceComponents::new(0.7, 1.6, 1.1).unwrap();
        let (m, _) = build_m(&z, &vc).unwrap();
        let mut rng = rng_from_seed(43);
        let c = z.cols();
        let x: Vec<f64> = (0..c).map(|_| rng.sample(StandardNormal)).collect();
        let xp: Vec<f64> = (0..c).map(|_| rng.sample(StandardNormal)).collect();
        let start = |a2: &[f64]| LatentState {
            a0: 0.0,
            a1: vec![0.0; z.rows()],
            a2: a2.to_vec(),
        };
        let (mut s, mut sp) = (start(&x), start(&xp));
        seeded_sweep(SamplerKind::Collapsed, &mut s, &obs, &vc, 44).unwrap();
        seeded_sweep(SamplerKind::Collapsed, &mut sp, &obs, &vc, 44).unwrap();
        let delta = DVector::from_iterator(c, x.iter().zip(&xp).map(|(a, b)| a - b));
        let predicted = &m * delta;
        for j in 0..c {
            let observed = s.a2[j] - sp.a2[j];
            assert!((observed - predicted[j]).abs() < 1e-10, "{regime:?} j={j}: {observed} vs {}", predicted[j]);
        }
    }
}

#[test]
fn conditional_mean_of_one_sweep_is_m_times_previous() {
    // Monte Carlo version with independent noise.
    let spec = RegimeSpec::new(60.0, 0.55, 0.55, Regime::Mcar, 50).unwrap();
    let z = sample_z(&make_pattern(&spec).unwrap(), 51);
    let (obs, _) = synthesize_responses(&z, EffectScales::new(1.0, 1.0, 1.0).unwrap(), 2.0, 52);
    let vc = VarianceComponents::new(1.0, 1.0, 1.0).unwrap();
    let (m, _) = build_m(&z, &vc).unwrap();
    let c = z.cols();
    let x: Vec<f64> = (0..c).map(|j| 3.0 * ((j as f64) - c as f64 / 2.0)).collect();
    let reps = 50_000;
    let mean_after = |a2: &[f64], label: &str| -> (DVector<f64>, DVector<f64>) {
        let mut sum = DVector::zeros(c);
        let mut sq = DVector::zeros(c);
        for r in 0..reps {
            let mut s = LatentState {
                a0: 0.0,
                a1: vec![0.0; z.rows()],
                a2: a2.to_vec(),
            };
            seeded_sweep(SamplerKind::Collapsed, &mut s, &obs, &vc, derive_indexed(53, label, r)).unwrap();
            let v = DVector::from_vec(s.a2);
            sq += v.component_mul(&v);
            sum += v;
        }
        let mean = sum / reps as f64;
        let var = sq / reps as f64 - mean.component_mul(&mean);
        (mean, var)
    };
    let (m1, v1) = mean_after(&x, "x");
    let (m0, v0) = mean_after(&vec![0.0; c], "zero");
    let predicted = &m * DVector::from_vec(x);
    for j in 0..c {
        let se = ((v1[j] + v0[j]) / reps as f64).sqrt();
        let diff = m1[j] - m0[j];
        assert!((diff - predicted[j]).abs() < 4.0 * se, "j={j}: {diff} vs {}", predicted[j]);
    }
}

#[test]
fn sweep_work_is_linear_in_observations() {
    let vc = VarianceComponents::new(1.0, 1.0, 1.0).unwrap();
    for s in [1e3, 1e4, 1e5] {
        let spec = RegimeSpec::new(s, 0.52, 0.52, Regime::Mcar, 60).unwrap();
        let data = simulate(&spec, EffectScales::new(1.0, 1.0, 1.0).unwrap(), 2.0).unwrap();
        let obs = &data.obs;
        let mut state = LatentState::zeros(obs.rows(), obs.cols());
        let mut rng = rng_from_seed(61);
        let w = collapsed_sweep(&mut state, obs, &vc, &mut rng).unwrap();
        let (n, r, c) = (obs.total() as u64, obs.rows() as u64, obs.cols() as u64);
        assert_eq!(w.cell_visits, 2 * n);
        assert_eq!(w.draws, r + c + 2);
        assert!(w.total() <= 2 * (n + r + c) + 2);
    }
}

#[test]
fn a0_posterior_covers_truth() {
    let spec = RegimeSpec::new(1e3, 0.52, 0.52, Regime::Mcar, 70).unwrap();
    let data = simulate(&spec, EffectScales::new(1.0, 1.0, 1.0).unwrap(), 2.0).unwrap();
    let cfg = SamplerConfig {
        kind: SamplerKind::Collapsed,
        iterations: 5000,
        burn_in: 500,
        fix_precisions: false,
        seed: 71,
        init: Init::Zeros,
    };
    let trace = run_chain(&data.obs, &VarianceComponents::new(1.0, 1.0, 1.0).unwrap(), &cfg).unwrap();
    let a0 = trace.series("a0").unwrap();
    let n = a0.len() as f64;
    let mean = a0.iter().sum::<f64>() / n;
    let sd = (a0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - 2.0).abs() < 3.0 * sd, "mean {mean}, sd {sd}");
}

#[test]
fn same_seed_same_trace_different_seed_different_trace() {
    let (obs, vc) = small_data();
    let cfg = SamplerConfig {
        kind: SamplerKind::Vanilla,
        iterations: 300,
        burn_in: 10,
        fix_precisions: false,
        seed: 5,
        init: Init::PriorDraw,
    };
    let a = run_chain(&obs, &vc, &cfg).unwrap();
    let b = run_chain(&obs, &vc, &cfg).unwrap();
    assert_eq!(a, b);
    let c = run_chain(&obs, &vc, &SamplerConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a, c);
}
