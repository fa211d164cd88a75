//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if
//! any criterion fails.

mod common;

use std::time::Instant;

use crossed_gibbs::autoregression::{analyze, build_b1_b2, build_m, phi_upsilon};
use crossed_gibbs::diagnostics::effective_sample_size;
use crossed_gibbs::experiment::median_trend_report;
use crossed_gibbs::missingness::{make_pattern, sample_z, simulate, EffectScales};
use crossed_gibbs::rng::{derive_indexed, rng_from_seed};
use crossed_gibbs::samplers::{precision_posteriors, run_chain, Chain, Init};
use crossed_gibbs::spectral::{power_norm, spectral_norm};
use crossed_gibbs::theory_lab::{
    bounded_inhom_threshold, concentration_bound, latala_ratio, norm_vs_s_experiment, spectral_surrogate,
    verify_row_col_concentration, verify_z_norm_bound_batch, SpectralStatistic,
};
use crossed_gibbs::{
    Error, LatentState, ObservationSet, Regime, RegimeSpec, SamplerConfig, SamplerKind, VarianceComponents,
};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

type Check = Result<(bool, String), Error>;

struct Outcome {
    passed: bool,
}

fn criterion(id: u32, name: &str, limit_secs: Option<f64>, f: impl FnOnce() -> Check) -> Outcome {
    let start = Instant::now();
    let result = f();
    let secs = start.elapsed().as_secs_f64();
    let (mut passed, mut detail) = match result {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    if let Some(limit) = limit_secs {
        if secs >= limit {
            passed = false;
            detail.push_str(&format!("; runtime over {limit} s"));
        }
    }
    println!(
        "{} [{id:>2}] {name}: {detail} ({secs:.2} s)",
        if passed { "PASS" } else { "FAIL" }
    );
    Outcome { passed }
}

fn unit_vc() -> VarianceComponents {
    VarianceComponents::new(1.0, 1.0, 1.0).unwrap()
}

const GRID: [f64; 3] = [1e3, 3_162.277_660_168_379_5, 1e4];

fn mcar(s: f64) -> RegimeSpec {
    RegimeSpec::new(s, 0.52, 0.52, Regime::Mcar, 0).unwrap()
}

fn c1_factor_identity() -> Check {
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut attempt = 0u64;
    while done < 50 {
        let mut rng = rng_from_seed(derive_indexed(101, "c1", attempt));
        attempt += 1;
        let s = rng.random_range(50.0..300.0);
        let rho = rng.random_range(0.55..0.6);
        let kappa = rng.random_range(0.55..0.6);
        let regime = match done % 3 {
            0 => Regime::Mcar,
            1 => Regime::BoundedInhom { upsilon: 1.3 },
            _ => Regime::AlmostBalanced {
                upsilon: 1.3,
                eps_target: 0.05,
            },
        };
        let spec = RegimeSpec::new(s, rho, kappa, regime, rng.random())?;
        if spec.rows() > 32 || spec.cols() > 32 {
            continue;
        }
        let vc = VarianceComponents::new(
            rng.random_range(0.1..4.0),
            rng.random_range(0.1..4.0),
            rng.random_range(0.1..4.0),
        )?;
        let z = sample_z(&make_pattern(&spec)?, rng.random());
        let (m, _) = match build_m(&z, &vc) {
            Err(Error::DegenerateFactor { .. }) => continue,
            other => other?,
        };
        let (b1, b2) = build_b1_b2(&z, &vc)?;
        worst = worst.max((m - b2 * b1).amax());
        done += 1;
    }
    Ok((worst < 1e-10, format!("max |M - B2 B1| = {worst:.2e} over 50 instances (< 1e-10)")))
}

fn c2_complete_degeneracy() -> Check {
    let cells: Vec<(usize, usize)> = (0..20).flat_map(|i| (0..20).map(move |j| (i, j))).collect();
    let z = crossed_gibbs::SparsePattern::from_entries(20, 20, &cells)?;
    let b = analyze(&z, &unit_vc(), false)?;
    let ok = b.spec_norm < 1e-12 && b.t_rel == Some(1.0);
    Ok((ok, format!("||M|| = {:.2e} (< 1e-12), t_rel = {:?} (== 1.0)", b.spec_norm, b.t_rel)))
}

fn posterior_draws(obs: &ObservationSet, vc: VarianceComponents, kind: SamplerKind, seed: u64) -> Result<Vec<Vec<f64>>, Error> {
    let cfg = SamplerConfig {
        kind,
        iterations: 201_000,
        burn_in: 1_000,
        fix_precisions: true,
        seed,
        init: Init::Zeros,
    };
    let mut chain = Chain::new(obs, vc, &cfg)?;
    let mut draws = Vec::with_capacity(cfg.iterations - cfg.burn_in);
    for it in 0..cfg.iterations {
        chain.step()?;
        if it >= cfg.burn_in {
            let s: &LatentState = chain.state();
            draws.push(s.a1.iter().chain(&s.a2).copied().collect());
        }
    }
    Ok(draws)
}

fn c3_posterior_oracle() -> Check {
    let cells: Vec<(usize, usize)> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).collect();
    let z = crossed_gibbs::SparsePattern::from_entries(3, 3, &cells)?;
    let (obs, _) = crossed_gibbs::missingness::synthesize_responses(&z, EffectScales::new(1.0, 1.0, 1.0)?, 2.0, 303);
    let vc = VarianceComponents::new(1.0, 1.5, 0.7)?;
    let (mean, cov) = common::gaussian_posterior(&obs, &vc);
    let m: Vec<f64> = mean.iter().skip(1).copied().collect();
    let v: Vec<f64> = (1..7).map(|k| cov[(k, k)]).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (kind, seed) in [(SamplerKind::Collapsed, 31), (SamplerKind::Vanilla, 32)] {
        let draws = posterior_draws(&obs, vc, kind, seed)?;
        let (zm, zv) = common::moment_z_scores(&draws, &m, &v);
        ok &= zm < 3.0 && zv < 3.0;
        parts.push(format!("{}: max|z| mean {zm:.2}, var {zv:.2}", kind.name()));
    }
    Ok((ok, format!("{} (< 3 MC SE, 2e5 sweeps)", parts.join("; "))))
}

fn c4_mcar_norm() -> Check {
    let rows = norm_vs_s_experiment(&mcar(1e4).with_seed(404), &GRID, 20, &unit_vc())?;
    let at_top: Vec<f64> = rows.iter().filter(|r| r.s == 1e4).map(|r| r.norm).collect();
    let frac = at_top.iter().filter(|&&n| n < 0.5).count() as f64 / at_top.len() as f64;
    let trend = median_trend_report(&rows);
    let medians: Vec<String> = trend.details.iter().map(|d| format!("{:.4}", d.values["median_norm"])).collect();
    Ok((
        frac >= 0.95 && trend.passed,
        format!(
            "fraction ||M|| < 0.5 at S=1e4: {frac:.2} (>= 0.95); medians over S grid [{}] nonincreasing: {}",
            medians.join(", "),
            trend.passed
        ),
    ))
}

fn c5_bounded_inhom_radius() -> Check {
    let spec = RegimeSpec::new(1e4, 0.6, 0.6, Regime::BoundedInhom { upsilon: 1.52 }, 505)?;
    let phi = phi_upsilon(1.52);
    let threshold = bounded_inhom_threshold(1.52, 0.05);
    let r = spectral_surrogate(&spec, &unit_vc(), SpectralStatistic::Radius, threshold, 0.95, 20)?;
    let max_radius = r.details.iter().map(|d| d.values["radius"]).fold(0.0, f64::max);
    Ok((
        r.passed && phi >= 0.0143,
        format!(
            "phi(1.52) = {phi:.5} (>= 0.0143); fraction rho(M) <= {threshold:.4}: {:.2} (>= 0.95), max rho(M) = {max_radius:.4} at (rho,kappa)=(0.6,0.6)",
            r.observed
        ),
    ))
}

fn c6_almost_balanced_radius() -> Check {
    let spec = RegimeSpec::new(
        1e4,
        0.6,
        0.6,
        Regime::AlmostBalanced {
            upsilon: 3.0,
            eps_target: 0.05,
        },
        606,
    )?;
    let r = spectral_surrogate(&spec, &unit_vc(), SpectralStatistic::Radius, 0.99, 0.95, 20)?;
    let max_radius = r.details.iter().map(|d| d.values["radius"]).fold(0.0, f64::max);
    Ok((
        r.passed,
        format!(
            "fraction rho(M) <= 0.99: {:.2} (>= 0.95), max rho(M) = {max_radius:.4} at (rho,kappa)=(0.6,0.6)",
            r.observed
        ),
    ))
}

fn c7_concentration() -> Check {
    let spec = mcar(1e4).with_seed(707);
    let r = verify_row_col_concentration(&spec, 0.2, 100)?;
    Ok((
        r.passed,
        format!(
            "violation fraction {:.2} <= bound {:.3} (bound check: {:.3})",
            r.observed,
            r.bound,
            concentration_bound(&spec, 0.2)
        ),
    ))
}

fn c8_z_norm() -> Check {
    let batches = [
        (mcar(1e3).with_seed(801), 70),
        (RegimeSpec::new(3000.0, 0.6, 0.6, Regime::BoundedInhom { upsilon: 1.3 }, 802)?, 70),
        (
            RegimeSpec::new(
                3000.0,
                0.6,
                0.6,
                Regime::AlmostBalanced {
                    upsilon: 2.0,
                    eps_target: 0.05,
                },
                803,
            )?,
            60,
        ),
    ];
    let mut violations = 0.0;
    let mut worst: f64 = 0.0;
    for (spec, n) in batches {
        let r = verify_z_norm_bound_batch(&spec, n)?;
        violations += r.observed;
        for d in &r.details {
            worst = worst.max(d.values["norm"] / d.values["bound"]);
        }
    }
    Ok((
        violations == 0.0,
        format!("{violations} violations over 200 instances; max ||Z||/bound = {worst:.4}"),
    ))
}

fn c9_latala() -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for s in GRID {
        let r = latala_ratio(&mcar(s).with_seed(909), 10, 3.0)?;
        ok &= r.passed;
        parts.push(format!("S={s:.0}: {:.3}", r.observed));
    }
    Ok((ok, format!("ratios {} (< 3)", parts.join(", "))))
}

struct EssPair {
    collapsed: [f64; 3],
    vanilla: [f64; 3],
}

/// ESS of (a0, mu1, mu2) for both samplers on one simulated data set.
fn ess_pair(s: f64, seed: u64, fix_precisions: bool) -> Result<EssPair, Error> {
    let spec = mcar(s).with_seed(seed);
    let data = simulate(&spec, EffectScales::new(1.0, 1.0, 1.0)?, 2.0)?;
    let run = |kind: SamplerKind, seed: u64| -> Result<[f64; 3], Error> {
        let cfg = SamplerConfig {
            kind,
            iterations: 10_000,
            burn_in: 1_000,
            fix_precisions,
            seed,
            init: Init::Zeros,
        };
        let trace = run_chain(&data.obs, &unit_vc(), &cfg)?;
        let mut out = [0.0; 3];
        for (k, name) in ["a0", "mu1", "mu2"].iter().enumerate() {
            out[k] = effective_sample_size(&trace.series(name).unwrap())?.ess;
        }
        Ok(out)
    };
    let (c, v) = rayon::join(
        || run(SamplerKind::Collapsed, seed ^ 0xc0),
        || run(SamplerKind::Vanilla, seed ^ 0xa0),
    );
    Ok(EssPair {
        collapsed: c?,
        vanilla: v?,
    })
}

fn c10_ess_separation() -> Check {
    let e = ess_pair(1e4, 1010, false)?;
    let ratio = e.collapsed[0] / e.vanilla[0];
    let ok = ratio >= 5.0 && e.collapsed[1] >= 1000.0 && e.collapsed[2] >= 1000.0;
    Ok((
        ok,
        format!(
            "ESS a0 collapsed {:.0} / vanilla {:.0} = {ratio:.1} (>= 5); collapsed ESS mu1 {:.0}, mu2 {:.0} (>= 1000)",
            e.collapsed[0], e.vanilla[0], e.collapsed[1], e.collapsed[2]
        ),
    ))
}

fn c11_ess_flatness() -> Check {
    let pairs: Vec<EssPair> = GRID
        .iter()
        .enumerate()
        .map(|(k, &s)| ess_pair(s, 1100 + k as u64, true))
        .collect::<Result<_, _>>()?;
    let col: Vec<f64> = pairs.iter().map(|p| p.collapsed[1]).collect();
    let van: Vec<f64> = pairs.iter().map(|p| p.vanilla[1]).collect();
    let spread = col.iter().cloned().fold(0.0, f64::max) / col.iter().cloned().fold(f64::INFINITY, f64::min);
    let ok = spread < 3.0 && van[2] <= 0.5 * van[0];
    Ok((
        ok,
        format!(
            "collapsed ESS mu1 [{:.0}, {:.0}, {:.0}] spread {spread:.2} (< 3); vanilla ESS mu1 [{:.0}, {:.0}, {:.0}], S=1e4/S=1e3 = {:.2} (<= 0.5)",
            col[0],
            col[1],
            col[2],
            van[0],
            van[1],
            van[2],
            van[2] / van[0]
        ),
    ))
}

fn c12_kernels() -> Check {
    let mut rng = rng_from_seed(1212);
    let mut norm_err: f64 = 0.0;
    for _ in 0..10 {
        let a = DMatrix::from_fn(20, 20, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eig = nalgebra::SymmetricEigen::new(a.tr_mul(&a)).eigenvalues.max().sqrt();
        let svd = a.clone().singular_values().max();
        let via_api = spectral_norm(&a, 1e-12, 100_000)?;
        let via_power = power_norm(&a, 1e-15, 1_000_000, 7)?;
        for v in [via_api, via_power, svd] {
            norm_err = norm_err.max((v - eig).abs());
        }
    }

    let n = 100_000;
    let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0f64 - 0.81).sqrt();
    let series: Vec<f64> = (0..n)
        .map(|_| {
            x = 0.9 * x + rng.sample::<f64, _>(StandardNormal);
            x
        })
        .collect();
    let ess = effective_sample_size(&series)?.ess;
    let expect = n as f64 * 0.1 / 1.9;
    let ess_rel = (ess / expect - 1.0).abs();

    // precision posteriors against the grid oracle, from a random state
    let spec = mcar(200.0).with_seed(1213);
    let data = simulate(&spec, EffectScales::new(1.0, 0.5, 2.0)?, 2.0)?;
    let mut state = data.truth.clone();
    state.a0 += 0.3;
    let posts = precision_posteriors(&state, &data.obs)?;
    let sums = [
        (state.a1.len(), state.a1.iter().map(|v| v * v).sum::<f64>()),
        (state.a2.len(), state.a2.iter().map(|v| v * v).sum::<f64>()),
        (data.obs.total(), state.residuals(&data.obs).map(|e| e * e).sum::<f64>()),
    ];
    let mut pdf_rel: f64 = 0.0;
    for (post, (n, ss)) in posts.iter().zip(sums) {
        let mean = post.mean();
        let taus: Vec<f64> = (1..=40).map(|k| mean * k as f64 / 16.0).collect();
        let oracle = common::precision_grid_oracle(n, ss, &taus);
        for (t, o) in taus.iter().zip(oracle) {
            if o > 1e-300 {
                pdf_rel = pdf_rel.max((post.ln_pdf(*t).exp() / o - 1.0).abs());
            }
        }
    }
    let ok = norm_err < 1e-8 && ess_rel < 0.15 && pdf_rel < 1e-10;
    Ok((
        ok,
        format!(
            "spectral norm max abs err {norm_err:.1e} (< 1e-8); AR(1) ESS rel err {ess_rel:.3} (< 0.15); precision pdf max rel err {pdf_rel:.1e} (< 1e-10)"
        ),
    ))
}

fn main() {
    println!("acceptance suite");
    let outcomes = [
        criterion(1, "B2 B1 factor identity", Some(10.0), c1_factor_identity),
        criterion(2, "complete balanced degeneracy", None, c2_complete_degeneracy),
        criterion(3, "posterior oracle R=C=3", Some(60.0), c3_posterior_oracle),
        criterion(4, "MCAR norm surrogate", Some(300.0), c4_mcar_norm),
        criterion(5, "bounded inhomogeneity radius surrogate", Some(300.0), c5_bounded_inhom_radius),
        criterion(6, "almost balanced radius surrogate", Some(300.0), c6_almost_balanced_radius),
        criterion(7, "row/column concentration", Some(120.0), c7_concentration),
        criterion(8, "observation matrix norm bound", None, c8_z_norm),
        criterion(9, "Latala ratio", None, c9_latala),
        criterion(10, "ESS separation", Some(600.0), c10_ess_separation),
        criterion(11, "ESS flatness in S", None, c11_ess_flatness),
        criterion(12, "numerical kernel oracles", None, c12_kernels),
    ];
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("{passed}/{} criteria passed", outcomes.len());
    if passed != outcomes.len() {
        std::process::exit(1);
    }
}
