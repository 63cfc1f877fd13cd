//! End-to-end acceptance suite. Each criterion prints one PASS/FAIL line;
//! the process fails if any criterion fails.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use subdiff_cli::config::ExperimentConfig;
use subdiff_cli::experiments::{
    corrector_basis, CorrectorSummary, EnvConsistencySummary, MsdSummary, TelescopingSummary,
};
use subdiff_cli::runner::{execute, resolve_threads, write_artifacts};
use subdiff_core::configspace::{from_environment, label_ordered, shift, to_environment, Boundary, Configuration};
use subdiff_core::corrector::{
    assemble_forms, sample_palm_environments, solve_corrector, symmetric_pair_basis, telescoping_experiment,
    CylinderFunction, Profile,
};
use subdiff_core::dynamics::{simulate_dyson, simulate_pairwise, IntegratorSpec, Recording, Scheme};
use subdiff_core::models::{
    pair_drift, sample_equilibrium, sample_gibbs, PotentialSpec, SamplerKind, SamplerSpec,
};
use subdiff_core::rng::{replica_seed, rng_from_seed};
use subdiff_core::stats::ks_two_sample;

struct Outcome {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str, out: &tempfile::TempDir) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&configs_dir().join(name)).expect("config parses");
    cfg.validate().expect("config is valid");
    cfg.output_dir = out.path().join(name.trim_end_matches(".toml"));
    cfg
}

/// Runs a config through the same path as `subdiff run` and returns the
/// parsed `fit.json` together with the wall time.
fn run_config<T: serde::de::DeserializeOwned>(name: &str, out: &tempfile::TempDir) -> (T, ExperimentConfig, f64) {
    let cfg = load(name, out);
    let threads = resolve_threads(None).unwrap();
    let (result, wall) = execute(&cfg, threads).unwrap_or_else(|e| panic!("{name}: {e}"));
    write_artifacts(&cfg, &result, threads, wall).expect("artifacts written");
    let summary = serde_json::from_value(result.summary).expect("summary schema");
    (summary, cfg, wall)
}

fn criterion_1(out: &tempfile::TempDir) -> Outcome {
    let (s, _, wall): (MsdSummary, _, _) = run_config("free_baseline.toml", out);
    let slope = s.fit.exponent_or_slope;
    let gauss_ok = s.gaussianity.iter().all(|g| g.p_value > 0.01);
    let times_ok = s.gaussianity.iter().map(|g| g.t).collect::<Vec<_>>() == vec![1.0, 10.0];
    Outcome {
        id: 1,
        title: "free baseline",
        pass: (0.95..=1.05).contains(&slope) && gauss_ok && times_ok && wall <= 120.0,
        detail: format!(
            "slope {slope:.4} in [0.95, 1.05]; KS p at t=1,10: {}",
            s.gaussianity.iter().map(|g| format!("{:.3}", g.p_value)).collect::<Vec<_>>().join(", ")
        ),
        seconds: wall,
    }
}

fn criterion_2(out: &tempfile::TempDir) -> Outcome {
    let (s, _, wall): (MsdSummary, _, _) = run_config("hardrod_msd.toml", out);
    let exponent = s.fit.exponent_or_slope;
    let first = s.windowed.first().unwrap();
    let last = s.windowed.last().unwrap();
    let decay = first.slope / last.slope;
    Outcome {
        id: 2,
        title: "hard rods",
        pass: (0.43..=0.57).contains(&exponent)
            && s.fit.window == (100.0, 10_000.0)
            && first.center == 100.0
            && last.center == 10_000.0
            && decay >= 3.0
            && wall <= 600.0,
        detail: format!(
            "exponent {exponent:.4} in [0.43, 0.57]; windowed slopes {} (decay x{decay:.2} >= 3)",
            s.windowed.iter().map(|w| format!("{:.4}", w.slope)).collect::<Vec<_>>().join(" > ")
        ),
        seconds: wall,
    }
}

fn criterion_3(out: &tempfile::TempDir) -> Outcome {
    let (s, cfg, wall): (MsdSummary, _, _) = run_config("dyson_msd.toml", out);
    let r2 = s.fit.r_squared;
    let ratios_ok = s.slope_ratios.len() == 2 && s.slope_ratios.iter().all(|&r| r >= 3.0);
    Outcome {
        id: 3,
        title: "Dyson beta=2 log-t MSD",
        pass: r2 >= 0.95
            && s.fit.window == (10.0, cfg.integrator.t_end)
            && cfg.integrator.t_end == 1000.0
            && ratios_ok
            && wall <= 1800.0,
        detail: format!(
            "N={} rho={}: log-linear R^2 {r2:.4} over [10, 1000], slope {:.3}; per-decade slope ratios {} (>= 3)",
            cfg.model.n_particles,
            cfg.model.intensity,
            s.fit.exponent_or_slope,
            s.slope_ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", ")
        ),
        seconds: wall,
    }
}

/// Eigenvalues of `diag(lambda0) + sqrt(t) G` with `G` from the Gaussian
/// unitary ensemble normalised so that the eigenvalues follow Dyson's
/// model with unit-variance noise at beta = 2.
fn matrix_bm_eigenvalues(lambda0: &[f64], t: f64, seed: u64) -> Vec<f64> {
    let n = lambda0.len();
    let mut rng = rng_from_seed(seed);
    let s = t.sqrt();
    let mut h = DMatrix::<Complex<f64>>::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = Complex::new(lambda0[i] + s * rng.sample::<f64, _>(StandardNormal), 0.0);
        for j in i + 1..n {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let z = Complex::new(re, im) * (s / 2f64.sqrt());
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let n = 16;
    let t = 1.0;
    let lambda0: Vec<f64> = (0..n).map(|i| i as f64 - 7.5).collect();
    let init = Configuration::unbounded(lambda0.clone()).unwrap();
    let ispec = IntegratorSpec::new(1e-3, t, Scheme::AdaptiveEuler, f64::INFINITY).with_stride(1000);
    let sde: Vec<Vec<f64>> = (0..500u64)
        .into_par_iter()
        .map(|r| {
            let rec = simulate_dyson(&init, 2.0, &ispec, replica_seed(41, r), Recording::AllPaths).unwrap();
            let mut last = rec.all_paths.unwrap().pop().unwrap();
            last.sort_by(f64::total_cmp);
            last
        })
        .collect();
    let matrix: Vec<Vec<f64>> = (0..5000u64)
        .into_par_iter()
        .map(|r| matrix_bm_eigenvalues(&lambda0, t, replica_seed(43, r)))
        .collect();
    // Tagged particle: rank 8 (initially at 0.5); the extremes are checked
    // as well.
    let ranks = [8usize, 0, n - 1];
    let tests: Vec<(usize, f64)> = ranks
        .iter()
        .map(|&k| {
            let a: Vec<f64> = sde.iter().map(|v| v[k]).collect();
            let b: Vec<f64> = matrix.iter().map(|v| v[k]).collect();
            (k, ks_two_sample(&a, &b).p_value)
        })
        .collect();
    let seconds = start.elapsed().as_secs_f64();
    Outcome {
        id: 4,
        title: "Dyson integrator vs matrix Brownian motion",
        pass: tests.iter().all(|&(_, p)| p > 0.01) && seconds <= 300.0,
        detail: format!(
            "N=16, t=1, 500 SDE replicas vs 5000 matrices; KS p by rank: {}",
            tests.iter().map(|(k, p)| format!("#{k} {p:.3}")).collect::<Vec<_>>().join(", ")
        ),
        seconds,
    }
}

fn criterion_5(out: &tempfile::TempDir) -> Outcome {
    let (s, _, wall): (EnvConsistencySummary, _, _) = run_config("env_consistency.toml", out);
    let at = |dt: f64| s.mean.iter().find(|p| p.dt == dt).unwrap();
    let p1 = at(1e-4);
    let p2 = at(5e-5);
    let ratio = p2.reference_discrepancy / p1.reference_discrepancy;
    let matched = s.mean.iter().map(|p| p.matched_discrepancy).fold(0.0, f64::max);
    Outcome {
        id: 5,
        title: "environment process consistency",
        pass: p1.reference_discrepancy <= 10.0 * 1e-4
            && (0.4..=0.6).contains(&ratio)
            && matched < 1e-10
            && wall <= 60.0,
        detail: format!(
            "sup error {:.2e} = {:.2} dt at dt=1e-4 (<= 10 dt); halving ratio {ratio:.3} (0.5 expected); same-dt scheme gap {matched:.1e}",
            p1.reference_discrepancy,
            p1.reference_discrepancy / 1e-4
        ),
        seconds: wall,
    }
}

fn criterion_6(out: &tempfile::TempDir) -> Outcome {
    let start = Instant::now();
    let cfg = load("telescoping_hardrods.toml", out);
    let mut samples = sample_palm_environments(&cfg.model, &cfg.potential, cfg.analysis.palm_samples, cfg.seed).unwrap();
    let dyson = SamplerSpec::new(SamplerKind::BetaEnsemble, 1.0, 256).unwrap();
    samples.extend(sample_palm_environments(&dyson, &PotentialSpec::log(2.0), 2000, cfg.seed + 1).unwrap());
    let ns = [1usize, 2, 3, 4, 5, 7, 8, 16, 32, 64];
    let mut exact = true;
    let mut worst_solve = 0.0f64;
    for &n in &ns {
        let form = assemble_forms(&[CylinderFunction::phi(n)], &samples).unwrap();
        exact &= form.gram_shift[0][0] == 0.5
            && form.gram_interaction[0][0] == 1.0 / (2.0 * n as f64)
            && form.rhs[0] == 0.5
            && form.rhs_stderr[0] == 0.0
            && form.skipped == 0;
        let sol = solve_corrector(&form, 0.0).unwrap();
        let c = 0.5 / (0.5 + 1.0 / (2.0 * n as f64));
        let alpha = 2.0 * (0.5 - c * 0.5);
        worst_solve = worst_solve
            .max((sol.coefficients[0] - c).abs())
            .max((sol.alpha_estimate - alpha).abs())
            .max((0.5 * sol.alpha_estimate - sol.energy_parts.0 - sol.energy_parts.1).abs());
    }
    let rows = telescoping_experiment(&samples, &ns, cfg.analysis.collision_tolerance).unwrap();
    let violations: usize = rows.iter().map(|r| r.bound_violations + r.cauchy_violations).sum();
    let checked: usize = rows.iter().map(|r| r.n_samples).sum();
    let seconds = start.elapsed().as_secs_f64();
    Outcome {
        id: 6,
        title: "corrector exactness for phi_N",
        pass: exact && worst_solve <= 1e-12 && violations == 0 && checked > 0,
        detail: format!(
            "{} hard-rod + Dyson Palm samples, N in {ns:?}: assembled values exact = {exact}; closed-form solve error {worst_solve:.1e}; energy/Cauchy bound violations {violations} of {checked}",
            samples.len()
        ),
        seconds,
    }
}

fn criterion_7(out: &tempfile::TempDir) -> Outcome {
    let (tel, tcfg, w1): (TelescopingSummary, _, _) = run_config("telescoping_hardrods.toml", out);
    let (cor, ccfg, w2): (CorrectorSummary, _, _) = run_config("corrector_poisson.toml", out);
    let ns: Vec<usize> = tel.rows.iter().map(|r| r.n).collect();
    let bound_ok = tel.rows.iter().all(|r| r.alpha_bound <= 1.0 / r.n as f64);
    let rejects: usize = tel.rows.iter().map(|r| r.rejects).sum();
    let last = tel.rows.last().unwrap().alpha_bound;
    let alpha = cor.solution.alpha_estimate;
    let symmetric = corrector_basis(&ccfg)
        .iter()
        .all(|f| matches!(f, CylinderFunction::PairSum { profile: Profile::Gaussian { .. } }));
    let seconds = w1 + w2;
    Outcome {
        id: 7,
        title: "telescoping vanishing vs Poisson contrast",
        pass: ns == vec![1, 2, 4, 8, 16, 32, 64]
            && tcfg.analysis.palm_samples == 10_000
            && bound_ok
            && rejects == 0
            && last < 0.02
            && symmetric
            && (0.9..=1.1).contains(&alpha)
            && seconds <= 300.0,
        detail: format!(
            "hard rods: alpha_bound {} (each <= 1/N), rejects {rejects}; Poisson even pair sums: alpha {alpha:.4}",
            tel.rows.iter().map(|r| format!("{:.4}", r.alpha_bound)).collect::<Vec<_>>().join(", ")
        ),
        seconds,
    }
}

fn check(name: &str, ok: bool, failures: &mut Vec<String>) {
    if !ok {
        failures.push(name.to_string());
    }
}

fn criterion_8(out: &tempfile::TempDir) -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut rng = rng_from_seed(88);

    // Shift bijectivity and label covariance on dyadic grids, where every
    // sum involved is exact.
    for case in 0..200 {
        let periodic = case % 2 == 0;
        let n = 2 + case % 17;
        let mut pts: Vec<f64> = (0..n).map(|_| (rng.random_range(0..1 << 12) as f64) / 64.0).collect();
        pts.dedup();
        let boundary = if periodic { Boundary::periodic(64.0) } else { Boundary::Unbounded };
        let c = Configuration::new(pts, boundary).unwrap();
        let x = (rng.random_range(-1024..1024) as f64) / 32.0;
        check("shift bijectivity", shift(&shift(&c, x), -x) == c, &mut failures);
        let origin = (rng.random_range(0..1 << 12) as f64) / 64.0 + 1.0 / 128.0;
        let a = label_ordered(&c, origin).unwrap();
        let b = label_ordered(&shift(&c, x), origin + x).unwrap();
        let moved: Vec<(i64, f64)> = a
            .positions_by_label()
            .into_iter()
            .map(|(l, p)| (l, boundary.wrap(p + x)))
            .collect();
        check("label covariance", moved == b.positions_by_label(), &mut failures);
        check("environment round trip", from_environment(&to_environment(&a)) == c, &mut failures);
    }

    // Drift against finite differences of the potential.
    let pots = [PotentialSpec::smooth_compact(1.3, 1.7, 2.0), PotentialSpec::log(2.0), PotentialSpec::log(4.0)];
    for pot in pots {
        for _ in 0..200 {
            let mut x: f64 = rng.random_range(-1.6..1.6);
            if x.abs() < 0.05 {
                x = 0.5;
            }
            let h = 1e-5;
            let fd = -0.5 * pot.beta * (pot.psi(x + h) - pot.psi(x - h)) / (2.0 * h);
            let d = pair_drift(&pot, x).unwrap();
            check("drift finite differences", (d - fd).abs() <= 1e-6 * d.abs().max(1.0), &mut failures);
        }
    }

    // Gram symmetry / PSD and variational monotonicity on Gibbs samples.
    let gibbs = SamplerSpec::new(SamplerKind::GibbsMcmc, 1.0, 60).unwrap();
    let pot = PotentialSpec::smooth_compact(1.0, 1.0, 2.0);
    let samples = sample_palm_environments(&gibbs, &pot, 400, 8).unwrap();
    let mut basis = vec![CylinderFunction::phi(1), CylinderFunction::phi(3)];
    basis.extend(symmetric_pair_basis(&[0.5, 1.0]));
    basis.push(CylinderFunction::pair_sum(Profile::OddGaussian { width: 0.7 }));
    let form = assemble_forms(&basis, &samples).unwrap();
    check("gram symmetric PSD", form.check_invariants().is_ok(), &mut failures);
    let mut prev = f64::INFINITY;
    for k in 1..=basis.len() {
        let idx: Vec<usize> = (0..k).collect();
        let a = solve_corrector(&form.restrict(&idx), 0.0).unwrap().alpha_estimate;
        check("variational monotonicity", a <= prev + 1e-10, &mut failures);
        prev = a;
    }

    // Determinism by seed, in the library and through the runner.
    let init = sample_gibbs(&gibbs, &pot, 5).unwrap().config;
    let ispec = IntegratorSpec::new(0.01, 1.0, Scheme::EulerMaruyama, 1.0);
    let r1 = simulate_pairwise(&init, &pot, &ispec, 9, Recording::AllPaths).unwrap();
    let r2 = simulate_pairwise(&init, &pot, &ispec, 9, Recording::AllPaths).unwrap();
    check("simulation determinism", r1 == r2, &mut failures);
    check(
        "sampler determinism",
        sample_equilibrium(&gibbs, &pot, 3).unwrap() == sample_equilibrium(&gibbs, &pot, 3).unwrap(),
        &mut failures,
    );
    let mut cfg = load("free_baseline.toml", out);
    cfg.replicas = 8;
    cfg.model = SamplerSpec::new(SamplerKind::Poisson, 1.0, 100).unwrap();
    cfg.integrator.t_end = 10.0;
    cfg.integrator.record_stride = 1;
    cfg.analysis.fit_window = Some((1.0, 10.0));
    cfg.analysis.gaussianity_times.clear();
    cfg.analysis.window_centers = vec![1.0, 10.0];
    let a = execute(&cfg, 1).unwrap().0;
    let b = execute(&cfg, 2).unwrap().0;
    check("runner determinism across thread counts", a.msd == b.msd && a.summary == b.summary, &mut failures);

    failures.dedup();
    let seconds = start.elapsed().as_secs_f64();
    Outcome {
        id: 8,
        title: "invariance and property suites",
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            "shift bijectivity, label covariance, environment round trip, drift FD (1e-6), Gram symmetry/PSD, variational monotonicity, determinism by seed".into()
        } else {
            format!("failed: {}", failures.join(", "))
        },
        seconds,
    }
}

fn main() {
    let out = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<Box<dyn Fn() -> Outcome>> = vec![
        Box::new(|| criterion_1(&out)),
        Box::new(|| criterion_2(&out)),
        Box::new(|| criterion_3(&out)),
        Box::new(criterion_4),
        Box::new(|| criterion_5(&out)),
        Box::new(|| criterion_6(&out)),
        Box::new(|| criterion_7(&out)),
        Box::new(|| criterion_8(&out)),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (k, run) in criteria.iter().enumerate() {
        let id = k as u32 + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} [{}] {}: {} ({:.1}s)",
            o.id,
            if o.pass { "PASS" } else { "FAIL" },
            o.title,
            o.detail,
            o.seconds
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
