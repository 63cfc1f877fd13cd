//! Experiment drivers. Replicas run in parallel on the current rayon pool;
//! every reduction happens in replica order so outputs do not depend on the
//! number of threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use subdiff_core::configspace::{Boundary, EnvironmentState};
use subdiff_core::corrector::{
    assemble_forms, evaluate_corrector, sample_palm_environments, solve_corrector,
    symmetric_pair_basis, telescoping_experiment, CorrectorSolution, CylinderFunction,
    QuadraticForm, TelescopingRow,
};
use subdiff_core::dynamics::{
    burn_in_dyson, environment_consistency, simulate_dyson, simulate_hard_rod_exact,
    simulate_pairwise, ConsistencyPoint, Recording, TrajectoryRecord,
};
use subdiff_core::estimators::{
    fit_scaling, gaussianity_of, msd_from_replica_curves, replica_msd, windowed_alpha, MsdCurve,
    ScalingFit, ScalingModel, WindowedSlope,
};
use subdiff_core::io::telescoping_to_csv;
use subdiff_core::models::{palm_condition, sample_beta_ensemble_periodic, sample_equilibrium, sample_poisson};
use subdiff_core::rng::{replica_seed, sub_seed};
use subdiff_core::{Error, Result};

use crate::config::{Averaging, ExperimentConfig, ExperimentKind, Frame};
use crate::plot::{Axis, Plot, Series};

/// Everything an experiment produces besides the manifest.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub msd: Option<MsdCurve>,
    /// Contents of `fit.json`.
    pub summary: serde_json::Value,
    /// Contents of `table.csv`.
    pub table_csv: Option<String>,
    pub replica_seeds: Vec<u64>,
    /// `(file name, svg)` pairs.
    pub plots: Vec<(String, String)>,
}

pub fn replica_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.replicas as u64).map(|r| replica_seed(cfg.seed, r)).collect()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    match cfg.experiment {
        ExperimentKind::FreeBaseline
        | ExperimentKind::MsdScan
        | ExperimentKind::DysonMsd
        | ExperimentKind::HardrodMsd => run_msd(cfg),
        ExperimentKind::CorrectorSolve => run_corrector(cfg),
        ExperimentKind::Telescoping => run_telescoping(cfg),
        ExperimentKind::EnvConsistency => run_env_consistency(cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianityResult {
    pub t: f64,
    pub variance_hypothesis: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsdSummary {
    pub experiment: ExperimentKind,
    pub replicas: usize,
    pub fit: ScalingFit,
    pub linear_fit: ScalingFit,
    /// Linear MSD slope over the fit window.
    pub self_diffusion: f64,
    pub windowed: Vec<WindowedSlope>,
    /// `slope[k] / slope[k + 1]` for consecutive windows.
    pub slope_ratios: Vec<f64>,
    pub gaussianity: Vec<GaussianityResult>,
    pub collision_count: u64,
}

struct ReplicaMsd {
    squared: Vec<f64>,
    tagged: Vec<f64>,
    collisions: u64,
}

fn simulate_replica(cfg: &ExperimentConfig, seed: u64, recording: Recording) -> Result<TrajectoryRecord> {
    let init_seed = sub_seed(seed, 100);
    let dyn_seed = sub_seed(seed, 200);
    match cfg.experiment {
        ExperimentKind::FreeBaseline => {
            let init = sample_poisson(&cfg.model, init_seed)?;
            simulate_pairwise(&init, &cfg.potential, &cfg.integrator, dyn_seed, recording)
        }
        ExperimentKind::MsdScan => {
            let init = sample_equilibrium(&cfg.model, &cfg.potential, init_seed)?;
            simulate_pairwise(&init, &cfg.potential, &cfg.integrator, dyn_seed, recording)
        }
        ExperimentKind::DysonMsd => {
            let beta = cfg.potential.beta;
            let init = sample_beta_ensemble_periodic(cfg.model.n_particles, beta, cfg.model.intensity, init_seed)?;
            let init = burn_in_dyson(&init, beta, cfg.integrator.dt, cfg.analysis.burn_in, sub_seed(seed, 300))?;
            simulate_dyson(&init, beta, &cfg.integrator, dyn_seed, recording)
        }
        ExperimentKind::HardrodMsd => {
            let ispec = &cfg.integrator;
            simulate_hard_rod_exact(
                cfg.model.n_particles,
                cfg.model.intensity,
                cfg.potential.range,
                ispec.t_end,
                ispec.dt * ispec.record_stride as f64,
                dyn_seed,
                recording,
            )
        }
        _ => unreachable!("not an MSD experiment"),
    }
}

fn run_msd(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let seeds = replica_seeds(cfg);
    let averaging = cfg.averaging();
    let com = cfg.analysis.frame == Frame::CenterOfMass;
    let recording = if averaging == Averaging::Tagged && !com {
        Recording::TaggedOnly
    } else {
        Recording::AllPaths
    };
    let gauss_times = cfg.analysis.gaussianity_times.clone();
    let results: Vec<(Vec<f64>, ReplicaMsd)> = seeds
        .par_iter()
        .map(|&seed| {
            let rec = simulate_replica(cfg, seed, recording)?;
            let squared = match averaging {
                Averaging::Tagged if !com => {
                    let x0 = rec.tagged_path[0];
                    rec.tagged_path.iter().map(|x| (x - x0).powi(2)).collect()
                }
                Averaging::Tagged => replica_msd(&rec, Some(&[rec.tagged_id]), com)?,
                Averaging::AllParticles => replica_msd(&rec, None, com)?,
                Averaging::CentralHalf => {
                    let n = rec.n_particles().unwrap_or(1);
                    let tags: Vec<usize> = (n / 4..(3 * n / 4).max(n / 4 + 1)).collect();
                    replica_msd(&rec, Some(&tags), com)?
                }
            };
            let tagged = gauss_times
                .iter()
                .map(|&t| {
                    let k = nearest(&rec.times, t);
                    rec.tagged_path[k] - rec.tagged_path[0]
                })
                .collect();
            Ok((
                rec.times,
                ReplicaMsd {
                    squared,
                    tagged,
                    collisions: rec.collision_count,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let times = results[0].0.clone();
    if results.iter().any(|(t, _)| *t != times) {
        return Err(Error::MismatchedGrids);
    }
    let curves: Vec<Vec<f64>> = results.iter().map(|(_, r)| r.squared.clone()).collect();
    let curve = msd_from_replica_curves(&times, &curves)?;
    let window = cfg.fit_window();
    let model = cfg.fit_model();
    let fit_curve = match model {
        ScalingModel::Linear => curve.clone(),
        _ => curve.log_spaced(cfg.analysis.points_per_decade),
    };
    let fit = fit_scaling(&fit_curve, model, window)?;
    let linear_fit = fit_scaling(&curve, ScalingModel::Linear, window)?;
    let windowed = windowed_alpha(&curve, &cfg.window_centers())?;
    let slope_ratios = windowed.windows(2).map(|w| w[0].slope / w[1].slope).collect();
    let mut gaussianity = Vec::new();
    for (j, &t) in gauss_times.iter().enumerate() {
        let k = nearest(&times, t);
        let tk = times[k];
        let var = cfg
            .analysis
            .gaussianity_variance
            .unwrap_or(curve.msd[k] / tk);
        let disp: Vec<f64> = results.iter().map(|(_, r)| r.tagged[j]).collect();
        let ks = gaussianity_of(&disp, tk, var)?;
        gaussianity.push(GaussianityResult {
            t: tk,
            variance_hypothesis: var,
            statistic: ks.statistic,
            p_value: ks.p_value,
            n: ks.n,
        });
    }
    let summary = MsdSummary {
        experiment: cfg.experiment,
        replicas: cfg.replicas,
        fit,
        linear_fit,
        self_diffusion: linear_fit.exponent_or_slope,
        windowed,
        slope_ratios,
        gaussianity,
        collision_count: results.iter().map(|(_, r)| r.collisions).sum(),
    };
    let plot = msd_plot(cfg, &curve, &summary.fit);
    Ok(ExperimentOutput {
        msd: Some(curve),
        summary: serde_json::to_value(&summary).expect("summary serializes"),
        table_csv: None,
        replica_seeds: seeds,
        plots: vec![("msd.svg".into(), plot)],
    })
}

fn nearest(times: &[f64], t: f64) -> usize {
    times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
        .map(|(k, _)| k)
        .unwrap_or(0)
}

fn msd_plot(cfg: &ExperimentConfig, curve: &MsdCurve, fit: &ScalingFit) -> String {
    let data: Vec<(f64, f64)> = curve
        .times
        .iter()
        .zip(&curve.msd)
        .filter(|(t, m)| **t > 0.0 && **m > 0.0)
        .map(|(t, m)| (*t, *m))
        .collect();
    let (lo, hi) = fit.window;
    let fit_pts: Vec<(f64, f64)> = (0..=40)
        .map(|k| lo.max(1e-12) * (hi / lo.max(1e-12)).powf(k as f64 / 40.0))
        .map(|t| (t, fit.predict(t)))
        .filter(|p| p.1 > 0.0)
        .collect();
    let free: Vec<(f64, f64)> = data.iter().map(|&(t, _)| (t, t)).collect();
    Plot {
        title: format!("{:?}: tagged-particle MSD", cfg.experiment),
        x: Axis::log("t"),
        y: Axis::log("MSD"),
        series: vec![
            Series::line("msd", data, "#1f77b4"),
            Series::dashed(&format!("{:?} fit", fit.model), fit_pts, "#d62728"),
            Series::dashed("free (t)", free, "#7f7f7f"),
        ],
    }
    .to_svg()
}

fn palm_samples(cfg: &ExperimentConfig) -> Result<Vec<EnvironmentState>> {
    sample_palm_environments(&cfg.model, &cfg.potential, cfg.analysis.palm_samples, cfg.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorSummary {
    pub form: QuadraticForm,
    pub solution: CorrectorSolution,
    /// `(shift_part, interaction_part)` re-evaluated sample by sample.
    pub direct_parts: (f64, f64),
}

pub fn corrector_basis(cfg: &ExperimentConfig) -> Vec<CylinderFunction> {
    let mut basis: Vec<CylinderFunction> = cfg.analysis.n_list.iter().map(|&n| CylinderFunction::phi(n)).collect();
    basis.extend(symmetric_pair_basis(&cfg.analysis.basis_widths));
    basis
}

fn run_corrector(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let samples = palm_samples(cfg)?;
    let basis = corrector_basis(cfg);
    let form = assemble_forms(&basis, &samples)?;
    let solution = solve_corrector(&form, cfg.analysis.ridge)?;
    let direct_parts = evaluate_corrector(&basis, &solution.coefficients, &samples)?;
    let summary = CorrectorSummary {
        form,
        solution,
        direct_parts,
    };
    Ok(ExperimentOutput {
        msd: None,
        summary: serde_json::to_value(&summary).expect("summary serializes"),
        table_csv: None,
        replica_seeds: vec![cfg.seed],
        plots: vec![],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelescopingSummary {
    pub rows: Vec<TelescopingRow>,
    pub total_samples: usize,
}

fn run_telescoping(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let samples = palm_samples(cfg)?;
    let rows = telescoping_experiment(&samples, &cfg.analysis.n_list, cfg.analysis.collision_tolerance)?;
    let table = telescoping_to_csv(&rows)?;
    let plot = Plot {
        title: "variational bound from phi_N".into(),
        x: Axis::log("N"),
        y: Axis::log("alpha bound"),
        series: vec![
            Series::markers(
                "alpha_bound",
                rows.iter().map(|r| (r.n as f64, r.alpha_bound)).collect(),
                "#1f77b4",
            ),
            Series::dashed("1/N", rows.iter().map(|r| (r.n as f64, 1.0 / r.n as f64)).collect(), "#7f7f7f"),
        ],
    }
    .to_svg();
    let summary = TelescopingSummary {
        total_samples: samples.len(),
        rows,
    };
    Ok(ExperimentOutput {
        msd: None,
        summary: serde_json::to_value(&summary).expect("summary serializes"),
        table_csv: Some(table),
        replica_seeds: vec![cfg.seed],
        plots: vec![("table.svg".into(), plot)],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConsistencySummary {
    /// Replica means per step size.
    pub mean: Vec<ConsistencyPoint>,
    /// Mean reference discrepancy ratio between consecutive step sizes.
    pub halving_ratios: Vec<f64>,
    pub per_replica: Vec<Vec<ConsistencyPoint>>,
}

/// Initial environment for one replica: reduced Palm sample of an
/// equilibrium draw, with the surrounding points taken to the real line.
pub fn env_initial_state(cfg: &ExperimentConfig, seed: u64) -> Result<EnvironmentState> {
    let config = sample_equilibrium(&cfg.model, &cfg.potential, sub_seed(seed, 100))?;
    let palm = palm_condition(&config, sub_seed(seed, 101))?;
    EnvironmentState::new(0.0, palm.positions().to_vec(), Boundary::Unbounded)
}

fn run_env_consistency(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let seeds = replica_seeds(cfg);
    let a = &cfg.analysis;
    let per_replica: Vec<Vec<ConsistencyPoint>> = seeds
        .par_iter()
        .map(|&seed| {
            let state = env_initial_state(cfg, seed)?;
            environment_consistency(&state, &cfg.potential, &a.env_dts, a.fine_dt, cfg.integrator.t_end, sub_seed(seed, 200))
        })
        .collect::<Result<_>>()?;
    let r = per_replica.len() as f64;
    let mean: Vec<ConsistencyPoint> = (0..a.env_dts.len())
        .map(|k| ConsistencyPoint {
            dt: a.env_dts[k],
            matched_discrepancy: per_replica.iter().map(|p| p[k].matched_discrepancy).sum::<f64>() / r,
            reference_discrepancy: per_replica.iter().map(|p| p[k].reference_discrepancy).sum::<f64>() / r,
        })
        .collect();
    let halving_ratios = mean
        .windows(2)
        .map(|w| w[1].reference_discrepancy / w[0].reference_discrepancy)
        .collect();
    let mut table = String::from("dt,matched_discrepancy,reference_discrepancy,reference_over_dt\n");
    for p in &mean {
        table.push_str(&format!(
            "{},{},{},{}\n",
            p.dt,
            p.matched_discrepancy,
            p.reference_discrepancy,
            p.reference_discrepancy / p.dt
        ));
    }
    let summary = EnvConsistencySummary {
        mean,
        halving_ratios,
        per_replica,
    };
    Ok(ExperimentOutput {
        msd: None,
        summary: serde_json::to_value(&summary).expect("summary serializes"),
        table_csv: Some(table),
        replica_seeds: seeds,
        plots: vec![],
    })
}
