//! `run` and `validate` subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use subdiff_core::io::{msd_to_csv, to_json, write_file};

use crate::config::{ConfigError, ExperimentConfig};
use crate::experiments::{run_experiment, ExperimentOutput};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

pub const THREADS_ENV: &str = "SUBDIFF_THREADS";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Effective configuration, including command-line overrides.
    pub config: ExperimentConfig,
    pub build_id: String,
    pub wall_time_seconds: f64,
    /// Seed of replica `r` is `replica_seed(config.seed, r)`.
    pub replica_seeds: Vec<u64>,
    pub threads: usize,
    pub outputs: Vec<String>,
}

pub fn build_id() -> &'static str {
    env!("SUBDIFF_BUILD_ID")
}

/// Thread count from the flag, then `SUBDIFF_THREADS`, then the machine.
pub fn resolve_threads(flag: Option<usize>) -> Result<usize, ConfigError> {
    if let Some(t) = flag {
        return if t == 0 {
            Err(ConfigError::Invalid(vec!["threads: must be >= 1".into()]))
        } else {
            Ok(t)
        };
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(t),
            _ => Err(ConfigError::Invalid(vec![format!(
                "{THREADS_ENV}: expected a positive integer, got {v:?}"
            )])),
        };
    }
    Ok(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn effective_config(path: &Path, opts: &RunOptions) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &opts.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `cfg` on a dedicated pool of `threads` workers.
pub fn execute(cfg: &ExperimentConfig, threads: usize) -> subdiff_core::Result<(ExperimentOutput, f64)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    let start = Instant::now();
    let out = pool.install(|| run_experiment(cfg))?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// Writes all artifacts of a finished run into `cfg.output_dir`.
pub fn write_artifacts(
    cfg: &ExperimentConfig,
    out: &ExperimentOutput,
    threads: usize,
    wall: f64,
) -> std::io::Result<RunManifest> {
    let dir = &cfg.output_dir;
    let mut outputs = Vec::new();
    let mut put = |name: &str, text: &str| -> std::io::Result<()> {
        write_file(&dir.join(name), text)?;
        outputs.push(name.to_string());
        Ok(())
    };
    let io_err = |e: subdiff_core::Error| std::io::Error::other(e.to_string());
    if let Some(curve) = &out.msd {
        put("msd.csv", &msd_to_csv(curve).map_err(io_err)?)?;
    }
    put("fit.json", &to_json(&out.summary).map_err(io_err)?)?;
    if let Some(table) = &out.table_csv {
        put("table.csv", table)?;
    }
    for (name, svg) in &out.plots {
        put(name, svg)?;
    }
    outputs.push("manifest.json".into());
    let manifest = RunManifest {
        config: cfg.clone(),
        build_id: build_id().to_string(),
        wall_time_seconds: wall,
        replica_seeds: out.replica_seeds.clone(),
        threads,
        outputs,
    };
    write_file(&dir.join("manifest.json"), &to_json(&manifest).map_err(io_err)?)?;
    Ok(manifest)
}

pub fn run(path: &Path, opts: &RunOptions) -> u8 {
    let cfg = match effective_config(path, opts) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let threads = match resolve_threads(opts.threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&cfg.output_dir) {
        eprintln!("error: cannot create output_dir {}: {e}", cfg.output_dir.display());
        return EXIT_CONFIG;
    }
    let (out, wall) = match execute(&cfg, threads) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("numerical failure: {e}");
            return EXIT_NUMERICAL;
        }
    };
    match write_artifacts(&cfg, &out, threads, wall) {
        Ok(m) => {
            println!(
                "{:?} finished in {:.1}s on {} thread(s); wrote {} to {}",
                cfg.experiment,
                wall,
                threads,
                m.outputs.join(", "),
                cfg.output_dir.display()
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: cannot write artifacts to {}: {e}", cfg.output_dir.display());
            EXIT_CONFIG
        }
    }
}

pub fn validate(path: &Path) -> u8 {
    let cfg = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let violations = cfg.violations();
    if violations.is_empty() {
        println!("OK");
        print!("{}", cfg.to_toml());
        EXIT_OK
    } else {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        EXIT_CONFIG
    }
}
