use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_subdiff");

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn subdiff(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("SUBDIFF_THREADS").output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small free-particle run: 100 replicas of 200 particles.
fn small_free(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(configs_dir().join("free_baseline.toml"))
        .unwrap()
        .replace("replicas = 200", "replicas = 100")
        .replace("n_particles = 1000", "n_particles = 200")
        .replace("box_length = 1000.0", "box_length = 200.0");
    let path = dir.join("free.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn free_run_writes_artifacts_and_reproduces_from_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_free(tmp.path());
    let out1 = tmp.path().join("a");
    let o = subdiff(&["run", cfg.to_str().unwrap(), "--output-dir", out1.to_str().unwrap(), "--threads", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let msd = read(&out1.join("msd.csv"));
    assert!(msd.starts_with("time,msd,stderr\n"));
    let fit: serde_json::Value = serde_json::from_str(&read(&out1.join("fit.json"))).unwrap();
    let slope = fit["fit"]["exponent_or_slope"].as_f64().unwrap();
    assert!((0.9..=1.1).contains(&slope), "slope {slope}");
    let manifest: serde_json::Value = serde_json::from_str(&read(&out1.join("manifest.json"))).unwrap();
    assert_eq!(manifest["replica_seeds"].as_array().unwrap().len(), 100);
    assert_eq!(manifest["threads"], 2);
    assert!(manifest["build_id"].as_str().is_some_and(|s| !s.is_empty()));

    // Re-run from the manifest on a different thread count.
    let out2 = tmp.path().join("b");
    let o = subdiff(&[
        "run",
        out1.join("manifest.json").to_str().unwrap(),
        "--output-dir",
        out2.to_str().unwrap(),
        "--threads",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(msd, read(&out2.join("msd.csv")));
    assert_eq!(read(&out1.join("fit.json")), read(&out2.join("fit.json")));
}

#[test]
fn seed_override_changes_output() {
    let tmp = tempfile::tempdir().unwrap();
    let text = read(&small_free(tmp.path())).replace("replicas = 100", "replicas = 4");
    let cfg = write_config(tmp.path(), "tiny.toml", &text);
    let run = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        let o = subdiff(&["run", cfg.to_str().unwrap(), "--seed", seed, "--output-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        read(&out.join("msd.csv"))
    };
    assert_eq!(run("5", "x"), run("5", "y"));
    assert_ne!(run("5", "x"), run("6", "z"));
}

#[test]
fn threads_env_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let text = read(&small_free(tmp.path())).replace("replicas = 100", "replicas = 2");
    let cfg = write_config(tmp.path(), "tiny.toml", &text);
    let out = tmp.path().join("o");
    let o = Command::new(BIN)
        .args(["run", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()])
        .env("SUBDIFF_THREADS", "3")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["threads"], 3);

    let o = Command::new(BIN)
        .args(["run", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()])
        .env("SUBDIFF_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("SUBDIFF_THREADS"));
}

#[test]
fn negative_dt_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = read(&configs_dir().join("free_baseline.toml")).replace("dt = 0.1", "dt = -0.1");
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    for cmd in ["run", "validate"] {
        let o = subdiff(&[cmd, cfg.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{cmd}");
        assert!(stderr(&o).contains("dt"), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn cutoff_beyond_half_box_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let text = read(&configs_dir().join("dyson_msd.toml")).replace("drift_cutoff = 2560.0", "drift_cutoff = 3000.0");
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    let o = subdiff(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("drift_cutoff"), "{}", stderr(&o));
}

#[test]
fn missing_experiment_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let text = read(&configs_dir().join("free_baseline.toml")).replace("experiment = \"free_baseline\"", "");
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    let o = subdiff(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("experiment"), "{}", stderr(&o));
}

#[test]
fn shipped_configs_validate() {
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let o = subdiff(&["validate", path.to_str().unwrap()]);
        assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("OK\n"));
    }
}

#[test]
fn telescoping_table_decays() {
    let tmp = tempfile::tempdir().unwrap();
    let text = read(&configs_dir().join("telescoping_hardrods.toml")).replace("palm_samples = 10000", "palm_samples = 500");
    let cfg = write_config(tmp.path(), "tel.toml", &text);
    let out = tmp.path().join("t");
    let o = subdiff(&["run", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = read(&out.join("table.csv"));
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("N,energy,alpha_bound,n_samples,rejects"));
    let last: Vec<&str> = lines.last().unwrap().split(',').collect();
    assert_eq!(last[0], "64");
    assert!(last[2].parse::<f64>().unwrap() < 0.02);
    assert!(out.join("table.svg").exists());
}
