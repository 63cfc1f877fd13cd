//! CSV and JSON formats for trajectories, MSD curves and the telescoping
//! table. Floats are written in shortest round-trip form so that reading a
//! file back reproduces the values bit for bit.
//!
//! | file | columns |
//! |------|---------|
//! | trajectory | `time,tagged_position[,x_0,x_1,...]` |
//! | MSD curve | `time,msd,stderr` |
//! | telescoping table | `N,energy,alpha_bound,n_samples,rejects` |

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corrector::TelescopingRow;
use crate::dynamics::TrajectoryRecord;
use crate::estimators::MsdCurve;
use crate::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

fn rows(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| Error::Parse(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok((header, out))
}

fn expect_header(found: &[String], expected: &[&str]) -> Result<()> {
    if found.len() < expected.len() || found.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::Parse(format!(
            "unexpected header {found:?}, expected {expected:?}"
        )));
    }
    Ok(())
}

pub fn trajectory_to_csv(record: &TrajectoryRecord) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let n = record.n_particles().unwrap_or(0);
    let mut header = vec!["time".to_string(), "tagged_position".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (k, t) in record.times.iter().enumerate() {
        let mut row = vec![t.to_string(), record.tagged_path[k].to_string()];
        if let Some(all) = &record.all_paths {
            row.extend(all[k].iter().map(f64::to_string));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

/// Metadata that accompanies a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySidecar {
    pub seed: u64,
    pub tagged_id: usize,
    pub collision_count: u64,
    pub box_length: Option<f64>,
    pub n_particles: Option<usize>,
}

pub fn trajectory_sidecar(record: &TrajectoryRecord) -> TrajectorySidecar {
    TrajectorySidecar {
        seed: record.seed,
        tagged_id: record.tagged_id,
        collision_count: record.collision_count,
        box_length: record.box_length,
        n_particles: record.n_particles(),
    }
}

pub fn trajectory_from_csv(text: &str, meta: &TrajectorySidecar) -> Result<TrajectoryRecord> {
    let (header, data) = rows(text)?;
    expect_header(&header, &["time", "tagged_position"])?;
    let has_all = header.len() > 2;
    Ok(TrajectoryRecord {
        times: data.iter().map(|r| r[0]).collect(),
        tagged_path: data.iter().map(|r| r[1]).collect(),
        all_paths: has_all.then(|| data.iter().map(|r| r[2..].to_vec()).collect()),
        tagged_id: meta.tagged_id,
        collision_count: meta.collision_count,
        seed: meta.seed,
        box_length: meta.box_length,
    })
}

pub fn msd_to_csv(curve: &MsdCurve) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time", "msd", "stderr"]).map_err(csv_err)?;
    for k in 0..curve.len() {
        w.write_record([
            curve.times[k].to_string(),
            curve.msd[k].to_string(),
            curve.stderr[k].to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn msd_from_csv(text: &str, n_replicas: usize) -> Result<MsdCurve> {
    let (header, data) = rows(text)?;
    expect_header(&header, &["time", "msd", "stderr"])?;
    Ok(MsdCurve {
        times: data.iter().map(|r| r[0]).collect(),
        msd: data.iter().map(|r| r[1]).collect(),
        stderr: data.iter().map(|r| r[2]).collect(),
        n_replicas,
    })
}

pub fn telescoping_to_csv(rows: &[TelescopingRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["N", "energy", "alpha_bound", "n_samples", "rejects"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.energy.to_string(),
            r.alpha_bound.to_string(),
            r.n_samples.to_string(),
            r.rejects.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// `(N, energy, alpha_bound, n_samples, rejects)`.
pub type TelescopingCsvRow = (usize, f64, f64, usize, usize);

/// Rows of a telescoping CSV.
pub fn telescoping_from_csv(text: &str) -> Result<Vec<TelescopingCsvRow>> {
    let (header, data) = rows(text)?;
    expect_header(&header, &["N", "energy", "alpha_bound", "n_samples", "rejects"])?;
    Ok(data
        .iter()
        .map(|r| (r[0] as usize, r[1], r[2], r[3] as usize, r[4] as usize))
        .collect())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_file(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)
}
