//! Mean-squared displacement curves, scaling fits and marginal Gaussianity
//! checks for tagged-particle paths.

use serde::{Deserialize, Serialize};

use crate::dynamics::TrajectoryRecord;
use crate::stats::{ks_one_sample, normal_cdf, KsResult};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsdCurve {
    pub times: Vec<f64>,
    pub msd: Vec<f64>,
    /// Standard error of `msd` across replicas.
    pub stderr: Vec<f64>,
    pub n_replicas: usize,
}

impl MsdCurve {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Keeps roughly `per_decade` points per decade of positive time (plus
    /// the origin), so that log-scale fits are not dominated by late times.
    pub fn log_spaced(&self, per_decade: usize) -> MsdCurve {
        let mut keep = Vec::new();
        let mut last_bucket = i64::MIN;
        for (k, &t) in self.times.iter().enumerate() {
            if t <= 0.0 {
                keep.push(k);
                continue;
            }
            let bucket = (t.log10() * per_decade as f64).floor() as i64;
            if bucket != last_bucket {
                keep.push(k);
                last_bucket = bucket;
            }
        }
        MsdCurve {
            times: keep.iter().map(|&k| self.times[k]).collect(),
            msd: keep.iter().map(|&k| self.msd[k]).collect(),
            stderr: keep.iter().map(|&k| self.stderr[k]).collect(),
            n_replicas: self.n_replicas,
        }
    }

    /// Value at the grid time closest to `t`.
    pub fn at(&self, t: f64) -> Option<f64> {
        nearest_index(&self.times, t).map(|k| self.msd[k])
    }
}

fn nearest_index(times: &[f64], t: f64) -> Option<usize> {
    times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
        .map(|(k, _)| k)
}

fn check_grids<'a, I: IntoIterator<Item = &'a [f64]>>(reference: &[f64], grids: I) -> Result<()> {
    for g in grids {
        if g.len() != reference.len() || g.iter().zip(reference).any(|(a, b)| a != b) {
            return Err(Error::MismatchedGrids);
        }
    }
    Ok(())
}

/// Replica-averaged squared displacement of the tagged particle.
pub fn msd(records: &[TrajectoryRecord]) -> Result<MsdCurve> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("records", "at least one record is required"))?;
    check_grids(&first.times, records.iter().map(|r| r.times.as_slice()))?;
    let curves: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let x0 = r.tagged_path[0];
            r.tagged_path.iter().map(|x| (x - x0).powi(2)).collect()
        })
        .collect();
    msd_from_replica_curves(&first.times, &curves)
}

/// Combines per-replica squared-displacement curves (each already averaged
/// within its replica) into a mean curve with replica-wise standard errors.
pub fn msd_from_replica_curves(times: &[f64], curves: &[Vec<f64>]) -> Result<MsdCurve> {
    if curves.is_empty() {
        return Err(Error::invalid("curves", "at least one replica is required"));
    }
    if curves.iter().any(|c| c.len() != times.len()) {
        return Err(Error::MismatchedGrids);
    }
    let r = curves.len() as f64;
    let mut mean = vec![0.0; times.len()];
    let mut stderr = vec![0.0; times.len()];
    for k in 0..times.len() {
        let m = curves.iter().map(|c| c[k]).sum::<f64>() / r;
        mean[k] = m;
        if curves.len() > 1 {
            let v = curves.iter().map(|c| (c[k] - m).powi(2)).sum::<f64>() / (r - 1.0);
            stderr[k] = (v / r).sqrt();
        }
    }
    Ok(MsdCurve {
        times: times.to_vec(),
        msd: mean,
        stderr,
        n_replicas: curves.len(),
    })
}

/// Squared displacement averaged over the particles `tags` of one replica
/// (all particles when `tags` is `None`). With `com_frame` the mean
/// displacement of all particles is subtracted first, which removes the
/// conserved centre-of-mass diffusion of a finite periodic system.
pub fn replica_msd(record: &TrajectoryRecord, tags: Option<&[usize]>, com_frame: bool) -> Result<Vec<f64>> {
    let paths = record
        .all_paths
        .as_ref()
        .ok_or_else(|| Error::invalid("record", "multi-particle averages need all paths"))?;
    let x0 = &paths[0];
    let n = x0.len();
    let all: Vec<usize>;
    let tags = match tags {
        Some(t) => t,
        None => {
            all = (0..n).collect();
            &all
        }
    };
    if tags.is_empty() || tags.iter().any(|&i| i >= n) {
        return Err(Error::invalid("tags", "must be non-empty valid particle ids"));
    }
    Ok(paths
        .iter()
        .map(|row| {
            let shift = if com_frame {
                row.iter().zip(x0).map(|(x, y)| x - y).sum::<f64>() / n as f64
            } else {
                0.0
            };
            tags.iter()
                .map(|&i| (row[i] - x0[i] - shift).powi(2))
                .sum::<f64>()
                / tags.len() as f64
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingModel {
    /// `msd = coefficient * t^exponent`, fitted in log-log coordinates.
    PowerLaw,
    /// `msd = coefficient + slope * ln t`.
    LogLinear,
    /// `msd = coefficient + slope * t`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub model: ScalingModel,
    pub coefficient: f64,
    pub exponent_or_slope: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub n_points: usize,
}

impl ScalingFit {
    pub fn predict(&self, t: f64) -> f64 {
        match self.model {
            ScalingModel::PowerLaw => self.coefficient * t.powf(self.exponent_or_slope),
            ScalingModel::LogLinear => self.coefficient + self.exponent_or_slope * t.ln(),
            ScalingModel::Linear => self.coefficient + self.exponent_or_slope * t,
        }
    }
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, r_squared)`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy > 0.0 {
        let ss_res: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    (a, b, r2)
}

/// Least-squares fit of `model` to the points of `curve` with
/// `window.0 <= t <= window.1`.
pub fn fit_scaling(curve: &MsdCurve, model: ScalingModel, window: (f64, f64)) -> Result<ScalingFit> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::DegenerateWindow(format!("empty window [{lo}, {hi}]")));
    }
    let log_time = matches!(model, ScalingModel::PowerLaw | ScalingModel::LogLinear);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &m) in curve.times.iter().zip(&curve.msd) {
        if t < lo || t > hi {
            continue;
        }
        if log_time && t <= 0.0 {
            continue;
        }
        let x = if log_time { t.ln() } else { t };
        let y = match model {
            ScalingModel::PowerLaw => {
                if m <= 0.0 {
                    return Err(Error::DegenerateWindow(format!(
                        "non-positive msd {m} at t = {t} in a power-law window"
                    )));
                }
                m.ln()
            }
            _ => m,
        };
        xs.push(x);
        ys.push(y);
    }
    if xs.len() < 5 {
        return Err(Error::DegenerateWindow(format!(
            "{} points in [{lo}, {hi}], need at least 5",
            xs.len()
        )));
    }
    let (a, b, r2) = ols(&xs, &ys);
    let coefficient = if model == ScalingModel::PowerLaw { a.exp() } else { a };
    Ok(ScalingFit {
        model,
        coefficient,
        exponent_or_slope: b,
        r_squared: r2,
        window,
        n_points: xs.len(),
    })
}

/// Linear-in-time MSD slope over `window`, the finite-time estimate of the
/// self-diffusion constant.
pub fn self_diffusion_msd(curve: &MsdCurve, window: (f64, f64)) -> Result<f64> {
    fit_scaling(curve, ScalingModel::Linear, window).map(|f| f.exponent_or_slope)
}

/// Slope estimate for one window of [`windowed_alpha`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowedSlope {
    pub center: f64,
    pub window: (f64, f64),
    pub slope: f64,
    pub r_squared: f64,
}

/// Linear slopes over windows `[c / sqrt(10), c * sqrt(10)]` around each
/// centre, clipped to the data range.
pub fn windowed_alpha(curve: &MsdCurve, centers: &[f64]) -> Result<Vec<WindowedSlope>> {
    let t_max = curve.times.last().copied().unwrap_or(0.0);
    let s = 10f64.sqrt();
    centers
        .iter()
        .map(|&c| {
            let window = (c / s, (c * s).min(t_max));
            let fit = fit_scaling(curve, ScalingModel::Linear, window)?;
            Ok(WindowedSlope {
                center: c,
                window,
                slope: fit.exponent_or_slope,
                r_squared: fit.r_squared,
            })
        })
        .collect()
}

/// Mean time between encounters of neighbours at linear density `rho`:
/// the relative coordinate of two neighbours diffuses with variance `2t`
/// and must cover a mean gap `1 / rho`.
pub fn collision_time(rho: f64) -> f64 {
    0.5 / (rho * rho)
}

/// Kolmogorov–Smirnov test of displacements at time `t` against
/// `Normal(0, variance_hypothesis * t)`. Checks the one-time marginal only,
/// not the law of the path.
pub fn gaussianity_check(records: &[TrajectoryRecord], t: f64, variance_hypothesis: f64) -> Result<KsResult> {
    if records.len() < 100 {
        return Err(Error::invalid(
            "records",
            format!("gaussianity check needs at least 100 replicas, got {}", records.len()),
        ));
    }
    let times = &records[0].times;
    check_grids(times, records.iter().map(|r| r.times.as_slice()))?;
    let k = nearest_index(times, t).ok_or(Error::MismatchedGrids)?;
    let displacements: Vec<f64> = records
        .iter()
        .map(|r| r.tagged_path[k] - r.tagged_path[0])
        .collect();
    gaussianity_of(&displacements, times[k], variance_hypothesis)
}

/// As [`gaussianity_check`] for precomputed displacements at time `t`.
pub fn gaussianity_of(displacements: &[f64], t: f64, variance_hypothesis: f64) -> Result<KsResult> {
    if !(t > 0.0 && variance_hypothesis > 0.0) {
        return Err(Error::invalid(
            "variance_hypothesis",
            "time and hypothesised variance must be positive",
        ));
    }
    let var = variance_hypothesis * t;
    Ok(ks_one_sample(displacements, |x| normal_cdf(x, 0.0, var)))
}
