//! Pair potentials, drifts and equilibrium samplers.
//!
//! The smooth compactly supported family is
//! `psi(x) = A (1 - (x/r)^2)^3` for `|x| < r` and `0` otherwise, which is
//! non-negative, C^2 at the cutoff and smooth inside. The logarithmic kind
//! is `psi(x) = -log|x|` (Dyson's model); its periodic version sums all
//! images symmetrically, which gives the `(pi/L) cot(pi g / L)` kernel.

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::configspace::{Boundary, Configuration};
use crate::linalg::tridiagonal_eigenvalues;
use crate::rng::{rng_from_seed, SimRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Free,
    SmoothCompact,
    Log,
    HardRod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    /// Inverse temperature.
    #[serde(default)]
    pub beta: f64,
    /// Cutoff radius (smooth kind) or rod length (hard rods).
    #[serde(default = "default_range")]
    pub range: f64,
    #[serde(default)]
    pub amplitude: f64,
}

fn default_range() -> f64 {
    1.0
}

impl PotentialSpec {
    pub fn free() -> Self {
        PotentialSpec {
            kind: PotentialKind::Free,
            beta: 0.0,
            range: 1.0,
            amplitude: 0.0,
        }
    }

    pub fn smooth_compact(amplitude: f64, range: f64, beta: f64) -> Self {
        PotentialSpec {
            kind: PotentialKind::SmoothCompact,
            beta,
            range,
            amplitude,
        }
    }

    pub fn log(beta: f64) -> Self {
        PotentialSpec {
            kind: PotentialKind::Log,
            beta,
            range: 1.0,
            amplitude: 1.0,
        }
    }

    pub fn hard_rod(rod_length: f64) -> Self {
        PotentialSpec {
            kind: PotentialKind::HardRod,
            beta: 1.0,
            range: rod_length,
            amplitude: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::invalid("beta", format!("must be >= 0, got {}", self.beta)));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::invalid(
                "amplitude",
                format!("must be >= 0, got {}", self.amplitude),
            ));
        }
        let range_ok = match self.kind {
            PotentialKind::HardRod => self.range.is_finite() && self.range >= 0.0,
            _ => self.range.is_finite() && self.range > 0.0,
        };
        if !range_ok {
            return Err(Error::invalid("range", format!("invalid value {}", self.range)));
        }
        Ok(())
    }

    /// Kinds whose drift blows up at contact; these are integrated with
    /// order-preserving steps.
    pub fn is_singular(&self) -> bool {
        matches!(self.kind, PotentialKind::Log | PotentialKind::HardRod)
    }

    /// Interaction range beyond which the drift vanishes (infinite for log).
    pub fn interaction_range(&self) -> f64 {
        match self.kind {
            PotentialKind::Free => 0.0,
            PotentialKind::SmoothCompact | PotentialKind::HardRod => self.range,
            PotentialKind::Log => f64::INFINITY,
        }
    }

    /// Pair potential `psi(x)`.
    pub fn psi(&self, x: f64) -> f64 {
        match self.kind {
            PotentialKind::Free => 0.0,
            PotentialKind::SmoothCompact => {
                let u = x / self.range;
                if u.abs() >= 1.0 {
                    0.0
                } else {
                    let w = 1.0 - u * u;
                    self.amplitude * w * w * w
                }
            }
            PotentialKind::Log => -x.abs().ln(),
            PotentialKind::HardRod => {
                if x.abs() < self.range {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative `psi'(x)`.
    pub fn psi_prime(&self, x: f64) -> f64 {
        match self.kind {
            PotentialKind::Free | PotentialKind::HardRod => 0.0,
            PotentialKind::SmoothCompact => {
                let r = self.range;
                let u = x / r;
                if u.abs() >= 1.0 {
                    0.0
                } else {
                    let w = 1.0 - u * u;
                    -6.0 * self.amplitude * x / (r * r) * w * w
                }
            }
            PotentialKind::Log => -1.0 / x,
        }
    }
}

/// Drift contribution on particle `i` from one neighbour at signed gap
/// `gap = x_i - x_j`: `-(beta/2) psi'(gap)`.
pub fn pair_drift(spec: &PotentialSpec, gap: f64) -> Result<f64> {
    match spec.kind {
        PotentialKind::Free => Ok(0.0),
        PotentialKind::SmoothCompact => Ok(-0.5 * spec.beta * spec.psi_prime(gap)),
        PotentialKind::Log => {
            if gap == 0.0 {
                Err(Error::CollisionInDrift)
            } else {
                Ok(0.5 * spec.beta / gap)
            }
        }
        PotentialKind::HardRod => {
            if gap.abs() < spec.range || gap == 0.0 {
                Err(Error::CollisionInDrift)
            } else {
                Ok(0.0)
            }
        }
    }
}

/// Pair drift in a periodic box of length `length`.
///
/// Short-range kinds use the minimum image. The log kind sums every image
/// symmetrically, `sum_k 1/(g + kL) = (pi/L) cot(pi g/L)`.
pub fn pair_drift_periodic(spec: &PotentialSpec, gap: f64, length: f64) -> Result<f64> {
    match spec.kind {
        PotentialKind::Log => {
            let theta = std::f64::consts::PI * gap / length;
            let s = theta.sin();
            if s == 0.0 {
                return Err(Error::CollisionInDrift);
            }
            Ok(0.5 * spec.beta * std::f64::consts::PI / length * theta.cos() / s)
        }
        _ => pair_drift(spec, Boundary::periodic(length).min_image(gap)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Poisson,
    GibbsMcmc,
    BetaEnsemble,
    HardRodPoisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    #[serde(rename = "sampler")]
    pub kind: SamplerKind,
    pub intensity: f64,
    pub n_particles: usize,
    pub box_length: f64,
    #[serde(default = "default_burn_in")]
    pub mcmc_burn_in: usize,
    #[serde(default = "default_thinning")]
    pub thinning: usize,
}

fn default_burn_in() -> usize {
    200
}

fn default_thinning() -> usize {
    10
}

impl SamplerSpec {
    /// Spec with `box_length = n / intensity`.
    pub fn new(kind: SamplerKind, intensity: f64, n_particles: usize) -> Result<Self> {
        let spec = SamplerSpec {
            kind,
            intensity,
            n_particles,
            box_length: n_particles as f64 / intensity,
            mcmc_burn_in: default_burn_in(),
            thinning: default_thinning(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.intensity.is_finite() && self.intensity > 0.0) {
            return Err(Error::invalid("intensity", format!("must be > 0, got {}", self.intensity)));
        }
        if !(self.box_length.is_finite() && self.box_length > 0.0) {
            return Err(Error::invalid(
                "box_length",
                format!("must be > 0, got {}", self.box_length),
            ));
        }
        if self.n_particles == 0 {
            return Err(Error::invalid("n_particles", "must be >= 1"));
        }
        let expected = self.intensity * self.box_length;
        if (self.n_particles as f64 - expected).abs() > 1.0 {
            return Err(Error::invalid(
                "n_particles",
                format!(
                    "{} particles inconsistent with intensity x box_length = {expected}",
                    self.n_particles
                ),
            ));
        }
        if self.thinning == 0 {
            return Err(Error::invalid("thinning", "must be >= 1"));
        }
        Ok(())
    }
}

/// Canonical Poisson stand-in: `n_particles` i.i.d. uniform points in the
/// periodic box.
pub fn sample_poisson(spec: &SamplerSpec, seed: u64) -> Result<Configuration> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let l = spec.box_length;
    let pts = (0..spec.n_particles).map(|_| rng.random::<f64>() * l).collect();
    Configuration::periodic(pts, l)
}

/// Equilibrium hard rods of length `rod_length` in the periodic box: gaps
/// are `rod_length` plus a uniform point on the simplex of free length,
/// followed by a uniform rotation.
pub fn sample_hard_rods(spec: &SamplerSpec, rod_length: f64, seed: u64) -> Result<Configuration> {
    spec.validate()?;
    let n = spec.n_particles;
    let l = spec.box_length;
    let free = l - n as f64 * rod_length;
    if !(rod_length >= 0.0 && free > 0.0) {
        return Err(Error::invalid(
            "range",
            format!("{n} rods of length {rod_length} do not fit in a box of length {l}"),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut u: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * free).collect();
    u.sort_by(f64::total_cmp);
    let offset = rng.random::<f64>() * l;
    let pts = u
        .iter()
        .enumerate()
        .map(|(k, &x)| x + k as f64 * rod_length + offset)
        .collect();
    Configuration::periodic(pts, l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsSample {
    pub config: Configuration,
    /// Acceptance rate measured after the proposal width was frozen.
    pub acceptance_rate: f64,
    pub proposal_width: f64,
}

const GIBBS_INIT_RETRIES: usize = 100;
const TARGET_ACCEPTANCE: f64 = 0.4;

struct GibbsChain<'a> {
    pot: &'a PotentialSpec,
    boundary: Boundary,
    positions: Vec<f64>,
    width: f64,
}

impl GibbsChain<'_> {
    fn local_energy(&self, i: usize, x: f64) -> f64 {
        let mut e = 0.0;
        for (j, &y) in self.positions.iter().enumerate() {
            if j != i {
                e += self.pot.psi(self.boundary.min_image(x - y));
            }
        }
        e
    }

    fn total_energy(&self) -> f64 {
        let n = self.positions.len();
        let mut e = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                e += self
                    .pot
                    .psi(self.boundary.min_image(self.positions[i] - self.positions[j]));
            }
        }
        e
    }

    /// One sweep of single-particle moves; returns the number accepted.
    fn sweep(&mut self, rng: &mut SimRng) -> usize {
        let mut accepted = 0;
        for i in 0..self.positions.len() {
            let old = self.positions[i];
            let new = self
                .boundary
                .wrap(old + self.width * (2.0 * rng.random::<f64>() - 1.0));
            let delta = self.local_energy(i, new) - self.local_energy(i, old);
            let log_u = rng.random::<f64>().ln();
            // Hard cores give +inf; -beta * inf compares below any log_u.
            let log_ratio = if self.pot.beta == 0.0 {
                0.0
            } else {
                -self.pot.beta * delta
            };
            if !log_ratio.is_nan() && log_u < log_ratio {
                self.positions[i] = new;
                accepted += 1;
            }
        }
        accepted
    }
}

/// Metropolis sampler for the canonical Gibbs measure
/// `exp(-beta sum_{i<j} psi(x_i - x_j))` on the periodic box.
///
/// The proposal width is tuned during the first half of the burn-in towards
/// an acceptance rate of 0.4, then frozen; the reported acceptance rate is
/// measured over the second half.
pub fn sample_gibbs(spec: &SamplerSpec, pot: &PotentialSpec, seed: u64) -> Result<GibbsSample> {
    Ok(sample_gibbs_chain(spec, pot, seed, 1)?.remove(0))
}

/// Runs one chain and returns `n_samples` states separated by `thinning`
/// sweeps after the burn-in.
pub fn sample_gibbs_chain(
    spec: &SamplerSpec,
    pot: &PotentialSpec,
    seed: u64,
    n_samples: usize,
) -> Result<Vec<GibbsSample>> {
    spec.validate()?;
    pot.validate()?;
    if pot.kind == PotentialKind::Log {
        return Err(Error::invalid(
            "potential",
            "log-gas equilibria are sampled with the beta ensemble",
        ));
    }
    let mut rng = rng_from_seed(seed);
    let boundary = Boundary::periodic(spec.box_length);
    let n = spec.n_particles;
    let mut chain = None;
    for _ in 0..GIBBS_INIT_RETRIES {
        let positions: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * spec.box_length).collect();
        let candidate = GibbsChain {
            pot,
            boundary,
            positions,
            width: spec.box_length / n as f64,
        };
        if candidate.total_energy().is_finite() {
            chain = Some(candidate);
            break;
        }
    }
    let mut chain = chain.ok_or(Error::GibbsInitialization(GIBBS_INIT_RETRIES))?;

    let max_width = 0.5 * spec.box_length;
    let min_width = 1e-4 * spec.box_length / n as f64;
    let tune_sweeps = spec.mcmc_burn_in / 2;
    for _ in 0..tune_sweeps {
        let rate = chain.sweep(&mut rng) as f64 / n as f64;
        chain.width = (chain.width * (rate - TARGET_ACCEPTANCE).exp()).clamp(min_width, max_width);
    }
    let mut accepted = 0usize;
    let mut proposed = 0usize;
    for _ in tune_sweeps..spec.mcmc_burn_in {
        accepted += chain.sweep(&mut rng);
        proposed += n;
    }
    let mut out = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        if s > 0 {
            for _ in 0..spec.thinning {
                accepted += chain.sweep(&mut rng);
                proposed += n;
            }
        }
        out.push(GibbsSample {
            config: Configuration::periodic(chain.positions.clone(), spec.box_length)?,
            acceptance_rate: if proposed == 0 {
                f64::NAN
            } else {
                accepted as f64 / proposed as f64
            },
            proposal_width: chain.width,
        });
    }
    Ok(out)
}

fn chi(rng: &mut SimRng, dof: f64) -> f64 {
    ChiSquared::new(dof)
        .expect("positive degrees of freedom")
        .sample(rng)
        .sqrt()
}

/// Raw eigenvalues of the Gaussian beta ensemble with joint density
/// proportional to `prod |l_i - l_j|^beta exp(-sum l_i^2 / 2)`, drawn from
/// the tridiagonal model (`N(0,1)` diagonal, `chi_{beta k} / sqrt 2`
/// off-diagonal).
pub fn gaussian_beta_eigenvalues(n: usize, beta: f64, seed: u64) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::invalid("beta", format!("must be > 0, got {beta}")));
    }
    let mut rng = rng_from_seed(seed);
    let diag: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let off: Vec<f64> = (1..n)
        .map(|k| chi(&mut rng, beta * (n - k) as f64) / std::f64::consts::SQRT_2)
        .collect();
    tridiagonal_eigenvalues(&diag, &off)
}

/// Bulk density at the centre of the raw spectrum, `2n / (pi sqrt(2 beta n))`.
pub fn gaussian_beta_center_density(n: usize, beta: f64) -> f64 {
    2.0 * n as f64 / (std::f64::consts::PI * (2.0 * beta * n as f64).sqrt())
}

/// Beta-ensemble points rescaled so the density at the centre of the bulk
/// equals `intensity`. Points are strictly increasing.
pub fn sample_beta_ensemble(n: usize, beta: f64, intensity: f64, seed: u64) -> Result<Configuration> {
    if n < 2 {
        return Err(Error::invalid("n", "beta ensemble needs at least 2 points"));
    }
    if !(intensity.is_finite() && intensity > 0.0) {
        return Err(Error::invalid("intensity", format!("must be > 0, got {intensity}")));
    }
    let eig = gaussian_beta_eigenvalues(n, beta, seed)?;
    let scale = gaussian_beta_center_density(n, beta) / intensity;
    Configuration::unbounded(eig.into_iter().map(|l| l * scale).collect())
}

/// Beta-ensemble points unfolded through the semicircle distribution onto
/// a periodic box of length `n / intensity`, giving uniform density with
/// bulk-like local statistics.
pub fn sample_beta_ensemble_periodic(
    n: usize,
    beta: f64,
    intensity: f64,
    seed: u64,
) -> Result<Configuration> {
    if n < 2 {
        return Err(Error::invalid("n", "beta ensemble needs at least 2 points"));
    }
    let eig = gaussian_beta_eigenvalues(n, beta, seed)?;
    // Edge eigenvalues can land outside the semicircle; widen the support
    // so they stay distinct instead of all clamping onto the seam.
    let outer = eig.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let radius = (2.0 * beta * n as f64).sqrt().max(outer * (1.0 + 1e-9));
    let length = n as f64 / intensity;
    let pts = eig
        .iter()
        .map(|&l| semicircle_cdf(l / radius) * length)
        .collect();
    let c = Configuration::periodic(pts, length)?;
    if !c.is_strictly_ordered() {
        return Err(Error::invalid("beta ensemble", "unfolded points coincide"));
    }
    Ok(c)
}

/// CDF of the semicircle law on `[-1, 1]`.
pub fn semicircle_cdf(x: f64) -> f64 {
    let x = x.clamp(-1.0, 1.0);
    0.5 + (x * (1.0 - x * x).sqrt() + x.asin()) / std::f64::consts::PI
}

/// Dense-matrix Gaussian ensembles (orthogonal, unitary, symplectic) with
/// the same normalisation as [`gaussian_beta_eigenvalues`]. Used as a
/// cross-check of the tridiagonal model for `beta` in {1, 2, 4}.
pub fn dense_gaussian_ensemble_eigenvalues(n: usize, beta: u32, seed: u64) -> Result<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    let mut normal = |var: f64| rng.sample::<f64, _>(StandardNormal) * var.sqrt();
    let mut eig: Vec<f64> = match beta {
        1 => {
            let mut m = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                m[(i, i)] = normal(1.0);
                for j in (i + 1)..n {
                    let v = normal(0.5);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            m.symmetric_eigenvalues().iter().copied().collect()
        }
        2 => {
            let mut m = DMatrix::<Complex<f64>>::zeros(n, n);
            for i in 0..n {
                m[(i, i)] = Complex::new(normal(1.0), 0.0);
                for j in (i + 1)..n {
                    let v = Complex::new(normal(0.5), normal(0.5));
                    m[(i, j)] = v;
                    m[(j, i)] = v.conj();
                }
            }
            m.symmetric_eigenvalues().iter().copied().collect()
        }
        4 => {
            // Quaternion a + bi + cj + dk as the 2x2 block
            // [[a + bi, c + di], [-c + di, a - bi]].
            let mut m = DMatrix::<Complex<f64>>::zeros(2 * n, 2 * n);
            for i in 0..n {
                let a = normal(1.0);
                m[(2 * i, 2 * i)] = Complex::new(a, 0.0);
                m[(2 * i + 1, 2 * i + 1)] = Complex::new(a, 0.0);
                for j in (i + 1)..n {
                    let (a, b, c, d) = (normal(0.5), normal(0.5), normal(0.5), normal(0.5));
                    let block = [
                        [Complex::new(a, b), Complex::new(c, d)],
                        [Complex::new(-c, d), Complex::new(a, -b)],
                    ];
                    for r in 0..2 {
                        for s in 0..2 {
                            m[(2 * i + r, 2 * j + s)] = block[r][s];
                            m[(2 * j + s, 2 * i + r)] = block[r][s].conj();
                        }
                    }
                }
            }
            let mut all: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
            all.sort_by(f64::total_cmp);
            // Kramers pairs.
            all.into_iter().step_by(2).collect()
        }
        _ => {
            return Err(Error::invalid(
                "beta",
                format!("dense ensembles exist for beta in {{1,2,4}}, got {beta}"),
            ))
        }
    };
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Empirical reduced Palm sample: pick a point uniformly at random, move it
/// to the origin and remove it. The result is an unbounded configuration of
/// relative positions (minimum image in a periodic box).
pub fn palm_condition(config: &Configuration, seed: u64) -> Result<Configuration> {
    if config.is_empty() {
        return Err(Error::EmptyConfiguration);
    }
    let mut rng = rng_from_seed(seed);
    let k = rng.random_range(0..config.len());
    palm_at(config, k)
}

/// Reduced Palm configuration seen from the point with storage index `k`.
pub fn palm_at(config: &Configuration, k: usize) -> Result<Configuration> {
    let b = config.boundary();
    let pos = config.positions();
    let x0 = *pos.get(k).ok_or(Error::invalid("index", "out of range"))?;
    let rel = pos
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, &p)| b.min_image(p - x0))
        .collect();
    Configuration::unbounded(rel)
}

/// Draw an equilibrium configuration for the given sampler.
pub fn sample_equilibrium(spec: &SamplerSpec, pot: &PotentialSpec, seed: u64) -> Result<Configuration> {
    match spec.kind {
        SamplerKind::Poisson => sample_poisson(spec, seed),
        SamplerKind::HardRodPoisson => sample_hard_rods(spec, pot.range, seed),
        SamplerKind::GibbsMcmc => Ok(sample_gibbs(spec, pot, seed)?.config),
        SamplerKind::BetaEnsemble => {
            sample_beta_ensemble_periodic(spec.n_particles, pot.beta, spec.intensity, seed)
        }
    }
}
