//! Square fields, Monte Carlo assembly of the Galerkin system for the
//! corrector, the variational self-diffusion estimate and the telescoping
//! `phi_N` experiment.
//!
//! Functions act on the environment seen from the tagged particle, i.e. on
//! the sorted relative positions of a reduced Palm sample. The per-sample
//! energy of `f` splits as `0.5 * (shift derivative)^2 + square field`, and
//! the corrector minimises `0.5 * E(1 - shift(chi))^2 + E D[chi, chi]` over
//! the span of a finite basis.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::configspace::EnvironmentState;
use crate::models::{palm_condition, sample_equilibrium, PotentialSpec, SamplerSpec};
use crate::rng::{replica_seed, sub_seed};
use crate::{Error, Result};

/// Samples per chunk of the deterministic reduction.
pub const REDUCTION_CHUNK: usize = 512;
/// Relative step of symmetric differences, in units of the mean gap.
pub const DIFFERENCE_STEP: f64 = 1e-6;
/// Maximal fraction of skipped samples tolerated by [`assemble_forms`].
pub const MAX_SKIP_FRACTION: f64 = 0.01;

/// Single-site profile `h` of a pair-sum function `f(y) = sum_i h(y_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Profile {
    /// `exp(-y^2 / (2 w^2))`, even.
    Gaussian { width: f64 },
    /// `(y / w) exp(-y^2 / (2 w^2))`, odd.
    OddGaussian { width: f64 },
}

impl Profile {
    pub fn value(&self, y: f64) -> f64 {
        match *self {
            Profile::Gaussian { width } => (-0.5 * (y / width).powi(2)).exp(),
            Profile::OddGaussian { width } => (y / width) * (-0.5 * (y / width).powi(2)).exp(),
        }
    }

    pub fn derivative(&self, y: f64) -> f64 {
        match *self {
            Profile::Gaussian { width } => {
                -(y / (width * width)) * (-0.5 * (y / width).powi(2)).exp()
            }
            Profile::OddGaussian { width } => {
                let u = y / width;
                (1.0 - u * u) * (-0.5 * u * u).exp() / width
            }
        }
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// User supplied smooth function of the relative positions; without an
/// analytic gradient, derivatives are taken by symmetric differences.
#[derive(Clone)]
pub struct CustomFunction {
    pub name: String,
    pub value: Arc<ValueFn>,
    pub gradient: Option<Arc<GradientFn>>,
}

impl fmt::Debug for CustomFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFunction")
            .field("name", &self.name)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum CylinderFunction {
    /// Mean of the first `n` positive-side positions `(s_1 + ... + s_n) / n`.
    PhiN { n: usize },
    PairSum { profile: Profile },
    Custom(CustomFunction),
}

impl CylinderFunction {
    pub fn phi(n: usize) -> Self {
        CylinderFunction::PhiN { n }
    }

    pub fn pair_sum(profile: Profile) -> Self {
        CylinderFunction::PairSum { profile }
    }

    pub fn custom<V>(name: &str, value: V) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        CylinderFunction::Custom(CustomFunction {
            name: name.to_string(),
            value: Arc::new(value),
            gradient: None,
        })
    }

    pub fn custom_with_gradient<V, G>(name: &str, value: V, gradient: G) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        CylinderFunction::Custom(CustomFunction {
            name: name.to_string(),
            value: Arc::new(value),
            gradient: Some(Arc::new(gradient)),
        })
    }

    /// Short text descriptor used in serialized forms.
    pub fn describe(&self) -> String {
        match self {
            CylinderFunction::PhiN { n } => format!("phi_{n}"),
            CylinderFunction::PairSum { profile } => match profile {
                Profile::Gaussian { width } => format!("pair_sum:gaussian:{width}"),
                Profile::OddGaussian { width } => format!("pair_sum:odd_gaussian:{width}"),
            },
            CylinderFunction::Custom(c) => format!("custom:{}", c.name),
        }
    }

    /// Whether `f` is defined at `env` (`phi_N` needs `N` positive points).
    pub fn admits(&self, env: &EnvironmentState) -> bool {
        match self {
            CylinderFunction::PhiN { n } => env.positive_side().len() >= *n,
            _ => true,
        }
    }

    pub fn evaluate(&self, env: &EnvironmentState) -> Option<f64> {
        match self {
            CylinderFunction::PhiN { n } => {
                let pos = env.positive_side();
                (pos.len() >= *n && *n > 0).then(|| pos[..*n].iter().sum::<f64>() / *n as f64)
            }
            CylinderFunction::PairSum { profile } => Some(
                env.relative_positions()
                    .iter()
                    .map(|&y| profile.value(y))
                    .sum(),
            ),
            CylinderFunction::Custom(c) => Some((c.value)(env.relative_positions())),
        }
    }

    /// Partial derivatives with respect to each stored relative position.
    pub fn gradient(&self, env: &EnvironmentState) -> Option<Vec<f64>> {
        let ys = env.relative_positions();
        match self {
            CylinderFunction::PhiN { n } => {
                if !self.admits(env) || *n == 0 {
                    return None;
                }
                let mut g = vec![0.0; ys.len()];
                let start = env.first_positive();
                let w = 1.0 / *n as f64;
                g[start..start + n].iter_mut().for_each(|v| *v = w);
                Some(g)
            }
            CylinderFunction::PairSum { profile } => {
                Some(ys.iter().map(|&y| profile.derivative(y)).collect())
            }
            CylinderFunction::Custom(c) => match &c.gradient {
                Some(g) => Some(g(ys)),
                None => Some(numeric_gradient(self, env, difference_step(env))),
            },
        }
    }
}

fn difference_step(env: &EnvironmentState) -> f64 {
    DIFFERENCE_STEP * env.mean_gap()
}

/// Symmetric-difference gradient with coordinate step `h`.
pub fn numeric_gradient(f: &CylinderFunction, env: &EnvironmentState, h: f64) -> Vec<f64> {
    let ys = env.relative_positions();
    let mut out = Vec::with_capacity(ys.len());
    let mut work = ys.to_vec();
    for i in 0..ys.len() {
        work[i] = ys[i] + h;
        let up = f.evaluate(&env.with_relatives(work.clone()));
        work[i] = ys[i] - h;
        let down = f.evaluate(&env.with_relatives(work.clone()));
        work[i] = ys[i];
        out.push(match (up, down) {
            (Some(u), Some(d)) => (u - d) / (2.0 * h),
            _ => f64::NAN,
        });
    }
    out
}

/// Symmetric difference of `eps -> f(env shifted by eps)` at step `h`.
pub fn numeric_shift_derivative(f: &CylinderFunction, env: &EnvironmentState, h: f64) -> f64 {
    match (f.evaluate(&env.shifted(h)), f.evaluate(&env.shifted(-h))) {
        (Some(u), Some(d)) => (u - d) / (2.0 * h),
        _ => f64::NAN,
    }
}

/// Derivative of `f` under a rigid translation of the whole environment.
/// Analytic for `phi_N` (exactly 1) and pair sums; custom functions without
/// a gradient use a symmetric difference.
pub fn shift_derivative(f: &CylinderFunction, env: &EnvironmentState) -> f64 {
    match f {
        CylinderFunction::PhiN { .. } => {
            if f.admits(env) {
                1.0
            } else {
                f64::NAN
            }
        }
        CylinderFunction::PairSum { profile } => env
            .relative_positions()
            .iter()
            .map(|&y| profile.derivative(y))
            .sum(),
        CylinderFunction::Custom(c) => match &c.gradient {
            Some(g) => g(env.relative_positions()).iter().sum(),
            None => numeric_shift_derivative(f, env, difference_step(env)),
        },
    }
}

/// `0.5 * sum_i df/dy_i * dg/dy_i`.
pub fn square_field(f: &CylinderFunction, g: &CylinderFunction, env: &EnvironmentState) -> f64 {
    if let (CylinderFunction::PhiN { n: m }, CylinderFunction::PhiN { n }) = (f, g) {
        if f.admits(env) && g.admits(env) {
            return phi_square_field(*m, *n);
        }
        return f64::NAN;
    }
    match (f.gradient(env), g.gradient(env)) {
        (Some(a), Some(b)) => square_field_of(&a, &b),
        _ => f64::NAN,
    }
}

/// Square field of two gradient vectors.
pub fn square_field_of(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// `D[phi_M, phi_N] = min(M, N) / (2 M N)`.
pub fn phi_square_field(m: usize, n: usize) -> f64 {
    m.min(n) as f64 / (2.0 * m as f64 * n as f64)
}

/// Per-sample energy `0.5 * shift(f)^2 + D[f, f]`.
pub fn sample_energy(f: &CylinderFunction, env: &EnvironmentState) -> f64 {
    let s = shift_derivative(f, env);
    0.5 * s * s + square_field(f, f, env)
}

/// Galerkin system of the corrector problem assembled from Palm samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticForm {
    /// Mean of `0.5 * shift(g_j) * shift(g_k)`.
    pub gram_shift: Vec<Vec<f64>>,
    /// Mean of `D[g_j, g_k]`.
    pub gram_interaction: Vec<Vec<f64>>,
    /// Mean of `0.5 * shift(g_j)`.
    pub rhs: Vec<f64>,
    /// Standard error of each `rhs` entry.
    pub rhs_stderr: Vec<f64>,
    pub n_samples: usize,
    pub skipped: usize,
    pub basis: Vec<String>,
}

impl QuadraticForm {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    /// Symmetry to `1e-12` and smallest eigenvalue `>= -1e-8 * trace` for
    /// both Gram matrices.
    pub fn check_invariants(&self) -> Result<()> {
        for (name, g) in [("gram_shift", &self.gram_shift), ("gram_interaction", &self.gram_interaction)] {
            let m = to_matrix(g);
            let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
            if (&m - m.transpose()).amax() > 1e-12 * scale {
                return Err(Error::invalid(name, "not symmetric"));
            }
            if m.nrows() > 0 {
                let min = m.clone().symmetric_eigenvalues().min();
                if min < -1e-8 * m.trace().abs() {
                    return Err(Error::invalid(name, format!("smallest eigenvalue {min}")));
                }
            }
        }
        Ok(())
    }

    /// Restriction to the basis functions with the given indices.
    pub fn restrict(&self, indices: &[usize]) -> QuadraticForm {
        let pick = |g: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            indices
                .iter()
                .map(|&j| indices.iter().map(|&k| g[j][k]).collect())
                .collect()
        };
        QuadraticForm {
            gram_shift: pick(&self.gram_shift),
            gram_interaction: pick(&self.gram_interaction),
            rhs: indices.iter().map(|&j| self.rhs[j]).collect(),
            rhs_stderr: indices.iter().map(|&j| self.rhs_stderr[j]).collect(),
            n_samples: self.n_samples,
            skipped: self.skipped,
            basis: indices.iter().map(|&j| self.basis[j].clone()).collect(),
        }
    }
}

fn to_matrix(g: &[Vec<f64>]) -> DMatrix<f64> {
    let m = g.len();
    DMatrix::from_fn(m, m, |i, j| g[i][j])
}

/// Compensated running sum that also remembers whether every added value
/// was identical, in which case the mean is that value exactly.
#[derive(Debug, Clone, Copy)]
struct Acc {
    sum: f64,
    comp: f64,
    sq: f64,
    first: f64,
    constant: bool,
    count: usize,
}

impl Acc {
    const EMPTY: Acc = Acc {
        sum: 0.0,
        comp: 0.0,
        sq: 0.0,
        first: 0.0,
        constant: true,
        count: 0,
    };

    fn add(&mut self, v: f64) {
        if self.count == 0 {
            self.first = v;
        } else if v != self.first {
            self.constant = false;
        }
        self.count += 1;
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
        self.sq += v * v;
    }

    fn merge(self, other: Acc) -> Acc {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let t = self.sum + other.sum;
        let c = if self.sum.abs() >= other.sum.abs() {
            (self.sum - t) + other.sum
        } else {
            (other.sum - t) + self.sum
        };
        Acc {
            sum: t,
            comp: self.comp + other.comp + c,
            sq: self.sq + other.sq,
            first: self.first,
            constant: self.constant && other.constant && self.first == other.first,
            count: self.count + other.count,
        }
    }

    fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else if self.constant {
            self.first
        } else {
            (self.sum + self.comp) / self.count as f64
        }
    }

    fn stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let m = self.mean();
        ((self.sq / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt()
    }
}

/// Accumulators for one chunk of samples: upper triangles of both Gram
/// matrices, then the right-hand side.
#[derive(Debug, Clone)]
struct Partial {
    shift: Vec<Acc>,
    inter: Vec<Acc>,
    rhs: Vec<Acc>,
    skipped: usize,
}

impl Partial {
    fn new(m: usize) -> Self {
        let tri = m * (m + 1) / 2;
        Partial {
            shift: vec![Acc::EMPTY; tri],
            inter: vec![Acc::EMPTY; tri],
            rhs: vec![Acc::EMPTY; m],
            skipped: 0,
        }
    }

    fn merge(mut self, other: Partial) -> Partial {
        for (a, b) in self.shift.iter_mut().zip(other.shift) {
            *a = a.merge(b);
        }
        for (a, b) in self.inter.iter_mut().zip(other.inter) {
            *a = a.merge(b);
        }
        for (a, b) in self.rhs.iter_mut().zip(other.rhs) {
            *a = a.merge(b);
        }
        self.skipped += other.skipped;
        self
    }
}

/// Shift derivatives and square fields of all basis pairs at one sample,
/// or `None` if some value is undefined or non-finite.
fn sample_fields(basis: &[CylinderFunction], env: &EnvironmentState) -> Option<(Vec<f64>, Vec<f64>)> {
    let m = basis.len();
    let shifts: Vec<f64> = basis.iter().map(|f| shift_derivative(f, env)).collect();
    let grads: Vec<Option<Vec<f64>>> = basis
        .iter()
        .map(|f| match f {
            CylinderFunction::PhiN { .. } => None,
            _ => f.gradient(env),
        })
        .collect();
    let mut inter = Vec::with_capacity(m * (m + 1) / 2);
    for j in 0..m {
        for k in j..m {
            let v = match (&basis[j], &basis[k]) {
                (CylinderFunction::PhiN { n: a }, CylinderFunction::PhiN { n: b }) => {
                    if basis[j].admits(env) && basis[k].admits(env) {
                        phi_square_field(*a, *b)
                    } else {
                        f64::NAN
                    }
                }
                _ => {
                    let a = grads[j].clone().or_else(|| basis[j].gradient(env))?;
                    let b = grads[k].clone().or_else(|| basis[k].gradient(env))?;
                    square_field_of(&a, &b)
                }
            };
            inter.push(v);
        }
    }
    if shifts.iter().chain(&inter).all(|v| v.is_finite()) {
        Some((shifts, inter))
    } else {
        None
    }
}

fn tree_reduce(mut parts: Vec<Partial>, m: usize) -> Partial {
    if parts.is_empty() {
        return Partial::new(m);
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => a.merge(b),
                None => a,
            });
        }
        parts = next;
    }
    parts.pop().unwrap()
}

/// Monte Carlo assembly of the Galerkin system. Samples are processed in
/// fixed chunks whose partial sums are combined by a fixed-shape pairwise
/// tree, so the result does not depend on the number of worker threads.
/// Samples at which some field is undefined or non-finite are skipped; more
/// than 1% skipped samples is an error.
pub fn assemble_forms(basis: &[CylinderFunction], samples: &[EnvironmentState]) -> Result<QuadraticForm> {
    let m = basis.len();
    let parts: Vec<Partial> = samples
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let mut p = Partial::new(m);
            for env in chunk {
                match sample_fields(basis, env) {
                    Some((shifts, inter)) => {
                        let mut t = 0;
                        for j in 0..m {
                            for k in j..m {
                                p.shift[t].add(0.5 * shifts[j] * shifts[k]);
                                p.inter[t].add(inter[t]);
                                t += 1;
                            }
                            p.rhs[j].add(0.5 * shifts[j]);
                        }
                    }
                    None => p.skipped += 1,
                }
            }
            p
        })
        .collect();
    let total = tree_reduce(parts, m);
    if samples.is_empty() && m > 0 {
        return Err(Error::invalid("samples", "no Palm samples"));
    }
    if total.skipped as f64 > MAX_SKIP_FRACTION * samples.len() as f64 {
        return Err(Error::TooManySkippedSamples {
            skipped: total.skipped,
            total: samples.len(),
        });
    }
    let mut gram_shift = vec![vec![0.0; m]; m];
    let mut gram_interaction = vec![vec![0.0; m]; m];
    let mut t = 0;
    for j in 0..m {
        for k in j..m {
            let (a, b) = (total.shift[t].mean(), total.inter[t].mean());
            gram_shift[j][k] = a;
            gram_shift[k][j] = a;
            gram_interaction[j][k] = b;
            gram_interaction[k][j] = b;
            t += 1;
        }
    }
    let form = QuadraticForm {
        gram_shift,
        gram_interaction,
        rhs: total.rhs.iter().map(Acc::mean).collect(),
        rhs_stderr: total.rhs.iter().map(Acc::stderr).collect(),
        n_samples: samples.len() - total.skipped,
        skipped: total.skipped,
        basis: basis.iter().map(CylinderFunction::describe).collect(),
    };
    form.check_invariants()?;
    Ok(form)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionDiagnostics {
    pub ridge_requested: f64,
    pub ridge_used: f64,
    pub escalated: bool,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Of the regularised system matrix.
    pub condition_number: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorSolution {
    pub coefficients: Vec<f64>,
    pub alpha_estimate: f64,
    /// `(shift_part, interaction_part)` with `alpha = 2 * (sum)`.
    pub energy_parts: (f64, f64),
    pub diagnostics: ConditionDiagnostics,
}

/// Relative eigenvalue floor below which the unregularised system counts as
/// singular.
const SINGULAR_RATIO: f64 = 1e-14;

/// Solves `(gram_shift + gram_interaction + ridge I) c = rhs` and returns
/// the variational estimate
/// `alpha / 2 = 0.5 - 2 c.rhs + c' G_shift c + c' G_interaction c`.
/// A singular system at zero ridge is retried with ridge `1e-10 * trace`.
pub fn solve_corrector(form: &QuadraticForm, ridge: f64) -> Result<CorrectorSolution> {
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge", "must be >= 0"));
    }
    let m = form.dim();
    let g1 = to_matrix(&form.gram_shift);
    let g2 = to_matrix(&form.gram_interaction);
    let b = DVector::from_column_slice(&form.rhs);
    if m == 0 {
        return Ok(CorrectorSolution {
            coefficients: vec![],
            alpha_estimate: 1.0,
            energy_parts: (0.5, 0.0),
            diagnostics: ConditionDiagnostics {
                ridge_requested: ridge,
                ridge_used: ridge,
                escalated: false,
                min_eigenvalue: 0.0,
                max_eigenvalue: 0.0,
                condition_number: 1.0,
            },
        });
    }
    let a = &g1 + &g2;
    let trace = a.trace();
    let solve_with = |r: f64| -> Option<(DVector<f64>, f64, f64)> {
        let sys = &a + DMatrix::identity(m, m) * r;
        let eig = sys.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(hi > 0.0) || lo <= SINGULAR_RATIO * hi {
            return None;
        }
        sys.cholesky().map(|c| (c.solve(&b), lo, hi))
    };
    let mut used = ridge;
    let mut escalated = false;
    let (c, lo, hi) = match solve_with(ridge) {
        Some(s) => s,
        None => {
            used = ridge.max(1e-10 * trace);
            escalated = true;
            solve_with(used).ok_or_else(|| {
                Error::SingularSystem(format!("system singular even with ridge {used:e}"))
            })?
        }
    };
    let shift_part = 0.5 - 2.0 * c.dot(&b) + (&g1 * &c).dot(&c);
    let interaction_part = (&g2 * &c).dot(&c);
    Ok(CorrectorSolution {
        coefficients: c.iter().copied().collect(),
        alpha_estimate: 2.0 * (shift_part + interaction_part),
        energy_parts: (shift_part, interaction_part),
        diagnostics: ConditionDiagnostics {
            ridge_requested: ridge,
            ridge_used: used,
            escalated,
            min_eigenvalue: lo,
            max_eigenvalue: hi,
            condition_number: hi / lo,
        },
    })
}

/// Direct re-evaluation of `(mean 0.5 (1 - shift(chi))^2, mean D[chi, chi])`
/// for `chi = sum_j c_j g_j`, skipping samples where a field is undefined.
pub fn evaluate_corrector(
    basis: &[CylinderFunction],
    coefficients: &[f64],
    samples: &[EnvironmentState],
) -> Result<(f64, f64)> {
    if basis.len() != coefficients.len() {
        return Err(Error::invalid("coefficients", "length differs from basis"));
    }
    let parts: Vec<(Acc, Acc)> = samples
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let mut sa = Acc::EMPTY;
            let mut ia = Acc::EMPTY;
            for env in chunk {
                let Some((shifts, inter)) = sample_fields(basis, env) else {
                    continue;
                };
                let s: f64 = shifts.iter().zip(coefficients).map(|(s, c)| s * c).sum();
                let mut d = 0.0;
                let mut t = 0;
                for j in 0..basis.len() {
                    for k in j..basis.len() {
                        let w = if j == k { 1.0 } else { 2.0 };
                        d += w * coefficients[j] * coefficients[k] * inter[t];
                        t += 1;
                    }
                }
                sa.add(0.5 * (1.0 - s).powi(2));
                ia.add(d);
            }
            (sa, ia)
        })
        .collect();
    let (s, i) = parts
        .into_iter()
        .fold((Acc::EMPTY, Acc::EMPTY), |(a, b), (c, d)| (a.merge(c), b.merge(d)));
    Ok((s.mean(), i.mean()))
}

/// One row of the telescoping table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelescopingRow {
    pub n: usize,
    /// Mean per-sample energy of `phi_N`.
    pub energy: f64,
    /// Variational self-diffusion bound from the one-function basis.
    pub alpha_bound: f64,
    pub n_samples: usize,
    pub rejects: usize,
    /// Samples whose energy exceeds `0.5 (1 + 1/N)`.
    pub bound_violations: usize,
    /// Samples where the energy of `phi_N - phi_{N_prev}` exceeds
    /// `1/N + 1/N_prev` (previous entry of the list).
    pub cauchy_violations: usize,
}

/// Per-sample energies of `phi_N` are computed from the generic gradient
/// path, independently of the closed forms used by [`assemble_forms`].
/// Samples with a collision (gap below `collision_tol`) or fewer than `N`
/// positive-side points are rejected.
pub fn telescoping_experiment(
    samples: &[EnvironmentState],
    n_list: &[usize],
    collision_tol: f64,
) -> Result<Vec<TelescopingRow>> {
    let mut rows = Vec::with_capacity(n_list.len());
    let mut prev: Option<usize> = None;
    for &n in n_list {
        if n == 0 {
            return Err(Error::invalid("N", "must be >= 1"));
        }
        let f = CylinderFunction::phi(n);
        let accepted: Vec<EnvironmentState> = samples
            .iter()
            .filter(|e| !e.has_collision(collision_tol) && f.admits(e))
            .cloned()
            .collect();
        let rejects = samples.len() - accepted.len();
        let bound = 0.5 * (1.0 + 1.0 / n as f64);
        let stats: Vec<(f64, bool, bool)> = accepted
            .par_iter()
            .map(|env| {
                let g = f.gradient(env).expect("admitted sample");
                let s: f64 = g.iter().sum();
                let e = 0.5 * s * s + square_field_of(&g, &g);
                let cauchy_bad = prev.is_some_and(|p| {
                    let h = CylinderFunction::phi(p);
                    match h.gradient(env) {
                        Some(gp) => {
                            let d: Vec<f64> = g.iter().zip(&gp).map(|(a, b)| a - b).collect();
                            let sd: f64 = d.iter().sum();
                            0.5 * sd * sd + square_field_of(&d, &d) > 1.0 / n as f64 + 1.0 / p as f64
                        }
                        None => false,
                    }
                });
                (e, e > bound * (1.0 + 1e-12), cauchy_bad)
            })
            .collect();
        let energy = crate::stats::compensated_sum(stats.iter().map(|s| s.0)) / stats.len().max(1) as f64;
        let form = assemble_forms(std::slice::from_ref(&f), &accepted)?;
        let sol = solve_corrector(&form, 0.0)?;
        rows.push(TelescopingRow {
            n,
            energy,
            alpha_bound: sol.alpha_estimate,
            n_samples: accepted.len(),
            rejects,
            bound_violations: stats.iter().filter(|s| s.1).count(),
            cauchy_violations: stats.iter().filter(|s| s.2).count(),
        });
        prev = Some(n);
    }
    Ok(rows)
}

/// Reduced Palm environments from independent equilibrium draws, one Palm
/// point per draw. Draw `k` uses seed `replica_seed(seed, k)`.
pub fn sample_palm_environments(
    sampler: &SamplerSpec,
    pot: &PotentialSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<EnvironmentState>> {
    (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let s = replica_seed(seed, k);
            let config = sample_equilibrium(sampler, pot, s)?;
            let palm = palm_condition(&config, sub_seed(s, 7))?;
            Ok(EnvironmentState::from_palm(&palm))
        })
        .collect()
}

/// Even Gaussian pair sums of the given widths.
pub fn symmetric_pair_basis(widths: &[f64]) -> Vec<CylinderFunction> {
    widths
        .iter()
        .map(|&w| CylinderFunction::pair_sum(Profile::Gaussian { width: w }))
        .collect()
}
