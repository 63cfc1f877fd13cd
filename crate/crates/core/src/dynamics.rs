//! Integrators for the labeled particle system, the exact hard-rod
//! construction, Dyson's model and the environment process.
//!
//! Internally a replica is a vector of unwrapped positions indexed by
//! particle id; ids are the storage order of the initial configuration.
//! Wrapping is applied only where the drift needs it.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::configspace::{label_ordered, Boundary, Configuration, EnvironmentState, LabeledState};
use crate::models::{pair_drift, pair_drift_periodic, PotentialKind, PotentialSpec};
use crate::rng::{rng_from_seed, sub_seed, SimRng};
use crate::{Error, Result};

/// Smallest sub-step the adaptive scheme will attempt.
pub const MIN_SUBSTEP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    /// Order-preserving reject-and-halve Euler with Brownian-bridge
    /// refinement of the noise.
    AdaptiveEuler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    /// Interaction truncation radius `R`.
    pub drift_cutoff: f64,
    /// Absolute gap below which adaptive steps may not push a pair.
    #[serde(default)]
    pub min_gap_guard: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

fn default_stride() -> usize {
    1
}

impl IntegratorSpec {
    pub fn new(dt: f64, t_end: f64, scheme: Scheme, drift_cutoff: f64) -> Self {
        IntegratorSpec {
            dt,
            t_end,
            scheme,
            drift_cutoff,
            min_gap_guard: 0.0,
            record_stride: 1,
        }
    }

    pub fn with_guard(mut self, guard: f64) -> Self {
        self.min_gap_guard = guard;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    /// Guard of `1e-4` mean gaps.
    pub fn default_guard(mean_gap: f64) -> f64 {
        1e-4 * mean_gap
    }

    pub fn validate(&self, boundary: Boundary) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::invalid("t_end", format!("must be > 0, got {}", self.t_end)));
        }
        if self.dt > self.t_end {
            return Err(Error::invalid("dt", "must not exceed t_end"));
        }
        if !(self.drift_cutoff > 0.0) {
            return Err(Error::invalid(
                "drift_cutoff",
                format!("must be > 0, got {}", self.drift_cutoff),
            ));
        }
        if let Some(l) = boundary.length() {
            if self.drift_cutoff > 0.5 * l {
                return Err(Error::invalid(
                    "drift_cutoff",
                    format!("{} exceeds half the box length {}", self.drift_cutoff, 0.5 * l),
                ));
            }
        }
        if !(self.min_gap_guard >= 0.0) {
            return Err(Error::invalid("min_gap_guard", "must be >= 0"));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record_stride", "must be >= 1"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Recorded times `k * stride * dt`.
    pub fn record_times(&self) -> Vec<f64> {
        let n = self.n_steps() / self.record_stride;
        (0..=n)
            .map(|k| (k * self.record_stride) as f64 * self.dt)
            .collect()
    }
}

/// Which paths a simulation keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recording {
    TaggedOnly,
    AllPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// Unwrapped tagged position at each recorded time.
    pub tagged_path: Vec<f64>,
    /// `all_paths[k][i]`: unwrapped position of particle `i` at time `k`.
    pub all_paths: Option<Vec<Vec<f64>>>,
    pub tagged_id: usize,
    pub collision_count: u64,
    pub seed: u64,
    pub box_length: Option<f64>,
}

impl TrajectoryRecord {
    fn start(times: Vec<f64>, tagged_id: usize, seed: u64, boundary: Boundary, rec: Recording) -> Self {
        let n = times.len();
        TrajectoryRecord {
            times,
            tagged_path: Vec::with_capacity(n),
            all_paths: match rec {
                Recording::AllPaths => Some(Vec::with_capacity(n)),
                Recording::TaggedOnly => None,
            },
            tagged_id,
            collision_count: 0,
            seed,
            box_length: boundary.length(),
        }
    }

    fn push(&mut self, unwrapped: &[f64]) {
        self.tagged_path.push(unwrapped[self.tagged_id]);
        if let Some(all) = self.all_paths.as_mut() {
            all.push(unwrapped.to_vec());
        }
    }

    pub fn boundary(&self) -> Boundary {
        match self.box_length {
            Some(l) => Boundary::periodic(l),
            None => Boundary::Unbounded,
        }
    }

    pub fn n_particles(&self) -> Option<usize> {
        self.all_paths.as_ref().and_then(|a| a.first()).map(|r| r.len())
    }
}

/// Drift evaluation for a fixed potential, boundary and cutoff.
///
/// Short-range interactions are found by scanning neighbours in sorted
/// order (minimum image, valid because the cutoff is at most `L/2`). The log
/// kind with a cutoff covering the whole box uses the image-summed cot
/// kernel over all pairs.
pub struct DriftField {
    pot: PotentialSpec,
    boundary: Boundary,
    cutoff: f64,
    order: Vec<usize>,
    wrapped: Vec<f64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl DriftField {
    pub fn new(pot: PotentialSpec, boundary: Boundary, cutoff: f64) -> Self {
        DriftField {
            pot,
            boundary,
            cutoff,
            order: Vec::new(),
            wrapped: Vec::new(),
            cos: Vec::new(),
            sin: Vec::new(),
        }
    }

    fn uses_full_log_sum(&self) -> bool {
        self.pot.kind == PotentialKind::Log
            && match self.boundary.length() {
                Some(l) => self.cutoff >= 0.5 * l,
                None => self.cutoff.is_infinite(),
            }
    }

    /// Drift `sum_{j != i, |gap| < R} pair_drift(x_i - x_j)` for every `i`.
    pub fn compute(&mut self, positions: &[f64], out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(positions.len(), out.len());
        out.iter_mut().for_each(|d| *d = 0.0);
        if self.pot.kind == PotentialKind::Free || positions.len() < 2 {
            return Ok(());
        }
        if self.uses_full_log_sum() {
            self.full_log_sum(positions, out)
        } else {
            self.neighbour_scan(positions, out)
        }
    }

    fn full_log_sum(&mut self, positions: &[f64], out: &mut [f64]) -> Result<()> {
        let n = positions.len();
        let half_beta = 0.5 * self.pot.beta;
        match self.boundary.length() {
            Some(l) => {
                // cot(k(x_i - x_j)) = (c_i c_j + s_i s_j) / (s_i c_j - c_i s_j)
                let k = std::f64::consts::PI / l;
                self.cos.clear();
                self.sin.clear();
                for &x in positions {
                    let (s, c) = (k * x).sin_cos();
                    self.cos.push(c);
                    self.sin.push(s);
                }
                for i in 0..n {
                    let (ci, si) = (self.cos[i], self.sin[i]);
                    let acc = cot_row(ci, si, &self.cos[..i], &self.sin[..i])
                        + cot_row(ci, si, &self.cos[i + 1..], &self.sin[i + 1..]);
                    out[i] = half_beta * k * acc;
                }
            }
            None => {
                for i in 0..n {
                    let xi = positions[i];
                    let acc = inverse_row(xi, &positions[..i]) + inverse_row(xi, &positions[i + 1..]);
                    out[i] = half_beta * acc;
                }
            }
        }
        if let Some(i) = out.iter().position(|d| !d.is_finite()) {
            return Err(self.offending_pair(positions, i));
        }
        Ok(())
    }

    fn offending_pair(&self, positions: &[f64], i: usize) -> Error {
        for j in 0..positions.len() {
            if j != i {
                let d = pair_drift_in(&self.pot, self.boundary, positions[i] - positions[j]);
                if !matches!(d, Ok(v) if v.is_finite()) {
                    return Error::NonFiniteDrift { i, j };
                }
            }
        }
        Error::NonFiniteDrift { i, j: i }
    }

    fn neighbour_scan(&mut self, positions: &[f64], out: &mut [f64]) -> Result<()> {
        let n = positions.len();
        self.wrapped.clear();
        self.wrapped
            .extend(positions.iter().map(|&x| self.boundary.wrap(x)));
        if self.order.len() != n {
            self.order = (0..n).collect();
        }
        let w = &self.wrapped;
        insertion_sort_by_key(&mut self.order, |&i| w[i]);

        let range = self.cutoff.min(self.pot.interaction_range());
        let length = self.boundary.length();
        for a in 0..n {
            let i = self.order[a];
            for step in 1..n {
                let b = a + step;
                let (j, forward) = match length {
                    Some(l) => {
                        let j = self.order[b % n];
                        let mut d = w[j] - w[i];
                        if b >= n {
                            d += l;
                        }
                        (j, d)
                    }
                    None => {
                        if b >= n {
                            break;
                        }
                        let j = self.order[b];
                        (j, w[j] - w[i])
                    }
                };
                if forward >= range {
                    break;
                }
                // Signed gaps x_i - x_j = -forward and x_j - x_i = forward.
                let on_i = pair_drift(&self.pot, -forward).map_err(|_| Error::NonFiniteDrift { i, j })?;
                let on_j = pair_drift(&self.pot, forward).map_err(|_| Error::NonFiniteDrift { i: j, j: i })?;
                if !(on_i.is_finite() && on_j.is_finite()) {
                    return Err(Error::NonFiniteDrift { i, j });
                }
                out[i] += on_i;
                out[j] += on_j;
            }
        }
        Ok(())
    }
}

#[inline]
fn cot_row(ci: f64, si: f64, c: &[f64], s: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut cc = c.chunks_exact(4);
    let mut ss = s.chunks_exact(4);
    for (cj, sj) in (&mut cc).zip(&mut ss) {
        for l in 0..4 {
            acc[l] += (ci * cj[l] + si * sj[l]) / (si * cj[l] - ci * sj[l]);
        }
    }
    let mut tail = 0.0;
    for (cj, sj) in cc.remainder().iter().zip(ss.remainder()) {
        tail += (ci * cj + si * sj) / (si * cj - ci * sj);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn inverse_row(xi: f64, xs: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut chunks = xs.chunks_exact(4);
    for xj in &mut chunks {
        for l in 0..4 {
            acc[l] += 1.0 / (xi - xj[l]);
        }
    }
    let tail: f64 = chunks.remainder().iter().map(|xj| 1.0 / (xi - xj)).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn insertion_sort_by_key<F: Fn(&usize) -> f64>(v: &mut [usize], key: F) {
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && key(&v[j - 1]) > key(&v[j]) {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
}

/// Pair drift at signed gap `gap` under the given boundary.
pub fn pair_drift_in(pot: &PotentialSpec, boundary: Boundary, gap: f64) -> Result<f64> {
    match boundary.length() {
        Some(l) => pair_drift_periodic(pot, gap, l),
        None => pair_drift(pot, gap),
    }
}

/// Smallest gap between consecutive ids (cyclic in a periodic box);
/// negative when the id order is broken.
fn ordered_min_gap(u: &[f64], boundary: Boundary) -> f64 {
    let mut m = f64::INFINITY;
    for w in u.windows(2) {
        m = m.min(w[1] - w[0]);
    }
    if let (Some(l), n) = (boundary.length(), u.len()) {
        if n > 1 {
            m = m.min(u[0] + l - u[n - 1]);
        }
    }
    m
}

/// One replica's integration state and scratch.
struct Stepper {
    field: DriftField,
    boundary: Boundary,
    order_preserving: bool,
    /// Count order breaks of plain Euler steps (singular potentials only).
    monitor_crossings: bool,
    /// Minimum admissible gap (rod length for hard rods).
    contact: f64,
    guard: f64,
    collisions: u64,
    drift: Vec<f64>,
    trial: Vec<f64>,
}

impl Stepper {
    fn new(pot: &PotentialSpec, boundary: Boundary, ispec: &IntegratorSpec, n: usize) -> Self {
        Stepper {
            field: DriftField::new(*pot, boundary, ispec.drift_cutoff),
            boundary,
            order_preserving: ispec.scheme == Scheme::AdaptiveEuler,
            monitor_crossings: pot.is_singular(),
            contact: if pot.kind == PotentialKind::HardRod {
                pot.range
            } else {
                0.0
            },
            guard: ispec.min_gap_guard,
            collisions: 0,
            drift: vec![0.0; n],
            trial: vec![0.0; n],
        }
    }

    /// Advance by `h` with Brownian increments `dw` (already scaled).
    fn advance(&mut self, u: &mut [f64], dw: &[f64], h: f64, rng: &mut SimRng) -> Result<()> {
        self.field.compute(u, &mut self.drift)?;
        for ((t, &x), (&b, &w)) in self
            .trial
            .iter_mut()
            .zip(u.iter())
            .zip(self.drift.iter().zip(dw))
        {
            *t = x + b * h + w;
        }
        if !self.order_preserving {
            if self.monitor_crossings && u.len() > 1 && self.broke_order(u) {
                self.collisions += 1;
            }
            u.copy_from_slice(&self.trial);
            return Ok(());
        }
        let before = ordered_min_gap(u, self.boundary) - self.contact;
        let after = ordered_min_gap(&self.trial, self.boundary) - self.contact;
        if after > 0.0 && after >= self.guard.min(0.5 * before) {
            u.copy_from_slice(&self.trial);
            return Ok(());
        }
        if after <= 0.0 {
            self.collisions += 1;
        }
        let half = 0.5 * h;
        if half < MIN_SUBSTEP {
            return Err(Error::StiffRegion);
        }
        let sd = 0.5 * h.sqrt();
        let first: Vec<f64> = dw
            .iter()
            .map(|&w| 0.5 * w + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let second: Vec<f64> = dw.iter().zip(&first).map(|(w, f)| w - f).collect();
        self.advance(u, &first, half, rng)?;
        self.advance(u, &second, half, rng)
    }

    /// Whether the trial state reverses the order of some adjacent pair
    /// present in `u` (diagnostic for the plain Euler scheme).
    fn broke_order(&self, u: &[f64]) -> bool {
        let n = u.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| u[a].total_cmp(&u[b]));
        idx.windows(2)
            .any(|w| self.trial[w[1]] - self.trial[w[0]] <= self.contact)
    }
}

/// One Euler–Maruyama step of the labeled system:
/// `x_i <- x_i + drift_i dt + sqrt(dt) noise_i`.
///
/// `noise[k]` drives the point stored at index `k` of `state`. With the
/// adaptive scheme the step is split by Brownian-bridge refinement (drawn
/// from `bridge_seed`) until order is preserved.
pub fn step_pairwise(
    state: &LabeledState,
    pot: &PotentialSpec,
    ispec: &IntegratorSpec,
    noise: &[f64],
    bridge_seed: u64,
) -> Result<LabeledState> {
    let config = state.config();
    let boundary = config.boundary();
    ispec.validate(boundary)?;
    if noise.len() != config.len() {
        return Err(Error::invalid(
            "noise",
            format!("length {} for {} particles", noise.len(), config.len()),
        ));
    }
    let mut u = config.positions().to_vec();
    let sq = ispec.dt.sqrt();
    let dw: Vec<f64> = noise.iter().map(|z| sq * z).collect();
    let mut stepper = Stepper::new(pot, boundary, ispec, u.len());
    let mut rng = rng_from_seed(bridge_seed);
    stepper.advance(&mut u, &dw, ispec.dt, &mut rng)?;
    let pairs = u
        .into_iter()
        .zip(state.label_offsets().iter().copied())
        .collect();
    LabeledState::from_labeled_positions(pairs, boundary)
}

fn default_origin(config: &Configuration) -> f64 {
    match config.boundary().length() {
        Some(l) => 0.5 * l,
        None => {
            let p = config.positions();
            0.5 * (p[0] + p[p.len() - 1])
        }
    }
}

/// Integrates the labeled system from `initial`; the tagged particle is the
/// one nearest the centre of the box (or of the initial cloud).
pub fn simulate_pairwise(
    initial: &Configuration,
    pot: &PotentialSpec,
    ispec: &IntegratorSpec,
    seed: u64,
    recording: Recording,
) -> Result<TrajectoryRecord> {
    pot.validate()?;
    let boundary = initial.boundary();
    ispec.validate(boundary)?;
    let labeled = label_ordered(initial, default_origin(initial))?;
    let tagged = labeled.tagged_index();
    let n = initial.len();
    let mut u = initial.positions().to_vec();
    let mut stepper = Stepper::new(pot, boundary, ispec, n);
    let mut noise_rng = rng_from_seed(seed);
    let mut bridge_rng = rng_from_seed(sub_seed(seed, 1));
    let mut record = TrajectoryRecord::start(ispec.record_times(), tagged, seed, boundary, recording);
    record.push(&u);
    let sq = ispec.dt.sqrt();
    let mut dw = vec![0.0; n];
    let steps = (record.times.len() - 1) * ispec.record_stride;
    for step in 1..=steps {
        for w in dw.iter_mut() {
            *w = sq * noise_rng.sample::<f64, _>(StandardNormal);
        }
        stepper.advance(&mut u, &dw, ispec.dt, &mut bridge_rng)?;
        if step % ispec.record_stride == 0 {
            record.push(&u);
        }
    }
    record.collision_count = stepper.collisions;
    Ok(record)
}

/// Dyson's model `dX^i = dB^i + (beta/2) sum_j 1/(X^i - X^j) dt` from a
/// strictly ordered initial configuration, integrated with the adaptive
/// scheme. In a periodic box the interaction is the image-summed kernel.
pub fn simulate_dyson(
    initial: &Configuration,
    beta: f64,
    ispec: &IntegratorSpec,
    seed: u64,
    recording: Recording,
) -> Result<TrajectoryRecord> {
    if !(beta >= 1.0) {
        return Err(Error::invalid(
            "beta",
            format!("Dyson dynamics needs beta >= 1, got {beta}"),
        ));
    }
    if initial.len() < 2 || !initial.is_strictly_ordered() {
        return Err(Error::invalid(
            "initial configuration",
            "must hold at least two strictly ordered points",
        ));
    }
    let mut spec = *ispec;
    spec.scheme = Scheme::AdaptiveEuler;
    if spec.min_gap_guard == 0.0 {
        spec.min_gap_guard = IntegratorSpec::default_guard(initial.mean_gap());
    }
    simulate_pairwise(initial, &PotentialSpec::log(beta), &spec, seed, recording)
}

/// Evolves a Dyson configuration for `t_burn` and returns the final
/// configuration.
pub fn burn_in_dyson(initial: &Configuration, beta: f64, dt: f64, t_burn: f64, seed: u64) -> Result<Configuration> {
    if t_burn <= 0.0 {
        return Ok(initial.clone());
    }
    let cutoff = initial.boundary().length().map_or(f64::INFINITY, |l| 0.5 * l);
    let ispec = IntegratorSpec::new(dt.min(t_burn), t_burn, Scheme::AdaptiveEuler, cutoff)
        .with_stride((t_burn / dt.min(t_burn)).round() as usize);
    let record = simulate_dyson(initial, beta, &ispec, seed, Recording::AllPaths)?;
    let last = record.all_paths.unwrap().pop().unwrap();
    Configuration::new(last, initial.boundary())
}

/// Hard rods via the rank construction: `n` independent Brownian motions
/// started from an equilibrium (Poisson) configuration of the free line,
/// sorted at every output time; the tagged particle is the middle rank.
///
/// Rods of positive length use the gap-shift map `y_(k) = x_(k) + k a`
/// with the point system living on the free length `n/intensity - n a`.
/// Sorting the updated ranked array is equivalent in law to sorting the
/// individual paths since the increments are i.i.d.
pub fn simulate_hard_rod_exact(
    n: usize,
    intensity: f64,
    rod_length: f64,
    t_end: f64,
    dt: f64,
    seed: u64,
    recording: Recording,
) -> Result<TrajectoryRecord> {
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    if !(intensity > 0.0 && dt > 0.0 && t_end >= dt && rod_length >= 0.0) {
        return Err(Error::invalid(
            "hard rod parameters",
            format!("intensity={intensity}, dt={dt}, t_end={t_end}, rod={rod_length}"),
        ));
    }
    let free = n as f64 / intensity - n as f64 * rod_length;
    if free <= 0.0 {
        return Err(Error::invalid("range", "rods do not fit at this intensity"));
    }
    let mut rng = rng_from_seed(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * free).collect();
    x.sort_by(f64::total_cmp);
    let tagged = n / 2;
    let steps = (t_end / dt).round() as usize;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let mut record = TrajectoryRecord::start(times, tagged, seed, Boundary::Unbounded, recording);
    let mut ranked = vec![0.0; n];
    let emit = |x: &[f64], ranked: &mut Vec<f64>, record: &mut TrajectoryRecord| {
        for (k, (r, &v)) in ranked.iter_mut().zip(x).enumerate() {
            *r = v + k as f64 * rod_length;
        }
        record.push(ranked);
    };
    emit(&x, &mut ranked, &mut record);
    let sq = dt.sqrt();
    for _ in 0..steps {
        for v in x.iter_mut() {
            *v += sq * rng.sample::<f64, _>(StandardNormal);
        }
        insertion_sort_f64(&mut x);
        emit(&x, &mut ranked, &mut record);
    }
    Ok(record)
}

fn insertion_sort_f64(v: &mut [f64]) {
    for i in 1..v.len() {
        let mut j = i;
        let x = v[i];
        while j > 0 && v[j - 1] > x {
            v[j] = v[j - 1];
            j -= 1;
        }
        v[j] = x;
    }
}

/// Euler scheme for the tagged particle and environment coordinates
/// `X = X^0`, `Y^i = X^i - X^0`:
///
/// ```text
/// dX   = dB^0 + b_0(Y) dt,            b_0 = sum_j d(-Y^j)
/// dY^i = dB^i - dB^0 + (d(Y^i) + sum_{j != i} d(Y^i - Y^j) - b_0) dt
/// ```
///
/// with `d` the pair drift. `noises[k]` holds the step-`k` standard normals:
/// index 0 drives the tagged particle, index `1 + m` the point at
/// `relative_positions()[m]` of the initial state. Returns every
/// `record_stride`-th state, starting with the initial one.
pub fn simulate_environment(
    state: &EnvironmentState,
    pot: &PotentialSpec,
    ispec: &IntegratorSpec,
    noises: &[Vec<f64>],
) -> Result<Vec<EnvironmentState>> {
    let boundary = state.boundary();
    ispec.validate(boundary)?;
    let m = state.len();
    if let Some(bad) = noises.iter().position(|z| z.len() != m + 1) {
        return Err(Error::invalid(
            "noises",
            format!("row {bad} has wrong length (expected {})", m + 1),
        ));
    }
    let mut x = state.tagged_position;
    let mut y = state.relative_positions().to_vec();
    let mut drift = vec![0.0; m];
    let sq = ispec.dt.sqrt();
    let r = ispec.drift_cutoff;
    let d = |g: f64, i: usize, j: usize| -> Result<f64> {
        let g = boundary.min_image(g);
        if g.abs() >= r {
            return Ok(0.0);
        }
        match pair_drift_in(pot, boundary, g) {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::NonFiniteDrift { i, j }),
        }
    };
    let mut out = vec![state.clone()];
    for (step, z) in noises.iter().enumerate() {
        let mut b0 = 0.0;
        for (j, &yj) in y.iter().enumerate() {
            b0 += d(-yj, 0, j + 1)?;
        }
        for i in 0..m {
            let mut bi = d(y[i], i + 1, 0)?;
            for j in 0..m {
                if j != i {
                    bi += d(y[i] - y[j], i + 1, j + 1)?;
                }
            }
            drift[i] = bi - b0;
        }
        x += b0 * ispec.dt + sq * z[0];
        for i in 0..m {
            y[i] += drift[i] * ispec.dt + sq * (z[i + 1] - z[0]);
        }
        if (step + 1) % ispec.record_stride == 0 {
            out.push(EnvironmentState::new(x, y.clone(), boundary)?);
        }
    }
    Ok(out)
}

/// Number of recorded times at which some adjacent gap (cyclic in a
/// periodic box) is below `tol`.
pub fn detect_collisions(record: &TrajectoryRecord, tol: f64) -> Result<usize> {
    let paths = record
        .all_paths
        .as_ref()
        .ok_or_else(|| Error::invalid("record", "collision detection needs all paths"))?;
    let boundary = record.boundary();
    let mut count = 0;
    for row in paths {
        if row.len() < 2 {
            continue;
        }
        let c = Configuration::new(row.clone(), boundary)?;
        if c.gaps().iter().any(|&g| g < tol) {
            count += 1;
        }
    }
    Ok(count)
}

/// Pathwise comparison of the environment scheme with the labeled system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyPoint {
    pub dt: f64,
    /// Sup-norm distance to the labeled Euler scheme at the same `dt` and
    /// the same increments.
    pub matched_discrepancy: f64,
    /// Sup-norm distance to the labeled system integrated on the fine grid
    /// with the same Brownian path.
    pub reference_discrepancy: f64,
}

/// Runs the environment scheme at each `dt` in `dts` and compares it with
/// the labeled system driven by the same Brownian path, sampled on a fine
/// grid of step `fine_dt` (every `dt` must be a multiple of `fine_dt`).
pub fn environment_consistency(
    state: &EnvironmentState,
    pot: &PotentialSpec,
    dts: &[f64],
    fine_dt: f64,
    t_end: f64,
    seed: u64,
) -> Result<Vec<ConsistencyPoint>> {
    let boundary = state.boundary();
    let m = state.len();
    let n = m + 1;
    let cutoff = boundary.length().map_or(f64::INFINITY, |l| 0.5 * l);
    let fine_steps = (t_end / fine_dt).round() as usize;
    let mut rng = rng_from_seed(seed);
    let fine: Vec<Vec<f64>> = (0..fine_steps)
        .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();

    // Labeled system: id 0 is the tagged particle, id 1 + k the k-th
    // relative position.
    let start: Vec<f64> = std::iter::once(state.tagged_position)
        .chain(state.relative_positions().iter().map(|r| state.tagged_position + r))
        .collect();
    let labeled_run = |noise: &[Vec<f64>], dt: f64| -> Result<Vec<Vec<f64>>> {
        let ispec = IntegratorSpec::new(dt, t_end, Scheme::EulerMaruyama, cutoff);
        let mut stepper = Stepper::new(pot, boundary, &ispec, n);
        let mut dummy = rng_from_seed(0);
        let mut u = start.clone();
        let mut out = vec![u.clone()];
        let sq = dt.sqrt();
        for z in noise {
            let dw: Vec<f64> = z.iter().map(|v| sq * v).collect();
            stepper.advance(&mut u, &dw, dt, &mut dummy)?;
            out.push(u.clone());
        }
        Ok(out)
    };
    let relatives_of = |u: &[f64]| -> Vec<f64> {
        let mut r: Vec<f64> = u[1..].iter().map(|x| boundary.min_image(x - u[0])).collect();
        r.sort_by(f64::total_cmp);
        r
    };
    let sup_distance = |env: &[EnvironmentState], lab: &[Vec<f64>], stride: usize| -> f64 {
        env.iter()
            .enumerate()
            .map(|(k, e)| {
                let r = relatives_of(&lab[k * stride]);
                e.relative_positions()
                    .iter()
                    .zip(&r)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    };

    let reference = labeled_run(&fine, fine_dt)?;
    let mut points = Vec::with_capacity(dts.len());
    for &dt in dts {
        let ratio = (dt / fine_dt).round() as usize;
        if ratio == 0 || ((ratio as f64) * fine_dt - dt).abs() > 1e-9 * dt {
            return Err(Error::invalid("dt", "must be a multiple of fine_dt"));
        }
        let scale = (fine_dt / dt).sqrt();
        let coarse: Vec<Vec<f64>> = fine
            .chunks(ratio)
            .filter(|c| c.len() == ratio)
            .map(|block| {
                (0..n)
                    .map(|p| block.iter().map(|z| z[p]).sum::<f64>() * scale)
                    .collect()
            })
            .collect();
        let ispec = IntegratorSpec::new(dt, t_end, Scheme::EulerMaruyama, cutoff);
        let env = simulate_environment(state, pot, &ispec, &coarse)?;
        let matched = labeled_run(&coarse, dt)?;
        points.push(ConsistencyPoint {
            dt,
            matched_discrepancy: sup_distance(&env, &matched, 1),
            reference_discrepancy: sup_distance(&env, &reference, ratio),
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configspace::to_environment;

    fn brute_drift(pot: &PotentialSpec, boundary: Boundary, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                (0..x.len())
                    .filter(|&j| j != i)
                    .map(|j| pair_drift_in(pot, boundary, boundary.min_image(x[i] - x[j])).unwrap())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn free_step_is_pure_noise() {
        let c = Configuration::periodic(vec![1.0, 2.0, 3.5], 10.0).unwrap();
        let state = label_ordered(&c, 2.0).unwrap();
        let ispec = IntegratorSpec::new(0.01, 1.0, Scheme::EulerMaruyama, 5.0);
        let noise = [0.5, -1.0, 2.0];
        let next = step_pairwise(&state, &PotentialSpec::free(), &ispec, &noise, 0).unwrap();
        for (label, p0) in state.positions_by_label() {
            let k = state.label_offsets().iter().position(|&l| l == label).unwrap();
            let p1 = next.position_of_label(label).unwrap();
            assert_eq!(p1, p0 + 0.1 * noise[k]);
        }
    }

    #[test]
    fn two_body_log_gap_growth() {
        let c = Configuration::unbounded(vec![-0.25, 0.25]).unwrap();
        let state = label_ordered(&c, 0.0).unwrap();
        let dt = 1e-3;
        let ispec = IntegratorSpec::new(dt, 1.0, Scheme::EulerMaruyama, f64::INFINITY);
        let next = step_pairwise(&state, &PotentialSpec::log(2.0), &ispec, &[0.0, 0.0], 0).unwrap();
        let gap = next.config().positions()[1] - next.config().positions()[0];
        assert!((gap - (0.5 + 2.0 * dt / 0.5)).abs() < 1e-15);
    }

    #[test]
    fn cutoff_drift_matches_all_pairs() {
        let pot = PotentialSpec::smooth_compact(1.0, 2.0, 3.0);
        let boundary = Boundary::periodic(3.0);
        let x = [0.2, 1.1, 2.7];
        let mut field = DriftField::new(pot, boundary, 1.5);
        let mut out = vec![0.0; 3];
        field.compute(&x, &mut out).unwrap();
        let brute = brute_drift(&pot, boundary, &x);
        for (a, b) in out.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn periodic_cot_sum_matches_pairwise_kernel() {
        let pot = PotentialSpec::log(2.0);
        let boundary = Boundary::periodic(16.0);
        let x: Vec<f64> = (0..13).map(|i| i as f64 * 1.2 + 0.1 * (i as f64).sin()).collect();
        let mut field = DriftField::new(pot, boundary, 8.0);
        let mut out = vec![0.0; x.len()];
        field.compute(&x, &mut out).unwrap();
        let brute = brute_drift(&pot, boundary, &x);
        for (a, b) in out.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn coincident_points_report_pair() {
        let pot = PotentialSpec::log(2.0);
        let mut field = DriftField::new(pot, Boundary::Unbounded, f64::INFINITY);
        let mut out = vec![0.0; 3];
        let err = field.compute(&[0.0, 1.0, 1.0], &mut out).unwrap_err();
        assert!(matches!(err, Error::NonFiniteDrift { i: 1, j: 2 }), "{err:?}");
    }

    #[test]
    fn hard_rod_single_particle_is_brownian() {
        let r = simulate_hard_rod_exact(1, 1.0, 0.0, 10.0, 1.0, 3, Recording::TaggedOnly).unwrap();
        assert_eq!(r.tagged_path.len(), 11);
        let mut rng = rng_from_seed(3);
        let x0: f64 = rng.random::<f64>();
        let mut x = x0;
        for k in 1..=10 {
            x += rng.sample::<f64, _>(StandardNormal);
            assert_eq!(r.tagged_path[k], x);
        }
    }

    #[test]
    fn hard_rod_ranks_stay_ordered() {
        let r = simulate_hard_rod_exact(2, 1.0, 0.0, 50.0, 0.5, 8, Recording::AllPaths).unwrap();
        for row in r.all_paths.as_ref().unwrap() {
            assert!(row[0] <= row[1]);
        }
        let rods = simulate_hard_rod_exact(20, 0.5, 0.7, 10.0, 0.1, 9, Recording::AllPaths).unwrap();
        for row in rods.all_paths.as_ref().unwrap() {
            assert!(row.windows(2).all(|w| w[1] - w[0] >= 0.7 - 1e-12));
        }
    }

    #[test]
    fn dyson_keeps_order_and_counts_no_collisions() {
        let init = crate::models::sample_beta_ensemble_periodic(32, 2.0, 1.0, 4).unwrap();
        let ispec = IntegratorSpec::new(0.01, 2.0, Scheme::AdaptiveEuler, 16.0).with_stride(10);
        let r = simulate_dyson(&init, 2.0, &ispec, 5, Recording::AllPaths).unwrap();
        assert_eq!(detect_collisions(&r, 1e-9).unwrap(), 0);
        for row in r.all_paths.as_ref().unwrap() {
            assert!(ordered_min_gap(row, Boundary::periodic(32.0)) > 0.0);
        }
        let again = simulate_dyson(&init, 2.0, &ispec, 5, Recording::AllPaths).unwrap();
        assert_eq!(r, again);
        assert!(simulate_dyson(&init, 0.5, &ispec, 5, Recording::TaggedOnly).is_err());
    }

    #[test]
    fn dyson_two_body_squared_gap_growth() {
        // For n = 2, G = X^2 - X^1 solves dG = sqrt(2) dW + (beta / G) dt, so
        // E[G_t^2] = G_0^2 + (2 + 2 beta) t. Compare against that and against
        // an independent scalar Euler scheme fed the same noise.
        let beta = 2.0;
        let t_end = 1.0;
        let dt = 1e-3;
        let g0 = 1.0;
        let init = Configuration::unbounded(vec![-0.5, 0.5]).unwrap();
        let ispec = IntegratorSpec::new(dt, t_end, Scheme::AdaptiveEuler, f64::INFINITY)
            .with_stride(1000);
        let reps = 2000;
        let mut sq = Vec::with_capacity(reps);
        let mut scalar = Vec::with_capacity(reps);
        for r in 0..reps as u64 {
            let rec = simulate_dyson(&init, beta, &ispec, r, Recording::AllPaths).unwrap();
            let last = rec.all_paths.unwrap().pop().unwrap();
            sq.push((last[1] - last[0]).powi(2));
            let mut rng = rng_from_seed(r);
            let mut g: f64 = g0;
            for _ in 0..1000 {
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                let next = g + beta / g * dt + dt.sqrt() * (z1 - z0);
                // Same reflection-free regime as the particle scheme.
                g = if next > 0.0 { next } else { g };
            }
            scalar.push(g * g);
        }
        let m = crate::stats::mean(&sq);
        let se = (crate::stats::variance(&sq) / reps as f64).sqrt();
        let exact = g0 * g0 + (2.0 + 2.0 * beta) * t_end;
        assert!((m - exact).abs() < 4.0 * se, "{m} vs {exact} (se {se})");
        let ms = crate::stats::mean(&scalar);
        assert!((m - ms).abs() < 0.05 * exact, "{m} vs scalar {ms}");
    }

    #[test]
    fn environment_matches_labeled_free_system() {
        let c = Configuration::unbounded(vec![-1.0, 0.0, 0.7, 2.0]).unwrap();
        let state = label_ordered(&c, 0.0).unwrap();
        let env = to_environment(&state);
        let ispec = IntegratorSpec::new(0.01, 0.05, Scheme::EulerMaruyama, 10.0);
        let noises: Vec<Vec<f64>> = (0..5)
            .map(|k| (0..4).map(|i| ((k * 4 + i) as f64).sin()).collect())
            .collect();
        let path = simulate_environment(&env, &PotentialSpec::free(), &ispec, &noises).unwrap();
        assert_eq!(path.len(), 6);
        let mut b = [0.0; 4];
        for z in &noises {
            for i in 0..4 {
                b[i] += 0.1 * z[i];
            }
        }
        let last = path.last().unwrap();
        let mut expected: Vec<f64> = env
            .relative_positions()
            .iter()
            .enumerate()
            .map(|(k, y)| y + (b[k + 1] - b[0]))
            .collect();
        expected.sort_by(f64::total_cmp);
        for (a, e) in last.relative_positions().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-14);
        }
    }

    #[test]
    fn environment_displacement_is_translation_invariant() {
        let pot = PotentialSpec::smooth_compact(1.0, 1.0, 2.0);
        let rel = vec![-0.8, -0.3, 0.4, 0.9];
        let ispec = IntegratorSpec::new(1e-3, 0.2, Scheme::EulerMaruyama, 10.0);
        let mut rng = rng_from_seed(2);
        let noises: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let a = EnvironmentState::new(0.0, rel.clone(), Boundary::Unbounded).unwrap();
        let b = EnvironmentState::new(7.0, rel, Boundary::Unbounded).unwrap();
        let pa = simulate_environment(&a, &pot, &ispec, &noises).unwrap();
        let pb = simulate_environment(&b, &pot, &ispec, &noises).unwrap();
        for (sa, sb) in pa.iter().zip(&pb) {
            assert_eq!(sa.relative_positions(), sb.relative_positions());
            assert!(((sa.tagged_position - 0.0) - (sb.tagged_position - 7.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn collision_detection_counts() {
        let single = simulate_hard_rod_exact(1, 1.0, 0.0, 1.0, 0.1, 1, Recording::AllPaths).unwrap();
        assert_eq!(detect_collisions(&single, 1e-3).unwrap(), 0);
        // Independent Brownian particles cross freely.
        let init = crate::models::sample_poisson(
            &crate::models::SamplerSpec::new(crate::models::SamplerKind::Poisson, 1.0, 50).unwrap(),
            3,
        )
        .unwrap();
        let ispec = IntegratorSpec::new(0.01, 10.0, Scheme::EulerMaruyama, 1.0).with_stride(10);
        let free = simulate_pairwise(&init, &PotentialSpec::free(), &ispec, 3, Recording::AllPaths).unwrap();
        assert!(detect_collisions(&free, 1e-3).unwrap() > 0);
        let tagged_only =
            simulate_pairwise(&init, &PotentialSpec::free(), &ispec, 3, Recording::TaggedOnly).unwrap();
        assert!(detect_collisions(&tagged_only, 1e-3).is_err());
    }

    #[test]
    fn integrator_spec_validation() {
        let b = Boundary::periodic(10.0);
        assert!(IntegratorSpec::new(-0.1, 1.0, Scheme::EulerMaruyama, 1.0).validate(b).is_err());
        assert!(IntegratorSpec::new(0.1, 1.0, Scheme::EulerMaruyama, 6.0).validate(b).is_err());
        assert!(IntegratorSpec::new(2.0, 1.0, Scheme::EulerMaruyama, 1.0).validate(b).is_err());
        let ok = IntegratorSpec::new(0.1, 1.0, Scheme::EulerMaruyama, 5.0).with_stride(5);
        assert!(ok.validate(b).is_ok());
        assert_eq!(ok.record_times(), vec![0.0, 0.5, 1.0]);
    }
}
