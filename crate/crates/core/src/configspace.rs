//! Configurations of points on the line, labels, shifts and the change of
//! coordinates to the environment seen from a tagged particle.
//!
//! A finite [`Configuration`] in a periodic box stands in for a locally
//! finite configuration on the whole line. Positions are always stored
//! sorted; in a periodic box they live in the fundamental domain `[0, L)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative tolerance below which two coordinates count as coincident.
pub const DISTINCT_RELATIVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Boundary {
    Unbounded,
    Periodic { length: f64 },
}

impl Boundary {
    pub fn periodic(length: f64) -> Self {
        Boundary::Periodic { length }
    }

    pub fn length(&self) -> Option<f64> {
        match *self {
            Boundary::Unbounded => None,
            Boundary::Periodic { length } => Some(length),
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, Boundary::Periodic { .. })
    }

    /// Map a coordinate into the fundamental domain.
    #[inline]
    pub fn wrap(&self, x: f64) -> f64 {
        match *self {
            Boundary::Unbounded => x,
            Boundary::Periodic { length } => {
                let w = x.rem_euclid(length);
                // rem_euclid can round up to `length` for tiny negative x.
                if w >= length {
                    0.0
                } else {
                    w
                }
            }
        }
    }

    /// Minimum-image representative of a displacement, in `[-L/2, L/2)`.
    #[inline]
    pub fn min_image(&self, d: f64) -> f64 {
        match *self {
            Boundary::Unbounded => d,
            Boundary::Periodic { length } => {
                let half = 0.5 * length;
                let w = (d + half).rem_euclid(length) - half;
                if w >= half {
                    w - length
                } else {
                    w
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Boundary::Periodic { length } if !(length.is_finite() && length > 0.0) => Err(
                Error::invalid("box_length", format!("must be positive, got {length}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Finite point configuration on the line or on a circle of length `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    positions: Vec<f64>,
    boundary: Boundary,
}

impl Configuration {
    /// Builds a configuration, wrapping into the box and sorting.
    pub fn new(mut positions: Vec<f64>, boundary: Boundary) -> Result<Self> {
        boundary.validate()?;
        if let Some(bad) = positions.iter().find(|p| !p.is_finite()) {
            return Err(Error::invalid("position", format!("non-finite value {bad}")));
        }
        if boundary.is_periodic() {
            for p in positions.iter_mut() {
                *p = boundary.wrap(*p);
            }
        }
        positions.sort_by(f64::total_cmp);
        Ok(Configuration {
            positions,
            boundary,
        })
    }

    pub fn unbounded(positions: Vec<f64>) -> Result<Self> {
        Self::new(positions, Boundary::Unbounded)
    }

    pub fn periodic(positions: Vec<f64>, length: f64) -> Result<Self> {
        Self::new(positions, Boundary::periodic(length))
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<f64> {
        self.positions
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Adjacent gaps in position order; cyclic (including the wrap gap) in
    /// a periodic box.
    pub fn gaps(&self) -> Vec<f64> {
        let n = self.positions.len();
        let mut gaps: Vec<f64> = self.positions.windows(2).map(|w| w[1] - w[0]).collect();
        if let (Some(length), true) = (self.boundary.length(), n > 1) {
            gaps.push(self.positions[0] + length - self.positions[n - 1]);
        }
        gaps
    }

    pub fn min_gap(&self) -> Option<f64> {
        self.gaps().into_iter().reduce(f64::min)
    }

    /// Length scale used to decide whether two points coincide.
    pub fn length_scale(&self) -> f64 {
        match self.boundary.length() {
            Some(l) => l,
            None => match (self.positions.first(), self.positions.last()) {
                (Some(a), Some(b)) => (b - a).max(1.0),
                _ => 1.0,
            },
        }
    }

    pub fn distinct_tolerance(&self) -> f64 {
        DISTINCT_RELATIVE_TOLERANCE * self.length_scale()
    }

    /// Membership in the ordered set: every adjacent gap exceeds the
    /// coincidence tolerance.
    pub fn is_strictly_ordered(&self) -> bool {
        let tol = self.distinct_tolerance();
        self.gaps().iter().all(|&g| g > tol)
    }

    /// Mean spacing, `L / n` in a periodic box.
    pub fn mean_gap(&self) -> f64 {
        let n = self.positions.len();
        match self.boundary.length() {
            Some(l) if n > 0 => l / n as f64,
            _ if n > 1 => (self.positions[n - 1] - self.positions[0]) / (n - 1) as f64,
            _ => 1.0,
        }
    }

    /// Translate every point by `x` (modulo the box when periodic).
    pub fn shift(&self, x: f64) -> Configuration {
        let positions = self.positions.iter().map(|p| p + x).collect();
        Configuration::new(positions, self.boundary).expect("shift preserves validity")
    }

    /// One position per line.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.positions.len() * 20);
        for p in &self.positions {
            out.push_str(&p.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses the one-per-line format; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str, boundary: Boundary) -> Result<Self> {
        let mut positions = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            positions.push(v);
        }
        Self::new(positions, boundary)
    }

    /// Positions as a JSON array of numbers.
    pub fn to_json_array(&self) -> String {
        serde_json::to_string(&self.positions).expect("finite floats serialize")
    }

    pub fn from_json_array(text: &str, boundary: Boundary) -> Result<Self> {
        let positions: Vec<f64> =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(positions, boundary)
    }
}

/// `theta_x`: translate the configuration by `x`.
pub fn shift(config: &Configuration, x: f64) -> Configuration {
    config.shift(x)
}

/// Configuration together with an integer label for every stored point.
///
/// `label_offsets[k]` is the label of `config.positions()[k]`; the tagged
/// particle carries label 0 and sits at storage index `tagged_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledState {
    config: Configuration,
    label_offsets: Vec<i64>,
    tagged_index: usize,
}

impl LabeledState {
    pub fn new(config: Configuration, label_offsets: Vec<i64>) -> Result<Self> {
        if config.is_empty() {
            return Err(Error::EmptyConfiguration);
        }
        if label_offsets.len() != config.len() {
            return Err(Error::invalid(
                "label_offsets",
                format!("{} labels for {} points", label_offsets.len(), config.len()),
            ));
        }
        let zeros: Vec<usize> = label_offsets
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 0)
            .map(|(k, _)| k)
            .collect();
        if zeros.len() != 1 {
            return Err(Error::invalid(
                "label_offsets",
                format!("exactly one label must be 0, found {}", zeros.len()),
            ));
        }
        let mut sorted = label_offsets.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("label_offsets", "labels must be distinct"));
        }
        Ok(LabeledState {
            config,
            label_offsets,
            tagged_index: zeros[0],
        })
    }

    /// Builds a state from `(position, label)` pairs in any order.
    pub fn from_labeled_positions(pairs: Vec<(f64, i64)>, boundary: Boundary) -> Result<Self> {
        let mut pairs: Vec<(f64, i64)> = pairs
            .into_iter()
            .map(|(p, l)| (boundary.wrap(p), l))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (positions, labels): (Vec<f64>, Vec<i64>) = pairs.into_iter().unzip();
        Self::new(Configuration::new(positions, boundary)?, labels)
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn label_offsets(&self) -> &[i64] {
        &self.label_offsets
    }

    pub fn tagged_index(&self) -> usize {
        self.tagged_index
    }

    pub fn tagged_position(&self) -> f64 {
        self.config.positions()[self.tagged_index]
    }

    pub fn position_of_label(&self, label: i64) -> Option<f64> {
        self.label_offsets
            .iter()
            .position(|&l| l == label)
            .map(|k| self.config.positions()[k])
    }

    /// Positions listed by increasing label.
    pub fn positions_by_label(&self) -> Vec<(i64, f64)> {
        let mut v: Vec<(i64, f64)> = self
            .label_offsets
            .iter()
            .copied()
            .zip(self.config.positions().iter().copied())
            .collect();
        v.sort_by_key(|&(l, _)| l);
        v
    }

    /// True when label order coincides with position order (seen from the
    /// tagged particle, minimum image in a periodic box).
    pub fn labels_follow_positions(&self) -> bool {
        let b = self.config.boundary();
        let x0 = self.tagged_position();
        let by_label = self.positions_by_label();
        by_label
            .windows(2)
            .all(|w| b.min_image(w[0].1 - x0) < b.min_image(w[1].1 - x0))
    }
}

/// Ordered labeling: label 0 goes to the point nearest `origin` (ties to the
/// larger coordinate) and labels increase with position. In a periodic box
/// positions are ordered by their minimum-image displacement from the
/// tagged point.
pub fn label_ordered(config: &Configuration, origin: f64) -> Result<LabeledState> {
    if config.is_empty() {
        return Err(Error::EmptyConfiguration);
    }
    let b = config.boundary();
    let pos = config.positions();
    let mut best = 0usize;
    let mut best_d = b.min_image(pos[0] - origin);
    for (k, &p) in pos.iter().enumerate().skip(1) {
        let d = b.min_image(p - origin);
        if d.abs() < best_d.abs() || (d.abs() == best_d.abs() && d > best_d) {
            best = k;
            best_d = d;
        }
    }
    let n = pos.len();
    let labels = match b {
        Boundary::Unbounded => (0..n).map(|k| k as i64 - best as i64).collect(),
        Boundary::Periodic { .. } => {
            let x0 = pos[best];
            let mut order: Vec<usize> = (0..n).collect();
            let rel = |k: usize| if k == best { 0.0 } else { b.min_image(pos[k] - x0) };
            order.sort_by(|&i, &j| rel(i).total_cmp(&rel(j)).then(i.cmp(&j)));
            let zero_rank = order.iter().position(|&k| k == best).unwrap() as i64;
            let mut labels = vec![0i64; n];
            for (rank, &k) in order.iter().enumerate() {
                labels[k] = rank as i64 - zero_rank;
            }
            labels
        }
    };
    LabeledState::new(config.clone(), labels)
}

/// Tagged position together with the sorted positions of all other points
/// relative to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentState {
    pub tagged_position: f64,
    relative_positions: Vec<f64>,
    boundary: Boundary,
}

impl EnvironmentState {
    /// Relative positions are sorted on construction; in a periodic box they
    /// are taken to the minimum image first.
    pub fn new(tagged_position: f64, mut relatives: Vec<f64>, boundary: Boundary) -> Result<Self> {
        boundary.validate()?;
        if !tagged_position.is_finite() || relatives.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("environment", "non-finite coordinate"));
        }
        for r in relatives.iter_mut() {
            *r = boundary.min_image(*r);
        }
        relatives.sort_by(f64::total_cmp);
        Ok(EnvironmentState {
            tagged_position,
            relative_positions: relatives,
            boundary,
        })
    }

    /// Environment of a reduced Palm sample: tagged particle at 0, the given
    /// configuration as the surrounding points.
    pub fn from_palm(relatives: &Configuration) -> Self {
        EnvironmentState {
            tagged_position: 0.0,
            relative_positions: relatives.positions().to_vec(),
            boundary: Boundary::Unbounded,
        }
    }

    pub fn relative_positions(&self) -> &[f64] {
        &self.relative_positions
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn len(&self) -> usize {
        self.relative_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relative_positions.is_empty()
    }

    /// Index of the first strictly positive relative position.
    pub fn first_positive(&self) -> usize {
        self.relative_positions.partition_point(|&r| r <= 0.0)
    }

    /// Positive-side points `s_1 < s_2 < ...`.
    pub fn positive_side(&self) -> &[f64] {
        &self.relative_positions[self.first_positive()..]
    }

    /// Mean spacing of the environment, used to scale difference steps.
    pub fn mean_gap(&self) -> f64 {
        let n = self.relative_positions.len();
        if n < 2 {
            return 1.0;
        }
        let span = self.relative_positions[n - 1] - self.relative_positions[0];
        if span > 0.0 {
            span / (n - 1) as f64
        } else {
            1.0
        }
    }

    /// True if some point sits on the tagged particle or two points coincide.
    pub fn has_collision(&self, tol: f64) -> bool {
        self.relative_positions.iter().any(|r| r.abs() <= tol)
            || self.relative_positions.windows(2).any(|w| w[1] - w[0] <= tol)
    }

    /// Same environment with every relative coordinate moved by `eps`.
    pub fn shifted(&self, eps: f64) -> EnvironmentState {
        EnvironmentState {
            tagged_position: self.tagged_position,
            relative_positions: self.relative_positions.iter().map(|r| r + eps).collect(),
            boundary: self.boundary,
        }
    }

    pub fn with_relatives(&self, relatives: Vec<f64>) -> EnvironmentState {
        EnvironmentState {
            tagged_position: self.tagged_position,
            relative_positions: relatives,
            boundary: self.boundary,
        }
    }
}

/// `(X^0, {X^i - X^0})`.
pub fn to_environment(state: &LabeledState) -> EnvironmentState {
    let b = state.config().boundary();
    let x0 = state.tagged_position();
    let t = state.tagged_index();
    let relatives = state
        .config()
        .positions()
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != t)
        .map(|(_, &p)| b.min_image(p - x0))
        .collect();
    EnvironmentState::new(x0, relatives, b).expect("state coordinates are finite")
}

/// Inverse of [`to_environment`] on the unlabeled level.
pub fn from_environment(env: &EnvironmentState) -> Configuration {
    let b = env.boundary();
    let mut positions = Vec::with_capacity(env.len() + 1);
    positions.push(b.wrap(env.tagged_position));
    positions.extend(
        env.relative_positions()
            .iter()
            .map(|r| b.wrap(env.tagged_position + r)),
    );
    Configuration::new(positions, b).expect("environment coordinates are finite")
}
