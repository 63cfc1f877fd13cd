//! Strict TOML experiment configuration.
//!
//! ```toml
//! experiment = "hardrod_msd"
//! replicas = 200
//! seed = 7
//! output_dir = "out/hardrods"
//!
//! [model]
//! sampler = "hard_rod_poisson"
//! intensity = 1.0
//! n_particles = 4000
//! box_length = 4000.0
//!
//! [potential]
//! kind = "hard_rod"
//! range = 0.0
//!
//! [integrator]
//! dt = 10.0
//! t_end = 10000.0
//! scheme = "euler_maruyama"
//! drift_cutoff = 1.0
//!
//! [analysis]          # optional
//! fit_window = [100.0, 10000.0]
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use subdiff_core::dynamics::IntegratorSpec;
use subdiff_core::estimators::ScalingModel;
use subdiff_core::models::{PotentialKind, PotentialSpec, SamplerKind, SamplerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Pair-potential system started from its Gibbs (or Poisson) law.
    MsdScan,
    DysonMsd,
    HardrodMsd,
    FreeBaseline,
    CorrectorSolve,
    Telescoping,
    EnvConsistency,
}

/// Which squared displacements enter a replica's MSD curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// The tagged particle only.
    Tagged,
    /// Every particle (all are equivalent in a periodic box).
    AllParticles,
    /// Ranks in the middle half of an open system.
    CentralHalf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Lab,
    /// Displacements relative to the centre of mass.
    CenterOfMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    /// Defaults to `[t_end / 100, t_end]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<(f64, f64)>,
    /// Defaults per experiment: linear (free), log-linear (Dyson), power
    /// law (hard rods and pair potentials).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_model: Option<ScalingModel>,
    /// Points per decade kept for power-law and log-linear fits.
    pub points_per_decade: usize,
    /// Centres of the decade-wide slope windows; defaults to
    /// `t_end / 100, t_end / 10, t_end`.
    pub window_centers: Vec<f64>,
    /// Times of the marginal Gaussianity checks on the tagged particle.
    pub gaussianity_times: Vec<f64>,
    /// Hypothesised variance rate; `None` uses the empirical `msd(t) / t`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussianity_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub averaging: Option<Averaging>,
    pub frame: Frame,
    /// Dyson dynamics run before recording starts.
    pub burn_in: f64,
    pub palm_samples: usize,
    /// `N` values for `phi_N` (telescoping rows or corrector basis).
    pub n_list: Vec<usize>,
    /// Widths of even Gaussian pair-sum basis functions.
    pub basis_widths: Vec<f64>,
    pub ridge: f64,
    /// Step sizes of the environment consistency study.
    pub env_dts: Vec<f64>,
    pub fine_dt: f64,
    pub collision_tolerance: f64,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec {
            fit_window: None,
            fit_model: None,
            points_per_decade: 20,
            window_centers: Vec::new(),
            gaussianity_times: Vec::new(),
            gaussianity_variance: None,
            averaging: None,
            frame: Frame::Lab,
            burn_in: 0.0,
            palm_samples: 10_000,
            n_list: vec![1, 2, 4, 8, 16, 32, 64],
            basis_widths: Vec::new(),
            ridge: 0.0,
            env_dts: vec![2e-4, 1e-4, 5e-5],
            fine_dt: 5e-5 / 32.0,
            collision_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub replicas: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: SamplerSpec,
    pub potential: PotentialSpec,
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
}

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Parse(String),
    Invalid(Vec<String>),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(m) => write!(f, "cannot read config: {m}"),
            ConfigError::Parse(m) => write!(f, "config parse error: {m}"),
            ConfigError::Invalid(v) => write!(f, "invalid config: {}", v.join("; ")),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads a TOML config, or the `config` entry of a run manifest (JSON).
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            #[derive(Deserialize)]
            struct ManifestConfig {
                config: ExperimentConfig,
            }
            let m: ManifestConfig =
                serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
            return Ok(m.config);
        }
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// All invariant violations, each prefixed with the offending section.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.replicas == 0 {
            v.push("replicas: must be >= 1".to_string());
        }
        if let Err(e) = self.model.validate() {
            v.push(format!("model: {e}"));
        }
        if let Err(e) = self.potential.validate() {
            v.push(format!("potential: {e}"));
        }
        if let Err(e) = self.integrator.validate(self.boundary()) {
            v.push(format!("integrator: {e}"));
        }
        let a = &self.analysis;
        if let Some((lo, hi)) = a.fit_window {
            if !(lo >= 0.0 && lo < hi && hi <= self.integrator.t_end) {
                v.push(format!(
                    "analysis: invalid fit_window: [{lo}, {hi}] not inside [0, t_end]"
                ));
            }
        }
        if a.points_per_decade == 0 {
            v.push("analysis: invalid points_per_decade: must be >= 1".into());
        }
        if a.n_list.contains(&0) {
            v.push("analysis: invalid n_list: entries must be >= 1".into());
        }
        if a.basis_widths.iter().any(|w| !(*w > 0.0)) {
            v.push("analysis: invalid basis_widths: entries must be > 0".into());
        }
        if !(a.ridge >= 0.0) {
            v.push("analysis: invalid ridge: must be >= 0".into());
        }
        if !(a.burn_in >= 0.0) {
            v.push("analysis: invalid burn_in: must be >= 0".into());
        }
        if a.gaussianity_times.iter().any(|t| !(*t > 0.0 && *t <= self.integrator.t_end)) {
            v.push("analysis: invalid gaussianity_times: must lie in (0, t_end]".into());
        }
        match self.experiment {
            ExperimentKind::DysonMsd => {
                if self.potential.kind != PotentialKind::Log {
                    v.push("potential: invalid kind: dyson_msd needs kind = \"log\"".into());
                }
                if self.potential.beta < 1.0 {
                    v.push("potential: invalid beta: Dyson dynamics needs beta >= 1".into());
                }
            }
            ExperimentKind::HardrodMsd => {
                if self.potential.kind != PotentialKind::HardRod {
                    v.push("potential: invalid kind: hardrod_msd needs kind = \"hard_rod\"".into());
                }
            }
            ExperimentKind::FreeBaseline => {
                if self.potential.kind != PotentialKind::Free {
                    v.push("potential: invalid kind: free_baseline needs kind = \"free\"".into());
                }
            }
            ExperimentKind::CorrectorSolve | ExperimentKind::Telescoping => {
                if a.palm_samples == 0 {
                    v.push("analysis: invalid palm_samples: must be >= 1".into());
                }
            }
            ExperimentKind::EnvConsistency => {
                if a.env_dts.is_empty() || !(a.fine_dt > 0.0) {
                    v.push("analysis: invalid env_dts: need step sizes and fine_dt > 0".into());
                }
                for &dt in &a.env_dts {
                    let r = dt / a.fine_dt;
                    if !(dt > 0.0) || (r - r.round()).abs() > 1e-9 * r {
                        v.push(format!("analysis: invalid env_dts: {dt} is not a multiple of fine_dt"));
                    }
                }
            }
            ExperimentKind::MsdScan => {}
        }
        if matches!(self.experiment, ExperimentKind::Telescoping)
            && !matches!(self.model.kind, SamplerKind::HardRodPoisson | SamplerKind::BetaEnsemble)
        {
            v.push("model: invalid sampler: telescoping needs a non-colliding model (hard_rod_poisson or beta_ensemble)".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    pub fn boundary(&self) -> subdiff_core::configspace::Boundary {
        match self.experiment {
            ExperimentKind::HardrodMsd => subdiff_core::configspace::Boundary::Unbounded,
            _ => subdiff_core::configspace::Boundary::periodic(self.model.box_length),
        }
    }

    pub fn fit_window(&self) -> (f64, f64) {
        self.analysis
            .fit_window
            .unwrap_or((self.integrator.t_end / 100.0, self.integrator.t_end))
    }

    pub fn window_centers(&self) -> Vec<f64> {
        if self.analysis.window_centers.is_empty() {
            let t = self.integrator.t_end;
            vec![t / 100.0, t / 10.0, t]
        } else {
            self.analysis.window_centers.clone()
        }
    }

    pub fn fit_model(&self) -> ScalingModel {
        self.analysis.fit_model.unwrap_or(match self.experiment {
            ExperimentKind::FreeBaseline => ScalingModel::Linear,
            ExperimentKind::DysonMsd => ScalingModel::LogLinear,
            _ => ScalingModel::PowerLaw,
        })
    }

    pub fn averaging(&self) -> Averaging {
        self.analysis.averaging.unwrap_or(match self.experiment {
            ExperimentKind::HardrodMsd => Averaging::CentralHalf,
            _ => Averaging::AllParticles,
        })
    }
}
