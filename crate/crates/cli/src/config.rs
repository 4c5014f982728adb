//! Experiment configuration files.
//!
//! A config file is TOML with one table per pipeline stage. Every key is
//! optional; missing keys fall back to the selected profile. Unknown keys are
//! rejected so typos do not silently fall back to defaults.
//!
//! ```toml
//! profile = "desk"            # or "paper"
//!
//! [scenario]
//! num_ues = 12
//! max_dl_power_dbm = 20.0     # absolute powers are given in dBm
//!
//! [sweep]
//! var = "num_ues"
//! values = [8, 12, 16, 20]
//! algorithms = ["s-gsa", "brpa"]
//! seeds = [0, 1, 2]
//! ```

use std::fmt;
use std::str::FromStr;

use cfnoma::clustering::Detector;
use cfnoma::config::SystemConfig;
use cfnoma::gp::SolverOptions;
use cfnoma::montecarlo::EstimateMode;
use cfnoma::optimizer::{OptimizeOptions, StartClustering};
use cfnoma::power::SpaOptions;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    #[default]
    Desk,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(format!("unknown profile `{other}` (expected paper or desk)")),
        }
    }
}

impl Profile {
    pub fn system(self) -> SystemConfig {
        match self {
            Profile::Paper => SystemConfig::paper(),
            Profile::Desk => SystemConfig::desk(),
        }
    }

    pub fn default_trials(self) -> usize {
        match self {
            Profile::Paper => 1_000_000,
            Profile::Desk => 10_000,
        }
    }
}

/// Experiment algorithms: the two alternating optimizers and the two
/// fixed-clustering baselines (power allocation only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "s-ebfa")]
    SEbfa,
    #[serde(rename = "s-gsa")]
    SGsa,
    #[serde(rename = "gale-shapley")]
    GaleShapley,
    #[serde(rename = "brpa")]
    Brpa,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::SEbfa, Algorithm::SGsa, Algorithm::GaleShapley, Algorithm::Brpa];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::SEbfa => "s-ebfa",
            Algorithm::SGsa => "s-gsa",
            Algorithm::GaleShapley => "gale-shapley",
            Algorithm::Brpa => "brpa",
        }
    }

    pub fn detector(self) -> Option<Detector> {
        match self {
            Algorithm::SEbfa => Some(Detector::Ebfa),
            Algorithm::SGsa => Some(Detector::Gsa),
            _ => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected s-ebfa, s-gsa, gale-shapley or brpa)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    NumUes,
    NumAps,
    AntennasPerAp,
    MaxDlPower,
    MinRateReq,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::NumUes => "num_ues",
            SweepVar::NumAps => "num_aps",
            SweepVar::AntennasPerAp => "antennas_per_ap",
            SweepVar::MaxDlPower => "max_dl_power",
            SweepVar::MinRateReq => "min_rate_req",
        }
    }

    fn is_count(self) -> bool {
        matches!(self, SweepVar::NumUes | SweepVar::NumAps | SweepVar::AntennasPerAp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorName {
    Ebfa,
    Gsa,
}

impl FromStr for DetectorName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ebfa" => Ok(DetectorName::Ebfa),
            "gsa" => Ok(DetectorName::Gsa),
            other => Err(format!("unknown detector `{other}` (expected ebfa or gsa)")),
        }
    }
}

impl From<DetectorName> for Detector {
    fn from(d: DetectorName) -> Self {
        match d {
            DetectorName::Ebfa => Detector::Ebfa,
            DetectorName::Gsa => Detector::Gsa,
        }
    }
}

impl From<Detector> for DetectorName {
    fn from(d: Detector) -> Self {
        match d {
            Detector::Ebfa => DetectorName::Ebfa,
            Detector::Gsa => DetectorName::Gsa,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartName {
    GaleShapley,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Statistical,
    Pilot,
}

impl From<ModeName> for EstimateMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Statistical => EstimateMode::Statistical,
            ModeName::Pilot => EstimateMode::PilotSimulation,
        }
    }
}

// Raw file layout: every key optional.

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub num_aps: Option<usize>,
    pub num_ues: Option<usize>,
    /// Defaults to half the UE count (at least one), re-evaluated at every
    /// point of a UE-count sweep.
    pub num_clusters: Option<usize>,
    pub antennas_per_ap: Option<usize>,
    pub area_side_m: Option<f64>,
    pub bandwidth_hz: Option<f64>,
    pub noise_psd_dbm_hz: Option<f64>,
    pub noise_figure_db: Option<f64>,
    pub coherence_len: Option<usize>,
    pub epsilon: Option<f64>,
    pub pilot_power_dbm: Option<f64>,
    pub max_dl_power_dbm: Option<f64>,
    pub min_rate_bps: Option<f64>,
    pub sic_coeff: Option<f64>,
    pub shadow_sigma_db: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverFile {
    pub spa_tol: Option<f64>,
    pub spa_max_iter: Option<usize>,
    pub gp_tol: Option<f64>,
    pub mu0: Option<f64>,
    pub mu_factor: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringFile {
    pub detector: Option<DetectorName>,
    pub alpha: Option<f64>,
    pub persist_rejected: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerFile {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub start: Option<StartName>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloFile {
    pub trials: Option<usize>,
    pub mode: Option<ModeName>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub var: Option<SweepVar>,
    pub values: Option<Vec<f64>>,
    pub algorithms: Option<Vec<Algorithm>>,
    pub seeds: Option<Vec<u64>>,
    pub record_timing: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub profile: Option<Profile>,
    #[serde(default)]
    pub scenario: ScenarioFile,
    #[serde(default)]
    pub solver: SolverFile,
    #[serde(default)]
    pub clustering: ClusteringFile,
    #[serde(default)]
    pub optimizer: OptimizerFile,
    #[serde(default)]
    pub montecarlo: MonteCarloFile,
    #[serde(default)]
    pub sweep: SweepFile,
}

/// Parses config text without resolving defaults.
pub fn parse_config(text: &str) -> Result<ConfigFile, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

// Resolved layout: every key explicit. Serializes to a valid config file
// that resolves back to itself.

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub num_aps: usize,
    pub num_ues: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_clusters: Option<usize>,
    pub antennas_per_ap: usize,
    pub area_side_m: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub coherence_len: usize,
    pub epsilon: f64,
    pub pilot_power_dbm: f64,
    pub max_dl_power_dbm: f64,
    pub min_rate_bps: f64,
    pub sic_coeff: f64,
    pub shadow_sigma_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solver {
    pub spa_tol: f64,
    pub spa_max_iter: usize,
    pub gp_tol: f64,
    pub mu0: f64,
    pub mu_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    pub detector: DetectorName,
    pub alpha: f64,
    pub persist_rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Optimizer {
    pub tol: f64,
    pub max_iter: usize,
    pub start: StartName,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarlo {
    pub trials: usize,
    pub mode: ModeName,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub var: SweepVar,
    pub values: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub record_timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub scenario: Scenario,
    pub solver: Solver,
    pub clustering: Clustering,
    pub optimizer: Optimizer,
    pub montecarlo: MonteCarlo,
    pub sweep: Sweep,
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        invalid(format!("{name} must be positive and finite, got {v}"))
    }
}

impl ExperimentConfig {
    /// Profile defaults, with the sweep set to a single point at the
    /// profile's UE count.
    pub fn from_profile(profile: Profile) -> Self {
        Self::resolve(&ConfigFile {
            profile: Some(profile),
            ..ConfigFile::default()
        })
        .expect("profile defaults are valid")
    }

    /// Fills every missing key from the profile (the file's own `profile`
    /// key, or desk when absent) and validates the result.
    pub fn resolve(file: &ConfigFile) -> Result<Self, ConfigError> {
        let profile = file.profile.unwrap_or_default();
        let base = profile.system();
        let s = &file.scenario;
        let scenario = Scenario {
            num_aps: s.num_aps.unwrap_or(base.num_aps),
            num_ues: s.num_ues.unwrap_or(base.num_ues),
            num_clusters: s.num_clusters,
            antennas_per_ap: s.antennas_per_ap.unwrap_or(base.antennas_per_ap),
            area_side_m: s.area_side_m.unwrap_or(base.area_side),
            bandwidth_hz: s.bandwidth_hz.unwrap_or(base.bandwidth),
            noise_psd_dbm_hz: s.noise_psd_dbm_hz.unwrap_or(base.noise_psd_dbm),
            noise_figure_db: s.noise_figure_db.unwrap_or(base.noise_figure_db),
            coherence_len: s.coherence_len.unwrap_or(base.coherence_len),
            epsilon: s.epsilon.unwrap_or(base.epsilon),
            pilot_power_dbm: s.pilot_power_dbm.unwrap_or(base.normalized_to_dbm(base.pilot_power)),
            max_dl_power_dbm: s.max_dl_power_dbm.unwrap_or(base.normalized_to_dbm(base.max_dl_power)),
            min_rate_bps: s.min_rate_bps.unwrap_or(base.min_rate_req),
            sic_coeff: s.sic_coeff.unwrap_or(base.sic_coeff),
            shadow_sigma_db: s.shadow_sigma_db.unwrap_or(base.shadow_sigma_db),
        };
        let spa = SpaOptions::default();
        let solver = Solver {
            spa_tol: file.solver.spa_tol.unwrap_or(spa.tol),
            spa_max_iter: file.solver.spa_max_iter.unwrap_or(spa.max_iter),
            gp_tol: file.solver.gp_tol.unwrap_or(spa.solver.tol),
            mu0: file.solver.mu0.unwrap_or(spa.solver.mu0),
            mu_factor: file.solver.mu_factor.unwrap_or(spa.solver.mu_factor),
        };
        let opt = OptimizeOptions::default();
        let clustering = Clustering {
            detector: file.clustering.detector.unwrap_or(opt.detector.into()),
            alpha: file.clustering.alpha.unwrap_or(opt.alpha),
            persist_rejected: file.clustering.persist_rejected.unwrap_or(opt.persist_rejected),
        };
        let optimizer = Optimizer {
            tol: file.optimizer.tol.unwrap_or(opt.tol),
            max_iter: file.optimizer.max_iter.unwrap_or(opt.max_iter),
            start: file.optimizer.start.unwrap_or(StartName::GaleShapley),
        };
        let montecarlo = MonteCarlo {
            trials: file.montecarlo.trials.unwrap_or(profile.default_trials()),
            mode: file.montecarlo.mode.unwrap_or(ModeName::Statistical),
        };
        let var = file.sweep.var.unwrap_or(SweepVar::NumUes);
        let values = match &file.sweep.values {
            Some(v) => v.clone(),
            None if file.sweep.var.is_none() => vec![scenario.num_ues as f64],
            None => return invalid("sweep.values is required when sweep.var is set"),
        };
        let sweep = Sweep {
            var,
            values,
            algorithms: file.sweep.algorithms.clone().unwrap_or_else(|| Algorithm::ALL.to_vec()),
            seeds: file.sweep.seeds.clone().unwrap_or_else(|| vec![0]),
            record_timing: file.sweep.record_timing.unwrap_or(true),
        };
        let cfg = ExperimentConfig {
            profile,
            scenario,
            solver,
            clustering,
            optimizer,
            montecarlo,
            sweep,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let sw = &self.sweep;
        if sw.values.is_empty() {
            return invalid("sweep.values must not be empty");
        }
        if !sw.values.windows(2).all(|w| w[0] < w[1]) {
            return invalid("sweep.values must be strictly increasing");
        }
        if sw.values.iter().any(|v| !v.is_finite()) {
            return invalid("sweep.values must be finite");
        }
        if sw.var.is_count() && sw.values.iter().any(|&v| v < 1.0 || v.fract() != 0.0) {
            return invalid(format!("sweep over {} needs positive integer values", sw.var.name()));
        }
        if sw.algorithms.is_empty() {
            return invalid("sweep.algorithms must not be empty");
        }
        if sw.seeds.is_empty() {
            return invalid("sweep.seeds must not be empty");
        }
        let s = &self.solver;
        positive("solver.spa_tol", s.spa_tol)?;
        positive("solver.gp_tol", s.gp_tol)?;
        positive("solver.mu0", s.mu0)?;
        if !(s.mu_factor > 1.0 && s.mu_factor.is_finite()) {
            return invalid("solver.mu_factor must exceed 1");
        }
        if s.spa_max_iter == 0 {
            return invalid("solver.spa_max_iter must be at least 1");
        }
        positive("clustering.alpha", self.clustering.alpha)?;
        positive("optimizer.tol", self.optimizer.tol)?;
        if self.optimizer.max_iter == 0 {
            return invalid("optimizer.max_iter must be at least 1");
        }
        if self.montecarlo.trials < 1000 {
            return invalid(format!("montecarlo.trials must be at least 1000, got {}", self.montecarlo.trials));
        }
        for &v in &sw.values {
            self.system_at(v)?;
        }
        self.system()?;
        Ok(())
    }

    /// System parameters at the scenario's own values.
    pub fn system(&self) -> Result<SystemConfig, ConfigError> {
        self.build_system(&self.scenario)
    }

    /// System parameters with the sweep variable set to `value`.
    pub fn system_at(&self, value: f64) -> Result<SystemConfig, ConfigError> {
        let mut sc = self.scenario.clone();
        match self.sweep.var {
            SweepVar::NumUes => sc.num_ues = value as usize,
            SweepVar::NumAps => sc.num_aps = value as usize,
            SweepVar::AntennasPerAp => sc.antennas_per_ap = value as usize,
            SweepVar::MaxDlPower => sc.max_dl_power_dbm = value,
            SweepVar::MinRateReq => sc.min_rate_bps = value,
        }
        self.build_system(&sc)
    }

    fn build_system(&self, sc: &Scenario) -> Result<SystemConfig, ConfigError> {
        let mut cfg = SystemConfig {
            num_aps: sc.num_aps,
            num_ues: sc.num_ues,
            num_clusters: sc.num_clusters.unwrap_or((sc.num_ues / 2).max(1)),
            antennas_per_ap: sc.antennas_per_ap,
            area_side: sc.area_side_m,
            bandwidth: sc.bandwidth_hz,
            noise_psd_dbm: sc.noise_psd_dbm_hz,
            noise_figure_db: sc.noise_figure_db,
            coherence_len: sc.coherence_len,
            epsilon: sc.epsilon,
            min_rate_req: sc.min_rate_bps,
            sic_coeff: sc.sic_coeff,
            shadow_sigma_db: sc.shadow_sigma_db,
            ..SystemConfig::desk()
        };
        if !(sc.noise_psd_dbm_hz.is_finite() && sc.noise_figure_db.is_finite()) {
            return invalid("noise parameters must be finite");
        }
        if !(sc.pilot_power_dbm.is_finite() && sc.max_dl_power_dbm.is_finite()) {
            return invalid("powers must be finite");
        }
        cfg.pilot_power = cfg.dbm_to_normalized(sc.pilot_power_dbm);
        cfg.max_dl_power = cfg.dbm_to_normalized(sc.max_dl_power_dbm);
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn spa_options(&self) -> SpaOptions {
        SpaOptions {
            tol: self.solver.spa_tol,
            max_iter: self.solver.spa_max_iter,
            solver: SolverOptions {
                tol: self.solver.gp_tol,
                mu0: self.solver.mu0,
                mu_factor: self.solver.mu_factor,
                ..SpaOptions::default().solver
            },
        }
    }

    /// Optimizer options for `detector`, started per the config. `seed`
    /// drives the random start.
    pub fn optimize_options(&self, detector: Detector, seed: u64) -> OptimizeOptions {
        OptimizeOptions {
            detector,
            alpha: self.clustering.alpha,
            tol: self.optimizer.tol,
            max_iter: self.optimizer.max_iter,
            start: match self.optimizer.start {
                StartName::GaleShapley => StartClustering::GaleShapley,
                StartName::Random => StartClustering::Random { seed },
            },
            spa: self.spa_options(),
            persist_rejected: self.clustering.persist_rejected,
        }
    }

    /// The resolved config as a config file (the replay sidecar).
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        if self.scenario.num_clusters.is_none() {
            out.push_str("# scenario.num_clusters follows num_ues / 2\n");
        }
        out.push_str(&toml::to_string(self).expect("resolved config serializes"));
        out
    }
}
