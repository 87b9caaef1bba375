//! Versioned TOML run configuration.
//!
//! Every run is a pure function of one config file plus a master seed,
//! so configs double as regression fixtures. Unknown keys are rejected
//! rather than ignored; typos should fail loudly. `schema_version`
//! gates future format changes.
//!
//! Minimal example:
//!
//! ```toml
//! schema_version = 1
//! master_seed = 7
//!
//! [model]
//! kind = "optical_lattice"
//! j = 1.0
//! u = 10.0
//!
//! [benchmark]
//! m_grid = [40, 60]
//! trials = 20
//! ```

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::experiment::{NoiseKind, NoiseSpec, NoiseTarget};
use crate::pauli::MAX_QUBITS;
use crate::solver::SolverOptions;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
    #[serde(default)]
    pub certification: CertificationSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

/// Which Hamiltonian family a run estimates. Lattice and dot models
/// are fixed four-site instances; the rest are drawn deterministically
/// from the master seed.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Effective lattice model at tunneling j (j_up = j, j_down = j/2)
    /// and on-site interaction u.
    OpticalLattice { j: f64, u: f64 },
    /// Exchange model with four-body admixture j′ = j·j_prime_ratio.
    QuantumDot { j: f64, j_prime_ratio: f64 },
    /// Random s-sparse coefficients, magnitudes in [magnitude_lo,
    /// magnitude_hi].
    Planted {
        n: usize,
        s: usize,
        #[serde(default = "default_mag_lo")]
        magnitude_lo: f64,
        #[serde(default = "default_mag_hi")]
        magnitude_hi: f64,
    },
    /// Perturbation Δ around a dense random background H₀, sized so
    /// that t·‖H₀‖ = background_product and t·‖Δ‖ = delta_product.
    FineStructure {
        n: usize,
        delta_s: usize,
        #[serde(default = "default_background_product")]
        background_product: f64,
        #[serde(default = "default_delta_product")]
        delta_product: f64,
    },
    /// Planted system-bath couplings at coupling_scale·‖H_S‖ on
    /// `pairs` random (p, q) slots.
    OpenSystem {
        n_system: usize,
        n_bath: usize,
        pairs: usize,
        #[serde(default = "default_coupling_scale")]
        coupling_scale: f64,
        #[serde(default)]
        bath: BathKind,
    },
}

fn default_mag_lo() -> f64 {
    0.2
}

fn default_mag_hi() -> f64 {
    1.0
}

fn default_background_product() -> f64 {
    1.0
}

fn default_delta_product() -> f64 {
    0.01
}

fn default_coupling_scale() -> f64 {
    0.01
}

/// Bath preparation for open-system runs. A maximally mixed bath
/// produces zero first-order signal, so the default here is a random
/// pure product state; mixed is available for null experiments.
#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BathKind {
    #[default]
    PureRandom,
    MaximallyMixed,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Fixed evolution time. Mutually exclusive with time_factor.
    pub time: Option<f64>,
    /// Evolution time as a fraction of the short-time bound 1/(2‖H‖);
    /// the default 0.1 sits safely inside the linear regime.
    pub time_factor: Option<f64>,
    /// Generate outcomes by exact evolution (default) or from the
    /// linear model itself.
    #[serde(default)]
    pub outcomes: OutcomeKind,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection { time: None, time_factor: None, outcomes: OutcomeKind::Exact }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    #[default]
    Exact,
    Linearized,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub level: f64,
    #[serde(default)]
    pub applied_to: NoiseTarget,
}

impl NoiseSection {
    /// Concrete spec with a per-trial seed filled in by the harness.
    pub fn to_spec(&self, seed: u64) -> NoiseSpec {
        NoiseSpec { kind: self.kind, level: self.level, seed, applied_to: self.applied_to }
    }
}

/// Solver overrides; anything unset falls back to [`SolverOptions`]
/// defaults, except epsilon, which the harness budgets from the model
/// when absent.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub epsilon: Option<f64>,
    pub max_iters: Option<usize>,
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub penalty: Option<f64>,
    pub reweight_iters: Option<usize>,
    pub reweight_sigma: Option<f64>,
}

impl SolverSection {
    /// Options with overrides applied; epsilon stays at the given
    /// budget unless the config pins it.
    pub fn build(&self, auto_epsilon: f64) -> SolverOptions {
        let base = SolverOptions::default();
        SolverOptions {
            epsilon: self.epsilon.unwrap_or(auto_epsilon),
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            abs_tol: self.abs_tol.unwrap_or(base.abs_tol),
            rel_tol: self.rel_tol.unwrap_or(base.rel_tol),
            penalty: self.penalty.unwrap_or(base.penalty),
            reweight_iters: self.reweight_iters.unwrap_or(base.reweight_iters),
            reweight_sigma: self.reweight_sigma.or(base.reweight_sigma),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    #[serde(default = "default_m_grid")]
    pub m_grid: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Wall times vary run to run, so recording them is opt-in; with
    /// the default false the column is 0 and CSVs stay byte-stable.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_m_grid() -> Vec<usize> {
    vec![20, 40, 60]
}

fn default_trials() -> usize {
    20
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            m_grid: default_m_grid(),
            trials: default_trials(),
            record_wall_time: false,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationSection {
    /// Nested grid: the configs at each m extend the previous set.
    #[serde(default = "default_cert_grid")]
    pub m_grid: Vec<usize>,
    #[serde(default = "default_cert_trials")]
    pub trials: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_threshold_factor")]
    pub threshold_factor: f64,
}

fn default_cert_grid() -> Vec<usize> {
    vec![15, 21, 27, 33, 39, 45, 51]
}

fn default_cert_trials() -> usize {
    1
}

fn default_window() -> usize {
    5
}

fn default_threshold_factor() -> f64 {
    1e-3
}

impl Default for CertificationSection {
    fn default() -> Self {
        CertificationSection {
            m_grid: default_cert_grid(),
            trials: default_cert_trials(),
            window: default_window(),
            threshold_factor: default_threshold_factor(),
        }
    }
}

/// Parameters for the row-ensemble concentration scan and the
/// restricted-isometry probe. Defaults reproduce the calibrated
/// reference protocol.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default = "default_diag_n")]
    pub n: usize,
    #[serde(default = "default_diag_weights")]
    pub weights: Vec<usize>,
    #[serde(default = "default_diag_sampler_s")]
    pub sampler_s: usize,
    #[serde(default = "default_diag_time")]
    pub time: f64,
    #[serde(default = "default_diag_scan_m")]
    pub scan_m: usize,
    #[serde(default = "default_diag_scan_trials")]
    pub scan_trials: usize,
    #[serde(default = "default_delta_grid")]
    pub delta_grid: Vec<f64>,
    #[serde(default = "default_probe_s")]
    pub probe_s: usize,
    #[serde(default = "default_probe_m")]
    pub probe_m: usize,
    #[serde(default = "default_probe_samples")]
    pub probe_samples: usize,
}

fn default_diag_n() -> usize {
    4
}

fn default_diag_weights() -> Vec<usize> {
    vec![2, 3]
}

fn default_diag_sampler_s() -> usize {
    15
}

fn default_diag_time() -> f64 {
    0.1
}

fn default_diag_scan_m() -> usize {
    50
}

fn default_diag_scan_trials() -> usize {
    2000
}

fn default_delta_grid() -> Vec<f64> {
    vec![0.1, 0.2, 0.3, 0.4, 0.5]
}

fn default_probe_s() -> usize {
    15
}

fn default_probe_m() -> usize {
    600
}

fn default_probe_samples() -> usize {
    150
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection {
            n: default_diag_n(),
            weights: default_diag_weights(),
            sampler_s: default_diag_sampler_s(),
            time: default_diag_time(),
            scan_m: default_diag_scan_m(),
            scan_trials: default_diag_scan_trials(),
            delta_grid: default_delta_grid(),
            probe_s: default_probe_s(),
            probe_m: default_probe_m(),
            probe_samples: default_probe_samples(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.model.validate()?;
        if let (Some(_), Some(_)) = (self.experiment.time, self.experiment.time_factor) {
            return Err(Error::config("set either experiment.time or time_factor, not both"));
        }
        if let Some(t) = self.experiment.time {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::config("experiment.time must be positive and finite"));
            }
        }
        if let Some(f) = self.experiment.time_factor {
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::config("experiment.time_factor must be positive and finite"));
            }
        }
        if self.noise.level < 0.0 || !self.noise.level.is_finite() {
            return Err(Error::config("noise.level must be ≥ 0 and finite"));
        }
        check_grid(&self.benchmark.m_grid, "benchmark.m_grid")?;
        if self.benchmark.trials == 0 {
            return Err(Error::config("benchmark.trials must be ≥ 1"));
        }
        check_grid(&self.certification.m_grid, "certification.m_grid")?;
        if self.certification.trials == 0 {
            return Err(Error::config("certification.trials must be ≥ 1"));
        }
        if self.certification.window == 0 {
            return Err(Error::config("certification.window must be ≥ 1"));
        }
        if !(self.certification.threshold_factor > 0.0) {
            return Err(Error::config("certification.threshold_factor must be > 0"));
        }
        let d = &self.diagnostics;
        if d.n == 0 || d.n > MAX_QUBITS {
            return Err(Error::config(format!(
                "diagnostics.n must lie in 1..={MAX_QUBITS}"
            )));
        }
        if d.scan_m == 0 || d.probe_m == 0 || d.probe_samples == 0 {
            return Err(Error::config("diagnostics sizes must be ≥ 1"));
        }
        Ok(())
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::OpticalLattice { j, u } => {
                crate::models::LatticeParams::from_ratio(*j, *u).validate()
            }
            ModelConfig::QuantumDot { j, j_prime_ratio } => {
                let params = crate::models::ExchangeParams {
                    j: *j,
                    j_prime: *j * *j_prime_ratio,
                };
                params.validate()
            }
            ModelConfig::Planted { n, s, magnitude_lo, magnitude_hi } => {
                if *n == 0 || *n > MAX_QUBITS {
                    return Err(Error::config(format!("planted n must lie in 1..={MAX_QUBITS}")));
                }
                if *s == 0 {
                    return Err(Error::config("planted s must be ≥ 1"));
                }
                if !(*magnitude_lo > 0.0) || magnitude_hi < magnitude_lo {
                    return Err(Error::config("planted magnitudes must satisfy 0 < lo ≤ hi"));
                }
                Ok(())
            }
            ModelConfig::FineStructure { n, delta_s, background_product, delta_product } => {
                if *n == 0 || *n > MAX_QUBITS {
                    return Err(Error::config(format!(
                        "fine-structure n must lie in 1..={MAX_QUBITS}"
                    )));
                }
                if *delta_s == 0 {
                    return Err(Error::config("fine-structure delta_s must be ≥ 1"));
                }
                if !(*background_product > 0.0) || !(*delta_product > 0.0) {
                    return Err(Error::config("fine-structure products must be > 0"));
                }
                if *delta_product >= 0.1 {
                    return Err(Error::config("fine-structure delta_product must stay below 0.1"));
                }
                Ok(())
            }
            ModelConfig::OpenSystem { n_system, n_bath, pairs, coupling_scale, .. } => {
                if *n_system == 0 || *n_bath == 0 || n_system + n_bath > MAX_QUBITS {
                    return Err(Error::config(format!(
                        "open-system register must fit 1..={MAX_QUBITS} combined qubits"
                    )));
                }
                if *pairs == 0 {
                    return Err(Error::config("open-system pairs must be ≥ 1"));
                }
                if !(*coupling_scale > 0.0) {
                    return Err(Error::config("open-system coupling_scale must be > 0"));
                }
                Ok(())
            }
        }
    }
}

fn check_grid(grid: &[usize], what: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config(format!("{what} must not be empty")));
    }
    if grid[0] == 0 {
        return Err(Error::config(format!("{what} entries must be ≥ 1")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(format!("{what} must be strictly increasing")));
    }
    Ok(())
}

/// Parse and validate; TOML errors keep their line/column diagnostics.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}
