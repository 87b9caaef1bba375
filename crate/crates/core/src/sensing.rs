//! Sensing-matrix construction.
//!
//! Each experiment contributes one linear constraint on the unknown
//! coefficients: to first order in t,
//!
//!   p_k = ⟨ψ_k|M_k|ψ_k⟩ + t·Σ_α h_α·i⟨ψ_k|[Γ_α, M_k]|ψ_k⟩ + O(t²)
//!
//! so the row entry for column α is t·i⟨ψ_k|[Γ_α, M_k]|ψ_k⟩. For
//! product states and a single-site observable this factorizes into
//! per-site scalar tables, giving the whole 4ⁿ-column row in O(4ⁿ·n)
//! without any dense operator work. Rows and data are scaled by 1/√m
//! so the matrix is comparable across batch sizes.
//!
//! The identity column is exactly zero (the identity commutes with
//! everything): the trace of H is not observable in this scheme.

use std::fs;
use std::io::Write as IoWrite;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{
    apply_noise, exact_outcome_with, Axis, ExperimentConfig, LocalObservable, NoiseSpec,
    NoiseTarget, ProductState, Propagator,
};
use crate::linalg;
use crate::pauli::{self, coeff_len, l2, CoefficientVector, Pauli};

/// How measurement outcomes are produced from the true Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutcomeModel {
    /// Full time evolution; contains the O(t²) model error.
    Exact,
    /// Outcomes generated from the linear model itself, for isolating
    /// solver behavior from linearization error.
    Linearized,
}

/// Assembled linear system p̄ ≈ Φ h.
#[derive(Clone, Debug)]
pub struct SensingSystem {
    /// m × 4ⁿ, scaled by 1/√m, t folded in.
    pub phi: Array2<f64>,
    /// Offset-subtracted outcomes, scaled by 1/√m.
    pub pbar: Array1<f64>,
    pub time: f64,
    pub n: usize,
    /// l2 norm of the raw (pre-subtraction) outcomes; useful when
    /// budgeting a noise threshold quoted relative to measurements.
    pub measurement_l2: f64,
}

impl SensingSystem {
    pub fn m(&self) -> usize {
        self.phi.nrows()
    }

    pub fn d_coeff(&self) -> usize {
        self.phi.ncols()
    }
}

/// Unscaled sensing row for one configuration: entry α is
/// t·i⟨ψ|[Γ_α, M]|ψ⟩.
///
/// Per site i the factor is ⟨ψ_i|Γ_α,i|ψ_i⟩, except at the measured
/// site where it is i⟨ψ_j0|[Γ_α,j0, σ^a]|ψ_j0⟩ = -2·Im⟨ψ_j0|Γ_α,j0 σ^a|ψ_j0⟩;
/// all other factors are real, so the product is real.
pub fn build_row(config: &ExperimentConfig, n: usize) -> Result<Vec<f64>> {
    config.validate(n)?;
    let d_coeff = coeff_len(n);
    let j0 = config.observable.site;
    let a = config.observable.axis.pauli();

    let mut e = vec![[1.0f64; 4]; n];
    for (i, table) in e.iter_mut().enumerate() {
        for digit in 1..4 {
            let p = Pauli::from_digit(digit).unwrap();
            table[digit] =
                pauli::site_product_expectation(config.state.factor(i), p, Pauli::I).re;
        }
    }
    let mut f = [0.0f64; 4];
    for (digit, slot) in f.iter_mut().enumerate().skip(1) {
        let p = Pauli::from_digit(digit).unwrap();
        let z = pauli::site_product_expectation(config.state.factor(j0), p, a);
        *slot = -2.0 * z.im;
    }

    let t = config.time;
    let mut row = vec![0.0f64; d_coeff];
    for (alpha, slot) in row.iter_mut().enumerate() {
        let digit_j0 = (alpha >> (2 * (n - 1 - j0))) & 0b11;
        let fval = f[digit_j0];
        if fval == 0.0 {
            continue;
        }
        let mut prod = t * fval;
        for i in 0..n {
            if i == j0 {
                continue;
            }
            let digit = (alpha >> (2 * (n - 1 - i))) & 0b11;
            prod *= e[i][digit];
            if prod == 0.0 {
                break;
            }
        }
        *slot = prod;
    }
    Ok(row)
}

/// Build the full scaled system for a batch of configurations.
///
/// All configurations must share one evolution time. Noise is applied
/// in configuration order from a dedicated stream seeded by
/// `noise.seed`, either to the raw outcome before offset subtraction
/// or to the offset-subtracted deviation, per `noise.applied_to`.
pub fn assemble(
    h_true: &CoefficientVector,
    configs: &[ExperimentConfig],
    noise: &NoiseSpec,
    model: OutcomeModel,
) -> Result<SensingSystem> {
    if configs.is_empty() {
        return Err(Error::invalid("assemble requires at least one configuration"));
    }
    noise.validate()?;
    let n = h_true.n_qubits();
    let m = configs.len();
    let t = configs[0].time;
    for (k, c) in configs.iter().enumerate() {
        c.validate(n)?;
        if c.time != t {
            return Err(Error::invalid(format!(
                "configuration {k} has time {} but batch time is {t}",
                c.time
            )));
        }
    }

    let rows: Vec<Vec<f64>> = configs
        .par_iter()
        .map(|c| build_row(c, n))
        .collect::<Result<Vec<_>>>()?;

    let offsets: Vec<f64> = configs
        .iter()
        .map(|c| c.state.site_expectation(c.observable.site, c.observable.axis.pauli()))
        .collect();

    let deviations: Vec<f64> = match model {
        OutcomeModel::Linearized => rows
            .iter()
            .map(|row| row.iter().zip(h_true.values()).map(|(r, h)| r * h).sum())
            .collect(),
        OutcomeModel::Exact => {
            let prop = Propagator::new(h_true)?;
            configs
                .iter()
                .zip(&offsets)
                .map(|(c, &off)| Ok(exact_outcome_with(&prop, c)? - off))
                .collect::<Result<Vec<_>>>()?
        }
    };

    let raw: Vec<f64> = offsets.iter().zip(&deviations).map(|(o, d)| o + d).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let noisy_dev: Vec<f64> = match noise.applied_to {
        NoiseTarget::Measurement => raw
            .iter()
            .zip(&offsets)
            .map(|(&p, &off)| apply_noise(p, noise, &mut rng) - off)
            .collect(),
        NoiseTarget::Deviation => {
            deviations.iter().map(|&d| apply_noise(d, noise, &mut rng)).collect()
        }
    };

    let scale = 1.0 / (m as f64).sqrt();
    let d_coeff = coeff_len(n);
    let mut phi = Array2::<f64>::zeros((m, d_coeff));
    for (k, row) in rows.iter().enumerate() {
        for (alpha, &v) in row.iter().enumerate() {
            phi[[k, alpha]] = v * scale;
        }
    }
    let pbar = Array1::from_iter(noisy_dev.iter().map(|&d| d * scale));

    Ok(SensingSystem { phi, pbar, time: t, n, measurement_l2: l2(&raw) })
}

/// Rank structure of an assembled matrix.
#[derive(Clone, Debug)]
pub struct RankReport {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    /// Rows lying in the span of earlier rows (first occurrence kept).
    pub redundant_rows: Vec<usize>,
}

/// Numerical rank at the 1e-10·σ_max cutoff plus redundancy flags.
pub fn rank_precheck(phi: &ArrayView2<f64>) -> Result<RankReport> {
    if phi.nrows() == 0 || phi.ncols() == 0 {
        return Ok(RankReport { rank: 0, singular_values: Vec::new(), redundant_rows: Vec::new() });
    }
    let singular_values = linalg::singular_values(phi)?;
    let smax = singular_values.first().copied().unwrap_or(0.0);
    let rank = if smax > 0.0 {
        singular_values.iter().filter(|&&s| s > 1e-10 * smax).count()
    } else {
        0
    };

    // Modified Gram-Schmidt over rows, two passes for stability.
    let mut basis: Vec<Array1<f64>> = Vec::new();
    let mut redundant_rows = Vec::new();
    for (k, row) in phi.rows().into_iter().enumerate() {
        let norm0 = row.dot(&row).sqrt();
        if norm0 == 0.0 {
            redundant_rows.push(k);
            continue;
        }
        let mut v = row.to_owned();
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v = &v - &(b * proj);
            }
        }
        let residual = v.dot(&v).sqrt();
        if residual <= 1e-10 * norm0 {
            redundant_rows.push(k);
        } else {
            basis.push(&v / residual);
        }
    }
    Ok(RankReport { rank, singular_values, redundant_rows })
}

/// Serialized description of one configuration: site, axis, and the
/// per-site amplitudes as [re0, im0, re1, im1].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConfigMeta {
    pub site: usize,
    pub axis: Axis,
    pub state: Vec<[f64; 4]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemMeta {
    pub schema_version: u32,
    pub time: f64,
    pub n: usize,
    pub m: usize,
    pub d_coeff: usize,
    pub root_m_scaled: bool,
    pub measurement_l2: f64,
    pub configs: Vec<ConfigMeta>,
}

fn config_meta(c: &ExperimentConfig) -> ConfigMeta {
    ConfigMeta {
        site: c.observable.site,
        axis: c.observable.axis,
        state: c
            .state
            .factors()
            .iter()
            .map(|f| [f[0].re, f[0].im, f[1].re, f[1].im])
            .collect(),
    }
}

fn meta_config(meta: &ConfigMeta, time: f64) -> Result<ExperimentConfig> {
    let factors = meta
        .state
        .iter()
        .map(|v| {
            [
                num_complex::Complex64::new(v[0], v[1]),
                num_complex::Complex64::new(v[2], v[3]),
            ]
        })
        .collect();
    Ok(ExperimentConfig {
        state: ProductState::new(factors)?,
        observable: LocalObservable { site: meta.site, axis: meta.axis },
        time,
    })
}

/// Write phi.csv, pbar.csv, and meta.toml into `dir`. Floats use the
/// shortest round-trip scientific form, so identical systems produce
/// byte-identical files.
pub fn write_system(
    sys: &SensingSystem,
    configs: &[ExperimentConfig],
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut phi_out = String::new();
    for row in sys.phi.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        phi_out.push_str(&cells.join(","));
        phi_out.push('\n');
    }
    fs::File::create(dir.join("phi.csv"))?.write_all(phi_out.as_bytes())?;

    let mut pbar_out = String::new();
    for v in sys.pbar.iter() {
        pbar_out.push_str(&format!("{v:e}\n"));
    }
    fs::File::create(dir.join("pbar.csv"))?.write_all(pbar_out.as_bytes())?;

    let meta = SystemMeta {
        schema_version: 1,
        time: sys.time,
        n: sys.n,
        m: sys.m(),
        d_coeff: sys.d_coeff(),
        root_m_scaled: true,
        measurement_l2: sys.measurement_l2,
        configs: configs.iter().map(config_meta).collect(),
    };
    let text = toml::to_string_pretty(&meta)
        .map_err(|e| Error::config(format!("meta serialization failed: {e}")))?;
    fs::File::create(dir.join("meta.toml"))?.write_all(text.as_bytes())?;
    Ok(())
}

/// Read a system written by [`write_system`].
pub fn read_system(dir: &Path) -> Result<(SensingSystem, Vec<ExperimentConfig>)> {
    let meta_text = fs::read_to_string(dir.join("meta.toml"))?;
    let meta: SystemMeta = toml::from_str(&meta_text)
        .map_err(|e| Error::config(format!("meta parse failed: {e}")))?;
    if meta.schema_version != 1 {
        return Err(Error::config(format!(
            "unsupported schema version {}",
            meta.schema_version
        )));
    }

    let parse = |text: &str, what: &str| -> Result<Vec<Vec<f64>>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                line.split(',')
                    .map(|cell| {
                        cell.trim().parse::<f64>().map_err(|e| {
                            Error::config(format!("{what}: bad float {cell:?}: {e}"))
                        })
                    })
                    .collect()
            })
            .collect()
    };

    let phi_rows = parse(&fs::read_to_string(dir.join("phi.csv"))?, "phi.csv")?;
    let pbar_rows = parse(&fs::read_to_string(dir.join("pbar.csv"))?, "pbar.csv")?;
    if phi_rows.len() != meta.m || pbar_rows.len() != meta.m {
        return Err(Error::config(format!(
            "row counts ({}, {}) disagree with meta m = {}",
            phi_rows.len(),
            pbar_rows.len(),
            meta.m
        )));
    }
    let mut phi = Array2::<f64>::zeros((meta.m, meta.d_coeff));
    for (k, row) in phi_rows.iter().enumerate() {
        if row.len() != meta.d_coeff {
            return Err(Error::config(format!(
                "phi.csv row {k} has {} cells, expected {}",
                row.len(),
                meta.d_coeff
            )));
        }
        for (j, &v) in row.iter().enumerate() {
            phi[[k, j]] = v;
        }
    }
    let pbar = Array1::from_iter(pbar_rows.iter().map(|r| r[0]));
    let configs = meta
        .configs
        .iter()
        .map(|c| meta_config(c, meta.time))
        .collect::<Result<Vec<_>>>()?;

    Ok((
        SensingSystem {
            phi,
            pbar,
            time: meta.time,
            n: meta.n,
            measurement_l2: meta.measurement_l2,
        },
        configs,
    ))
}
