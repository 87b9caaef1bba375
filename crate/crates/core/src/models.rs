//! Model Hamiltonians used in the recovery studies.
//!
//! Two physical families on four qubits, plus synthetic planted
//! instances for controlled experiments.
//!
//! The optical-lattice model is an effective open-chain Hamiltonian
//! with nearest-neighbor two-body couplings and three-body corrections
//! whose strength grows with the tunneling-to-interaction ratio, so
//! sparsity is tunable through |J/U|.
//!
//! The exchange model couples four spins through an isotropic
//! two-body term J and a four-body term J′ built from products of
//! pair exchanges; J′/J beyond about 0.16 is outside the physically
//! motivated regime but still accepted for synthetic studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pauli::{coeff_len, linf, CoefficientVector, Pauli, PauliString};

/// Site count for both physical models.
pub const N_MODEL_SITES: usize = 4;

/// Open-chain lattice couplings: tunneling rates per species and the
/// on-site interaction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeParams {
    pub j_up: f64,
    pub j_down: f64,
    pub u: f64,
}

impl LatticeParams {
    /// Common convention J = J↑ = 2·J↓.
    pub fn from_ratio(j: f64, u: f64) -> Self {
        LatticeParams { j_up: j, j_down: 0.5 * j, u }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("j_up", self.j_up), ("j_down", self.j_down), ("u", self.u)] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite")));
            }
        }
        if self.u == 0.0 {
            return Err(Error::invalid("on-site interaction u must be nonzero"));
        }
        if (self.j_up / self.u).abs() >= 1.0 || (self.j_down / self.u).abs() >= 1.0 {
            return Err(Error::invalid(
                "perturbative model requires |j/u| < 1 for both species",
            ));
        }
        Ok(())
    }
}

/// Effective 4-site open-chain Hamiltonian with two-body couplings on
/// the three bonds and three-body corrections on the two interior
/// triples:
///
///   b1z·ZZ + b1xy·(XX + YY)         on bonds (j, j+1)
///   b2z·ZZZ + b2xy·(XZX + YZY)      on triples (j, j+1, j+2)
///
/// with coefficients polynomial in the tunneling rates:
///   b1z  =  0.03(J↑² + J↓²)/U − 0.27(J↑³ + J↓³)/U²
///   b1xy = −2.1(J↑ + J↓)J↑J↓/U² − J↑J↓/U
///   b2z  =  0.14(J↑³ − J↓³)/U²
///   b2xy = −0.6·J↑J↓(J↑ − J↓)/U²
pub fn optical_lattice_hamiltonian(params: &LatticeParams) -> Result<CoefficientVector> {
    params.validate()?;
    let (ju, jd, u) = (params.j_up, params.j_down, params.u);
    let b1z = 0.03 * (ju * ju + jd * jd) / u - 0.27 * (ju.powi(3) + jd.powi(3)) / (u * u);
    let b1xy = -(2.1 * (ju + jd) * ju * jd / (u * u) + ju * jd / u);
    let b2z = 0.14 * (ju.powi(3) - jd.powi(3)) / (u * u);
    let b2xy = -0.6 * ju * jd * (ju - jd) / (u * u);

    let n = N_MODEL_SITES;
    let mut h = CoefficientVector::zeros(n)?;
    let mut place = |sites: &[(usize, Pauli)], v: f64| -> Result<()> {
        let mut ps = vec![Pauli::I; n];
        for &(site, p) in sites {
            ps[site] = p;
        }
        h.add(PauliString::new(ps)?.index(), v);
        Ok(())
    };

    for j in 0..n - 1 {
        place(&[(j, Pauli::Z), (j + 1, Pauli::Z)], b1z)?;
        place(&[(j, Pauli::X), (j + 1, Pauli::X)], b1xy)?;
        place(&[(j, Pauli::Y), (j + 1, Pauli::Y)], b1xy)?;
    }
    for j in 0..n - 2 {
        place(&[(j, Pauli::Z), (j + 1, Pauli::Z), (j + 2, Pauli::Z)], b2z)?;
        place(&[(j, Pauli::X), (j + 1, Pauli::Z), (j + 2, Pauli::X)], b2xy)?;
        place(&[(j, Pauli::Y), (j + 1, Pauli::Z), (j + 2, Pauli::Y)], b2xy)?;
    }
    Ok(h)
}

/// Exchange couplings for the four-spin model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExchangeParams {
    pub j: f64,
    pub j_prime: f64,
}

impl ExchangeParams {
    pub fn validate(&self) -> Result<()> {
        if !self.j.is_finite() || !self.j_prime.is_finite() {
            return Err(Error::invalid("exchange couplings must be finite"));
        }
        if self.j == 0.0 {
            return Err(Error::invalid("two-body exchange j must be nonzero"));
        }
        Ok(())
    }

    /// Whether |j′/j| lies in the physically motivated window.
    pub fn in_physical_range(&self) -> bool {
        (self.j_prime / self.j).abs() <= 0.16
    }
}

/// Four-spin exchange Hamiltonian
///
///   J·Σ_{i<j} σ_i·σ_j
///   + J′·[(σ₀·σ₁)(σ₂·σ₃) + (σ₀·σ₂)(σ₁·σ₃) + (σ₀·σ₃)(σ₁·σ₂)]
///
/// expanded into Pauli strings: 18 two-body terms at J and 21
/// four-body terms (aabb patterns at J′, aaaa patterns collecting 3J′
/// from the three pairings).
pub fn exchange_hamiltonian(params: &ExchangeParams) -> Result<CoefficientVector> {
    params.validate()?;
    let n = N_MODEL_SITES;
    let axes = [Pauli::X, Pauli::Y, Pauli::Z];
    let mut h = CoefficientVector::zeros(n)?;

    for i in 0..n {
        for j in (i + 1)..n {
            for a in axes {
                let mut sites = vec![Pauli::I; n];
                sites[i] = a;
                sites[j] = a;
                h.add(PauliString::new(sites)?.index(), params.j);
            }
        }
    }

    let pairings = [[(0, 1), (2, 3)], [(0, 2), (1, 3)], [(0, 3), (1, 2)]];
    for pairing in pairings {
        for a in axes {
            for b in axes {
                let mut sites = vec![Pauli::I; n];
                sites[pairing[0].0] = a;
                sites[pairing[0].1] = a;
                sites[pairing[1].0] = b;
                sites[pairing[1].1] = b;
                h.add(PauliString::new(sites)?.index(), params.j_prime);
            }
        }
    }
    Ok(h)
}

/// Random s-sparse coefficient vector: s distinct non-identity strings
/// with magnitudes uniform in `magnitude_range` and random signs.
pub fn planted_sparse(
    n: usize,
    s: usize,
    seed: u64,
    magnitude_range: (f64, f64),
) -> Result<CoefficientVector> {
    let d_coeff = coeff_len(n.min(crate::pauli::MAX_QUBITS));
    let mut h = CoefficientVector::zeros(n)?;
    if s == 0 {
        return Err(Error::invalid("planted support size s must be ≥ 1"));
    }
    if s > d_coeff - 1 {
        return Err(Error::invalid(format!(
            "s = {s} exceeds the {} non-identity strings for n = {n}",
            d_coeff - 1
        )));
    }
    let (lo, hi) = magnitude_range;
    if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(Error::invalid(format!(
            "magnitude range must satisfy 0 < lo ≤ hi, got ({lo}, {hi})"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // partial Fisher-Yates over the non-identity indices
    let mut pool: Vec<usize> = (1..d_coeff).collect();
    for k in 0..s {
        let pick = rng.gen_range(k..pool.len());
        pool.swap(k, pick);
        let mag = if lo == hi { lo } else { rng.gen_range(lo..hi) };
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        h.set(pool[k], sign * mag);
    }
    Ok(h)
}

/// Support structure of a coefficient vector at a relative threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsityReport {
    pub s_at_threshold: usize,
    pub eta: f64,
    pub h_max: f64,
    pub support: Vec<usize>,
    pub truncation_l1: f64,
}

/// Indices with |h_α| > eta·max|h|, plus the l1 mass left behind.
pub fn sparsity_report(h: &CoefficientVector, eta: f64) -> Result<SparsityReport> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0,1), got {eta}")));
    }
    let h_max = linf(h.values());
    if h_max == 0.0 {
        return Err(Error::invalid("sparsity report undefined for the zero vector"));
    }
    let cut = eta * h_max;
    let mut support = Vec::new();
    let mut truncation_l1 = 0.0;
    for (i, &v) in h.values().iter().enumerate() {
        if v.abs() > cut {
            support.push(i);
        } else {
            truncation_l1 += v.abs();
        }
    }
    Ok(SparsityReport { s_at_threshold: support.len(), eta, h_max, support, truncation_l1 })
}
