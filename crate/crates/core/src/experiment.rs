//! Simulated preparation, evolution, and measurement.
//!
//! One experiment prepares a random product state ψ, evolves it for a
//! short time t under the unknown H, and measures one single-site Pauli
//! observable. For t well below 1/(2‖H‖) the outcome deviates from the
//! t = 0 value by a term linear in the Hamiltonian coefficients, which
//! is what the sensing matrix captures.

use ndarray::Array1;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::pauli::{self, CoefficientVector, Pauli, PauliString};

/// Product state over n qubits, one normalized 2-vector per site.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductState {
    factors: Vec<[Complex64; 2]>,
}

impl ProductState {
    /// Each factor must be unit norm within 1e-12.
    pub fn new(factors: Vec<[Complex64; 2]>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::invalid("product state needs at least one site"));
        }
        for (i, f) in factors.iter().enumerate() {
            let norm = (f[0].norm_sqr() + f[1].norm_sqr()).sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "site {i} factor has norm {norm:.15}, expected 1"
                )));
            }
        }
        Ok(ProductState { factors })
    }

    /// Computational basis state |00…0⟩.
    pub fn zero(n: usize) -> Result<Self> {
        let f = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        ProductState::new(vec![f; n.max(1)])
    }

    pub fn n(&self) -> usize {
        self.factors.len()
    }

    pub fn factor(&self, i: usize) -> &[Complex64; 2] {
        &self.factors[i]
    }

    pub fn factors(&self) -> &[[Complex64; 2]] {
        &self.factors
    }

    /// Full 2ⁿ amplitude vector, site 0 most significant.
    pub fn to_state_vector(&self) -> Array1<Complex64> {
        let mut v = vec![Complex64::new(1.0, 0.0)];
        for f in &self.factors {
            let mut next = Vec::with_capacity(v.len() * 2);
            for &a in &v {
                next.push(a * f[0]);
                next.push(a * f[1]);
            }
            v = next;
        }
        Array1::from_vec(v)
    }

    /// Single-site expectation ⟨ψ_i|P|ψ_i⟩ (real for Pauli P).
    pub fn site_expectation(&self, i: usize, p: Pauli) -> f64 {
        pauli::site_product_expectation(&self.factors[i], p, Pauli::I).re
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn pauli(self) -> Pauli {
        match self {
            Axis::X => Pauli::X,
            Axis::Y => Pauli::Y,
            Axis::Z => Pauli::Z,
        }
    }
}

/// One single-site Pauli measurement, site indices 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalObservable {
    pub site: usize,
    pub axis: Axis,
}

impl LocalObservable {
    pub fn to_pauli_string(&self, n: usize) -> Result<PauliString> {
        PauliString::single(n, self.site, self.axis.pauli())
    }
}

/// One prepare-evolve-measure round.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub state: ProductState,
    pub observable: LocalObservable,
    pub time: f64,
}

impl ExperimentConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.state.n() != n {
            return Err(Error::invalid(format!(
                "state has {} sites, expected {n}",
                self.state.n()
            )));
        }
        if self.observable.site >= n {
            return Err(Error::invalid(format!(
                "observable site {} out of range for n = {n}",
                self.observable.site
            )));
        }
        if !(self.time > 0.0) || !self.time.is_finite() {
            return Err(Error::invalid(format!("time must be positive, got {}", self.time)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    RelativeUniform,
    AdditiveGaussian,
}

/// What the perturbation acts on. `Measurement` corrupts the raw
/// outcome p before the known t = 0 offset is subtracted; `Deviation`
/// corrupts the offset-subtracted data that actually enters the solver,
/// which models error quoted relative to the recorded signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    Measurement,
    #[default]
    Deviation,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub applied_to: NoiseTarget,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec { kind: NoiseKind::None, level: 0.0, seed: 0, applied_to: NoiseTarget::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.level < 0.0 || !self.level.is_finite() {
            return Err(Error::invalid(format!("noise level must be ≥ 0, got {}", self.level)));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.kind != NoiseKind::None && self.level > 0.0
    }
}

/// Perturb one scalar outcome. Relative: p·(1 + level·u) with
/// u ~ U[-1,1]. Additive: p + level·g with g standard normal.
pub fn apply_noise(p: f64, spec: &NoiseSpec, rng: &mut impl Rng) -> f64 {
    match spec.kind {
        NoiseKind::None => p,
        NoiseKind::RelativeUniform => {
            let u: f64 = rng.gen_range(-1.0..=1.0);
            p * (1.0 + spec.level * u)
        }
        NoiseKind::AdditiveGaussian => {
            let g: f64 = rng.sample(StandardNormal);
            p + spec.level * g
        }
    }
}

/// Haar-random single-qubit factors: two complex standard Gaussians per
/// site, normalized.
pub fn sample_product_state(n: usize, rng: &mut impl Rng) -> ProductState {
    let factors = (0..n.max(1))
        .map(|_| loop {
            let a = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let b = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let norm = (a.norm_sqr() + b.norm_sqr()).sqrt();
            if norm > 1e-12 {
                return [a / norm, b / norm];
            }
        })
        .collect();
    ProductState::new(factors).expect("normalized by construction")
}

/// Uniformly random site and axis.
pub fn sample_observable(n: usize, rng: &mut impl Rng) -> LocalObservable {
    let site = rng.gen_range(0..n);
    let axis = match rng.gen_range(0..3) {
        0 => Axis::X,
        1 => Axis::Y,
        _ => Axis::Z,
    };
    LocalObservable { site, axis }
}

/// Eigendecomposition of a Hamiltonian, reused across many outcomes.
pub struct Propagator {
    pub eigen: linalg::Eigh,
    n: usize,
}

impl Propagator {
    pub fn new(h: &CoefficientVector) -> Result<Self> {
        let dense = pauli::reconstruct(h)?;
        let eigen = linalg::eigh(&dense.matrix().view())?;
        Ok(Propagator { eigen, n: h.n_qubits() })
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    /// e^{-iHt}|ψ⟩.
    pub fn evolve(&self, psi: &Array1<Complex64>, t: f64) -> Array1<Complex64> {
        let v = &self.eigen.vectors;
        let mut tilde = v.t().map(|z| z.conj()).dot(psi);
        for (a, amp) in tilde.iter_mut().enumerate() {
            let phase = -self.eigen.values[a] * t;
            *amp *= Complex64::new(phase.cos(), phase.sin());
        }
        v.dot(&tilde)
    }
}

/// ⟨φ|Γ|φ⟩ for a dense state vector, via the string's sparse structure.
pub fn state_expectation(phi: &Array1<Complex64>, p: &PauliString) -> Result<f64> {
    let d = pauli::hilbert_dim(p.n());
    if phi.len() != d {
        return Err(Error::invalid(format!(
            "state has dimension {}, expected {d}",
            phi.len()
        )));
    }
    let mut z = Complex64::new(0.0, 0.0);
    p.for_each_nonzero(|r, c, v| z += phi[r].conj() * v * phi[c]);
    debug_assert!(z.im.abs() < 1e-10 * z.norm().max(1.0));
    Ok(z.re)
}

/// Exact measured value ⟨ψ|e^{iHt} M e^{-iHt}|ψ⟩.
pub fn exact_outcome(h: &CoefficientVector, config: &ExperimentConfig) -> Result<f64> {
    config.validate(h.n_qubits())?;
    let prop = Propagator::new(h)?;
    exact_outcome_with(&prop, config)
}

/// Same as [`exact_outcome`] with a prebuilt propagator.
pub fn exact_outcome_with(prop: &Propagator, config: &ExperimentConfig) -> Result<f64> {
    config.validate(prop.n_qubits())?;
    let psi = config.state.to_state_vector();
    let evolved = prop.evolve(&psi, config.time);
    let m = config.observable.to_pauli_string(prop.n_qubits())?;
    state_expectation(&evolved, &m)
}

/// Largest t for which the linear-response model is trusted:
/// 1/(2‖H‖). Errors on H = 0.
pub fn short_time_bound(h: &CoefficientVector) -> Result<f64> {
    let norm = pauli::coeff_spec_norm(h)?;
    if norm <= 0.0 {
        return Err(Error::invalid("short-time bound undefined for H = 0"));
    }
    Ok(0.5 / norm)
}

/// Default sampling time, a tenth of the short-time bound.
pub fn default_time(h: &CoefficientVector) -> Result<f64> {
    Ok(0.1 * short_time_bound(h)?)
}

/// Derive an independent per-trial seed from a master seed, so trials
/// can run concurrently with decorrelated rng streams while staying
/// reproducible (splitmix-style finalizer).
pub fn child_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        ^ index
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn product_state_rejects_unnormalized() {
        let bad = vec![[Complex64::new(0.9, 0.0), Complex64::new(0.0, 0.0)]];
        assert!(ProductState::new(bad).is_err());
    }

    #[test]
    fn state_vector_ordering() {
        // |0⟩⊗|1⟩ has amplitude 1 at index 0b01 = 1.
        let zero = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let one = [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)];
        let psi = ProductState::new(vec![zero, one]).unwrap();
        let v = psi.to_state_vector();
        assert_eq!(v[1], Complex64::new(1.0, 0.0));
        assert!((v[0].norm() + v[2].norm() + v[3].norm()) < 1e-15);
    }

    #[test]
    fn haar_overlap_first_moment() {
        // E|⟨0|ψ⟩|² = 1/2 for Haar-random single-qubit states.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples = 100_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            let psi = sample_product_state(1, &mut rng);
            acc += psi.factor(0)[0].norm_sqr();
        }
        let mean = acc / samples as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn haar_states_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let psi = sample_product_state(3, &mut rng);
            let v = psi.to_state_vector();
            let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_outcome_x_hamiltonian_z_observable() {
        // H = X, M = Z, ψ = |0⟩: ⟨Z(t)⟩ = cos(2t).
        let mut h = CoefficientVector::zeros(1).unwrap();
        h.set(PauliString::new(vec![Pauli::X]).unwrap().index(), 1.0);
        for &t in &[0.05, 0.3, 1.1] {
            let config = ExperimentConfig {
                state: ProductState::zero(1).unwrap(),
                observable: LocalObservable { site: 0, axis: Axis::Z },
                time: t,
            };
            let p = exact_outcome(&h, &config).unwrap();
            assert!((p - (2.0 * t).cos()).abs() < 1e-12, "t = {t}: {p}");
        }
    }

    /// Series-propagator oracle: U = Σ_k (-itH)^k / k! truncated when
    /// terms fall below 1e-18, applied densely.
    fn series_outcome(h: &CoefficientVector, config: &ExperimentConfig) -> f64 {
        let n = h.n_qubits();
        let d = pauli::hilbert_dim(n);
        let hd = pauli::reconstruct(h).unwrap().into_matrix();
        let mut u = Array2::<Complex64>::eye(d);
        let mut term = Array2::<Complex64>::eye(d);
        let it = Complex64::new(0.0, -config.time);
        for k in 1..200 {
            term = term.dot(&hd) * (it / k as f64);
            u = &u + &term;
            let mag: f64 = term.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if mag < 1e-18 {
                break;
            }
        }
        let psi = config.state.to_state_vector();
        let evolved = u.dot(&psi);
        let m = config.observable.to_pauli_string(n).unwrap();
        let md = pauli::to_dense(&m).unwrap();
        let mut z = Complex64::new(0.0, 0.0);
        for r in 0..d {
            for c in 0..d {
                z += evolved[r].conj() * md.matrix()[[r, c]] * evolved[c];
            }
        }
        z.re
    }

    #[test]
    fn exact_outcome_matches_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let n = 3;
            let mut h = CoefficientVector::zeros(n).unwrap();
            for _ in 0..5 {
                let idx = rng.gen_range(1..pauli::coeff_len(n));
                h.add(idx, rng.gen_range(-1.0..1.0));
            }
            let config = ExperimentConfig {
                state: sample_product_state(n, &mut rng),
                observable: sample_observable(n, &mut rng),
                time: rng.gen_range(0.02..0.4),
            };
            let fast = exact_outcome(&h, &config).unwrap();
            let slow = series_outcome(&h, &config);
            assert!((fast - slow).abs() < 1e-11, "fast {fast} slow {slow}");
        }
    }

    #[test]
    fn short_time_bound_single_x() {
        let mut h = CoefficientVector::zeros(1).unwrap();
        h.set(1, 1.0); // X
        assert!((short_time_bound(&h).unwrap() - 0.5).abs() < 1e-12);
        let zero = CoefficientVector::zeros(2).unwrap();
        assert!(short_time_bound(&zero).is_err());
    }

    #[test]
    fn linear_response_error_is_second_order() {
        // |p(t) - p(0) - t·i⟨[H,M]⟩| ≤ 2(t‖H‖)² for t within the bound.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let n = 2;
            let mut h = CoefficientVector::zeros(n).unwrap();
            for _ in 0..4 {
                h.add(rng.gen_range(1..16), rng.gen_range(-1.0..1.0));
            }
            let norm = pauli::coeff_spec_norm(&h).unwrap();
            if norm < 1e-6 {
                continue;
            }
            let t = 0.1 * short_time_bound(&h).unwrap();
            let psi = sample_product_state(n, &mut rng);
            let obs = sample_observable(n, &mut rng);
            let config = ExperimentConfig { state: psi.clone(), observable: obs, time: t };
            let p_t = exact_outcome(&h, &config).unwrap();
            let m_string = obs.to_pauli_string(n).unwrap();
            let p_0 = {
                let v = psi.to_state_vector();
                state_expectation(&v, &m_string).unwrap()
            };
            let mut slope = 0.0;
            for (alpha, coeff) in h.iter_nonzero() {
                let g = PauliString::from_index(n, alpha).unwrap();
                slope += coeff * pauli::commutator_expectation(&g, &m_string, &psi).unwrap();
            }
            let err = (p_t - p_0 - t * slope).abs();
            assert!(err <= 2.0 * (t * norm).powi(2) + 1e-12, "err {err}");
        }
    }

    #[test]
    fn noise_relative_uniform_bounds_and_determinism() {
        let spec = NoiseSpec {
            kind: NoiseKind::RelativeUniform,
            level: 0.1,
            seed: 42,
            applied_to: NoiseTarget::Deviation,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let vals: Vec<f64> = (0..1000).map(|_| apply_noise(2.0, &spec, &mut rng)).collect();
        for &v in &vals {
            assert!((1.8..=2.2).contains(&v));
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(spec.seed);
        let again: Vec<f64> = (0..1000).map(|_| apply_noise(2.0, &spec, &mut rng2)).collect();
        assert_eq!(vals, again);
        assert!(vals.iter().any(|&v| (v - 2.0).abs() > 0.05));
    }

    #[test]
    fn noise_none_is_identity() {
        let spec = NoiseSpec::none();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(apply_noise(0.7, &spec, &mut rng), 0.7);
    }

    #[test]
    fn noise_additive_gaussian_scale() {
        let spec = NoiseSpec {
            kind: NoiseKind::AdditiveGaussian,
            level: 0.5,
            seed: 9,
            applied_to: NoiseTarget::Measurement,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let samples = 20_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            let v = apply_noise(0.0, &spec, &mut rng);
            acc += v * v;
        }
        let rms = (acc / samples as f64).sqrt();
        assert!((rms - 0.5).abs() < 0.02, "rms {rms}");
    }

    #[test]
    fn config_validation() {
        let psi = ProductState::zero(2).unwrap();
        let bad_site = ExperimentConfig {
            state: psi.clone(),
            observable: LocalObservable { site: 2, axis: Axis::X },
            time: 0.1,
        };
        assert!(bad_site.validate(2).is_err());
        let bad_time = ExperimentConfig {
            state: psi,
            observable: LocalObservable { site: 0, axis: Axis::X },
            time: 0.0,
        };
        assert!(bad_time.validate(2).is_err());
    }
}
