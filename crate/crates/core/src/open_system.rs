//! Estimation of weak system-bath couplings from system-side data.
//!
//! The combined register carries H = H_S⊗I + I⊗H_B + H_SB with
//! H_SB = Σ_pq λ_pq·S_p⊗B_q over non-identity Pauli strings on each
//! side. To first order in H_SB the measured deviation from free
//! evolution is linear in λ:
//!
//!   p ≈ tr(e^{tL₀}[ρ_k⊗ρ_B]·(M_j⊗I))
//!       + Σ_pq λ_pq·tr((∫₀ᵗ e^{(t−s)L₀} L_pq e^{sL₀} ds)[ρ_k⊗ρ_B]·(M_j⊗I))
//!
//! with L₀ = −i[H_S⊗I + I⊗H_B, ·] and L_pq = −i[S_p⊗B_q, ·]. The
//! λ-free offset keeps the free evolution inside the trace so the
//! zero-coupling case is exact at any t, and the integral collapses to
//! a closed form in the eigenbasis of the free Hamiltonian: with
//! ω = λ_a − λ_b running over eigenvalue gaps, each matrix element
//! picks up χ(ω) = (1 − e^{−itω})/(iω), degenerate limit t.
//!
//! One fact worth knowing before reaching for this module: a maximally
//! mixed bath produces *identically zero* first-order rows, because
//! every bath factor reduces to tr(B_q) = 0. The default bath state is
//! still maximally mixed (it assumes nothing about bath preparation),
//! but recovering couplings needs a pure product bath.

use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, LocalObservable, ProductState};
use crate::linalg::{eigh, kron_c, max_herm_deviation, Eigh};
use crate::pauli::{self, coeff_len, hilbert_dim, CoefficientVector, PauliString, MAX_QUBITS};
use crate::solver::{performance, solve_reweighted, RecoveryResult, SolverOptions};

/// Initial bath state used to build ρ_k ⊗ ρ_B.
#[derive(Clone, Debug)]
pub enum BathState {
    /// I/2^{n_B}. No preparation assumption, but see the module doc:
    /// first-order rows vanish for this choice.
    MaximallyMixed,
    PureProduct(ProductState),
}

impl Default for BathState {
    fn default() -> Self {
        BathState::MaximallyMixed
    }
}

#[derive(Clone, Debug)]
pub struct OpenSystemSpec {
    /// System Hamiltonian on n_S qubits.
    pub hs: CoefficientVector,
    /// Bath Hamiltonian on n_B qubits.
    pub hb: CoefficientVector,
    /// Coupling matrix, entry [p−1, q−1] multiplying S_p⊗B_q; shape
    /// (4^{n_S} − 1) × (4^{n_B} − 1).
    pub lambdas: Array2<f64>,
    pub time: f64,
    pub bath: BathState,
}

impl OpenSystemSpec {
    pub fn n_system(&self) -> usize {
        self.hs.n_qubits()
    }

    pub fn n_bath(&self) -> usize {
        self.hb.n_qubits()
    }

    pub fn n_total(&self) -> usize {
        self.n_system() + self.n_bath()
    }

    /// Number of coupling unknowns.
    pub fn coupling_dim(&self) -> usize {
        (coeff_len(self.n_system()) - 1) * (coeff_len(self.n_bath()) - 1)
    }

    /// λ in row-major (p, q) order, matching the row layout.
    pub fn flattened_lambdas(&self) -> Array1<f64> {
        Array1::from_iter(self.lambdas.iter().cloned())
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, nb) = (self.n_system(), self.n_bath());
        if ns + nb > MAX_QUBITS {
            return Err(Error::invalid(format!(
                "combined register {ns}+{nb} qubits exceeds capacity {MAX_QUBITS}"
            )));
        }
        let want = (coeff_len(ns) - 1, coeff_len(nb) - 1);
        if self.lambdas.dim() != want {
            return Err(Error::invalid(format!(
                "coupling matrix is {:?}, expected {want:?}",
                self.lambdas.dim()
            )));
        }
        if self.lambdas.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("couplings must be finite"));
        }
        if !(self.time > 0.0) || !self.time.is_finite() {
            return Err(Error::invalid("time must be positive and finite"));
        }
        if let BathState::PureProduct(phi) = &self.bath {
            if phi.n() != nb {
                return Err(Error::invalid(format!(
                    "bath state has {} sites, expected {nb}",
                    phi.n()
                )));
            }
        }
        // weak coupling, skipped when there is no coupling at all
        let hsb = pauli::reconstruct(&self.coupling_coefficients()?)?;
        let sb_norm = pauli::spec_norm(&hsb)?;
        if sb_norm > 0.0 {
            let floor = pauli::coeff_spec_norm(&self.hs)?
                .min(pauli::coeff_spec_norm(&self.hb)?);
            if sb_norm >= 0.1 * floor {
                return Err(Error::invalid(format!(
                    "coupling too strong: ‖H_SB‖ = {sb_norm:.3e} must stay below \
                     0.1·min(‖H_S‖, ‖H_B‖) = {:.3e}",
                    0.1 * floor
                )));
            }
        }
        Ok(())
    }

    /// H_SB as a coefficient vector on the combined register.
    pub fn coupling_coefficients(&self) -> Result<CoefficientVector> {
        let mut out = CoefficientVector::zeros(self.n_total())?;
        let nb = self.n_bath();
        for ((p, q), &v) in self.lambdas.indexed_iter() {
            if v != 0.0 {
                out.add(combined_index(p + 1, q + 1, nb), v);
            }
        }
        Ok(out)
    }

    /// H_S⊗I + I⊗H_B as a coefficient vector on the combined register.
    pub fn free_coefficients(&self) -> Result<CoefficientVector> {
        let mut out = CoefficientVector::zeros(self.n_total())?;
        let nb = self.n_bath();
        for (p, v) in self.hs.iter_nonzero() {
            out.add(p << (2 * nb), v);
        }
        for (q, v) in self.hb.iter_nonzero() {
            out.add(q, v);
        }
        Ok(out)
    }
}

/// Combined-register index of S_p⊗B_q: system digits are the high ones.
fn combined_index(p: usize, q: usize, n_bath: usize) -> usize {
    (p << (2 * n_bath)) | q
}

fn vectorize(rho: &ArrayView2<Complex64>) -> Array1<Complex64> {
    let d = rho.nrows();
    Array1::from_shape_fn(d * d, |k| rho[[k % d, k / d]])
}

fn unvectorize(v: &Array1<Complex64>, d: usize) -> Array2<Complex64> {
    Array2::from_shape_fn((d, d), |(i, j)| v[i + d * j])
}

/// Linear map on column-stacked density operators, vec(ρ)[i + d·j] = ρ[i,j].
#[derive(Clone, Debug)]
pub struct Superoperator {
    entries: Array2<Complex64>,
}

impl Superoperator {
    /// Hilbert-space dimension d; the matrix is d²×d².
    pub fn dim(&self) -> usize {
        (self.entries.nrows() as f64).sqrt().round() as usize
    }

    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.entries
    }

    pub fn apply(&self, rho: &ArrayView2<Complex64>) -> Array2<Complex64> {
        let d = rho.nrows();
        unvectorize(&self.entries.dot(&vectorize(rho)), d)
    }
}

/// Matrix of ρ ↦ −i[H, ρ]. In the column-stacking convention this is
/// −i(I⊗H − Hᵀ⊗I) with the first Kronecker factor acting on the
/// column index.
pub fn build_liouvillian(h: &CoefficientVector) -> Result<Superoperator> {
    let dense = pauli::reconstruct(h)?;
    let d = dense.dim();
    let eye = Array2::<Complex64>::eye(d);
    let left = kron_c(&eye.view(), &dense.matrix().view());
    let right = kron_c(&dense.matrix().t(), &eye.view());
    let entries = (left - right).mapv(|z| Complex64::new(0.0, -1.0) * z);
    Ok(Superoperator { entries })
}

fn bath_density(bath: &BathState, n_bath: usize) -> Result<Array2<Complex64>> {
    let db = hilbert_dim(n_bath);
    match bath {
        BathState::MaximallyMixed => {
            Ok(Array2::<Complex64>::eye(db).mapv(|z| z / db as f64))
        }
        BathState::PureProduct(phi) => {
            if phi.n() != n_bath {
                return Err(Error::invalid(format!(
                    "bath state has {} sites, expected {n_bath}",
                    phi.n()
                )));
            }
            let v = phi.to_state_vector();
            Ok(Array2::from_shape_fn((db, db), |(i, j)| v[i] * v[j].conj()))
        }
    }
}

fn check_density(rho: &ArrayView2<Complex64>, d: usize) -> Result<()> {
    if rho.dim() != (d, d) {
        return Err(Error::invalid(format!(
            "density operator is {:?}, expected {d}×{d}",
            rho.dim()
        )));
    }
    if max_herm_deviation(rho) > 1e-9 {
        return Err(Error::invalid("density operator is not Hermitian"));
    }
    let tr: Complex64 = (0..d).map(|i| rho[[i, i]]).sum();
    if (tr.re - 1.0).abs() > 1e-9 || tr.im.abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "density operator has trace {:.6} + {:.2e}i, expected 1",
            tr.re, tr.im
        )));
    }
    let eig = eigh(rho)?;
    if eig.values.iter().any(|&v| v < -1e-9) {
        return Err(Error::invalid("density operator has a negative eigenvalue"));
    }
    Ok(())
}

/// ∫₀ᵗ e^{−isω} ds, the decay factor each eigenvalue gap contributes.
fn decay_integral(omega: f64, t: f64) -> Complex64 {
    if omega.abs() < 1e-9 {
        Complex64::new(t, 0.0)
    } else {
        (1.0 - Complex64::from_polar(1.0, -t * omega)) / Complex64::new(0.0, omega)
    }
}

/// tr(e^{−itH}ρe^{itH}·M) through an eigendecomposition of H.
fn evolved_expectation(
    eig: &Eigh,
    rho: &ArrayView2<Complex64>,
    m: &ArrayView2<Complex64>,
    t: f64,
) -> Result<f64> {
    let d = eig.values.len();
    let vdag = eig.vectors.t().mapv(|z| z.conj());
    let rho_tilde = vdag.dot(rho).dot(&eig.vectors);
    let m_tilde = vdag.dot(m).dot(&eig.vectors);
    let mut acc = Complex64::new(0.0, 0.0);
    for a in 0..d {
        for b in 0..d {
            let phase = Complex64::from_polar(1.0, -t * (eig.values[a] - eig.values[b]));
            acc += phase * rho_tilde[[a, b]] * m_tilde[[b, a]];
        }
    }
    if acc.im.abs() > 1e-9 {
        return Err(Error::numerical(format!(
            "expectation picked up imaginary part {:.2e}",
            acc.im
        )));
    }
    Ok(acc.re)
}

/// Row builder holding the one-time eigendecomposition of the free
/// Hamiltonian and the fixed bath state.
pub struct OpenSensor {
    eigen: Eigh,
    n_sys: usize,
    n_bath: usize,
    time: f64,
    rho_bath: Array2<Complex64>,
}

impl OpenSensor {
    pub fn new(spec: &OpenSystemSpec) -> Result<Self> {
        spec.validate()?;
        let free = pauli::reconstruct(&spec.free_coefficients()?)?;
        Ok(OpenSensor {
            eigen: eigh(&free.matrix().view())?,
            n_sys: spec.n_system(),
            n_bath: spec.n_bath(),
            time: spec.time,
            rho_bath: bath_density(&spec.bath, spec.n_bath())?,
        })
    }

    /// Sensing row over (p, q) pairs, entry
    /// tr((∫₀ᵗ e^{(t−s)L₀} L_pq e^{sL₀} ds)[ρ_k⊗ρ_B]·(M_j⊗I)).
    ///
    /// Everything pair-independent collapses into one matrix before
    /// the column loop. Writing ρ_s and M_s for the freely evolved
    /// state and observable, the integrand is tr(−i[G, ρ_s]·M_s) =
    /// −i·tr(G·[ρ_s, M_s]), and in the eigenbasis the s-dependence of
    /// [ρ_s, M_s][c,a] is a single factor e^{−is(λ_c − λ_a)}: the
    /// inner index b drops out because its two gaps telescope. The
    /// integral is then χ(λ_c − λ_a)·C[c,a] with C = [ρ̃, M̃_t] and
    /// M̃_t the observable evolved through the full t. The pairing
    /// Σ_ac G̃[a,c]·W[a,c] equals Σ_rk G[r,k]·Z[r,k] for
    /// Z = conj(V)·W·Vᵀ, and each G has one nonzero per row.
    pub fn row(
        &self,
        rho_sys: &ArrayView2<Complex64>,
        observable: &LocalObservable,
    ) -> Result<Vec<f64>> {
        let ds = hilbert_dim(self.n_sys);
        check_density(rho_sys, ds)?;
        let n = self.n_sys + self.n_bath;
        let d = hilbert_dim(n);
        let t = self.time;
        let v = &self.eigen.vectors;
        let vals = &self.eigen.values;

        let m_sys = pauli::to_dense(&observable.to_pauli_string(self.n_sys)?)?;
        let eye_b = Array2::<Complex64>::eye(hilbert_dim(self.n_bath));
        let m_tot = kron_c(&m_sys.matrix().view(), &eye_b.view());
        let rho_tot = kron_c(rho_sys, &self.rho_bath.view());

        let vdag = v.t().mapv(|z| z.conj());
        let rho_tilde = vdag.dot(&rho_tot).dot(v);
        let m_tilde = vdag.dot(&m_tot).dot(v);
        let mut m_t = Array2::<Complex64>::zeros((d, d));
        for a in 0..d {
            for b in 0..d {
                m_t[[a, b]] =
                    Complex64::from_polar(1.0, t * (vals[a] - vals[b])) * m_tilde[[a, b]];
            }
        }
        let c = rho_tilde.dot(&m_t) - m_t.dot(&rho_tilde);
        let mut w = Array2::<Complex64>::zeros((d, d));
        for a in 0..d {
            for cc in 0..d {
                w[[a, cc]] = decay_integral(vals[cc] - vals[a], t) * c[[cc, a]];
            }
        }
        let z = v.mapv(|x| x.conj()).dot(&w).dot(&v.t());

        let nb = self.n_bath;
        let mut row = vec![0.0f64; (coeff_len(self.n_sys) - 1) * (coeff_len(nb) - 1)];
        let mut slot = 0;
        for p in 1..coeff_len(self.n_sys) {
            for q in 1..coeff_len(nb) {
                let g = PauliString::from_index(n, combined_index(p, q, nb))?;
                let mut acc = Complex64::new(0.0, 0.0);
                g.for_each_nonzero(|r, col, val| {
                    acc += val * z[[r, col]];
                });
                let entry = Complex64::new(0.0, -1.0) * acc;
                if entry.im.abs() > 1e-10 {
                    return Err(Error::numerical(format!(
                        "coupling row entry picked up imaginary part {:.2e}",
                        entry.im
                    )));
                }
                row[slot] = entry.re;
                slot += 1;
            }
        }
        Ok(row)
    }

    /// λ-free offset tr(e^{tL₀}[ρ_k⊗ρ_B]·(M_j⊗I)).
    pub fn offset(
        &self,
        rho_sys: &ArrayView2<Complex64>,
        observable: &LocalObservable,
    ) -> Result<f64> {
        let ds = hilbert_dim(self.n_sys);
        check_density(rho_sys, ds)?;
        let m_sys = pauli::to_dense(&observable.to_pauli_string(self.n_sys)?)?;
        let eye_b = Array2::<Complex64>::eye(hilbert_dim(self.n_bath));
        let m_tot = kron_c(&m_sys.matrix().view(), &eye_b.view());
        let rho_tot = kron_c(rho_sys, &self.rho_bath.view());
        evolved_expectation(&self.eigen, &rho_tot.view(), &m_tot.view(), self.time)
    }
}

/// Single-row convenience wrapper around [`OpenSensor`].
pub fn open_system_row(
    spec: &OpenSystemSpec,
    rho_sys: &ArrayView2<Complex64>,
    observable: &LocalObservable,
) -> Result<Vec<f64>> {
    OpenSensor::new(spec)?.row(rho_sys, observable)
}

/// Assembled first-order model p̄ ≈ Φ·λ, both sides scaled by 1/√m.
#[derive(Clone, Debug)]
pub struct CouplingSystem {
    pub phi: Array2<f64>,
    pub pbar: Array1<f64>,
    pub time: f64,
}

/// Build Φ and the measured deviations for a batch of system-side
/// configurations. Outcomes are simulated by exact evolution under the
/// full coupled Hamiltonian; the λ-free offset is subtracted per row.
pub fn assemble_coupling_system(
    spec: &OpenSystemSpec,
    configs: &[ExperimentConfig],
) -> Result<CouplingSystem> {
    spec.validate()?;
    if configs.is_empty() {
        return Err(Error::invalid("need at least one configuration"));
    }
    let ns = spec.n_system();
    for c in configs {
        c.validate(ns)?;
        if (c.time - spec.time).abs() != 0.0 {
            return Err(Error::invalid("all configs must share the spec time"));
        }
    }
    let sensor = OpenSensor::new(spec)?;

    let mut h_full = spec.free_coefficients()?;
    for (alpha, v) in spec.coupling_coefficients()?.iter_nonzero() {
        h_full.add(alpha, v);
    }
    let full = eigh(&pauli::reconstruct(&h_full)?.matrix().view())?;

    let ds = hilbert_dim(ns);
    let eye_b = Array2::<Complex64>::eye(hilbert_dim(spec.n_bath()));
    let rho_bath = bath_density(&spec.bath, spec.n_bath())?;

    let m = configs.len();
    let scale = 1.0 / (m as f64).sqrt();
    let rows: Vec<(Vec<f64>, f64)> = configs
        .par_iter()
        .map(|c| -> Result<(Vec<f64>, f64)> {
            let psi = c.state.to_state_vector();
            let rho_sys = Array2::from_shape_fn((ds, ds), |(i, j)| psi[i] * psi[j].conj());
            let row = sensor.row(&rho_sys.view(), &c.observable)?;
            let m_sys = pauli::to_dense(&c.observable.to_pauli_string(ns)?)?;
            let m_tot = kron_c(&m_sys.matrix().view(), &eye_b.view());
            let rho_tot = kron_c(&rho_sys.view(), &rho_bath.view());
            let outcome =
                evolved_expectation(&full, &rho_tot.view(), &m_tot.view(), spec.time)?;
            let offset = sensor.offset(&rho_sys.view(), &c.observable)?;
            Ok((row, outcome - offset))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut phi = Array2::<f64>::zeros((m, spec.coupling_dim()));
    let mut pbar = Array1::<f64>::zeros(m);
    for (k, (row, dev)) in rows.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            phi[[k, j]] = x * scale;
        }
        pbar[k] = dev * scale;
    }
    Ok(CouplingSystem { phi, pbar, time: spec.time })
}

/// Simulate outcomes under the coupled Hamiltonian and recover λ. The
/// result carries performance against the planted couplings.
pub fn estimate_couplings(
    spec: &OpenSystemSpec,
    configs: &[ExperimentConfig],
    opts: &SolverOptions,
) -> Result<(RecoveryResult, CouplingSystem)> {
    let system = assemble_coupling_system(spec, configs)?;
    let mut result = solve_reweighted(&system.phi.view(), &system.pbar.view(), opts)?;
    if spec.lambdas.iter().any(|&v| v != 0.0) {
        let truth = spec.flattened_lambdas();
        result.performance = Some(performance(
            result.h_star.as_slice().unwrap(),
            truth.as_slice().unwrap(),
        )?);
    }
    Ok((result, system))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{sample_observable, sample_product_state, Axis};
    use crate::linalg::{expm, fro_norm_c};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_coeffs(n: usize, seed: u64, lo: f64, hi: f64) -> CoefficientVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = CoefficientVector::zeros(n).unwrap();
        for alpha in 1..coeff_len(n) {
            h.set(alpha, rng.gen_range(lo..hi));
        }
        h
    }

    fn zero_lambdas(ns: usize, nb: usize) -> Array2<f64> {
        Array2::zeros((coeff_len(ns) - 1, coeff_len(nb) - 1))
    }

    fn random_density(d: usize, seed: u64) -> Array2<Complex64> {
        // ψψ† mixed with a touch of identity, normalized
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::<Complex64>::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                a[[i, j]] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let aad = a.dot(&a.t().mapv(|z| z.conj()));
        let tr: Complex64 = (0..d).map(|i| aad[[i, i]]).sum();
        aad.mapv(|z| z / tr.re)
    }

    fn random_configs(n: usize, m: usize, t: f64, seed: u64) -> Vec<ExperimentConfig> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| ExperimentConfig {
                state: sample_product_state(n, &mut rng),
                observable: sample_observable(n, &mut rng),
                time: t,
            })
            .collect()
    }

    fn pure_bath(nb: usize, seed: u64) -> BathState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BathState::PureProduct(sample_product_state(nb, &mut rng))
    }

    #[test]
    fn combined_index_matches_kron() {
        let (ns, nb) = (2usize, 1usize);
        for &(p, q) in &[(1usize, 1usize), (5, 2), (15, 3), (7, 1)] {
            let full = pauli::to_dense(
                &PauliString::from_index(ns + nb, combined_index(p, q, nb)).unwrap(),
            )
            .unwrap();
            let sp = pauli::to_dense(&PauliString::from_index(ns, p).unwrap()).unwrap();
            let bq = pauli::to_dense(&PauliString::from_index(nb, q).unwrap()).unwrap();
            let want = kron_c(&sp.matrix().view(), &bq.matrix().view());
            let err = fro_norm_c(&(full.matrix() - &want).view());
            assert!(err < 1e-15, "(p, q) = ({p}, {q}): {err:.2e}");
        }
    }

    #[test]
    fn identity_hamiltonian_gives_zero_superoperator() {
        let mut h = CoefficientVector::zeros(2).unwrap();
        h.set(0, 2.0);
        let l = build_liouvillian(&h).unwrap();
        let worst = l.matrix().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert_eq!(worst, 0.0);
    }

    #[test]
    fn liouvillian_exponential_matches_conjugation() {
        let h = random_coeffs(2, 11, -0.8, 0.8);
        let t = 0.9;
        let l = build_liouvillian(&h).unwrap();
        let rho = random_density(4, 12);

        let e = expm(&l.matrix().mapv(|z| z * t).view()).unwrap();
        let evolved = unvectorize(&e.dot(&vectorize(&rho.view())), 4);

        let hd = pauli::reconstruct(&h).unwrap();
        let u = expm(&hd.matrix().mapv(|z| z * Complex64::new(0.0, -t)).view()).unwrap();
        let want = u.dot(&rho).dot(&u.t().mapv(|z| z.conj()));
        assert!(fro_norm_c(&(&evolved - &want).view()) < 1e-10);

        // trace and Hermiticity survive the exponential
        let tr: Complex64 = (0..4).map(|i| evolved[[i, i]]).sum();
        assert!((tr.re - 1.0).abs() < 1e-10 && tr.im.abs() < 1e-10);
        assert!(max_herm_deviation(&evolved.view()) < 1e-10);

        // the generator itself maps Hermitian to traceless Hermitian
        let lrho = l.apply(&rho.view());
        let ltr: Complex64 = (0..4).map(|i| lrho[[i, i]]).sum();
        assert!(ltr.norm() < 1e-12);
        assert!(max_herm_deviation(&lrho.view()) < 1e-12);
    }

    #[test]
    fn oversize_register_rejected() {
        let spec = OpenSystemSpec {
            hs: random_coeffs(4, 1, -0.5, 0.5),
            hb: random_coeffs(3, 2, -0.5, 0.5),
            lambdas: zero_lambdas(4, 3),
            time: 0.5,
            bath: BathState::MaximallyMixed,
        };
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("capacity"), "unexpected message: {err}");
    }

    #[test]
    fn maximally_mixed_bath_blinds_first_order() {
        // tr(B_q) = 0 makes every first-order entry vanish exactly.
        let spec = OpenSystemSpec {
            hs: random_coeffs(2, 21, -0.7, 0.7),
            hb: random_coeffs(1, 22, -0.7, 0.7),
            lambdas: zero_lambdas(2, 1),
            time: 0.8,
            bath: BathState::MaximallyMixed,
        };
        let rho = random_density(4, 23);
        let row = open_system_row(
            &spec,
            &rho.view(),
            &LocalObservable { site: 0, axis: Axis::Y },
        )
        .unwrap();
        let worst = row.iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "largest entry {worst:.2e}");
    }

    #[test]
    fn free_hamiltonian_off_takes_commuting_closed_form() {
        // H_S = H_B = 0: the integral collapses to t·L_pq, so each
        // entry is t·tr(−i[S_p⊗B_q, ρ⊗ρ_B]·(M⊗I)).
        let (ns, nb) = (2usize, 1usize);
        let spec = OpenSystemSpec {
            hs: CoefficientVector::zeros(ns).unwrap(),
            hb: CoefficientVector::zeros(nb).unwrap(),
            lambdas: zero_lambdas(ns, nb),
            time: 0.6,
            bath: pure_bath(nb, 31),
        };
        let rho_sys = random_density(4, 32);
        let obs = LocalObservable { site: 1, axis: Axis::X };
        let row = open_system_row(&spec, &rho_sys.view(), &obs).unwrap();

        let rho_bath = bath_density(&spec.bath, nb).unwrap();
        let rho_tot = kron_c(&rho_sys.view(), &rho_bath.view());
        let m_sys = pauli::to_dense(&obs.to_pauli_string(ns).unwrap()).unwrap();
        let eye_b = Array2::<Complex64>::eye(2);
        let m_tot = kron_c(&m_sys.matrix().view(), &eye_b.view());

        let mut slot = 0;
        for p in 1..coeff_len(ns) {
            for q in 1..coeff_len(nb) {
                let g = pauli::to_dense(
                    &PauliString::from_index(ns + nb, combined_index(p, q, nb)).unwrap(),
                )
                .unwrap();
                let comm = g.matrix().dot(&rho_tot) - rho_tot.dot(g.matrix());
                let prod = comm.dot(&m_tot);
                let tr: Complex64 = (0..8).map(|i| prod[[i, i]]).sum();
                let want = (Complex64::new(0.0, -spec.time) * tr).re;
                assert!(
                    (row[slot] - want).abs() < 1e-12,
                    "(p, q) = ({p}, {q}): {} vs {want}",
                    row[slot]
                );
                slot += 1;
            }
        }
    }

    /// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration
    /// on the Legendre recurrence.
    fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        for i in 0..order {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0f64, x);
                for k in 2..=order {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=order {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    }

    #[test]
    fn eigenbasis_integral_matches_quadrature() {
        // Independent oracle: the superoperator integral by 64-point
        // Gauss-Legendre with Padé exponentials, no eigensolver.
        let (ns, nb) = (2usize, 1usize);
        let t = 0.7;
        let spec = OpenSystemSpec {
            hs: random_coeffs(ns, 41, -0.5, 0.5),
            hb: random_coeffs(nb, 42, -0.5, 0.5),
            lambdas: zero_lambdas(ns, nb),
            time: t,
            bath: pure_bath(nb, 43),
        };
        let rho_sys = random_density(4, 44);
        let obs = LocalObservable { site: 0, axis: Axis::Z };
        let row = open_system_row(&spec, &rho_sys.view(), &obs).unwrap();

        let l0 = build_liouvillian(&spec.free_coefficients().unwrap()).unwrap();
        let rho_bath = bath_density(&spec.bath, nb).unwrap();
        let rho_tot = kron_c(&rho_sys.view(), &rho_bath.view());
        let m_sys = pauli::to_dense(&obs.to_pauli_string(ns).unwrap()).unwrap();
        let eye_b = Array2::<Complex64>::eye(2);
        let m_tot = kron_c(&m_sys.matrix().view(), &eye_b.view());
        let v0 = vectorize(&rho_tot.view());

        let (nodes, wts) = gauss_legendre(64);
        // per-node propagators are pair-independent, build them once
        let staged: Vec<(Array2<Complex64>, Array1<Complex64>, f64)> = nodes
            .iter()
            .zip(&wts)
            .map(|(x, w)| {
                let s = t * (x + 1.0) / 2.0;
                let fwd = expm(&l0.matrix().mapv(|z| z * (t - s)).view()).unwrap();
                let at_s = expm(&l0.matrix().mapv(|z| z * s).view())
                    .unwrap()
                    .dot(&v0);
                (fwd, at_s, w * t / 2.0)
            })
            .collect();

        let mut slot = 0;
        for p in 1..coeff_len(ns) {
            for q in 1..coeff_len(nb) {
                let mut unit = CoefficientVector::zeros(ns + nb).unwrap();
                unit.set(combined_index(p, q, nb), 1.0);
                let lpq = build_liouvillian(&unit).unwrap();
                let mut acc = Array1::<Complex64>::zeros(64);
                for (fwd, at_s, w) in &staged {
                    let kicked = fwd.dot(&lpq.matrix().dot(at_s));
                    acc = acc + kicked.mapv(|z| z * *w);
                }
                let x = unvectorize(&acc, 8);
                let prod = x.dot(&m_tot);
                let tr: Complex64 = (0..8).map(|i| prod[[i, i]]).sum();
                assert!(
                    (row[slot] - tr.re).abs() < 1e-8,
                    "(p, q) = ({p}, {q}): {} vs oracle {}",
                    row[slot],
                    tr.re
                );
                slot += 1;
            }
        }
    }

    #[test]
    fn zero_coupling_outcomes_match_prediction_exactly() {
        let (ns, nb) = (2usize, 1usize);
        let spec = OpenSystemSpec {
            hs: random_coeffs(ns, 51, -0.6, 0.6),
            hb: random_coeffs(nb, 52, -0.6, 0.6),
            lambdas: zero_lambdas(ns, nb),
            time: 0.9,
            bath: BathState::MaximallyMixed,
        };
        let configs = random_configs(ns, 10, 0.9, 53);
        let opts = SolverOptions { epsilon: 1e-9, ..Default::default() };
        let (result, system) = estimate_couplings(&spec, &configs, &opts).unwrap();
        let dev = pauli::l2(system.pbar.as_slice().unwrap());
        assert!(dev < 1e-10, "deviation norm {dev:.2e}");
        assert!(pauli::l2(result.h_star.as_slice().unwrap()) < 1e-9);
        assert!(result.performance.is_none());
    }

    #[test]
    fn planted_couplings_recovered() {
        // The bath must precess appreciably within [0, t]: the three
        // bath-side columns of each p-block are integrals against the
        // bath Bloch components, and a slow bath leaves them nearly
        // parallel. Hence the fast H_B relative to H_S here.
        let (ns, nb) = (2usize, 1usize);
        let hs = random_coeffs(ns, 61, -0.6, 0.6);
        let hb = random_coeffs(nb, 62, -2.4, 2.4);
        let hs_norm = pauli::coeff_spec_norm(&hs).unwrap();
        let t = 1.0 / hs_norm;

        // 2 of the 45 pairs, magnitude 0.01·‖H_S‖
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let mut lambdas = zero_lambdas(ns, nb);
        let mut placed = 0;
        while placed < 2 {
            let p = rng.gen_range(0..coeff_len(ns) - 1);
            let q = rng.gen_range(0..coeff_len(nb) - 1);
            if lambdas[[p, q]] == 0.0 {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                lambdas[[p, q]] = sign * 0.01 * hs_norm;
                placed += 1;
            }
        }
        let spec = OpenSystemSpec {
            hs,
            hb,
            lambdas,
            time: t,
            bath: pure_bath(nb, 64),
        };
        spec.validate().unwrap();
        let configs = random_configs(ns, 30, t, 65);

        // honest ε from the actual first-order residual
        let system = assemble_coupling_system(&spec, &configs).unwrap();
        let pred = system.phi.dot(&spec.flattened_lambdas());
        let diff: Vec<f64> =
            system.pbar.iter().zip(pred.iter()).map(|(a, b)| a - b).collect();
        let opts = SolverOptions { epsilon: 1.2 * pauli::l2(&diff), ..Default::default() };

        let (result, _) = estimate_couplings(&spec, &configs, &opts).unwrap();
        let perf = result.performance.unwrap();
        assert!(perf > 0.9, "coupling recovery {perf}");
    }

    #[test]
    fn residual_grows_quadratically_with_coupling() {
        // Doubling λ should roughly quadruple the first-order model
        // residual; fit the log-log slope over scales 1, 2, 4, 8.
        let (ns, nb) = (2usize, 1usize);
        let hs = random_coeffs(ns, 71, -0.6, 0.6);
        let hb = random_coeffs(nb, 72, -0.6, 0.6);
        let floor = pauli::coeff_spec_norm(&hs)
            .unwrap()
            .min(pauli::coeff_spec_norm(&hb).unwrap());
        let t = 0.8 / pauli::coeff_spec_norm(&hs).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let mut base = zero_lambdas(ns, nb);
        for _ in 0..3 {
            let p = rng.gen_range(0..coeff_len(ns) - 1);
            let q = rng.gen_range(0..coeff_len(nb) - 1);
            base[[p, q]] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        }
        // keep the strongest scale inside the weak-coupling gate
        base *= 0.004 * floor;

        let configs = random_configs(ns, 20, t, 74);
        let bath = pure_bath(nb, 75);
        let mut pts = Vec::new();
        for &c in &[1.0f64, 2.0, 4.0, 8.0] {
            let spec = OpenSystemSpec {
                hs: hs.clone(),
                hb: hb.clone(),
                lambdas: base.mapv(|v| v * c),
                time: t,
                bath: bath.clone(),
            };
            spec.validate().unwrap();
            let system = assemble_coupling_system(&spec, &configs).unwrap();
            let pred = system.phi.dot(&spec.flattened_lambdas());
            let diff: Vec<f64> =
                system.pbar.iter().zip(pred.iter()).map(|(a, b)| a - b).collect();
            pts.push((c.ln(), pauli::l2(&diff).ln()));
        }
        let n = pts.len() as f64;
        let (sx, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (slope - 2.0).abs() <= 0.3,
            "log-log slope {slope:.3}, expected 2 ± 0.3"
        );
    }

    #[test]
    fn malformed_density_operators_rejected() {
        let (ns, nb) = (1usize, 1usize);
        let spec = OpenSystemSpec {
            hs: random_coeffs(ns, 81, -0.5, 0.5),
            hb: random_coeffs(nb, 82, -0.5, 0.5),
            lambdas: zero_lambdas(ns, nb),
            time: 0.5,
            bath: BathState::MaximallyMixed,
        };
        let obs = LocalObservable { site: 0, axis: Axis::Z };
        let sensor = OpenSensor::new(&spec).unwrap();

        // wrong trace
        let double = Array2::<Complex64>::eye(2);
        assert!(sensor.row(&double.view(), &obs).is_err());
        // not Hermitian
        let mut skew = Array2::<Complex64>::eye(2).mapv(|z| z * 0.5);
        skew[[0, 1]] = Complex64::new(0.3, 0.1);
        assert!(sensor.row(&skew.view(), &obs).is_err());
        // negative eigenvalue
        let mut neg = Array2::<Complex64>::zeros((2, 2));
        neg[[0, 0]] = Complex64::new(1.5, 0.0);
        neg[[1, 1]] = Complex64::new(-0.5, 0.0);
        assert!(sensor.row(&neg.view(), &obs).is_err());
        // observable off the system register
        let rho = random_density(2, 83);
        let far = LocalObservable { site: 1, axis: Axis::X };
        assert!(sensor.row(&rho.view(), &far).is_err());
    }

    #[test]
    fn spec_validation_gates() {
        let (ns, nb) = (2usize, 1usize);
        let hs = random_coeffs(ns, 91, -0.5, 0.5);
        let hb = random_coeffs(nb, 92, -0.5, 0.5);

        // coupling above the weak-coupling gate
        let mut strong = zero_lambdas(ns, nb);
        strong[[0, 0]] = pauli::coeff_spec_norm(&hb).unwrap();
        let spec = OpenSystemSpec {
            hs: hs.clone(),
            hb: hb.clone(),
            lambdas: strong,
            time: 0.5,
            bath: BathState::MaximallyMixed,
        };
        assert!(spec.validate().is_err());

        // wrong coupling matrix shape
        let spec = OpenSystemSpec {
            hs: hs.clone(),
            hb: hb.clone(),
            lambdas: Array2::zeros((15, 15)),
            time: 0.5,
            bath: BathState::MaximallyMixed,
        };
        assert!(spec.validate().is_err());

        // bath state on the wrong number of sites
        let spec = OpenSystemSpec {
            hs,
            hb,
            lambdas: zero_lambdas(ns, nb),
            time: 0.5,
            bath: pure_bath(2, 93),
        };
        assert!(spec.validate().is_err());
    }
}
