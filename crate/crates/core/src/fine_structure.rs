//! Estimation of a small perturbation Δ around a known background H₀.
//!
//! When the bulk of the Hamiltonian is known, the measured deviation
//! is linear in Δ with coefficients i⟨ψ|[T_α, M⁰]|ψ⟩, where
//! M⁰ = e^{itH₀} M e^{−itH₀} and T_α = ∫₀ᵗ e^{isH₀} Γ_α e^{−isH₀} ds.
//! Only t‖Δ‖ has to be small; t‖H₀‖ can be large, which is what makes
//! this variant worth having over the plain short-time pipeline.
//!
//! The time integral has a closed form in the eigenbasis of H₀:
//! matrix element (a,b) of T_α is Γ̃_α[a,b]·φ(λ_a − λ_b) with
//! φ(ω) = (e^{itω} − 1)/(iω) and the degenerate limit φ(0) = t.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, Propagator};
use crate::linalg::{eigh, max_herm_deviation, Eigh};
use crate::pauli::{
    self, coeff_len, hilbert_dim, CoefficientVector, DenseOperator, PauliString,
};
use crate::sensing::SensingSystem;
use crate::solver::{performance, solve_reweighted, RecoveryResult, SolverOptions};

#[derive(Clone, Debug)]
pub struct FineStructureProblem {
    /// Known background Hamiltonian.
    pub h0: CoefficientVector,
    /// Planted perturbation used to simulate outcomes and score
    /// recoveries.
    pub delta_true: CoefficientVector,
    pub time: f64,
}

impl FineStructureProblem {
    pub fn validate(&self) -> Result<()> {
        if self.h0.n_qubits() != self.delta_true.n_qubits() {
            return Err(Error::invalid("background and perturbation qubit counts differ"));
        }
        if !(self.time > 0.0) || !self.time.is_finite() {
            return Err(Error::invalid("time must be positive and finite"));
        }
        let delta_norm = pauli::coeff_spec_norm(&self.delta_true)?;
        if self.time * delta_norm >= 0.1 {
            return Err(Error::invalid(format!(
                "perturbation too large: t·‖Δ‖ = {:.3} must stay below 0.1",
                self.time * delta_norm
            )));
        }
        Ok(())
    }

    pub fn n_qubits(&self) -> usize {
        self.h0.n_qubits()
    }
}

/// Heisenberg-evolved observable e^{itH₀} M e^{−itH₀}.
pub fn evolved_observable(
    h0: &CoefficientVector,
    observable: &crate::experiment::LocalObservable,
    time: f64,
) -> Result<DenseOperator> {
    let n = h0.n_qubits();
    let dense = pauli::reconstruct(h0)?;
    let eig = eigh(&dense.matrix().view())?;
    let m_op = pauli::to_dense(&observable.to_pauli_string(n)?)?;
    let d = hilbert_dim(n);

    // conjugate into the eigenbasis, apply the phases, conjugate back
    let v = &eig.vectors;
    let m_tilde = v.t().mapv(|z| z.conj()).dot(m_op.matrix()).dot(v);
    let mut evolved = Array2::<Complex64>::zeros((d, d));
    for a in 0..d {
        for b in 0..d {
            let phase = Complex64::from_polar(1.0, time * (eig.values[a] - eig.values[b]));
            evolved[[a, b]] = phase * m_tilde[[a, b]];
        }
    }
    let back = v.dot(&evolved).dot(&v.t().mapv(|z| z.conj()));
    if max_herm_deviation(&back.view()) > 1e-12 {
        return Err(Error::numerical("evolved observable lost Hermiticity"));
    }
    DenseOperator::from_matrix(back)
}

fn phase_integral(omega: f64, t: f64) -> Complex64 {
    if omega.abs() < 1e-9 {
        Complex64::new(t, 0.0)
    } else {
        // ∫₀ᵗ e^{isω} ds
        (Complex64::from_polar(1.0, t * omega) - 1.0) / Complex64::new(0.0, omega)
    }
}

/// Row builder holding the one-time eigendecomposition of H₀.
pub struct FineSensor {
    eigen: Eigh,
    n: usize,
    time: f64,
}

impl FineSensor {
    pub fn new(h0: &CoefficientVector, time: f64) -> Result<Self> {
        if !(time > 0.0) || !time.is_finite() {
            return Err(Error::invalid("time must be positive and finite"));
        }
        let dense = pauli::reconstruct(h0)?;
        let eigen = eigh(&dense.matrix().view())?;
        Ok(FineSensor { eigen, n: h0.n_qubits(), time })
    }

    /// Sensing row: entry α = i⟨ψ|[T_α, M⁰]|ψ⟩.
    ///
    /// Everything α-independent is collapsed into a single matrix Z
    /// before the column loop: with C = [M̃⁰, ρ̃] in the eigenbasis and
    /// W[a,b] = φ(λ_a − λ_b)·C[b,a], the pairing
    /// Σ_ab Γ̃_α[a,b]·W[a,b] equals Σ_rc Γ_α[r,c]·Z[r,c] for
    /// Z = conj(V)·W·Vᵀ, and each Γ_α has one nonzero per row.
    pub fn row(&self, config: &ExperimentConfig) -> Result<Vec<f64>> {
        config.validate(self.n)?;
        if (config.time - self.time).abs() != 0.0 {
            return Err(Error::invalid("config time differs from sensor time"));
        }
        let d = hilbert_dim(self.n);
        let t = self.time;
        let v = &self.eigen.vectors;
        let vals = &self.eigen.values;

        let psi = config.state.to_state_vector();
        let m_op = pauli::to_dense(&config.observable.to_pauli_string(self.n)?)?;

        let psi_tilde = v.t().mapv(|z| z.conj()).dot(&psi);
        let m_tilde = v.t().mapv(|z| z.conj()).dot(m_op.matrix()).dot(v);

        // M̃⁰, ρ̃, C = [M̃⁰, ρ̃], W, then Z back in the computational frame
        let mut m0 = Array2::<Complex64>::zeros((d, d));
        for a in 0..d {
            for b in 0..d {
                m0[[a, b]] =
                    Complex64::from_polar(1.0, t * (vals[a] - vals[b])) * m_tilde[[a, b]];
            }
        }
        let rho = Array2::from_shape_fn((d, d), |(a, b)| {
            psi_tilde[a] * psi_tilde[b].conj()
        });
        let c = m0.dot(&rho) - rho.dot(&m0);
        let mut w = Array2::<Complex64>::zeros((d, d));
        for a in 0..d {
            for b in 0..d {
                w[[a, b]] = phase_integral(vals[a] - vals[b], t) * c[[b, a]];
            }
        }
        let z = v.mapv(|x| x.conj()).dot(&w).dot(&v.t());

        let mut row = vec![0.0f64; coeff_len(self.n)];
        for alpha in 0..coeff_len(self.n) {
            let gamma = PauliString::from_index(self.n, alpha)?;
            let mut acc = Complex64::new(0.0, 0.0);
            gamma.for_each_nonzero(|r, col, val| {
                acc += val * z[[r, col]];
            });
            let entry = Complex64::new(0.0, 1.0) * acc;
            if entry.im.abs() > 1e-12 {
                return Err(Error::numerical(format!(
                    "fine row entry picked up imaginary part {:.2e}",
                    entry.im
                )));
            }
            row[alpha] = entry.re;
        }
        Ok(row)
    }
}

/// Single-row convenience wrapper around [`FineSensor`].
pub fn fine_row(
    h0: &CoefficientVector,
    config: &ExperimentConfig,
) -> Result<Vec<f64>> {
    FineSensor::new(h0, config.time)?.row(config)
}

/// Simulate outcomes under H₀ + Δ, subtract the known ⟨ψ|M⁰|ψ⟩
/// offsets, and build the scaled linear system in Δ.
pub fn assemble_fine_system(
    problem: &FineStructureProblem,
    configs: &[ExperimentConfig],
) -> Result<SensingSystem> {
    problem.validate()?;
    if configs.is_empty() {
        return Err(Error::invalid("need at least one configuration"));
    }
    let n = problem.n_qubits();
    for c in configs {
        c.validate(n)?;
        if (c.time - problem.time).abs() != 0.0 {
            return Err(Error::invalid("all configs must share the problem time"));
        }
    }
    let m = configs.len();
    let d_coeff = coeff_len(n);

    let mut h_total = problem.h0.clone();
    for (alpha, value) in problem.delta_true.iter_nonzero() {
        h_total.add(alpha, value);
    }
    let prop_total = Propagator::new(&h_total)?;
    let prop_background = Propagator::new(&problem.h0)?;

    let sensor = FineSensor::new(&problem.h0, problem.time)?;
    let scale = 1.0 / (m as f64).sqrt();
    let rows: Vec<(Vec<f64>, f64)> = configs
        .par_iter()
        .map(|c| -> Result<(Vec<f64>, f64)> {
            let row = sensor.row(c)?;
            let outcome = crate::experiment::exact_outcome_with(&prop_total, c)?;
            let offset = crate::experiment::exact_outcome_with(&prop_background, c)?;
            Ok((row, outcome - offset))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut phi = Array2::<f64>::zeros((m, d_coeff));
    let mut pbar = Array1::<f64>::zeros(m);
    for (k, (row, dev)) in rows.iter().enumerate() {
        for (alpha, &x) in row.iter().enumerate() {
            phi[[k, alpha]] = x * scale;
        }
        pbar[k] = dev * scale;
    }
    Ok(SensingSystem { phi, pbar, time: problem.time, n, measurement_l2: 0.0 })
}

/// Assemble and recover Δ in one call. The result carries performance
/// against the planted perturbation.
pub fn estimate_fine_structure(
    problem: &FineStructureProblem,
    configs: &[ExperimentConfig],
    opts: &SolverOptions,
) -> Result<(RecoveryResult, SensingSystem)> {
    let system = assemble_fine_system(problem, configs)?;
    let mut result = solve_reweighted(&system.phi.view(), &system.pbar.view(), opts)?;
    if problem.delta_true.iter_nonzero().next().is_some() {
        result.performance = Some(performance(
            result.h_star.as_slice().unwrap(),
            problem.delta_true.values(),
        )?);
    }
    Ok((result, system))
}
