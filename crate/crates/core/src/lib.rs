//! Estimation of nearly sparse many-body Hamiltonians from random local
//! state preparations and single-observable measurements.
//!
//! The measurement model: prepare a random product state ψ, evolve for a
//! short time t under the unknown H = Σ_α h_α Γ_α (Γ_α a Pauli string
//! basis), then measure one local Pauli observable M. To first order in t
//! the deviation of the outcome from its t = 0 value is linear in the
//! coefficient vector h, so a batch of m randomized settings yields a
//! linear system p̄ = Φh that is heavily underdetermined (m ≪ 4^n) but
//! solvable by ℓ1 minimization when h is nearly sparse.
//!
//! Crate layout:
//! - [`pauli`]: Pauli string indexing, dense forms, coefficient vectors
//! - [`linalg`]: small dense Hermitian eigensolver, SVD, Cholesky
//! - [`experiment`]: product states, local observables, exact outcomes
//! - [`models`]: lattice / exchange / planted test Hamiltonians
//! - [`sensing`]: sensing matrix Φ and data vector p̄ assembly, CSV io
//! - [`solver`]: basis pursuit denoising via ADMM, reweighted ℓ1
//! - [`diagnostics`]: measurement-ensemble concentration and RIP probes
//! - [`fine_structure`]: known-bulk drift estimation in the rotating frame
//! - [`open_system`]: system-bath coupling estimation from system data
//! - [`harness`]: seeded benchmark runs, noise studies, CSV reports
//! - [`config`]: TOML run configuration

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod fine_structure;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod open_system;
pub mod pauli;
pub mod sensing;
pub mod solver;

pub use error::{Error, Result};

