//! Pauli-string operator basis.
//!
//! Hermitian operators on n qubits expand as A = Σ_α h_α Γ_α over the
//! D = 4ⁿ tensor products of single-site Pauli matrices, with real h_α
//! when A is Hermitian. Strings are indexed canonically: base-4 digits
//! I=0, X=1, Y=2, Z=3 read with site 0 most significant, which is the
//! lexicographic order over site labels with I < X < Y < Z.
//!
//! The basis is orthogonal under the trace inner product,
//! Tr(Γ_α Γ_β) = d·δ_αβ with d = 2ⁿ, so decomposition is a plain
//! projection h_α = Tr(Γ_α A)/d.
//!
//! Every Γ_α has exactly one nonzero per matrix row (value in
//! {±1, ±i}), which the conversion and trace routines exploit: the
//! column is the row index with bits flipped wherever the site label is
//! X or Y, and the phase is a per-site product.

use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::experiment::ProductState;
use crate::linalg;

/// Hard cap on qubit count for dense conversions (d = 64, D = 4096).
pub const MAX_QUBITS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_digit(d: usize) -> Option<Pauli> {
        match d {
            0 => Some(Pauli::I),
            1 => Some(Pauli::X),
            2 => Some(Pauli::Y),
            3 => Some(Pauli::Z),
            _ => None,
        }
    }

    pub fn digit(self) -> usize {
        match self {
            Pauli::I => 0,
            Pauli::X => 1,
            Pauli::Y => 2,
            Pauli::Z => 3,
        }
    }

    pub fn label(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    /// 2×2 matrix of this Pauli operator.
    pub fn matrix(self) -> [[Complex64; 2]; 2] {
        let o = Complex64::new(0.0, 0.0);
        let l = Complex64::new(1.0, 0.0);
        match self {
            Pauli::I => [[l, o], [o, l]],
            Pauli::X => [[o, l], [l, o]],
            Pauli::Y => [[o, Complex64::new(0.0, -1.0)], [Complex64::new(0.0, 1.0), o]],
            Pauli::Z => [[l, o], [o, -l]],
        }
    }
}

/// Tensor product of single-site Paulis; site 0 is the leftmost factor
/// (most significant bit of matrix indices).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliString {
    sites: Vec<Pauli>,
}

impl PauliString {
    pub fn new(sites: Vec<Pauli>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::invalid("PauliString needs at least one site"));
        }
        Ok(PauliString { sites })
    }

    pub fn identity(n: usize) -> Result<Self> {
        PauliString::new(vec![Pauli::I; n])
    }

    /// Single non-identity operator at `site`, identity elsewhere.
    pub fn single(n: usize, site: usize, p: Pauli) -> Result<Self> {
        if site >= n {
            return Err(Error::invalid(format!("site {site} out of range for n = {n}")));
        }
        let mut sites = vec![Pauli::I; n];
        sites[site] = p;
        PauliString::new(sites)
    }

    pub fn n(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[Pauli] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> Pauli {
        self.sites[i]
    }

    /// Canonical index: base-4 digits, site 0 most significant.
    pub fn index(&self) -> usize {
        self.sites.iter().fold(0, |acc, p| (acc << 2) | p.digit())
    }

    pub fn from_index(n: usize, index: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n must be ≥ 1"));
        }
        if index >= coeff_len(n) {
            return Err(Error::invalid(format!("index {index} out of range for n = {n}")));
        }
        let sites = (0..n)
            .map(|i| {
                let shift = 2 * (n - 1 - i);
                Pauli::from_digit((index >> shift) & 0b11).unwrap()
            })
            .collect();
        Ok(PauliString { sites })
    }

    /// Number of non-identity sites.
    pub fn weight(&self) -> usize {
        self.sites.iter().filter(|&&p| p != Pauli::I).count()
    }

    pub fn is_identity(&self) -> bool {
        self.weight() == 0
    }

    pub fn label(&self) -> String {
        self.sites.iter().map(|p| p.label()).collect()
    }

    /// Visit the d nonzero entries (row, col, value). Column = row with
    /// bits flipped at X/Y sites; value is the per-site phase product.
    pub fn for_each_nonzero(&self, mut f: impl FnMut(usize, usize, Complex64)) {
        let n = self.n();
        let d = 1usize << n;
        let mut flip = 0usize;
        for (i, p) in self.sites.iter().enumerate() {
            if matches!(p, Pauli::X | Pauli::Y) {
                flip |= 1 << (n - 1 - i);
            }
        }
        for row in 0..d {
            let col = row ^ flip;
            let mut val = Complex64::new(1.0, 0.0);
            for (i, p) in self.sites.iter().enumerate() {
                let bit = (row >> (n - 1 - i)) & 1;
                match p {
                    Pauli::I | Pauli::X => {}
                    Pauli::Y => {
                        // entries (1,0) = i, (0,1) = -i
                        val *= if bit == 1 {
                            Complex64::new(0.0, 1.0)
                        } else {
                            Complex64::new(0.0, -1.0)
                        };
                    }
                    Pauli::Z => {
                        if bit == 1 {
                            val = -val;
                        }
                    }
                }
            }
            f(row, col, val);
        }
    }
}

/// Hilbert dimension d = 2ⁿ.
pub fn hilbert_dim(n: usize) -> usize {
    1 << n
}

/// Coefficient-vector length D = 4ⁿ.
pub fn coeff_len(n: usize) -> usize {
    1 << (2 * n)
}

/// Dense complex matrix whose dimension is a power of two.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    mat: Array2<Complex64>,
}

impl DenseOperator {
    pub fn from_matrix(mat: Array2<Complex64>) -> Result<Self> {
        let (r, c) = mat.dim();
        if r != c {
            return Err(Error::invalid(format!("operator must be square, got {r}×{c}")));
        }
        if r == 0 || !r.is_power_of_two() {
            return Err(Error::invalid(format!("dimension {r} is not a power of 2")));
        }
        Ok(DenseOperator { mat })
    }

    pub fn zeros(n_qubits: usize) -> Self {
        let d = hilbert_dim(n_qubits);
        DenseOperator { mat: Array2::zeros((d, d)) }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn n_qubits(&self) -> usize {
        self.mat.nrows().trailing_zeros() as usize
    }

    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.mat
    }

    pub fn into_matrix(self) -> Array2<Complex64> {
        self.mat
    }

    /// Max entrywise |A − A†| below `tol`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        linalg::max_herm_deviation(&self.mat.view()) < tol
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim()).map(|i| self.mat[[i, i]]).sum()
    }
}

/// Dense form of a Pauli string. Capacity error above [`MAX_QUBITS`].
pub fn to_dense(p: &PauliString) -> Result<DenseOperator> {
    if p.n() > MAX_QUBITS {
        return Err(Error::invalid(format!(
            "n = {} exceeds dense-conversion cap {MAX_QUBITS}",
            p.n()
        )));
    }
    let d = hilbert_dim(p.n());
    let mut mat = Array2::<Complex64>::zeros((d, d));
    p.for_each_nonzero(|r, c, v| mat[[r, c]] = v);
    DenseOperator::from_matrix(mat)
}

/// Real coefficients of a Hermitian operator in the Pauli-string basis,
/// length D = 4ⁿ in canonical index order.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientVector {
    n: usize,
    values: Vec<f64>,
}

impl CoefficientVector {
    pub fn zeros(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::invalid(format!("qubit count {n} outside 1..={MAX_QUBITS}")));
        }
        Ok(CoefficientVector { n, values: vec![0.0; coeff_len(n)] })
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::invalid(format!("qubit count {n} outside 1..={MAX_QUBITS}")));
        }
        if values.len() != coeff_len(n) {
            return Err(Error::invalid(format!(
                "expected {} coefficients for n = {n}, got {}",
                coeff_len(n),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coefficients must be finite"));
        }
        Ok(CoefficientVector { n, values })
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn set(&mut self, index: usize, v: f64) {
        self.values[index] = v;
    }

    pub fn add(&mut self, index: usize, v: f64) {
        self.values[index] += v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn iter_nonzero(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().copied().enumerate().filter(|&(_, v)| v != 0.0)
    }

    pub fn support(&self) -> Vec<usize> {
        self.iter_nonzero().map(|(i, _)| i).collect()
    }

    pub fn to_array1(&self) -> Array1<f64> {
        Array1::from_vec(self.values.clone())
    }
}

/// Project a Hermitian operator onto the Pauli basis:
/// values[α] = Tr(Γ_α A)/d. Rejects inputs whose Hermitian deviation
/// would push imaginary coefficient parts above 1e-9.
pub fn decompose(a: &DenseOperator) -> Result<CoefficientVector> {
    let n = a.n_qubits();
    if n == 0 || n > MAX_QUBITS {
        return Err(Error::invalid(format!("qubit count {n} outside 1..={MAX_QUBITS}")));
    }
    if !a.is_hermitian(1e-9) {
        return Err(Error::invalid(
            "decompose: operator is not Hermitian within 1e-9".to_string(),
        ));
    }
    let d = a.dim() as f64;
    let mat = a.matrix();
    let mut out = CoefficientVector::zeros(n)?;
    for alpha in 0..coeff_len(n) {
        let gamma = PauliString::from_index(n, alpha)?;
        let mut tr = Complex64::new(0.0, 0.0);
        gamma.for_each_nonzero(|r, c, v| tr += v * mat[[c, r]]);
        let coeff = tr / d;
        if coeff.im.abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "decompose: imaginary coefficient {:.3e} at index {alpha}",
                coeff.im
            )));
        }
        out.set(alpha, coeff.re);
    }
    Ok(out)
}

/// Dense operator Σ_α h_α Γ_α.
pub fn reconstruct(h: &CoefficientVector) -> Result<DenseOperator> {
    let n = h.n_qubits();
    let d = hilbert_dim(n);
    let mut mat = Array2::<Complex64>::zeros((d, d));
    for (alpha, v) in h.iter_nonzero() {
        let gamma = PauliString::from_index(n, alpha)?;
        gamma.for_each_nonzero(|r, c, phase| mat[[r, c]] += phase * v);
    }
    DenseOperator::from_matrix(mat)
}

/// i·⟨ψ|[Γ, M]|ψ⟩ for Pauli strings Γ, M and a product state ψ.
///
/// Both ⟨ψ|ΓM|ψ⟩ and ⟨ψ|MΓ|ψ⟩ factorize over sites for product states,
/// and the two are complex conjugates (ΓM and MΓ are mutually adjoint
/// for Hermitian factors), so the result is −2·Im Π_i ⟨ψ_i|Γ_i M_i|ψ_i⟩
/// — real by construction.
pub fn commutator_expectation(g: &PauliString, m: &PauliString, psi: &ProductState) -> Result<f64> {
    let n = g.n();
    if m.n() != n || psi.n() != n {
        return Err(Error::invalid(format!(
            "qubit-count mismatch: Γ has {n}, M has {}, ψ has {}",
            m.n(),
            psi.n()
        )));
    }
    let mut z = Complex64::new(1.0, 0.0);
    for i in 0..n {
        z *= site_product_expectation(psi.factor(i), g.site(i), m.site(i));
    }
    Ok(-2.0 * z.im)
}

/// ⟨φ|A·B|φ⟩ for single-qubit Paulis A, B and a 2-vector φ.
pub(crate) fn site_product_expectation(phi: &[Complex64; 2], a: Pauli, b: Pauli) -> Complex64 {
    let bm = b.matrix();
    let am = a.matrix();
    let w = [bm[0][0] * phi[0] + bm[0][1] * phi[1], bm[1][0] * phi[0] + bm[1][1] * phi[1]];
    let u = [am[0][0] * w[0] + am[0][1] * w[1], am[1][0] * w[0] + am[1][1] * w[1]];
    phi[0].conj() * u[0] + phi[1].conj() * u[1]
}

/// Largest singular value, via the top eigenvalue of A†A.
pub fn spec_norm(a: &DenseOperator) -> Result<f64> {
    let m = a.matrix();
    let aha = m.t().map(|z| z.conj()).dot(m);
    let e = linalg::eigh(&aha.view())?;
    let top = e.values[e.values.len() - 1].max(0.0);
    Ok(top.sqrt())
}

/// Frobenius norm sqrt(Tr A†A).
pub fn fro_norm(a: &DenseOperator) -> f64 {
    linalg::fro_norm_c(&a.matrix().view())
}

pub fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

/// Spectral norm of the operator a coefficient vector represents.
pub fn coeff_spec_norm(h: &CoefficientVector) -> Result<f64> {
    spec_norm(&reconstruct(h)?)
}

#[allow(unused)]
pub(crate) fn view_spec_norm(m: &ArrayView2<Complex64>) -> Result<f64> {
    spec_norm(&DenseOperator::from_matrix(m.to_owned())?)
}
