//! Dense linear algebra for small matrices (dimension ≤ a few hundred).
//!
//! Everything here is written directly against `ndarray` storage so the
//! crate carries no BLAS/LAPACK link dependency. The matrices produced by
//! the estimation pipeline are tiny (Hilbert dimension ≤ 64, Gram
//! matrices ≤ 256), so cubic Jacobi-type methods are fast enough and have
//! the accuracy we care about: Jacobi eigensolvers and one-sided Jacobi
//! SVD compute small eigenvalues/singular values to high *relative*
//! accuracy, which matters for rank decisions near the 1e-10 cutoff.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Eigendecomposition A = V diag(λ) Vᴴ of a Hermitian matrix.
/// Eigenvalues ascending, `vectors` columns are the matching eigenvectors.
pub struct Eigh {
    pub values: Array1<f64>,
    pub vectors: Array2<Complex64>,
}

/// Cyclic Jacobi eigensolver for a Hermitian matrix.
///
/// Each rotation annihilates one off-diagonal pair (p, q): the complex
/// phase of a_pq is absorbed into column p, then a real 2×2 rotation
/// zeroes the entry (Golub & Van Loan §8.5, extended to Hermitian input).
/// Off-diagonal mass decreases monotonically and the sweep loop converges
/// quadratically; 20 sweeps is far beyond what dimension ≤ 256 needs.
pub fn eigh(a: &ArrayView2<Complex64>) -> Result<Eigh> {
    let n = check_square(a)?;
    let scale = fro_norm_c(a);
    let herm_dev = max_herm_deviation(a);
    if herm_dev > 1e-8 * scale.max(1.0) {
        return Err(Error::invalid(format!(
            "eigh: matrix is not Hermitian (max |A - A^H| entry = {herm_dev:.3e})"
        )));
    }

    // Work on the Hermitized copy so tiny asymmetries cannot bias sweeps.
    let mut m = Array2::<Complex64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            m[[i, j]] = 0.5 * (a[[i, j]] + a[[j, i]].conj());
        }
    }
    let mut v = Array2::<Complex64>::eye(n);

    let tol = 1e-14 * scale.max(1e-300);
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                let r = apq.norm();
                if r <= tol / (n as f64) {
                    continue;
                }
                let u = apq / r; // phase, |u| = 1
                let app = m[[p, p]].re;
                let aqq = m[[q, q]].re;
                let zeta = (aqq - app) / (2.0 * r);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let cu = u * c;
                let su = u * s;

                // A <- J^H A J with J = diag(u, 1)·[[c, s], [-s, c]] on
                // the (p, q) plane: diag(u, 1) reduces the block to a
                // real symmetric one, the real rotation annihilates it.
                for k in 0..n {
                    let akp = m[[k, p]];
                    let akq = m[[k, q]];
                    m[[k, p]] = akp * cu - akq * s;
                    m[[k, q]] = akp * su + akq * c;
                }
                for k in 0..n {
                    let apk = m[[p, k]];
                    let aqk = m[[q, k]];
                    m[[p, k]] = apk * cu.conj() - aqk * s;
                    m[[q, k]] = apk * su.conj() + aqk * c;
                }
                // Rotated pair is exactly zero in exact arithmetic.
                m[[p, q]] = Complex64::new(0.0, 0.0);
                m[[q, p]] = Complex64::new(0.0, 0.0);

                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = vkp * cu - vkq * s;
                    v[[k, q]] = vkp * su + vkq * c;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].re.partial_cmp(&m[[j, j]].re).unwrap());
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]].re));
    let mut vectors = Array2::<Complex64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[[k, dst]] = v[[k, src]];
        }
    }
    Ok(Eigh { values, vectors })
}

/// Eigendecomposition of a real symmetric matrix; thin wrapper over the
/// Hermitian path (rotations stay real when the input is real).
pub struct EighReal {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

pub fn eigh_real(a: &ArrayView2<f64>) -> Result<EighReal> {
    let n = check_square_real(a)?;
    let ac = a.map(|&x| Complex64::new(x, 0.0));
    let Eigh { values, vectors } = eigh(&ac.view())?;
    let mut vr = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            vr[[i, j]] = vectors[[i, j]].re;
        }
    }
    Ok(EighReal { values, vectors: vr })
}

/// Singular values of a real matrix, descending, by one-sided Jacobi
/// (Demmel & Veselić style): rotate column pairs of the tall orientation
/// until mutually orthogonal; the column norms are the singular values.
pub fn singular_values(a: &ArrayView2<f64>) -> Result<Vec<f64>> {
    let (rows, cols) = a.dim();
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    // Tall orientation: singular values are transpose-invariant.
    let mut b = if rows >= cols {
        a.to_owned()
    } else {
        a.t().to_owned()
    };
    let k = b.ncols();
    let tol = 1e-14;
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for i in 0..k {
            for j in (i + 1)..k {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for r in 0..b.nrows() {
                    let bi = b[[r, i]];
                    let bj = b[[r, j]];
                    alpha += bi * bi;
                    beta += bj * bj;
                    gamma += bi * bj;
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..b.nrows() {
                    let bi = b[[r, i]];
                    let bj = b[[r, j]];
                    b[[r, i]] = c * bi - s * bj;
                    b[[r, j]] = s * bi + c * bj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma: Vec<f64> = (0..k)
        .map(|i| b.column(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sigma.sort_by(|x, y| y.partial_cmp(x).unwrap());
    Ok(sigma)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite
/// matrix: A = L Lᵀ. Fails on non-positive pivots.
pub fn cholesky(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = check_square_real(a)?;
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::numerical(format!(
                        "cholesky: non-positive pivot {sum:.3e} at index {i}"
                    )));
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve A x = b given the Cholesky factor L of A (forward then back
/// substitution).
pub fn cholesky_solve(l: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Solve A X = B for complex square A by LU with partial pivoting.
pub fn lu_solve_c(a: &ArrayView2<Complex64>, b: &ArrayView2<Complex64>) -> Result<Array2<Complex64>> {
    let n = check_square(a)?;
    if b.nrows() != n {
        return Err(Error::invalid(format!(
            "rhs has {} rows, expected {n}",
            b.nrows()
        )));
    }
    let mut lu = a.to_owned();
    let mut x = b.to_owned();
    let ncols = x.ncols();
    for k in 0..n {
        let mut pivot = k;
        let mut best = lu[[k, k]].norm();
        for i in (k + 1)..n {
            let mag = lu[[i, k]].norm();
            if mag > best {
                best = mag;
                pivot = i;
            }
        }
        if best == 0.0 {
            return Err(Error::numerical("lu_solve: singular matrix".to_string()));
        }
        if pivot != k {
            for j in 0..n {
                let tmp = lu[[k, j]];
                lu[[k, j]] = lu[[pivot, j]];
                lu[[pivot, j]] = tmp;
            }
            for j in 0..ncols {
                let tmp = x[[k, j]];
                x[[k, j]] = x[[pivot, j]];
                x[[pivot, j]] = tmp;
            }
        }
        let diag = lu[[k, k]];
        for i in (k + 1)..n {
            let factor = lu[[i, k]] / diag;
            if factor.norm() == 0.0 {
                continue;
            }
            for j in (k + 1)..n {
                let v = lu[[k, j]];
                lu[[i, j]] -= factor * v;
            }
            for j in 0..ncols {
                let v = x[[k, j]];
                x[[i, j]] -= factor * v;
            }
        }
    }
    for k in (0..n).rev() {
        let diag = lu[[k, k]];
        for j in 0..ncols {
            let mut sum = x[[k, j]];
            for i in (k + 1)..n {
                sum -= lu[[k, i]] * x[[i, j]];
            }
            x[[k, j]] = sum / diag;
        }
    }
    Ok(x)
}

/// Matrix exponential by Padé-13 approximation with scaling and
/// squaring (Higham 2005). Accurate to machine precision for the small
/// superoperators this crate builds.
pub fn expm(a: &ArrayView2<Complex64>) -> Result<Array2<Complex64>> {
    let n = check_square(a)?;
    const THETA_13: f64 = 5.371_920_351_148_152;
    const B: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];

    // 1-norm (max column sum) drives the scaling power.
    let mut norm1 = 0.0f64;
    for j in 0..n {
        let col: f64 = (0..n).map(|i| a[[i, j]].norm()).sum();
        norm1 = norm1.max(col);
    }
    let s = if norm1 > THETA_13 {
        (norm1 / THETA_13).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.map(|z| z / 2f64.powi(s as i32));

    let eye = Array2::<Complex64>::eye(n);
    let a2 = scaled.dot(&scaled);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let u_inner = &(&a6 * B[13] + &a4 * B[11]) + &(&a2 * B[9]);
    let u_poly = &a6.dot(&u_inner) + &(&(&a6 * B[7] + &a4 * B[5]) + &(&a2 * B[3] + &eye * B[1]));
    let u = scaled.dot(&u_poly);
    let v_inner = &(&a6 * B[12] + &a4 * B[10]) + &(&a2 * B[8]);
    let v = &a6.dot(&v_inner) + &(&(&a6 * B[6] + &a4 * B[4]) + &(&a2 * B[2] + &eye * B[0]));

    let num = &v + &u;
    let den = &v - &u;
    let mut f = lu_solve_c(&den.view(), &num.view())?;
    for _ in 0..s {
        f = f.dot(&f);
    }
    Ok(f)
}

/// Frobenius norm of a complex matrix.
pub fn fro_norm_c(a: &ArrayView2<Complex64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Kronecker product A ⊗ B of dense complex matrices.
pub fn kron_c(a: &ArrayView2<Complex64>, b: &ArrayView2<Complex64>) -> Array2<Complex64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::<Complex64>::zeros((ar * br, ac * bc));
    for ia in 0..ar {
        for ja in 0..ac {
            let f = a[[ia, ja]];
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for ib in 0..br {
                for jb in 0..bc {
                    out[[ia * br + ib, ja * bc + jb]] = f * b[[ib, jb]];
                }
            }
        }
    }
    out
}

/// Max entrywise |A - A^H|; zero for exactly Hermitian input.
pub fn max_herm_deviation(a: &ArrayView2<Complex64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    worst
}

fn check_square(a: &ArrayView2<Complex64>) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::invalid(format!("expected square matrix, got {r}×{c}")));
    }
    Ok(r)
}

fn check_square_real(a: &ArrayView2<f64>) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::invalid(format!("expected square matrix, got {r}×{c}")));
    }
    Ok(r)
}
