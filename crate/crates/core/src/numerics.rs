//! Dense complex linear algebra used by the rest of the crate.
//!
//! The composite Hilbert space never exceeds a few dozen dimensions and the
//! vectorized Liouvillians stay below ~600x600, so everything here is dense
//! `f64`-pair arithmetic: a cyclic Jacobi eigensolver for Hermitian matrices,
//! LU with partial pivoting, and a scaling-and-squaring matrix exponential.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use thiserror::Error;

pub type CMatrix = Array2<Complex64>;
pub type CVector = Array1<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("matrix is not Hermitian (asymmetry {defect:.3e} exceeds {tolerance:.1e})")]
    NotHermitian { defect: f64, tolerance: f64 },
    #[error("singular linear system (pivot {pivot:.3e})")]
    Singular { pivot: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("eigensolver failed to converge after {sweeps} sweeps (off-diagonal {off:.3e})")]
    NoConvergence { sweeps: usize, off: f64 },
}

/// Kronecker product; dimensions multiply.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    ndarray::linalg::kron(a, b)
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::eye(dim)
}

/// Conjugate transpose (returned in standard layout).
pub fn adjoint(m: &CMatrix) -> CMatrix {
    let (rows, cols) = m.dim();
    CMatrix::from_shape_fn((cols, rows), |(i, j)| m[(j, i)].conj())
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diag().sum()
}

pub fn frobenius_norm(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Dense matrix-matrix product.
///
/// Hand-rolled ikj loop: ndarray's generic fallback for `Complex64` is not
/// vectorized well enough for the integrator inner loops.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (m, ka) = a.dim();
    let (kb, n) = b.dim();
    assert_eq!(ka, kb, "matmul: inner dimensions differ");
    let mut c = CMatrix::zeros((m, n));
    let a_std = a.as_standard_layout();
    let b_std = b.as_standard_layout();
    let a_s = a_std.as_slice().expect("standard layout");
    let b_s = b_std.as_slice().expect("standard layout");
    let c_s = c.as_slice_mut().unwrap();
    for i in 0..m {
        let crow = &mut c_s[i * n..(i + 1) * n];
        for k in 0..ka {
            let aik = a_s[i * ka + k];
            if aik == ZERO {
                continue;
            }
            let brow = &b_s[k * n..(k + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
    c
}

/// Matrix-vector product (`matrix_apply`).
pub fn matvec(m: &CMatrix, v: &CVector) -> CVector {
    let (rows, cols) = m.dim();
    assert_eq!(cols, v.len(), "matvec: dimensions differ");
    let m_std = m.as_standard_layout();
    let v_std = v.as_standard_layout();
    let m_s = m_std.as_slice().expect("standard layout");
    let v_s = v_std.as_slice().expect("standard layout");
    let mut out = CVector::zeros(rows);
    let o_s = out.as_slice_mut().unwrap();
    for i in 0..rows {
        let row = &m_s[i * cols..(i + 1) * cols];
        let mut acc = ZERO;
        for (mv, vv) in row.iter().zip(v_s) {
            acc += mv * vv;
        }
        o_s[i] = acc;
    }
    out
}

/// Matrix-vector product into a caller-provided buffer; returns the squared
/// norm of the result. This is the trajectory stepper's hot path.
pub fn matvec_into(m: &CMatrix, v: &[Complex64], out: &mut [Complex64]) -> f64 {
    let (rows, cols) = m.dim();
    debug_assert_eq!(cols, v.len());
    debug_assert_eq!(rows, out.len());
    let m_s = m.as_slice().expect("matvec_into: matrix not contiguous");
    let mut norm_sqr = 0.0;
    for (i, slot) in out.iter_mut().enumerate() {
        let row = &m_s[i * cols..(i + 1) * cols];
        let mut re = 0.0;
        let mut im = 0.0;
        for (mv, vv) in row.iter().zip(v) {
            re += mv.re * vv.re - mv.im * vv.im;
            im += mv.re * vv.im + mv.im * vv.re;
        }
        *slot = Complex64::new(re, im);
        norm_sqr += re * re + im * im;
    }
    norm_sqr
}

pub fn vector_norm(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn inner(a: &CVector, b: &CVector) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// |v><v| outer product.
pub fn outer(v: &CVector) -> CMatrix {
    let n = v.len();
    CMatrix::from_shape_fn((n, n), |(i, j)| v[i] * v[j].conj())
}

/// Row-major vectorization of a square matrix.
pub fn vectorize(m: &CMatrix) -> CVector {
    CVector::from_iter(m.iter().cloned())
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &CVector, dim: usize) -> CMatrix {
    assert_eq!(v.len(), dim * dim, "unvectorize: length is not dim^2");
    CMatrix::from_shape_vec((dim, dim), v.to_vec()).unwrap()
}

fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

const HERMITIAN_TOL: f64 = 1e-10;
const MAX_JACOBI_SWEEPS: usize = 100;

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns, so that `m . v_k = lambda_k . v_k`.
pub fn hermitian_eig(m: &CMatrix) -> Result<(Vec<f64>, CMatrix), NumericsError> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(NumericsError::DimensionMismatch(format!(
            "hermitian_eig expects a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    let defect = hermiticity_defect(m);
    if defect > HERMITIAN_TOL {
        return Err(NumericsError::NotHermitian {
            defect,
            tolerance: HERMITIAN_TOL,
        });
    }

    // Work on the explicitly Hermitized copy so roundoff asymmetry cannot bias
    // the rotations.
    let mut a = CMatrix::from_shape_fn((n, n), |(i, j)| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
    let mut v = identity(n);
    let scale = frobenius_norm(&a).max(1.0);
    let tol = 1e-14 * scale;

    let mut converged = false;
    for _sweep in 0..MAX_JACOBI_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let beta = a[(p, q)];
                if beta.norm() <= tol / (n as f64) {
                    continue;
                }
                let (c, s, phase) = jacobi_rotation(a[(p, p)].re, a[(q, q)].re, beta);
                apply_rotation(&mut a, p, q, c, s, phase);
                apply_rotation_right(&mut v, p, q, c, s, phase);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > tol {
        return Err(NumericsError::NoConvergence {
            sweeps: MAX_JACOBI_SWEEPS,
            off: off_diagonal_norm(&a),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = CMatrix::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, dst)] = v[(r, src)];
        }
    }
    Ok((eigenvalues, vectors))
}

fn off_diagonal_norm(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

/// Rotation parameters that annihilate the (p,q) entry of the Hermitian block
/// [[alpha, beta], [conj(beta), gamma]].
fn jacobi_rotation(alpha: f64, gamma: f64, beta: Complex64) -> (f64, f64, Complex64) {
    let abs_b = beta.norm();
    let phase = beta.conj() / abs_b; // e^{-i arg beta}
    let tau = (gamma - alpha) / (2.0 * abs_b);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    (c, t * c, phase)
}

/// A <- U^dag A U for the (p,q) plane rotation
/// U[p,p]=c, U[p,q]=s, U[q,p]=-s*phase, U[q,q]=c*phase.
fn apply_rotation(a: &mut CMatrix, p: usize, q: usize, c: f64, s: f64, phase: Complex64) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * c - akq * (s * phase);
        a[(k, q)] = akp * s + akq * (c * phase);
    }
    let phase_c = phase.conj();
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = apk * c - aqk * (s * phase_c);
        a[(q, k)] = apk * s + aqk * (c * phase_c);
    }
}

/// V <- V U (column update only; used to accumulate eigenvectors).
fn apply_rotation_right(v: &mut CMatrix, p: usize, q: usize, c: f64, s: f64, phase: Complex64) {
    let n = v.nrows();
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * c - vkq * (s * phase);
        v[(k, q)] = vkp * s + vkq * (c * phase);
    }
}

/// Solve `a x = b` by LU with partial pivoting.
pub fn linear_solve(a: &CMatrix, b: &CVector) -> Result<CVector, NumericsError> {
    let n = a.nrows();
    if n != a.ncols() || n != b.len() {
        return Err(NumericsError::DimensionMismatch(format!(
            "linear_solve: matrix {}x{}, rhs {}",
            n,
            a.ncols(),
            b.len()
        )));
    }
    let mut lu: Vec<Complex64> = a.iter().cloned().collect();
    let mut x: Vec<Complex64> = b.to_vec();
    let scale = lu.iter().map(|z| z.norm()).fold(0.0f64, f64::max).max(1.0);
    let pivot_floor = scale * 1e-300_f64.max(f64::EPSILON * 1e-2);

    for col in 0..n {
        let mut best = col;
        let mut best_mag = lu[col * n + col].norm();
        for row in (col + 1)..n {
            let mag = lu[row * n + col].norm();
            if mag > best_mag {
                best = row;
                best_mag = mag;
            }
        }
        if best_mag <= pivot_floor {
            return Err(NumericsError::Singular { pivot: best_mag });
        }
        if best != col {
            for k in 0..n {
                lu.swap(col * n + k, best * n + k);
            }
            x.swap(col, best);
        }
        let pivot = lu[col * n + col];
        let x_col = x[col];
        for row in (col + 1)..n {
            let factor = lu[row * n + col] / pivot;
            lu[row * n + col] = factor;
            if factor != ZERO {
                for k in (col + 1)..n {
                    let v = lu[col * n + k];
                    lu[row * n + k] -= factor * v;
                }
                x[row] -= factor * x_col;
            }
        }
    }
    for row in (0..n).rev() {
        let mut acc = x[row];
        for k in (row + 1)..n {
            acc -= lu[row * n + k] * x[k];
        }
        x[row] = acc / lu[row * n + row];
    }
    Ok(CVector::from_vec(x))
}

/// Matrix exponential by scaling and squaring with a Taylor series.
///
/// Accurate to machine precision for the well-scaled generators used here
/// (single-step propagators with norm well below one after scaling).
pub fn expm(m: &CMatrix) -> CMatrix {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "expm expects a square matrix");
    let norm = m
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m.mapv(|z| z / 2f64.powi(squarings as i32));

    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=60 {
        term = matmul(&term, &scaled);
        term.mapv_inplace(|z| z / k as f64);
        result = result + &term;
        if frobenius_norm(&term) < 1e-18 * frobenius_norm(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    result
}

/// Square root of a positive semidefinite Hermitian matrix.
///
/// Eigenvalues in `[-1e-9, 0)` are clamped to zero (numerical positivity
/// slack); anything more negative is a caller bug and panics in debug builds.
pub fn sqrtm_psd(m: &CMatrix) -> Result<CMatrix, NumericsError> {
    let (vals, vecs) = hermitian_eig(m)?;
    debug_assert!(
        vals.iter().all(|&l| l > -1e-6),
        "sqrtm_psd: eigenvalue {:?} far below zero",
        vals.iter().cloned().fold(f64::INFINITY, f64::min)
    );
    let n = m.nrows();
    let mut scaled = vecs.clone();
    for (j, &l) in vals.iter().enumerate() {
        let root = l.max(0.0).sqrt();
        for i in 0..n {
            scaled[(i, j)] *= root;
        }
    }
    Ok(matmul(&scaled, &adjoint(&vecs)))
}
