//! Dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::fill_standard_normal;

/// Relative tolerance below which slightly negative eigenvalues are treated
/// as roundoff and clamped to zero.
pub const PSD_CLAMP_TOL: f64 = 1e-10;

/// `|1 - q_i q_j|` below this is replaced by the `T`-term limit in finite
/// geometric sums.
pub const GEOMETRIC_LIMIT_TOL: f64 = 1e-12;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Column `k` of `basis` pairs with `values[k]`.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub basis: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl Eigensystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Reassembles `V diag(values) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = &self.basis * DMatrix::from_diagonal(&self.values);
        scaled * self.basis.transpose()
    }

    /// Rotates a vector from the original coordinates into the eigenbasis.
    pub fn rotate_in(&self, v: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(v)
    }

    /// Rotates a vector from the eigenbasis back to the original coordinates.
    pub fn rotate_out(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.basis * v
    }

    /// Maps a matrix expressed in the eigenbasis back to original coordinates.
    pub fn conjugate_out(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        &self.basis * m * self.basis.transpose()
    }
}

/// Symmetric eigendecomposition, sorted descending. The input is
/// symmetrized first so tiny asymmetries from accumulation do not leak
/// into the solver.
pub fn sym_eigen(m: &DMatrix<f64>) -> Eigensystem {
    assert!(m.is_square(), "sym_eigen requires a square matrix");
    let n = m.nrows();
    if n == 0 {
        return Eigensystem {
            basis: DMatrix::zeros(0, 0),
            values: DVector::zeros(0),
        };
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut basis = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        basis.set_column(dst, &eig.eigenvectors.column(src));
    }
    Eigensystem { basis, values }
}

/// Eigenvalues only, sorted descending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let sym = (m + m.transpose()) * 0.5;
    let mut values: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

/// Clamps roundoff-negative eigenvalues (sorted descending) to zero.
///
/// Values below `-tol * max(lambda_1, 0)` are a genuine loss of
/// semi-definiteness and are reported as [`Error::Indefinite`].
pub fn clamp_psd(values: &mut [f64], tol: f64, what: &str) -> Result<()> {
    let top = values.iter().copied().fold(0.0_f64, f64::max);
    let floor = -tol * top;
    for v in values.iter_mut() {
        if !v.is_finite() {
            return Err(Error::Indefinite(format!("{what}: non-finite eigenvalue")));
        }
        if *v < 0.0 {
            if *v < floor {
                return Err(Error::Indefinite(format!(
                    "{what}: eigenvalue {v:e} below -{tol:e} * {top:e}"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Matrix with `cols` orthonormal columns in `R^rows`, drawn as the Q factor
/// of a Gaussian matrix. Column signs are fixed so that `R` has a positive
/// diagonal, which makes the factor Haar distributed.
pub fn random_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(cols <= rows, "cannot draw {cols} orthonormal columns in R^{rows}");
    let mut raw = vec![0.0; rows * cols];
    fill_standard_normal(rng, &mut raw);
    let g = DMatrix::from_vec(rows, cols, raw);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `sum_{t < steps} x^t`, given `x` and a cancellation-free value of `1 - x`.
///
/// When `|1 - x|` is below [`GEOMETRIC_LIMIT_TOL`] the `steps`-term limit is
/// returned.
pub fn geometric_sum(x: f64, one_minus_x: f64, steps: usize) -> f64 {
    match steps {
        0 => return 0.0,
        1 => return 1.0,
        _ => {}
    }
    let t = steps as f64;
    if one_minus_x.abs() < GEOMETRIC_LIMIT_TOL {
        return t;
    }
    if x > 0.5 {
        // x^T = exp(T ln x) with ln x taken from 1 - x to keep precision
        // near x = 1.
        -(t * (-one_minus_x).ln_1p()).exp_m1() / one_minus_x
    } else if x == 0.0 {
        1.0
    } else {
        (1.0 - x.powf(t)) / one_minus_x
    }
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// `‖a - b‖_F / ‖b‖_F`, or the absolute gap when `b` vanishes.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let gap = (a - b).norm();
    let scale = b.norm();
    if scale > 0.0 {
        gap / scale
    } else {
        gap
    }
}

/// `X Xᵀ / n` for a sample-by-feature matrix.
pub fn correlation_gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows().max(1) as f64;
    (x * x.transpose()) / n
}
