//! Dense linear-algebra helpers shared by the solver and diagnostics.
//!
//! Everything here is deterministic: fixed blocking, fixed summation order,
//! no threading. The blocked Cholesky exists because the factorizations on
//! the experiment path reach n ≈ 4·10³ where an unblocked routine becomes
//! the bottleneck; it delegates the cubic work to matrix products.

use nalgebra::{DMatrix, DVector};

use crate::EIG_REL_TOL;

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    sv.iter().cloned().fold(0.0, f64::max)
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub struct SymEigen {
    /// Eigenvalues, ascending.
    pub values: DVector<f64>,
    /// Matching eigenvectors as columns.
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen(a: &DMatrix<f64>) -> SymEigen {
    let eig = a.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    SymEigen { values, vectors }
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Number of eigenvalues above the shared relative tolerance.
    pub fn numerical_rank(&self) -> usize {
        let cutoff = self.rank_cutoff();
        self.values.iter().filter(|&&v| v > cutoff).count()
    }

    pub fn rank_cutoff(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        EIG_REL_TOL * scale
    }

    /// `A⁺ b` through the eigenbasis, dropping components below tolerance.
    pub fn pseudo_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let cutoff = self.rank_cutoff();
        let mut coeffs = self.vectors.transpose() * b;
        for (i, c) in coeffs.iter_mut().enumerate() {
            let lam = self.values[i];
            *c = if lam > cutoff { *c / lam } else { 0.0 };
        }
        &self.vectors * coeffs
    }

    /// Projection of `b` onto the span of eigenvectors with eigenvalue above
    /// tolerance (the numerical column space of the decomposed matrix).
    pub fn project_range(&self, b: &DVector<f64>) -> DVector<f64> {
        let cutoff = self.rank_cutoff();
        let coeffs = self.vectors.transpose() * b;
        let kept = DVector::from_iterator(
            coeffs.len(),
            coeffs
                .iter()
                .enumerate()
                .map(|(i, &c)| if self.values[i] > cutoff { c } else { 0.0 }),
        );
        &self.vectors * kept
    }
}

/// In-place lower-triangular inverse by forward substitution.
fn lower_triangular_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for col in 0..n {
        inv[(col, col)] = 1.0 / l[(col, col)];
        for row in col + 1..n {
            let mut s = 0.0;
            for k in col..row {
                s += l[(row, k)] * inv[(k, col)];
            }
            inv[(row, col)] = -s / l[(row, row)];
        }
    }
    inv
}

/// Blocked Cholesky factorization `A = L Lᵀ` (lower triangular `L`).
///
/// Returns `None` when a diagonal pivot fails, i.e. the matrix is not
/// numerically positive definite. Panels of width `NB` are factored with the
/// unblocked routine and the trailing update runs as a matrix product, which
/// is where essentially all the time goes for large `n`.
pub fn blocked_cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    const NB: usize = 256;
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky needs a square matrix");
    let mut l = a.clone();
    let mut p = 0;
    while p < n {
        let b = NB.min(n - p);
        let a11: DMatrix<f64> = l.view((p, p), (b, b)).into();
        let chol = nalgebra::Cholesky::new(a11)?;
        let l11 = chol.l();
        l.view_mut((p, p), (b, b)).copy_from(&l11);
        let rest = n - p - b;
        if rest > 0 {
            let l11_inv_t = lower_triangular_inverse(&l11).transpose();
            let a21: DMatrix<f64> = l.view((p + b, p), (rest, b)).into();
            let l21 = &a21 * &l11_inv_t;
            l.view_mut((p + b, p), (rest, b)).copy_from(&l21);
            let update = &l21 * l21.transpose();
            let mut a22 = l.view_mut((p + b, p + b), (rest, rest));
            a22 -= &update;
        }
        p += b;
    }
    // zero out the strictly upper triangle left over from the input
    for col in 1..n {
        for row in 0..col {
            l[(row, col)] = 0.0;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the lower Cholesky factor.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// `A Aᵀ` computed through the fast product path and symmetrized exactly.
pub fn gram_aat(a: &DMatrix<f64>) -> DMatrix<f64> {
    let at = a.transpose();
    let mut g = a * &at;
    symmetrize(&mut g);
    g
}

/// `Aᵀ A` computed through the fast product path and symmetrized exactly.
pub fn gram_ata(a: &DMatrix<f64>) -> DMatrix<f64> {
    let at = a.transpose();
    let mut g = &at * a;
    symmetrize(&mut g);
    g
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}
