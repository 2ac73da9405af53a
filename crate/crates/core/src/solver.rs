//! Closed-form least squares on the feature matrix: the minimum-norm
//! interpolant, numerical rank, the expected-loss law for gaussian labels,
//! and the under-parametrized prediction with caller-supplied constants.
//!
//! Rank-deficient systems use the pseudo-inverse, i.e. the minimum-norm
//! minimizer; for full row rank this reduces to w* = X̄ᵀ(X̄X̄ᵀ)⁻¹y and the
//! residual vanishes. The reported training loss is always (1/m)·Σ(ŷ−y)².

use nalgebra::{DMatrix, DVector};

use crate::features::{self, FeatureMatrix, GramScale};
use crate::linalg;
use crate::network::WeightStack;
use crate::{GaluError, Result, EIG_REL_TOL};

/// Outcome of a minimum-norm solve.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub weights: WeightStack,
    /// (1/m)·‖X̄w* − y‖².
    pub train_mse: f64,
    /// Numerical rank of X̄ at the shared spectral tolerance.
    pub rank: usize,
    /// X̄w* − y; lies in the orthogonal complement of the column space.
    pub residual: DVector<f64>,
}

/// Minimum-Euclidean-norm minimizer of ‖X̄w − y‖².
///
/// Works through the smaller of the two Gram matrices: X̄X̄ᵀ when m ≤ dk
/// (with w* = X̄ᵀ(X̄X̄ᵀ)⁺y), else X̄ᵀX̄. Both sides use the eigendecomposition
/// with the shared relative tolerance, so the rank reported here matches the
/// spectral module's conventions.
pub fn min_norm_solve(features: &FeatureMatrix, y: &DVector<f64>) -> Result<SolveResult> {
    let m = features.rows();
    if y.len() != m {
        return Err(GaluError::DimensionMismatch {
            context: "min norm solve labels",
            expected: m,
            found: y.len(),
        });
    }
    let dk = features.dim() * features.width();
    let xbar = features.matrix();
    let (w, rank) = if m <= dk {
        let h = features::gram(features, GramScale::Raw);
        let eig = linalg::sym_eigen(&h);
        let a = eig.pseudo_solve(y);
        (xbar.transpose() * a, eig.numerical_rank())
    } else {
        let g = linalg::gram_ata(xbar);
        let b = xbar.transpose() * y;
        let eig = linalg::sym_eigen(&g);
        (eig.pseudo_solve(&b), eig.numerical_rank())
    };
    let residual = xbar * &w - y;
    let train_mse = residual.norm_squared() / m as f64;
    Ok(SolveResult {
        weights: WeightStack::new(w, features.dim())?,
        train_mse,
        rank,
        residual,
    })
}

/// The expected training loss for standard gaussian labels on a fixed
/// feature matrix: 1 − rank(X̄)/m.
pub fn expected_loss_law(features: &FeatureMatrix) -> f64 {
    let sv = features.matrix().clone().singular_values();
    let max = sv.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = EIG_REL_TOL.sqrt() * max;
    let rank = sv.iter().filter(|&&s| s > cutoff).count();
    1.0 - rank as f64 / features.rows() as f64
}

/// The under-parametrized loss prediction with caller-supplied constants:
/// m′ = ⌊kd·c₁²/(64π) / log(c₂d²/δ)⌋ and the bound 1 − m′/m.
#[derive(Clone, Copy, Debug)]
pub struct UnderparamPrediction {
    pub m_prime: usize,
    pub loss_bound: f64,
    /// Whether d ≤ m′ ≤ c₂d² holds, the prediction's validity window.
    pub in_range: bool,
    /// Whether the bound came out below zero (m′ > m), i.e. says nothing.
    pub vacuous: bool,
}

pub fn underparam_prediction(
    m: usize,
    d: usize,
    k: usize,
    delta: f64,
    c1: f64,
    c2: f64,
) -> Result<UnderparamPrediction> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(GaluError::InvalidArgument(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if c1 <= 0.0 || c2 <= 0.0 {
        return Err(GaluError::InvalidArgument(
            "constants c1, c2 must be positive".into(),
        ));
    }
    let log_term = (c2 * (d * d) as f64 / delta).ln();
    if log_term <= 0.0 {
        return Err(GaluError::InvalidArgument(
            "c2 d^2 / delta must exceed 1 for the log to be positive".into(),
        ));
    }
    let m_prime_f =
        ((k * d) as f64 * c1 * c1 / (64.0 * std::f64::consts::PI) / log_term).floor();
    if m_prime_f < 1.0 {
        return Err(GaluError::InvalidArgument(
            "constants make the bound vacuous: m' is not positive".into(),
        ));
    }
    let m_prime = m_prime_f as usize;
    let loss_bound = 1.0 - m_prime as f64 / m as f64;
    Ok(UnderparamPrediction {
        m_prime,
        loss_bound,
        in_range: d <= m_prime && (m_prime as f64) <= c2 * (d * d) as f64,
        vacuous: loss_bound < 0.0,
    })
}

/// Least-squares mse from the dk×dk Gram G = X̄ᵀX̄ and rhs b = X̄ᵀy, without
/// materializing the feature matrix.
///
/// Solves by blocked Cholesky, escalating through a relative jitter ladder
/// when the Gram is on the edge of positive definiteness, and falling back
/// to the eigendecomposition pseudo-solve. The value returned is the exact
/// residual identity ‖X̄w − y‖² = wᵀGw − 2wᵀb + ‖y‖² of the solved w, so it
/// is an honest achieved loss whichever path produced w.
pub fn mse_from_block_gram(
    g: &DMatrix<f64>,
    b: &DVector<f64>,
    y_norm_sq: f64,
    m: usize,
) -> f64 {
    let w = solve_spd_with_fallback(g, b);
    let quad = w.dot(&(g * &w));
    ((y_norm_sq - 2.0 * w.dot(b) + quad) / m as f64).max(0.0)
}

/// Interpolation mse from the m×m Gram H = X̄X̄ᵀ: solves Ha = y and returns
/// (1/m)‖Ha − y‖², the residual of the induced w = X̄ᵀa.
pub fn mse_from_row_gram(h: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let a = solve_spd_with_fallback(h, y);
    (h * a - y).norm_squared() / y.len() as f64
}

fn solve_spd_with_fallback(g: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if let Some(l) = linalg::blocked_cholesky(g) {
        return linalg::cholesky_solve(&l, b);
    }
    let n = g.nrows();
    let mean_diag = g.diagonal().iter().sum::<f64>() / n as f64;
    for rel in [1e-12, 1e-10, 1e-8] {
        let mut jittered = g.clone();
        for i in 0..n {
            jittered[(i, i)] += rel * mean_diag.max(1e-300);
        }
        if let Some(l) = linalg::blocked_cholesky(&jittered) {
            return linalg::cholesky_solve(&l, b);
        }
    }
    linalg::sym_eigen(g).pseudo_solve(b)
}
