//! Spectral quantities driving the training guarantees: σ_min of the feature
//! matrix, the data-diversity constant λ(X), the Khatri-Rao lower bound, and
//! the matrix-Chernoff width prediction.
//!
//! λ(X) is the minimum eigenvalue of (1/k)·E[X̄X̄ᵀ] over gaussian gates. The
//! expectation is gate-width independent and equals the kernel Gram H∞
//! entrywise, so the exact path computes λ_min(H∞) and the Monte Carlo path
//! exists to validate that identity.

use nalgebra::DMatrix;

use crate::features::{self, FeatureMatrix, GramScale};
use crate::kernel;
use crate::linalg;
use crate::network::{GateBank, GateSource, LabeledSet};
use crate::{derive_seed, GaluError, Result};

/// The spectral quantities of one (data, gates) instance side by side.
#[derive(Clone, Debug)]
pub struct SpectralReport {
    pub sigma_min_xbar: f64,
    pub lambda_min_h: f64,
    pub lambda_x_exact: f64,
    pub lambda_x_mc: f64,
    pub lambda_x_mc_stderr: f64,
    pub khatri_rao_bound: f64,
    pub chernoff_k: usize,
}

/// λ(X) through the kernel Gram: λ_min(H∞).
pub fn lambda_exact(data: &LabeledSet) -> f64 {
    kernel::gram_infinity(data)
        .expect("finite data by construction")
        .eigen()
        .min()
}

/// Monte Carlo λ(X): averages (1/k)X̄X̄ᵀ over `trials` independent gate
/// banks, returns the minimum eigenvalue of the average and a jackknife
/// standard error. Per-trial banks are seeded by `derive_seed(seed, trial)`,
/// so the result does not depend on evaluation order.
pub fn lambda_mc(
    data: &LabeledSet,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if trials < 2 {
        return Err(GaluError::InvalidArgument(
            "lambda_mc needs at least 2 trials for a jackknife".into(),
        ));
    }
    let m = data.len();
    let data_gram = linalg::gram_aat(data.xs());
    let mut per_trial: Vec<DMatrix<f64>> = Vec::with_capacity(trials);
    for t in 0..trials {
        let gates = GateBank::generate(
            data.dim(),
            k,
            GateSource::Gaussian,
            derive_seed(seed, t as u64),
        );
        let masks = features::gate_masks(data, &gates);
        per_trial.push(features::gram_from_masks(&data_gram, &masks, GramScale::OneOverK));
    }
    let mut total = DMatrix::zeros(m, m);
    for g in &per_trial {
        total += g;
    }
    let mean = &total / trials as f64;
    let estimate = linalg::sym_eigen(&mean).min();

    // jackknife over leave-one-out means
    let n = trials as f64;
    let mut loo = Vec::with_capacity(trials);
    for g in &per_trial {
        let rest = (&total - g) / (n - 1.0);
        loo.push(linalg::sym_eigen(&rest).min());
    }
    let loo_mean = loo.iter().sum::<f64>() / n;
    let var = loo.iter().map(|v| (v - loo_mean).powi(2)).sum::<f64>() * (n - 1.0) / n;
    Ok((estimate, var.sqrt()))
}

/// Khatri-Rao lower bound on λ(X): forms the m×d² matrix with rows xᵢ ⊗ xᵢ
/// and returns σ_min² of it divided by 2π.
pub fn khatri_rao_bound(data: &LabeledSet) -> f64 {
    let m = data.len();
    let d = data.dim();
    let mut kr = DMatrix::zeros(m, d * d);
    for i in 0..m {
        for a in 0..d {
            for b in 0..d {
                kr[(i, a * d + b)] = data.xs()[(i, a)] * data.xs()[(i, b)];
            }
        }
    }
    let sv = kr.singular_values();
    let sigma_min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    sigma_min * sigma_min / (2.0 * std::f64::consts::PI)
}

/// The gate count for which the matrix-Chernoff argument guarantees
/// σ_min(X̄)² ≥ (k/2)·λ(X) with probability at least 1 − δ:
/// k = ⌈8‖X‖² log(m/δ) / λ(X)⌉.
///
/// Errors when λ(X) is not positive at working precision. The ceiling
/// absorbs a relative 1e-9 so that exact-arithmetic boundary cases (for
/// example log(m/δ) = 1) do not round up an extra unit.
pub fn chernoff_width(data: &LabeledSet, delta: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&delta) || delta <= 0.0 {
        return Err(GaluError::InvalidArgument(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let hinf = kernel::gram_infinity(data)?;
    let eig = hinf.eigen();
    let lambda = eig.min();
    if lambda <= eig.rank_cutoff().max(0.0) {
        return Err(GaluError::DataNotDiverse { lambda });
    }
    let x_norm = linalg::spectral_norm(data.xs());
    let raw = 8.0 * x_norm * x_norm * (data.len() as f64 / delta).ln() / lambda;
    let k = (raw - 1e-9 * raw.abs().max(1.0)).ceil();
    Ok(k.max(1.0) as usize)
}

/// Smallest singular value of the feature matrix via SVD.
pub fn sigma_min(features: &FeatureMatrix) -> f64 {
    let sv = features.matrix().clone().singular_values();
    sv.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Assembles the full report for one (data, gates) instance.
pub fn report(
    data: &LabeledSet,
    gates: &GateBank,
    mc_trials: usize,
    delta: f64,
    seed: u64,
) -> Result<SpectralReport> {
    let fm = features::build_feature_matrix(data, gates)?;
    let sigma = sigma_min(&fm);
    let h = features::gram(&fm, GramScale::Raw);
    let lambda_min_h = linalg::sym_eigen(&h).min();
    let lambda_x_exact = lambda_exact(data);
    let (lambda_x_mc, lambda_x_mc_stderr) = lambda_mc(data, gates.width(), mc_trials, seed)?;
    let khatri = khatri_rao_bound(data);
    let chernoff_k = chernoff_width(data, delta)?;
    Ok(SpectralReport {
        sigma_min_xbar: sigma,
        lambda_min_h,
        lambda_x_exact,
        lambda_x_mc,
        lambda_x_mc_stderr,
        khatri_rao_bound: khatri,
        chernoff_k,
    })
}
