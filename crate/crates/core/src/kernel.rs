//! The closed-form kernel, its Gram matrix, RKHS norms, and the finite-width
//! vs infinite-width concentration machinery.
//!
//! Averaging the gated feature inner products over gaussian gates gives the
//! arc-cosine kernel
//!   κ(x, y) = (1/2 − θ(x, y) / 2π) ⟨x, y⟩,
//! with θ the angle between x and y: the gates enter only through the
//! probability that both points fall on the open side, which depends on the
//! directions alone, while the magnitudes enter through ⟨x, y⟩. Cosines are
//! clamped to [−1, 1] before `acos` to absorb rounding, and κ is 0 whenever
//! either argument is the zero vector.

use nalgebra::{DMatrix, DVector};

use crate::features::{self, GramScale};
use crate::linalg::{self, SymEigen};
use crate::network::{GateBank, GateSource, LabeledSet};
use crate::{GaluError, Result};

/// The kernel Gram matrix H∞ with the row norms it was built from.
#[derive(Clone, Debug)]
pub struct KernelGram {
    matrix: DMatrix<f64>,
    source_norms: DVector<f64>,
}

impl KernelGram {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn source_norms(&self) -> &DVector<f64> {
        &self.source_norms
    }

    pub fn eigen(&self) -> SymEigen {
        linalg::sym_eigen(&self.matrix)
    }
}

/// The kernel κ(x, y) = (1/2 − arccos(cos θ)/2π) · ⟨x, y⟩.
pub fn kappa(x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(GaluError::DimensionMismatch {
            context: "kappa",
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(GaluError::NonFinite("kappa"));
    }
    let nx = x.norm();
    let ny = y.norm();
    if nx == 0.0 || ny == 0.0 {
        return Ok(0.0);
    }
    let dot = x.dot(y);
    let cos = (dot / (nx * ny)).clamp(-1.0, 1.0);
    let angle_weight = 0.5 - cos.acos() / (2.0 * std::f64::consts::PI);
    Ok(angle_weight * dot)
}

/// One-bank Monte Carlo estimate of κ: draws a gaussian gate bank of width k
/// and returns the inner product of the two normalized embeddings.
pub fn mc_kernel_estimate(
    x: &DVector<f64>,
    y: &DVector<f64>,
    k: usize,
    seed: u64,
) -> Result<f64> {
    if x.len() != y.len() {
        return Err(GaluError::DimensionMismatch {
            context: "mc kernel estimate",
            expected: x.len(),
            found: y.len(),
        });
    }
    let gates = GateBank::generate(x.len(), k, GateSource::Gaussian, seed);
    let phi_x = features::embed_point(x, &gates, true)?;
    let phi_y = features::embed_point(y, &gates, true)?;
    Ok(phi_x.dot(&phi_y))
}

/// The m×m kernel Gram H∞ of a sample. Off-diagonal entries are κ(xᵢ, xⱼ)
/// mirrored exactly; the diagonal uses the closed form ‖xᵢ‖²/2.
pub fn gram_infinity(data: &LabeledSet) -> Result<KernelGram> {
    let m = data.len();
    let mut h = DMatrix::zeros(m, m);
    let norms = DVector::from_fn(m, |i, _| data.xs().row(i).norm());
    for i in 0..m {
        h[(i, i)] = 0.5 * norms[i] * norms[i];
        for j in i + 1..m {
            let v = kappa(&data.example(i), &data.example(j))?;
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(KernelGram {
        matrix: h,
        source_norms: norms,
    })
}

/// Squared RKHS norm of the kernel interpolant of the labels: yᵀ(H∞)⁻¹y.
/// Errors when the Gram is numerically singular.
pub fn rkhs_norm_sq(data: &LabeledSet) -> Result<f64> {
    let gram = gram_infinity(data)?;
    let eig = gram.eigen();
    let tol = eig.rank_cutoff();
    if eig.min() <= tol {
        return Err(GaluError::SingularGram {
            min_eig: eig.min(),
            tol,
        });
    }
    let y = data.ys();
    Ok(y.dot(&eig.pseudo_solve(y)))
}

/// Result of the finite-width vs kernel norm comparison.
#[derive(Clone, Copy, Debug)]
pub struct NormTransfer {
    /// ‖w*‖² of the normalized-feature interpolant: yᵀ((1/k)X̄X̄ᵀ)⁻¹y.
    pub w_norm_sq: f64,
    /// yᵀ(H∞)⁻¹y.
    pub kernel_norm_sq: f64,
    /// |w_norm_sq − kernel_norm_sq|.
    pub gap: f64,
}

/// Draws a gaussian bank of width k and compares the squared norm of the
/// minimum-norm interpolant against the kernel RKHS norm of the same labels.
pub fn norm_transfer_check(data: &LabeledSet, k: usize, seed: u64) -> Result<NormTransfer> {
    let kernel_norm_sq = rkhs_norm_sq(data)?;
    let gates = GateBank::generate(data.dim(), k, GateSource::Gaussian, seed);
    let data_gram = linalg::gram_aat(data.xs());
    let masks = features::gate_masks(data, &gates);
    let h = features::gram_from_masks(&data_gram, &masks, GramScale::OneOverK);
    let eig = linalg::sym_eigen(&h);
    let tol = eig.rank_cutoff();
    if eig.min() <= tol {
        return Err(GaluError::SingularGram {
            min_eig: eig.min(),
            tol,
        });
    }
    let y = data.ys();
    let w_norm_sq = y.dot(&eig.pseudo_solve(y));
    Ok(NormTransfer {
        w_norm_sq,
        kernel_norm_sq,
        gap: (w_norm_sq - kernel_norm_sq).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derive_seed;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(d: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    #[test]
    fn kappa_special_values_exact() {
        let x = unit(3, 0);
        assert_eq!(kappa(&x, &x).unwrap(), 0.5);
        assert_eq!(kappa(&x, &(-x.clone())).unwrap(), 0.0);
        assert_eq!(kappa(&x, &unit(3, 1)).unwrap(), 0.0);
        // unit vectors at 60 degrees: κ = 1/6
        let y = DVector::from_row_slice(&[0.5, 3f64.sqrt() / 2.0, 0.0]);
        assert_relative_eq!(kappa(&x, &y).unwrap(), 1.0 / 6.0, epsilon = 1e-12);
        // zero vector short-circuits
        assert_eq!(kappa(&x, &DVector::zeros(3)).unwrap(), 0.0);
    }

    #[test]
    fn kappa_rejects_non_finite() {
        let x = unit(2, 0);
        let bad = DVector::from_row_slice(&[f64::NAN, 0.0]);
        assert!(matches!(kappa(&x, &bad), Err(GaluError::NonFinite(_))));
    }

    #[test]
    fn mc_estimate_on_identical_unit_points_is_open_fraction() {
        let x = unit(4, 2);
        for t in 0..20 {
            let est = mc_kernel_estimate(&x, &x, 37, derive_seed(9, t)).unwrap();
            assert!((0.0..=1.0).contains(&est));
            // multiples of 1/37 up to rounding
            let scaled = est * 37.0;
            assert_relative_eq!(scaled, scaled.round(), epsilon = 1e-9);
        }
    }

    #[test]
    fn mc_estimate_orthogonal_points_exactly_zero() {
        let x = unit(5, 0);
        let y = unit(5, 3);
        for t in 0..10 {
            assert_eq!(mc_kernel_estimate(&x, &y, 64, derive_seed(17, t)).unwrap(), 0.0);
        }
    }

    #[test]
    fn mc_estimate_concentrates_at_hoeffding_rate() {
        // 500 seeded trials at k = 1000: |estimate − κ| ≤ 3/√k in ≥ 99%
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let k = 1000;
        let tol = 3.0 / (k as f64).sqrt();
        let mut within = 0;
        let trials = 500;
        for t in 0..trials {
            let d = 6;
            let mut x = DVector::from_fn(d, |_, _| rng.random::<f64>() - 0.5);
            let mut y = DVector::from_fn(d, |_, _| rng.random::<f64>() - 0.5);
            x /= x.norm();
            y /= y.norm();
            let exact = kappa(&x, &y).unwrap();
            let est = mc_kernel_estimate(&x, &y, k, derive_seed(24, t)).unwrap();
            if (est - exact).abs() <= tol {
                within += 1;
            }
        }
        assert!(
            within as f64 >= 0.99 * trials as f64,
            "only {within}/{trials} within tolerance"
        );
    }

    #[test]
    fn gram_infinity_small_cases() {
        let single = LabeledSet::new_unit_rows(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let g = gram_infinity(&single).unwrap();
        assert_eq!(g.matrix()[(0, 0)], 0.5);

        let antipodal = LabeledSet::new_unit_rows(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]),
            DVector::from_row_slice(&[1.0, -1.0]),
        )
        .unwrap();
        let g = gram_infinity(&antipodal).unwrap();
        assert_eq!(g.matrix()[(0, 0)], 0.5);
        assert_eq!(g.matrix()[(1, 1)], 0.5);
        assert_eq!(g.matrix()[(0, 1)], 0.0);
        assert_eq!(g.matrix()[(1, 0)], 0.0);
    }

    #[test]
    fn gram_infinity_matches_monte_carlo_average() {
        let data = crate::data::gen_sphere(4, 3, 71);
        let (est, stderr) = crate::spectral::lambda_mc(&data, 16, 600, 72).unwrap();
        let exact = gram_infinity(&data).unwrap().eigen().min();
        assert!(
            (est - exact).abs() <= 3.0 * stderr + 1e-9,
            "mc {est} vs exact {exact} (stderr {stderr})"
        );
    }

    #[test]
    fn gram_infinity_is_psd_with_half_norm_diagonal() {
        let data = crate::data::gen_gaussian(6, 4, 91);
        let g = gram_infinity(&data).unwrap();
        let eig = g.eigen();
        assert!(eig.min() >= -1e-9 * eig.max().abs());
        for i in 0..6 {
            let n = data.example(i).norm();
            assert_eq!(g.matrix()[(i, i)], 0.5 * n * n);
            assert_eq!(g.source_norms()[i], n);
        }
        // exact symmetry by construction
        assert_eq!(g.matrix(), &g.matrix().transpose());
    }

    #[test]
    fn rkhs_norm_small_cases_and_oracle() {
        let single = LabeledSet::new_unit_rows(
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert_relative_eq!(rkhs_norm_sq(&single).unwrap(), 2.0, epsilon = 1e-12);

        let zero_labels = single.with_labels(DVector::zeros(1)).unwrap();
        assert_eq!(rkhs_norm_sq(&zero_labels).unwrap(), 0.0);

        // quadratic-form oracle: solve H c = y, compare cᵀHc
        let data = crate::data::gen_sphere(4, 3, 101);
        let h = gram_infinity(&data).unwrap();
        let eig = h.eigen();
        let c = eig.pseudo_solve(data.ys());
        let oracle = c.dot(&(h.matrix() * &c));
        assert_relative_eq!(rkhs_norm_sq(&data).unwrap(), oracle, max_relative = 1e-9);
    }

    #[test]
    fn rkhs_norm_reports_singular_gram() {
        let mut xs = DMatrix::zeros(2, 3);
        let row = nalgebra::RowDVector::from_row_slice(&[1.0, 0.0, 0.0]);
        xs.set_row(0, &row);
        xs.set_row(1, &row);
        let data = LabeledSet::new(xs, DVector::from_row_slice(&[1.0, 0.0])).unwrap();
        match rkhs_norm_sq(&data) {
            Err(GaluError::SingularGram { min_eig, .. }) => {
                assert!(min_eig.abs() < 1e-9);
            }
            other => panic!("expected singular gram, got {other:?}"),
        }
    }

    #[test]
    fn norm_transfer_zero_labels_all_zero() {
        let data = crate::data::gen_sphere(3, 3, 111);
        let data = data.with_labels(DVector::zeros(3)).unwrap();
        let nt = norm_transfer_check(&data, 64, 112).unwrap();
        assert_eq!(nt.w_norm_sq, 0.0);
        assert_eq!(nt.kernel_norm_sq, 0.0);
        assert_eq!(nt.gap, 0.0);
    }

    #[test]
    fn norm_transfer_single_point_tends_to_two() {
        let data = LabeledSet::new_unit_rows(
            DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let nt = norm_transfer_check(&data, 20_000, 113).unwrap();
        assert!(
            (nt.w_norm_sq - 2.0).abs() < 0.1,
            "w_norm_sq = {}",
            nt.w_norm_sq
        );
    }

    #[test]
    fn norm_transfer_gap_obeys_r2_bound_at_large_width() {
        // labels bounded by 1 so ‖y‖² ≤ m; at the r = 2 width the inverse
        // perturbation chain bounds the gap by m/λ(X)
        let data = {
            let base = crate::data::gen_sphere(4, 3, 121);
            let mut rng = ChaCha8Rng::seed_from_u64(122);
            let y = DVector::from_fn(4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            base.with_labels(y).unwrap()
        };
        let lambda = gram_infinity(&data).unwrap().eigen().min();
        assert!(lambda > 0.0);
        let x_norm = linalg::spectral_norm(data.xs());
        let r = 2.0f64;
        let delta = 0.05f64;
        let k = (32.0 * r * r * x_norm.powi(4) / (lambda * lambda)
            * (data.len() as f64 / delta).ln())
        .ceil() as usize;
        let nt = norm_transfer_check(&data, k, 123).unwrap();
        let bound = data.len() as f64 / lambda;
        assert!(
            nt.gap <= bound,
            "gap {} above m/lambda bound {bound} at k = {k}",
            nt.gap
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kappa_symmetric_and_self_value(
            xs in proptest::collection::vec(-3.0f64..3.0, 4),
            ys in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let x = DVector::from_vec(xs);
            let y = DVector::from_vec(ys);
            let a = kappa(&x, &y).unwrap();
            let b = kappa(&y, &x).unwrap();
            prop_assert_eq!(a, b);
            let self_val = kappa(&x, &x).unwrap();
            let expected = 0.5 * x.norm_squared();
            prop_assert!((self_val - expected).abs() <= 1e-8 * expected.max(1e-12));
        }
    }
}
