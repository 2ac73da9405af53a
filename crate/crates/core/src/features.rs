//! The random feature embedding and the block feature matrix.
//!
//! For gates u₁…u_k the embedding sends x to the dk-vector whose j-th block
//! of length d is `1[uⱼᵀx ≥ 0] · x`. Stacking the embeddings of all m
//! examples gives the m×dk block matrix that turns GaLU training into linear
//! least squares. Optimization-path code works with the unnormalized matrix;
//! kernel-path code scales by 1/√k.
//!
//! Because every block of the feature matrix is the data matrix with some
//! rows zeroed, its Gram matrices have mask structure:
//!   X̄ X̄ᵀ = (X Xᵀ) ⊙ (M Mᵀ)    with M the m×k matrix of gate indicators,
//! and the dk×dk Gram is assembled per gate pair from the rows active in
//! both. The mask-based routines below exploit this; each is cross-checked
//! in the tests against the dense definition.

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::network::{gate_open, GateBank, LabeledSet};
use crate::{GaluError, Result};

/// Default cap on a single dense feature-matrix allocation: 4 GiB.
pub const DEFAULT_BUDGET_BYTES: u64 = 4 << 30;

/// The m×dk block feature matrix.
#[derive(Clone, Debug)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    dim: usize,
    width: usize,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    /// Block width d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of gate blocks k.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Column block j (an m×d view) as an owned matrix.
    pub fn block(&self, j: usize) -> DMatrix<f64> {
        self.data.view((0, j * self.dim), (self.rows(), self.dim)).into()
    }
}

/// Scaling applied to a Gram matrix of the feature matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GramScale {
    Raw,
    OneOverK,
}

/// Embeds one point: block j is `1[uⱼᵀx ≥ 0] · x`, scaled by 1/√k when
/// `normalized`.
pub fn embed_point(x: &DVector<f64>, gates: &GateBank, normalized: bool) -> Result<DVector<f64>> {
    if x.len() != gates.dim() {
        return Err(GaluError::DimensionMismatch {
            context: "embed point",
            expected: gates.dim(),
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GaluError::NonFinite("embed point"));
    }
    let d = gates.dim();
    let k = gates.width();
    let scale = if normalized { 1.0 / (k as f64).sqrt() } else { 1.0 };
    let mut out = DVector::zeros(d * k);
    for j in 0..k {
        if gate_open(gates.gates().column(j).dot(x)) {
            for i in 0..d {
                out[j * d + i] = scale * x[i];
            }
        }
    }
    Ok(out)
}

/// Builds the unnormalized m×dk feature matrix under the default memory
/// budget.
pub fn build_feature_matrix(data: &LabeledSet, gates: &GateBank) -> Result<FeatureMatrix> {
    build_feature_matrix_with_budget(data, gates, DEFAULT_BUDGET_BYTES)
}

/// As [`build_feature_matrix`], with an explicit budget in bytes. Exceeding
/// the budget is an error rather than an attempted allocation.
pub fn build_feature_matrix_with_budget(
    data: &LabeledSet,
    gates: &GateBank,
    budget_bytes: u64,
) -> Result<FeatureMatrix> {
    if data.dim() != gates.dim() {
        return Err(GaluError::DimensionMismatch {
            context: "feature matrix",
            expected: data.dim(),
            found: gates.dim(),
        });
    }
    let m = data.len() as u64;
    let d = data.dim() as u64;
    let k = gates.width() as u64;
    let required = m
        .saturating_mul(d)
        .saturating_mul(k)
        .saturating_mul(std::mem::size_of::<f64>() as u64);
    if required > budget_bytes {
        return Err(GaluError::CapacityExceeded {
            required,
            budget: budget_bytes,
        });
    }

    let m = data.len();
    let d = data.dim();
    let k = gates.width();
    let masks = gate_masks(data, gates);
    let mut out = DMatrix::zeros(m, d * k);
    for j in 0..k {
        for c in 0..d {
            for r in 0..m {
                if masks[(r, j)] != 0.0 {
                    out[(r, j * d + c)] = data.xs()[(r, c)];
                }
            }
        }
    }
    Ok(FeatureMatrix {
        data: out,
        dim: d,
        width: k,
    })
}

/// Gram matrix of the feature matrix: X̄X̄ᵀ, divided by k under
/// [`GramScale::OneOverK`]. Symmetric positive semi-definite.
pub fn gram(features: &FeatureMatrix, scale: GramScale) -> DMatrix<f64> {
    let mut g = linalg::gram_aat(features.matrix());
    if scale == GramScale::OneOverK {
        g.scale_mut(1.0 / features.width() as f64);
    }
    g
}

/// The m×k matrix of gate indicators: entry (i, j) is 1 when gate j is open
/// on example i, else 0.
pub fn gate_masks(data: &LabeledSet, gates: &GateBank) -> DMatrix<f64> {
    let pre = data.xs() * gates.gates();
    pre.map(|t| if gate_open(t) { 1.0 } else { 0.0 })
}

/// X̄X̄ᵀ assembled from the data Gram and the gate masks without forming X̄:
/// entrywise (X Xᵀ) ⊙ (M Mᵀ), scaled by 1/k if requested.
pub fn gram_from_masks(
    data_gram: &DMatrix<f64>,
    masks: &DMatrix<f64>,
    scale: GramScale,
) -> DMatrix<f64> {
    let counts = linalg::gram_aat(masks);
    let s = match scale {
        GramScale::Raw => 1.0,
        GramScale::OneOverK => 1.0 / masks.ncols() as f64,
    };
    DMatrix::from_fn(data_gram.nrows(), data_gram.ncols(), |i, j| {
        s * data_gram[(i, j)] * counts[(i, j)]
    })
}

/// X̄ᵀX̄ (dk×dk) assembled per gate pair from the rows active in both gates,
/// without forming X̄. Exact same value as the dense product up to rounding.
pub fn block_gram_masked(data: &LabeledSet, gates: &GateBank) -> DMatrix<f64> {
    let m = data.len();
    let d = data.dim();
    let k = gates.width();
    let masks = gate_masks(data, gates);
    // row-major copy of the data so gathering example rows is contiguous
    let xt = data.xs().transpose(); // d×m, column c = example c
    let mut g = DMatrix::zeros(d * k, d * k);
    let mut gathered = DMatrix::<f64>::zeros(d, m);
    for j in 0..k {
        for jp in j..k {
            let mut active = 0;
            for r in 0..m {
                if masks[(r, j)] != 0.0 && masks[(r, jp)] != 0.0 {
                    gathered.set_column(active, &xt.column(r));
                    active += 1;
                }
            }
            if active == 0 {
                continue;
            }
            let panel = gathered.columns(0, active);
            let block = panel * panel.transpose();
            g.view_mut((j * d, jp * d), (d, d)).copy_from(&block);
            if jp != j {
                g.view_mut((jp * d, j * d), (d, d)).copy_from(&block.transpose());
            }
        }
    }
    g
}

/// X̄ᵀy (length dk) via the masks: block j is Xᵀ(mⱼ ⊙ y).
pub fn stacked_projection(data: &LabeledSet, gates: &GateBank, y: &DVector<f64>) -> DVector<f64> {
    let m = data.len();
    let d = data.dim();
    let k = gates.width();
    let masks = gate_masks(data, gates);
    let mut masked = DMatrix::zeros(m, k);
    for j in 0..k {
        for r in 0..m {
            masked[(r, j)] = masks[(r, j)] * y[r];
        }
    }
    let blocks = data.xs().transpose() * masked; // d×k, column j = Xᵀ(mⱼ⊙y)
    let mut out = DVector::zeros(d * k);
    for j in 0..k {
        for i in 0..d {
            out[j * d + i] = blocks[(i, j)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel;
    use crate::network::{galu_neuron, GateSource};
    use crate::{derive_seed, EIG_REL_TOL};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(d: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    fn random_set(m: usize, d: usize, seed: u64) -> LabeledSet {
        crate::data::gen_gaussian(m, d, seed)
    }

    #[test]
    fn embed_all_gates_open_repeats_x() {
        // every gate has positive inner product with x = e1
        let gates = GateBank::from_matrix(
            DMatrix::from_column_slice(2, 3, &[1.0, 0.5, 2.0, -0.3, 0.1, 0.0]),
            GateSource::Gaussian,
            0,
        )
        .unwrap();
        let x = unit(2, 0);
        let phi = embed_point(&x, &gates, false).unwrap();
        assert_eq!(phi.len(), 6);
        for j in 0..3 {
            assert_eq!(phi[2 * j], 1.0);
            assert_eq!(phi[2 * j + 1], 0.0);
        }
        assert_relative_eq!(phi.norm(), (3f64).sqrt() * x.norm(), epsilon = 1e-14);
    }

    #[test]
    fn embed_closed_gate_zeroes_block() {
        let gates = GateBank::from_matrix(
            DMatrix::from_column_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]),
            GateSource::Gaussian,
            0,
        )
        .unwrap();
        let x = unit(2, 0);
        let phi = embed_point(&x, &gates, false).unwrap();
        assert_eq!(phi.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalized_embedding_is_a_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let d = rng.random_range(1..6);
            let k = rng.random_range(1..8);
            let gates = GateBank::generate(d, k, GateSource::Gaussian, rng.random());
            let x = DVector::from_fn(d, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let phi = embed_point(&x, &gates, true).unwrap();
            assert!(phi.norm() <= x.norm() + 1e-12);
        }
    }

    #[test]
    fn single_row_matrix_is_the_embedding() {
        let data = LabeledSet::new(
            DMatrix::from_row_slice(1, 3, &[0.2, -0.4, 1.0]),
            DVector::from_element(1, 0.0),
        )
        .unwrap();
        let gates = GateBank::generate(3, 4, GateSource::Gaussian, 11);
        let fm = build_feature_matrix(&data, &gates).unwrap();
        let phi = embed_point(&data.example(0), &gates, false).unwrap();
        assert_eq!(fm.matrix().row(0).transpose(), phi);
    }

    #[test]
    fn duplicated_examples_duplicate_rows() {
        let row = [0.3, 0.9, -0.1];
        let mut xs = DMatrix::zeros(2, 3);
        xs.set_row(0, &nalgebra::RowDVector::from_row_slice(&row));
        xs.set_row(1, &nalgebra::RowDVector::from_row_slice(&row));
        let data = LabeledSet::new(xs, DVector::from_row_slice(&[1.0, -1.0])).unwrap();
        let gates = GateBank::generate(3, 3, GateSource::Gaussian, 5);
        let fm = build_feature_matrix(&data, &gates).unwrap();
        assert_eq!(fm.matrix().row(0), fm.matrix().row(1));
        // hence the Gram is singular
        let eig = crate::linalg::sym_eigen(&gram(&fm, GramScale::Raw));
        assert!(eig.numerical_rank() < 2);
    }

    #[test]
    fn matrix_product_matches_per_neuron_sum() {
        let data = random_set(5, 3, 21);
        let gates = GateBank::generate(3, 4, GateSource::Gaussian, 22);
        let fm = build_feature_matrix(&data, &gates).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let w = DVector::from_fn(12, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let through_matrix = fm.matrix() * &w;
        for i in 0..5 {
            let x = data.example(i);
            let mut by_neurons = 0.0;
            for j in 0..4 {
                let wj: DVector<f64> = w.rows(3 * j, 3).into();
                by_neurons += galu_neuron(&x, &wj, &gates.gate(j)).unwrap();
            }
            assert_relative_eq!(through_matrix[i], by_neurons, max_relative = 1e-12, epsilon = 1e-13);
        }
    }

    #[test]
    fn gram_zero_matrix_is_zero() {
        let data = LabeledSet::new(DMatrix::zeros(3, 2), DVector::zeros(3)).unwrap();
        let gates = GateBank::generate(2, 4, GateSource::Gaussian, 2);
        let fm = build_feature_matrix(&data, &gates).unwrap();
        assert_eq!(gram(&fm, GramScale::Raw), DMatrix::zeros(3, 3));
    }

    #[test]
    fn gram_entries_match_triple_loop_oracle() {
        // 3 examples, d = 2, k = 4
        let data = random_set(3, 2, 31);
        let gates = GateBank::generate(2, 4, GateSource::Gaussian, 32);
        let fm = build_feature_matrix(&data, &gates).unwrap();
        let h = gram(&fm, GramScale::Raw);
        for i in 0..3 {
            for ip in 0..3 {
                let mut expected = 0.0;
                for j in 0..4 {
                    let gi = gate_open(gates.gate(j).dot(&data.example(i)));
                    let gip = gate_open(gates.gate(j).dot(&data.example(ip)));
                    if gi && gip {
                        expected += data.example(i).dot(&data.example(ip));
                    }
                }
                assert_relative_eq!(h[(i, ip)], expected, max_relative = 1e-12, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn scaled_gram_concentrates_to_kernel_gram() {
        // Monte Carlo over 10_000 gate banks vs the closed-form kernel Gram
        let data = crate::data::gen_sphere(3, 2, 41);
        let trials = 10_000;
        let k = 4;
        let mut acc = DMatrix::<f64>::zeros(3, 3);
        for t in 0..trials {
            let gates =
                GateBank::generate(2, k, GateSource::Gaussian, derive_seed(42, t as u64));
            let fm = build_feature_matrix(&data, &gates).unwrap();
            acc += gram(&fm, GramScale::OneOverK);
        }
        acc.scale_mut(1.0 / trials as f64);
        let hinf = kernel::gram_infinity(&data).unwrap();
        let tol = 3.0 / (trials as f64).sqrt();
        for i in 0..3 {
            for j in 0..3 {
                let range = data.example(i).norm() * data.example(j).norm();
                assert!(
                    (acc[(i, j)] - hinf.matrix()[(i, j)]).abs() <= tol * range + 1e-12,
                    "entry ({i},{j}): mc {} vs kernel {}",
                    acc[(i, j)],
                    hinf.matrix()[(i, j)]
                );
            }
        }
    }

    #[test]
    fn positive_gate_scaling_leaves_features_unchanged() {
        let data = random_set(4, 3, 51);
        let gates = GateBank::generate(3, 5, GateSource::Gaussian, 52);
        let fm = build_feature_matrix(&data, &gates).unwrap();
        let mut scaled = gates.gates().clone();
        for j in 0..5 {
            scaled.column_mut(j).scale_mut(0.5 + j as f64);
        }
        let scaled_bank = GateBank::from_matrix(scaled, GateSource::Gaussian, 52).unwrap();
        let fm2 = build_feature_matrix(&data, &scaled_bank).unwrap();
        assert_eq!(fm.matrix(), fm2.matrix());
        // gaussian gates and their sphere-normalized versions agree too
        let mut normalized = gates.gates().clone();
        for j in 0..5 {
            let n = normalized.column(j).norm();
            normalized.column_mut(j).scale_mut(1.0 / n);
        }
        let sphere_bank = GateBank::from_matrix(normalized, GateSource::Sphere, 52).unwrap();
        let fm3 = build_feature_matrix(&data, &sphere_bank).unwrap();
        assert_eq!(fm.matrix(), fm3.matrix());
    }

    #[test]
    fn gram_is_psd_and_block_additive() {
        let data = random_set(6, 3, 61);
        let gates = GateBank::generate(3, 4, GateSource::Gaussian, 62);
        let fm = build_feature_matrix(&data, &gates).unwrap();
        let h = gram(&fm, GramScale::Raw);
        let eig = crate::linalg::sym_eigen(&h);
        assert!(eig.min() >= -1e-9 * eig.max().abs());

        let mut sum = DMatrix::zeros(6, 6);
        for j in 0..4 {
            let b = fm.block(j);
            sum += &b * b.transpose();
        }
        assert_relative_eq!(h, sum, epsilon = 1e-12 * h.norm().max(1.0));
    }

    #[test]
    fn budget_overflow_is_a_capacity_error() {
        let data = random_set(8, 4, 71);
        let gates = GateBank::generate(4, 8, GateSource::Gaussian, 72);
        let err = build_feature_matrix_with_budget(&data, &gates, 64).unwrap_err();
        assert!(matches!(err, GaluError::CapacityExceeded { .. }));
    }

    #[test]
    fn masked_gram_routes_match_dense_products() {
        let data = random_set(7, 3, 81);
        let gates = GateBank::generate(3, 5, GateSource::Gaussian, 82);
        let fm = build_feature_matrix(&data, &gates).unwrap();
        let masks = gate_masks(&data, &gates);

        let dense_h = gram(&fm, GramScale::Raw);
        let data_gram = crate::linalg::gram_aat(data.xs());
        let masked_h = gram_from_masks(&data_gram, &masks, GramScale::Raw);
        assert_relative_eq!(dense_h, masked_h, epsilon = 1e-11 * dense_h.norm().max(1.0));

        let dense_g = crate::linalg::gram_ata(fm.matrix());
        let masked_g = block_gram_masked(&data, &gates);
        assert_relative_eq!(dense_g, masked_g, epsilon = 1e-11 * dense_g.norm().max(1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let y = DVector::from_fn(7, |_, _| rng.random::<f64>() - 0.5);
        let dense_b = fm.matrix().transpose() * &y;
        let masked_b = stacked_projection(&data, &gates, &y);
        assert_relative_eq!(dense_b, masked_b, epsilon = 1e-12 * dense_b.norm().max(1.0));
    }

    #[test]
    fn rank_tolerance_constant_is_pinned() {
        assert_eq!(EIG_REL_TOL, 1e-10);
    }
}
