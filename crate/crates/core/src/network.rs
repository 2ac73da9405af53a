//! Network objects and forward evaluation.
//!
//! A GaLU neuron is `g(x; w, u) = 1[uᵀx ≥ 0] · xᵀw`: the gate `u` decides
//! whether the neuron is active, the weights `w` decide its value. The gate
//! gradient is identically zero, so gates are drawn once and never trained.
//! A ReLU neuron is the special case `w = u`.
//!
//! Layout convention used across the crate: examples are rows of an m×d
//! matrix; gates and per-neuron weights are columns of d×k matrices. The
//! indicator is `1[t ≥ 0]`, open at exactly zero. Forward sums run in
//! ascending neuron order so results are reproducible bit-for-bit on a given
//! platform.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{GaluError, Result};

/// Gate indicator: open at `t = 0` by convention.
#[inline]
pub fn gate_open(t: f64) -> bool {
    t >= 0.0
}

/// A sample: an m×d matrix of examples (one per row) with real labels.
#[derive(Clone, Debug)]
pub struct LabeledSet {
    xs: DMatrix<f64>,
    ys: DVector<f64>,
}

impl LabeledSet {
    pub fn new(xs: DMatrix<f64>, ys: DVector<f64>) -> Result<Self> {
        if xs.nrows() == 0 || xs.ncols() == 0 {
            return Err(GaluError::InvalidArgument(
                "labeled set needs m >= 1 and d >= 1".into(),
            ));
        }
        if ys.len() != xs.nrows() {
            return Err(GaluError::DimensionMismatch {
                context: "labeled set labels",
                expected: xs.nrows(),
                found: ys.len(),
            });
        }
        if xs.iter().any(|v| !v.is_finite()) || ys.iter().any(|v| !v.is_finite()) {
            return Err(GaluError::NonFinite("labeled set"));
        }
        Ok(Self { xs, ys })
    }

    /// As [`LabeledSet::new`], additionally asserting every row has unit
    /// Euclidean norm within 1e-9.
    pub fn new_unit_rows(xs: DMatrix<f64>, ys: DVector<f64>) -> Result<Self> {
        for i in 0..xs.nrows() {
            let n = xs.row(i).norm();
            if (n - 1.0).abs() > 1e-9 {
                return Err(GaluError::InvalidArgument(format!(
                    "row {i} has norm {n}, expected 1 within 1e-9"
                )));
            }
        }
        Self::new(xs, ys)
    }

    pub fn len(&self) -> usize {
        self.xs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // m >= 1 by construction
    }

    pub fn dim(&self) -> usize {
        self.xs.ncols()
    }

    pub fn xs(&self) -> &DMatrix<f64> {
        &self.xs
    }

    pub fn ys(&self) -> &DVector<f64> {
        &self.ys
    }

    /// Owned copy of example `i` as a column vector.
    pub fn example(&self, i: usize) -> DVector<f64> {
        self.xs.row(i).transpose()
    }

    /// Same examples, different labels.
    pub fn with_labels(&self, ys: DVector<f64>) -> Result<Self> {
        Self::new(self.xs.clone(), ys)
    }
}

/// Where a gate bank was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateSource {
    Gaussian,
    Sphere,
}

impl GateSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            GateSource::Gaussian => "gaussian",
            GateSource::Sphere => "sphere",
        }
    }
}

/// A d×k matrix of fixed gate vectors (column j is gate j) plus provenance.
#[derive(Clone, Debug)]
pub struct GateBank {
    gates: DMatrix<f64>,
    source: GateSource,
    seed: u64,
}

impl GateBank {
    /// Draws k gates in dimension d from the requested law, fully determined
    /// by the seed. Gaussian gates are N(0, I_d); sphere gates are the same
    /// draws normalized to unit length. Columns are filled in ascending gate
    /// order.
    pub fn generate(d: usize, k: usize, source: GateSource, seed: u64) -> Self {
        assert!(d >= 1 && k >= 1, "gate bank needs d >= 1 and k >= 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gates = DMatrix::zeros(d, k);
        for j in 0..k {
            loop {
                for i in 0..d {
                    gates[(i, j)] = StandardNormal.sample(&mut rng);
                }
                if source == GateSource::Gaussian {
                    break;
                }
                let n = gates.column(j).norm();
                if n > 0.0 {
                    gates.column_mut(j).scale_mut(1.0 / n);
                    break;
                }
            }
        }
        Self {
            gates,
            source,
            seed,
        }
    }

    pub fn from_matrix(gates: DMatrix<f64>, source: GateSource, seed: u64) -> Result<Self> {
        if gates.nrows() == 0 || gates.ncols() == 0 {
            return Err(GaluError::InvalidArgument(
                "gate bank needs d >= 1 and k >= 1".into(),
            ));
        }
        if gates.iter().any(|v| !v.is_finite()) {
            return Err(GaluError::NonFinite("gate bank"));
        }
        if source == GateSource::Sphere {
            for j in 0..gates.ncols() {
                let n = gates.column(j).norm();
                if (n - 1.0).abs() > 1e-9 {
                    return Err(GaluError::InvalidArgument(format!(
                        "sphere gate {j} has norm {n}, expected 1 within 1e-9"
                    )));
                }
            }
        }
        Ok(Self {
            gates,
            source,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.gates.nrows()
    }

    /// Number of gates k.
    pub fn width(&self) -> usize {
        self.gates.ncols()
    }

    pub fn gates(&self) -> &DMatrix<f64> {
        &self.gates
    }

    pub fn gate(&self, j: usize) -> DVector<f64> {
        self.gates.column(j).into()
    }

    pub fn source(&self) -> GateSource {
        self.source
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// The concatenated trainable vector w ∈ R^{dk}, k blocks of length d.
#[derive(Clone, Debug)]
pub struct WeightStack {
    w: DVector<f64>,
    dim: usize,
}

impl WeightStack {
    pub fn new(w: DVector<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || w.is_empty() || !w.len().is_multiple_of(dim) {
            return Err(GaluError::DimensionMismatch {
                context: "weight stack",
                expected: dim.max(1),
                found: w.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(GaluError::NonFinite("weight stack"));
        }
        Ok(Self { w, dim })
    }

    pub fn zeros(dim: usize, k: usize) -> Self {
        Self {
            w: DVector::zeros(dim * k),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> usize {
        self.w.len() / self.dim
    }

    pub fn block(&self, j: usize) -> DVector<f64> {
        self.w.rows(j * self.dim, self.dim).into()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.w
    }
}

/// The (W, α) pair of the natural two-layer parameterization: W is d×k with
/// per-neuron weights as columns, α holds the readout coefficients.
#[derive(Clone, Debug)]
pub struct NaturalParams {
    pub weights: DMatrix<f64>,
    pub alpha: DVector<f64>,
}

impl NaturalParams {
    pub fn new(weights: DMatrix<f64>, alpha: DVector<f64>) -> Result<Self> {
        if alpha.len() != weights.ncols() {
            return Err(GaluError::DimensionMismatch {
                context: "natural params alpha",
                expected: weights.ncols(),
                found: alpha.len(),
            });
        }
        if weights.iter().any(|v| !v.is_finite()) || alpha.iter().any(|v| !v.is_finite()) {
            return Err(GaluError::NonFinite("natural params"));
        }
        Ok(Self { weights, alpha })
    }

    /// Zero weights, unit readout.
    pub fn zero_init(d: usize, k: usize) -> Self {
        Self {
            weights: DMatrix::zeros(d, k),
            alpha: DVector::from_element(k, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn width(&self) -> usize {
        self.weights.ncols()
    }

    /// Collapses to the convex variable v(W, α): block j is αⱼ wⱼ.
    pub fn collapse(&self) -> WeightStack {
        let d = self.dim();
        let k = self.width();
        let mut v = DVector::zeros(d * k);
        for j in 0..k {
            for i in 0..d {
                v[j * d + i] = self.alpha[j] * self.weights[(i, j)];
            }
        }
        WeightStack { w: v, dim: d }
    }
}

fn check_same_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(GaluError::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// A single GaLU neuron: `1[uᵀx ≥ 0] · xᵀw`.
pub fn galu_neuron(x: &DVector<f64>, w: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    check_same_dim("galu neuron weights", x.len(), w.len())?;
    check_same_dim("galu neuron gate", x.len(), u.len())?;
    if x.iter().chain(w.iter()).chain(u.iter()).any(|v| !v.is_finite()) {
        return Err(GaluError::NonFinite("galu neuron"));
    }
    let gate = u.dot(x);
    Ok(if gate_open(gate) { x.dot(w) } else { 0.0 })
}

/// Forward pass of the GaLU network `Σⱼ αⱼ g(x; wⱼ, uⱼ)`, scaled by 1/√k
/// when `normalized`. Accumulation runs in ascending neuron order in f64.
pub fn galu_forward(
    x: &DVector<f64>,
    params: &NaturalParams,
    gates: &GateBank,
    normalized: bool,
) -> Result<f64> {
    check_same_dim("galu forward input", gates.dim(), x.len())?;
    check_same_dim("galu forward weights", gates.dim(), params.dim())?;
    check_same_dim("galu forward width", gates.width(), params.width())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GaluError::NonFinite("galu forward input"));
    }
    let k = gates.width();
    let mut acc = 0.0f64;
    for j in 0..k {
        let gate = gates.gates().column(j).dot(x);
        if gate_open(gate) {
            acc += params.alpha[j] * params.weights.column(j).dot(x);
        }
    }
    Ok(if normalized { acc / (k as f64).sqrt() } else { acc })
}

/// Forward pass of the ReLU network `Σⱼ αⱼ max(uⱼᵀx, 0)` built on the same
/// vectors: the bank doubles as the weight matrix.
pub fn relu_forward(
    x: &DVector<f64>,
    gates: &GateBank,
    alpha: &DVector<f64>,
    normalized: bool,
) -> Result<f64> {
    check_same_dim("relu forward input", gates.dim(), x.len())?;
    check_same_dim("relu forward alpha", gates.width(), alpha.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GaluError::NonFinite("relu forward input"));
    }
    let k = gates.width();
    let mut acc = 0.0f64;
    for j in 0..k {
        let pre = gates.gates().column(j).dot(x);
        acc += alpha[j] * pre.max(0.0);
    }
    Ok(if normalized { acc / (k as f64).sqrt() } else { acc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn e(d: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    #[test]
    fn neuron_open_closed_and_boundary() {
        let x = e(2, 0);
        let w = e(2, 0);
        // gate aligned with x: open, value 1
        assert_eq!(galu_neuron(&x, &w, &e(2, 0)).unwrap(), 1.0);
        // gate opposed: closed
        assert_eq!(galu_neuron(&x, &w, &(-e(2, 0))).unwrap(), 0.0);
        // uᵀx = 0 exactly: the indicator is 1 at the boundary
        let w2 = DVector::from_row_slice(&[3.5, -1.0]);
        assert_eq!(galu_neuron(&x, &w2, &e(2, 1)).unwrap(), x.dot(&w2));
    }

    #[test]
    fn neuron_dimension_mismatch_errors() {
        let x = e(3, 0);
        let w = e(2, 0);
        assert!(matches!(
            galu_neuron(&x, &w, &e(3, 1)),
            Err(GaluError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            galu_neuron(&x, &e(3, 0), &e(2, 1)),
            Err(GaluError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn forward_zero_alpha_and_single_neuron() {
        let gates = GateBank::generate(3, 4, GateSource::Gaussian, 1);
        let x = e(3, 1);
        let params = NaturalParams::new(
            DMatrix::from_fn(3, 4, |i, j| (i + j) as f64),
            DVector::zeros(4),
        )
        .unwrap();
        assert_eq!(galu_forward(&x, &params, &gates, false).unwrap(), 0.0);

        // k = 1, alpha = 1, normalized: equals the bare neuron (1/√1 = 1)
        let g1 = GateBank::generate(3, 1, GateSource::Gaussian, 5);
        let w = DVector::from_row_slice(&[0.4, -1.2, 2.0]);
        let p1 = NaturalParams::new(
            DMatrix::from_column_slice(3, 1, w.as_slice()),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let expected = galu_neuron(&x, &w, &g1.gate(0)).unwrap();
        assert_eq!(galu_forward(&x, &p1, &g1, true).unwrap(), expected);
    }

    #[test]
    fn relu_closed_everywhere_is_zero_and_single_neuron_value() {
        // all gates have strictly negative inner product with x
        let gates = GateBank::from_matrix(
            DMatrix::from_column_slice(2, 2, &[-1.0, 0.0, -2.0, -1.0]),
            GateSource::Gaussian,
            0,
        )
        .unwrap();
        let x = e(2, 0);
        let alpha = DVector::from_row_slice(&[1.0, 2.0]);
        assert_eq!(relu_forward(&x, &gates, &alpha, false).unwrap(), 0.0);

        // single neuron u = e1, x = 2 e1, alpha = 3, unnormalized -> 6
        let g = GateBank::from_matrix(
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            GateSource::Gaussian,
            0,
        )
        .unwrap();
        let out = relu_forward(
            &(2.0 * e(2, 0)),
            &g,
            &DVector::from_element(1, 3.0),
            false,
        )
        .unwrap();
        assert_eq!(out, 6.0);
    }

    #[test]
    fn relu_equals_galu_with_gates_as_weights() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let d = rng.random_range(1..6);
            let k = rng.random_range(1..6);
            let gates = GateBank::generate(d, k, GateSource::Gaussian, rng.random());
            let alpha = DVector::from_fn(k, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let x = DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let params = NaturalParams::new(gates.gates().clone(), alpha.clone()).unwrap();
            let a = relu_forward(&x, &gates, &alpha, true).unwrap();
            let b = galu_forward(&x, &params, &gates, true).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn scaling_absorption() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let d = rng.random_range(1..5);
            let k = rng.random_range(1..5);
            let gates = GateBank::generate(d, k, GateSource::Gaussian, rng.random());
            let weights = DMatrix::from_fn(d, k, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let alpha = DVector::from_fn(k, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let x = DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let p = NaturalParams::new(weights.clone(), alpha.clone()).unwrap();
            let mut absorbed = weights;
            for j in 0..k {
                absorbed.column_mut(j).scale_mut(alpha[j]);
            }
            let p_absorbed =
                NaturalParams::new(absorbed, DVector::from_element(k, 1.0)).unwrap();
            let a = galu_forward(&x, &p, &gates, false).unwrap();
            let b = galu_forward(&x, &p_absorbed, &gates, false).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn collapse_matches_blockwise_definition() {
        let weights = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        let alpha = DVector::from_row_slice(&[10.0, -1.0]);
        let v = NaturalParams::new(weights, alpha).unwrap().collapse();
        assert_eq!(v.as_vector().as_slice(), &[10.0, 20.0, -3.0, -4.0]);
        assert_eq!(v.block(1), DVector::from_row_slice(&[-3.0, -4.0]));
    }

    #[test]
    fn bank_prefix_property() {
        // the first k columns of a wider bank equal the width-k bank from
        // the same seed; width searches rely on this nesting
        for source in [GateSource::Gaussian, GateSource::Sphere] {
            let wide = GateBank::generate(4, 9, source, 77);
            let narrow = GateBank::generate(4, 3, source, 77);
            assert_eq!(wide.gates().columns(0, 3), narrow.gates().columns(0, 3));
        }
    }

    #[test]
    fn sphere_banks_have_unit_columns() {
        let bank = GateBank::generate(6, 9, GateSource::Sphere, 33);
        for j in 0..9 {
            assert!((bank.gates().column(j).norm() - 1.0).abs() < 1e-12);
        }
        // deterministic across calls
        let again = GateBank::generate(6, 9, GateSource::Sphere, 33);
        assert_eq!(bank.gates(), again.gates());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // g(x; aw1 + bw2, u) = a g(x; w1, u) + b g(x; w2, u)
        #[test]
        fn neuron_linear_in_weights(
            xs in proptest::collection::vec(-10.0f64..10.0, 3),
            w1 in proptest::collection::vec(-10.0f64..10.0, 3),
            w2 in proptest::collection::vec(-10.0f64..10.0, 3),
            us in proptest::collection::vec(-10.0f64..10.0, 3),
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
        ) {
            let x = DVector::from_vec(xs);
            let w1 = DVector::from_vec(w1);
            let w2 = DVector::from_vec(w2);
            let u = DVector::from_vec(us);
            let combo = &w1 * a + &w2 * b;
            let lhs = galu_neuron(&x, &combo, &u).unwrap();
            let rhs = a * galu_neuron(&x, &w1, &u).unwrap()
                + b * galu_neuron(&x, &w2, &u).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs().max(rhs.abs())));
        }
    }
}
