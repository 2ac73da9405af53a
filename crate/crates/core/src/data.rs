//! Seeded synthetic data generators.
//!
//! Every generator is a pure function of its arguments including the seed:
//! entries are drawn example by example (row-major) from a ChaCha stream, so
//! outputs are bit-identical across runs and platforms with the same seed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg;
use crate::network::LabeledSet;
use crate::{GaluError, Result};

fn normal_matrix_row_major(rng: &mut ChaCha8Rng, m: usize, d: usize) -> DMatrix<f64> {
    let mut buf = vec![0.0f64; m * d];
    for v in buf.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    DMatrix::from_row_slice(m, d, &buf)
}

/// m examples with iid N(0, I_d) rows and iid N(0, 1) labels.
pub fn gen_gaussian(m: usize, d: usize, seed: u64) -> LabeledSet {
    assert!(m >= 1 && d >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = normal_matrix_row_major(&mut rng, m, d);
    let ys = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
    LabeledSet::new(xs, ys).expect("finite by construction")
}

/// m examples uniform on the unit sphere (gaussian rows normalized) with
/// iid N(0, 1) labels.
pub fn gen_sphere(m: usize, d: usize, seed: u64) -> LabeledSet {
    assert!(m >= 1 && d >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = DMatrix::zeros(m, d);
    for i in 0..m {
        loop {
            for j in 0..d {
                xs[(i, j)] = StandardNormal.sample(&mut rng);
            }
            let n = xs.row(i).norm();
            if n > 0.0 {
                for j in 0..d {
                    xs[(i, j)] /= n;
                }
                break;
            }
        }
    }
    let ys = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
    LabeledSet::new(xs, ys).expect("finite by construction")
}

/// Linearly separable gaussian data with labels in {±1}: draws a uniform
/// unit separator, keeps only examples with |⟨w, x⟩| at or above the margin
/// (the unnormalized inner product; set `cosine_margin` to threshold the
/// cosine instead), labels by the sign.
///
/// Errors when the acceptance rate falls below 1e-4.
pub fn gen_linear_margin(m: usize, d: usize, margin: f64, seed: u64) -> Result<LabeledSet> {
    gen_linear_margin_with(m, d, margin, false, seed)
}

pub fn gen_linear_margin_with(
    m: usize,
    d: usize,
    margin: f64,
    cosine_margin: bool,
    seed: u64,
) -> Result<LabeledSet> {
    if margin < 0.0 {
        return Err(GaluError::InvalidArgument("margin must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
    w /= w.norm();

    let mut xs = DMatrix::zeros(m, d);
    let mut ys = DVector::zeros(m);
    let mut accepted = 0usize;
    let mut attempts = 0u64;
    let mut x = DVector::<f64>::zeros(d);
    while accepted < m {
        attempts += 1;
        for j in 0..d {
            x[j] = StandardNormal.sample(&mut rng);
        }
        let raw = w.dot(&x);
        let score = if cosine_margin { raw / x.norm() } else { raw };
        if score.abs() >= margin {
            for j in 0..d {
                xs[(accepted, j)] = x[j];
            }
            ys[accepted] = if raw >= 0.0 { 1.0 } else { -1.0 };
            accepted += 1;
        }
        if attempts >= 10_000 && (accepted as f64) < 1e-4 * attempts as f64 {
            return Err(GaluError::Degenerate(format!(
                "margin filter acceptance rate {:.2e} below 1e-4",
                accepted as f64 / attempts as f64
            )));
        }
    }
    LabeledSet::new(xs, ys)
}

/// Parity data: entries uniform in {±1}, label the product of coordinates.
pub fn gen_parity(m: usize, d: usize, seed: u64) -> LabeledSet {
    assert!(m >= 1 && d >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = DMatrix::zeros(m, d);
    let mut ys = DVector::zeros(m);
    for i in 0..m {
        let mut prod = 1.0;
        for j in 0..d {
            let v = if rng.random::<bool>() { 1.0 } else { -1.0 };
            xs[(i, j)] = v;
            prod *= v;
        }
        ys[i] = prod;
    }
    LabeledSet::new(xs, ys).expect("finite by construction")
}

/// The clustered piecewise-linear model: n unit centers on the sphere, one
/// linear labeling direction per cluster, a cap radius, and cluster mixing
/// probabilities.
#[derive(Clone, Debug)]
pub struct ClusterModel {
    centers: DMatrix<f64>,
    directions: DMatrix<f64>,
    radius: f64,
    mixing: DVector<f64>,
}

impl ClusterModel {
    pub fn new(
        centers: DMatrix<f64>,
        directions: DMatrix<f64>,
        radius: f64,
        mixing: DVector<f64>,
    ) -> Result<Self> {
        let n = centers.nrows();
        for i in 0..n {
            if (centers.row(i).norm() - 1.0).abs() > 1e-9 {
                return Err(GaluError::InvalidArgument(format!(
                    "cluster center {i} is not unit norm"
                )));
            }
        }
        if directions.nrows() != n || directions.ncols() != centers.ncols() {
            return Err(GaluError::DimensionMismatch {
                context: "cluster directions",
                expected: n * centers.ncols(),
                found: directions.nrows() * directions.ncols(),
            });
        }
        if radius <= 0.0 {
            return Err(GaluError::InvalidArgument("radius must be positive".into()));
        }
        if (mixing.iter().sum::<f64>() - 1.0).abs() > 1e-12
            || mixing.iter().any(|&p| p < 0.0)
            || mixing.len() != n
        {
            return Err(GaluError::InvalidArgument(
                "mixing must be a probability vector over clusters".into(),
            ));
        }
        Ok(Self {
            centers,
            directions,
            radius,
            mixing,
        })
    }

    pub fn clusters(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    pub fn directions(&self) -> &DMatrix<f64> {
        &self.directions
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn mixing(&self) -> &DVector<f64> {
        &self.mixing
    }

    pub fn center(&self, q: usize) -> DVector<f64> {
        self.centers.row(q).transpose()
    }

    pub fn direction(&self, q: usize) -> DVector<f64> {
        self.directions.row(q).transpose()
    }
}

/// Random cluster model: centers uniform over {±1/√d}^d (unit norm by
/// construction), radius δ/(nk√d), gaussian labeling directions, uniform
/// mixing.
pub fn make_cluster_model(n: usize, d: usize, seed: u64, delta: f64, k: usize) -> ClusterModel {
    assert!(n >= 1 && d >= 1 && k >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (d as f64).sqrt();
    let mut centers = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            centers[(i, j)] = if rng.random::<bool>() { scale } else { -scale };
        }
        // exact unit norm: d entries of equal magnitude
        let norm = centers.row(i).norm();
        for j in 0..d {
            centers[(i, j)] /= norm;
        }
    }
    let directions = normal_matrix_row_major(&mut rng, n, d);
    let radius = delta / (n as f64 * k as f64 * (d as f64).sqrt());
    let mixing = DVector::from_element(n, 1.0 / n as f64);
    ClusterModel::new(centers, directions, radius, mixing).expect("valid by construction")
}

/// Cluster model with the gate count derived from the measured center
/// kernel: draws the centers, computes μ, sets k = ⌈(8n/μ)·log(n/δ)⌉, and
/// rebuilds the model so its radius uses that k. The same seed reproduces
/// the same centers and directions in both passes.
pub fn make_cluster_model_auto(
    n: usize,
    d: usize,
    seed: u64,
    delta: f64,
) -> Result<(ClusterModel, f64, usize)> {
    let probe = make_cluster_model(n, d, seed, delta, 1);
    let mu = cluster_mu(probe.centers())?;
    if mu <= 0.0 {
        return Err(GaluError::Degenerate(format!(
            "center kernel not positive definite: mu = {mu:.3e}"
        )));
    }
    let k = (8.0 * n as f64 / mu * (n as f64 / delta).ln()).ceil().max(1.0) as usize;
    let model = make_cluster_model(n, d, seed, delta, k);
    Ok((model, mu, k))
}

/// A clustered sample together with the cluster index of each example.
#[derive(Clone, Debug)]
pub struct ClusteredSample {
    pub data: LabeledSet,
    pub assignments: Vec<usize>,
}

/// Samples m points from the clustered model: pick a cluster from the
/// mixing law, draw a point in the cap of radius r around its center
/// (renormalized to the sphere, resampling in the vanishingly rare case the
/// projection leaves the cap), and label it with the cluster's linear map.
pub fn gen_clustered(model: &ClusterModel, m: usize, seed: u64) -> Result<ClusteredSample> {
    if model.radius() >= 2.0 {
        return Err(GaluError::Degenerate(
            "cap radius >= 2 covers the whole sphere".into(),
        ));
    }
    let n = model.clusters();
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = DMatrix::zeros(m, d);
    let mut ys = DVector::zeros(m);
    let mut assignments = Vec::with_capacity(m);
    let mut t = DVector::zeros(d);
    for i in 0..m {
        let u: f64 = rng.random();
        let mut q = n - 1;
        let mut acc = 0.0;
        for c in 0..n {
            acc += model.mixing()[c];
            if u < acc {
                q = c;
                break;
            }
        }
        let center = model.center(q);
        loop {
            loop {
                for j in 0..d {
                    t[j] = StandardNormal.sample(&mut rng);
                }
                let norm = t.norm();
                if norm > 0.0 {
                    t /= norm;
                    break;
                }
            }
            let rho: f64 = rng.random::<f64>() * 0.99 * model.radius();
            let mut x = &center + &t * rho;
            x /= x.norm();
            if (&x - &center).norm() <= model.radius() {
                for j in 0..d {
                    xs[(i, j)] = x[j];
                }
                ys[i] = x.dot(&model.direction(q));
                break;
            }
        }
        assignments.push(q);
    }
    Ok(ClusteredSample {
        data: LabeledSet::new(xs, ys)?,
        assignments,
    })
}

/// Minimum eigenvalue of the center-angle matrix H with
/// H_ij = 1/2 − arccos(vᵢᵀvⱼ)/2π over unit-norm centers.
pub fn cluster_mu(centers: &DMatrix<f64>) -> Result<f64> {
    let n = centers.nrows();
    for i in 0..n {
        if (centers.row(i).norm() - 1.0).abs() > 1e-9 {
            return Err(GaluError::InvalidArgument(format!(
                "center {i} is not unit norm"
            )));
        }
    }
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = 0.5;
        for j in i + 1..n {
            let cos = centers.row(i).dot(&centers.row(j)).clamp(-1.0, 1.0);
            let v = 0.5 - cos.acos() / (2.0 * std::f64::consts::PI);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(linalg::sym_eigen(&h).min())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derive_seed;
    use approx::assert_relative_eq;

    #[test]
    fn generators_are_deterministic() {
        let a = gen_gaussian(5, 3, 42);
        let b = gen_gaussian(5, 3, 42);
        assert_eq!(a.xs(), b.xs());
        assert_eq!(a.ys(), b.ys());
        let c = gen_gaussian(5, 3, 43);
        assert_ne!(a.xs(), c.xs());

        let p = gen_parity(7, 4, 1);
        let q = gen_parity(7, 4, 1);
        assert_eq!(p.xs(), q.xs());

        let s = gen_sphere(6, 2, 9);
        let t = gen_sphere(6, 2, 9);
        assert_eq!(s.xs(), t.xs());

        let l = gen_linear_margin(8, 3, 0.01, 11).unwrap();
        let m = gen_linear_margin(8, 3, 0.01, 11).unwrap();
        assert_eq!(l.xs(), m.xs());
    }

    #[test]
    fn sphere_rows_are_unit() {
        let s = gen_sphere(20, 5, 3);
        for i in 0..20 {
            assert!((s.xs().row(i).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_spectral_norm_within_lemma_scale() {
        // ‖X‖ ≤ 2√(m/d)·1.25 for unit-norm rows at m = 2000, d = 100. The
        // threshold is the O(√(m/d)) behaviour the gaussian-data width bound
        // rests on; it applies to direction vectors, hence the sphere rows.
        let bound = 2.0 * (2000.0f64 / 100.0).sqrt() * 1.25;
        for rep in 0..20 {
            let s = gen_sphere(2000, 100, derive_seed(500, rep));
            let norm = linalg::spectral_norm(s.xs());
            assert!(norm <= bound, "rep {rep}: ‖X‖ = {norm} > {bound}");
        }
    }

    #[test]
    fn margin_zero_accepts_everything_and_postcondition_holds() {
        let data = gen_linear_margin(50, 4, 0.0, 21).unwrap();
        assert_eq!(data.len(), 50);
        for i in 0..50 {
            assert!(data.ys()[i] == 1.0 || data.ys()[i] == -1.0);
        }

        let margin = 0.3;
        let data = gen_linear_margin(50, 4, margin, 22).unwrap();
        // recover the separator: labels match sign(⟨w, x⟩), so a least
        // squares fit must separate them perfectly at this margin
        let xtx = linalg::gram_ata(data.xs());
        let xty = data.xs().transpose() * data.ys();
        let w = linalg::sym_eigen(&xtx).pseudo_solve(&xty);
        let preds = data.xs() * w;
        let correct = (0..50)
            .filter(|&i| preds[i].signum() == data.ys()[i])
            .count();
        assert!(correct >= 49, "{correct}/50");
    }

    #[test]
    fn least_squares_separates_margin_data() {
        let data = gen_linear_margin(2000, 20, 0.01, 23).unwrap();
        let xtx = linalg::gram_ata(data.xs());
        let xty = data.xs().transpose() * data.ys();
        let w = linalg::sym_eigen(&xtx).pseudo_solve(&xty);
        let preds = data.xs() * w;
        let correct = (0..2000)
            .filter(|&i| preds[i].signum() == data.ys()[i])
            .count();
        assert!(
            correct as f64 >= 0.99 * 2000.0,
            "train accuracy {}",
            correct as f64 / 2000.0
        );
    }

    #[test]
    fn parity_labels() {
        let all_ones = {
            // seed hunting not needed: compute label directly
            let data = gen_parity(200, 6, 31);
            let mut found = None;
            for i in 0..200 {
                if (0..6).all(|j| data.xs()[(i, j)] == 1.0) {
                    found = Some(data.ys()[i]);
                    break;
                }
            }
            found
        };
        if let Some(label) = all_ones {
            assert_eq!(label, 1.0);
        }
        // the label is the coordinate product, and flipping one coordinate
        // flips it
        let data = gen_parity(30, 5, 32);
        for i in 0..30 {
            let mut prod = 1.0;
            let mut flipped = 1.0;
            for j in 0..5 {
                prod *= data.xs()[(i, j)];
                flipped *= if j == 0 { -data.xs()[(i, j)] } else { data.xs()[(i, j)] };
            }
            assert_eq!(prod, data.ys()[i]);
            assert_eq!(flipped, -data.ys()[i]);
        }
    }

    #[test]
    fn parity_labels_are_balanced() {
        let m = 100_000;
        let data = gen_parity(m, 11, 33);
        let mean = data.ys().iter().sum::<f64>() / m as f64;
        assert!(mean.abs() <= 3.0 / (m as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn cluster_model_construction() {
        let model = make_cluster_model(4, 32, 41, 0.05, 10);
        for i in 0..4 {
            assert!((model.centers().row(i).norm() - 1.0).abs() < 1e-12);
        }
        assert_relative_eq!(
            model.radius(),
            0.05 / (4.0 * 10.0 * 32.0f64.sqrt()),
            epsilon = 1e-15
        );
        assert_relative_eq!(model.mixing().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cluster_mu_cases() {
        let one = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_relative_eq!(cluster_mu(&one).unwrap(), 0.5, epsilon = 1e-12);

        let antipodal = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        assert_relative_eq!(cluster_mu(&antipodal).unwrap(), 0.5, epsilon = 1e-12);

        let identical = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert!(cluster_mu(&identical).unwrap().abs() < 1e-12);

        let bad = DMatrix::from_row_slice(1, 2, &[2.0, 0.0]);
        assert!(cluster_mu(&bad).is_err());
    }

    #[test]
    fn clustered_points_stay_in_caps_and_labels_are_linear() {
        let model = make_cluster_model(3, 16, 51, 0.1, 5);
        let sample = gen_clustered(&model, 60, 52).unwrap();
        for i in 0..60 {
            let q = sample.assignments[i];
            let x = sample.data.example(i);
            assert!((&x - model.center(q)).norm() <= model.radius());
            assert_relative_eq!(
                sample.data.ys()[i],
                x.dot(&model.direction(q)),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn tiny_radius_collapses_to_centers() {
        let base = make_cluster_model(2, 8, 61, 0.05, 3);
        let model = ClusterModel::new(
            base.centers().clone(),
            base.directions().clone(),
            1e-12,
            base.mixing().clone(),
        )
        .unwrap();
        let sample = gen_clustered(&model, 10, 62).unwrap();
        for i in 0..10 {
            let q = sample.assignments[i];
            assert!((sample.data.example(i) - model.center(q)).norm() <= 1e-9);
            let expected = model.center(q).dot(&model.direction(q));
            assert_relative_eq!(sample.data.ys()[i], expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn within_cluster_regression_is_exact() {
        let model = make_cluster_model(3, 12, 71, 0.05, 4);
        let sample = gen_clustered(&model, 90, 72).unwrap();
        for q in 0..3 {
            let idx: Vec<usize> = (0..90).filter(|&i| sample.assignments[i] == q).collect();
            if idx.len() < 2 {
                continue;
            }
            let mut xs = DMatrix::zeros(idx.len(), 12);
            let mut ys = DVector::zeros(idx.len());
            for (r, &i) in idx.iter().enumerate() {
                xs.set_row(r, &sample.data.xs().row(i));
                ys[r] = sample.data.ys()[i];
            }
            let g = linalg::gram_ata(&xs);
            let b = xs.transpose() * &ys;
            let w = linalg::sym_eigen(&g).pseudo_solve(&b);
            let residual = (&xs * w - ys).norm_squared();
            assert!(residual <= 1e-10, "cluster {q}: residual {residual}");
        }
    }

    #[test]
    fn oversized_radius_is_rejected() {
        let base = make_cluster_model(2, 8, 81, 0.05, 3);
        let model = ClusterModel::new(
            base.centers().clone(),
            base.directions().clone(),
            2.5,
            base.mixing().clone(),
        )
        .unwrap();
        assert!(matches!(
            gen_clustered(&model, 5, 82),
            Err(GaluError::Degenerate(_))
        ));
    }
}
