//! Pass/fail property suites aggregating the quantitative guarantees at
//! experiment scale. Each check pins its threshold in code and reports the
//! measured value next to it; the check commands and the acceptance suite
//! both run these.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::features::{self, GramScale};
use crate::kernel;
use crate::linalg;
use crate::network::{gate_open, GateBank, GateSource, LabeledSet};
use crate::spectral;
use crate::train;
use crate::{data, derive_seed, Result};

/// One check result: what was measured, what it had to satisfy, and whether
/// it did.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn at_most(name: &str, measured: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: measured <= threshold,
            measured,
            threshold,
            detail,
        }
    }

    fn at_least(name: &str, measured: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: measured >= threshold,
            measured,
            threshold,
            detail,
        }
    }
}

/// Exactness of the kernel's special values: κ = 1/2 on a unit vector with
/// itself, 0 on antipodal and orthogonal unit pairs, 1/6 at cosine 1/2.
pub fn kappa_special_values() -> CheckOutcome {
    let e1 = DVector::from_row_slice(&[1.0, 0.0, 0.0]);
    let e2 = DVector::from_row_slice(&[0.0, 1.0, 0.0]);
    let at60 = DVector::from_row_slice(&[0.5, 3f64.sqrt() / 2.0, 0.0]);
    let cases = [
        (kernel::kappa(&e1, &e1), 0.5),
        (kernel::kappa(&e1, &(-e1.clone())), 0.0),
        (kernel::kappa(&e1, &e2), 0.0),
        (kernel::kappa(&e1, &at60), 1.0 / 6.0),
    ];
    let mut worst = 0.0f64;
    for (got, want) in cases {
        worst = worst.max((got.expect("finite inputs") - want).abs());
    }
    CheckOutcome::at_most(
        "kappa-special-values",
        worst,
        1e-12,
        "max |kappa - exact| over the four closed-form values".into(),
    )
}

/// Monte Carlo kernel identity: over unit pairs and seeds, the one-bank
/// estimate at width k stays within 3/√k of κ in at least 98% of cases.
pub fn kernel_identity(pairs: usize, seeds_per_pair: usize, k: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 8;
    let tol = 3.0 / (k as f64).sqrt();
    let mut within = 0usize;
    let total = pairs * seeds_per_pair;
    for p in 0..pairs {
        let mut x = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut y = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        x /= x.norm();
        y /= y.norm();
        let exact = kernel::kappa(&x, &y).expect("unit vectors");
        for s in 0..seeds_per_pair {
            let est = kernel::mc_kernel_estimate(&x, &y, k, derive_seed(seed, (p * seeds_per_pair + s) as u64))
                .expect("unit vectors");
            if (est - exact).abs() <= tol {
                within += 1;
            }
        }
    }
    CheckOutcome::at_least(
        "kernel-identity",
        within as f64 / total as f64,
        0.98,
        format!("fraction of {total} pair-seed combinations within 3/sqrt({k})"),
    )
}

/// Finite-width Gram concentration: at the matrix-Hoeffding width for
/// deviation λ(X)/r, the spectral gap ‖(1/k)X̄X̄ᵀ − H∞‖ exceeds λ(X)/r in at
/// most a δ fraction of trials, plus binomial slack.
pub fn h_concentration(m: usize, d: usize, r: f64, delta: f64, trials: usize, seed: u64) -> CheckOutcome {
    let sample = data::gen_sphere(m, d, derive_seed(seed, 0));
    let hinf = kernel::gram_infinity(&sample).expect("finite data");
    let lambda = hinf.eigen().min();
    let x_norm = linalg::spectral_norm(sample.xs());
    let k = (32.0 * r * r * x_norm.powi(4) / (lambda * lambda) * (m as f64 / delta).ln())
        .ceil() as usize;
    let data_gram = linalg::gram_aat(sample.xs());
    let mut failures = 0usize;
    for t in 0..trials {
        let gates = GateBank::generate(d, k, GateSource::Gaussian, derive_seed(seed, 1 + t as u64));
        let masks = features::gate_masks(&sample, &gates);
        let h = features::gram_from_masks(&data_gram, &masks, GramScale::OneOverK);
        let gap = linalg::spectral_norm(&(&h - hinf.matrix()));
        if gap > lambda / r {
            failures += 1;
        }
    }
    let slack = 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt();
    CheckOutcome::at_most(
        "h-concentration",
        failures as f64 / trials as f64,
        delta + slack,
        format!("failure fraction over {trials} banks at k = {k}, r = {r}"),
    )
}

/// Minimum-eigenvalue concentration: at the matrix-Chernoff width the event
/// σ_min(X̄)² < (k/2)·λ(X) happens in at most a δ fraction of gate draws,
/// plus binomial slack.
pub fn min_eig_concentration(m: usize, d: usize, delta: f64, trials: usize, seed: u64) -> CheckOutcome {
    let sample = data::gen_sphere(m, d, derive_seed(seed, 0));
    let lambda = spectral::lambda_exact(&sample);
    let k = spectral::chernoff_width(&sample, delta).expect("diverse data");
    let data_gram = linalg::gram_aat(sample.xs());
    let mut failures = 0usize;
    for t in 0..trials {
        let gates = GateBank::generate(d, k, GateSource::Gaussian, derive_seed(seed, 1 + t as u64));
        let masks = features::gate_masks(&sample, &gates);
        let h = features::gram_from_masks(&data_gram, &masks, GramScale::Raw);
        // σ_min(X̄)² = λ_min(X̄X̄ᵀ); the first trial cross-checks this against
        // the SVD route before the loop trusts the Gram eigenvalue
        let sigma_sq = linalg::sym_eigen(&h).min().max(0.0);
        if t == 0 {
            let fm = features::build_feature_matrix(&sample, &gates).expect("capacity");
            let direct = spectral::sigma_min(&fm);
            let diff = (direct * direct - sigma_sq).abs();
            assert!(
                diff <= 1e-6 * (1.0 + sigma_sq),
                "sigma_min routes disagree: {} vs {}",
                direct * direct,
                sigma_sq
            );
        }
        if sigma_sq < 0.5 * k as f64 * lambda {
            failures += 1;
        }
    }
    let slack = 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt();
    CheckOutcome::at_most(
        "min-eig-concentration",
        failures as f64 / trials as f64,
        delta + slack,
        format!("failure fraction over {trials} banks at the chernoff width k = {k}"),
    )
}

/// Convergence bound: on seeded over-parametrized instances where the
/// σ_min event holds, the descent objective stays below the exponential
/// bound at every logged iteration.
pub fn convergence_bound(
    instances: usize,
    m: usize,
    d: usize,
    delta: f64,
    iterations: usize,
    seed: u64,
) -> CheckOutcome {
    let mut violations = 0usize;
    let mut conditioned = 0usize;
    for i in 0..instances {
        let sample = data::gen_sphere(m, d, derive_seed(seed, 2 * i as u64));
        let k = match spectral::chernoff_width(&sample, delta) {
            Ok(k) => k,
            Err(_) => continue,
        };
        let gates = GateBank::generate(d, k, GateSource::Gaussian, derive_seed(seed, 2 * i as u64 + 1));
        let run = train::gd_convex_masked(&sample, &gates, iterations, delta).expect("valid instance");
        if run.trace.sigma_event_held != Some(true) {
            continue;
        }
        conditioned += 1;
        for s in &run.trace.steps {
            if let Some(bound) = s.convergence_bound {
                if s.objective > bound {
                    violations += 1;
                }
            }
        }
    }
    CheckOutcome::at_most(
        "convergence-bound",
        violations as f64,
        0.0,
        format!("bound violations across {conditioned}/{instances} instances where the event held"),
    )
}

/// Rank/loss law: over fixed feature matrices of varied rank, the Monte
/// Carlo mean of the minimum loss under gaussian labels lands within three
/// standard errors of 1 − rank/m in at least `required` of the cases.
pub fn rank_loss_law(draws: usize, required: usize, seed: u64) -> CheckOutcome {
    let m = 48usize;
    let shapes: [(usize, usize, bool); 10] = [
        (2, 2, false),
        (2, 6, false),
        (3, 4, false),
        (4, 4, false),
        (4, 7, false),
        (5, 6, false),
        (6, 6, false),
        (3, 16, false),
        (4, 6, true),
        (5, 4, true),
    ];
    let mut hits = 0usize;
    for (case, &(d, k, duplicate_rows)) in shapes.iter().enumerate() {
        let mut sample = data::gen_gaussian(m, d, derive_seed(seed, 3 * case as u64));
        if duplicate_rows {
            // lower the rank below dk by repeating a block of examples
            let mut xs = sample.xs().clone();
            for r in 0..m / 3 {
                let src: nalgebra::RowDVector<f64> = xs.row(r).into();
                xs.set_row(m - 1 - r, &src);
            }
            sample = LabeledSet::new(xs, sample.ys().clone()).expect("finite");
        }
        let gates = GateBank::generate(d, k, GateSource::Gaussian, derive_seed(seed, 3 * case as u64 + 1));
        let fm = features::build_feature_matrix(&sample, &gates).expect("capacity");
        let h = features::gram(&fm, GramScale::Raw);
        let eig = linalg::sym_eigen(&h);
        let rank = eig.numerical_rank();
        let law = 1.0 - rank as f64 / m as f64;

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3 * case as u64 + 2));
        let mut mean = 0.0;
        let mut sq = 0.0;
        for _ in 0..draws {
            let y = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let loss = (&y - eig.project_range(&y)).norm_squared() / m as f64;
            mean += loss;
            sq += loss * loss;
        }
        mean /= draws as f64;
        let var = (sq / draws as f64 - mean * mean).max(0.0) * draws as f64 / (draws as f64 - 1.0);
        let stderr = (var / draws as f64).sqrt();
        if (mean - law).abs() <= 3.0 * stderr + 1e-12 {
            hits += 1;
        }
    }
    CheckOutcome::at_least(
        "rank-loss-law",
        hits as f64,
        required as f64,
        format!("cases within 3 standard errors of 1 - rank/m over {draws} label draws"),
    )
}

/// Gradient equality under the hinge loss on admissible instances; with
/// `negate_indicator` the GaLU-side gate is mutated and the check must fail.
pub fn gradient_equality(instances: usize, seed: u64, negate_indicator: bool) -> CheckOutcome {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let root = derive_seed(seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(root);
        let m = 5 + (i % 4);
        let d = 3 + (i % 3);
        let k = 2 + (i % 5);
        let sample = {
            let base = data::gen_sphere(m, d, derive_seed(root, 1));
            let y = DVector::from_fn(m, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
            base.with_labels(y).expect("labels")
        };
        let gates = GateBank::generate(d, k, GateSource::Gaussian, derive_seed(root, 2));
        let weights = DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut alpha = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let masks = features::gate_masks(&sample, &gates);
        let scale = 1.0 / (k as f64).sqrt();
        let galu_out = (sample.xs() * &weights).component_mul(&masks) * &alpha * scale;
        let relu_out = (sample.xs() * gates.gates()).map(|t| t.max(0.0)) * &alpha * scale;
        let bound = galu_out
            .iter()
            .chain(relu_out.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        if bound > 0.0 {
            alpha *= 0.9 / bound.max(0.9);
        }
        let rep = train::hinge_grad_equality_with(&sample, &gates, &weights, &alpha, negate_indicator)
            .expect("admissible by construction");
        worst = worst.max(rep.max_abs_diff);
    }
    let name = if negate_indicator {
        "gradient-equality(negated-indicator)"
    } else {
        "gradient-equality"
    };
    CheckOutcome::at_most(
        name,
        worst,
        1e-12,
        format!("max |galu - relu| gradient entry over {instances} instances"),
    )
}

/// Gate perturbation: at the competitive-width scale, the empirical sup of
/// ‖Φ_U − Φ_W‖ over sphere probes stays below the perturbation bound in at
/// least `required` out of `repeats` seeded draws.
pub fn gate_perturbation(
    d: usize,
    epsilon: f64,
    n_probe: usize,
    repeats: usize,
    required: usize,
    seed: u64,
) -> CheckOutcome {
    let delta = 0.01f64;
    let k = (std::f64::consts::PI / (6f64.sqrt() * d as f64 * epsilon * epsilon)
        * ((2.0 / delta).ln() + d as f64 * (3.0 / epsilon).ln()))
    .ceil() as usize;
    let mut ok = 0usize;
    let mut worst_ratio = 0.0f64;
    for rep in 0..repeats {
        let gates = GateBank::generate(d, k, GateSource::Gaussian, derive_seed(seed, 2 * rep as u64));
        let report = train::gate_perturbation_gap(&gates, epsilon, n_probe, derive_seed(seed, 2 * rep as u64 + 1))
            .expect("valid inputs");
        if report.empirical_sup <= report.perturbation_bound {
            ok += 1;
        }
        worst_ratio = worst_ratio.max(report.empirical_sup / report.perturbation_bound);
    }
    CheckOutcome::at_least(
        "gate-perturbation",
        ok as f64,
        required as f64,
        format!(
            "repeats with sup <= bound at k = {k}; worst sup/bound ratio {worst_ratio:.3}"
        ),
    )
}

/// Center-kernel eigenvalue floor: at the concentration dimension, μ ≥ 1/8 in at
/// least `required` of `repeats` center draws.
pub fn cluster_mu_floor(n: usize, repeats: usize, required: usize, seed: u64) -> CheckOutcome {
    let delta = 0.01f64;
    let d = ((n * n) as f64 / 2.0 * (2.0 * (n * n) as f64 / delta).ln()).ceil() as usize;
    let mut ok = 0usize;
    let mut worst = f64::INFINITY;
    for rep in 0..repeats {
        let model = data::make_cluster_model(n, d, derive_seed(seed, rep as u64), delta, 1);
        let mu = data::cluster_mu(model.centers()).expect("unit centers");
        if mu >= 0.125 {
            ok += 1;
        }
        worst = worst.min(mu);
    }
    CheckOutcome::at_least(
        "cluster-mu",
        ok as f64,
        required as f64,
        format!("draws with mu >= 1/8 at n = {n}, d = {d}; smallest mu seen {worst:.4}"),
    )
}

/// Clustered memorization: closed-form training on the clustered model at
/// the μ-derived width reaches near-zero training loss, and an unseen point
/// in the span of one cluster's training examples is predicted to high
/// accuracy. Returns the two outcomes (train mse, in-span test error).
pub fn clustered_training(n: usize, m: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let delta = 0.01f64;
    let d = ((n * n) as f64 / 2.0 * (2.0 * (n * n) as f64 / delta).ln()).ceil() as usize;
    let (model, mu, k) = data::make_cluster_model_auto(n, d, derive_seed(seed, 0), delta)?;
    let sample = data::gen_clustered(&model, m, derive_seed(seed, 1))?;
    let gates = GateBank::generate(d, k, GateSource::Sphere, derive_seed(seed, 2));

    // closed-form minimum-norm fit through the row Gram (representer form:
    // w* = X̄ᵀ(X̄X̄ᵀ)⁺y, identical to the dense solver's full-rank branch)
    let data_gram = linalg::gram_aat(sample.data.xs());
    let masks = features::gate_masks(&sample.data, &gates);
    let h = features::gram_from_masks(&data_gram, &masks, GramScale::Raw);
    let eig = linalg::sym_eigen(&h);
    let a = eig.pseudo_solve(sample.data.ys());
    let train_mse = (&h * &a - sample.data.ys()).norm_squared() / m as f64;

    // held-out point inside the span of the largest cluster's examples
    let q = {
        let mut counts = vec![0usize; n];
        for &c in &sample.assignments {
            counts[c] += 1;
        }
        counts
            .iter()
            .enumerate()
            .max_by_key(|(_, &c)| c)
            .map(|(i, _)| i)
            .expect("n >= 1")
    };
    let members: Vec<usize> = (0..m).filter(|&i| sample.assignments[i] == q).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let mut probe = DVector::zeros(d);
    for &i in &members {
        let c: f64 = 0.5 + rng.random::<f64>();
        probe += sample.data.example(i) * c;
    }
    probe /= probe.norm();
    let in_cap = (&probe - model.center(q)).norm() <= model.radius();
    let target = probe.dot(&model.direction(q));

    // prediction through the kernel vector: N(x̃) = Φ(x̃)ᵀ X̄ᵀ a
    let open_probe = DVector::from_fn(k, |j, _| {
        if gate_open(gates.gates().column(j).dot(&probe)) {
            1.0
        } else {
            0.0
        }
    });
    let shared_counts = &masks * &open_probe;
    let dots = sample.data.xs() * &probe;
    let kernel_vec = DVector::from_fn(m, |i, _| shared_counts[i] * dots[i]);
    let prediction = kernel_vec.dot(&a);
    let test_error = (prediction - target).abs();

    Ok(vec![
        CheckOutcome::at_most(
            "clustered-train-mse",
            train_mse,
            1e-8,
            format!("train mse at n = {n}, d = {d}, k = {k}, mu = {mu:.4}, m = {m}"),
        ),
        CheckOutcome::at_most(
            "clustered-test-error",
            test_error,
            1e-6,
            format!("in-span prediction error (probe inside cap: {in_cap})"),
        ),
    ])
}

/// The kernel-check suite at default scale.
pub fn kernel_suite(seed: u64) -> Vec<CheckOutcome> {
    vec![
        kappa_special_values(),
        kernel_identity(50, 4, 1000, derive_seed(seed, 101)),
        h_concentration(6, 4, 4.0, 0.1, 200, derive_seed(seed, 102)),
    ]
}

/// The theory-check suite at default scale; `negate_indicator` flips the
/// GaLU gate in the gradient-equality check (the mutation canary).
pub fn theory_suite(seed: u64, negate_indicator: bool) -> Result<Vec<CheckOutcome>> {
    let mut out = vec![
        rank_loss_law(200, 9, derive_seed(seed, 201)),
        convergence_bound(20, 200, 20, 0.1, 150, derive_seed(seed, 202)),
        min_eig_concentration(50, 25, 0.1, 200, derive_seed(seed, 203)),
        kernel_identity(50, 4, 1000, derive_seed(seed, 204)),
        gradient_equality(100, derive_seed(seed, 205), negate_indicator),
        gate_perturbation(50, 0.05, 1000, 100, 99, derive_seed(seed, 206)),
        cluster_mu_floor(10, 100, 99, derive_seed(seed, 207)),
    ];
    out.extend(clustered_training(10, 160, derive_seed(seed, 208))?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_specials_pass() {
        let out = kappa_special_values();
        assert!(out.passed, "{out:?}");
    }

    #[test]
    fn small_kernel_identity_passes() {
        let out = kernel_identity(10, 2, 500, 7);
        assert!(out.passed, "{out:?}");
    }

    #[test]
    fn small_h_concentration_passes() {
        let out = h_concentration(5, 3, 4.0, 0.2, 60, 11);
        assert!(out.passed, "{out:?}");
    }

    #[test]
    fn small_min_eig_concentration_passes() {
        let out = min_eig_concentration(12, 6, 0.2, 60, 13);
        assert!(out.passed, "{out:?}");
    }

    #[test]
    fn small_convergence_bound_passes() {
        let out = convergence_bound(4, 24, 6, 0.2, 80, 17);
        assert!(out.passed, "{out:?}");
        assert!(out.detail.contains("/4 instances"), "{}", out.detail);
    }

    #[test]
    fn rank_loss_law_small_passes() {
        let out = rank_loss_law(120, 9, 19);
        assert!(out.passed, "{out:?}");
    }

    #[test]
    fn gradient_equality_passes_and_canary_fails() {
        let out = gradient_equality(25, 23, false);
        assert!(out.passed, "{out:?}");
        let canary = gradient_equality(25, 23, true);
        assert!(!canary.passed, "negated indicator must fail: {canary:?}");
    }

    #[test]
    fn gate_perturbation_small_passes() {
        let out = gate_perturbation(20, 0.05, 200, 20, 19, 29);
        assert!(out.passed, "{out:?}");
    }

    #[test]
    fn cluster_mu_small_passes() {
        let out = cluster_mu_floor(4, 25, 24, 31);
        assert!(out.passed, "{out:?}");
    }

    #[test]
    fn clustered_training_small_passes() {
        let outs = clustered_training(4, 60, 37).unwrap();
        for out in outs {
            assert!(out.passed, "{out:?}");
        }
    }
}
