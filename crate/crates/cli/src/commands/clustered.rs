//! Clustered piecewise-linear memorization: closed-form training at the
//! center-kernel width, reporting the training loss, the in-span test
//! error, μ, and the width threshold.

use std::time::Instant;

use galu_core::features::{self, GramScale};
use galu_core::linalg;
use galu_core::network::{gate_open, GateBank, GateSource};
use galu_core::{data, derive_seed, GaluError};
use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::rows::ResultRow;

use super::CmdError;

pub fn run(cfg: &Config) -> Result<Vec<ResultRow>, CmdError> {
    let n = cfg.clusters;
    let delta = cfg.delta;
    // d = 0 (the subcommand default) derives the concentration dimension n²/2·log(2n²/δ)
    let d = if cfg.d[0] == 0 {
        ((n * n) as f64 / 2.0 * (2.0 * (n * n) as f64 / delta).ln()).ceil() as usize
    } else {
        cfg.d[0]
    };
    let m = cfg.m;
    let mut rows = Vec::new();
    for rep in 0..cfg.seeds {
        let t0 = Instant::now();
        let run_seed = derive_seed(cfg.seed, rep as u64);
        let (model, mu, k) = data::make_cluster_model_auto(n, d, derive_seed(run_seed, 0), delta)?;
        let sample = data::gen_clustered(&model, m, derive_seed(run_seed, 1))?;
        let gates = GateBank::generate(d, k, GateSource::Sphere, derive_seed(run_seed, 2));

        let elem = std::mem::size_of::<f64>() as u64;
        let required = ((m * m) as u64 * 3).saturating_mul(elem);
        if required > cfg.budget_bytes() {
            return Err(CmdError::Core(GaluError::CapacityExceeded {
                required,
                budget: cfg.budget_bytes(),
            }));
        }

        // minimum-norm fit in representer form: w* = X̄ᵀ(X̄X̄ᵀ)⁺y
        let data_gram = linalg::gram_aat(sample.data.xs());
        let masks = features::gate_masks(&sample.data, &gates);
        let h = features::gram_from_masks(&data_gram, &masks, GramScale::Raw);
        let eig = linalg::sym_eigen(&h);
        let a = eig.pseudo_solve(sample.data.ys());
        let train_mse = (&h * &a - sample.data.ys()).norm_squared() / m as f64;

        // held-out point in the span of the largest cluster's examples
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
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run_seed, 3));
        let mut probe = DVector::<f64>::zeros(d);
        for &i in &members {
            probe += sample.data.example(i) * (0.5 + rng.random::<f64>());
        }
        probe /= probe.norm();
        let target = probe.dot(&model.direction(q));
        let open_probe = DVector::<f64>::from_fn(gates.width(), |j, _| {
            if gate_open(gates.gates().column(j).dot(&probe)) {
                1.0
            } else {
                0.0
            }
        });
        let shared = &masks * &open_probe;
        let dots = sample.data.xs() * &probe;
        let kernel_vec = DVector::<f64>::from_fn(m, |i, _| shared[i] * dots[i]);
        let prediction = kernel_vec.dot(&a);
        let test_error = (prediction - target).abs();

        let elapsed = t0.elapsed().as_secs_f64();
        let point = (m, d, k);
        for (metric, value) in [
            ("train_mse", train_mse),
            ("test_error", test_error),
            ("mu", mu),
            ("k_threshold", k as f64),
            ("probe_in_cap", f64::from((&probe - model.center(q)).norm() <= model.radius())),
        ] {
            rows.push(ResultRow::new(
                "clustered",
                point,
                "galu",
                metric,
                value,
                run_seed,
                elapsed,
            ));
        }
    }
    Ok(rows)
}
