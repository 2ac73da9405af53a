//! The under-parametrized sweep: closed-form GaLU loss across kd/m ratios,
//! averaged over independent (gates, labels) draws on a fixed design, next
//! to the 1 − kd/m and 1 − 2kd/m reference lines; optionally a trained ReLU
//! at the same widths.

use std::time::Instant;

use galu_core::linalg;
use galu_core::network::{GateBank, GateSource};
use galu_core::train::{self, LossKind, OptimizerConfig};
use galu_core::{data, derive_seed};
use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::Config;
use crate::rows::ResultRow;

use super::CmdError;

pub fn run(cfg: &Config) -> Result<Vec<ResultRow>, CmdError> {
    let m = cfg.m;
    let d = cfg.d[0];
    let sample = data::gen_gaussian(m, d, derive_seed(cfg.seed, 0));
    let data_gram = linalg::gram_aat(sample.xs());
    let mut rows = Vec::new();
    let train_relu = matches!(cfg.activation.as_str(), "relu" | "both");
    let train_galu = matches!(cfg.activation.as_str(), "galu" | "both");

    for (ri, &ratio) in cfg.ratios.iter().enumerate() {
        let k = ((ratio * m as f64 / d as f64).round() as usize).max(1);
        let point = (m, d, k);
        let kd_over_m = (k * d) as f64 / m as f64;
        rows.push(ResultRow::new(
            "underparam",
            point,
            "reference",
            "one_minus_kd_over_m",
            1.0 - kd_over_m,
            cfg.seed,
            0.0,
        ));
        rows.push(ResultRow::new(
            "underparam",
            point,
            "reference",
            "one_minus_2kd_over_m",
            1.0 - 2.0 * kd_over_m,
            cfg.seed,
            0.0,
        ));

        if train_galu {
            let t0 = Instant::now();
            let mut mean = 0.0;
            for trial in 0..cfg.trials {
                let trial_seed = derive_seed(cfg.seed, ((ri as u64) << 32) | trial as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(trial_seed, 0));
                let y = DVector::<f64>::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                let gates = GateBank::generate(
                    d,
                    k,
                    GateSource::Gaussian,
                    derive_seed(trial_seed, 1),
                );
                let mse = super::closed_form_mse(
                    &sample,
                    &gates,
                    &y,
                    Some(&data_gram),
                    cfg.budget_bytes(),
                )?;
                mean += mse;
                rows.push(ResultRow::new(
                    "underparam",
                    point,
                    "galu",
                    "mse",
                    mse,
                    trial_seed,
                    t0.elapsed().as_secs_f64(),
                ));
            }
            mean /= cfg.trials as f64;
            rows.push(ResultRow::new(
                "underparam",
                point,
                "galu",
                "mse_mean",
                mean,
                cfg.seed,
                t0.elapsed().as_secs_f64(),
            ));
        }

        if train_relu {
            let t0 = Instant::now();
            let reps = cfg.seeds.max(1);
            let mut mean = 0.0;
            for rep in 0..reps {
                let rep_seed = derive_seed(cfg.seed, ((ri as u64) << 40) | rep as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, 0));
                let y = DVector::<f64>::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                let labeled = sample.with_labels(y)?;
                let gates =
                    GateBank::generate(d, k, GateSource::Gaussian, derive_seed(rep_seed, 1));
                let opt = OptimizerConfig::adam(
                    cfg.learning_rate,
                    cfg.batch_size,
                    cfg.steps,
                    derive_seed(rep_seed, 2),
                );
                let (_, trace) =
                    train::train_relu(&labeled, &gates, &DVector::zeros(k), &opt, LossKind::Mse)?;
                let mse = trace.final_full_objective.expect("iterative run");
                mean += mse;
                rows.push(ResultRow::new(
                    "underparam",
                    point,
                    "relu",
                    "mse",
                    mse,
                    rep_seed,
                    t0.elapsed().as_secs_f64(),
                ));
            }
            mean /= reps as f64;
            rows.push(ResultRow::new(
                "underparam",
                point,
                "relu",
                "mse_mean",
                mean,
                cfg.seed,
                t0.elapsed().as_secs_f64(),
            ));
        }
    }
    Ok(rows)
}
