//! Experiment subcommands. Every command is a pure function of its resolved
//! configuration: parameter points and trials draw their RNG streams from
//! `derive_seed(root, index)`, so results never depend on evaluation order.

pub mod checks_cmd;
pub mod clustered;
pub mod memorize;
pub mod separable;
pub mod underparam;

use galu_core::features::{self, GramScale};
use galu_core::linalg;
use galu_core::network::{GateBank, LabeledSet};
use galu_core::solver;
use galu_core::{GaluError, Result};
use nalgebra::{DMatrix, DVector};

/// Errors surfaced by commands, keeping the capacity case distinguishable
/// for the exit-code contract.
#[derive(Debug)]
pub enum CmdError {
    Core(GaluError),
    Usage(String),
    Io(String),
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Core(e) => write!(f, "{e}"),
            CmdError::Usage(e) => write!(f, "{e}"),
            CmdError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<GaluError> for CmdError {
    fn from(e: GaluError) -> Self {
        CmdError::Core(e)
    }
}

impl CmdError {
    pub fn is_capacity(&self) -> bool {
        matches!(self, CmdError::Core(GaluError::CapacityExceeded { .. }))
    }
}

/// Closed-form training mse of the GaLU system on labels `y`, computed
/// through whichever Gram matrix is smaller, without materializing the
/// feature matrix. `data_gram` may carry a cached X Xᵀ for the wide case.
///
/// Enforces the memory budget against the dominant allocation of the route
/// taken, mirroring the feature-matrix capacity contract.
pub fn closed_form_mse(
    data: &LabeledSet,
    gates: &GateBank,
    y: &DVector<f64>,
    data_gram: Option<&DMatrix<f64>>,
    budget_bytes: u64,
) -> Result<f64> {
    let m = data.len();
    let dk = data.dim() * gates.width();
    let elem = std::mem::size_of::<f64>() as u64;
    if dk >= m {
        let required = (m as u64 * m as u64)
            .saturating_mul(3)
            .saturating_mul(elem)
            .max((m as u64 * gates.width() as u64).saturating_mul(elem));
        if required > budget_bytes {
            return Err(GaluError::CapacityExceeded {
                required,
                budget: budget_bytes,
            });
        }
        let owned;
        let dg = match data_gram {
            Some(g) => g,
            None => {
                owned = linalg::gram_aat(data.xs());
                &owned
            }
        };
        let masks = features::gate_masks(data, gates);
        let h = features::gram_from_masks(dg, &masks, GramScale::Raw);
        Ok(solver::mse_from_row_gram(&h, y))
    } else {
        let required = (dk as u64 * dk as u64).saturating_mul(2).saturating_mul(elem);
        if required > budget_bytes {
            return Err(GaluError::CapacityExceeded {
                required,
                budget: budget_bytes,
            });
        }
        let g = features::block_gram_masked(data, gates);
        let b = features::stacked_projection(data, gates, y);
        Ok(solver::mse_from_block_gram(&g, &b, y.norm_squared(), m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use galu_core::network::GateSource;
    use galu_core::{data, derive_seed};

    #[test]
    fn closed_form_mse_matches_dense_solver_both_routes() {
        for (m, d, k) in [(24usize, 3usize, 2usize), (8, 3, 6)] {
            let set = data::gen_gaussian(m, d, 31);
            let gates = GateBank::generate(d, k, GateSource::Gaussian, derive_seed(31, 1));
            let fast =
                closed_form_mse(&set, &gates, set.ys(), None, u64::MAX).unwrap();
            let fm = features::build_feature_matrix(&set, &gates).unwrap();
            let dense = solver::min_norm_solve(&fm, set.ys()).unwrap().train_mse;
            assert!(
                (fast - dense).abs() <= 1e-8 * (1.0 + dense),
                "m={m} k={k}: {fast} vs {dense}"
            );
        }
    }

    #[test]
    fn budget_is_enforced() {
        let set = data::gen_gaussian(64, 8, 33);
        let gates = GateBank::generate(8, 4, GateSource::Gaussian, 34);
        let err = closed_form_mse(&set, &gates, set.ys(), None, 512).unwrap_err();
        assert!(matches!(err, GaluError::CapacityExceeded { .. }));
    }
}
