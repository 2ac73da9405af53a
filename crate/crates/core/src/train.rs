//! Iterative optimization and the gradient-level diagnostics.
//!
//! Two training views coexist. The convex path ([`gd_convex`]) runs
//! full-batch gradient descent on the collapsed weight vector with the
//! schedule η = m/(k‖X‖²) against the objective F(w) = (1/2m)‖X̄w − y‖², and
//! logs the exponential bound that holds whenever the smallest singular
//! value event does. The natural path ([`train_natural`], [`train_relu`])
//! optimizes the (W, α) parameterization of the 1/√k-normalized networks
//! with GD/SGD/Adam under the mean-squared loss (1/m)Σ(ŷ−y)² (or hinge).
//! Gates are never parameters: their gradient is identically zero.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::features::{self, FeatureMatrix, GramScale};
use crate::linalg;
use crate::network::{gate_open, GateBank, LabeledSet, NaturalParams, WeightStack};
use crate::spectral;
use crate::{derive_seed, GaluError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Hinge,
    /// ℓ(ŷ, y) = −y·ŷ: the hinge in its active region; exact-gradient probe.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimMethod {
    Gd,
    Sgd,
    Adam,
}

#[derive(Clone, Debug)]
pub struct OptimizerConfig {
    pub method: OptimMethod,
    pub step_size: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// When false the readout α is held fixed (used by the
    /// reparameterization identities; training both layers is the default).
    pub train_alpha: bool,
}

impl OptimizerConfig {
    pub fn gd(step_size: f64, iterations: usize) -> Self {
        Self {
            method: OptimMethod::Gd,
            step_size,
            batch_size: usize::MAX,
            iterations,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            train_alpha: true,
        }
    }

    /// Adam with the standard moment defaults.
    pub fn adam(step_size: f64, batch_size: usize, iterations: usize, seed: u64) -> Self {
        Self {
            method: OptimMethod::Adam,
            step_size,
            batch_size,
            iterations,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed,
            train_alpha: true,
        }
    }

    fn validate_with_loss(&self, loss: LossKind) -> Result<()> {
        if loss == LossKind::Linear {
            return Err(GaluError::InvalidArgument(
                "training losses are mse and hinge; the linear loss is a \
                 finite-difference probe"
                    .into(),
            ));
        }
        self.validate()
    }

    fn validate(&self) -> Result<()> {
        if self.step_size <= 0.0 {
            return Err(GaluError::InvalidArgument("step size must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(GaluError::InvalidArgument("batch size must be positive".into()));
        }
        if !(0.0 < self.adam_beta1 && self.adam_beta1 < 1.0)
            || !(0.0 < self.adam_beta2 && self.adam_beta2 < 1.0)
            || self.adam_eps <= 0.0
        {
            return Err(GaluError::InvalidArgument(
                "adam parameters must satisfy beta in (0,1), eps > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One logged optimization step.
#[derive(Clone, Debug)]
pub struct TraceStep {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    /// ‖w_t − w*‖ when the interpolant exists (full row rank), absent
    /// otherwise.
    pub dist_to_opt: Option<f64>,
    /// exp(−tλ(X)/2‖X‖²)·(k‖X‖²/m)·‖w₀ − w*‖², when applicable.
    pub convergence_bound: Option<f64>,
}

/// Per-run log. For the convex path the objective is F(w) = (1/2m)‖X̄w−y‖²;
/// for the natural paths it is the configured loss on the step's batch.
#[derive(Clone, Debug, Default)]
pub struct TrainTrace {
    pub steps: Vec<TraceStep>,
    /// Whether σ_min(X̄)² ≥ (k/2)λ(X) held for this instance (convex path).
    pub sigma_event_held: Option<bool>,
    /// Whether k met the matrix-Chernoff width at the requested δ.
    pub width_satisfied: Option<bool>,
    /// Full-dataset objective after the last step (iterative paths).
    pub final_full_objective: Option<f64>,
}

impl TrainTrace {
    /// Tail-window plateau test: mean objective over the last tenth of the
    /// trace improved by less than 1% over the preceding tenth.
    pub fn plateaued(&self) -> bool {
        let n = self.steps.len();
        if n < 20 {
            return false;
        }
        let w = (n / 10).max(1);
        let mean = |s: &[TraceStep]| s.iter().map(|t| t.objective).sum::<f64>() / s.len() as f64;
        let last = mean(&self.steps[n - w..]);
        let prev = mean(&self.steps[n - 2 * w..n - w]);
        last >= prev - 0.01 * prev.abs()
    }
}

/// Weights plus trace from the convex gradient-descent path.
#[derive(Clone, Debug)]
pub struct GdResult {
    pub weights: WeightStack,
    pub trace: TrainTrace,
}

/// Shared setup for the convex descent: the schedule, the bound
/// ingredients, and the event flags, all derived from the row Gram X̄X̄ᵀ.
struct ConvexSetup {
    eta: f64,
    decay: f64,
    a_star: Option<DVector<f64>>,
    bound_coeff: Option<f64>,
    sigma_event: bool,
    width_satisfied: Option<bool>,
}

fn convex_setup(h: &DMatrix<f64>, data: &LabeledSet, k: usize, delta: f64) -> Result<ConvexSetup> {
    let m = data.len();
    let x_norm = linalg::spectral_norm(data.xs());
    if x_norm == 0.0 {
        return Err(GaluError::Degenerate("zero data matrix".into()));
    }
    let eta = m as f64 / (k as f64 * x_norm * x_norm);
    let lambda_x = spectral::lambda_exact(data);
    let eig = linalg::sym_eigen(h);
    let full_rank = eig.numerical_rank() == m;
    let sigma_event = eig.min() >= 0.5 * k as f64 * lambda_x;
    let width_satisfied = spectral::chernoff_width(data, delta).ok().map(|w| k >= w);
    let a_star = if full_rank {
        Some(eig.pseudo_solve(data.ys()))
    } else {
        None
    };
    let bound_coeff = a_star.as_ref().map(|a| {
        let w_star_sq = a.dot(&(h * a));
        (k as f64 * x_norm * x_norm / m as f64) * w_star_sq
    });
    Ok(ConvexSetup {
        eta,
        decay: lambda_x / (2.0 * x_norm * x_norm),
        a_star,
        bound_coeff,
        sigma_event,
        width_satisfied,
    })
}

/// The descent recursion in the m-dimensional Gram coordinates: w_t = X̄ᵀc_t
/// with c_{t+1} = c_t − (η/m)(Hc_t − y), an exact reparameterization of the
/// weight-space recursion started at zero.
fn gd_gram_loop(
    h: &DMatrix<f64>,
    y: &DVector<f64>,
    setup: &ConvexSetup,
    iterations: usize,
    trace: &mut TrainTrace,
) -> DVector<f64> {
    let m = y.len();
    let mut c = DVector::zeros(m);
    for t in 0..=iterations {
        let r = h * &c - y;
        let objective = r.norm_squared() / (2.0 * m as f64);
        let grad_norm = (r.dot(&(h * &r)).max(0.0)).sqrt() / m as f64;
        let dist = setup.a_star.as_ref().map(|a| {
            let e = &c - a;
            (e.dot(&(h * &e)).max(0.0)).sqrt()
        });
        let bound = setup
            .bound_coeff
            .map(|b| (-(t as f64) * setup.decay).exp() * b);
        trace.steps.push(TraceStep {
            iteration: t,
            objective,
            grad_norm,
            dist_to_opt: dist,
            convergence_bound: bound,
        });
        if t < iterations {
            c -= (setup.eta / m as f64) * r;
        }
    }
    c
}

/// Full-batch gradient descent from w₀ = 0 with η = m/(k‖X‖²) on
/// F(w) = (1/2m)‖X̄w − y‖², logging every iteration from t = 0.
///
/// When dk is much larger than m the iteration runs in the m-dimensional
/// Gram coordinates (an exact reparameterization of the same recursion);
/// both routes are cross-checked in the tests.
pub fn gd_convex(
    features: &FeatureMatrix,
    data: &LabeledSet,
    iterations: usize,
    delta: f64,
) -> Result<GdResult> {
    let m = features.rows();
    if data.len() != m {
        return Err(GaluError::DimensionMismatch {
            context: "gd convex data",
            expected: m,
            found: data.len(),
        });
    }
    let k = features.width();
    let y = data.ys();
    let h = features::gram(features, GramScale::Raw);
    let setup = convex_setup(&h, data, k, delta)?;
    let mut trace = TrainTrace {
        sigma_event_held: Some(setup.sigma_event),
        width_satisfied: setup.width_satisfied,
        ..TrainTrace::default()
    };

    let dk = features.dim() * k;
    let weights_vec = if dk > 4 * m {
        let c = gd_gram_loop(&h, y, &setup, iterations, &mut trace);
        features.matrix().transpose() * c
    } else {
        let xbar = features.matrix();
        let w_star = setup.a_star.as_ref().map(|a| xbar.transpose() * a);
        let mut w = DVector::zeros(dk);
        for t in 0..=iterations {
            let r = xbar * &w - y;
            let objective = r.norm_squared() / (2.0 * m as f64);
            let grad = xbar.transpose() * &r / m as f64;
            let dist = w_star.as_ref().map(|ws| (&w - ws).norm());
            let bound = setup
                .bound_coeff
                .map(|b| (-(t as f64) * setup.decay).exp() * b);
            trace.steps.push(TraceStep {
                iteration: t,
                objective,
                grad_norm: grad.norm(),
                dist_to_opt: dist,
                convergence_bound: bound,
            });
            if t < iterations {
                w -= setup.eta * &grad;
            }
        }
        w
    };

    Ok(GdResult {
        weights: WeightStack::new(weights_vec, features.dim())?,
        trace,
    })
}

/// As [`gd_convex`], but never materializes the feature matrix: the row
/// Gram comes from the gate-mask identity and the final weights from the
/// masked transpose product. Used at matrix-Chernoff widths where dk runs
/// into the hundreds of thousands.
pub fn gd_convex_masked(
    data: &LabeledSet,
    gates: &GateBank,
    iterations: usize,
    delta: f64,
) -> Result<GdResult> {
    if data.dim() != gates.dim() {
        return Err(GaluError::DimensionMismatch {
            context: "gd convex masked",
            expected: data.dim(),
            found: gates.dim(),
        });
    }
    let data_gram = linalg::gram_aat(data.xs());
    let masks = features::gate_masks(data, gates);
    let h = features::gram_from_masks(&data_gram, &masks, GramScale::Raw);
    let setup = convex_setup(&h, data, gates.width(), delta)?;
    let mut trace = TrainTrace {
        sigma_event_held: Some(setup.sigma_event),
        width_satisfied: setup.width_satisfied,
        ..TrainTrace::default()
    };
    let c = gd_gram_loop(&h, data.ys(), &setup, iterations, &mut trace);
    let weights_vec = features::stacked_projection(data, gates, &c);
    Ok(GdResult {
        weights: WeightStack::new(weights_vec, data.dim())?,
        trace,
    })
}

fn loss_value(loss: LossKind, out: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let b = out.len() as f64;
    match loss {
        LossKind::Mse => out
            .iter()
            .zip(y.iter())
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>()
            / b,
        LossKind::Hinge => out
            .iter()
            .zip(y.iter())
            .map(|(o, t)| (1.0 - t * o).max(0.0))
            .sum::<f64>()
            / b,
        LossKind::Linear => -out.iter().zip(y.iter()).map(|(o, t)| t * o).sum::<f64>() / b,
    }
}

fn loss_gradient(loss: LossKind, out: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let b = out.len() as f64;
    DVector::from_fn(out.len(), |i, _| match loss {
        LossKind::Mse => 2.0 * (out[i] - y[i]) / b,
        LossKind::Hinge => {
            if 1.0 - y[i] * out[i] > 0.0 {
                -y[i] / b
            } else {
                0.0
            }
        }
        LossKind::Linear => -y[i] / b,
    })
}

struct AdamState {
    m_w: DMatrix<f64>,
    v_w: DMatrix<f64>,
    m_a: DVector<f64>,
    v_a: DVector<f64>,
    t: usize,
}

impl AdamState {
    fn new(d: usize, k: usize) -> Self {
        Self {
            m_w: DMatrix::zeros(d, k),
            v_w: DMatrix::zeros(d, k),
            m_a: DVector::zeros(k),
            v_a: DVector::zeros(k),
            t: 0,
        }
    }

    fn step(
        &mut self,
        cfg: &OptimizerConfig,
        w: &mut DMatrix<f64>,
        a: &mut DVector<f64>,
        grad_w: &DMatrix<f64>,
        grad_a: &DVector<f64>,
        update_alpha: bool,
    ) {
        self.t += 1;
        let (b1, b2, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (i, g) in grad_w.iter().enumerate() {
            let m = b1 * self.m_w[i] + (1.0 - b1) * g;
            let v = b2 * self.v_w[i] + (1.0 - b2) * g * g;
            self.m_w[i] = m;
            self.v_w[i] = v;
            w[i] -= cfg.step_size * (m / bc1) / ((v / bc2).sqrt() + eps);
        }
        if update_alpha {
            for (i, g) in grad_a.iter().enumerate() {
                let m = b1 * self.m_a[i] + (1.0 - b1) * g;
                let v = b2 * self.v_a[i] + (1.0 - b2) * g * g;
                self.m_a[i] = m;
                self.v_a[i] = v;
                a[i] -= cfg.step_size * (m / bc1) / ((v / bc2).sqrt() + eps);
            }
        }
    }
}

/// Deterministic minibatch scheduler: each epoch is a fresh seeded
/// permutation consumed in contiguous chunks.
struct BatchSchedule {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    batch: usize,
    seed: u64,
}

impl BatchSchedule {
    fn new(m: usize, batch: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..m).collect(),
            cursor: 0,
            epoch: 0,
            batch: batch.min(m),
            seed,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, self.epoch));
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.shuffle();
        }
        let end = (self.cursor + self.batch).min(self.order.len());
        let out = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }
}

fn gather_rows(src: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(idx.len(), src.ncols());
    for (r, &i) in idx.iter().enumerate() {
        out.set_row(r, &src.row(i));
    }
    out
}

fn gather_vec(src: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| src[i]))
}

/// Trains the (W, α) parameters of the normalized GaLU network. The gates
/// are fixed inputs, not parameters.
pub fn train_natural(
    data: &LabeledSet,
    gates: &GateBank,
    init: &NaturalParams,
    cfg: &OptimizerConfig,
    loss: LossKind,
) -> Result<(NaturalParams, TrainTrace)> {
    cfg.validate_with_loss(loss)?;
    if data.dim() != gates.dim() || init.dim() != gates.dim() || init.width() != gates.width() {
        return Err(GaluError::DimensionMismatch {
            context: "train natural shapes",
            expected: gates.dim() * gates.width(),
            found: init.dim() * init.width(),
        });
    }
    let m = data.len();
    let k = gates.width();
    let scale = 1.0 / (k as f64).sqrt();
    let masks = features::gate_masks(data, gates);
    let mut w = init.weights.clone();
    let mut alpha = init.alpha.clone();
    let mut trace = TrainTrace::default();
    let mut adam = AdamState::new(data.dim(), k);
    let full_batch = cfg.batch_size >= m || cfg.method == OptimMethod::Gd;
    let mut schedule = if full_batch {
        None
    } else {
        Some(BatchSchedule::new(m, cfg.batch_size, cfg.seed))
    };

    let forward = |xb: &DMatrix<f64>, mb: &DMatrix<f64>, w: &DMatrix<f64>, alpha: &DVector<f64>| {
        let lin = xb * w;
        let gated = lin.component_mul(mb);
        (&gated * alpha * scale, gated)
    };

    for step in 0..cfg.iterations {
        let (xb, mb, yb): (DMatrix<f64>, DMatrix<f64>, DVector<f64>) = match &mut schedule {
            None => (data.xs().clone(), masks.clone(), data.ys().clone()),
            Some(s) => {
                let idx = s.next_batch();
                (
                    gather_rows(data.xs(), &idx),
                    gather_rows(&masks, &idx),
                    gather_vec(data.ys(), &idx),
                )
            }
        };
        let (out, gated) = forward(&xb, &mb, &w, &alpha);
        let objective = loss_value(loss, &out, &yb);
        let dout = loss_gradient(loss, &out, &yb);
        let grad_alpha = gated.transpose() * &dout * scale;
        let weighted = {
            let mut t = DMatrix::zeros(xb.nrows(), k);
            for j in 0..k {
                for i in 0..xb.nrows() {
                    t[(i, j)] = dout[i] * alpha[j] * mb[(i, j)];
                }
            }
            t
        };
        let grad_w = xb.transpose() * weighted * scale;
        let grad_norm = (grad_w.norm_squared()
            + if cfg.train_alpha { grad_alpha.norm_squared() } else { 0.0 })
        .sqrt();
        trace.steps.push(TraceStep {
            iteration: step,
            objective,
            grad_norm,
            dist_to_opt: None,
            convergence_bound: None,
        });
        match cfg.method {
            OptimMethod::Gd | OptimMethod::Sgd => {
                w -= cfg.step_size * &grad_w;
                if cfg.train_alpha {
                    alpha -= cfg.step_size * &grad_alpha;
                }
            }
            OptimMethod::Adam => {
                adam.step(cfg, &mut w, &mut alpha, &grad_w, &grad_alpha, cfg.train_alpha);
            }
        }
    }

    let (final_out, _) = forward(data.xs(), &masks, &w, &alpha);
    trace.final_full_objective = Some(loss_value(loss, &final_out, data.ys()));
    Ok((NaturalParams::new(w, alpha)?, trace))
}

/// A trained ReLU network: first-layer vectors as columns plus the readout.
#[derive(Clone, Debug)]
pub struct ReluNet {
    pub weights: DMatrix<f64>,
    pub alpha: DVector<f64>,
}

/// Trains both layers of the normalized ReLU network by (sub)gradient
/// descent; the subgradient of max(t, 0) at t = 0 is taken as 1, matching
/// the gate-indicator convention.
pub fn train_relu(
    data: &LabeledSet,
    init_gates: &GateBank,
    init_alpha: &DVector<f64>,
    cfg: &OptimizerConfig,
    loss: LossKind,
) -> Result<(ReluNet, TrainTrace)> {
    cfg.validate_with_loss(loss)?;
    if data.dim() != init_gates.dim() || init_alpha.len() != init_gates.width() {
        return Err(GaluError::DimensionMismatch {
            context: "train relu shapes",
            expected: init_gates.width(),
            found: init_alpha.len(),
        });
    }
    let m = data.len();
    let k = init_gates.width();
    let scale = 1.0 / (k as f64).sqrt();
    let mut u = init_gates.gates().clone();
    let mut alpha = init_alpha.clone();
    let mut trace = TrainTrace::default();
    let mut adam = AdamState::new(data.dim(), k);
    let full_batch = cfg.batch_size >= m || cfg.method == OptimMethod::Gd;
    let mut schedule = if full_batch {
        None
    } else {
        Some(BatchSchedule::new(m, cfg.batch_size, cfg.seed))
    };

    let forward = |xb: &DMatrix<f64>, u: &DMatrix<f64>, alpha: &DVector<f64>| {
        let pre = xb * u;
        let acts = pre.map(|t| t.max(0.0));
        let out = &acts * alpha * scale;
        (out, acts, pre)
    };

    for step in 0..cfg.iterations {
        let (xb, yb): (DMatrix<f64>, DVector<f64>) = match &mut schedule {
            None => (data.xs().clone(), data.ys().clone()),
            Some(s) => {
                let idx = s.next_batch();
                (gather_rows(data.xs(), &idx), gather_vec(data.ys(), &idx))
            }
        };
        let (out, acts, pre) = forward(&xb, &u, &alpha);
        let objective = loss_value(loss, &out, &yb);
        let dout = loss_gradient(loss, &out, &yb);
        let grad_alpha = acts.transpose() * &dout * scale;
        let weighted = {
            let mut t = DMatrix::zeros(xb.nrows(), k);
            for j in 0..k {
                for i in 0..xb.nrows() {
                    if gate_open(pre[(i, j)]) {
                        t[(i, j)] = dout[i] * alpha[j];
                    }
                }
            }
            t
        };
        let grad_u = xb.transpose() * weighted * scale;
        let grad_norm = (grad_u.norm_squared()
            + if cfg.train_alpha { grad_alpha.norm_squared() } else { 0.0 })
        .sqrt();
        trace.steps.push(TraceStep {
            iteration: step,
            objective,
            grad_norm,
            dist_to_opt: None,
            convergence_bound: None,
        });
        match cfg.method {
            OptimMethod::Gd | OptimMethod::Sgd => {
                u -= cfg.step_size * &grad_u;
                if cfg.train_alpha {
                    alpha -= cfg.step_size * &grad_alpha;
                }
            }
            OptimMethod::Adam => {
                adam.step(cfg, &mut u, &mut alpha, &grad_u, &grad_alpha, cfg.train_alpha);
            }
        }
    }

    let (final_out, _, _) = forward(data.xs(), &u, &alpha);
    trace.final_full_objective = Some(loss_value(loss, &final_out, data.ys()));
    Ok((ReluNet { weights: u, alpha }, trace))
}

/// Comparison of the GaLU weight gradient against the ReLU first-layer
/// gradient at matching parameters under the hinge loss.
#[derive(Clone, Copy, Debug)]
pub struct HingeGradReport {
    pub galu_grad_norm: f64,
    pub relu_grad_norm: f64,
    pub max_abs_diff: f64,
}

/// Checks that ∂L/∂wⱼ of the GaLU network equals ∂L/∂uⱼ of the ReLU network
/// under the hinge loss when both networks' outputs (and the labels) lie in
/// [−1, 1]; in that regime both reduce to −(1/m√k)·Σᵢ yᵢ αⱼ 1[xᵢᵀuⱼ≥0] xᵢ.
pub fn hinge_grad_equality(
    data: &LabeledSet,
    gates: &GateBank,
    weights: &DMatrix<f64>,
    alpha: &DVector<f64>,
) -> Result<HingeGradReport> {
    hinge_grad_equality_with(data, gates, weights, alpha, false)
}

/// As [`hinge_grad_equality`]; `negate_galu_gate` flips the GaLU-side gate
/// indicator to 1[t < 0]. That is the mutation canary: with it the equality
/// must fail on any generic instance.
pub fn hinge_grad_equality_with(
    data: &LabeledSet,
    gates: &GateBank,
    weights: &DMatrix<f64>,
    alpha: &DVector<f64>,
    negate_galu_gate: bool,
) -> Result<HingeGradReport> {
    let m = data.len();
    let d = data.dim();
    let k = gates.width();
    if weights.nrows() != d || weights.ncols() != k || alpha.len() != k {
        return Err(GaluError::DimensionMismatch {
            context: "hinge gradient shapes",
            expected: d * k,
            found: weights.nrows() * weights.ncols(),
        });
    }
    let scale = 1.0 / (k as f64).sqrt();

    // precondition: outputs of both networks and the labels lie in [−1, 1],
    // so the hinge is active with unit slope everywhere
    let masks = features::gate_masks(data, gates);
    let galu_out = (data.xs() * weights).component_mul(&masks) * alpha * scale;
    let relu_out = (data.xs() * gates.gates()).map(|t| t.max(0.0)) * alpha * scale;
    let out_bound = galu_out
        .iter()
        .chain(relu_out.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let label_bound = data.ys().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if out_bound > 1.0 + 1e-12 || label_bound > 1.0 + 1e-12 {
        return Err(GaluError::InvalidArgument(format!(
            "hinge gradient equality needs outputs and labels in [-1, 1] \
             (got output bound {out_bound:.3}, label bound {label_bound:.3}); \
             rescale alpha"
        )));
    }

    // GaLU side: per-example accumulation of −(1/m√k)·yᵢ·αⱼ·1[xᵢᵀuⱼ≥0]·xᵢ
    let mut galu_grad = DMatrix::<f64>::zeros(d, k);
    let coeff = -scale / m as f64;
    for i in 0..m {
        let x = data.example(i);
        let yi = data.ys()[i];
        for j in 0..k {
            let pre = gates.gates().column(j).dot(&x);
            let open = if negate_galu_gate { !gate_open(pre) } else { gate_open(pre) };
            if open {
                let c = coeff * yi * alpha[j];
                for r in 0..d {
                    galu_grad[(r, j)] += c * x[r];
                }
            }
        }
    }

    // ReLU side: matrix assembly through the subgradient mask of uⱼᵀx at
    // the same vectors (subgradient at 0 is 1)
    let pre = data.xs() * gates.gates();
    let mut weighted = DMatrix::zeros(m, k);
    for j in 0..k {
        for i in 0..m {
            if gate_open(pre[(i, j)]) {
                weighted[(i, j)] = coeff * data.ys()[i] * alpha[j];
            }
        }
    }
    let relu_grad = data.xs().transpose() * weighted;

    let max_abs_diff = galu_grad
        .iter()
        .zip(relu_grad.iter())
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
    Ok(HingeGradReport {
        galu_grad_norm: galu_grad.norm(),
        relu_grad_norm: relu_grad.norm(),
        max_abs_diff,
    })
}

/// Result of probing how far the normalized embedding moves when every gate
/// is perturbed by exactly ε.
#[derive(Clone, Copy, Debug)]
pub struct PerturbationReport {
    pub empirical_sup: f64,
    pub perturbation_bound: f64,
}

/// Perturbs each gate by an independent uniform direction scaled to exactly
/// ε, samples `n_probe` unit-sphere points, and returns the largest observed
/// ‖Φ_U(x) − Φ_W(x)‖ over the probes (normalized maps) next to the
/// perturbation bound √(5√(3d)·ε/√(2π)).
pub fn gate_perturbation_gap(
    gates: &GateBank,
    epsilon: f64,
    n_probe: usize,
    seed: u64,
) -> Result<PerturbationReport> {
    if epsilon < 0.0 {
        return Err(GaluError::InvalidArgument("epsilon must be >= 0".into()));
    }
    if n_probe == 0 {
        return Err(GaluError::InvalidArgument("need at least one probe".into()));
    }
    let d = gates.dim();
    let k = gates.width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perturbed = gates.gates().clone();
    let mut dir = DVector::<f64>::zeros(d);
    for j in 0..k {
        loop {
            for i in 0..d {
                dir[i] = StandardNormal.sample(&mut rng);
            }
            let n = dir.norm();
            if n > 0.0 {
                dir /= n;
                break;
            }
        }
        for i in 0..d {
            perturbed[(i, j)] += epsilon * dir[i];
        }
    }

    let mut probes = DMatrix::<f64>::zeros(n_probe, d);
    for p in 0..n_probe {
        loop {
            for i in 0..d {
                probes[(p, i)] = StandardNormal.sample(&mut rng);
            }
            let n = probes.row(p).norm();
            if n > 0.0 {
                for i in 0..d {
                    probes[(p, i)] /= n;
                }
                break;
            }
        }
    }

    let pre_u = &probes * gates.gates();
    let pre_w = &probes * &perturbed;
    let mut sup_sq = 0.0f64;
    for p in 0..n_probe {
        let mut flips = 0usize;
        for j in 0..k {
            if gate_open(pre_u[(p, j)]) != gate_open(pre_w[(p, j)]) {
                flips += 1;
            }
        }
        let x_norm_sq = probes.row(p).norm_squared();
        sup_sq = sup_sq.max(flips as f64 / k as f64 * x_norm_sq);
    }
    let perturbation_bound =
        (5.0 * (3.0 * d as f64).sqrt() * epsilon / (2.0 * std::f64::consts::PI).sqrt()).sqrt();
    Ok(PerturbationReport {
        empirical_sup: sup_sq.sqrt(),
        perturbation_bound,
    })
}

/// Full-batch objective of the normalized GaLU network under the given loss.
fn natural_objective(
    data: &LabeledSet,
    masks: &DMatrix<f64>,
    weights: &DMatrix<f64>,
    alpha: &DVector<f64>,
    loss: LossKind,
) -> f64 {
    let k = alpha.len() as f64;
    let out = (data.xs() * weights).component_mul(masks) * alpha / k.sqrt();
    loss_value(loss, &out, data.ys())
}

/// Maximum relative error between the analytic (W, α) gradient of the loss
/// and central finite differences with step 1e-5.
///
/// Gate-boundary and hinge-kink terms make the loss non-differentiable, so
/// instances where any |uⱼᵀxᵢ| < 1e-6 (or, for the hinge, any margin within
/// 1e-6 of the kink) are rejected and the gates resampled from a derived
/// seed, up to 10 attempts.
pub fn finite_diff_check(
    data: &LabeledSet,
    gates: &GateBank,
    params: &NaturalParams,
    loss: LossKind,
) -> Result<f64> {
    let d = data.dim();
    let k = gates.width();
    if params.dim() != d || params.width() != k {
        return Err(GaluError::DimensionMismatch {
            context: "finite diff params",
            expected: d * k,
            found: params.dim() * params.width(),
        });
    }
    let h = 1e-5;
    'attempt: for attempt in 0..10u64 {
        let bank = if attempt == 0 {
            gates.clone()
        } else {
            GateBank::generate(d, k, gates.source(), derive_seed(gates.seed(), attempt))
        };
        let pre = data.xs() * bank.gates();
        if pre.iter().any(|t| t.abs() < 1e-6) {
            continue 'attempt;
        }
        let masks = features::gate_masks(data, &bank);
        if loss == LossKind::Hinge {
            let out = (data.xs() * &params.weights).component_mul(&masks) * &params.alpha
                / (k as f64).sqrt();
            for i in 0..data.len() {
                if (1.0 - data.ys()[i] * out[i]).abs() < 1e-6 {
                    continue 'attempt;
                }
            }
        }

        // analytic gradient at params (full batch)
        let scale = 1.0 / (k as f64).sqrt();
        let out = (data.xs() * &params.weights).component_mul(&masks) * &params.alpha * scale;
        let dout = loss_gradient(loss, &out, data.ys());
        let gated = (data.xs() * &params.weights).component_mul(&masks);
        let grad_alpha = gated.transpose() * &dout * scale;
        let mut weighted = DMatrix::zeros(data.len(), k);
        for j in 0..k {
            for i in 0..data.len() {
                weighted[(i, j)] = dout[i] * params.alpha[j] * masks[(i, j)];
            }
        }
        let grad_w = data.xs().transpose() * weighted * scale;

        let mut max_rel = 0.0f64;
        let mut check = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            max_rel = max_rel.max(rel);
        };
        for j in 0..k {
            for r in 0..d {
                let mut wp = params.weights.clone();
                wp[(r, j)] += h;
                let mut wm = params.weights.clone();
                wm[(r, j)] -= h;
                check(
                    grad_w[(r, j)],
                    natural_objective(data, &masks, &wp, &params.alpha, loss),
                    natural_objective(data, &masks, &wm, &params.alpha, loss),
                );
            }
            let mut ap = params.alpha.clone();
            ap[j] += h;
            let mut am = params.alpha.clone();
            am[j] -= h;
            check(
                grad_alpha[j],
                natural_objective(data, &masks, &params.weights, &ap, loss),
                natural_objective(data, &masks, &params.weights, &am, loss),
            );
        }
        return Ok(max_rel);
    }
    Err(GaluError::Degenerate(
        "could not find a gate draw clear of boundaries in 10 attempts".into(),
    ))
}
