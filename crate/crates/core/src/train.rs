//! Losses, optimizers, a finite-difference gradient checker, and regression
//! fitting of linear / train / ring weight models.
//!
//! Fitting minimizes mean squared prediction error over a dataset of
//! `(x, y)` rows. Full-batch runs (the default) work from the sufficient
//! statistics `X'X`, `X'Y` and `|Y|^2`, which give the exact full-batch
//! gradient and loss at a per-epoch cost independent of the sample count.
//! The factorized models chain that dense gradient into the cores through
//! the ring-with-one-core-removed contractions. Runs are deterministic
//! given the seed; the returned parameters are the best-loss iterate seen.

use crate::format::{random_tr, tr_reconstruct_grad, FormatError, TrFormat};
use crate::tensor::{DenseTensor, TensorError};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("epsilon {eps} outside [1e-7, 1e-3]")]
    BadEpsilon { eps: f64 },
    #[error("fit diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("normal equations solve failed: {0}")]
    Solve(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Deterministic stream split: derive an independent seed from a base seed
/// and a stream index (splitmix64 finalizer).
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mean of squared differences between two equal-length vectors.
pub fn mse_loss(pred: &DenseTensor, target: &DenseTensor) -> Result<f64, TrainError> {
    if pred.len() != target.len() {
        return Err(TrainError::LengthMismatch {
            left: pred.len(),
            right: target.len(),
        });
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Root mean square of element differences between two same-shape tensors.
pub fn rmse_matrix(a: &DenseTensor, b: &DenseTensor) -> Result<f64, TrainError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        }
        .into());
    }
    Ok(mse_loss(a, b)?.sqrt())
}

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= self.tolerance
    }
}

/// Compare `analytic` against central differences of `f` at `params`,
/// perturbing one scalar at a time. The relative error uses the larger of
/// the two magnitudes as denominator, with an absolute floor so that
/// genuinely zero gradients compare by absolute difference.
pub fn grad_check<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    label: impl Fn(usize) -> String,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport, TrainError>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(TrainError::BadEpsilon { eps });
    }
    if params.len() != analytic.len() {
        return Err(TrainError::LengthMismatch {
            left: params.len(),
            right: analytic.len(),
        });
    }
    let mut work = params.to_vec();
    let mut relative_errors = Vec::with_capacity(params.len());
    let mut max_err = 0.0f64;
    let mut worst = 0usize;
    for i in 0..params.len() {
        let saved = work[i];
        work[i] = saved + eps;
        let plus = f(&work);
        work[i] = saved - eps;
        let minus = f(&work);
        work[i] = saved;
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs());
        let err = if denom < 1e-10 {
            (analytic[i] - numeric).abs()
        } else {
            (analytic[i] - numeric).abs() / denom
        };
        if err > max_err {
            max_err = err;
            worst = i;
        }
        relative_errors.push(err);
    }
    Ok(GradCheckReport {
        relative_errors,
        max_relative_error: max_err,
        worst_parameter: label(worst),
        tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        epsilon: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_adam_eps(),
        }
    }
}

/// Per-parameter optimizer state over a flat parameter vector.
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, dim: usize) -> Self {
        Self {
            kind,
            learning_rate,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p -= self.learning_rate * g;
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                self.t += 1;
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for ((p, &g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= self.learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
    }
}

/// Fitting hyperparameters. `batch_size = 0` means full batch. No
/// regularization term exists by design.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 2000,
            batch_size: 0,
            seed: 0,
            optimizer: OptimizerKind::adam_default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which weight model to fit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    Linear,
    /// Ring bonds with the closing bond pinned to 1: a genuine open train.
    TensorTrain { ranks: Vec<usize> },
    TensorRing { ranks: Vec<usize> },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Linear => "linear",
            ModelSpec::TensorTrain { .. } => "tt",
            ModelSpec::TensorRing { .. } => "tr",
        }
    }
}

/// Regression dataset plus the mode factorization used by factorized models.
pub struct FitProblem<'a> {
    pub x: &'a DenseTensor,
    pub y: &'a DenseTensor,
    pub input_dims: &'a [usize],
    pub output_dims: &'a [usize],
}

impl FitProblem<'_> {
    fn dims(&self) -> (usize, usize, usize) {
        (self.x.shape()[0], self.x.shape()[1], self.y.shape()[1])
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.x.order() != 2 || self.y.order() != 2 || self.x.shape()[0] != self.y.shape()[0] {
            return Err(TrainError::BadConfig(format!(
                "x {:?} and y {:?} must be [samples, features] with equal sample counts",
                self.x.shape(),
                self.y.shape()
            )));
        }
        let (_, i, o) = self.dims();
        if self.input_dims.iter().product::<usize>() != i {
            return Err(TrainError::BadConfig(format!(
                "input dims {:?} do not factor input size {i}",
                self.input_dims
            )));
        }
        if self.output_dims.iter().product::<usize>() != o {
            return Err(TrainError::BadConfig(format!(
                "output dims {:?} do not factor output size {o}",
                self.output_dims
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub wall_ms: f64,
}

pub struct FitResult {
    /// Recovered weight as a `[out, in]` matrix (row o maps x to y_o).
    pub weight: DenseTensor,
    /// Fitted cores for the factorized models.
    pub ring: Option<TrFormat>,
    pub trace: Vec<EpochRecord>,
    pub param_count: usize,
    pub final_loss: f64,
}

/// Closed-form least squares `W = (X'X)^-1 X'Y`, the oracle for the linear
/// model. Returns `[out, in]`.
pub fn linear_least_squares(problem: &FitProblem) -> Result<DenseTensor, TrainError> {
    problem.validate()?;
    let (_, i, o) = problem.dims();
    let sxx = problem.x.contract(problem.x, &[0], &[0])?; // [I, I]
    let sxy = problem.x.contract(problem.y, &[0], &[0])?; // [I, O]
    let a = nalgebra::DMatrix::from_row_slice(i, i, sxx.data());
    let b = nalgebra::DMatrix::from_row_slice(i, o, sxy.data());
    let solved = a
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&b))
        .or_else(|| a.lu().solve(&b))
        .ok_or_else(|| TrainError::Solve("normal equations are singular".into()))?;
    // solved is [I, O]; emit [O, I]
    let mut w = vec![0.0; o * i];
    for r in 0..i {
        for c in 0..o {
            w[c * i + r] = solved[(r, c)];
        }
    }
    Ok(DenseTensor::new(vec![o, i], w)?)
}

/// Internal parameterization of the weight being fitted.
enum WeightModel {
    Linear {
        i: usize,
        o: usize,
    },
    Ring {
        template: TrFormat,
        input_dims: Vec<usize>,
        output_dims: Vec<usize>,
    },
}

impl WeightModel {
    fn init_params(&self) -> Vec<f64> {
        match self {
            WeightModel::Linear { i, o } => vec![0.0; i * o],
            WeightModel::Ring { template, .. } => template
                .cores()
                .iter()
                .flat_map(|c| c.data().iter().copied())
                .collect(),
        }
    }

    fn ring_from_flat(&self, flat: &[f64]) -> Option<TrFormat> {
        match self {
            WeightModel::Linear { .. } => None,
            WeightModel::Ring { template, .. } => {
                let mut cores = Vec::with_capacity(template.cores().len());
                let mut offset = 0;
                for core in template.cores() {
                    let len = core.len();
                    cores.push(
                        DenseTensor::new(core.shape().to_vec(), flat[offset..offset + len].to_vec())
                            .expect("template shape"),
                    );
                    offset += len;
                }
                Some(TrFormat::new(cores).expect("template adjacency"))
            }
        }
    }

    /// Unfold the current parameters to the `[I, O]` weight matrix.
    fn weight_in_out(&self, flat: &[f64]) -> DenseTensor {
        match self {
            WeightModel::Linear { i, o } => {
                DenseTensor::new(vec![*i, *o], flat.to_vec()).expect("flat length")
            }
            WeightModel::Ring {
                input_dims,
                output_dims,
                ..
            } => {
                let ring = self.ring_from_flat(flat).expect("ring model");
                let i: usize = input_dims.iter().product();
                let o: usize = output_dims.iter().product();
                ring.reconstruct().reshape(&[i, o]).expect("mode product")
            }
        }
    }

    /// Chain a gradient on the `[I, O]` weight into the flat parameters.
    fn chain_grad(&self, flat: &[f64], grad_w: &DenseTensor) -> Result<Vec<f64>, TrainError> {
        match self {
            WeightModel::Linear { .. } => Ok(grad_w.data().to_vec()),
            WeightModel::Ring {
                input_dims,
                output_dims,
                ..
            } => {
                let ring = self.ring_from_flat(flat).expect("ring model");
                let dims: Vec<usize> = input_dims
                    .iter()
                    .chain(output_dims.iter())
                    .copied()
                    .collect();
                let grad_t = grad_w.reshape(&dims)?;
                let core_grads = tr_reconstruct_grad(&ring, &grad_t)?;
                Ok(core_grads
                    .iter()
                    .flat_map(|c| c.data().iter().copied())
                    .collect())
            }
        }
    }
}

/// Fit a weight model to `(x, y)` rows by minimizing mean squared error with
/// the configured optimizer. Deterministic given the seed; the returned
/// weight is the lowest-loss iterate encountered, and the trace records the
/// loss at the start of every epoch plus the post-training loss.
pub fn fit_model(
    spec: &ModelSpec,
    problem: &FitProblem,
    cfg: &FitConfig,
) -> Result<FitResult, TrainError> {
    cfg.validate()?;
    problem.validate()?;
    let (n, i, o) = problem.dims();

    let model = match spec {
        ModelSpec::Linear => WeightModel::Linear { i, o },
        ModelSpec::TensorTrain { ranks } => {
            if ranks.first() != Some(&1) {
                return Err(TrainError::BadConfig(format!(
                    "train ranks must pin the closing bond to 1, got {:?}",
                    ranks
                )));
            }
            ring_model(problem, ranks, cfg.seed)?
        }
        ModelSpec::TensorRing { ranks } => ring_model(problem, ranks, cfg.seed)?,
    };

    let mut params = model.init_params();
    let param_count = params.len();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, param_count);

    // Sufficient statistics for exact full-batch loss and gradient.
    let sxx = problem.x.contract(problem.x, &[0], &[0])?; // [I, I]
    let sxy = problem.x.contract(problem.y, &[0], &[0])?; // [I, O]
    let y_sq: f64 = problem.y.data().iter().map(|v| v * v).sum();
    let scale = 1.0 / (n as f64 * o as f64);

    let full_loss_grad = |flat: &[f64]| -> Result<(f64, DenseTensor), TrainError> {
        let w = model.weight_in_out(flat);
        let sxx_w = sxx.contract(&w, &[1], &[0])?; // [I, O]
        let quad = w.dot(&sxx_w)?;
        let cross = w.dot(&sxy)?;
        let loss = scale * (quad - 2.0 * cross + y_sq);
        let grad_w = sxx_w.sub(&sxy)?.scale(2.0 * scale);
        Ok((loss, grad_w))
    };

    let full_batch = cfg.batch_size == 0 || cfg.batch_size >= n;
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let mut best_loss = f64::INFINITY;
    let mut best_params = params.clone();
    let started = Instant::now();

    for epoch in 0..cfg.epochs {
        if full_batch {
            let (loss, grad_w) = full_loss_grad(&params)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            if loss < best_loss {
                best_loss = loss;
                best_params.copy_from_slice(&params);
            }
            trace.push(EpochRecord {
                epoch,
                loss,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            let grads = model.chain_grad(&params, &grad_w)?;
            opt.step(&mut params, &grads);
        } else {
            // Minibatch pass with an epoch-seeded shuffle.
            let (loss, _) = full_loss_grad(&params)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            if loss < best_loss {
                best_loss = loss;
                best_params.copy_from_slice(&params);
            }
            trace.push(EpochRecord {
                epoch,
                loss,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            let order = shuffled_indices(n, mix_seed(cfg.seed, epoch as u64 + 1));
            for chunk in order.chunks(cfg.batch_size) {
                let grads = minibatch_grad(&model, &params, problem, chunk)?;
                opt.step(&mut params, &grads);
            }
        }
    }

    let (final_loss, _) = full_loss_grad(&params)?;
    if !final_loss.is_finite() {
        return Err(TrainError::Diverged { epoch: cfg.epochs });
    }
    if final_loss < best_loss {
        best_loss = final_loss;
        best_params.copy_from_slice(&params);
    }
    trace.push(EpochRecord {
        epoch: cfg.epochs,
        loss: final_loss,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    });

    let weight = model
        .weight_in_out(&best_params)
        .permute(&[1, 0])
        .expect("matrix transpose");
    Ok(FitResult {
        weight,
        ring: model.ring_from_flat(&best_params),
        trace,
        param_count,
        final_loss: best_loss,
    })
}

/// Initial reconstruction scale for factorized fits. Cores are drawn at
/// unit reconstruction variance and then shrunk so the initial weight has
/// this root-mean-square: starting below the data scale lets the fitted
/// signal grow along gradient directions instead of reorganizing a
/// full-scale random start, which is markedly more reliable on the
/// multilinear objective.
const RING_INIT_RMS: f64 = 0.3;

fn ring_model(
    problem: &FitProblem,
    ranks: &[usize],
    seed: u64,
) -> Result<WeightModel, TrainError> {
    let dims: Vec<usize> = problem
        .input_dims
        .iter()
        .chain(problem.output_dims.iter())
        .copied()
        .collect();
    let raw = random_tr(&dims, ranks, seed)?;
    let per_core = RING_INIT_RMS.powf(1.0 / dims.len() as f64);
    let cores = raw.cores().iter().map(|c| c.scale(per_core)).collect();
    let template = TrFormat::new(cores)?;
    Ok(WeightModel::Ring {
        template,
        input_dims: problem.input_dims.to_vec(),
        output_dims: problem.output_dims.to_vec(),
    })
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

fn minibatch_grad(
    model: &WeightModel,
    params: &[f64],
    problem: &FitProblem,
    rows: &[usize],
) -> Result<Vec<f64>, TrainError> {
    let (_, i, o) = problem.dims();
    let b = rows.len();
    let mut xb = Vec::with_capacity(b * i);
    let mut yb = Vec::with_capacity(b * o);
    for &r in rows {
        xb.extend_from_slice(&problem.x.data()[r * i..(r + 1) * i]);
        yb.extend_from_slice(&problem.y.data()[r * o..(r + 1) * o]);
    }
    let xb = DenseTensor::new(vec![b, i], xb)?;
    let yb = DenseTensor::new(vec![b, o], yb)?;
    let w = model.weight_in_out(params);
    let resid = xb.contract(&w, &[1], &[0])?.sub(&yb)?; // [B, O]
    let grad_w = xb
        .contract(&resid, &[0], &[0])?
        .scale(2.0 / (b as f64 * o as f64));
    model.chain_grad(params, &grad_w)
}
