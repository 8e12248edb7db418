//! Synthetic weight-recovery benchmark: generate a low-rank weight matrix,
//! sample noisy regression data from it, fit linear / train / ring models at
//! matched optimizer settings, and report recovery error per noise level.
//!
//! The ground-truth weight is the dense reconstruction of a seed-random
//! rank-`gen_rank` ring over eight modes of size 3 (81 x 81 once unfolded),
//! rescaled so its entries have unit root-mean-square. A matrix-rank
//! generator (`W = A B'`) is available as an alternate regime.

use crate::format::{random_tr, TrFormat};
use crate::tensor::DenseTensor;
use crate::train::{
    fit_model, mix_seed, rmse_matrix, FitConfig, FitProblem, ModelSpec, TrainError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// How the ground-truth weight is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    /// Dense reconstruction of a random ring (the benchmark default).
    Ring,
    /// Plain matrix rank-r factor product `A B'`.
    Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Weight is `dim x dim`.
    pub dim: usize,
    pub n_samples: usize,
    /// Per-coordinate variance of the sampled inputs.
    pub input_variance: f64,
    pub noise_sigmas: Vec<f64>,
    pub gen_rank: usize,
    pub generator: GeneratorKind,
    /// Mode factorization of the input side (product must equal `dim`).
    pub input_dims: Vec<usize>,
    /// Mode factorization of the output side (product must equal `dim`).
    pub output_dims: Vec<usize>,
    /// Ring bonds for the ring fit.
    pub tr_ranks: Vec<usize>,
    /// Ring bonds for the train fit; the closing bond must be 1.
    pub tt_ranks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub fit: FitConfig,
    /// Noise level whose first-seed recovered weights are exported as grids.
    pub display_sigma: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 81,
            n_samples: 3200,
            input_variance: 0.5,
            noise_sigmas: vec![0.01, 0.05, 0.1, 0.2, 0.3],
            gen_rank: 3,
            generator: GeneratorKind::Ring,
            input_dims: vec![3, 3, 3, 3],
            output_dims: vec![3, 3, 3, 3],
            tr_ranks: vec![3; 8],
            // near-matched budget: 198 scalars vs the ring fit's 216, with a
            // slightly larger bond mid-chain where open trains want capacity
            tt_ranks: vec![1, 3, 3, 3, 4, 3, 3, 3],
            seeds: (0..10).collect(),
            fit: FitConfig::default(),
            display_sigma: 0.05,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let in_prod: usize = self.input_dims.iter().product();
        let out_prod: usize = self.output_dims.iter().product();
        if in_prod != self.dim || out_prod != self.dim {
            return Err(TrainError::BadConfig(format!(
                "mode factorizations {:?} / {:?} must multiply to dim {}",
                self.input_dims, self.output_dims, self.dim
            )));
        }
        if self.noise_sigmas.iter().any(|&s| s < 0.0) {
            return Err(TrainError::BadConfig("noise sigma must be >= 0".into()));
        }
        if self.gen_rank == 0 {
            return Err(TrainError::BadConfig("gen_rank must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(TrainError::BadConfig("need at least one seed".into()));
        }
        self.fit.validate()
    }

    fn weight_dims(&self) -> Vec<usize> {
        self.input_dims
            .iter()
            .chain(self.output_dims.iter())
            .copied()
            .collect()
    }
}

/// Ground-truth weight as an `[out, in]` matrix, scaled to unit
/// root-mean-square entry, plus the generating ring (rescaled to match)
/// when the ring generator is used.
pub fn generate_lowrank_weight(
    cfg: &SyntheticConfig,
    seed: u64,
) -> Result<(DenseTensor, Option<TrFormat>), TrainError> {
    cfg.validate()?;
    match cfg.generator {
        GeneratorKind::Ring => {
            let dims = cfg.weight_dims();
            let ranks = vec![cfg.gen_rank; dims.len()];
            let ring = random_tr(&dims, &ranks, seed)?;
            let w_in_out = ring.reconstruct().reshape(&[cfg.dim, cfg.dim])?;
            let rms = (w_in_out.data().iter().map(|v| v * v).sum::<f64>()
                / w_in_out.len() as f64)
                .sqrt();
            let scale = 1.0 / rms;
            let w = w_in_out.permute(&[1, 0])?.scale(scale);
            // Fold the rescale into the first core so the kept generator
            // reconstructs the scaled weight exactly.
            let mut cores = ring.cores().to_vec();
            cores[0] = cores[0].scale(scale);
            let generator = TrFormat::new(cores)?;
            Ok((w, Some(generator)))
        }
        GeneratorKind::Matrix => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 1.0).expect("unit sigma");
            let r = cfg.gen_rank;
            let a: Vec<f64> = (0..cfg.dim * r).map(|_| normal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..cfg.dim * r).map(|_| normal.sample(&mut rng)).collect();
            let a = DenseTensor::new(vec![cfg.dim, r], a)?;
            let b = DenseTensor::new(vec![cfg.dim, r], b)?;
            let w = a.contract(&b, &[1], &[1])?;
            let rms = (w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
            Ok((w.scale(1.0 / rms), None))
        }
    }
}

/// Draw `n_samples` rows `x ~ N(0, input_variance I)` and responses
/// `y = W x + eps`, `eps ~ N(0, sigma^2 I)`. Deterministic per seed.
pub fn generate_dataset(
    w: &DenseTensor,
    cfg: &SyntheticConfig,
    sigma: f64,
    seed: u64,
) -> Result<(DenseTensor, DenseTensor), TrainError> {
    let (o_len, i_len) = (w.shape()[0], w.shape()[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_normal = Normal::new(0.0, cfg.input_variance.sqrt()).expect("positive variance");
    let x_data: Vec<f64> = (0..cfg.n_samples * i_len)
        .map(|_| x_normal.sample(&mut rng))
        .collect();
    let x = DenseTensor::new(vec![cfg.n_samples, i_len], x_data)?;
    let mut y = x.contract(w, &[1], &[1])?; // [n, O]
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("positive sigma");
        let data: Vec<f64> = y
            .data()
            .iter()
            .map(|v| v + noise.sample(&mut rng))
            .collect();
        y = DenseTensor::new(vec![cfg.n_samples, o_len], data)?;
    }
    Ok((x, y))
}

#[derive(Debug, Clone)]
pub struct RecoveryCell {
    pub model: &'static str,
    pub sigma: f64,
    pub seed: u64,
    /// NaN when the fit diverged.
    pub rmse: f64,
    pub params: usize,
    pub epochs: usize,
    pub wall_ms: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct Heatmaps {
    pub sigma: f64,
    pub seed: u64,
    pub truth: DenseTensor,
    pub recovered: Vec<(&'static str, DenseTensor)>,
}

#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub cells: Vec<RecoveryCell>,
    pub heatmaps: Option<Heatmaps>,
    /// Loss traces for the display cell, per model.
    pub display_traces: Vec<(&'static str, Vec<crate::train::EpochRecord>)>,
}

impl RecoveryReport {
    pub fn diverged_count(&self) -> usize {
        self.cells.iter().filter(|c| c.diverged).count()
    }

    pub fn median_rmse(&self, model: &str, sigma: f64) -> Option<f64> {
        let mut vals: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.model == model && c.sigma == sigma && !c.diverged)
            .map(|c| c.rmse)
            .collect();
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).expect("finite rmse"));
        Some(median_of_sorted(&vals))
    }
}

pub fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

const MODELS: [&str; 3] = ["linear", "tt", "tr"];

fn model_spec(cfg: &SyntheticConfig, model: &str) -> ModelSpec {
    match model {
        "linear" => ModelSpec::Linear,
        "tt" => ModelSpec::TensorTrain {
            ranks: cfg.tt_ranks.clone(),
        },
        "tr" => ModelSpec::TensorRing {
            ranks: cfg.tr_ranks.clone(),
        },
        other => unreachable!("unknown model {other}"),
    }
}

/// Fit every model at every `(sigma, seed)` grid point and collect recovery
/// errors. Grid cells run in parallel; output order and all numeric results
/// are independent of the worker count.
pub fn run_recovery(cfg: &SyntheticConfig) -> Result<RecoveryReport, TrainError> {
    cfg.validate()?;
    let grid: Vec<(usize, u64, usize, f64)> = cfg
        .seeds
        .iter()
        .enumerate()
        .flat_map(|(si, &seed)| {
            cfg.noise_sigmas
                .iter()
                .enumerate()
                .map(move |(gi, &sigma)| (si, seed, gi, sigma))
        })
        .collect();

    let results: Vec<Result<(Vec<RecoveryCell>, Option<Heatmaps>, Vec<(&'static str, Vec<crate::train::EpochRecord>)>), TrainError>> = grid
        .par_iter()
        .map(|&(_, seed, gi, sigma)| run_cell(cfg, seed, gi, sigma))
        .collect();

    let mut cells = Vec::with_capacity(grid.len() * MODELS.len());
    let mut heatmaps = None;
    let mut display_traces = Vec::new();
    for result in results {
        let (cell_group, maps, traces) = result?;
        cells.extend(cell_group);
        if maps.is_some() && heatmaps.is_none() {
            heatmaps = maps;
            display_traces = traces;
        }
    }
    Ok(RecoveryReport {
        cells,
        heatmaps,
        display_traces,
    })
}

#[allow(clippy::type_complexity)]
fn run_cell(
    cfg: &SyntheticConfig,
    seed: u64,
    sigma_index: usize,
    sigma: f64,
) -> Result<(Vec<RecoveryCell>, Option<Heatmaps>, Vec<(&'static str, Vec<crate::train::EpochRecord>)>), TrainError> {
    let (w_true, _) = generate_lowrank_weight(cfg, seed)?;
    let data_seed = mix_seed(seed, 101 + sigma_index as u64);
    let (x, y) = generate_dataset(&w_true, cfg, sigma, data_seed)?;
    let problem = FitProblem {
        x: &x,
        y: &y,
        input_dims: &cfg.input_dims,
        output_dims: &cfg.output_dims,
    };

    let is_display = sigma == cfg.display_sigma && seed == cfg.seeds[0];
    let mut cells = Vec::with_capacity(MODELS.len());
    let mut recovered = Vec::new();
    let mut traces = Vec::new();
    for (mi, &model) in MODELS.iter().enumerate() {
        let mut fit_cfg = cfg.fit.clone();
        fit_cfg.seed = mix_seed(seed, 500 + mi as u64);
        let spec = model_spec(cfg, model);
        let started = Instant::now();
        match fit_model(&spec, &problem, &fit_cfg) {
            Ok(fit) => {
                let rmse = rmse_matrix(&fit.weight, &w_true)?;
                cells.push(RecoveryCell {
                    model,
                    sigma,
                    seed,
                    rmse,
                    params: fit.param_count,
                    epochs: fit_cfg.epochs,
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                    diverged: false,
                });
                if is_display {
                    recovered.push((model, fit.weight.clone()));
                    traces.push((model, fit.trace));
                }
            }
            Err(TrainError::Diverged { .. }) => {
                cells.push(RecoveryCell {
                    model,
                    sigma,
                    seed,
                    rmse: f64::NAN,
                    params: 0,
                    epochs: fit_cfg.epochs,
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                    diverged: true,
                });
            }
            Err(other) => return Err(other),
        }
    }
    let heatmaps = if is_display {
        Some(Heatmaps {
            sigma,
            seed,
            truth: w_true,
            recovered,
        })
    } else {
        None
    };
    Ok((cells, heatmaps, traces))
}

/// Cell grid as CSV (`model,sigma,seed,rmse,params,epochs,wall_ms`).
pub fn recovery_csv(report: &RecoveryReport) -> String {
    let mut out = String::from("model,sigma,seed,rmse,params,epochs,wall_ms\n");
    for c in &report.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.1}\n",
            c.model, c.sigma, c.seed, c.rmse, c.params, c.epochs, c.wall_ms
        ));
    }
    out
}

/// Human-readable median table per model and noise level.
pub fn recovery_summary(report: &RecoveryReport, cfg: &SyntheticConfig) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "weight recovery over {} seeds ({} samples, {}x{} weight)\n",
        cfg.seeds.len(),
        cfg.n_samples,
        cfg.dim,
        cfg.dim
    ));
    out.push_str("sigma    model    median_rmse   params\n");
    for &sigma in &cfg.noise_sigmas {
        for model in MODELS {
            let median = report
                .median_rmse(model, sigma)
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| "diverged".into());
            let params = report
                .cells
                .iter()
                .find(|c| c.model == model && !c.diverged)
                .map(|c| c.params)
                .unwrap_or(0);
            out.push_str(&format!("{sigma:<8} {model:<8} {median:<13} {params}\n"));
        }
    }
    let diverged = report.diverged_count();
    if diverged > 0 {
        out.push_str(&format!("{diverged} cell(s) diverged\n"));
    }
    out
}

/// Dense grid CSV for one matrix (heatmap data for external plotting).
pub fn matrix_grid_csv(m: &DenseTensor) -> String {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let mut out = String::new();
    for r in 0..rows {
        let row: Vec<String> = (0..cols)
            .map(|c| format!("{}", m.data()[r * cols + c]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
