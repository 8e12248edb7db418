//! Tensor train and tensor ring factorized representations.
//!
//! Both formats store a d-order tensor as a chain of 3-order cores, core k
//! holding shape `[R_{k-1}, L_k, R_k]`. A train fixes the border ranks to 1;
//! a ring closes the chain instead (`R_d = R_0`, any size), which is the
//! defining relaxation. A rank-R ring equals the sum of R trains obtained by
//! slicing the closing bond.

use crate::tensor::{DenseTensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("no cores supplied")]
    Empty,
    #[error("core {index} must be 3-order, got shape {shape:?}")]
    CoreOrder { index: usize, shape: Vec<usize> },
    #[error("core {index} right rank {right} does not match core {next} left rank {left}")]
    AdjacentRankMismatch {
        index: usize,
        right: usize,
        next: usize,
        left: usize,
    },
    #[error("train border ranks must be 1, got left {left} and right {right}")]
    BorderRank { left: usize, right: usize },
    #[error("ring closure mismatch: last core right rank {right} vs first core left rank {left}")]
    RingClosure { right: usize, left: usize },
    #[error("expected {expected} ranks for {cores} cores, got {got}")]
    RankCount {
        expected: usize,
        cores: usize,
        got: usize,
    },
    #[error("dimension products do not factor as {dense_in} x {dense_out}: dims {dims:?}")]
    SplitMismatch {
        dense_in: usize,
        dense_out: usize,
        dims: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn check_cores(cores: &[DenseTensor]) -> Result<(), FormatError> {
    if cores.is_empty() {
        return Err(FormatError::Empty);
    }
    for (i, core) in cores.iter().enumerate() {
        if core.order() != 3 {
            return Err(FormatError::CoreOrder {
                index: i,
                shape: core.shape().to_vec(),
            });
        }
    }
    for i in 0..cores.len() - 1 {
        let right = cores[i].shape()[2];
        let left = cores[i + 1].shape()[0];
        if right != left {
            return Err(FormatError::AdjacentRankMismatch {
                index: i,
                right,
                next: i + 1,
                left,
            });
        }
    }
    Ok(())
}

/// Open chain of cores with unit border ranks.
#[derive(Debug, Clone)]
pub struct TtFormat {
    cores: Vec<DenseTensor>,
}

impl TtFormat {
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self, FormatError> {
        check_cores(&cores)?;
        let left = cores[0].shape()[0];
        let right = cores[cores.len() - 1].shape()[2];
        if left != 1 || right != 1 {
            return Err(FormatError::BorderRank { left, right });
        }
        Ok(Self { cores })
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    /// Mode sizes `[L_1, ..., L_d]`.
    pub fn dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[1]).collect()
    }

    /// Bond ranks `[R_0, ..., R_d]` including the unit borders.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks: Vec<usize> = self.cores.iter().map(|c| c.shape()[0]).collect();
        ranks.push(self.cores[self.cores.len() - 1].shape()[2]);
        ranks
    }

    pub fn param_count(&self) -> usize {
        self.cores.iter().map(|c| c.len()).sum()
    }

    /// Dense tensor of shape `[L_1, ..., L_d]` from the core chain.
    pub fn reconstruct(&self) -> DenseTensor {
        let chained = contract_chain(&self.cores);
        // [1, L_1..L_d, 1] -> [L_1..L_d]
        let dims = self.dims();
        chained.reshape(&dims).expect("unit borders")
    }
}

/// Circular chain of cores; the closing bond `R_d = R_0` may exceed 1.
#[derive(Debug, Clone)]
pub struct TrFormat {
    cores: Vec<DenseTensor>,
}

impl TrFormat {
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self, FormatError> {
        check_cores(&cores)?;
        let right = cores[cores.len() - 1].shape()[2];
        let left = cores[0].shape()[0];
        if right != left {
            return Err(FormatError::RingClosure { right, left });
        }
        Ok(Self { cores })
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn core_count(&self) -> usize {
        self.cores.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[1]).collect()
    }

    /// Bond ranks `[R_0, ..., R_{d-1}]`; the closing rank repeats `R_0`.
    pub fn ranks(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[0]).collect()
    }

    pub fn closing_rank(&self) -> usize {
        self.cores[0].shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.cores.iter().map(|c| c.len()).sum()
    }

    /// Dense tensor of shape `[L_1, ..., L_d]`: chain the cores, then trace
    /// the closing bond pair.
    pub fn reconstruct(&self) -> DenseTensor {
        let chained = contract_chain(&self.cores);
        // [R_0, L_1..L_d, R_0] -> trace over the closing pair.
        chained
            .trace_pair(0, chained.order() - 1)
            .expect("ring closure checked")
    }

    /// Split the closing bond: a rank-R ring is the sum of R trains, train k
    /// taking slice k of the first core's left bond and of the last core's
    /// right bond.
    pub fn as_tt_sum(&self) -> Vec<TtFormat> {
        let r = self.closing_rank();
        let d = self.cores.len();
        (0..r)
            .map(|t| {
                let cores: Vec<DenseTensor> = if d == 1 {
                    vec![slice_right(&slice_left(&self.cores[0], t), t)]
                } else {
                    let mut cs = Vec::with_capacity(d);
                    cs.push(slice_left(&self.cores[0], t));
                    cs.extend(self.cores[1..d - 1].iter().cloned());
                    cs.push(slice_right(&self.cores[d - 1], t));
                    cs
                };
                TtFormat::new(cores).expect("slicing preserves adjacency")
            })
            .collect()
    }

    /// Relabel the starting core: cores `[k, k+1, ..., k-1]`. Reconstruction
    /// is invariant up to the matching cyclic permutation of dense axes.
    pub fn rotated(&self, offset: usize) -> Self {
        let d = self.cores.len();
        let k = offset % d;
        let mut cores = Vec::with_capacity(d);
        cores.extend(self.cores[k..].iter().cloned());
        cores.extend(self.cores[..k].iter().cloned());
        Self { cores }
    }
}

/// Contract a rank-consistent chain left to right, keeping the outer bond
/// axes open: result shape `[R_0, L_1, ..., L_d, R_d]`.
fn contract_chain(cores: &[DenseTensor]) -> DenseTensor {
    let first = &cores[0];
    let mut acc = first.clone();
    for core in &cores[1..] {
        let last = acc.order() - 1;
        acc = acc.contract(core, &[last], &[0]).expect("ranks checked");
    }
    acc
}

fn slice_left(core: &DenseTensor, index: usize) -> DenseTensor {
    let [r0, l, r1] = [core.shape()[0], core.shape()[1], core.shape()[2]];
    debug_assert!(index < r0);
    let block = l * r1;
    let data = core.data()[index * block..(index + 1) * block].to_vec();
    DenseTensor::new(vec![1, l, r1], data).expect("slice size")
}

fn slice_right(core: &DenseTensor, index: usize) -> DenseTensor {
    let [r0, l, r1] = [core.shape()[0], core.shape()[1], core.shape()[2]];
    debug_assert!(index < r1);
    let mut data = Vec::with_capacity(r0 * l);
    for a in 0..r0 {
        for i in 0..l {
            data.push(core.data()[(a * l + i) * r1 + index]);
        }
    }
    DenseTensor::new(vec![r0, l, 1], data).expect("slice size")
}

/// Total stored scalars of a core chain given as `(ranks, dims)`:
/// sum of `R_{k-1} * L_k * R_k` volumes. `ranks` lists the d ring bonds
/// `[R_0..R_{d-1}]`; the closing bond repeats `R_0`.
pub fn plan_param_count(dims: &[usize], ranks: &[usize]) -> Result<usize, FormatError> {
    if ranks.len() != dims.len() {
        return Err(FormatError::RankCount {
            expected: dims.len(),
            cores: dims.len(),
            got: ranks.len(),
        });
    }
    let d = dims.len();
    Ok((0..d).map(|k| ranks[k] * dims[k] * ranks[(k + 1) % d]).sum())
}

/// Dense parameter count divided by factorized parameter count. The ring's
/// mode sizes must factor as `dense_in x dense_out` for some split point.
pub fn compression_ratio(
    dense_in: usize,
    dense_out: usize,
    f: &TrFormat,
) -> Result<f64, FormatError> {
    let dims = f.dims();
    let mut prefix = 1usize;
    let mut split = None;
    for n in 0..=dims.len() {
        if prefix == dense_in {
            let suffix: usize = dims[n..].iter().product();
            if suffix == dense_out {
                split = Some(n);
                break;
            }
        }
        if n < dims.len() {
            prefix *= dims[n];
        }
    }
    if split.is_none() {
        return Err(FormatError::SplitMismatch {
            dense_in,
            dense_out,
            dims,
        });
    }
    Ok((dense_in as f64 * dense_out as f64) / f.param_count() as f64)
}

/// Seed-deterministic random ring. Core entries are i.i.d. Gaussian with
/// standard deviation `(prod of ring ranks)^(-1/(2d))`, which makes the
/// reconstructed tensor's elements have unit variance in expectation: the
/// reconstruction sums `prod(R_k)` products of d independent core entries,
/// so each product must contribute variance `1 / prod(R_k)`.
pub fn random_tr(dims: &[usize], ranks: &[usize], seed: u64) -> Result<TrFormat, FormatError> {
    if ranks.len() != dims.len() {
        return Err(FormatError::RankCount {
            expected: dims.len(),
            cores: dims.len(),
            got: ranks.len(),
        });
    }
    let d = dims.len();
    let rank_product: f64 = ranks.iter().map(|&r| r as f64).product();
    let sigma = rank_product.powf(-1.0 / (2.0 * d as f64));
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cores = (0..d)
        .map(|k| {
            let shape = vec![ranks[k], dims[k], ranks[(k + 1) % d]];
            let len = shape.iter().product();
            let data: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
            DenseTensor::new(shape, data).expect("shape volume")
        })
        .collect();
    TrFormat::new(cores)
}

/// Gradient of `<grad_out, reconstruct(cores)>` with respect to every core.
///
/// For core k the gradient is the ring with that core removed, contracted
/// against `grad_out`, leaving the core's two bond edges and mode open. Each
/// core is handled by rotating the ring so it sits last (trace cyclicity),
/// then absorbing the other d-1 cores into the permuted `grad_out`.
pub fn tr_reconstruct_grad(
    f: &TrFormat,
    grad_out: &DenseTensor,
) -> Result<Vec<DenseTensor>, FormatError> {
    let dims = f.dims();
    if grad_out.shape() != dims.as_slice() {
        return Err(TensorError::ShapeMismatch {
            left: grad_out.shape().to_vec(),
            right: dims,
        }
        .into());
    }
    let d = f.cores.len();
    if d == 1 {
        // W[l] = sum_r G[r, l, r]; gradient is grad_out on the bond diagonal.
        let r = f.closing_rank();
        let l = dims[0];
        let mut data = vec![0.0; r * l * r];
        for a in 0..r {
            for i in 0..l {
                data[(a * l + i) * r + a] = grad_out.data()[i];
            }
        }
        return Ok(vec![DenseTensor::new(vec![r, l, r], data).expect("volume")]);
    }

    let mut grads = Vec::with_capacity(d);
    for k in 0..d {
        // Axis j of the permuted gradient is mode (k+1+j) mod d, so the
        // rotated ring starting at core k+1 consumes axes front to back.
        let perm: Vec<usize> = (0..d).map(|j| (k + 1 + j) % d).collect();
        let mut acc = grad_out.permute(&perm)?;
        for (step, j) in (1..d).map(|s| (k + s) % d).enumerate() {
            let core = &f.cores[j];
            if step == 0 {
                // [L_rest.., L_k] x [R_k, L_{k+1}, R_{k+1}] over the mode.
                acc = acc.contract(core, &[0], &[1])?;
            } else {
                // Mode at axis 0, live bond at the end.
                let last = acc.order() - 1;
                acc = acc.contract(core, &[0, last], &[1, 0])?;
            }
        }
        // acc = [L_k, R_k (right edge of core k), R_{k-1}.. i.e. left edge];
        // reorder to the core layout [left bond, mode, right bond].
        grads.push(acc.permute(&[2, 0, 1])?);
    }
    Ok(grads)
}
