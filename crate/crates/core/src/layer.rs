//! The tensor ring layer: a linear map `y = W x` whose weight is stored only
//! as ring cores and applied by sequential contraction.
//!
//! The weight tensor over modes `[I_1..I_n, O_1..O_m]` is a ring of n input
//! cores followed by m output cores. The forward pass absorbs one core per
//! step, left to right: the input tensor is contracted through the input
//! cores (consuming one mode and one bond edge per step, down to a bond-pair
//! matrix), then through the output cores (emitting one output mode per
//! step), and the ring's closing bond is traced at the final step. Keeping
//! the trace for last holds every intermediate at `O(I R^2)` scalars.
//!
//! The backward pass computes each core's gradient from the network with
//! that core removed (its two bond edges and its mode left open), contracted
//! against the input and the output gradient in the same left-to-right
//! order. Gradients are deliberately formed by these explicit per-core
//! contractions rather than by taping the forward pass; the operation counts
//! reported by the instrumented entry points measure exactly this schedule.

use crate::format::{random_tr, FormatError, TrFormat};
use crate::tensor::{DenseTensor, FlopReport, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("mode lists must be non-empty")]
    EmptyModes,
    #[error("expected {expected} cores for {n} input and {m} output modes, got {got}")]
    CoreCount {
        expected: usize,
        n: usize,
        m: usize,
        got: usize,
    },
    #[error("core {index} mode size {got} does not match planned size {expected}")]
    ModeMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("input length {got} does not match layer input size {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("output gradient length {got} does not match layer output size {expected}")]
    OutputLength { expected: usize, got: usize },
    #[error("batch input must be 2-order [batch, input], got shape {shape:?}")]
    BatchShape { shape: Vec<usize> },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Gradients of a scalar loss with respect to a layer's cores and its input.
#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub cores: Vec<DenseTensor>,
    pub input: DenseTensor,
}

/// Factorized linear map from `prod(input_dims)` to `prod(output_dims)`.
///
/// Cores live in a [`TrFormat`] whose mode sizes are the input sizes followed
/// by the output sizes; the ring closure ties the last output core back to
/// the first input core.
#[derive(Debug, Clone)]
pub struct TrLayer {
    input_dims: Vec<usize>,
    output_dims: Vec<usize>,
    cores: TrFormat,
}

impl TrLayer {
    pub fn new(
        input_dims: Vec<usize>,
        output_dims: Vec<usize>,
        cores: TrFormat,
    ) -> Result<Self, LayerError> {
        if input_dims.is_empty() || output_dims.is_empty() {
            return Err(LayerError::EmptyModes);
        }
        let n = input_dims.len();
        let m = output_dims.len();
        if cores.core_count() != n + m {
            return Err(LayerError::CoreCount {
                expected: n + m,
                n,
                m,
                got: cores.core_count(),
            });
        }
        let planned: Vec<usize> = input_dims
            .iter()
            .chain(output_dims.iter())
            .copied()
            .collect();
        for (index, (&expected, core)) in planned.iter().zip(cores.cores()).enumerate() {
            let got = core.shape()[1];
            if got != expected {
                return Err(LayerError::ModeMismatch {
                    index,
                    expected,
                    got,
                });
            }
        }
        Ok(Self {
            input_dims,
            output_dims,
            cores,
        })
    }

    /// Seed-deterministic random layer. `ranks` lists the ring bonds
    /// `[R_0..R_{n+m-1}]` starting at the closing bond.
    pub fn random(
        input_dims: Vec<usize>,
        output_dims: Vec<usize>,
        ranks: &[usize],
        seed: u64,
    ) -> Result<Self, LayerError> {
        let dims: Vec<usize> = input_dims
            .iter()
            .chain(output_dims.iter())
            .copied()
            .collect();
        let cores = random_tr(&dims, ranks, seed)?;
        Self::new(input_dims, output_dims, cores)
    }

    /// Exact embedding of a dense `[I, O]` matrix as a two-core ring with
    /// bonds `[1, I]`: the first core is the identity over the input index,
    /// the second holds the matrix. Used to saturate a ring so it reproduces
    /// a dense map bit for bit.
    pub fn exact_from_matrix(w_in_out: &DenseTensor) -> Result<Self, LayerError> {
        if w_in_out.order() != 2 {
            return Err(LayerError::BatchShape {
                shape: w_in_out.shape().to_vec(),
            });
        }
        let (i, o) = (w_in_out.shape()[0], w_in_out.shape()[1]);
        let mut ident = vec![0.0; i * i];
        for k in 0..i {
            ident[k * i + k] = 1.0;
        }
        let g_in = DenseTensor::new(vec![1, i, i], ident)?;
        let g_out = DenseTensor::new(vec![i, o, 1], w_in_out.data().to_vec())?;
        let cores = TrFormat::new(vec![g_in, g_out])?;
        Self::new(vec![i], vec![o], cores)
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn output_dims(&self) -> &[usize] {
        &self.output_dims
    }

    pub fn input_len(&self) -> usize {
        self.input_dims.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_dims.iter().product()
    }

    pub fn cores(&self) -> &TrFormat {
        &self.cores
    }

    pub fn param_count(&self) -> usize {
        self.cores.param_count()
    }

    /// Dense reconstruction unfolded to an `[I, O]` matrix: row index from
    /// the input multi-index (row-major), column from the output multi-index.
    /// This is the reference route the factorized forward must match.
    pub fn to_dense_matrix(&self) -> DenseTensor {
        let dense = self.cores.reconstruct();
        dense
            .reshape(&[self.input_len(), self.output_len()])
            .expect("mode product")
    }

    /// Apply the layer to a length-`I` vector.
    pub fn forward(&self, x: &DenseTensor) -> Result<DenseTensor, LayerError> {
        let mut scratch = FlopReport::new();
        self.forward_counted(x, &mut scratch)
    }

    /// `forward` plus exact multiply-add and peak-intermediate counts.
    pub fn forward_instrumented(
        &self,
        x: &DenseTensor,
    ) -> Result<(DenseTensor, FlopReport), LayerError> {
        let mut report = FlopReport::new();
        let y = self.forward_counted(x, &mut report)?;
        Ok((y, report))
    }

    fn forward_counted(
        &self,
        x: &DenseTensor,
        counter: &mut FlopReport,
    ) -> Result<DenseTensor, LayerError> {
        let i_len = self.input_len();
        if x.order() != 1 || x.len() != i_len {
            return Err(LayerError::InputLength {
                expected: i_len,
                got: x.len(),
            });
        }
        let n = self.input_dims.len();
        let m = self.output_dims.len();
        let cores = self.cores.cores();

        let x_t = x.reshape(&self.input_dims)?;
        // Absorb input cores: one mode and one bond edge per step.
        let mut acc = x_t.contract_counted(&cores[0], &[0], &[1], counter)?;
        for core in cores.iter().take(n).skip(1) {
            let last = acc.order() - 1;
            acc = acc.contract_counted(core, &[0, last], &[1, 0], counter)?;
        }
        // acc is now the bond-pair matrix [R_0, R_n].
        for core in cores.iter().take(n + m - 1).skip(n) {
            let last = acc.order() - 1;
            acc = acc.contract_counted(core, &[last], &[0], counter)?;
        }
        // Final output core: absorb the chain bond and trace the closing bond.
        let last = acc.order() - 1;
        acc = acc.contract_counted(&cores[n + m - 1], &[0, last], &[2, 0], counter)?;

        Ok(acc.reshape(&[self.output_len()])?)
    }

    /// Apply the layer to each row of a `[batch, I]` tensor; the batch axis
    /// is an uncontracted spectator.
    pub fn forward_batch(&self, x: &DenseTensor) -> Result<DenseTensor, LayerError> {
        if x.order() != 2 {
            return Err(LayerError::BatchShape {
                shape: x.shape().to_vec(),
            });
        }
        let (batch, i_len) = (x.shape()[0], x.shape()[1]);
        if i_len != self.input_len() {
            return Err(LayerError::InputLength {
                expected: self.input_len(),
                got: i_len,
            });
        }
        let o_len = self.output_len();
        let mut out = Vec::with_capacity(batch * o_len);
        for b in 0..batch {
            let row = DenseTensor::from_vec(x.data()[b * i_len..(b + 1) * i_len].to_vec());
            out.extend_from_slice(self.forward(&row)?.data());
        }
        Ok(DenseTensor::new(vec![batch, o_len], out)?)
    }

    /// Gradients of `<grad_y, forward(x)>` with respect to every core and to
    /// the input vector.
    pub fn backward(
        &self,
        x: &DenseTensor,
        grad_y: &DenseTensor,
    ) -> Result<LayerGradients, LayerError> {
        let mut scratch = FlopReport::new();
        self.backward_counted(x, grad_y, &mut scratch)
    }

    pub fn backward_instrumented(
        &self,
        x: &DenseTensor,
        grad_y: &DenseTensor,
    ) -> Result<(LayerGradients, FlopReport), LayerError> {
        let mut report = FlopReport::new();
        let grads = self.backward_counted(x, grad_y, &mut report)?;
        Ok((grads, report))
    }

    /// Exact cost of each core's gradient contraction, in core order.
    pub fn backward_core_counts(
        &self,
        x: &DenseTensor,
        grad_y: &DenseTensor,
    ) -> Result<Vec<FlopReport>, LayerError> {
        let mut per_core = Vec::new();
        let mut scratch = FlopReport::new();
        self.backward_impl(x, grad_y, &mut scratch, Some(&mut per_core))?;
        Ok(per_core)
    }

    fn backward_counted(
        &self,
        x: &DenseTensor,
        grad_y: &DenseTensor,
        counter: &mut FlopReport,
    ) -> Result<LayerGradients, LayerError> {
        self.backward_impl(x, grad_y, counter, None)
    }

    fn backward_impl(
        &self,
        x: &DenseTensor,
        grad_y: &DenseTensor,
        counter: &mut FlopReport,
        mut per_core: Option<&mut Vec<FlopReport>>,
    ) -> Result<LayerGradients, LayerError> {
        let i_len = self.input_len();
        let o_len = self.output_len();
        if x.order() != 1 || x.len() != i_len {
            return Err(LayerError::InputLength {
                expected: i_len,
                got: x.len(),
            });
        }
        if grad_y.order() != 1 || grad_y.len() != o_len {
            return Err(LayerError::OutputLength {
                expected: o_len,
                got: grad_y.len(),
            });
        }
        let n = self.input_dims.len();
        let m = self.output_dims.len();
        let x_t = x.reshape(&self.input_dims)?;
        let gy_t = grad_y.reshape(&self.output_dims)?;

        let mut core_grads = Vec::with_capacity(n + m);
        for c in 0..n {
            let mut local = FlopReport::new();
            core_grads.push(self.input_core_grad(c, &x_t, &gy_t, &mut local)?);
            counter.absorb(&local);
            if let Some(list) = per_core.as_deref_mut() {
                list.push(local);
            }
        }
        for j in 0..m {
            let mut local = FlopReport::new();
            core_grads.push(self.output_core_grad(j, &x_t, &gy_t, &mut local)?);
            counter.absorb(&local);
            if let Some(list) = per_core.as_deref_mut() {
                list.push(local);
            }
        }

        // grad_x is the transposed map applied to grad_y, which by trace
        // cyclicity is the ring rotated to start at the first output core.
        let rotated = TrLayer::new(
            self.output_dims.clone(),
            self.input_dims.clone(),
            self.cores.rotated(n),
        )?;
        let grad_x = rotated.forward_counted(grad_y, counter)?;

        Ok(LayerGradients {
            cores: core_grads,
            input: grad_x,
        })
    }

    /// Gradient of input core `c`: contract the input through all other
    /// cores with core `c` removed, keeping its left bond, mode, and right
    /// bond open, then close against the output gradient.
    fn input_core_grad(
        &self,
        c: usize,
        x_t: &DenseTensor,
        gy_t: &DenseTensor,
        counter: &mut FlopReport,
    ) -> Result<DenseTensor, LayerError> {
        let n = self.input_dims.len();
        let m = self.output_dims.len();
        let cores = self.cores.cores();

        // Prefix: absorb cores 0..c exactly as in the forward pass.
        let mut acc = x_t.clone();
        for (p, core) in cores.iter().take(c).enumerate() {
            if p == 0 {
                acc = acc.contract_counted(core, &[0], &[1], counter)?;
            } else {
                let last = acc.order() - 1;
                acc = acc.contract_counted(core, &[0, last], &[1, 0], counter)?;
            }
        }
        // State: c == 0 -> plain input tensor [I_0..I_{n-1}];
        // c > 0 -> [I_c..I_{n-1}, R_0, R_c] with the closing bond at axis
        // n - c and the skipped core's left edge kept open at the end.

        // Remaining input cores: the first one after the skip contracts its
        // mode only (its left bond is the skipped core's right edge and must
        // stay open); later ones also consume the live chain bond.
        for p in c + 1..n {
            let core = &cores[p];
            if p == c + 1 {
                acc = acc.contract_counted(core, &[1], &[1], counter)?;
            } else {
                let last = acc.order() - 1;
                acc = acc.contract_counted(core, &[1, last], &[1, 0], counter)?;
            }
        }
        // c == 0: [I_0, R_1, R_n]; c > 0: [I_c, R_0, R_c, R_{c+1}, R_n]
        // (bond axes collapse appropriately when c is a border core).

        for q in 0..m {
            let core = &cores[n + q];
            let first_after_skip = q == 0 && c == n - 1;
            let is_final = q == m - 1;
            if first_after_skip && (!is_final || c == 0) {
                // Left bond open: pure outer product.
                acc = acc.contract_counted(core, &[], &[], counter)?;
            } else if first_after_skip && is_final {
                // Single output core, left bond open; close the ring only.
                acc = acc.contract_counted(core, &[1], &[2], counter)?;
            } else if is_final && c == 0 {
                // Keep the final core's right bond: it is the skipped first
                // core's left edge.
                let last = acc.order() - 1;
                acc = acc.contract_counted(core, &[last], &[0], counter)?;
            } else if is_final {
                // Consume the chain bond and trace the closing bond (axis 1).
                let last = acc.order() - 1;
                acc = acc.contract_counted(core, &[1, last], &[2, 0], counter)?;
            } else {
                let last = acc.order() - 1;
                acc = acc.contract_counted(core, &[last], &[0], counter)?;
            }
        }

        // Contract every output mode against the output gradient and restore
        // the [left bond, mode, right bond] core layout.
        if c == 0 {
            // acc = [I_0, R_1, O_0..O_{m-1}, R_0]
            let o_axes: Vec<usize> = (2..2 + m).collect();
            let gy_axes: Vec<usize> = (0..m).collect();
            let g = acc.contract_counted(gy_t, &o_axes, &gy_axes, counter)?;
            // [I_0, R_1, R_0] -> [R_0, I_0, R_1]
            Ok(g.permute(&[2, 0, 1])?)
        } else {
            // acc = [I_c, R_c, R_{c+1}, O_0..O_{m-1}]
            let o_axes: Vec<usize> = (3..3 + m).collect();
            let gy_axes: Vec<usize> = (0..m).collect();
            let g = acc.contract_counted(gy_t, &o_axes, &gy_axes, counter)?;
            // [I_c, R_c, R_{c+1}] -> [R_c, I_c, R_{c+1}]
            Ok(g.permute(&[1, 0, 2])?)
        }
    }

    /// Gradient of output core `j` (global position n + j).
    fn output_core_grad(
        &self,
        j: usize,
        x_t: &DenseTensor,
        gy_t: &DenseTensor,
        counter: &mut FlopReport,
    ) -> Result<DenseTensor, LayerError> {
        let n = self.input_dims.len();
        let m = self.output_dims.len();
        let cores = self.cores.cores();

        // Full input phase, as in the forward pass: acc = [R_0, R_n].
        let mut acc = x_t.contract_counted(&cores[0], &[0], &[1], counter)?;
        for core in cores.iter().take(n).skip(1) {
            let last = acc.order() - 1;
            acc = acc.contract_counted(core, &[0, last], &[1, 0], counter)?;
        }
        // Output cores before the skip.
        for core in cores.iter().take(n + j).skip(n) {
            let last = acc.order() - 1;
            acc = acc.contract_counted(core, &[last], &[0], counter)?;
        }
        // acc = [R_0, O_0..O_{j-1}, R_{n+j}]; skip core n + j.

        for q in j + 1..m {
            let core = &cores[n + q];
            let first_after_skip = q == j + 1;
            let is_final = q == m - 1;
            if first_after_skip && !is_final {
                acc = acc.contract_counted(core, &[], &[], counter)?;
            } else if first_after_skip && is_final {
                // Left bond open (skipped core's right edge); close the ring.
                acc = acc.contract_counted(core, &[0], &[2], counter)?;
            } else if is_final {
                let last = acc.order() - 1;
                acc = acc.contract_counted(core, &[0, last], &[2, 0], counter)?;
            } else {
                let last = acc.order() - 1;
                acc = acc.contract_counted(core, &[last], &[0], counter)?;
            }
        }

        if j == m - 1 {
            // acc = [R_0, O_0..O_{m-2}, R_{n+m-1}]; the open edges are the
            // closing bond (axis 0) and the last chain bond.
            let o_axes: Vec<usize> = (1..m).collect();
            let gy_axes: Vec<usize> = (0..m - 1).collect();
            let g = acc.contract_counted(gy_t, &o_axes, &gy_axes, counter)?;
            // [R_0, R_{n+m-1}, O_{m-1}] -> [R_{n+m-1}, O_{m-1}, R_0]
            Ok(g.permute(&[1, 2, 0])?)
        } else {
            // acc = [O_0..O_{j-1}, R_{n+j}, R_{n+j+1}, O_{j+1}..O_{m-1}];
            // contract all modes except O_j, which comes from the gradient.
            let mut o_axes: Vec<usize> = (0..j).collect();
            o_axes.extend(j + 2..m + 1);
            let mut gy_axes: Vec<usize> = (0..j).collect();
            gy_axes.extend(j + 1..m);
            let g = acc.contract_counted(gy_t, &o_axes, &gy_axes, counter)?;
            // [R_{n+j}, R_{n+j+1}, O_j] -> [R_{n+j}, O_j, R_{n+j+1}]
            Ok(g.permute(&[0, 2, 1])?)
        }
    }
}
