//! Dense d-order tensors with row-major storage and generalized contraction.
//!
//! Everything downstream (train/ring formats, factorized layers, recurrent
//! cells) is built on two operations defined here: `reshape`, which reindexes
//! the same flat buffer, and `contract`, which sums over matched index pairs
//! of two tensors and generalizes matrix multiplication.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} requires {expected} elements, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shape entries must be positive, got {shape:?}")]
    ZeroDimension { shape: Vec<usize> },
    #[error("cannot reshape {elements} elements into {target:?}")]
    ReshapeMismatch { elements: usize, target: Vec<usize> },
    #[error("axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange { axis: usize, shape: Vec<usize> },
    #[error("duplicate axis {axis} in contraction list")]
    DuplicateAxis { axis: usize },
    #[error("contraction lists differ in length: {left} vs {right}")]
    AxisCountMismatch { left: usize, right: usize },
    #[error(
        "cannot contract axis {axis_a} of {shape_a:?} with axis {axis_b} of {shape_b:?}: \
         sizes {size_a} and {size_b} differ"
    )]
    ContractionMismatch {
        shape_a: Vec<usize>,
        axis_a: usize,
        size_a: usize,
        shape_b: Vec<usize>,
        axis_b: usize,
        size_b: usize,
    },
    #[error("subscripts {subscripts:?} out of bounds for shape {shape:?}")]
    SubscriptOutOfBounds {
        subscripts: Vec<usize>,
        shape: Vec<usize>,
    },
    #[error("expected {expected} subscripts for shape, got {got}")]
    SubscriptCount { expected: usize, got: usize },
    #[error("permutation {perm:?} is not a permutation of 0..{order}")]
    BadPermutation { perm: Vec<usize>, order: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
}

/// Exact operation counts accumulated while running a contraction schedule.
///
/// `multiply_adds` counts one unit per scalar multiply-accumulate performed by
/// a contraction (output volume times matched-index volume); data movement is
/// not counted. `peak_intermediate_scalars` is the largest tensor produced by
/// any single contraction in the schedule. Both are pure functions of the
/// shapes involved, independent of the data values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopReport {
    pub multiply_adds: u64,
    pub peak_intermediate_scalars: u64,
}

impl FlopReport {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&mut self, out_volume: usize, matched_volume: usize) {
        self.multiply_adds += out_volume as u64 * matched_volume as u64;
        self.peak_intermediate_scalars = self.peak_intermediate_scalars.max(out_volume as u64);
    }

    /// Fold counts from a sub-schedule into this report.
    pub fn absorb(&mut self, other: &FlopReport) {
        self.multiply_adds += other.multiply_adds;
        self.peak_intermediate_scalars = self
            .peak_intermediate_scalars
            .max(other.peak_intermediate_scalars);
    }
}

/// Row-major flat offset of `subscripts` within `shape` (last index fastest).
pub fn flat_index(shape: &[usize], subscripts: &[usize]) -> Result<usize, TensorError> {
    if subscripts.len() != shape.len() {
        return Err(TensorError::SubscriptCount {
            expected: shape.len(),
            got: subscripts.len(),
        });
    }
    let mut idx = 0usize;
    for (&dim, &sub) in shape.iter().zip(subscripts) {
        if sub >= dim {
            return Err(TensorError::SubscriptOutOfBounds {
                subscripts: subscripts.to_vec(),
                shape: shape.to_vec(),
            });
        }
        idx = idx * dim + sub;
    }
    Ok(idx)
}

/// A dense real-valued tensor: explicit shape plus a row-major `f64` buffer.
///
/// Immutable after construction; all operations return new tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDimension { shape });
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// 1-order tensor over an existing buffer.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn element_at(&self, subscripts: &[usize]) -> Result<f64, TensorError> {
        let idx = flat_index(&self.shape, subscripts)?;
        Ok(self.data[idx])
    }

    /// Same buffer under a new shape; total element count must be preserved.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self, TensorError> {
        if new_shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDimension {
                shape: new_shape.to_vec(),
            });
        }
        let expected: usize = new_shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::ReshapeMismatch {
                elements: self.data.len(),
                target: new_shape.to_vec(),
            });
        }
        Ok(Self {
            shape: new_shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Reorder axes: output axis `j` is source axis `perm[j]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self, TensorError> {
        let d = self.shape.len();
        let mut seen = vec![false; d];
        if perm.len() != d {
            return Err(TensorError::BadPermutation {
                perm: perm.to_vec(),
                order: d,
            });
        }
        for &p in perm {
            if p >= d || seen[p] {
                return Err(TensorError::BadPermutation {
                    perm: perm.to_vec(),
                    order: d,
                });
            }
            seen[p] = true;
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }

        let src_strides = row_major_strides(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        // Stride to advance in the source when output axis j increments.
        let out_strides_in_src: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();

        let mut out = vec![0.0; self.data.len()];
        let mut counters = vec![0usize; d];
        let mut src_idx = 0usize;
        for slot in out.iter_mut() {
            *slot = self.data[src_idx];
            // Odometer increment over the output index, tracking src offset.
            for axis in (0..d).rev() {
                counters[axis] += 1;
                src_idx += out_strides_in_src[axis];
                if counters[axis] < out_shape[axis] {
                    break;
                }
                src_idx -= out_strides_in_src[axis] * out_shape[axis];
                counters[axis] = 0;
            }
        }
        Ok(Self {
            shape: out_shape,
            data: out,
        })
    }

    /// Generalized contraction: sum over matched axis pairs, per tensor-network
    /// convention. The output keeps the remaining axes of `self` (in order)
    /// followed by the remaining axes of `other`. Empty axis lists give the
    /// outer product.
    pub fn contract(
        &self,
        other: &Self,
        axes_a: &[usize],
        axes_b: &[usize],
    ) -> Result<Self, TensorError> {
        let mut scratch = FlopReport::new();
        self.contract_counted(other, axes_a, axes_b, &mut scratch)
    }

    /// `contract`, accumulating exact multiply-add and peak-size counts.
    pub fn contract_counted(
        &self,
        other: &Self,
        axes_a: &[usize],
        axes_b: &[usize],
        counter: &mut FlopReport,
    ) -> Result<Self, TensorError> {
        if axes_a.len() != axes_b.len() {
            return Err(TensorError::AxisCountMismatch {
                left: axes_a.len(),
                right: axes_b.len(),
            });
        }
        check_axes(&self.shape, axes_a)?;
        check_axes(&other.shape, axes_b)?;
        for (&a, &b) in axes_a.iter().zip(axes_b) {
            if self.shape[a] != other.shape[b] {
                return Err(TensorError::ContractionMismatch {
                    shape_a: self.shape.clone(),
                    axis_a: a,
                    size_a: self.shape[a],
                    shape_b: other.shape.clone(),
                    axis_b: b,
                    size_b: other.shape[b],
                });
            }
        }

        let free_a: Vec<usize> = (0..self.shape.len())
            .filter(|i| !axes_a.contains(i))
            .collect();
        let free_b: Vec<usize> = (0..other.shape.len())
            .filter(|i| !axes_b.contains(i))
            .collect();

        let rows: usize = free_a.iter().map(|&i| self.shape[i]).product();
        let cols: usize = free_b.iter().map(|&i| other.shape[i]).product();
        let matched: usize = axes_a.iter().map(|&i| self.shape[i]).product();

        // Left operand as (rows x matched), right as (matched x cols).
        let lhs = gather_for_matmul(self, &free_a, axes_a);
        let rhs = gather_for_matmul(other, axes_b, &free_b);

        let mut out = vec![0.0; rows * cols];
        matmul_ikj(&lhs, &rhs, rows, matched, cols, &mut out);
        counter.record(rows * cols, matched);

        let mut out_shape: Vec<usize> = free_a.iter().map(|&i| self.shape[i]).collect();
        out_shape.extend(free_b.iter().map(|&i| other.shape[i]));
        Ok(Self {
            shape: out_shape,
            data: out,
        })
    }

    /// Partial trace over a pair of equal-sized axes.
    pub fn trace_pair(&self, axis_a: usize, axis_b: usize) -> Result<Self, TensorError> {
        check_axes(&self.shape, &[axis_a, axis_b])?;
        if self.shape[axis_a] != self.shape[axis_b] {
            return Err(TensorError::ContractionMismatch {
                shape_a: self.shape.clone(),
                axis_a,
                size_a: self.shape[axis_a],
                shape_b: self.shape.clone(),
                axis_b,
                size_b: self.shape[axis_b],
            });
        }
        let keep: Vec<usize> = (0..self.shape.len())
            .filter(|&i| i != axis_a && i != axis_b)
            .collect();
        let out_shape: Vec<usize> = keep.iter().map(|&i| self.shape[i]).collect();
        let strides = row_major_strides(&self.shape);
        let out_len = out_shape.iter().product::<usize>().max(1);
        let mut out = vec![0.0; out_len];
        let r = self.shape[axis_a];

        let mut counters = vec![0usize; keep.len()];
        for slot in out.iter_mut() {
            let base: usize = counters
                .iter()
                .zip(&keep)
                .map(|(&c, &ax)| c * strides[ax])
                .sum();
            let mut sum = 0.0;
            for t in 0..r {
                sum += self.data[base + t * strides[axis_a] + t * strides[axis_b]];
            }
            *slot = sum;
            for (i, &ax) in keep.iter().enumerate().rev() {
                counters[i] += 1;
                if counters[i] < self.shape[ax] {
                    break;
                }
                counters[i] = 0;
            }
        }
        Ok(Self {
            shape: out_shape,
            data: out,
        })
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip_with(other, |a, b| a * b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Flat inner product of the two buffers; shapes must agree.
    pub fn dot(&self, other: &Self) -> Result<f64, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_axes(shape: &[usize], axes: &[usize]) -> Result<(), TensorError> {
    for (i, &ax) in axes.iter().enumerate() {
        if ax >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                axis: ax,
                shape: shape.to_vec(),
            });
        }
        if axes[..i].contains(&ax) {
            return Err(TensorError::DuplicateAxis { axis: ax });
        }
    }
    Ok(())
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// View `t` in a matrix layout (leading axes x trailing axes), copying only
/// when the requested order differs from the storage order.
fn gather_for_matmul<'a>(
    t: &'a DenseTensor,
    leading: &[usize],
    trailing: &[usize],
) -> std::borrow::Cow<'a, [f64]> {
    let identity = leading
        .iter()
        .chain(trailing)
        .copied()
        .eq(0..t.shape().len());
    if identity {
        return std::borrow::Cow::Borrowed(&t.data);
    }
    let perm: Vec<usize> = leading.iter().chain(trailing).copied().collect();
    std::borrow::Cow::Owned(t.permute(&perm).expect("validated axes").data)
}

fn matmul_ikj(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_pj) in o_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseTensor::new(shape.to_vec(), data).unwrap()
    }

    /// Element-wise contraction oracle: plain nested loops over output and
    /// matched subscripts, no layout tricks.
    fn naive_contract(
        a: &DenseTensor,
        b: &DenseTensor,
        axes_a: &[usize],
        axes_b: &[usize],
    ) -> DenseTensor {
        let free_a: Vec<usize> = (0..a.order()).filter(|i| !axes_a.contains(i)).collect();
        let free_b: Vec<usize> = (0..b.order()).filter(|i| !axes_b.contains(i)).collect();
        let mut out_shape: Vec<usize> = free_a.iter().map(|&i| a.shape()[i]).collect();
        out_shape.extend(free_b.iter().map(|&i| b.shape()[i]));
        let matched_dims: Vec<usize> = axes_a.iter().map(|&i| a.shape()[i]).collect();

        let out_len: usize = out_shape.iter().product::<usize>().max(1);
        let mut out = vec![0.0; out_len];
        for (flat, slot) in out.iter_mut().enumerate() {
            let out_subs = unflatten(flat, &out_shape);
            let matched_total: usize = matched_dims.iter().product::<usize>().max(1);
            let mut sum = 0.0;
            for mflat in 0..matched_total {
                let m_subs = unflatten(mflat, &matched_dims);
                let mut sa = vec![0usize; a.order()];
                for (j, &ax) in free_a.iter().enumerate() {
                    sa[ax] = out_subs[j];
                }
                for (j, &ax) in axes_a.iter().enumerate() {
                    sa[ax] = m_subs[j];
                }
                let mut sb = vec![0usize; b.order()];
                for (j, &ax) in free_b.iter().enumerate() {
                    sb[ax] = out_subs[free_a.len() + j];
                }
                for (j, &ax) in axes_b.iter().enumerate() {
                    sb[ax] = m_subs[j];
                }
                sum += a.element_at(&sa).unwrap() * b.element_at(&sb).unwrap();
            }
            *slot = sum;
        }
        DenseTensor::new(out_shape, out).unwrap()
    }

    fn unflatten(mut flat: usize, shape: &[usize]) -> Vec<usize> {
        let mut subs = vec![0usize; shape.len()];
        for i in (0..shape.len()).rev() {
            subs[i] = flat % shape[i];
            flat /= shape[i];
        }
        subs
    }

    #[test]
    fn flat_index_row_major() {
        assert_eq!(flat_index(&[3, 3], &[0, 0]).unwrap(), 0);
        // 2*3 + 1: eighth element
        assert_eq!(flat_index(&[3, 3], &[2, 1]).unwrap(), 7);
        // 1*10 + 1*5 + 3, by enumerating row-major order
        assert_eq!(flat_index(&[4, 2, 5], &[1, 1, 3]).unwrap(), 18);
        assert!(flat_index(&[3, 3], &[3, 0]).is_err());
        assert!(flat_index(&[3, 3], &[0]).is_err());
    }

    #[test]
    fn reshape_preserves_data() {
        let t = DenseTensor::from_vec((0..57600).map(|i| i as f64).collect());
        let r = t.reshape(&[4, 2, 5, 8, 6, 5, 3, 2]).unwrap();
        assert_eq!(r.shape(), &[4, 2, 5, 8, 6, 5, 3, 2]);
        assert_eq!(r.data(), t.data());

        let identity = DenseTensor::from_vec(vec![1.0; 6]).reshape(&[6]).unwrap();
        assert_eq!(identity.shape(), &[6]);

        let v = DenseTensor::from_vec((0..81).map(|i| i as f64).collect());
        let q = v.reshape(&[3, 3, 3, 3]).unwrap();
        assert_eq!(q.element_at(&[2, 2, 2, 2]).unwrap(), 80.0);

        assert!(v.reshape(&[3, 3]).is_err());
    }

    #[test]
    fn reshape_round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = random_tensor(&[4, 3, 5], &mut rng);
        let back = t.reshape(&[60]).unwrap().reshape(&[4, 3, 5]).unwrap();
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn contract_matrix_product() {
        let a = DenseTensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = DenseTensor::new(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.contract(&b, &[1], &[0]).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        // row 0: [1*7+2*9+3*11, 1*8+2*10+3*12] = [58, 64]
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn contract_output_axis_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_tensor(&[2, 3, 4], &mut rng);
        let b = random_tensor(&[4, 5, 2], &mut rng);
        let c = a.contract(&b, &[2], &[0]).unwrap();
        assert_eq!(c.shape(), &[2, 3, 5, 2]);
        let oracle = naive_contract(&a, &b, &[2], &[0]);
        for (x, y) in c.data().iter().zip(oracle.data()) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
    }

    #[test]
    fn contract_all_ones_multi_axis() {
        let a = DenseTensor::filled(&[2, 2, 2], 1.0);
        let b = DenseTensor::filled(&[2, 2], 1.0);
        let c = a.contract(&b, &[1, 2], &[0, 1]).unwrap();
        assert_eq!(c.shape(), &[2]);
        // brute force: 4 matched index pairs, all products 1
        assert_eq!(c.data(), &[4.0, 4.0]);
    }

    #[test]
    fn contract_matches_triple_loop_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = rng.gen_range(1..=5);
            let k = rng.gen_range(1..=5);
            let n = rng.gen_range(1..=5);
            let a = random_tensor(&[m, k], &mut rng);
            let b = random_tensor(&[k, n], &mut rng);
            let c = a.contract(&b, &[1], &[0]).unwrap();
            for i in 0..m {
                for j in 0..n {
                    let mut sum = 0.0;
                    for p in 0..k {
                        sum += a.element_at(&[i, p]).unwrap() * b.element_at(&[p, j]).unwrap();
                    }
                    assert_relative_eq!(
                        c.element_at(&[i, j]).unwrap(),
                        sum,
                        epsilon = 1e-12,
                        max_relative = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn contract_bilinear_in_left_argument() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_tensor(&[3, 4], &mut rng);
        let b = random_tensor(&[4, 2], &mut rng);
        let alpha = 2.5;
        let lhs = a.scale(alpha).contract(&b, &[1], &[0]).unwrap();
        let rhs = a.contract(&b, &[1], &[0]).unwrap().scale(alpha);
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert_relative_eq!(x, y, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn contract_once_equals_sequential() {
        // Contracting two matched axes in one call must agree with doing the
        // axes one at a time.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let a = random_tensor(&[3, 2, 4], &mut rng);
            let b = random_tensor(&[2, 4, 3], &mut rng);
            let joint = a.contract(&b, &[1, 2], &[0, 1]).unwrap();
            // First contract axis 1 <-> 0, leaving [3, 4] x [4, 3]; the
            // remaining matched pair sits at (1, 0) of the intermediate, but
            // appears once per free-b axis, so sum over the diagonal instead.
            let partial = a.contract(&b, &[1], &[0]).unwrap(); // [3, 4, 4, 3]
            let seq = partial.trace_pair(1, 2).unwrap(); // [3, 3]
            assert_eq!(joint.shape(), seq.shape());
            for (x, y) in joint.data().iter().zip(seq.data()) {
                assert_relative_eq!(x, y, max_relative = 1e-10, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn contract_outer_product() {
        let a = DenseTensor::from_vec(vec![1.0, 2.0]);
        let b = DenseTensor::from_vec(vec![3.0, 4.0, 5.0]);
        let c = a.contract(&b, &[], &[]).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn contract_error_reporting() {
        let a = DenseTensor::zeros(&[2, 3]);
        let b = DenseTensor::zeros(&[4, 2]);
        let err = a.contract(&b, &[1], &[0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");

        assert!(matches!(
            a.contract(&b, &[5], &[0]).unwrap_err(),
            TensorError::AxisOutOfRange { .. }
        ));
        assert!(matches!(
            a.contract(&b, &[0, 0], &[0, 1]).unwrap_err(),
            TensorError::DuplicateAxis { .. }
        ));
        assert!(matches!(
            a.contract(&b, &[0], &[0, 1]).unwrap_err(),
            TensorError::AxisCountMismatch { .. }
        ));
    }

    #[test]
    fn contract_matches_naive_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let d_a = rng.gen_range(1..=3);
            let d_b = rng.gen_range(1..=3);
            let shape_a: Vec<usize> = (0..d_a).map(|_| rng.gen_range(1..=4)).collect();
            let mut shape_b: Vec<usize> = (0..d_b).map(|_| rng.gen_range(1..=4)).collect();
            let n_axes = rng.gen_range(0..=d_a.min(d_b));
            let axes_a: Vec<usize> = (0..n_axes).collect();
            let axes_b: Vec<usize> = (0..n_axes).collect();
            for i in 0..n_axes {
                shape_b[i] = shape_a[i];
            }
            let a = random_tensor(&shape_a, &mut rng);
            let b = random_tensor(&shape_b, &mut rng);
            let fast = a.contract(&b, &axes_a, &axes_b).unwrap();
            let slow = naive_contract(&a, &b, &axes_a, &axes_b);
            assert_eq!(fast.shape(), slow.shape());
            for (x, y) in fast.data().iter().zip(slow.data()) {
                assert_relative_eq!(x, y, max_relative = 1e-11, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn permute_moves_axes() {
        let t = DenseTensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = t.permute(&[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.element_at(&[2, 1]).unwrap(), 6.0);
        assert_eq!(p.element_at(&[1, 0]).unwrap(), 2.0);
    }

    #[test]
    fn trace_pair_matches_manual_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let t = random_tensor(&[3, 4, 3], &mut rng);
        let traced = t.trace_pair(0, 2).unwrap();
        assert_eq!(traced.shape(), &[4]);
        for j in 0..4 {
            let mut sum = 0.0;
            for r in 0..3 {
                sum += t.element_at(&[r, j, r]).unwrap();
            }
            assert_relative_eq!(traced.element_at(&[j]).unwrap(), sum, max_relative = 1e-12);
        }
    }

    #[test]
    fn counter_tracks_multiply_adds() {
        let a = DenseTensor::zeros(&[2, 3]);
        let b = DenseTensor::zeros(&[3, 4]);
        let mut report = FlopReport::new();
        a.contract_counted(&b, &[1], &[0], &mut report).unwrap();
        assert_eq!(report.multiply_adds, 2 * 4 * 3);
        assert_eq!(report.peak_intermediate_scalars, 8);
    }
}
