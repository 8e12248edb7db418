//! Recurrent cells whose input-to-hidden maps may be ring-factorized.
//!
//! The cell equations are the standard ones: gates are sigmoids (tanh for
//! the candidate) of `W x + U h + b`, the cell state blends its past through
//! the forget gate, and the hidden state is the gated tanh of the cell
//! state. Only the input-to-hidden maps `W` are factorized; the recurrent
//! matrices `U` stay dense. With dense `W` maps this is exactly the
//! standard LSTM, which doubles as the equivalence oracle in tests.

use crate::layer::{LayerError, TrLayer};
use crate::tensor::{DenseTensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CellError {
    #[error("input length {got} does not match map input {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("state length {got} does not match hidden size {expected}")]
    StateLength { expected: usize, got: usize },
    #[error("gate maps disagree on sizes: {what}")]
    InconsistentMaps { what: String },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("empty input sequence")]
    EmptySequence,
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Input-to-hidden map: a dense `[H, I]` matrix (baseline) or a ring layer.
#[derive(Debug, Clone)]
pub enum InputMap {
    Dense(DenseTensor),
    Ring(TrLayer),
}

impl InputMap {
    pub fn input_len(&self) -> usize {
        match self {
            InputMap::Dense(w) => w.shape()[1],
            InputMap::Ring(l) => l.input_len(),
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            InputMap::Dense(w) => w.shape()[0],
            InputMap::Ring(l) => l.output_len(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            InputMap::Dense(w) => w.len(),
            InputMap::Ring(l) => l.param_count(),
        }
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<DenseTensor, CellError> {
        match self {
            InputMap::Dense(w) => Ok(w.contract(x, &[1], &[0])?),
            InputMap::Ring(l) => Ok(l.forward(x)?),
        }
    }

    /// Parameter gradient and input gradient of `<grad_out, forward(x)>`.
    pub fn backward(
        &self,
        x: &DenseTensor,
        grad_out: &DenseTensor,
    ) -> Result<(InputMapGradient, DenseTensor), CellError> {
        match self {
            InputMap::Dense(w) => {
                let grad_w = grad_out.contract(x, &[], &[])?;
                let grad_x = w.contract(grad_out, &[0], &[0])?;
                Ok((InputMapGradient::Dense(grad_w), grad_x))
            }
            InputMap::Ring(l) => {
                let grads = l.backward(x, grad_out)?;
                Ok((InputMapGradient::Ring(grads.cores), grads.input))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum InputMapGradient {
    Dense(DenseTensor),
    Ring(Vec<DenseTensor>),
}

impl InputMapGradient {
    fn zeros_like(map: &InputMap) -> Self {
        match map {
            InputMap::Dense(w) => InputMapGradient::Dense(DenseTensor::zeros(w.shape())),
            InputMap::Ring(l) => InputMapGradient::Ring(
                l.cores()
                    .cores()
                    .iter()
                    .map(|c| DenseTensor::zeros(c.shape()))
                    .collect(),
            ),
        }
    }

    fn accumulate(&mut self, other: &InputMapGradient) -> Result<(), CellError> {
        match (self, other) {
            (InputMapGradient::Dense(a), InputMapGradient::Dense(b)) => {
                *a = a.add(b)?;
            }
            (InputMapGradient::Ring(a), InputMapGradient::Ring(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x = x.add(y)?;
                }
            }
            _ => {
                return Err(CellError::InconsistentMaps {
                    what: "gradient kinds differ".into(),
                })
            }
        }
        Ok(())
    }
}

/// Gate order used throughout: input, forget, output, cell candidate.
pub const GATE_NAMES: [&str; 4] = ["input", "forget", "output", "cell"];

/// Cell parameters: four input maps, four dense recurrent matrices `[H, H]`,
/// four biases `[H]`, in gate order.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w: [InputMap; 4],
    pub u: [DenseTensor; 4],
    pub b: [DenseTensor; 4],
}

impl LstmParams {
    pub fn hidden_len(&self) -> usize {
        self.b[0].len()
    }

    pub fn input_len(&self) -> usize {
        self.w[0].input_len()
    }

    pub fn validate(&self) -> Result<(), CellError> {
        let h = self.hidden_len();
        let i = self.input_len();
        for gate in 0..4 {
            if self.w[gate].input_len() != i || self.w[gate].output_len() != h {
                return Err(CellError::InconsistentMaps {
                    what: format!("{} gate map", GATE_NAMES[gate]),
                });
            }
            if self.u[gate].shape() != [h, h] {
                return Err(CellError::InconsistentMaps {
                    what: format!("{} recurrent matrix", GATE_NAMES[gate]),
                });
            }
            if self.b[gate].len() != h {
                return Err(CellError::InconsistentMaps {
                    what: format!("{} bias", GATE_NAMES[gate]),
                });
            }
        }
        Ok(())
    }

    pub fn input_param_count(&self) -> usize {
        self.w.iter().map(|m| m.param_count()).sum()
    }
}

/// Hidden and cell state vectors, both length H.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: DenseTensor,
    pub c: DenseTensor,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: DenseTensor::zeros(&[hidden]),
            c: DenseTensor::zeros(&[hidden]),
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Debug, Clone)]
struct StepCache {
    x: DenseTensor,
    h_prev: DenseTensor,
    c_prev: DenseTensor,
    k: DenseTensor,
    f: DenseTensor,
    o: DenseTensor,
    g: DenseTensor,
    tanh_c: DenseTensor,
}

fn step_with_cache(
    p: &LstmParams,
    s: &LstmState,
    x: &DenseTensor,
) -> Result<(LstmState, StepCache), CellError> {
    let h_len = p.hidden_len();
    if x.len() != p.input_len() || x.order() != 1 {
        return Err(CellError::InputLength {
            expected: p.input_len(),
            got: x.len(),
        });
    }
    if s.h.len() != h_len || s.c.len() != h_len {
        return Err(CellError::StateLength {
            expected: h_len,
            got: s.h.len(),
        });
    }
    if !x.all_finite() {
        return Err(CellError::NonFinite { what: "input" });
    }

    let mut pre = Vec::with_capacity(4);
    for gate in 0..4 {
        let wx = p.w[gate].forward(x)?;
        let uh = p.u[gate].contract(&s.h, &[1], &[0])?;
        pre.push(wx.add(&uh)?.add(&p.b[gate])?);
    }
    let k = pre[0].map(sigmoid);
    let f = pre[1].map(sigmoid);
    let o = pre[2].map(sigmoid);
    let g = pre[3].map(f64::tanh);
    debug_assert!(k.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    debug_assert!(f.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    debug_assert!(o.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    debug_assert!(g.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));

    let c = f.hadamard(&s.c)?.add(&k.hadamard(&g)?)?;
    let tanh_c = c.map(f64::tanh);
    let h = o.hadamard(&tanh_c)?;

    let state = LstmState { h, c: c.clone() };
    let cache = StepCache {
        x: x.clone(),
        h_prev: s.h.clone(),
        c_prev: s.c.clone(),
        k,
        f,
        o,
        g,
        tanh_c,
    };
    Ok((state, cache))
}

/// One cell update: gates from `W x + U h + b`, then
/// `c_t = f (.) c_prev + k (.) g` and `h_t = o (.) tanh(c_t)`.
pub fn lstm_step(p: &LstmParams, s: &LstmState, x: &DenseTensor) -> Result<LstmState, CellError> {
    Ok(step_with_cache(p, s, x)?.0)
}

/// Plain recurrent step with a ring-factorized input map:
/// `h_t = sigmoid(layer(x) + U h_prev + b)`.
pub fn tr_rnn_step(
    layer: &TrLayer,
    u: &DenseTensor,
    b: &DenseTensor,
    h_prev: &DenseTensor,
    x: &DenseTensor,
) -> Result<DenseTensor, CellError> {
    if x.len() != layer.input_len() {
        return Err(CellError::InputLength {
            expected: layer.input_len(),
            got: x.len(),
        });
    }
    if h_prev.len() != layer.output_len() {
        return Err(CellError::StateLength {
            expected: layer.output_len(),
            got: h_prev.len(),
        });
    }
    let wx = layer.forward(x)?;
    let uh = u.contract(h_prev, &[1], &[0])?;
    Ok(wx.add(&uh)?.add(b)?.map(sigmoid))
}

/// Unroll the cell over a sequence, returning the state after every step.
pub fn run_sequence(
    p: &LstmParams,
    xs: &[DenseTensor],
    s0: &LstmState,
) -> Result<Vec<LstmState>, CellError> {
    if xs.is_empty() {
        return Err(CellError::EmptySequence);
    }
    let mut states = Vec::with_capacity(xs.len());
    let mut state = s0.clone();
    for x in xs {
        state = lstm_step(p, &state, x)?;
        states.push(state.clone());
    }
    Ok(states)
}

/// Gradients of a scalar loss with respect to every cell parameter and to
/// each input vector, from backpropagation through the unrolled sequence.
#[derive(Debug, Clone)]
pub struct LstmGradients {
    pub w: [InputMapGradient; 4],
    pub u: [DenseTensor; 4],
    pub b: [DenseTensor; 4],
    pub inputs: Vec<DenseTensor>,
}

/// Backpropagation through time for a loss whose gradient on the final
/// hidden state is `grad_h_final` (gradient on the final cell state is
/// taken as zero). Reruns the forward pass to build caches.
pub fn lstm_bptt(
    p: &LstmParams,
    xs: &[DenseTensor],
    s0: &LstmState,
    grad_h_final: &DenseTensor,
) -> Result<LstmGradients, CellError> {
    if xs.is_empty() {
        return Err(CellError::EmptySequence);
    }
    let h_len = p.hidden_len();
    if grad_h_final.len() != h_len {
        return Err(CellError::StateLength {
            expected: h_len,
            got: grad_h_final.len(),
        });
    }

    let mut caches = Vec::with_capacity(xs.len());
    let mut state = s0.clone();
    for x in xs {
        let (next, cache) = step_with_cache(p, &state, x)?;
        caches.push(cache);
        state = next;
    }

    let mut grads = LstmGradients {
        w: [
            InputMapGradient::zeros_like(&p.w[0]),
            InputMapGradient::zeros_like(&p.w[1]),
            InputMapGradient::zeros_like(&p.w[2]),
            InputMapGradient::zeros_like(&p.w[3]),
        ],
        u: [
            DenseTensor::zeros(&[h_len, h_len]),
            DenseTensor::zeros(&[h_len, h_len]),
            DenseTensor::zeros(&[h_len, h_len]),
            DenseTensor::zeros(&[h_len, h_len]),
        ],
        b: [
            DenseTensor::zeros(&[h_len]),
            DenseTensor::zeros(&[h_len]),
            DenseTensor::zeros(&[h_len]),
            DenseTensor::zeros(&[h_len]),
        ],
        inputs: vec![DenseTensor::zeros(&[p.input_len()]); xs.len()],
    };

    let mut dh = grad_h_final.clone();
    let mut dc = DenseTensor::zeros(&[h_len]);
    for (t, cache) in caches.iter().enumerate().rev() {
        // h = o (.) tanh(c)
        let d_o = dh.hadamard(&cache.tanh_c)?;
        let sech2 = cache.tanh_c.map(|v| 1.0 - v * v);
        dc = dc.add(&dh.hadamard(&cache.o)?.hadamard(&sech2)?)?;
        // c = f (.) c_prev + k (.) g
        let d_f = dc.hadamard(&cache.c_prev)?;
        let d_k = dc.hadamard(&cache.g)?;
        let d_g = dc.hadamard(&cache.k)?;
        let dc_prev = dc.hadamard(&cache.f)?;

        // back through the gate nonlinearities to the pre-activations
        let d_pre = [
            d_k.hadamard(&cache.k.map(|v| v * (1.0 - v)))?,
            d_f.hadamard(&cache.f.map(|v| v * (1.0 - v)))?,
            d_o.hadamard(&cache.o.map(|v| v * (1.0 - v)))?,
            d_g.hadamard(&cache.g.map(|v| 1.0 - v * v))?,
        ];

        let mut dh_prev = DenseTensor::zeros(&[h_len]);
        let mut dx = DenseTensor::zeros(&[p.input_len()]);
        for gate in 0..4 {
            let (w_grad, x_grad) = p.w[gate].backward(&cache.x, &d_pre[gate])?;
            grads.w[gate].accumulate(&w_grad)?;
            dx = dx.add(&x_grad)?;
            grads.u[gate] = grads.u[gate].add(&d_pre[gate].contract(&cache.h_prev, &[], &[])?)?;
            grads.b[gate] = grads.b[gate].add(&d_pre[gate])?;
            dh_prev = dh_prev.add(&p.u[gate].contract(&d_pre[gate], &[0], &[0])?)?;
        }
        grads.inputs[t] = dx;
        dh = dh_prev;
        dc = dc_prev;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(len: usize, rng: &mut ChaCha8Rng) -> DenseTensor {
        DenseTensor::from_vec((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseTensor {
        DenseTensor::new(
            vec![rows, cols],
            (0..rows * cols).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        )
        .unwrap()
    }

    fn dense_params(i: usize, h: usize, rng: &mut ChaCha8Rng) -> LstmParams {
        LstmParams {
            w: [
                InputMap::Dense(random_matrix(h, i, rng)),
                InputMap::Dense(random_matrix(h, i, rng)),
                InputMap::Dense(random_matrix(h, i, rng)),
                InputMap::Dense(random_matrix(h, i, rng)),
            ],
            u: [
                random_matrix(h, h, rng),
                random_matrix(h, h, rng),
                random_matrix(h, h, rng),
                random_matrix(h, h, rng),
            ],
            b: [
                random_vec(h, rng),
                random_vec(h, rng),
                random_vec(h, rng),
                random_vec(h, rng),
            ],
        }
    }

    fn zero_params(i: usize, h: usize) -> LstmParams {
        LstmParams {
            w: [
                InputMap::Dense(DenseTensor::zeros(&[h, i])),
                InputMap::Dense(DenseTensor::zeros(&[h, i])),
                InputMap::Dense(DenseTensor::zeros(&[h, i])),
                InputMap::Dense(DenseTensor::zeros(&[h, i])),
            ],
            u: [
                DenseTensor::zeros(&[h, h]),
                DenseTensor::zeros(&[h, h]),
                DenseTensor::zeros(&[h, h]),
                DenseTensor::zeros(&[h, h]),
            ],
            b: [
                DenseTensor::zeros(&[h]),
                DenseTensor::zeros(&[h]),
                DenseTensor::zeros(&[h]),
                DenseTensor::zeros(&[h]),
            ],
        }
    }

    #[test]
    fn zero_everything_gives_half_gates_and_zero_state() {
        let p = zero_params(3, 2);
        let s = LstmState::zeros(2);
        let x = DenseTensor::zeros(&[3]);
        let next = lstm_step(&p, &s, &x).unwrap();
        // sigmoid(0) = 0.5, tanh(0) = 0: c = 0.5*0 + 0.5*0 = 0, h = 0.5*0 = 0
        assert_eq!(next.c.data(), &[0.0, 0.0]);
        assert_eq!(next.h.data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_gates_preserve_cell_state() {
        let mut p = zero_params(3, 2);
        // forget bias very positive (f ~ 1), input bias very negative (k ~ 0)
        p.b[1] = DenseTensor::from_vec(vec![30.0, 30.0]);
        p.b[0] = DenseTensor::from_vec(vec![-30.0, -30.0]);
        let s = LstmState {
            h: DenseTensor::zeros(&[2]),
            c: DenseTensor::from_vec(vec![0.7, -1.3]),
        };
        let x = DenseTensor::from_vec(vec![0.1, 0.2, 0.3]);
        let next = lstm_step(&p, &s, &x).unwrap();
        assert_relative_eq!(next.c.data()[0], 0.7, epsilon = 1e-9);
        assert_relative_eq!(next.c.data()[1], -1.3, epsilon = 1e-9);
    }

    #[test]
    fn ring_maps_match_dense_cell_when_saturated() {
        // 4 -> 2 toy: embed each dense gate map exactly into a ring layer.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dense = dense_params(4, 2, &mut rng);
        let mut ring = dense.clone();
        for gate in 0..4 {
            if let InputMap::Dense(w) = &dense.w[gate] {
                // layer expects [I, O]; dense map stores [H, I]
                let w_in_out = w.permute(&[1, 0]).unwrap();
                ring.w[gate] = InputMap::Ring(TrLayer::exact_from_matrix(&w_in_out).unwrap());
            }
        }
        let s = LstmState {
            h: random_vec(2, &mut rng),
            c: random_vec(2, &mut rng),
        };
        let x = random_vec(4, &mut rng);
        let a = lstm_step(&dense, &s, &x).unwrap();
        let b = lstm_step(&ring, &s, &x).unwrap();
        for (p, q) in a.h.data().iter().zip(b.h.data()) {
            assert_relative_eq!(p, q, epsilon = 1e-8, max_relative = 1e-8);
        }
        for (p, q) in a.c.data().iter().zip(b.c.data()) {
            assert_relative_eq!(p, q, epsilon = 1e-8, max_relative = 1e-8);
        }
    }

    #[test]
    fn rnn_step_zero_gives_half() {
        let layer = TrLayer::random(vec![2, 2], vec![3], &[1, 1, 1], 0).unwrap();
        let zero_layer = TrLayer::new(
            vec![2, 2],
            vec![3],
            crate::format::TrFormat::new(
                layer
                    .cores()
                    .cores()
                    .iter()
                    .map(|c| DenseTensor::zeros(c.shape()))
                    .collect(),
            )
            .unwrap(),
        )
        .unwrap();
        let h = tr_rnn_step(
            &zero_layer,
            &DenseTensor::zeros(&[3, 3]),
            &DenseTensor::zeros(&[3]),
            &DenseTensor::zeros(&[3]),
            &DenseTensor::zeros(&[4]),
        )
        .unwrap();
        for &v in h.data() {
            assert_relative_eq!(v, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn rnn_step_matches_dense_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = TrLayer::random(vec![2, 3], vec![4], &[2, 2, 2], 7).unwrap();
        let u = random_matrix(4, 4, &mut rng);
        let b = random_vec(4, &mut rng);
        let h_prev = random_vec(4, &mut rng);
        let x = random_vec(6, &mut rng);
        let h = tr_rnn_step(&layer, &u, &b, &h_prev, &x).unwrap();

        let w = layer.to_dense_matrix(); // [I, O]
        let wx = w.contract(&x, &[0], &[0]).unwrap(); // [O]
        let uh = u.contract(&h_prev, &[1], &[0]).unwrap();
        let expected = wx.add(&uh).unwrap().add(&b).unwrap().map(sigmoid);
        for (p, q) in h.data().iter().zip(expected.data()) {
            assert_relative_eq!(p, q, epsilon = 1e-8, max_relative = 1e-8);
        }

        // severed recurrence: U = 0 reduces to feed-forward layer + sigmoid
        let h_ff = tr_rnn_step(&layer, &DenseTensor::zeros(&[4, 4]), &b, &h_prev, &x).unwrap();
        let expected_ff = wx.add(&b).unwrap().map(sigmoid);
        for (p, q) in h_ff.data().iter().zip(expected_ff.data()) {
            assert_relative_eq!(p, q, epsilon = 1e-8, max_relative = 1e-8);
        }
    }

    #[test]
    fn sequence_unrolls_and_rejects_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = dense_params(3, 2, &mut rng);
        let s0 = LstmState::zeros(2);
        let xs: Vec<DenseTensor> = (0..4).map(|_| random_vec(3, &mut rng)).collect();
        let states = run_sequence(&p, &xs, &s0).unwrap();
        assert_eq!(states.len(), 4);
        let single = run_sequence(&p, &xs[..1], &s0).unwrap();
        let direct = lstm_step(&p, &s0, &xs[0]).unwrap();
        assert_eq!(single[0].h.data(), direct.h.data());
        assert!(matches!(
            run_sequence(&p, &[], &s0),
            Err(CellError::EmptySequence)
        ));
    }

    #[test]
    fn near_unit_forget_bounds_cell_growth() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = dense_params(3, 2, &mut rng);
        p.b[1] = DenseTensor::from_vec(vec![30.0, 30.0]); // f ~ 1
        let s0 = LstmState::zeros(2);
        let x = random_vec(3, &mut rng);
        let xs = vec![x; 8];
        let states = run_sequence(&p, &xs, &s0).unwrap();
        for (t, state) in states.iter().enumerate() {
            // |c_t| <= t+1 since |g| <= 1 and k <= 1
            let bound = (t + 1) as f64 + 1e-9;
            assert!(state.c.max_abs() <= bound);
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let p = zero_params(2, 2);
        let s = LstmState::zeros(2);
        let x = DenseTensor::from_vec(vec![f64::NAN, 0.0]);
        assert!(matches!(
            lstm_step(&p, &s, &x),
            Err(CellError::NonFinite { .. })
        ));
    }

    #[test]
    fn bptt_matches_central_differences_on_two_step_toy() {
        // H=4, I=8 toy with ring input maps, 2 steps.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h_len = 4;
        let make_ring = |seed: u64| {
            InputMap::Ring(TrLayer::random(vec![2, 4], vec![2, 2], &[2, 2, 2, 2], seed).unwrap())
        };
        let p = LstmParams {
            w: [make_ring(11), make_ring(12), make_ring(13), make_ring(14)],
            u: [
                random_matrix(h_len, h_len, &mut rng),
                random_matrix(h_len, h_len, &mut rng),
                random_matrix(h_len, h_len, &mut rng),
                random_matrix(h_len, h_len, &mut rng),
            ],
            b: [
                random_vec(h_len, &mut rng),
                random_vec(h_len, &mut rng),
                random_vec(h_len, &mut rng),
                random_vec(h_len, &mut rng),
            ],
        };
        p.validate().unwrap();
        let s0 = LstmState::zeros(h_len);
        let xs: Vec<DenseTensor> = (0..2).map(|_| random_vec(8, &mut rng)).collect();
        let gh = random_vec(h_len, &mut rng);

        let grads = lstm_bptt(&p, &xs, &s0, &gh).unwrap();
        let loss = |params: &LstmParams, inputs: &[DenseTensor]| {
            let states = run_sequence(params, inputs, &s0).unwrap();
            states.last().unwrap().h.dot(&gh).unwrap()
        };

        let eps = 1e-5;
        let tol = 1e-4;
        let check = |analytic: f64, numeric: f64, what: &str| {
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / denom <= tol,
                "{what}: analytic {analytic} vs numeric {numeric}"
            );
        };

        for gate in 0..4 {
            // ring core parameters
            if let (InputMap::Ring(layer), InputMapGradient::Ring(gs)) = (&p.w[gate], &grads.w[gate])
            {
                for (ci, grad) in gs.iter().enumerate() {
                    for idx in 0..grad.len() {
                        let perturbed = |delta: f64| {
                            let mut params = p.clone();
                            let mut cores = layer.cores().cores().to_vec();
                            let mut data = cores[ci].data().to_vec();
                            data[idx] += delta;
                            cores[ci] = DenseTensor::new(cores[ci].shape().to_vec(), data).unwrap();
                            params.w[gate] = InputMap::Ring(
                                TrLayer::new(
                                    layer.input_dims().to_vec(),
                                    layer.output_dims().to_vec(),
                                    crate::format::TrFormat::new(cores).unwrap(),
                                )
                                .unwrap(),
                            );
                            params
                        };
                        let numeric =
                            (loss(&perturbed(eps), &xs) - loss(&perturbed(-eps), &xs)) / (2.0 * eps);
                        check(
                            grad.data()[idx],
                            numeric,
                            &format!("gate {gate} core {ci} [{idx}]"),
                        );
                    }
                }
            }
            // recurrent matrices and biases
            for idx in 0..p.u[gate].len() {
                let perturbed = |delta: f64| {
                    let mut params = p.clone();
                    let mut data = params.u[gate].data().to_vec();
                    data[idx] += delta;
                    params.u[gate] =
                        DenseTensor::new(params.u[gate].shape().to_vec(), data).unwrap();
                    params
                };
                let numeric =
                    (loss(&perturbed(eps), &xs) - loss(&perturbed(-eps), &xs)) / (2.0 * eps);
                check(grads.u[gate].data()[idx], numeric, &format!("u {gate} [{idx}]"));
            }
            for idx in 0..p.b[gate].len() {
                let perturbed = |delta: f64| {
                    let mut params = p.clone();
                    let mut data = params.b[gate].data().to_vec();
                    data[idx] += delta;
                    params.b[gate] = DenseTensor::from_vec(data);
                    params
                };
                let numeric =
                    (loss(&perturbed(eps), &xs) - loss(&perturbed(-eps), &xs)) / (2.0 * eps);
                check(grads.b[gate].data()[idx], numeric, &format!("b {gate} [{idx}]"));
            }
        }
        // inputs
        for (t, gx) in grads.inputs.iter().enumerate() {
            for idx in 0..gx.len() {
                let perturbed = |delta: f64| {
                    let mut inputs = xs.clone();
                    let mut data = inputs[t].data().to_vec();
                    data[idx] += delta;
                    inputs[t] = DenseTensor::from_vec(data);
                    inputs
                };
                let numeric = (loss(&p, &perturbed(eps)) - loss(&p, &perturbed(-eps))) / (2.0 * eps);
                check(gx.data()[idx], numeric, &format!("x[{t}][{idx}]"));
            }
        }
    }
}
