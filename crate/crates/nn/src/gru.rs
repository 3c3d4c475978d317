//! Gated recurrent units.
//!
//! Each gate owns one `H x (H + I)` matrix acting on the concatenation `[h, x]`:
//!
//! ```text
//! z  = sigmoid(W_z [h, x])
//! r  = sigmoid(W_r [h, x])
//! h~ = tanh(W_h [r * h, x])
//! h' = (1 - z) * h + z * h~
//! ```
//!
//! Gate biases are optional and off by default. The input halves of the three
//! matrices are applied to a whole sequence with one GEMM each; only the
//! recurrent halves run step by step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::sigmoid_scalar;
use crate::conv::accumulate;
use crate::error::{shape_err, NnError, Result};
use crate::param::{join, Parameter};
use crate::scalar::{gemm, MatMut, MatRef, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone)]
pub struct GruState<T = f32> {
    /// `batch x hidden`
    pub hidden: Tensor<T>,
    pub direction: Direction,
}

/// Weights of one GRU direction.
#[derive(Debug, Clone)]
pub struct GruWeights<T = f32> {
    pub w_z: Parameter<T>,
    pub w_r: Parameter<T>,
    pub w_h: Parameter<T>,
    pub b_z: Option<Parameter<T>>,
    pub b_r: Option<Parameter<T>>,
    pub b_h: Option<Parameter<T>>,
    input_size: usize,
    hidden_size: usize,
}

impl<T: Scalar> GruWeights<T> {
    /// Uniform initialization in `+-1/sqrt(hidden_size)`.
    pub fn new(prefix: &str, input_size: usize, hidden_size: usize, with_bias: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let shape = [hidden_size, hidden_size + input_size];
        let mut gate = |name: &str| Parameter::uniform(join(prefix, name), &shape, bound, rng);
        let (w_z, w_r, w_h) = (gate("weight_z"), gate("weight_r"), gate("weight_h"));
        let mut bias = |name: &str| with_bias.then(|| Parameter::uniform(join(prefix, name), &[hidden_size], bound, rng));
        let (b_z, b_r, b_h) = (bias("bias_z"), bias("bias_r"), bias("bias_h"));
        Self { w_z, w_r, w_h, b_z, b_r, b_h, input_size, hidden_size }
    }

    pub fn zeros(prefix: &str, input_size: usize, hidden_size: usize, with_bias: bool) -> Self {
        let mut w = Self::new(prefix, input_size, hidden_size, with_bias, &mut ChaCha8Rng::seed_from_u64(0));
        for p in w.params_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        w
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    fn gates(&self) -> [(&Parameter<T>, Option<&Parameter<T>>); 3] {
        [(&self.w_z, self.b_z.as_ref()), (&self.w_r, self.b_r.as_ref()), (&self.w_h, self.b_h.as_ref())]
    }

    /// Recurrent half `W[:, :H]` of a gate matrix.
    fn rec<'a>(&self, w: &'a Parameter<T>) -> MatRef<'a, T> {
        MatRef::columns(w.value.data(), self.hidden_size, self.hidden_size + self.input_size, 0, self.hidden_size)
    }

    /// Input half `W[:, H:]` of a gate matrix.
    fn inp<'a>(&self, w: &'a Parameter<T>) -> MatRef<'a, T> {
        MatRef::columns(w.value.data(), self.hidden_size, self.hidden_size + self.input_size, self.hidden_size, self.input_size)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = vec![&self.w_z, &self.w_r, &self.w_h];
        v.extend(self.b_z.as_ref());
        v.extend(self.b_r.as_ref());
        v.extend(self.b_h.as_ref());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = vec![&mut self.w_z, &mut self.w_r, &mut self.w_h];
        v.extend(self.b_z.as_mut());
        v.extend(self.b_r.as_mut());
        v.extend(self.b_h.as_mut());
        v
    }

    /// Adds `grads` into the parameter gradient slots.
    pub fn accumulate(&mut self, grads: &GruGrads<T>) {
        accumulate(&mut self.w_z.value, &grads.w_z);
        accumulate(&mut self.w_r.value, &grads.w_r);
        accumulate(&mut self.w_h.value, &grads.w_h);
        for (p, g) in
            [(self.b_z.as_mut(), grads.b_z.as_ref()), (self.b_r.as_mut(), grads.b_r.as_ref()), (self.b_h.as_mut(), grads.b_h.as_ref())]
        {
            if let (Some(p), Some(g)) = (p, g) {
                accumulate(&mut p.value, g);
            }
        }
    }
}

/// Weight gradients of one GRU direction.
#[derive(Debug, Clone)]
pub struct GruGrads<T = f32> {
    pub w_z: Tensor<T>,
    pub w_r: Tensor<T>,
    pub w_h: Tensor<T>,
    pub b_z: Option<Tensor<T>>,
    pub b_r: Option<Tensor<T>>,
    pub b_h: Option<Tensor<T>>,
}

impl<T: Scalar> GruGrads<T> {
    fn zeros_like(w: &GruWeights<T>) -> Self {
        let z = |p: &Parameter<T>| Tensor::zeros(p.shape());
        Self {
            w_z: z(&w.w_z),
            w_r: z(&w.w_r),
            w_h: z(&w.w_h),
            b_z: w.b_z.as_ref().map(z),
            b_r: w.b_r.as_ref().map(z),
            b_h: w.b_h.as_ref().map(z),
        }
    }

    fn weights_mut(&mut self) -> [&mut Tensor<T>; 3] {
        [&mut self.w_z, &mut self.w_r, &mut self.w_h]
    }
}

/// `rows x H` input contributions (plus bias) of the three gates.
fn input_projection<T: Scalar>(w: &GruWeights<T>, x: &[T], rows: usize) -> [Vec<T>; 3] {
    let h = w.hidden_size;
    w.gates().map(|(wg, bias)| {
        let mut out = vec![T::zero(); rows * h];
        if let Some(b) = bias {
            for row in out.chunks_mut(h) {
                row.copy_from_slice(b.value.data());
            }
        }
        gemm(T::one(), MatRef::new(x, rows, w.input_size), w.inp(wg).t(), T::one(), MatMut::new(&mut out, rows, h));
        out
    })
}

/// Gradient of the input projection: accumulates weight/bias gradients and
/// returns `d x`.
fn input_projection_backward<T: Scalar>(w: &GruWeights<T>, d_pre: [&[T]; 3], x: &[T], rows: usize, grads: &mut GruGrads<T>) -> Vec<T> {
    let (h, i) = (w.hidden_size, w.input_size);
    let mut dx = vec![T::zero(); rows * i];
    let wmats = [&w.w_z, &w.w_r, &w.w_h];
    for (g, (d, dw)) in d_pre.iter().zip(grads.weights_mut()).enumerate() {
        gemm(T::one(), MatRef::new(d, rows, h).t(), MatRef::new(x, rows, i), T::one(), MatMut::columns(dw.data_mut(), h, h + i, h, i));
        gemm(T::one(), MatRef::new(d, rows, h), w.inp(wmats[g]), T::one(), MatMut::new(&mut dx, rows, i));
    }
    for (d, db) in d_pre.iter().zip([&mut grads.b_z, &mut grads.b_r, &mut grads.b_h]) {
        if let Some(db) = db {
            for row in d.chunks(h) {
                for (acc, &v) in db.data_mut().iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
    }
    dx
}

#[derive(Debug, Clone)]
struct StepCache<T> {
    z: Vec<T>,
    r: Vec<T>,
    cand: Vec<T>,
}

fn step<T: Scalar>(w: &GruWeights<T>, proj: [&[T]; 3], h_prev: &[T], batch: usize) -> (Vec<T>, StepCache<T>) {
    let h = w.hidden_size;
    let hp = MatRef::new(h_prev, batch, h);
    let mut z = proj[0].to_vec();
    gemm(T::one(), hp, w.rec(&w.w_z).t(), T::one(), MatMut::new(&mut z, batch, h));
    z.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    let mut r = proj[1].to_vec();
    gemm(T::one(), hp, w.rec(&w.w_r).t(), T::one(), MatMut::new(&mut r, batch, h));
    r.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    let rh: Vec<T> = r.iter().zip(h_prev).map(|(&a, &b)| a * b).collect();
    let mut cand = proj[2].to_vec();
    gemm(T::one(), MatRef::new(&rh, batch, h), w.rec(&w.w_h).t(), T::one(), MatMut::new(&mut cand, batch, h));
    cand.iter_mut().for_each(|v| *v = v.tanh());
    let h_new = (0..batch * h).map(|k| (T::one() - z[k]) * h_prev[k] + z[k] * cand[k]).collect();
    (h_new, StepCache { z, r, cand })
}

/// Returns the pre-activation gradients of the three gates and `d h_prev`;
/// accumulates the recurrent-half weight gradients.
fn step_backward<T: Scalar>(
    w: &GruWeights<T>,
    cache: &StepCache<T>,
    h_prev: &[T],
    dh_new: &[T],
    batch: usize,
    grads: &mut GruGrads<T>,
) -> ([Vec<T>; 3], Vec<T>) {
    let h = w.hidden_size;
    let ld = h + w.input_size;
    let n = batch * h;
    let StepCache { z, r, cand } = cache;
    let mut dh_prev: Vec<T> = (0..n).map(|k| dh_new[k] * (T::one() - z[k])).collect();
    let daz: Vec<T> = (0..n).map(|k| dh_new[k] * (cand[k] - h_prev[k]) * z[k] * (T::one() - z[k])).collect();
    let dah: Vec<T> = (0..n).map(|k| dh_new[k] * z[k] * (T::one() - cand[k] * cand[k])).collect();
    let mut drh = vec![T::zero(); n];
    gemm(T::one(), MatRef::new(&dah, batch, h), w.rec(&w.w_h), T::zero(), MatMut::new(&mut drh, batch, h));
    let dar: Vec<T> = (0..n).map(|k| drh[k] * h_prev[k] * r[k] * (T::one() - r[k])).collect();
    for k in 0..n {
        dh_prev[k] += drh[k] * r[k];
    }
    gemm(T::one(), MatRef::new(&daz, batch, h), w.rec(&w.w_z), T::one(), MatMut::new(&mut dh_prev, batch, h));
    gemm(T::one(), MatRef::new(&dar, batch, h), w.rec(&w.w_r), T::one(), MatMut::new(&mut dh_prev, batch, h));

    let rh: Vec<T> = r.iter().zip(h_prev).map(|(&a, &b)| a * b).collect();
    let hp = MatRef::new(h_prev, batch, h);
    let [gz, gr, gh] = grads.weights_mut();
    gemm(T::one(), MatRef::new(&daz, batch, h).t(), hp, T::one(), MatMut::columns(gz.data_mut(), h, ld, 0, h));
    gemm(T::one(), MatRef::new(&dar, batch, h).t(), hp, T::one(), MatMut::columns(gr.data_mut(), h, ld, 0, h));
    gemm(T::one(), MatRef::new(&dah, batch, h).t(), MatRef::new(&rh, batch, h), T::one(), MatMut::columns(gh.data_mut(), h, ld, 0, h));
    ([daz, dar, dah], dh_prev)
}

fn check_input<T: Scalar>(w: &GruWeights<T>, x: &Tensor<T>, rank: usize, op: &'static str) -> Result<()> {
    let s = x.shape();
    if s.len() != rank || s[rank - 1] != w.input_size {
        return shape_err(op, format!("input shape {:?}, expected rank {rank} with {} features", s, w.input_size));
    }
    Ok(())
}

/// Everything a single cell step needs for its backward pass.
#[derive(Debug, Clone)]
pub struct GruCellCache<T> {
    x: Tensor<T>,
    h_prev: Tensor<T>,
    step: StepCache<T>,
}

/// One GRU step: `x_t (B x I)`, `h_prev (B x H)`.
pub fn gru_cell<T: Scalar>(
    x_t: &Tensor<T>,
    h_prev: &Tensor<T>,
    weights: &GruWeights<T>,
    direction: Direction,
) -> Result<(GruState<T>, GruCellCache<T>)> {
    check_input(weights, x_t, 2, "gru_cell")?;
    let batch = x_t.shape()[0];
    if h_prev.shape() != [batch, weights.hidden_size] {
        return shape_err("gru_cell", format!("hidden shape {:?}, expected [{batch}, {}]", h_prev.shape(), weights.hidden_size));
    }
    let proj = input_projection(weights, x_t.data(), batch);
    let (h_new, step) = step(weights, [&proj[0], &proj[1], &proj[2]], h_prev.data(), batch);
    Ok((
        GruState { hidden: Tensor::from_vec(&[batch, weights.hidden_size], h_new)?, direction },
        GruCellCache { x: x_t.clone(), h_prev: h_prev.clone(), step },
    ))
}

/// Returns `(d x_t, d h_prev, weight gradients)`.
pub fn gru_cell_backward<T: Scalar>(
    weights: &GruWeights<T>,
    cache: &GruCellCache<T>,
    dh_new: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, GruGrads<T>)> {
    if dh_new.shape() != cache.h_prev.shape() {
        return shape_err("gru_cell_backward", "gradient shape differs from hidden state");
    }
    let batch = cache.x.shape()[0];
    let mut grads = GruGrads::zeros_like(weights);
    let (d_pre, dh_prev) = step_backward(weights, &cache.step, cache.h_prev.data(), dh_new.data(), batch, &mut grads);
    let dx = input_projection_backward(weights, [&d_pre[0], &d_pre[1], &d_pre[2]], cache.x.data(), batch, &mut grads);
    Ok((Tensor::from_vec(cache.x.shape(), dx)?, Tensor::from_vec(cache.h_prev.shape(), dh_prev)?, grads))
}

/// Cache of a full single-direction pass.
#[derive(Debug, Clone)]
pub struct GruSequenceCache<T> {
    x: Tensor<T>,
    states: Vec<T>,
    steps: Vec<StepCache<T>>,
    direction: Direction,
}

fn order(len: usize, direction: Direction) -> Vec<usize> {
    match direction {
        Direction::Forward => (0..len).collect(),
        Direction::Backward => (0..len).rev().collect(),
    }
}

fn run_sequence<T: Scalar>(weights: &GruWeights<T>, x: &Tensor<T>, direction: Direction) -> Result<(Tensor<T>, Vec<StepCache<T>>)> {
    check_input(weights, x, 3, "gru_sequence")?;
    let (steps, batch) = (x.shape()[0], x.shape()[1]);
    let h = weights.hidden_size;
    let proj = input_projection(weights, x.data(), steps * batch);
    let mut states = vec![T::zero(); steps * batch * h];
    let mut caches = Vec::with_capacity(steps);
    let mut hidden = vec![T::zero(); batch * h];
    for t in order(steps, direction) {
        let rows = t * batch * h..(t + 1) * batch * h;
        let p = [&proj[0][rows.clone()], &proj[1][rows.clone()], &proj[2][rows.clone()]];
        let (h_new, cache) = step(weights, p, &hidden, batch);
        states[rows].copy_from_slice(&h_new);
        hidden = h_new;
        caches.push(cache);
    }
    Ok((Tensor::from_vec(&[steps, batch, h], states)?, caches))
}

/// Runs one direction over `x (T x B x I)` from a zero initial state and
/// returns the `T x B x H` states indexed by time (for the backward direction,
/// `states[t]` has seen `x_t .. x_T`).
pub fn gru_sequence<T: Scalar>(weights: &GruWeights<T>, x: &Tensor<T>, direction: Direction) -> Result<(Tensor<T>, GruSequenceCache<T>)> {
    let (states, steps) = run_sequence(weights, x, direction)?;
    let cache = GruSequenceCache { x: x.clone(), states: states.data().to_vec(), steps, direction };
    Ok((states, cache))
}

/// Backpropagation through time. `d_states` is the loss gradient with respect
/// to every returned state.
pub fn gru_sequence_backward<T: Scalar>(
    weights: &GruWeights<T>,
    cache: &GruSequenceCache<T>,
    d_states: &Tensor<T>,
) -> Result<(Tensor<T>, GruGrads<T>)> {
    let (steps, batch) = (cache.x.shape()[0], cache.x.shape()[1]);
    let h = weights.hidden_size;
    if d_states.shape() != [steps, batch, h] {
        return shape_err("gru_sequence_backward", format!("gradient shape {:?}, expected {:?}", d_states.shape(), [steps, batch, h]));
    }
    let mut grads = GruGrads::zeros_like(weights);
    let mut d_pre = [vec![T::zero(); steps * batch * h], vec![T::zero(); steps * batch * h], vec![T::zero(); steps * batch * h]];
    let zeros = vec![T::zero(); batch * h];
    let ord = order(steps, cache.direction);
    let mut dh = vec![T::zero(); batch * h];
    for (k, &t) in ord.iter().enumerate().rev() {
        let rows = t * batch * h..(t + 1) * batch * h;
        for (a, &g) in dh.iter_mut().zip(&d_states.data()[rows.clone()]) {
            *a += g;
        }
        let h_prev = if k == 0 {
            &zeros[..]
        } else {
            let p = ord[k - 1];
            &cache.states[p * batch * h..(p + 1) * batch * h]
        };
        let (dp, dh_prev) = step_backward(weights, &cache.steps[k], h_prev, &dh, batch, &mut grads);
        for (dst, src) in d_pre.iter_mut().zip(dp) {
            dst[rows.clone()].copy_from_slice(&src);
        }
        dh = dh_prev;
    }
    let dx = input_projection_backward(weights, [&d_pre[0], &d_pre[1], &d_pre[2]], cache.x.data(), steps * batch, &mut grads);
    Ok((Tensor::from_vec(cache.x.shape(), dx)?, grads))
}

/// Cache of a bidirectional pass.
#[derive(Debug, Clone)]
pub struct BiGruCache<T> {
    pub forward: GruSequenceCache<T>,
    pub backward: GruSequenceCache<T>,
}

/// Both directions over `x (T x B x I)`; returns `(forward_states, backward_states)`.
pub fn bigru_sequence<T: Scalar>(
    x: &Tensor<T>,
    forward: &GruWeights<T>,
    backward: &GruWeights<T>,
) -> Result<(Tensor<T>, Tensor<T>, BiGruCache<T>)> {
    let (fs, fc) = gru_sequence(forward, x, Direction::Forward)?;
    let (bs, bc) = gru_sequence(backward, x, Direction::Backward)?;
    Ok((fs, bs, BiGruCache { forward: fc, backward: bc }))
}

/// Returns `(d x, forward grads, backward grads)`.
pub fn bigru_sequence_backward<T: Scalar>(
    forward: &GruWeights<T>,
    backward: &GruWeights<T>,
    cache: &BiGruCache<T>,
    d_forward: &Tensor<T>,
    d_backward: &Tensor<T>,
) -> Result<(Tensor<T>, GruGrads<T>, GruGrads<T>)> {
    let (mut dx, gf) = gru_sequence_backward(forward, &cache.forward, d_forward)?;
    let (dxb, gb) = gru_sequence_backward(backward, &cache.backward, d_backward)?;
    for (a, &b) in dx.data_mut().iter_mut().zip(dxb.data()) {
        *a += b;
    }
    Ok((dx, gf, gb))
}

/// Bidirectional GRU layer holding both directions' weights.
#[derive(Debug, Clone)]
pub struct BiGru<T = f32> {
    pub forward: GruWeights<T>,
    pub backward: GruWeights<T>,
    cache: Option<BiGruCache<T>>,
}

impl<T: Scalar> BiGru<T> {
    pub fn new(prefix: &str, input_size: usize, hidden_size: usize, with_bias: bool, rng: &mut impl Rng) -> Self {
        Self {
            forward: GruWeights::new(&join(prefix, "forward"), input_size, hidden_size, with_bias, rng),
            backward: GruWeights::new(&join(prefix, "backward"), input_size, hidden_size, with_bias, rng),
            cache: None,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size()
    }

    pub fn forward_seq(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (f, b, cache) = bigru_sequence(x, &self.forward, &self.backward)?;
        self.cache = Some(cache);
        Ok((f, b))
    }

    pub fn backward_seq(&mut self, d_forward: &Tensor<T>, d_backward: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(NnError::NoForwardCache("bigru"))?;
        let (dx, gf, gb) = bigru_sequence_backward(&self.forward, &self.backward, &cache, d_forward, d_backward)?;
        self.forward.accumulate(&gf);
        self.backward.accumulate(&gb);
        Ok(dx)
    }

    pub fn infer_seq(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (f, _) = run_sequence(&self.forward, x, Direction::Forward)?;
        let (b, _) = run_sequence(&self.backward, x, Direction::Backward)?;
        Ok((f, b))
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = self.forward.params();
        v.extend(self.backward.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.forward.params_mut();
        v.extend(self.backward.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_halve_the_previous_state() {
        let w = GruWeights::<f64>::zeros("g", 3, 4, false);
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 - 2.0);
        let h = Tensor::full(&[2, 4], 1.0);
        let (state, cache) = gru_cell(&x, &h, &w, Direction::Forward).unwrap();
        assert!(state.hidden.data().iter().all(|&v| v == 0.5));
        assert!(cache.step.z.iter().all(|&v| v == 0.5));
        assert!(cache.step.r.iter().all(|&v| v == 0.5));
        assert!(cache.step.cand.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_input_and_state_stay_zero_for_any_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = GruWeights::<f64>::new("g", 3, 4, false, &mut rng);
        let (state, _) = gru_cell(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 4]), &w, Direction::Forward).unwrap();
        assert!(state.hidden.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_sequence_equals_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fw = GruWeights::<f64>::new("f", 3, 5, false, &mut rng);
        let bw = GruWeights::<f64>::new("b", 3, 5, false, &mut rng);
        let x = Tensor::from_fn(&[1, 2, 3], |i| (i as f64 * 0.7).sin());
        let (f, b, _) = bigru_sequence(&x, &fw, &bw).unwrap();
        let x1 = x.clone().reshape(&[2, 3]).unwrap();
        let h0 = Tensor::zeros(&[2, 5]);
        let (cf, _) = gru_cell(&x1, &h0, &fw, Direction::Forward).unwrap();
        let (cb, _) = gru_cell(&x1, &h0, &bw, Direction::Backward).unwrap();
        assert_eq!(f.data(), cf.hidden.data());
        assert_eq!(b.data(), cb.hidden.data());
    }

    #[test]
    fn zero_weight_recurrence_stays_zero() {
        let fw = GruWeights::<f64>::zeros("f", 4, 3, false);
        let bw = GruWeights::<f64>::zeros("b", 4, 3, false);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::from_fn(&[6, 2, 4], |_| rng.random_range(-1.0..1.0));
        let (f, b, _) = bigru_sequence(&x, &fw, &bw).unwrap();
        assert!(f.data().iter().chain(b.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn reversing_input_swaps_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fw = GruWeights::<f64>::new("f", 3, 4, false, &mut rng);
        let bw = GruWeights::<f64>::new("b", 3, 4, false, &mut rng);
        let (t, b, i) = (5, 2, 3);
        let x = Tensor::from_fn(&[t, b, i], |_| rng.random_range(-1.0..1.0));
        let mut rev = Tensor::zeros(&[t, b, i]);
        for s in 0..t {
            let src = &x.data()[s * b * i..(s + 1) * b * i];
            rev.data_mut()[(t - 1 - s) * b * i..(t - s) * b * i].copy_from_slice(src);
        }
        let (_, back, _) = bigru_sequence(&x, &fw, &bw).unwrap();
        // swapped weights: the reversed input runs forward with the backward weights
        let (fwd_rev, _, _) = bigru_sequence(&rev, &bw, &fw).unwrap();
        let hs = b * 4;
        for s in 0..t {
            let a = &fwd_rev.data()[s * hs..(s + 1) * hs];
            let e = &back.data()[(t - 1 - s) * hs..(t - s) * hs];
            for (u, v) in a.iter().zip(e) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let w = GruWeights::<f64>::zeros("g", 3, 4, false);
        assert!(gru_cell(&Tensor::zeros(&[2, 5]), &Tensor::zeros(&[2, 4]), &w, Direction::Forward).is_err());
        assert!(gru_cell(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3, 4]), &w, Direction::Forward).is_err());
    }
}
