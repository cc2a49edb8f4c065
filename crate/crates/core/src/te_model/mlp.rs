//! Fully connected layers with rectifier hidden units and a single logit
//! output, forward and reverse mode written out by hand.

use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    /// Row-major `outputs × inputs`.
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub inputs: usize,
}

impl<T: Real> Dense<T> {
    pub fn outputs(&self) -> usize {
        self.b.len()
    }

    pub fn row(&self, o: usize) -> &[T] {
        &self.w[o * self.inputs..(o + 1) * self.inputs]
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Activations kept for the backward pass: `acts[0]` is the input batch,
/// `acts[l]` the post-activation output of layer `l` (the last one holds
/// raw logits).
pub struct Tape<T> {
    pub acts: Vec<Vec<T>>,
    pub batch: usize,
}

pub fn forward_batch<T: Real>(layers: &[Dense<T>], input: Vec<T>, batch: usize) -> Tape<T> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input);
    for (l, layer) in layers.iter().enumerate() {
        let last = l + 1 == layers.len();
        let prev = &acts[l];
        let out_n = layer.outputs();
        let mut out = vec![T::zero(); batch * out_n];
        for s in 0..batch {
            let x = &prev[s * layer.inputs..(s + 1) * layer.inputs];
            for o in 0..out_n {
                let z = dot(layer.row(o), x) + layer.b[o];
                out[s * out_n + o] = if last || z > T::zero() { z } else { T::zero() };
            }
        }
        acts.push(out);
    }
    Tape { acts, batch }
}

/// Gradients with the same shapes as the layers.
#[derive(Clone, Debug)]
pub struct Grads<T> {
    pub w: Vec<Vec<T>>,
    pub b: Vec<Vec<T>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros_like(layers: &[Dense<T>]) -> Self {
        Self {
            w: layers.iter().map(|l| vec![T::zero(); l.w.len()]).collect(),
            b: layers.iter().map(|l| vec![T::zero(); l.b.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.w.iter_mut().chain(self.b.iter_mut()).for_each(|g| g.fill(T::zero()));
    }
}

/// Back-propagates `d_logits` (∂loss/∂logit per sample) through the tape,
/// accumulating into `grads`.
pub fn backward<T: Real>(layers: &[Dense<T>], tape: &Tape<T>, d_logits: &[T], grads: &mut Grads<T>) {
    let batch = tape.batch;
    let mut delta = d_logits.to_vec();
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let out_n = layer.outputs();
        let prev = &tape.acts[l];
        for s in 0..batch {
            let x = &prev[s * layer.inputs..(s + 1) * layer.inputs];
            for o in 0..out_n {
                let d = delta[s * out_n + o];
                if d == T::zero() {
                    continue;
                }
                grads.b[l][o] += d;
                axpy(d, x, &mut grads.w[l][o * layer.inputs..(o + 1) * layer.inputs]);
            }
        }
        if l == 0 {
            break;
        }
        // δ_prev = (Wᵀ δ) ⊙ 1[a_prev > 0]
        let mut prev_delta = vec![T::zero(); batch * layer.inputs];
        for s in 0..batch {
            let pd = &mut prev_delta[s * layer.inputs..(s + 1) * layer.inputs];
            for o in 0..out_n {
                let d = delta[s * out_n + o];
                if d != T::zero() {
                    axpy(d, layer.row(o), pd);
                }
            }
            let a = &prev[s * layer.inputs..(s + 1) * layer.inputs];
            for (g, av) in pd.iter_mut().zip(a) {
                if *av <= T::zero() {
                    *g = T::zero();
                }
            }
        }
        delta = prev_delta;
    }
}
