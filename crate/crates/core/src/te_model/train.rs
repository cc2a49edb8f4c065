use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{backward, forward_batch, Dense, Grads};
use super::{Normalization, TEModel};
use crate::collision_map::Label;
use crate::error::{Error, Result};
use crate::real::{logistic, Real};

const P_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            weight_decay: 9e-4,
            batch_size: 64,
            epochs: 40,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Schedule used when training from scratch on a full dataset.
    pub fn offline() -> Self {
        Self { epochs: 150, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.batch_size >= 1
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample<T> {
    pub input: Vec<T>,
    pub label: Label,
}

impl<T> TrainSample<T> {
    /// Regression target: 1 for traversable.
    pub fn target(&self) -> f64 {
        match self.label {
            Label::Traversable => 1.0,
            Label::NonTraversable => 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: TEModel<T>,
    pub epoch_losses: Vec<f64>,
}

/// `−[y ln p + (1−y) ln(1−p)]` with `p` clamped away from 0 and 1.
pub fn bce_loss<T: Real>(p: T, y: T) -> T {
    let lo = T::lit(P_CLAMP);
    let p = p.max(lo).min(T::one() - lo);
    -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
}

/// Inverse-frequency weights `N / (2 N_c)` for the (TR, NTR) classes.
/// A class that does not occur gets weight 1.
pub fn class_weights<T>(samples: &[TrainSample<T>]) -> (f64, f64) {
    let n = samples.len() as f64;
    let n_tr = samples.iter().filter(|s| s.label == Label::Traversable).count() as f64;
    let n_ntr = n - n_tr;
    let w = |c: f64| if c > 0.0 && n_tr > 0.0 && n_ntr > 0.0 { n / (2.0 * c) } else { 1.0 };
    (w(n_tr), w(n_ntr))
}

/// Weighted mean BCE over a normalized batch and its gradient.
///
/// `inputs` holds `targets.len()` rows, already normalized.
pub fn loss_and_grads<T: Real>(
    layers: &[Dense<T>],
    inputs: Vec<T>,
    targets: &[T],
    weights: &[T],
    grads: &mut Grads<T>,
) -> T {
    let b = targets.len();
    let tape = forward_batch(layers, inputs, b);
    let logits = tape.acts.last().expect("output layer");
    let inv_b = T::one() / T::from_count(b as u64);
    let mut loss = T::zero();
    let mut d = Vec::with_capacity(b);
    for ((z, y), w) in logits.iter().zip(targets).zip(weights) {
        let p = logistic(*z);
        loss += *w * bce_loss(p, *y);
        d.push(*w * (p - *y) * inv_b);
    }
    backward(layers, &tape, &d, grads);
    loss * inv_b
}

struct AdamW<T> {
    m: Grads<T>,
    v: Grads<T>,
    step: i32,
}

impl<T: Real> AdamW<T> {
    fn new(layers: &[Dense<T>]) -> Self {
        Self { m: Grads::zeros_like(layers), v: Grads::zeros_like(layers), step: 0 }
    }

    fn update(&mut self, layers: &mut [Dense<T>], g: &Grads<T>, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let c1 = T::one() / (T::one() - b1.powi(self.step));
        let c2 = T::one() / (T::one() - b2.powi(self.step));
        let lr = T::lit(cfg.learning_rate);
        let decay = T::one() - lr * T::lit(cfg.weight_decay);
        let eps = T::lit(cfg.eps);
        let step = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
            for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (T::one() - b1) * *g;
                *v = b2 * *v + (T::one() - b2) * *g * *g;
                *p = *p * decay - lr * (*m * c1) / ((*v * c2).sqrt() + eps);
            }
        };
        for (l, layer) in layers.iter_mut().enumerate() {
            step(&mut layer.w, &g.w[l], &mut self.m.w[l], &mut self.v.w[l]);
            step(&mut layer.b, &g.b[l], &mut self.m.b[l], &mut self.v.b[l]);
        }
    }
}

/// Mini-batch training; returns the new model and the mean loss of every
/// epoch. The input model is left untouched.
///
/// A model whose normalization has not been fitted gets it fitted on
/// `samples` before the first epoch; a fitted one keeps its statistics so
/// that continued training stays consistent with what it learned before.
pub fn train<T: Real>(model: &TEModel<T>, samples: &[TrainSample<T>], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    let dim = model.input_dim();
    for s in samples {
        if s.input.len() != dim {
            return Err(Error::InputWidth { expected: dim, found: s.input.len() });
        }
        if !s.input.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
    }
    let mut model = model.clone();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { model, epoch_losses: Vec::new() });
    }
    if !model.normalization.fitted {
        model.normalization = Normalization::fit(dim, samples.iter().map(|s| s.input.as_slice()));
    }
    let (data, n) = model.normalize_batch(samples.iter().map(|s| s.input.as_slice()));
    let (w_tr, w_ntr) = class_weights(samples);
    let targets: Vec<T> = samples.iter().map(|s| T::lit(s.target())).collect();
    let weights: Vec<T> = samples
        .iter()
        .map(|s| T::lit(if s.label == Label::Traversable { w_tr } else { w_ntr }))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut opt = AdamW::new(&model.layers);
    let mut grads = Grads::zeros_like(&model.layers);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch_t = Vec::with_capacity(cfg.batch_size);
    let mut batch_w = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut x = Vec::with_capacity(chunk.len() * dim);
            batch_t.clear();
            batch_w.clear();
            for &i in chunk {
                x.extend_from_slice(&data[i * dim..(i + 1) * dim]);
                batch_t.push(targets[i]);
                batch_w.push(weights[i]);
            }
            grads.clear();
            let loss = loss_and_grads(&model.layers, x, &batch_t, &batch_w, &mut grads);
            total += loss.to_f64_lossy() * chunk.len() as f64;
            opt.update(&mut model.layers, &grads, cfg);
        }
        epoch_losses.push(total / n as f64);
    }
    if !model.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(TrainOutcome { model, epoch_losses })
}
