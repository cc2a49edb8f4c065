//! Per-voxel traversability classifier `p_τ = f(x)`.
//!
//! The input is a 3×3×3 stencil of voxel feature vectors plus presence
//! bits; the network is a small rectifier MLP with a logistic output,
//! trained with class-weighted binary cross entropy and Adam with decoupled
//! weight decay.

mod io;
mod mlp;
mod stencil;
mod train;

pub use io::{read_model, write_model, MODEL_FORMAT_VERSION};
pub use mlp::{backward, dot, forward_batch, Dense, Grads, Tape};
pub use stencil::{fill_stencil, stencil_input, stencil_offsets, STENCIL_CELLS, STENCIL_DIM};
pub use train::{bce_loss, class_weights, loss_and_grads, train, TrainConfig, TrainOutcome, TrainSample};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::{logistic, Real};
use crate::voxel_map::{key_map, FeatureSource, KeyMap, VoxelKey};

/// Hidden layout used by the pipeline.
pub const DEFAULT_ARCH: [usize; 4] = [STENCIL_DIM, 64, 32, 1];

const STD_FLOOR: f64 = 1e-6;

/// Per-dimension standardization applied before the first layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    pub fitted: bool,
}

impl<T: Real> Normalization<T> {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![T::zero(); dim], std: vec![T::one(); dim], fitted: false }
    }

    /// Fits mean and population std over the rows of `inputs`. A dimension
    /// that is constant on the fit set keeps unit scale, so values it takes
    /// later are not blown up.
    pub fn fit<'a>(dim: usize, inputs: impl Iterator<Item = &'a [T]> + Clone) -> Self {
        let mut mean = vec![0.0f64; dim];
        let mut n = 0usize;
        for x in inputs.clone() {
            n += 1;
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v.to_f64_lossy();
            }
        }
        let n_f = n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n_f);
        let mut var = vec![0.0f64; dim];
        for x in inputs {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                let d = v.to_f64_lossy() - m;
                *s += d * d;
            }
        }
        Self {
            mean: mean.into_iter().map(T::lit).collect(),
            std: var
                .into_iter()
                .map(|s| {
                    let sd = (s / n_f).sqrt();
                    T::lit(if sd < STD_FLOOR { 1.0 } else { sd })
                })
                .collect(),
            fitted: true,
        }
    }

    pub fn apply(&self, x: &[T], out: &mut [T]) {
        for (((o, v), m), s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.std) {
            *o = (*v - *m) / *s;
        }
    }
}

/// Network parameters, normalization and the seed they were drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct TEModel<T> {
    pub arch: Vec<usize>,
    pub seed: u64,
    pub normalization: Normalization<T>,
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> TEModel<T> {
    /// Glorot-uniform weights, zero biases; deterministic per seed.
    pub fn init(seed: u64) -> Self {
        Self::with_arch(&DEFAULT_ARCH, seed)
    }

    pub fn with_arch(arch: &[usize], seed: u64) -> Self {
        assert!(arch.len() >= 2 && *arch.last().unwrap() == 1, "arch must end in a single logit");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = (0..fan_in * fan_out).map(|_| T::lit(rng.random_range(-limit..limit))).collect();
                Dense { w: weights, b: vec![T::zero(); fan_out], inputs: fan_in }
            })
            .collect();
        Self { arch: arch.to_vec(), seed, normalization: Normalization::identity(arch[0]), layers }
    }

    /// Every parameter zero: the output is 0.5 for any input.
    pub fn zeroed(arch: &[usize]) -> Self {
        let mut m = Self::with_arch(arch, 0);
        for l in &mut m.layers {
            l.w.fill(T::zero());
            l.b.fill(T::zero());
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.arch[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }

    /// Normalizes a batch of raw rows into one contiguous buffer.
    pub(crate) fn normalize_batch<'a>(&self, rows: impl Iterator<Item = &'a [T]>) -> (Vec<T>, usize) {
        let dim = self.input_dim();
        let mut buf = Vec::new();
        let mut n = 0;
        for r in rows {
            let start = buf.len();
            buf.resize(start + dim, T::zero());
            self.normalization.apply(r, &mut buf[start..]);
            n += 1;
        }
        (buf, n)
    }

    pub fn logit(&self, input: &[T]) -> Result<T> {
        if input.len() != self.input_dim() {
            return Err(Error::InputWidth { expected: self.input_dim(), found: input.len() });
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let (x, n) = self.normalize_batch(std::iter::once(input));
        let tape = forward_batch(&self.layers, x, n);
        Ok(tape.acts.last().expect("output layer")[0])
    }

    /// Belief that the voxel is traversable.
    pub fn forward(&self, input: &[T]) -> Result<T> {
        Ok(logistic(self.logit(input)?))
    }

    /// Traversability for many raw inputs at once.
    pub fn forward_many(&self, inputs: &[Vec<T>]) -> Result<Vec<T>> {
        for x in inputs {
            if x.len() != self.input_dim() {
                return Err(Error::InputWidth { expected: self.input_dim(), found: x.len() });
            }
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(256) {
            let (x, n) = self.normalize_batch(chunk.iter().map(Vec::as_slice));
            let tape = forward_batch(&self.layers, x, n);
            out.extend(tape.acts.last().expect("output layer").iter().map(|z| logistic(*z)));
        }
        Ok(out)
    }

    /// One prediction per key that has features in `src`.
    pub fn predict_map<F: FeatureSource<T> + ?Sized>(&self, src: &F, keys: &[VoxelKey]) -> Result<KeyMap<T>> {
        let mut out = key_map();
        let dim = self.input_dim();
        let mut rows: Vec<Vec<T>> = Vec::new();
        let mut row_keys: Vec<VoxelKey> = Vec::new();
        let flush = |rows: &mut Vec<Vec<T>>, row_keys: &mut Vec<VoxelKey>, out: &mut KeyMap<T>| -> Result<()> {
            let p = self.forward_many(rows)?;
            for (k, v) in row_keys.drain(..).zip(p) {
                out.insert(k, v);
            }
            rows.clear();
            Ok(())
        };
        for key in keys {
            let mut x = vec![T::zero(); dim];
            if dim == STENCIL_DIM {
                if !fill_stencil(src, key, &mut x) {
                    continue;
                }
            } else {
                match src.features_at(key) {
                    Some(f) if f.0.len() == dim => x.copy_from_slice(&f.0),
                    _ => continue,
                }
            }
            rows.push(x);
            row_keys.push(*key);
            if rows.len() == 1024 {
                flush(&mut rows, &mut row_keys, &mut out)?;
            }
        }
        flush(&mut rows, &mut row_keys, &mut out)?;
        Ok(out)
    }
}
