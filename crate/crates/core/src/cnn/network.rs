//! The regression network: a full convolution, five depthwise-separable
//! blocks, global average pooling and two fully connected layers.
//!
//! Every convolution (full, depthwise or pointwise) is followed by batch
//! normalization and ReLU. The first fully connected layer is followed by
//! ReLU and inverted dropout; the second produces the single normalized
//! heart-rate output with no activation.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    AvgPool, BatchNorm, BatchStats, Conv2d, Dense, Depthwise, Dropout, Layer,
    LayerCache, LayerKind, Mode, Pointwise, Shape, Tensor,
};
use super::scalar::Scalar;
use crate::error::{Error, Result};

pub const INPUT_SHAPE: Shape = Shape::new(25, 25, 3);
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_KEEP: f64 = 0.4;

/// Linear map between bpm and the unit-interval training target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelNorm {
    pub hr_min: f64,
    pub hr_max: f64,
}

impl Default for LabelNorm {
    fn default() -> Self {
        LabelNorm {
            hr_min: 45.0,
            hr_max: 240.0,
        }
    }
}

impl LabelNorm {
    pub fn normalize(&self, bpm: f64) -> f64 {
        (bpm - self.hr_min) / (self.hr_max - self.hr_min)
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.hr_min + v * (self.hr_max - self.hr_min)
    }
}

/// Per-channel affine map applied to feature images before the first layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputNorm {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for InputNorm {
    fn default() -> Self {
        InputNorm {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

impl InputNorm {
    /// Statistics over all values of a set of HWC samples.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut count = 0usize;
        for s in samples {
            for px in s.chunks_exact(3) {
                for c in 0..3 {
                    sum[c] += px[c];
                    sq[c] += px[c] * px[c];
                }
                count += 1;
            }
        }
        if count == 0 {
            return InputNorm::default();
        }
        let n = count as f64;
        let mut out = InputNorm::default();
        for c in 0..3 {
            let mean = sum[c] / n;
            let var = (sq[c] / n - mean * mean).max(0.0);
            out.mean[c] = mean;
            out.std[c] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        out
    }

    pub fn apply<T: Scalar>(&self, hwc: &[f64], out: &mut Vec<T>) {
        for px in hwc.chunks_exact(3) {
            for c in 0..3 {
                out.push(T::of((px[c] - self.mean[c]) / self.std[c]));
            }
        }
    }
}

/// One row of the architecture table: a group of layers sharing a label.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub label: &'static str,
    pub layers: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub layers: Vec<Layer<T>>,
    pub stages: Vec<Stage>,
    pub input_norm: InputNorm,
    pub label_norm: LabelNorm,
}

/// Cached activations of a training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub layers: Vec<LayerCache<T>>,
    pub bn_stats: Vec<Option<BatchStats>>,
    pub batch: usize,
}

pub type Gradients<T> = Vec<Vec<Vec<T>>>;

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect()
}

fn batch_norm<T: Scalar>(c: usize) -> Layer<T> {
    Layer::BatchNorm(BatchNorm {
        c,
        gamma: vec![T::one(); c],
        beta: vec![T::zero(); c],
        running_mean: vec![T::zero(); c],
        running_var: vec![T::one(); c],
        momentum: BN_MOMENTUM,
        eps: BN_EPS,
    })
}

/// Layer-stack builder that keeps stage boundaries.
struct Builder<T> {
    layers: Vec<Layer<T>>,
    stages: Vec<Stage>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<T> {
    fn stage(&mut self, label: &'static str, layers: Vec<Layer<T>>) {
        let start = self.layers.len();
        self.layers.extend(layers);
        self.stages.push(Stage {
            label,
            layers: start..self.layers.len(),
        });
    }

    fn conv(&mut self, k: usize, cin: usize, cout: usize, pad: usize) {
        let weight = uniform(&mut self.rng, k * k * cin * cout, k * k * cin);
        let l = Layer::Conv(Conv2d { k, cin, cout, stride: 1, pad, weight });
        self.stage("Conv", vec![l, batch_norm(cout), Layer::Relu]);
    }

    fn dw(&mut self, c: usize, stride: usize, pad: usize) {
        let weight = uniform(&mut self.rng, 9 * c, 9);
        let l = Layer::Depthwise(Depthwise { k: 3, c, stride, pad, weight });
        self.stage("DwConv", vec![l, batch_norm(c), Layer::Relu]);
    }

    fn pw(&mut self, cin: usize, cout: usize) {
        let weight = uniform(&mut self.rng, cin * cout, cin);
        let l = Layer::Pointwise(Pointwise { cin, cout, weight });
        self.stage("PwConv", vec![l, batch_norm(cout), Layer::Relu]);
    }

    fn dense(&mut self, input: usize, output: usize) -> Layer<T> {
        Layer::Dense(Dense {
            input,
            output,
            weight: uniform(&mut self.rng, input * output, input),
            bias: vec![T::zero(); output],
        })
    }
}

impl<T: Scalar> Network<T> {
    /// The 25×25×3 → 1 architecture with seeded fan-in-scaled uniform
    /// weights, unit BN scale and zero shifts/biases.
    pub fn table_one(seed: u64) -> Self {
        Self::table_one_with_keep(seed, DEFAULT_KEEP)
    }

    pub fn table_one_with_keep(seed: u64, keep: f64) -> Self {
        let mut b = Builder {
            layers: Vec::new(),
            stages: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        b.conv(5, 3, 96, 1);
        b.dw(96, 1, 0);
        b.pw(96, 96);
        b.dw(96, 2, 1);
        b.pw(96, 96);
        b.dw(96, 2, 1);
        b.pw(96, 128);
        b.dw(128, 2, 1);
        b.pw(128, 128);
        b.dw(128, 2, 1);
        b.pw(128, 128);
        b.stage("AvePool", vec![Layer::AvgPool(AvgPool { k: 2, stride: 1 })]);
        let fc1 = b.dense(128, 192);
        b.stage("FC", vec![fc1, Layer::Relu]);
        b.stage("Dropout", vec![Layer::Dropout(Dropout { keep })]);
        let fc2 = b.dense(192, 1);
        b.stage("FC", vec![fc2]);
        Network {
            layers: b.layers,
            stages: b.stages,
            input_norm: InputNorm::default(),
            label_norm: LabelNorm::default(),
        }
    }

    /// Convert element type (e.g. to `f64` for gradient checks).
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let cv = |v: &Vec<T>| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(Conv2d {
                    k: c.k,
                    cin: c.cin,
                    cout: c.cout,
                    stride: c.stride,
                    pad: c.pad,
                    weight: cv(&c.weight),
                }),
                Layer::Depthwise(d) => Layer::Depthwise(Depthwise {
                    k: d.k,
                    c: d.c,
                    stride: d.stride,
                    pad: d.pad,
                    weight: cv(&d.weight),
                }),
                Layer::Pointwise(p) => Layer::Pointwise(Pointwise {
                    cin: p.cin,
                    cout: p.cout,
                    weight: cv(&p.weight),
                }),
                Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm {
                    c: b.c,
                    gamma: cv(&b.gamma),
                    beta: cv(&b.beta),
                    running_mean: cv(&b.running_mean),
                    running_var: cv(&b.running_var),
                    momentum: b.momentum,
                    eps: b.eps,
                }),
                Layer::Relu => Layer::Relu,
                Layer::AvgPool(p) => Layer::AvgPool(p.clone()),
                Layer::Dense(d) => Layer::Dense(Dense {
                    input: d.input,
                    output: d.output,
                    weight: cv(&d.weight),
                    bias: cv(&d.bias),
                }),
                Layer::Dropout(d) => Layer::Dropout(d.clone()),
            })
            .collect();
        Network {
            layers,
            stages: self.stages.clone(),
            input_norm: self.input_norm,
            label_norm: self.label_norm,
        }
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|(_, p)| p.len())
            .sum()
    }

    /// `(name, values)` for every trainable group, e.g. `"s03.PwConv.L6.weight"`.
    pub fn named_params(&self) -> Vec<(String, &Vec<T>)> {
        let mut out = Vec::new();
        for (si, st) in self.stages.iter().enumerate() {
            for li in st.layers.clone() {
                for (pn, p) in self.layers[li].params() {
                    let kind = format!("{:?}", self.layers[li].kind());
                    out.push((format!("s{:02}.{}.{kind}{li}.{pn}", si + 1, st.label), p));
                }
            }
        }
        out
    }

    /// Shape entering each stage, plus the final output shape (the input
    /// of the loss row).
    pub fn stage_input_shapes(&self) -> Vec<Shape> {
        let mut s = INPUT_SHAPE;
        let mut out = vec![s];
        for st in &self.stages {
            for li in st.layers.clone() {
                s = self.layers[li].output_shape(s);
            }
            out.push(s);
        }
        out
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        self.layers.iter().map(Layer::zero_grads).collect()
    }

    /// Normalize HWC feature-image samples into a network input batch.
    pub fn prepare_input(&self, samples: &[&[f64]]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(samples.len() * INPUT_SHAPE.size());
        for s in samples {
            if s.len() != INPUT_SHAPE.size() {
                return Err(Error::Cnn(format!(
                    "input has {} values, expected {}",
                    s.len(),
                    INPUT_SHAPE
                )));
            }
            self.input_norm.apply(s, &mut data);
        }
        Ok(Tensor::from_vec(samples.len(), INPUT_SHAPE, data))
    }

    fn check_input(x: &Tensor<T>) -> Result<()> {
        if x.shape != INPUT_SHAPE || x.n == 0 {
            return Err(Error::Cnn(format!(
                "expected a non-empty batch of {INPUT_SHAPE}, got {} x {}",
                x.n, x.shape
            )));
        }
        Ok(())
    }

    fn check_finite(a: &Tensor<T>, l: &Layer<T>) -> Result<()> {
        if a.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite activation after {:?} layer", l.kind())))
        }
    }

    /// Inference pass; BN uses running statistics and dropout is identity.
    pub fn forward_infer(&self, x: Tensor<T>) -> Result<Vec<T>> {
        Self::check_input(&x)?;
        let mut mode: Mode<'_, ChaCha8Rng> = Mode::Infer;
        let mut a = x;
        for l in &self.layers {
            a = l.forward(a, &mut mode).0;
            Self::check_finite(&a, l)?;
        }
        Ok(a.data)
    }

    /// Activation shapes at every stage boundary from a real inference pass.
    pub fn trace_shapes(&self, x: Tensor<T>) -> Result<Vec<Shape>> {
        Self::check_input(&x)?;
        let mut mode: Mode<'_, ChaCha8Rng> = Mode::Infer;
        let mut a = x;
        let mut out = vec![a.shape];
        for st in &self.stages {
            for li in st.layers.clone() {
                a = self.layers[li].forward(a, &mut mode).0;
            }
            out.push(a.shape);
        }
        Ok(out)
    }

    /// Training pass: batch statistics in BN, dropout masks drawn from `rng`.
    pub fn forward_train<R: Rng>(&self, x: Tensor<T>, rng: &mut R) -> Result<(Vec<T>, ForwardCache<T>)> {
        Self::check_input(&x)?;
        let batch = x.n;
        let mut mode = Mode::Train(rng);
        let mut a = x;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (y, c, s) = l.forward(a, &mut mode);
            Self::check_finite(&y, l)?;
            caches.push(c.expect("train mode always caches"));
            stats.push(s);
            a = y;
        }
        Ok((
            a.data,
            ForwardCache {
                layers: caches,
                bn_stats: stats,
                batch,
            },
        ))
    }

    /// Gradients of the loss given `d_out`, its derivative with respect to
    /// each scalar output.
    pub fn backward(&self, cache: &ForwardCache<T>, d_out: &[T]) -> Result<Gradients<T>> {
        if cache.layers.len() != self.layers.len() || d_out.len() != cache.batch {
            return Err(Error::Cnn("stale or mismatched forward cache".into()));
        }
        let mut grads = self.zero_grads();
        let mut g = Tensor::from_vec(cache.batch, Shape::new(1, 1, 1), d_out.to_vec());
        for (i, l) in self.layers.iter().enumerate().rev() {
            let need_dx = i > 0;
            match l.backward(&cache.layers[i], g, &mut grads[i], need_dx) {
                Some(dx) => g = dx,
                None => break,
            }
        }
        Ok(grads)
    }

    /// Fold the batch statistics of a training pass into BN running stats.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        for (l, s) in self.layers.iter_mut().zip(&cache.bn_stats) {
            if let (Layer::BatchNorm(bn), Some(s)) = (l, s) {
                bn.update_running(s);
            }
        }
    }

    /// Inference over HWC samples in chunks, returning raw unit-interval
    /// outputs.
    pub fn predict_raw(&self, samples: &[&[f64]]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(32) {
            let x = self.prepare_input(chunk)?;
            out.extend(self.forward_infer(x)?.into_iter().map(Scalar::as_f64));
        }
        Ok(out)
    }
}

/// Parameter count implied by the architecture table, computed from its
/// filter shapes alone.
pub fn table_one_param_count() -> usize {
    let conv = 5 * 5 * 3 * 96;
    let dw = |c: usize| 3 * 3 * c;
    let pw = |a: usize, b: usize| a * b;
    let bn = |c: usize| 2 * c;
    let blocks = [(96, 96), (96, 96), (96, 128), (128, 128), (128, 128)];
    let mut n = conv + bn(96);
    for (cin, cout) in blocks {
        n += dw(cin) + bn(cin) + pw(cin, cout) + bn(cout);
    }
    n + (128 * 192 + 192) + (192 + 1)
}
