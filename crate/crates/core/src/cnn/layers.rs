//! Layer kernels with explicit forward caches and backward passes.
//!
//! Activations are batches laid out `n × h × w × c` (channels innermost).
//! Fully connected activations use `h = w = 1`.

use rand::Rng;

use super::scalar::{gemm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Shape { h, w, c }
    }

    pub fn size(&self) -> usize {
        self.h * self.w * self.c
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub shape: Shape,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(n: usize, shape: Shape) -> Self {
        Tensor {
            n,
            shape,
            data: vec![T::zero(); n * shape.size()],
        }
    }

    pub fn from_vec(n: usize, shape: Shape, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * shape.size(), "tensor data length");
        Tensor { n, shape, data }
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.shape.size();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Depthwise,
    Pointwise,
    BatchNorm,
    Relu,
    AvgPool,
    Dense,
    Dropout,
}

/// Output size of a strided window with symmetric padding (floor rule).
pub fn conv_out(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[ky][kx][cin][cout]`
    pub weight: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Depthwise<T> {
    pub k: usize,
    pub c: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[ky][kx][c]`
    pub weight: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pointwise<T> {
    pub cin: usize,
    pub cout: usize,
    /// `[cin][cout]`
    pub weight: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub c: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvgPool {
    pub k: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub input: usize,
    pub output: usize,
    /// `[input][output]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    pub keep: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Depthwise(Depthwise<T>),
    Pointwise(Pointwise<T>),
    BatchNorm(BatchNorm<T>),
    Relu,
    AvgPool(AvgPool),
    Dense(Dense<T>),
    Dropout(Dropout),
}

/// Values a layer keeps from a training forward pass.
#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Conv { cols: Vec<T>, in_shape: Shape },
    Input(Tensor<T>),
    BatchNorm { x_hat: Vec<T>, inv_std: Vec<T> },
    Relu { out: Vec<T> },
    Pool { in_shape: Shape },
    Dropout { mask: Vec<T> },
}

/// Per-channel statistics of one training batch, folded into the running
/// estimates after the step.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

pub enum Mode<'a, R: Rng> {
    Infer,
    Train(&'a mut R),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::Depthwise(_) => LayerKind::Depthwise,
            Layer::Pointwise(_) => LayerKind::Pointwise,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Relu => LayerKind::Relu,
            Layer::AvgPool(_) => LayerKind::AvgPool,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Dropout(_) => LayerKind::Dropout,
        }
    }

    pub fn output_shape(&self, s: Shape) -> Shape {
        match self {
            Layer::Conv(l) => Shape::new(
                conv_out(s.h, l.k, l.stride, l.pad),
                conv_out(s.w, l.k, l.stride, l.pad),
                l.cout,
            ),
            Layer::Depthwise(l) => Shape::new(
                conv_out(s.h, l.k, l.stride, l.pad),
                conv_out(s.w, l.k, l.stride, l.pad),
                s.c,
            ),
            Layer::Pointwise(l) => Shape::new(s.h, s.w, l.cout),
            Layer::AvgPool(p) => Shape::new(
                conv_out(s.h, p.k, p.stride, 0),
                conv_out(s.w, p.k, p.stride, 0),
                s.c,
            ),
            Layer::Dense(l) => Shape::new(1, 1, l.output),
            Layer::BatchNorm(_) | Layer::Relu | Layer::Dropout(_) => s,
        }
    }

    /// Trainable parameter groups, in serialization order.
    pub fn params(&self) -> Vec<(&'static str, &Vec<T>)> {
        match self {
            Layer::Conv(l) => vec![("weight", &l.weight)],
            Layer::Depthwise(l) => vec![("weight", &l.weight)],
            Layer::Pointwise(l) => vec![("weight", &l.weight)],
            Layer::BatchNorm(l) => vec![("gamma", &l.gamma), ("beta", &l.beta)],
            Layer::Dense(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::Relu | Layer::AvgPool(_) | Layer::Dropout(_) => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight],
            Layer::Depthwise(l) => vec![&mut l.weight],
            Layer::Pointwise(l) => vec![&mut l.weight],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Relu | Layer::AvgPool(_) | Layer::Dropout(_) => vec![],
        }
    }

    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params()
            .iter()
            .map(|(_, p)| vec![T::zero(); p.len()])
            .collect()
    }

    pub fn forward<R: Rng>(
        &self,
        x: Tensor<T>,
        mode: &mut Mode<'_, R>,
    ) -> (Tensor<T>, Option<LayerCache<T>>, Option<BatchStats>) {
        let train = matches!(mode, Mode::Train(_));
        match self {
            Layer::Conv(l) => {
                let (y, cols) = l.forward(&x);
                (y, train.then(|| LayerCache::Conv { cols, in_shape: x.shape }), None)
            }
            Layer::Depthwise(l) => {
                let y = l.forward(&x);
                (y, train.then_some(LayerCache::Input(x)), None)
            }
            Layer::Pointwise(l) => {
                let y = l.forward(&x);
                (y, train.then_some(LayerCache::Input(x)), None)
            }
            Layer::BatchNorm(l) => {
                if train {
                    let (y, x_hat, inv_std, stats) = l.forward_train(&x);
                    (y, Some(LayerCache::BatchNorm { x_hat, inv_std }), Some(stats))
                } else {
                    (l.forward_infer(x), None, None)
                }
            }
            Layer::Relu => {
                let mut y = x;
                for v in &mut y.data {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
                let cache = train.then(|| LayerCache::Relu { out: y.data.clone() });
                (y, cache, None)
            }
            Layer::AvgPool(p) => {
                let in_shape = x.shape;
                (p.forward(&x), train.then_some(LayerCache::Pool { in_shape }), None)
            }
            Layer::Dense(l) => {
                let y = l.forward(&x);
                (y, train.then_some(LayerCache::Input(x)), None)
            }
            Layer::Dropout(d) => match mode {
                Mode::Infer => (x, None, None),
                Mode::Train(rng) => {
                    let scale = T::of(1.0 / d.keep);
                    let mask: Vec<T> = (0..x.data.len())
                        .map(|_| {
                            if rng.random::<f64>() < d.keep {
                                scale
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    let mut y = x;
                    for (v, m) in y.data.iter_mut().zip(&mask) {
                        *v = *v * *m;
                    }
                    (y, Some(LayerCache::Dropout { mask }), None)
                }
            },
        }
    }

    /// Accumulate parameter gradients into `grads` and return the gradient
    /// with respect to the layer input when `need_dx` is set.
    pub fn backward(
        &self,
        cache: &LayerCache<T>,
        dy: Tensor<T>,
        grads: &mut [Vec<T>],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        match (self, cache) {
            (Layer::Conv(l), LayerCache::Conv { cols, in_shape }) => {
                l.backward(cols, *in_shape, &dy, &mut grads[0], need_dx)
            }
            (Layer::Depthwise(l), LayerCache::Input(x)) => {
                l.backward(x, &dy, &mut grads[0], need_dx)
            }
            (Layer::Pointwise(l), LayerCache::Input(x)) => {
                l.backward(x, &dy, &mut grads[0], need_dx)
            }
            (Layer::BatchNorm(l), LayerCache::BatchNorm { x_hat, inv_std }) => {
                let (gg, gb) = grads.split_at_mut(1);
                Some(l.backward(x_hat, inv_std, dy, &mut gg[0], &mut gb[0]))
            }
            (Layer::Relu, LayerCache::Relu { out }) => {
                let mut dx = dy;
                for (g, o) in dx.data.iter_mut().zip(out) {
                    if *o <= T::zero() {
                        *g = T::zero();
                    }
                }
                Some(dx)
            }
            (Layer::AvgPool(p), LayerCache::Pool { in_shape }) => Some(p.backward(&dy, *in_shape)),
            (Layer::Dense(l), LayerCache::Input(x)) => {
                let (gw, gb) = grads.split_at_mut(1);
                l.backward(x, &dy, &mut gw[0], &mut gb[0], need_dx)
            }
            (Layer::Dropout(_), LayerCache::Dropout { mask }) => {
                let mut dx = dy;
                for (g, m) in dx.data.iter_mut().zip(mask) {
                    *g = *g * *m;
                }
                Some(dx)
            }
            _ => panic!("layer cache does not match layer kind {:?}", self.kind()),
        }
    }
}

impl<T: Scalar> Conv2d<T> {
    fn kdim(&self) -> usize {
        self.k * self.k * self.cin
    }

    /// Unfold one sample into `(ho·wo) × (k·k·cin)` rows.
    fn im2col(&self, x: &[T], s: Shape, ho: usize, wo: usize, col: &mut [T]) {
        let kd = self.kdim();
        for oy in 0..ho {
            for ox in 0..wo {
                let row = &mut col[(oy * wo + ox) * kd..(oy * wo + ox + 1) * kd];
                for ky in 0..self.k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    for kx in 0..self.k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        let dst = &mut row[(ky * self.k + kx) * self.cin..(ky * self.k + kx + 1) * self.cin];
                        if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                            dst.fill(T::zero());
                        } else {
                            let src = (iy as usize * s.w + ix as usize) * s.c;
                            dst.copy_from_slice(&x[src..src + self.cin]);
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        let s = x.shape;
        let (ho, wo) = (conv_out(s.h, self.k, self.stride, self.pad), conv_out(s.w, self.k, self.stride, self.pad));
        let out_shape = Shape::new(ho, wo, self.cout);
        let kd = self.kdim();
        let rows = ho * wo;
        let mut cols = vec![T::zero(); x.n * rows * kd];
        let mut y = Tensor::zeros(x.n, out_shape);
        for i in 0..x.n {
            let col = &mut cols[i * rows * kd..(i + 1) * rows * kd];
            self.im2col(x.sample(i), s, ho, wo, col);
            let out = &mut y.data[i * out_shape.size()..(i + 1) * out_shape.size()];
            gemm(rows, kd, self.cout, col, false, &self.weight, false, T::zero(), out);
        }
        (y, cols)
    }

    fn backward(
        &self,
        cols: &[T],
        in_shape: Shape,
        dy: &Tensor<T>,
        gw: &mut [T],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let (ho, wo) = (dy.shape.h, dy.shape.w);
        let rows = ho * wo;
        let kd = self.kdim();
        for i in 0..dy.n {
            let col = &cols[i * rows * kd..(i + 1) * rows * kd];
            gemm(kd, rows, self.cout, col, true, dy.sample(i), false, T::one(), gw);
        }
        if !need_dx {
            return None;
        }
        let mut dx = Tensor::zeros(dy.n, in_shape);
        let mut dcol = vec![T::zero(); rows * kd];
        for i in 0..dy.n {
            gemm(rows, self.cout, kd, dy.sample(i), false, &self.weight, true, T::zero(), &mut dcol);
            let dxs = &mut dx.data[i * in_shape.size()..(i + 1) * in_shape.size()];
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = &dcol[(oy * wo + ox) * kd..(oy * wo + ox + 1) * kd];
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= in_shape.h as isize {
                            continue;
                        }
                        for kx in 0..self.k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= in_shape.w as isize {
                                continue;
                            }
                            let src = &row[(ky * self.k + kx) * self.cin..(ky * self.k + kx + 1) * self.cin];
                            let d = (iy as usize * in_shape.w + ix as usize) * in_shape.c;
                            for (a, b) in dxs[d..d + self.cin].iter_mut().zip(src) {
                                *a = *a + *b;
                            }
                        }
                    }
                }
            }
        }
        Some(dx)
    }
}

impl<T: Scalar> Depthwise<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let s = x.shape;
        let out_shape = Shape::new(
            conv_out(s.h, self.k, self.stride, self.pad),
            conv_out(s.w, self.k, self.stride, self.pad),
            s.c,
        );
        let c = s.c;
        let mut y = Tensor::zeros(x.n, out_shape);
        for i in 0..x.n {
            let xs = x.sample(i);
            let ys = &mut y.data[i * out_shape.size()..(i + 1) * out_shape.size()];
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let out = &mut ys[(oy * out_shape.w + ox) * c..(oy * out_shape.w + ox + 1) * c];
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for kx in 0..self.k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let w = &self.weight[(ky * self.k + kx) * c..(ky * self.k + kx + 1) * c];
                            let src = (iy as usize * s.w + ix as usize) * c;
                            for ((o, xv), wv) in out.iter_mut().zip(&xs[src..src + c]).zip(w) {
                                *o = *o + *xv * *wv;
                            }
                        }
                    }
                }
            }
        }
        y
    }

    fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, gw: &mut [T], need_dx: bool) -> Option<Tensor<T>> {
        let s = x.shape;
        let os = dy.shape;
        let c = s.c;
        let mut dx = need_dx.then(|| Tensor::zeros(x.n, s));
        for i in 0..x.n {
            let xs = x.sample(i);
            let dys = dy.sample(i);
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let g = &dys[(oy * os.w + ox) * c..(oy * os.w + ox + 1) * c];
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for kx in 0..self.k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let woff = (ky * self.k + kx) * c;
                            let src = (iy as usize * s.w + ix as usize) * c;
                            for ((gwv, xv), gv) in gw[woff..woff + c].iter_mut().zip(&xs[src..src + c]).zip(g) {
                                *gwv = *gwv + *xv * *gv;
                            }
                            if let Some(dx) = dx.as_mut() {
                                let base = i * s.size() + src;
                                let w = &self.weight[woff..woff + c];
                                for ((d, wv), gv) in dx.data[base..base + c].iter_mut().zip(w).zip(g) {
                                    *d = *d + *wv * *gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Pointwise<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let rows = x.n * x.shape.h * x.shape.w;
        let mut y = Tensor::zeros(x.n, Shape::new(x.shape.h, x.shape.w, self.cout));
        gemm(rows, self.cin, self.cout, &x.data, false, &self.weight, false, T::zero(), &mut y.data);
        y
    }

    fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, gw: &mut [T], need_dx: bool) -> Option<Tensor<T>> {
        let rows = x.n * x.shape.h * x.shape.w;
        gemm(self.cin, rows, self.cout, &x.data, true, &dy.data, false, T::one(), gw);
        need_dx.then(|| {
            let mut dx = Tensor::zeros(x.n, x.shape);
            gemm(rows, self.cout, self.cin, &dy.data, false, &self.weight, true, T::zero(), &mut dx.data);
            dx
        })
    }
}

impl<T: Scalar> BatchNorm<T> {
    fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<T>, Vec<T>, BatchStats) {
        let c = self.c;
        let m = x.data.len() / c;
        let mut mean = vec![0.0f64; c];
        for px in x.data.chunks_exact(c) {
            for (a, v) in mean.iter_mut().zip(px) {
                *a += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|a| *a /= m as f64);
        let mut var = vec![0.0f64; c];
        for px in x.data.chunks_exact(c) {
            for ((a, v), mu) in var.iter_mut().zip(px).zip(&mean) {
                let d = v.as_f64() - mu;
                *a += d * d;
            }
        }
        let var_biased: Vec<f64> = var.iter().map(|v| v / m as f64).collect();
        let inv_std: Vec<T> = var_biased.iter().map(|v| T::of(1.0 / (v + self.eps).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&v| T::of(v)).collect();

        let mut x_hat = vec![T::zero(); x.data.len()];
        let mut y = Tensor::zeros(x.n, x.shape);
        for ((xh, yo), xi) in x_hat
            .chunks_exact_mut(c)
            .zip(y.data.chunks_exact_mut(c))
            .zip(x.data.chunks_exact(c))
        {
            for ch in 0..c {
                let h = (xi[ch] - mean_t[ch]) * inv_std[ch];
                xh[ch] = h;
                yo[ch] = self.gamma[ch] * h + self.beta[ch];
            }
        }
        let denom = if m > 1 { (m - 1) as f64 } else { 1.0 };
        let stats = BatchStats {
            mean,
            var_unbiased: var.iter().map(|v| v / denom).collect(),
        };
        (y, x_hat, inv_std, stats)
    }

    fn forward_infer(&self, x: Tensor<T>) -> Tensor<T> {
        let c = self.c;
        let scale: Vec<T> = (0..c)
            .map(|ch| self.gamma[ch] / (self.running_var[ch] + T::of(self.eps)).sqrt())
            .collect();
        let shift: Vec<T> = (0..c)
            .map(|ch| self.beta[ch] - self.running_mean[ch] * scale[ch])
            .collect();
        let mut y = x;
        for px in y.data.chunks_exact_mut(c) {
            for ch in 0..c {
                px[ch] = px[ch] * scale[ch] + shift[ch];
            }
        }
        y
    }

    fn backward(&self, x_hat: &[T], inv_std: &[T], dy: Tensor<T>, gg: &mut [T], gb: &mut [T]) -> Tensor<T> {
        let c = self.c;
        let m = x_hat.len() / c;
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xh = vec![T::zero(); c];
        for (g, xh) in dy.data.chunks_exact(c).zip(x_hat.chunks_exact(c)) {
            for ch in 0..c {
                sum_dy[ch] = sum_dy[ch] + g[ch];
                sum_dy_xh[ch] = sum_dy_xh[ch] + g[ch] * xh[ch];
            }
        }
        for ch in 0..c {
            gg[ch] = gg[ch] + sum_dy_xh[ch];
            gb[ch] = gb[ch] + sum_dy[ch];
        }
        let mf = T::of(m as f64);
        let coef: Vec<T> = (0..c).map(|ch| self.gamma[ch] * inv_std[ch] / mf).collect();
        let mut dx = dy;
        for (g, xh) in dx.data.chunks_exact_mut(c).zip(x_hat.chunks_exact(c)) {
            for ch in 0..c {
                g[ch] = coef[ch] * (mf * g[ch] - sum_dy[ch] - xh[ch] * sum_dy_xh[ch]);
            }
        }
        dx
    }

    /// Fold one batch's statistics into the running estimates.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let mo = self.momentum;
        for ch in 0..self.c {
            let rm = self.running_mean[ch].as_f64();
            let rv = self.running_var[ch].as_f64();
            self.running_mean[ch] = T::of((1.0 - mo) * rm + mo * stats.mean[ch]);
            self.running_var[ch] = T::of((1.0 - mo) * rv + mo * stats.var_unbiased[ch]);
        }
    }
}

impl AvgPool {
    fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let s = x.shape;
        let os = Shape::new(conv_out(s.h, self.k, self.stride, 0), conv_out(s.w, self.k, self.stride, 0), s.c);
        let inv = T::of(1.0 / (self.k * self.k) as f64);
        let mut y = Tensor::zeros(x.n, os);
        for i in 0..x.n {
            let xs = x.sample(i);
            let ys = &mut y.data[i * os.size()..(i + 1) * os.size()];
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let out = &mut ys[(oy * os.w + ox) * s.c..(oy * os.w + ox + 1) * s.c];
                    for ky in 0..self.k {
                        for kx in 0..self.k {
                            let src = ((oy * self.stride + ky) * s.w + ox * self.stride + kx) * s.c;
                            for (o, v) in out.iter_mut().zip(&xs[src..src + s.c]) {
                                *o = *o + *v;
                            }
                        }
                    }
                    out.iter_mut().for_each(|o| *o = *o * inv);
                }
            }
        }
        y
    }

    fn backward<T: Scalar>(&self, dy: &Tensor<T>, in_shape: Shape) -> Tensor<T> {
        let os = dy.shape;
        let c = in_shape.c;
        let inv = T::of(1.0 / (self.k * self.k) as f64);
        let mut dx = Tensor::zeros(dy.n, in_shape);
        for i in 0..dy.n {
            let g = dy.sample(i);
            let dxs = &mut dx.data[i * in_shape.size()..(i + 1) * in_shape.size()];
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let gi = &g[(oy * os.w + ox) * c..(oy * os.w + ox + 1) * c];
                    for ky in 0..self.k {
                        for kx in 0..self.k {
                            let d = ((oy * self.stride + ky) * in_shape.w + ox * self.stride + kx) * c;
                            for (a, b) in dxs[d..d + c].iter_mut().zip(gi) {
                                *a = *a + *b * inv;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Dense<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.shape.size(), self.input, "dense input width");
        let mut y = Tensor::zeros(x.n, Shape::new(1, 1, self.output));
        for row in y.data.chunks_exact_mut(self.output) {
            row.copy_from_slice(&self.bias);
        }
        gemm(x.n, self.input, self.output, &x.data, false, &self.weight, false, T::one(), &mut y.data);
        y
    }

    fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        gw: &mut [T],
        gb: &mut [T],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        gemm(self.input, x.n, self.output, &x.data, true, &dy.data, false, T::one(), gw);
        for row in dy.data.chunks_exact(self.output) {
            for (b, g) in gb.iter_mut().zip(row) {
                *b = *b + *g;
            }
        }
        need_dx.then(|| {
            let mut dx = Tensor::zeros(x.n, x.shape);
            gemm(x.n, self.output, self.input, &dy.data, false, &self.weight, true, T::zero(), &mut dx.data);
            dx
        })
    }
}
