use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{matmul, Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-pass state shared by all layers.
pub struct Context {
    pub mode: Mode,
    /// When false, dropout is the identity even in train mode.
    pub dropout: bool,
    pub rng: ChaCha8Rng,
}

impl Context {
    pub fn train(rng: ChaCha8Rng) -> Self {
        Self {
            mode: Mode::Train,
            dropout: true,
            rng,
        }
    }

    pub fn eval() -> Self {
        use rand::SeedableRng;
        Self {
            mode: Mode::Eval,
            dropout: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

/// A named tensor with a gradient slot of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    /// Running statistics are stored as non-trainable params.
    pub trainable: bool,
}

impl<F: Scalar> Param<F> {
    fn new(name: String, value: Tensor<F>, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.dims());
        Self {
            name,
            value,
            grad,
            trainable,
        }
    }
}

/// The fixed layer vocabulary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    BatchNorm,
    /// 3×3 convolution, same padding, stride 1.
    Conv { filters: usize },
    Relu,
    /// 2×2 average pooling, stride 2.
    AvgPool,
    GlobalAvgPool,
    Dense { units: usize },
    Softmax,
    Dropout { rate: f64 },
}

impl LayerSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerSpec::BatchNorm => "bn",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::AvgPool => "pool",
            LayerSpec::GlobalAvgPool => "gap",
            LayerSpec::Dense { .. } => "fc",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Dropout { .. } => "dropout",
        }
    }

    /// Whether the layer owns weights that count as a trainable layer
    /// (conv and fully connected).
    pub fn is_weight_layer(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    /// Per-sample output dims for per-sample input dims.
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match input {
                [h, w, c] => Ok((*h, *w, *c)),
                _ => Err(Error::Shape(format!("{what} expects HxWxC input, got {input:?}"))),
            }
        };
        match *self {
            LayerSpec::BatchNorm | LayerSpec::Relu | LayerSpec::Dropout { .. } => {
                if input.is_empty() {
                    return Err(Error::Shape("empty input dims".into()));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Conv { filters } => {
                let (h, w, _) = spatial("conv")?;
                Ok(vec![h, w, filters])
            }
            LayerSpec::AvgPool => {
                let (h, w, c) = spatial("average pool")?;
                if h < 2 || w < 2 {
                    return Err(Error::Shape(format!("cannot pool {h}x{w}")));
                }
                Ok(vec![h / 2, w / 2, c])
            }
            LayerSpec::GlobalAvgPool => {
                let (_, _, c) = spatial("global average pool")?;
                Ok(vec![c])
            }
            LayerSpec::Dense { units } => match input {
                [_] => Ok(vec![units]),
                _ => Err(Error::Shape(format!("dense expects a vector, got {input:?}"))),
            },
            LayerSpec::Softmax => match input {
                [_] => Ok(input.to_vec()),
                _ => Err(Error::Shape(format!("softmax expects a vector, got {input:?}"))),
            },
        }
    }

    /// Instantiates the layer for per-sample `input` dims.
    pub fn build<F: Scalar>(
        &self,
        name: String,
        input: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Box<dyn Layer<F>>> {
        self.output_dims(input)?;
        Ok(match *self {
            LayerSpec::BatchNorm => Box::new(BatchNorm::new(name, *input.last().unwrap())),
            LayerSpec::Conv { filters } => Box::new(Conv2d::new(name, input[2], filters, rng)),
            LayerSpec::Relu => Box::new(Relu::new(name)),
            LayerSpec::AvgPool => Box::new(AvgPool::new(name)),
            LayerSpec::GlobalAvgPool => Box::new(GlobalAvgPool::new(name)),
            LayerSpec::Dense { units } => Box::new(Dense::new(name, input[0], units, rng)),
            LayerSpec::Softmax => Box::new(Softmax::new(name)),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Spec(format!("dropout rate {rate} outside [0, 1)")));
                }
                Box::new(Dropout::new(name, rate))
            }
        })
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { filters } => write!(f, "Conv[3x3]@{filters}"),
            LayerSpec::Dense { units } => write!(f, "FC@{units}"),
            LayerSpec::Dropout { rate } => write!(f, "Dr({:.0}%)", rate * 100.0),
            LayerSpec::BatchNorm => f.write_str("BN"),
            LayerSpec::Relu => f.write_str("ReLU"),
            LayerSpec::AvgPool => f.write_str("AP"),
            LayerSpec::GlobalAvgPool => f.write_str("GAP"),
            LayerSpec::Softmax => f.write_str("Softmax"),
        }
    }
}

pub trait Layer<F: Scalar>: Send {
    fn name(&self) -> &str;

    fn spec(&self) -> LayerSpec;

    /// Batched forward pass; train mode caches what `backward` needs.
    fn forward(&mut self, x: &Tensor<F>, ctx: &mut Context) -> Result<Tensor<F>>;

    /// Returns the input gradient and accumulates parameter gradients.
    fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>>;

    fn params(&self) -> Vec<&Param<F>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        Vec::new()
    }
}

fn missing_cache(name: &str) -> Error {
    Error::State(format!("{name}: backward without a train-mode forward"))
}

fn check_grad_dims<F: Scalar>(name: &str, grad: &Tensor<F>, expected: &[usize]) -> Result<()> {
    if grad.dims() != expected {
        return Err(Error::Shape(format!(
            "{name}: upstream gradient {:?}, expected {expected:?}",
            grad.dims()
        )));
    }
    Ok(())
}

fn glorot<F: Scalar>(dims: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..dims.iter().product())
        .map(|_| F::from_f64_lossy(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::from_vec(dims, data).expect("glorot dims")
}

fn nhwc(name: &str, x: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match x {
        [n, h, w, c] => Ok((*n, *h, *w, *c)),
        _ => Err(Error::Shape(format!("{name}: expected NxHxWxC input, got {x:?}"))),
    }
}

// ---------------------------------------------------------------------------

pub struct Conv2d<F> {
    name: String,
    in_channels: usize,
    weight: Param<F>,
    bias: Param<F>,
    // im2col buffer and input dims from the last train-mode forward
    cache: Option<(Vec<F>, Vec<usize>)>,
}

impl<F: Scalar> Conv2d<F> {
    fn new(name: String, in_channels: usize, filters: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = glorot(&[3, 3, in_channels, filters], 9 * in_channels, 9 * filters, rng);
        Self {
            weight: Param::new(format!("{name}.weight"), weight, true),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[filters]), true),
            name,
            in_channels,
            cache: None,
        }
    }

    fn filters(&self) -> usize {
        self.bias.value.len()
    }
}

fn im2col<F: Scalar>(x: &[F], n: usize, h: usize, w: usize, c: usize) -> Vec<F> {
    let k = 9 * c;
    let mut cols = vec![F::zero(); n * h * w * k];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let row = ((b * h + y) * w + xx) * k;
                for ky in 0..3 {
                    let iy = y + ky;
                    if iy < 1 || iy > h {
                        continue;
                    }
                    let iy = iy - 1;
                    for kx in 0..3 {
                        let ix = xx + kx;
                        if ix < 1 || ix > w {
                            continue;
                        }
                        let ix = ix - 1;
                        let src = ((b * h + iy) * w + ix) * c;
                        let dst = row + (ky * 3 + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<F: Scalar>(cols: &[F], n: usize, h: usize, w: usize, c: usize) -> Vec<F> {
    let k = 9 * c;
    let mut x = vec![F::zero(); n * h * w * c];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let row = ((b * h + y) * w + xx) * k;
                for ky in 0..3 {
                    let iy = y + ky;
                    if iy < 1 || iy > h {
                        continue;
                    }
                    let iy = iy - 1;
                    for kx in 0..3 {
                        let ix = xx + kx;
                        if ix < 1 || ix > w {
                            continue;
                        }
                        let ix = ix - 1;
                        let dst = ((b * h + iy) * w + ix) * c;
                        let src = row + (ky * 3 + kx) * c;
                        for (d, s) in x[dst..dst + c].iter_mut().zip(&cols[src..src + c]) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
    x
}

impl<F: Scalar> Layer<F> for Conv2d<F> {
    fn name(&self) -> &str {
        &self.name
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Conv {
            filters: self.filters(),
        }
    }

    fn forward(&mut self, x: &Tensor<F>, ctx: &mut Context) -> Result<Tensor<F>> {
        let (n, h, w, c) = nhwc(&self.name, x.dims())?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "{}: {c} input channels, expected {}",
                self.name, self.in_channels
            )));
        }
        let f = self.filters();
        let rows = n * h * w;
        let cols = im2col(x.data(), n, h, w, c);
        let mut out = vec![F::zero(); rows * f];
        for row in out.chunks_exact_mut(f) {
            row.copy_from_slice(self.bias.value.data());
        }
        matmul(&cols, false, self.weight.value.data(), false, &mut out, rows, 9 * c, f, true);
        self.cache = match ctx.mode {
            Mode::Train => Some((cols, x.dims().to_vec())),
            Mode::Eval => None,
        };
        Tensor::from_vec(&[n, h, w, f], out)
    }

    fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        let (cols, dims) = self.cache.take().ok_or_else(|| missing_cache(&self.name))?;
        let (n, h, w, c) = (dims[0], dims[1], dims[2], dims[3]);
        let f = self.filters();
        check_grad_dims(&self.name, grad, &[n, h, w, f])?;
        let rows = n * h * w;
        let g = grad.data();
        matmul(&cols, true, g, false, self.weight.grad.data_mut(), 9 * c, rows, f, true);
        let bias_grad = self.bias.grad.data_mut();
        for row in g.chunks_exact(f) {
            for (b, v) in bias_grad.iter_mut().zip(row) {
                *b += *v;
            }
        }
        let mut dcols = vec![F::zero(); rows * 9 * c];
        matmul(g, false, self.weight.value.data(), true, &mut dcols, rows, f, 9 * c, false);
        Tensor::from_vec(&dims, col2im(&dcols, n, h, w, c))
    }

    fn params(&self) -> Vec<&Param<F>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

// ---------------------------------------------------------------------------

/// Batch normalization over every axis but the last (channel) one.
pub struct BatchNorm<F> {
    name: String,
    gamma: Param<F>,
    beta: Param<F>,
    running_mean: Param<F>,
    running_var: Param<F>,
    // normalized input and 1/sqrt(var + eps) per channel
    cache: Option<(Vec<F>, Vec<F>, Vec<usize>)>,
}

impl<F: Scalar> BatchNorm<F> {
    fn new(name: String, channels: usize) -> Self {
        let ones = || {
            let mut t = Tensor::zeros(&[channels]);
            t.fill(F::one());
            t
        };
        Self {
            gamma: Param::new(format!("{name}.gamma"), ones(), true),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: Param::new(
                format!("{name}.running_mean"),
                Tensor::zeros(&[channels]),
                false,
            ),
            running_var: Param::new(format!("{name}.running_var"), ones(), false),
            name,
            cache: None,
        }
    }
}

impl<F: Scalar> Layer<F> for BatchNorm<F> {
    fn name(&self) -> &str {
        &self.name
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::BatchNorm
    }

    fn forward(&mut self, x: &Tensor<F>, ctx: &mut Context) -> Result<Tensor<F>> {
        let c = self.gamma.value.len();
        if x.dims().len() < 2 || *x.dims().last().unwrap() != c {
            return Err(Error::Shape(format!(
                "{}: input {:?} does not end in {c} channels",
                self.name,
                x.dims()
            )));
        }
        let eps = F::from_f64_lossy(BN_EPSILON);
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut out = vec![F::zero(); x.len()];
        match ctx.mode {
            Mode::Eval => {
                self.cache = None;
                let scale: Vec<F> = self
                    .running_var
                    .value
                    .data()
                    .iter()
                    .zip(gamma)
                    .map(|(v, g)| *g / (*v + eps).sqrt())
                    .collect();
                let mean = self.running_mean.value.data();
                for (o, px) in out.chunks_exact_mut(c).zip(x.data().chunks_exact(c)) {
                    for ch in 0..c {
                        o[ch] = (px[ch] - mean[ch]) * scale[ch] + beta[ch];
                    }
                }
            }
            Mode::Train => {
                if x.batch() < 2 {
                    return Err(Error::DegenerateBatch(format!(
                        "{}: batch normalization needs at least 2 samples in train mode",
                        self.name
                    )));
                }
                let m = x.len() / c;
                let mf = F::from_usize(m).unwrap();
                let mut mean = vec![F::zero(); c];
                for px in x.data().chunks_exact(c) {
                    for ch in 0..c {
                        mean[ch] += px[ch];
                    }
                }
                mean.iter_mut().for_each(|v| *v /= mf);
                let mut var = vec![F::zero(); c];
                for px in x.data().chunks_exact(c) {
                    for ch in 0..c {
                        let d = px[ch] - mean[ch];
                        var[ch] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= mf);
                let inv_std: Vec<F> = var.iter().map(|v| F::one() / (*v + eps).sqrt()).collect();
                let mut xhat = vec![F::zero(); x.len()];
                for ((o, xh), px) in out
                    .chunks_exact_mut(c)
                    .zip(xhat.chunks_exact_mut(c))
                    .zip(x.data().chunks_exact(c))
                {
                    for ch in 0..c {
                        xh[ch] = (px[ch] - mean[ch]) * inv_std[ch];
                        o[ch] = gamma[ch] * xh[ch] + beta[ch];
                    }
                }
                let mom = F::from_f64_lossy(BN_MOMENTUM);
                let rm = self.running_mean.value.data_mut();
                for ch in 0..c {
                    rm[ch] = mom * rm[ch] + (F::one() - mom) * mean[ch];
                }
                let rv = self.running_var.value.data_mut();
                for ch in 0..c {
                    rv[ch] = mom * rv[ch] + (F::one() - mom) * var[ch];
                }
                self.cache = Some((xhat, inv_std, x.dims().to_vec()));
            }
        }
        Tensor::from_vec(x.dims(), out)
    }

    fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        let (xhat, inv_std, dims) = self.cache.take().ok_or_else(|| missing_cache(&self.name))?;
        check_grad_dims(&self.name, grad, &dims)?;
        let c = inv_std.len();
        let mf = F::from_usize(grad.len() / c).unwrap();
        let gamma = self.gamma.value.data();
        let mut sum_dy = vec![F::zero(); c];
        let mut sum_dy_xhat = vec![F::zero(); c];
        for (g, xh) in grad.data().chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for ch in 0..c {
                sum_dy[ch] += g[ch];
                sum_dy_xhat[ch] += g[ch] * xh[ch];
            }
        }
        for ch in 0..c {
            self.gamma.grad.data_mut()[ch] += sum_dy_xhat[ch];
            self.beta.grad.data_mut()[ch] += sum_dy[ch];
        }
        let mut dx = vec![F::zero(); grad.len()];
        for ((d, g), xh) in dx
            .chunks_exact_mut(c)
            .zip(grad.data().chunks_exact(c))
            .zip(xhat.chunks_exact(c))
        {
            for ch in 0..c {
                d[ch] = gamma[ch] * inv_std[ch] / mf
                    * (mf * g[ch] - sum_dy[ch] - xh[ch] * sum_dy_xhat[ch]);
            }
        }
        Tensor::from_vec(&dims, dx)
    }

    fn params(&self) -> Vec<&Param<F>> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}

// ---------------------------------------------------------------------------

pub struct Relu {
    name: String,
    mask: Option<(Vec<bool>, Vec<usize>)>,
}

impl Relu {
    fn new(name: String) -> Self {
        Self { name, mask: None }
    }
}

impl<F: Scalar> Layer<F> for Relu {
    fn name(&self) -> &str {
        &self.name
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Relu
    }

    fn forward(&mut self, x: &Tensor<F>, ctx: &mut Context) -> Result<Tensor<F>> {
        let out: Vec<F> = x.data().iter().map(|v| v.max(F::zero())).collect();
        self.mask = match ctx.mode {
            Mode::Train => Some((
                x.data().iter().map(|v| *v > F::zero()).collect(),
                x.dims().to_vec(),
            )),
            Mode::Eval => None,
        };
        Tensor::from_vec(x.dims(), out)
    }

    fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        let (mask, dims) = self.mask.take().ok_or_else(|| missing_cache(&self.name))?;
        check_grad_dims(&self.name, grad, &dims)?;
        let dx = grad
            .data()
            .iter()
            .zip(&mask)
            .map(|(g, m)| if *m { *g } else { F::zero() })
            .collect();
        Tensor::from_vec(&dims, dx)
    }
}

// ---------------------------------------------------------------------------

pub struct AvgPool {
    name: String,
    input_dims: Option<Vec<usize>>,
}

impl AvgPool {
    fn new(name: String) -> Self {
        Self {
            name,
            input_dims: None,
        }
    }
}

impl<F: Scalar> Layer<F> for AvgPool {
    fn name(&self) -> &str {
        &self.name
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::AvgPool
    }

    fn forward(&mut self, x: &Tensor<F>, ctx: &mut Context) -> Result<Tensor<F>> {
        let (n, h, w, c) = nhwc(&self.name, x.dims())?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::Shape(format!("{}: cannot pool {h}x{w}", self.name)));
        }
        let quarter = F::from_f64_lossy(0.25);
        let src = x.data();
        let mut out = vec![F::zero(); n * oh * ow * c];
        for b in 0..n {
            for y in 0..oh {
                for xx in 0..ow {
                    let dst = ((b * oh + y) * ow + xx) * c;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let s = ((b * h + 2 * y + dy) * w + 2 * xx + dx) * c;
                        for ch in 0..c {
                            out[dst + ch] += src[s + ch];
                        }
                    }
                    out[dst..dst + c].iter_mut().for_each(|v| *v *= quarter);
                }
            }
        }
        self.input_dims = (ctx.mode == Mode::Train).then(|| x.dims().to_vec());
        Tensor::from_vec(&[n, oh, ow, c], out)
    }

    fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        let dims = self.input_dims.take().ok_or_else(|| missing_cache(&self.name))?;
        let (n, h, w, c) = (dims[0], dims[1], dims[2], dims[3]);
        let (oh, ow) = (h / 2, w / 2);
        check_grad_dims(&self.name, grad, &[n, oh, ow, c])?;
        let quarter = F::from_f64_lossy(0.25);
        let g = grad.data();
        let mut dx = vec![F::zero(); n * h * w * c];
        for b in 0..n {
            for y in 0..oh {
                for xx in 0..ow {
                    let src = ((b * oh + y) * ow + xx) * c;
                    for (dy, ddx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let d = ((b * h + 2 * y + dy) * w + 2 * xx + ddx) * c;
                        for ch in 0..c {
                            dx[d + ch] = g[src + ch] * quarter;
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&dims, dx)
    }
}

// ---------------------------------------------------------------------------

pub struct GlobalAvgPool {
    name: String,
    input_dims: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    fn new(name: String) -> Self {
        Self {
            name,
            input_dims: None,
        }
    }
}

impl<F: Scalar> Layer<F> for GlobalAvgPool {
    fn name(&self) -> &str {
        &self.name
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::GlobalAvgPool
    }

    fn forward(&mut self, x: &Tensor<F>, ctx: &mut Context) -> Result<Tensor<F>> {
        let (n, h, w, c) = nhwc(&self.name, x.dims())?;
        let area = F::from_usize(h * w).unwrap();
        let mut out = vec![F::zero(); n * c];
        for (b, sample) in x.data().chunks_exact(h * w * c).enumerate() {
            let dst = &mut out[b * c..(b + 1) * c];
            for px in sample.chunks_exact(c) {
                for ch in 0..c {
                    dst[ch] += px[ch];
                }
            }
            dst.iter_mut().for_each(|v| *v /= area);
        }
        self.input_dims = (ctx.mode == Mode::Train).then(|| x.dims().to_vec());
        Tensor::from_vec(&[n, c], out)
    }

    fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        let dims = self.input_dims.take().ok_or_else(|| missing_cache(&self.name))?;
        let (n, h, w, c) = (dims[0], dims[1], dims[2], dims[3]);
        check_grad_dims(&self.name, grad, &[n, c])?;
        let area = F::from_usize(h * w).unwrap();
        let mut dx = vec![F::zero(); n * h * w * c];
        for (b, sample) in dx.chunks_exact_mut(h * w * c).enumerate() {
            let g = &grad.data()[b * c..(b + 1) * c];
            for px in sample.chunks_exact_mut(c) {
                for ch in 0..c {
                    px[ch] = g[ch] / area;
                }
            }
        }
        Tensor::from_vec(&dims, dx)
    }
}

// ---------------------------------------------------------------------------

pub struct Dense<F> {
    name: String,
    weight: Param<F>,
    bias: Param<F>,
    input: Option<Tensor<F>>,
}

impl<F: Scalar> Dense<F> {
    fn new(name: String, inputs: usize, units: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                glorot(&[inputs, units], inputs, units, rng),
                true,
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[units]), true),
            name,
            input: None,
        }
    }

    fn shape(&self) -> (usize, usize) {
        (self.weight.value.dims()[0], self.weight.value.dims()[1])
    }
}

impl<F: Scalar> Layer<F> for Dense<F> {
    fn name(&self) -> &str {
        &self.name
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Dense {
            units: self.shape().1,
        }
    }

    fn forward(&mut self, x: &Tensor<F>, ctx: &mut Context) -> Result<Tensor<F>> {
        let (inputs, units) = self.shape();
        if x.dims().len() != 2 || x.dims()[1] != inputs {
            return Err(Error::Shape(format!(
                "{}: input {:?}, expected Nx{inputs}",
                self.name,
                x.dims()
            )));
        }
        let n = x.batch();
        let mut out = vec![F::zero(); n * units];
        for row in out.chunks_exact_mut(units) {
            row.copy_from_slice(self.bias.value.data());
        }
        matmul(x.data(), false, self.weight.value.data(), false, &mut out, n, inputs, units, true);
        self.input = (ctx.mode == Mode::Train).then(|| x.clone());
        Tensor::from_vec(&[n, units], out)
    }

    fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        let x = self.input.take().ok_or_else(|| missing_cache(&self.name))?;
        let (inputs, units) = self.shape();
        let n = x.batch();
        check_grad_dims(&self.name, grad, &[n, units])?;
        matmul(x.data(), true, grad.data(), false, self.weight.grad.data_mut(), inputs, n, units, true);
        let bias_grad = self.bias.grad.data_mut();
        for row in grad.data().chunks_exact(units) {
            for (b, g) in bias_grad.iter_mut().zip(row) {
                *b += *g;
            }
        }
        let mut dx = vec![F::zero(); n * inputs];
        matmul(grad.data(), false, self.weight.value.data(), true, &mut dx, n, units, inputs, false);
        Tensor::from_vec(&[n, inputs], dx)
    }

    fn params(&self) -> Vec<&Param<F>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

// ---------------------------------------------------------------------------

pub struct Softmax<F> {
    name: String,
    output: Option<Tensor<F>>,
}

impl<F: Scalar> Softmax<F> {
    fn new(name: String) -> Self {
        Self { name, output: None }
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_row<F: Scalar>(logits: &[F], out: &mut [F]) {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (*l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

impl<F: Scalar> Layer<F> for Softmax<F> {
    fn name(&self) -> &str {
        &self.name
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Softmax
    }

    fn forward(&mut self, x: &Tensor<F>, ctx: &mut Context) -> Result<Tensor<F>> {
        if x.dims().len() != 2 {
            return Err(Error::Shape(format!(
                "{}: expected NxC input, got {:?}",
                self.name,
                x.dims()
            )));
        }
        let c = x.dims()[1];
        let mut out = vec![F::zero(); x.len()];
        for (o, l) in out.chunks_exact_mut(c).zip(x.data().chunks_exact(c)) {
            softmax_row(l, o);
        }
        let out = Tensor::from_vec(x.dims(), out)?;
        self.output = (ctx.mode == Mode::Train).then(|| out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        let s = self.output.take().ok_or_else(|| missing_cache(&self.name))?;
        check_grad_dims(&self.name, grad, s.dims())?;
        let c = s.dims()[1];
        let mut dx = vec![F::zero(); s.len()];
        for ((d, p), g) in dx
            .chunks_exact_mut(c)
            .zip(s.data().chunks_exact(c))
            .zip(grad.data().chunks_exact(c))
        {
            let dot: F = p.iter().zip(g).map(|(a, b)| *a * *b).sum();
            for i in 0..c {
                d[i] = p[i] * (g[i] - dot);
            }
        }
        Tensor::from_vec(s.dims(), dx)
    }
}

// ---------------------------------------------------------------------------

/// Inverted dropout: survivors are scaled by 1/(1-rate) at train time.
pub struct Dropout<F> {
    name: String,
    rate: f64,
    mask: Option<(Vec<F>, Vec<usize>)>,
}

impl<F: Scalar> Dropout<F> {
    fn new(name: String, rate: f64) -> Self {
        Self {
            name,
            rate,
            mask: None,
        }
    }
}

impl<F: Scalar> Layer<F> for Dropout<F> {
    fn name(&self) -> &str {
        &self.name
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Dropout { rate: self.rate }
    }

    fn forward(&mut self, x: &Tensor<F>, ctx: &mut Context) -> Result<Tensor<F>> {
        let mask: Vec<F> = if ctx.mode == Mode::Train && ctx.dropout && self.rate > 0.0 {
            let keep = F::from_f64_lossy(1.0 / (1.0 - self.rate));
            (0..x.len())
                .map(|_| {
                    if ctx.rng.gen::<f64>() < self.rate {
                        F::zero()
                    } else {
                        keep
                    }
                })
                .collect()
        } else {
            vec![F::one(); x.len()]
        };
        let out = x.data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        self.mask = (ctx.mode == Mode::Train).then(|| (mask, x.dims().to_vec()));
        Tensor::from_vec(x.dims(), out)
    }

    fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        let (mask, dims) = self.mask.take().ok_or_else(|| missing_cache(&self.name))?;
        check_grad_dims(&self.name, grad, &dims)?;
        let dx = grad.data().iter().zip(&mask).map(|(g, m)| *g * *m).collect();
        Tensor::from_vec(&dims, dx)
    }
}
