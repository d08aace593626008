use serde::{Deserialize, Serialize};

use super::im2col::{cnp_to_nchw, nchw_to_cnp, Geometry};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Declarative description of one layer. Shapes exclude the batch dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize },
    ConvTranspose2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize },
    /// Flattens any per-sample input of `in_features` elements.
    Linear { in_features: usize, out_features: usize },
    Relu,
    Tanh,
    MaxPool2d { window: usize, stride: usize },
    BatchNorm2d { channels: usize },
    /// conv3x3, bn, relu, conv3x3, bn, identity skip, relu.
    ResBlock { channels: usize },
    /// Concatenates the input with `relu(bn(conv3x3(x)))` of `growth` channels.
    DenseBlock { in_ch: usize, growth: usize },
}

impl LayerSpec {
    pub fn conv(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::Conv2d { in_ch, out_ch, kernel, stride, padding }
    }

    pub fn conv_t(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::ConvTranspose2d { in_ch, out_ch, kernel, stride, padding }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Conv2d { .. } => "conv2d",
            Self::ConvTranspose2d { .. } => "conv_transpose2d",
            Self::Linear { .. } => "linear",
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::MaxPool2d { .. } => "maxpool2d",
            Self::BatchNorm2d { .. } => "batchnorm2d",
            Self::ResBlock { .. } => "resblock",
            Self::DenseBlock { .. } => "denseblock",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let chw = |expect_c: usize| -> Result<(usize, usize, usize)> {
            match input {
                [c, h, w] if *c == expect_c => Ok((*c, *h, *w)),
                _ => Err(Error::Shape(format!("{} expects [{expect_c}, H, W], got {input:?}", self.name()))),
            }
        };
        let positive = |k: usize, s: usize| -> Result<()> {
            if k == 0 || s == 0 {
                Err(Error::InvalidArgument(format!("{}: kernel and stride must be >= 1", self.name())))
            } else {
                Ok(())
            }
        };
        match *self {
            Self::Conv2d { in_ch, out_ch, kernel, stride, padding } => {
                positive(kernel, stride)?;
                let (c, h, w) = chw(in_ch)?;
                let g = Geometry::new(c, h, w, kernel, stride, padding)
                    .ok_or_else(|| Error::Shape(format!("conv kernel {kernel} larger than padded input {input:?}")))?;
                Ok(vec![out_ch, g.out_h, g.out_w])
            }
            Self::ConvTranspose2d { in_ch, out_ch, kernel, stride, padding } => {
                positive(kernel, stride)?;
                let (_, h, w) = chw(in_ch)?;
                let grow = |x: usize| ((x - 1) * stride + kernel).checked_sub(2 * padding).filter(|&v| v > 0);
                match (grow(h), grow(w)) {
                    (Some(ho), Some(wo)) => Ok(vec![out_ch, ho, wo]),
                    _ => Err(Error::Shape(format!("transposed conv output empty for {input:?}"))),
                }
            }
            Self::Linear { in_features, out_features } => {
                let n: usize = input.iter().product();
                if n != in_features {
                    return Err(Error::Shape(format!("linear expects {in_features} features, got {input:?}")));
                }
                Ok(vec![out_features])
            }
            Self::Relu | Self::Tanh => Ok(input.to_vec()),
            Self::MaxPool2d { window, stride } => {
                positive(window, stride)?;
                let (c, h, w) = match input {
                    [c, h, w] => (*c, *h, *w),
                    _ => return Err(Error::Shape(format!("maxpool expects [C, H, W], got {input:?}"))),
                };
                if h < window || w < window {
                    return Err(Error::Shape(format!("pool window {window} exceeds {input:?}")));
                }
                Ok(vec![c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            Self::BatchNorm2d { channels } | Self::ResBlock { channels } => {
                let (c, h, w) = chw(channels)?;
                Ok(vec![c, h, w])
            }
            Self::DenseBlock { in_ch, growth } => {
                let (_, h, w) = chw(in_ch)?;
                Ok(vec![in_ch + growth, h, w])
            }
        }
    }
}

fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.uniform_range(-bound, bound))).collect();
    Tensor::new(shape, data).expect("kaiming shape")
}

fn param<T: Scalar>(mut t: Tensor<T>) -> Tensor<T> {
    t.zero_grad();
    t
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
}

fn grad_of<T: Scalar>(p: &mut Tensor<T>) -> &mut [T] {
    if p.grad().is_none() {
        p.zero_grad();
    }
    p.grad_mut().expect("grad buffer")
}

// ---------------------------------------------------------------- conv

#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    out_ch: usize,
    geom: Geometry,
    weight: Tensor<T>,
    /// Absent for the 3x3 convolutions inside composite blocks, which feed
    /// straight into batch normalization.
    bias: Option<Tensor<T>>,
    cols: Option<(Vec<T>, usize)>,
}

impl<T: Scalar> Conv2d<T> {
    fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, input: &[usize], rng: &mut Rng) -> Self {
        let mut conv = Self::without_bias(in_ch, out_ch, kernel, stride, padding, input, rng);
        conv.bias = Some(param(Tensor::zeros(&[out_ch])));
        conv
    }

    fn without_bias(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, input: &[usize], rng: &mut Rng) -> Self {
        let geom = Geometry::new(in_ch, input[1], input[2], kernel, stride, padding).expect("validated geometry");
        Self {
            out_ch,
            geom,
            weight: param(kaiming_uniform(&[out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel, rng)),
            bias: None,
            cols: None,
        }
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.batch();
        let g = self.geom;
        let p = g.positions();
        let mut cols = self.cols.take().map(|c| c.0).unwrap_or_default();
        g.im2col(x.data(), n, &mut cols);
        let kk = g.col_rows();
        let mut out_cnp = vec![T::zero(); self.out_ch * n * p];
        if let Some(bias) = &self.bias {
            for (o, b) in bias.data().iter().enumerate() {
                out_cnp[o * n * p..(o + 1) * n * p].iter_mut().for_each(|v| *v = *b);
            }
        }
        T::gemm(
            self.out_ch, kk, n * p,
            T::one(), self.weight.data(), kk as isize, 1,
            &cols, (n * p) as isize, 1,
            T::one(), &mut out_cnp, (n * p) as isize, 1,
        );
        let mut out = Tensor::zeros(&[n, self.out_ch, g.out_h, g.out_w]);
        cnp_to_nchw(&out_cnp, n, self.out_ch, p, out.data_mut());
        self.cols = Some((cols, n));
        out
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let (cols, n) = self.cols.as_ref().ok_or(Error::NoForwardCache)?;
        let n = *n;
        let g = self.geom;
        let p = g.positions();
        let kk = g.col_rows();
        let mut gy_cnp = Vec::new();
        nchw_to_cnp(gy.data(), n, self.out_ch, p, &mut gy_cnp);
        {
            let gw = grad_of(&mut self.weight);
            T::gemm(
                self.out_ch, n * p, kk,
                T::one(), &gy_cnp, (n * p) as isize, 1,
                cols, 1, (n * p) as isize,
                T::one(), gw, kk as isize, 1,
            );
        }
        if let Some(bias) = &mut self.bias {
            let gb = grad_of(bias);
            for (o, b) in gb.iter_mut().enumerate() {
                *b = *b + gy_cnp[o * n * p..(o + 1) * n * p].iter().copied().sum::<T>();
            }
        }
        let mut dcols = vec![T::zero(); kk * n * p];
        T::gemm(
            kk, self.out_ch, n * p,
            T::one(), self.weight.data(), 1, kk as isize,
            &gy_cnp, (n * p) as isize, 1,
            T::zero(), &mut dcols, (n * p) as isize, 1,
        );
        let mut dx = Tensor::zeros(&[n, g.channels, g.height, g.width]);
        g.col2im(&dcols, n, dx.data_mut());
        Ok(dx)
    }
}

/// Transposed convolution, the adjoint of a convolution from the output
/// grid back onto the input grid. Weight layout `[in_ch, out_ch, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T: Scalar> {
    in_ch: usize,
    in_hw: (usize, usize),
    /// Geometry of the equivalent convolution over the (larger) output image.
    geom: Geometry,
    weight: Tensor<T>,
    bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    #[allow(clippy::too_many_arguments)]
    fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, input: &[usize], out: &[usize], rng: &mut Rng) -> Self {
        let geom = Geometry::new(out_ch, out[1], out[2], kernel, stride, padding).expect("validated geometry");
        debug_assert_eq!((geom.out_h, geom.out_w), (input[1], input[2]));
        Self {
            in_ch,
            in_hw: (input[1], input[2]),
            geom,
            weight: param(kaiming_uniform(&[in_ch, out_ch, kernel, kernel], in_ch * kernel * kernel, rng)),
            bias: param(Tensor::zeros(&[out_ch])),
            input: None,
        }
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.batch();
        let g = self.geom;
        let p = self.in_hw.0 * self.in_hw.1;
        let kk = g.col_rows();
        let mut x_cnp = Vec::new();
        nchw_to_cnp(x.data(), n, self.in_ch, p, &mut x_cnp);
        let mut cols = vec![T::zero(); kk * n * p];
        T::gemm(
            kk, self.in_ch, n * p,
            T::one(), self.weight.data(), 1, kk as isize,
            &x_cnp, (n * p) as isize, 1,
            T::zero(), &mut cols, (n * p) as isize, 1,
        );
        let mut out = Tensor::zeros(&[n, g.channels, g.height, g.width]);
        g.col2im(&cols, n, out.data_mut());
        let plane = g.height * g.width;
        for b in 0..n {
            for (c, bias) in self.bias.data().iter().enumerate() {
                let off = (b * g.channels + c) * plane;
                out.data_mut()[off..off + plane].iter_mut().for_each(|v| *v = *v + *bias);
            }
        }
        self.input = Some(x.detach());
        out
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or(Error::NoForwardCache)?;
        let n = x.batch();
        let g = self.geom;
        let p = self.in_hw.0 * self.in_hw.1;
        let kk = g.col_rows();
        let mut gcols = Vec::new();
        g.im2col(gy.data(), n, &mut gcols);
        let mut x_cnp = Vec::new();
        nchw_to_cnp(x.data(), n, self.in_ch, p, &mut x_cnp);
        {
            let gw = grad_of(&mut self.weight);
            T::gemm(
                self.in_ch, n * p, kk,
                T::one(), &x_cnp, (n * p) as isize, 1,
                &gcols, 1, (n * p) as isize,
                T::one(), gw, kk as isize, 1,
            );
        }
        {
            let plane = g.height * g.width;
            let gb = grad_of(&mut self.bias);
            for b in 0..n {
                for (c, v) in gb.iter_mut().enumerate() {
                    let off = (b * g.channels + c) * plane;
                    *v = *v + gy.data()[off..off + plane].iter().copied().sum::<T>();
                }
            }
        }
        let mut dx_cnp = vec![T::zero(); self.in_ch * n * p];
        T::gemm(
            self.in_ch, kk, n * p,
            T::one(), self.weight.data(), kk as isize, 1,
            &gcols, (n * p) as isize, 1,
            T::zero(), &mut dx_cnp, (n * p) as isize, 1,
        );
        let mut dx = Tensor::zeros(x.shape());
        cnp_to_nchw(&dx_cnp, n, self.in_ch, p, dx.data_mut());
        Ok(dx)
    }
}

// ---------------------------------------------------------------- linear

#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    in_features: usize,
    out_features: usize,
    weight: Tensor<T>,
    bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        Self {
            in_features,
            out_features,
            weight: param(kaiming_uniform(&[out_features, in_features], in_features, rng)),
            bias: param(Tensor::zeros(&[out_features])),
            input: None,
        }
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.batch();
        let mut out = Tensor::zeros(&[n, self.out_features]);
        for i in 0..n {
            out.row_mut(i).copy_from_slice(self.bias.data());
        }
        T::gemm(
            n, self.in_features, self.out_features,
            T::one(), x.data(), self.in_features as isize, 1,
            self.weight.data(), 1, self.in_features as isize,
            T::one(), out.data_mut(), self.out_features as isize, 1,
        );
        self.input = Some(x.detach());
        out
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or(Error::NoForwardCache)?;
        let n = x.batch();
        let (fi, fo) = (self.in_features, self.out_features);
        T::gemm(
            fo, n, fi,
            T::one(), gy.data(), 1, fo as isize,
            x.data(), fi as isize, 1,
            T::one(), grad_of(&mut self.weight), fi as isize, 1,
        );
        let gb = grad_of(&mut self.bias);
        for i in 0..n {
            add_into(gb, gy.row(i));
        }
        let mut dx = Tensor::zeros(x.shape());
        T::gemm(
            n, fo, fi,
            T::one(), gy.data(), fo as isize, 1,
            self.weight.data(), fi as isize, 1,
            T::zero(), dx.data_mut(), fi as isize, 1,
        );
        Ok(dx)
    }
}

// ---------------------------------------------------------------- pointwise

#[derive(Debug, Clone, Default)]
pub struct Relu<T: Scalar> {
    mask: Option<Vec<bool>>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Scalar> Relu<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.mask = Some(x.data().iter().map(|&v| v > T::zero()).collect());
        x.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.mask.as_ref().ok_or(Error::NoForwardCache)?;
        let mut dx = gy.detach();
        dx.data_mut().iter_mut().zip(mask).for_each(|(g, &m)| if !m { *g = T::zero() });
        Ok(dx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tanh<T: Scalar> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Tanh<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = x.map(|v| v.tanh());
        self.output = Some(y.clone());
        y
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.output.as_ref().ok_or(Error::NoForwardCache)?;
        let mut dx = gy.detach();
        dx.data_mut().iter_mut().zip(y.data()).for_each(|(g, &t)| *g = *g * (T::one() - t * t));
        Ok(dx)
    }
}

// ---------------------------------------------------------------- pooling

#[derive(Debug, Clone)]
pub struct MaxPool2d<T: Scalar> {
    window: usize,
    stride: usize,
    argmax: Option<(Vec<usize>, Vec<usize>)>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Scalar> MaxPool2d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let s = x.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let oh = (h - self.window) / self.stride + 1;
        let ow = (w - self.window) / self.stride + 1;
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut idx = Vec::with_capacity(n * c * oh * ow);
        let xd = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    // strict '>' keeps the first row-major maximum on ties
                    let mut best = base + oy * self.stride * w + ox * self.stride;
                    for ky in 0..self.window {
                        for kx in 0..self.window {
                            let at = base + (oy * self.stride + ky) * w + ox * self.stride + kx;
                            if xd[at] > xd[best] {
                                best = at;
                            }
                        }
                    }
                    out.data_mut()[idx.len()] = xd[best];
                    idx.push(best);
                }
            }
        }
        self.argmax = Some((idx, s.to_vec()));
        out
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let (idx, shape) = self.argmax.as_ref().ok_or(Error::NoForwardCache)?;
        let mut dx = Tensor::zeros(shape);
        for (g, &i) in gy.data().iter().zip(idx) {
            dx.data_mut()[i] = dx.data_mut()[i] + *g;
        }
        Ok(dx)
    }
}

// ---------------------------------------------------------------- batchnorm

#[derive(Debug, Clone)]
struct BnCache<T: Scalar> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
    shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Scalar> {
    gamma: Tensor<T>,
    beta: Tensor<T>,
    running_mean: Vec<T>,
    running_var: Vec<T>,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    fn new(channels: usize) -> Self {
        Self {
            gamma: param(Tensor::full(&[channels], T::one())),
            beta: param(Tensor::zeros(&[channels])),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            cache: None,
        }
    }

    fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let s = x.shape();
        let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
        let m = n * plane;
        if train && m < 2 {
            return Err(Error::InvalidArgument("batchnorm in train mode needs more than one value per channel".into()));
        }
        let eps = T::from_f64(BN_EPS);
        let mom = T::from_f64(BN_MOMENTUM);
        let mut y = Tensor::zeros(s);
        let mut xhat = vec![T::zero(); x.numel()];
        let mut inv_std = vec![T::zero(); c];
        let xd = x.data();
        for ch in 0..c {
            let (mean, var) = if train {
                let mut sum = T::zero();
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    sum = sum + xd[off..off + plane].iter().copied().sum::<T>();
                }
                let mean = sum / T::from_f64(m as f64);
                let mut sq = T::zero();
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    sq = sq + xd[off..off + plane].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
                }
                let var = sq / T::from_f64(m as f64);
                let unbiased = sq / T::from_f64((m - 1) as f64);
                self.running_mean[ch] = (T::one() - mom) * self.running_mean[ch] + mom * mean;
                self.running_var[ch] = (T::one() - mom) * self.running_var[ch] + mom * unbiased;
                (mean, var)
            } else {
                (self.running_mean[ch], self.running_var[ch])
            };
            let is = T::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            let (gm, bt) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    let h = (xd[i] - mean) * is;
                    xhat[i] = h;
                    y.data_mut()[i] = gm * h + bt;
                }
            }
        }
        self.cache = Some(BnCache { xhat, inv_std, train, shape: s.to_vec() });
        Ok(y)
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or(Error::NoForwardCache)?;
        let s = &cache.shape;
        let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
        let m = T::from_f64((n * plane) as f64);
        let gd = gy.data();
        let mut dx = Tensor::zeros(s);
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ch in 0..c {
            let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    sum_g = sum_g + gd[i];
                    sum_gx = sum_gx + gd[i] * cache.xhat[i];
                }
            }
            dgamma[ch] = sum_gx;
            dbeta[ch] = sum_g;
            let scale = self.gamma.data()[ch] * cache.inv_std[ch];
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    dx.data_mut()[i] = if cache.train {
                        scale * (gd[i] - sum_g / m - cache.xhat[i] * sum_gx / m)
                    } else {
                        scale * gd[i]
                    };
                }
            }
        }
        add_into(grad_of(&mut self.gamma), &dgamma);
        add_into(grad_of(&mut self.beta), &dbeta);
        Ok(dx)
    }
}

// ---------------------------------------------------------------- composite blocks

#[derive(Debug, Clone)]
pub struct ResBlock<T: Scalar> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    relu1: Relu<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    relu_out: Relu<T>,
}

impl<T: Scalar> ResBlock<T> {
    fn new(channels: usize, input: &[usize], rng: &mut Rng) -> Self {
        Self {
            conv1: Conv2d::without_bias(channels, channels, 3, 1, 1, input, rng),
            bn1: BatchNorm2d::new(channels),
            relu1: Relu::default(),
            conv2: Conv2d::without_bias(channels, channels, 3, 1, 1, input, rng),
            bn2: BatchNorm2d::new(channels),
            relu_out: Relu::default(),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let h = self.conv1.forward(x);
        let h = self.bn1.forward(&h, train)?;
        let h = self.relu1.forward(&h);
        let h = self.conv2.forward(&h);
        let mut h = self.bn2.forward(&h, train)?;
        add_into(h.data_mut(), x.data());
        Ok(self.relu_out.forward(&h))
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let g_sum = self.relu_out.backward(gy)?;
        let g = self.bn2.backward(&g_sum)?;
        let g = self.conv2.backward(&g)?;
        let g = self.relu1.backward(&g)?;
        let g = self.bn1.backward(&g)?;
        let mut dx = self.conv1.backward(&g)?;
        add_into(dx.data_mut(), g_sum.data());
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub struct DenseBlock<T: Scalar> {
    in_ch: usize,
    growth: usize,
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
    relu: Relu<T>,
}

impl<T: Scalar> DenseBlock<T> {
    fn new(in_ch: usize, growth: usize, input: &[usize], rng: &mut Rng) -> Self {
        Self {
            in_ch,
            growth,
            conv: Conv2d::without_bias(in_ch, growth, 3, 1, 1, input, rng),
            bn: BatchNorm2d::new(growth),
            relu: Relu::default(),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let h = self.conv.forward(x);
        let h = self.bn.forward(&h, train)?;
        let h = self.relu.forward(&h);
        let s = x.shape();
        let (n, plane) = (s[0], s[2] * s[3]);
        let c_out = self.in_ch + self.growth;
        let mut out = Tensor::zeros(&[n, c_out, s[2], s[3]]);
        for b in 0..n {
            let dst = &mut out.data_mut()[b * c_out * plane..(b + 1) * c_out * plane];
            dst[..self.in_ch * plane].copy_from_slice(x.row(b));
            dst[self.in_ch * plane..].copy_from_slice(h.row(b));
        }
        Ok(out)
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let s = gy.shape();
        let (n, plane) = (s[0], s[2] * s[3]);
        let c_out = self.in_ch + self.growth;
        let mut g_skip = Tensor::zeros(&[n, self.in_ch, s[2], s[3]]);
        let mut g_new = Tensor::zeros(&[n, self.growth, s[2], s[3]]);
        for b in 0..n {
            let src = &gy.data()[b * c_out * plane..(b + 1) * c_out * plane];
            g_skip.row_mut(b).copy_from_slice(&src[..self.in_ch * plane]);
            g_new.row_mut(b).copy_from_slice(&src[self.in_ch * plane..]);
        }
        let g = self.relu.backward(&g_new)?;
        let g = self.bn.backward(&g)?;
        let mut dx = self.conv.backward(&g)?;
        add_into(dx.data_mut(), g_skip.data());
        Ok(dx)
    }
}

// ---------------------------------------------------------------- dispatch

#[derive(Debug, Clone)]
pub enum Layer<T: Scalar> {
    Conv2d(Conv2d<T>),
    ConvTranspose2d(ConvTranspose2d<T>),
    Linear(Linear<T>),
    Relu(Relu<T>),
    Tanh(Tanh<T>),
    MaxPool2d(MaxPool2d<T>),
    BatchNorm2d(BatchNorm2d<T>),
    ResBlock(Box<ResBlock<T>>),
    DenseBlock(Box<DenseBlock<T>>),
}

impl<T: Scalar> Layer<T> {
    /// Build from a spec whose shapes were already validated.
    pub(crate) fn build(spec: &LayerSpec, input: &[usize], output: &[usize], rng: &mut Rng) -> Self {
        match *spec {
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding } => {
                Self::Conv2d(Conv2d::new(in_ch, out_ch, kernel, stride, padding, input, rng))
            }
            LayerSpec::ConvTranspose2d { in_ch, out_ch, kernel, stride, padding } => {
                Self::ConvTranspose2d(ConvTranspose2d::new(in_ch, out_ch, kernel, stride, padding, input, output, rng))
            }
            LayerSpec::Linear { in_features, out_features } => Self::Linear(Linear::new(in_features, out_features, rng)),
            LayerSpec::Relu => Self::Relu(Relu::default()),
            LayerSpec::Tanh => Self::Tanh(Tanh::default()),
            LayerSpec::MaxPool2d { window, stride } => {
                Self::MaxPool2d(MaxPool2d { window, stride, argmax: None, _t: Default::default() })
            }
            LayerSpec::BatchNorm2d { channels } => Self::BatchNorm2d(BatchNorm2d::new(channels)),
            LayerSpec::ResBlock { channels } => Self::ResBlock(Box::new(ResBlock::new(channels, input, rng))),
            LayerSpec::DenseBlock { in_ch, growth } => Self::DenseBlock(Box::new(DenseBlock::new(in_ch, growth, input, rng))),
        }
    }

    pub(crate) fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        Ok(match self {
            Self::Conv2d(l) => l.forward(x),
            Self::ConvTranspose2d(l) => l.forward(x),
            Self::Linear(l) => l.forward(x),
            Self::Relu(l) => l.forward(x),
            Self::Tanh(l) => l.forward(x),
            Self::MaxPool2d(l) => l.forward(x),
            Self::BatchNorm2d(l) => l.forward(x, train)?,
            Self::ResBlock(l) => l.forward(x, train)?,
            Self::DenseBlock(l) => l.forward(x, train)?,
        })
    }

    pub(crate) fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Self::Conv2d(l) => l.backward(gy),
            Self::ConvTranspose2d(l) => l.backward(gy),
            Self::Linear(l) => l.backward(gy),
            Self::Relu(l) => l.backward(gy),
            Self::Tanh(l) => l.backward(gy),
            Self::MaxPool2d(l) => l.backward(gy),
            Self::BatchNorm2d(l) => l.backward(gy),
            Self::ResBlock(l) => l.backward(gy),
            Self::DenseBlock(l) => l.backward(gy),
        }
    }

    pub(crate) fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Self::Conv2d(l) => l.params(),
            Self::ConvTranspose2d(l) => vec![&l.weight, &l.bias],
            Self::Linear(l) => vec![&l.weight, &l.bias],
            Self::BatchNorm2d(l) => vec![&l.gamma, &l.beta],
            Self::ResBlock(l) => {
                let mut p = l.conv1.params();
                p.extend([&l.bn1.gamma, &l.bn1.beta]);
                p.extend(l.conv2.params());
                p.extend([&l.bn2.gamma, &l.bn2.beta]);
                p
            }
            Self::DenseBlock(l) => {
                let mut p = l.conv.params();
                p.extend([&l.bn.gamma, &l.bn.beta]);
                p
            }
            Self::Relu(_) | Self::Tanh(_) | Self::MaxPool2d(_) => Vec::new(),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Self::Conv2d(l) => l.params_mut(),
            Self::ConvTranspose2d(l) => vec![&mut l.weight, &mut l.bias],
            Self::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Self::BatchNorm2d(l) => vec![&mut l.gamma, &mut l.beta],
            Self::ResBlock(l) => {
                let l = &mut **l;
                let mut p = l.conv1.params_mut();
                p.extend([&mut l.bn1.gamma, &mut l.bn1.beta]);
                p.extend(l.conv2.params_mut());
                p.extend([&mut l.bn2.gamma, &mut l.bn2.beta]);
                p
            }
            Self::DenseBlock(l) => {
                let l = &mut **l;
                let mut p = l.conv.params_mut();
                p.extend([&mut l.bn.gamma, &mut l.bn.beta]);
                p
            }
            Self::Relu(_) | Self::Tanh(_) | Self::MaxPool2d(_) => Vec::new(),
        }
    }

    /// Batchnorm running statistics, the only non-parameter state.
    pub(crate) fn buffers(&self) -> Vec<&[T]> {
        match self {
            Self::BatchNorm2d(l) => vec![&l.running_mean, &l.running_var],
            Self::ResBlock(l) => vec![&l.bn1.running_mean, &l.bn1.running_var, &l.bn2.running_mean, &l.bn2.running_var],
            Self::DenseBlock(l) => vec![&l.bn.running_mean, &l.bn.running_var],
            _ => Vec::new(),
        }
    }

    pub(crate) fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Self::BatchNorm2d(l) => vec![&mut l.running_mean, &mut l.running_var],
            Self::ResBlock(l) => {
                let l = &mut **l;
                vec![&mut l.bn1.running_mean, &mut l.bn1.running_var, &mut l.bn2.running_mean, &mut l.bn2.running_var]
            }
            Self::DenseBlock(l) => {
                let l = &mut **l;
                vec![&mut l.bn.running_mean, &mut l.bn.running_var]
            }
            _ => Vec::new(),
        }
    }
}
