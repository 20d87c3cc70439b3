use rand::Rng as _;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::Rng;

/// Whether stochastic layers (dropout) are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Intermediate values kept by `forward` for the matching `backward`.
#[derive(Clone, Debug)]
pub enum Cache<T> {
    Input(Tensor<T>),
    Argmax { input_shape: Vec<usize>, argmax: Vec<usize> },
    Mask(Vec<T>),
    Shape(Vec<usize>),
}

/// Valid-padding 2D convolution. Weight layout `[out, in, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
}

/// Valid-padding 1D convolution. Weight layout `[out, in, k]`.
#[derive(Clone, Debug)]
pub struct Conv1d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
}

/// Fully connected layer. Weight layout `[out, in]`.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    Conv1d(Conv1d<T>),
    Dense(Dense<T>),
    /// Non-overlapping max pooling over the trailing 2 axes.
    MaxPool2d(usize),
    /// Non-overlapping max pooling over the trailing axis.
    MaxPool1d(usize),
    Relu,
    /// Inverted dropout with the given drop probability.
    Dropout(f64),
    Flatten,
}

fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut Rng) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Self {
            weight: kaiming_uniform(&[out_ch, in_ch, kernel, kernel], fan_in, rng),
            bias: Tensor::zeros(&[out_ch]),
            stride: 1,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.weight.shape();
        (s[0], s[1], s[2])
    }
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut Rng) -> Self {
        Self {
            weight: kaiming_uniform(&[out_ch, in_ch, kernel], in_ch * kernel, rng),
            bias: Tensor::zeros(&[out_ch]),
            stride: 1,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.weight.shape();
        (s[0], s[1], s[2])
    }
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Self {
            weight: kaiming_uniform(&[outputs, inputs], inputs, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    /// All-zero weights and the given bias.
    pub fn zeroed(inputs: usize, outputs: usize, bias: T) -> Self {
        Self {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::full(&[outputs], bias),
        }
    }
}

fn shape_err(layer: &str, expected: &str, got: &[usize]) -> Error {
    Error::Config(format!("{layer}: expected input {expected}, got shape {got:?}"))
}

impl<T: Scalar> Layer<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Conv1d(_) => "conv1d",
            Layer::Dense(_) => "dense",
            Layer::MaxPool2d(_) => "maxpool2d",
            Layer::MaxPool1d(_) => "maxpool1d",
            Layer::Relu => "relu",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten => "flatten",
        }
    }

    /// Output shape for a given input shape (both including the batch axis).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(c) => {
                let (out, inc, k) = c.dims();
                if input.len() != 4 || input[1] != inc || input[2] < k || input[3] < k {
                    return Err(shape_err("conv2d", &format!("[B, {inc}, >={k}, >={k}]"), input));
                }
                Ok(vec![
                    input[0],
                    out,
                    (input[2] - k) / c.stride + 1,
                    (input[3] - k) / c.stride + 1,
                ])
            }
            Layer::Conv1d(c) => {
                let (out, inc, k) = c.dims();
                if input.len() != 3 || input[1] != inc || input[2] < k {
                    return Err(shape_err("conv1d", &format!("[B, {inc}, >={k}]"), input));
                }
                Ok(vec![input[0], out, (input[2] - k) / c.stride + 1])
            }
            Layer::Dense(d) => {
                let (out, inp) = (d.weight.shape()[0], d.weight.shape()[1]);
                if input.len() != 2 || input[1] != inp {
                    return Err(shape_err("dense", &format!("[B, {inp}]"), input));
                }
                Ok(vec![input[0], out])
            }
            Layer::MaxPool2d(p) => {
                if input.len() != 4 || input[2] < *p || input[3] < *p {
                    return Err(shape_err("maxpool2d", "[B, C, H, W]", input));
                }
                Ok(vec![input[0], input[1], input[2] / p, input[3] / p])
            }
            Layer::MaxPool1d(p) => {
                if input.len() != 3 || input[2] < *p {
                    return Err(shape_err("maxpool1d", "[B, C, L]", input));
                }
                Ok(vec![input[0], input[1], input[2] / p])
            }
            Layer::Relu | Layer::Dropout(_) => Ok(input.to_vec()),
            Layer::Flatten => {
                if input.is_empty() {
                    return Err(shape_err("flatten", "[B, ...]", input));
                }
                Ok(vec![input[0], input[1..].iter().product()])
            }
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Conv1d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }

    /// Runs the layer. `rng` is only drawn from by dropout in train mode.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode, rng: Option<&mut Rng>) -> Result<(Tensor<T>, Cache<T>)> {
        let out_shape = self.output_shape(x.shape())?;
        let mut y = Tensor::zeros(&out_shape);
        let cache = match self {
            Layer::Conv2d(c) => {
                conv2d_forward(c, x, &mut y);
                Cache::Input(x.clone())
            }
            Layer::Conv1d(c) => {
                conv1d_forward(c, x, &mut y);
                Cache::Input(x.clone())
            }
            Layer::Dense(d) => {
                dense_forward(d, x, &mut y);
                Cache::Input(x.clone())
            }
            Layer::MaxPool2d(p) => Cache::Argmax {
                input_shape: x.shape().to_vec(),
                argmax: maxpool2d_forward(*p, x, &mut y),
            },
            Layer::MaxPool1d(p) => Cache::Argmax {
                input_shape: x.shape().to_vec(),
                argmax: maxpool1d_forward(*p, x, &mut y),
            },
            Layer::Relu => {
                let mask: Vec<T> = x
                    .data()
                    .iter()
                    .map(|&v| if v > T::zero() { T::one() } else { T::zero() })
                    .collect();
                for ((o, &v), &m) in y.data_mut().iter_mut().zip(x.data()).zip(&mask) {
                    *o = v * m;
                }
                Cache::Mask(mask)
            }
            Layer::Dropout(p) => {
                let mask: Vec<T> = match (mode, rng) {
                    (Mode::Train, Some(rng)) if *p > 0.0 => {
                        let keep = T::lit(1.0 / (1.0 - p));
                        (0..x.len())
                            .map(|_| if rng.random::<f64>() < *p { T::zero() } else { keep })
                            .collect()
                    }
                    (Mode::Train, None) if *p > 0.0 => {
                        return Err(Error::State("dropout in train mode needs an rng".into()))
                    }
                    _ => vec![T::one(); x.len()],
                };
                for ((o, &v), &m) in y.data_mut().iter_mut().zip(x.data()).zip(&mask) {
                    *o = v * m;
                }
                Cache::Mask(mask)
            }
            Layer::Flatten => {
                y.data_mut().copy_from_slice(x.data());
                Cache::Shape(x.shape().to_vec())
            }
        };
        Ok((y, cache))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &Cache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let name = self.name();
        let mismatch = || Error::State(format!("{name}: cache does not match layer"));
        match (self, cache) {
            (Layer::Conv2d(c), Cache::Input(x)) => Ok(conv2d_backward(c, x, grad_out)),
            (Layer::Conv1d(c), Cache::Input(x)) => Ok(conv1d_backward(c, x, grad_out)),
            (Layer::Dense(d), Cache::Input(x)) => Ok(dense_backward(d, x, grad_out)),
            (Layer::MaxPool2d(_) | Layer::MaxPool1d(_), Cache::Argmax { input_shape, argmax }) => {
                let mut gx = Tensor::zeros(input_shape);
                let gxd = gx.data_mut();
                for (&src, &g) in argmax.iter().zip(grad_out.data()) {
                    gxd[src] += g;
                }
                Ok(gx)
            }
            (Layer::Relu | Layer::Dropout(_), Cache::Mask(mask)) => {
                let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                Tensor::from_vec(grad_out.shape(), data)
            }
            (Layer::Flatten, Cache::Shape(shape)) => grad_out.clone().reshape(shape),
            _ => Err(mismatch()),
        }
    }
}

fn conv2d_forward<T: Scalar>(c: &Conv2d<T>, x: &Tensor<T>, y: &mut Tensor<T>) {
    let (oc_n, ic_n, k) = c.dims();
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let (oh, ow) = (y.shape()[2], y.shape()[3]);
    let s = c.stride;
    let wt = c.weight.data();
    let bias = c.bias.data();
    for b in 0..x.batch() {
        let xin = x.item(b);
        let yout = y.item_mut(b);
        for oc in 0..oc_n {
            let plane = &mut yout[oc * oh * ow..(oc + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = bias[oc]);
            for ic in 0..ic_n {
                let xplane = &xin[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wt[((oc * ic_n + ic) * k + ky) * k + kx];
                        for oy in 0..oh {
                            let row = &xplane[(oy * s + ky) * w + kx..];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                for (o, &xv) in orow.iter_mut().zip(&row[..ow]) {
                                    *o += wv * xv;
                                }
                            } else {
                                for (ox, o) in orow.iter_mut().enumerate() {
                                    *o += wv * row[ox * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_backward<T: Scalar>(c: &mut Conv2d<T>, x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let (oc_n, ic_n, k) = c.dims();
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let (oh, ow) = (gy.shape()[2], gy.shape()[3]);
    let s = c.stride;
    let mut gx = Tensor::zeros(x.shape());
    let wt = c.weight.data().to_vec();
    let mut gw = vec![T::zero(); wt.len()];
    let mut gb = vec![T::zero(); oc_n];
    for b in 0..x.batch() {
        let xin = x.item(b);
        let gout = gy.item(b);
        let gxin = gx.item_mut(b);
        for oc in 0..oc_n {
            let gplane = &gout[oc * oh * ow..(oc + 1) * oh * ow];
            gb[oc] += gplane.iter().copied().sum::<T>();
            for ic in 0..ic_n {
                let xplane = &xin[ic * h * w..(ic + 1) * h * w];
                let gxplane = &mut gxin[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((oc * ic_n + ic) * k + ky) * k + kx;
                        let wv = wt[widx];
                        let mut acc = T::zero();
                        for oy in 0..oh {
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            let base = (oy * s + ky) * w + kx;
                            if s == 1 {
                                let xrow = &xplane[base..base + ow];
                                for (&g, &xv) in grow.iter().zip(xrow) {
                                    acc += g * xv;
                                }
                                let gxrow = &mut gxplane[base..base + ow];
                                for (gxv, &g) in gxrow.iter_mut().zip(grow) {
                                    *gxv += wv * g;
                                }
                            } else {
                                for (ox, &g) in grow.iter().enumerate() {
                                    acc += g * xplane[base + ox * s];
                                    gxplane[base + ox * s] += wv * g;
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    accumulate(c.weight.grad_mut(), &gw);
    accumulate(c.bias.grad_mut(), &gb);
    gx
}

fn conv1d_forward<T: Scalar>(c: &Conv1d<T>, x: &Tensor<T>, y: &mut Tensor<T>) {
    let (oc_n, ic_n, k) = c.dims();
    let len = x.shape()[2];
    let ol = y.shape()[2];
    let s = c.stride;
    let wt = c.weight.data();
    let bias = c.bias.data();
    for b in 0..x.batch() {
        let xin = x.item(b);
        let yout = y.item_mut(b);
        for oc in 0..oc_n {
            let orow = &mut yout[oc * ol..(oc + 1) * ol];
            orow.iter_mut().for_each(|v| *v = bias[oc]);
            for ic in 0..ic_n {
                let xrow = &xin[ic * len..(ic + 1) * len];
                for kk in 0..k {
                    let wv = wt[(oc * ic_n + ic) * k + kk];
                    for (o, out) in orow.iter_mut().enumerate() {
                        *out += wv * xrow[o * s + kk];
                    }
                }
            }
        }
    }
}

fn conv1d_backward<T: Scalar>(c: &mut Conv1d<T>, x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let (oc_n, ic_n, k) = c.dims();
    let len = x.shape()[2];
    let ol = gy.shape()[2];
    let s = c.stride;
    let mut gx = Tensor::zeros(x.shape());
    let wt = c.weight.data().to_vec();
    let mut gw = vec![T::zero(); wt.len()];
    let mut gb = vec![T::zero(); oc_n];
    for b in 0..x.batch() {
        let xin = x.item(b);
        let gout = gy.item(b);
        let gxin = gx.item_mut(b);
        for oc in 0..oc_n {
            let grow = &gout[oc * ol..(oc + 1) * ol];
            gb[oc] += grow.iter().copied().sum::<T>();
            for ic in 0..ic_n {
                let xrow = &xin[ic * len..(ic + 1) * len];
                let gxrow = &mut gxin[ic * len..(ic + 1) * len];
                for kk in 0..k {
                    let widx = (oc * ic_n + ic) * k + kk;
                    let wv = wt[widx];
                    let mut acc = T::zero();
                    for (o, &g) in grow.iter().enumerate() {
                        acc += g * xrow[o * s + kk];
                        gxrow[o * s + kk] += wv * g;
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    accumulate(c.weight.grad_mut(), &gw);
    accumulate(c.bias.grad_mut(), &gb);
    gx
}

fn dense_forward<T: Scalar>(d: &Dense<T>, x: &Tensor<T>, y: &mut Tensor<T>) {
    let (out, inp) = (d.weight.shape()[0], d.weight.shape()[1]);
    let wt = d.weight.data();
    let bias = d.bias.data();
    for b in 0..x.batch() {
        let xin = x.item(b);
        let yout = y.item_mut(b);
        for o in 0..out {
            let row = &wt[o * inp..(o + 1) * inp];
            yout[o] = bias[o] + row.iter().zip(xin).map(|(&wv, &xv)| wv * xv).sum::<T>();
        }
    }
}

fn dense_backward<T: Scalar>(d: &mut Dense<T>, x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let (out, inp) = (d.weight.shape()[0], d.weight.shape()[1]);
    let mut gx = Tensor::zeros(x.shape());
    let wt = d.weight.data().to_vec();
    let mut gw = vec![T::zero(); wt.len()];
    let mut gb = vec![T::zero(); out];
    for b in 0..x.batch() {
        let xin = x.item(b);
        let gout = gy.item(b);
        let gxin = gx.item_mut(b);
        for o in 0..out {
            let g = gout[o];
            gb[o] += g;
            let row = &wt[o * inp..(o + 1) * inp];
            let grow = &mut gw[o * inp..(o + 1) * inp];
            for i in 0..inp {
                grow[i] += g * xin[i];
                gxin[i] += g * row[i];
            }
        }
    }
    accumulate(d.weight.grad_mut(), &gw);
    accumulate(d.bias.grad_mut(), &gb);
    gx
}

fn maxpool2d_forward<T: Scalar>(p: usize, x: &Tensor<T>, y: &mut Tensor<T>) -> Vec<usize> {
    let (b_n, c_n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h / p, w / p);
    let mut argmax = Vec::with_capacity(y.len());
    let xd = x.data();
    let yd = y.data_mut();
    let mut oi = 0;
    for bc in 0..b_n * c_n {
        let base = bc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * p * w + ox * p;
                for dy in 0..p {
                    for dx in 0..p {
                        let idx = base + (oy * p + dy) * w + ox * p + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                yd[oi] = xd[best];
                argmax.push(best);
                oi += 1;
            }
        }
    }
    argmax
}

fn maxpool1d_forward<T: Scalar>(p: usize, x: &Tensor<T>, y: &mut Tensor<T>) -> Vec<usize> {
    let (b_n, c_n, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ol = len / p;
    let mut argmax = Vec::with_capacity(y.len());
    let xd = x.data();
    let yd = y.data_mut();
    let mut oi = 0;
    for bc in 0..b_n * c_n {
        let base = bc * len;
        for o in 0..ol {
            let mut best = base + o * p;
            for d in 1..p {
                if xd[base + o * p + d] > xd[best] {
                    best = base + o * p + d;
                }
            }
            yd[oi] = xd[best];
            argmax.push(best);
            oi += 1;
        }
    }
    argmax
}

fn accumulate<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
