use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::{self, axpy};
use super::{Mode, NnError, Tensor};

/// Convolution whose kernels span the full input row width, so each filter
/// yields a one-dimensional feature map over n-gram windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub ngram: usize,
    pub filters: usize,
    pub width: usize,
    /// `[filters, ngram, width]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv {
    /// Glorot-uniform kernels, zero bias.
    pub fn new(ngram: usize, filters: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = ngram * width;
        let fan_out = ngram * filters;
        Conv {
            ngram,
            filters,
            width,
            weights: glorot(filters * ngram * width, fan_in, fan_out, rng),
            bias: vec![0.0; filters],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs, inputs]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            inputs,
            outputs,
            weights: glorot(inputs * outputs, inputs, outputs, rng),
            bias: vec![0.0; outputs],
        }
    }
}

fn glorot(n: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv),
    /// Per-channel maximum over the whole sequence: `[L, F] -> [F]`.
    GlobalMaxPool,
    /// Windowed maximum along the sequence axis: `[L, F] -> [(L - w) / s + 1, F]`.
    MaxPool { window: usize, stride: usize },
    Flatten,
    Dense(Dense),
    Relu,
    Dropout { rate: f64 },
    Softmax,
    /// Runs every branch on the same input and concatenates the flattened outputs.
    Concat(Vec<Vec<Layer>>),
}

/// What a layer remembers from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv { input: Tensor },
    Pool { in_shape: Vec<usize>, argmax: Vec<usize> },
    Flatten { in_shape: Vec<usize> },
    Dense { input: Vec<f64> },
    Relu { active: Vec<bool> },
    Dropout { mask: Vec<f64> },
    Softmax { output: Vec<f64> },
    Concat { branches: Vec<Vec<LayerCache>>, shapes: Vec<Vec<usize>> },
}

impl LayerCache {
    /// Feeds the discrete routing decisions (ReLU activity, pooling argmax)
    /// into `state`. Two forward passes with equal signatures sit on the same
    /// smooth piece of the network function.
    pub(crate) fn hash_pattern<H: Hasher>(&self, state: &mut H) {
        match self {
            LayerCache::Pool { argmax, .. } => argmax.hash(state),
            LayerCache::Relu { active } => active.hash(state),
            LayerCache::Concat { branches, .. } => {
                for cache in branches.iter().flatten() {
                    cache.hash_pattern(state);
                }
            }
            _ => {}
        }
    }
}

fn expect_2d(shape: &[usize], what: &str) -> Result<(usize, usize), NnError> {
    match shape {
        [l, f] => Ok((*l, *f)),
        other => Err(NnError::Shape(format!("{what} expects [L, F] input, got {other:?}"))),
    }
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "Conv",
            Layer::GlobalMaxPool => "GlobalMaxPool",
            Layer::MaxPool { .. } => "MaxPool",
            Layer::Flatten => "Flatten",
            Layer::Dense(_) => "Dense",
            Layer::Relu => "ReLU",
            Layer::Dropout { .. } => "Dropout",
            Layer::Softmax => "Softmax",
            Layer::Concat(_) => "Concat",
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        match self {
            Layer::Conv(c) => {
                let (len, width) = ops::sequence_dims(input)?;
                if width != c.width {
                    return Err(NnError::Shape(format!(
                        "conv expects width {}, got {width}",
                        c.width
                    )));
                }
                if c.ngram > len {
                    return Err(NnError::Shape(format!(
                        "{}-gram kernel does not fit a sequence of length {len}",
                        c.ngram
                    )));
                }
                Ok(vec![len - c.ngram + 1, c.filters])
            }
            Layer::GlobalMaxPool => {
                let (len, f) = expect_2d(input, "global max pool")?;
                if len == 0 {
                    return Err(NnError::Shape("global max pool over an empty sequence".into()));
                }
                Ok(vec![f])
            }
            Layer::MaxPool { window, stride } => {
                let (len, f) = expect_2d(input, "max pool")?;
                if len < *window {
                    return Err(NnError::Shape(format!(
                        "max pool window {window} exceeds sequence length {len}"
                    )));
                }
                Ok(vec![(len - window) / stride + 1, f])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense(d) => match input {
                [p] if *p == d.inputs => Ok(vec![d.outputs]),
                other => Err(NnError::Shape(format!(
                    "dense layer expects [{}], got {other:?}",
                    d.inputs
                ))),
            },
            Layer::Relu | Layer::Dropout { .. } => Ok(input.to_vec()),
            Layer::Softmax => match input {
                [k] if *k >= 2 => Ok(vec![*k]),
                other => Err(NnError::Shape(format!("softmax expects [k>=2], got {other:?}"))),
            },
            Layer::Concat(branches) => {
                let mut total = 0;
                for branch in branches {
                    let mut shape = input.to_vec();
                    for layer in branch {
                        shape = layer.output_shape(&shape)?;
                    }
                    total += shape.iter().product::<usize>();
                }
                Ok(vec![total])
            }
        }
    }

    pub fn forward(
        &self,
        x: Tensor,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, LayerCache), NnError> {
        let out_shape = self.output_shape(x.shape())?;
        match self {
            Layer::Conv(c) => {
                let (len, width) = ops::sequence_dims(x.shape())?;
                let out = ops::conv_forward_raw(x.data(), len, width, &c.weights, &c.bias, c.ngram)?;
                Ok((out, LayerCache::Conv { input: x }))
            }
            Layer::GlobalMaxPool => {
                let (len, f) = expect_2d(x.shape(), "global max pool")?;
                let data = x.data();
                let mut out = vec![0.0; f];
                let mut argmax = vec![0; f];
                for ch in 0..f {
                    let mut best = data[ch];
                    for i in 1..len {
                        let v = data[i * f + ch];
                        if v > best {
                            best = v;
                            argmax[ch] = i;
                        }
                    }
                    out[ch] = best;
                }
                let cache = LayerCache::Pool {
                    in_shape: x.shape().to_vec(),
                    argmax,
                };
                Ok((Tensor::new(out_shape, out)?, cache))
            }
            Layer::MaxPool { window, stride } => {
                let (_, f) = expect_2d(x.shape(), "max pool")?;
                let out_len = out_shape[0];
                let data = x.data();
                let mut out = vec![0.0; out_len * f];
                let mut argmax = vec![0; out_len * f];
                for o in 0..out_len {
                    let start = o * stride;
                    for ch in 0..f {
                        let mut best_i = start;
                        for i in start + 1..start + window {
                            if data[i * f + ch] > data[best_i * f + ch] {
                                best_i = i;
                            }
                        }
                        out[o * f + ch] = data[best_i * f + ch];
                        argmax[o * f + ch] = best_i;
                    }
                }
                let cache = LayerCache::Pool {
                    in_shape: x.shape().to_vec(),
                    argmax,
                };
                Ok((Tensor::new(out_shape, out)?, cache))
            }
            Layer::Flatten => {
                let in_shape = x.shape().to_vec();
                Ok((x.reshape(out_shape)?, LayerCache::Flatten { in_shape }))
            }
            Layer::Dense(d) => {
                let out = ops::dense_forward(x.data(), &d.weights, &d.bias)?;
                Ok((Tensor::vector(out), LayerCache::Dense { input: x.into_data() }))
            }
            Layer::Relu => {
                let active: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
                let mut x = x;
                for v in x.data_mut() {
                    if *v <= 0.0 {
                        *v = 0.0;
                    }
                }
                Ok((x, LayerCache::Relu { active }))
            }
            Layer::Dropout { rate } => {
                let (out, mask) = ops::dropout(x.data(), *rate, mode, rng)?;
                Ok((Tensor::new(out_shape, out)?, LayerCache::Dropout { mask }))
            }
            Layer::Softmax => {
                let out = ops::softmax(x.data())?;
                Ok((Tensor::vector(out.clone()), LayerCache::Softmax { output: out }))
            }
            Layer::Concat(branches) => {
                let mut joined = Vec::with_capacity(out_shape[0]);
                let mut caches = Vec::with_capacity(branches.len());
                let mut shapes = Vec::with_capacity(branches.len());
                for branch in branches {
                    let mut h = x.clone();
                    let mut branch_caches = Vec::with_capacity(branch.len());
                    for layer in branch {
                        let (next, cache) = layer.forward(h, mode, rng)?;
                        check_finite(&next, layer)?;
                        branch_caches.push(cache);
                        h = next;
                    }
                    shapes.push(h.shape().to_vec());
                    joined.extend_from_slice(h.data());
                    caches.push(branch_caches);
                }
                let cache = LayerCache::Concat {
                    branches: caches,
                    shapes,
                };
                Ok((Tensor::vector(joined), cache))
            }
        }
    }

    /// Accumulates parameter gradients into `grads` (this layer's slots only)
    /// and returns the gradient with respect to the input when `need_input`.
    pub fn backward(
        &self,
        cache: &LayerCache,
        grad: Tensor,
        grads: &mut [Vec<f64>],
        need_input: bool,
    ) -> Result<Option<Tensor>, NnError> {
        match (self, cache) {
            (Layer::Conv(c), LayerCache::Conv { input }) => {
                let (_, width) = ops::sequence_dims(input.shape())?;
                let span = c.ngram * width;
                let x = input.data();
                let g = grad.data();
                let out_len = g.len() / c.filters;
                let mut dx = need_input.then(|| vec![0.0; x.len()]);
                let (dw, rest) = grads.split_at_mut(1);
                let (dw, db) = (&mut dw[0], &mut rest[0]);
                for i in 0..out_len {
                    let window = &x[i * width..i * width + span];
                    for f in 0..c.filters {
                        let gv = g[i * c.filters + f];
                        if gv == 0.0 {
                            continue;
                        }
                        db[f] += gv;
                        axpy(&mut dw[f * span..(f + 1) * span], gv, window);
                        if let Some(dx) = dx.as_mut() {
                            axpy(
                                &mut dx[i * width..i * width + span],
                                gv,
                                &c.weights[f * span..(f + 1) * span],
                            );
                        }
                    }
                }
                dx.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()
            }
            (Layer::GlobalMaxPool, LayerCache::Pool { in_shape, argmax }) => {
                if !need_input {
                    return Ok(None);
                }
                let f = in_shape[1];
                let mut dx = vec![0.0; in_shape.iter().product()];
                for (ch, &i) in argmax.iter().enumerate() {
                    dx[i * f + ch] += grad.data()[ch];
                }
                Ok(Some(Tensor::new(in_shape.clone(), dx)?))
            }
            (Layer::MaxPool { .. }, LayerCache::Pool { in_shape, argmax }) => {
                if !need_input {
                    return Ok(None);
                }
                let f = in_shape[1];
                let mut dx = vec![0.0; in_shape.iter().product()];
                for (k, &i) in argmax.iter().enumerate() {
                    dx[i * f + k % f] += grad.data()[k];
                }
                Ok(Some(Tensor::new(in_shape.clone(), dx)?))
            }
            (Layer::Flatten, LayerCache::Flatten { in_shape }) => {
                Ok(Some(grad.reshape(in_shape.clone())?))
            }
            (Layer::Dense(d), LayerCache::Dense { input }) => {
                let g = grad.data();
                let p = d.inputs;
                let mut dx = need_input.then(|| vec![0.0; p]);
                let (dw, rest) = grads.split_at_mut(1);
                let (dw, db) = (&mut dw[0], &mut rest[0]);
                for (j, &gv) in g.iter().enumerate() {
                    if gv == 0.0 {
                        continue;
                    }
                    db[j] += gv;
                    axpy(&mut dw[j * p..(j + 1) * p], gv, input);
                    if let Some(dx) = dx.as_mut() {
                        axpy(dx, gv, &d.weights[j * p..(j + 1) * p]);
                    }
                }
                Ok(dx.map(Tensor::vector))
            }
            (Layer::Relu, LayerCache::Relu { active }) => {
                let mut g = grad;
                for (v, &on) in g.data_mut().iter_mut().zip(active) {
                    if !on {
                        *v = 0.0;
                    }
                }
                Ok(Some(g))
            }
            (Layer::Dropout { .. }, LayerCache::Dropout { mask }) => {
                let mut g = grad;
                for (v, m) in g.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                Ok(Some(g))
            }
            (Layer::Softmax, LayerCache::Softmax { output }) => {
                let g = grad.data();
                let inner = ops::dot(g, output);
                let dz = output.iter().zip(g).map(|(p, gi)| p * (gi - inner)).collect();
                Ok(Some(Tensor::vector(dz)))
            }
            (Layer::Concat(branches), LayerCache::Concat { branches: caches, shapes }) => {
                let mut offset = 0;
                let mut slot = 0;
                let mut dx: Option<Tensor> = None;
                for ((branch, branch_caches), shape) in branches.iter().zip(caches).zip(shapes) {
                    let size: usize = shape.iter().product();
                    let part = grad.data()[offset..offset + size].to_vec();
                    offset += size;
                    let n_slots = params_in(branch);
                    let branch_grads = &mut grads[slot..slot + n_slots];
                    slot += n_slots;
                    let g = backward_sequence(
                        branch,
                        branch_caches,
                        Tensor::new(shape.clone(), part)?,
                        branch_grads,
                        need_input,
                    )?;
                    if let Some(g) = g {
                        match dx.as_mut() {
                            Some(acc) => axpy(acc.data_mut(), 1.0, g.data()),
                            None => dx = Some(g),
                        }
                    }
                }
                Ok(dx)
            }
            (layer, cache) => Err(NnError::Shape(format!(
                "cache {cache:?} does not belong to a {} layer",
                layer.kind()
            ))),
        }
    }

    /// Number of parameter tensors owned by this layer (including nested branches).
    pub fn param_tensors(&self) -> usize {
        match self {
            Layer::Conv(_) | Layer::Dense(_) => 2,
            Layer::Concat(branches) => branches.iter().map(|b| params_in(b)).sum(),
            _ => 0,
        }
    }

    pub fn collect_params<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        match self {
            Layer::Conv(c) => {
                out.push(&c.weights);
                out.push(&c.bias);
            }
            Layer::Dense(d) => {
                out.push(&d.weights);
                out.push(&d.bias);
            }
            Layer::Concat(branches) => {
                for layer in branches.iter().flatten() {
                    layer.collect_params(out);
                }
            }
            _ => {}
        }
    }

    pub fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<f64>>) {
        match self {
            Layer::Conv(c) => {
                out.push(&mut c.weights);
                out.push(&mut c.bias);
            }
            Layer::Dense(d) => {
                out.push(&mut d.weights);
                out.push(&mut d.bias);
            }
            Layer::Concat(branches) => {
                for layer in branches.iter_mut().flatten() {
                    layer.collect_params_mut(out);
                }
            }
            _ => {}
        }
    }

    /// One-line description used in network summaries.
    pub fn describe(&self) -> String {
        match self {
            Layer::Conv(c) => format!("Conv(ngram={}, filters={}, width={})", c.ngram, c.filters, c.width),
            Layer::MaxPool { window, stride } => format!("MaxPool(window={window}, stride={stride})"),
            Layer::Dense(d) => format!("Dense({} -> {})", d.inputs, d.outputs),
            Layer::Dropout { rate } => format!("Dropout({rate})"),
            Layer::Concat(branches) => {
                let parts: Vec<String> = branches
                    .iter()
                    .map(|b| b.iter().map(Layer::describe).collect::<Vec<_>>().join(" -> "))
                    .collect();
                format!("Concat[{}]", parts.join(" | "))
            }
            other => other.kind().to_string(),
        }
    }
}

pub(crate) fn params_in(layers: &[Layer]) -> usize {
    layers.iter().map(Layer::param_tensors).sum()
}

pub(crate) fn check_finite(t: &Tensor, layer: &Layer) -> Result<(), NnError> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(NnError::NonFinite(format!("{} output", layer.kind())))
    }
}

/// Backward pass through a layer sequence; `grads` holds the sequence's slots in order.
pub(crate) fn backward_sequence(
    layers: &[Layer],
    caches: &[LayerCache],
    grad: Tensor,
    grads: &mut [Vec<f64>],
    need_input: bool,
) -> Result<Option<Tensor>, NnError> {
    let mut slot_end = grads.len();
    let mut g = grad;
    for (idx, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        let n = layer.param_tensors();
        let slots = &mut grads[slot_end - n..slot_end];
        slot_end -= n;
        // earlier layers only need input gradients if something below has parameters
        let want_input = need_input || params_in(&layers[..idx]) > 0;
        match layer.backward(cache, g, slots, want_input)? {
            Some(next) => g = next,
            None => return Ok(None),
        }
    }
    Ok(Some(g))
}
