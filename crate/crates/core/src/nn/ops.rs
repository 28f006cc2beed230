//! Stateless numeric kernels shared by the layers.

use rand::Rng;

use super::{Mode, NnError, Tensor};

/// Clamp applied to probabilities before taking logarithms.
pub const BCE_EPSILON: f64 = 1e-12;

/// Dot product with four independent accumulators; the summation order is
/// fixed so results are reproducible.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `dst += scale * src`
pub(crate) fn axpy(dst: &mut [f64], scale: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Treats `[L, W]` or `[L, d, C]` input as a sequence of `L` rows of width `W = d·C`.
pub(crate) fn sequence_dims(shape: &[usize]) -> Result<(usize, usize), NnError> {
    match shape {
        [len, width] => Ok((*len, *width)),
        [len, d, c] => Ok((*len, d * c)),
        other => Err(NnError::Shape(format!(
            "expected a sequence tensor [L, W] or [L, d, C], got {other:?}"
        ))),
    }
}

/// Valid, stride-1 convolution with kernels spanning the full row width.
///
/// `kernels` has shape `[F, n, W]` (or `[F, n, d, C]`); the result has shape
/// `[L - n + 1, F]`, one column per filter.
pub fn conv_forward(input: &Tensor, kernels: &Tensor, bias: &[f64]) -> Result<Tensor, NnError> {
    let (len, width) = sequence_dims(input.shape())?;
    let (filters, ngram, kernel_width) = match kernels.shape() {
        [f, n, w] => (*f, *n, *w),
        [f, n, d, c] => (*f, *n, d * c),
        other => return Err(NnError::Shape(format!("bad kernel shape {other:?}"))),
    };
    if kernel_width != width {
        return Err(NnError::Shape(format!(
            "kernel width {kernel_width} does not span input width {width}"
        )));
    }
    if bias.len() != filters {
        return Err(NnError::Shape(format!("{} biases for {filters} filters", bias.len())));
    }
    conv_forward_raw(input.data(), len, width, kernels.data(), bias, ngram)
}

pub(crate) fn conv_forward_raw(
    x: &[f64],
    len: usize,
    width: usize,
    weights: &[f64],
    bias: &[f64],
    ngram: usize,
) -> Result<Tensor, NnError> {
    if ngram == 0 || ngram > len {
        return Err(NnError::Shape(format!(
            "kernel height {ngram} does not fit a sequence of length {len}"
        )));
    }
    let filters = bias.len();
    let span = ngram * width;
    let out_len = len - ngram + 1;
    if x.len() < len * width || weights.len() != filters * span {
        return Err(NnError::Shape("conv buffers do not match their dimensions".into()));
    }
    let mut out: Vec<f64> = (0..out_len).flat_map(|_| bias.iter().copied()).collect();
    // Window i is x[i*width .. i*width + span], so the unfolded input is a
    // strided view with row stride `width` and no copy is needed.
    // SAFETY: the largest index read from x is (out_len-1)*width + span-1 < len*width,
    // weights are read as a span×filters transpose of a filters×span buffer,
    // and out holds exactly out_len×filters elements.
    unsafe {
        matrixmultiply::dgemm(
            out_len,
            span,
            filters,
            1.0,
            x.as_ptr(),
            width as isize,
            1,
            weights.as_ptr(),
            1,
            span as isize,
            1.0,
            out.as_mut_ptr(),
            filters as isize,
            1,
        );
    }
    Tensor::new(vec![out_len, filters], out)
}

/// Maximum of a feature map and the first position attaining it.
pub fn global_max_pool(feature_map: &[f64]) -> Result<(f64, usize), NnError> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &v) in feature_map.iter().enumerate() {
        if best.is_none_or(|(m, _)| v > m) {
            best = Some((v, i));
        }
    }
    best.ok_or_else(|| NnError::Shape("global max pool over an empty feature map".into()))
}

/// `W x + b` for a `q × p` row-major weight matrix.
pub fn dense_forward(x: &[f64], weights: &[f64], bias: &[f64]) -> Result<Vec<f64>, NnError> {
    let q = bias.len();
    let p = x.len();
    if weights.len() != p * q {
        return Err(NnError::Shape(format!(
            "dense weights hold {} values, expected {q}×{p}",
            weights.len()
        )));
    }
    Ok((0..q)
        .map(|j| bias[j] + dot(&weights[j * p..(j + 1) * p], x))
        .collect())
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>, NnError> {
    if z.len() < 2 {
        return Err(NnError::Shape(format!("softmax needs at least 2 logits, got {}", z.len())));
    }
    if !z.iter().all(|v| v.is_finite()) {
        return Err(NnError::NonFinite("softmax input".into()));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Inverted dropout. Returns the output and the per-entry multiplier
/// (0 for dropped entries, `1/(1-rate)` for survivors).
pub fn dropout<R: Rng + ?Sized>(
    x: &[f64],
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    check_dropout_rate(rate)?;
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.to_vec(), vec![1.0; x.len()]));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = x
        .iter()
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale })
        .collect();
    let out = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((out, mask))
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<(), NnError> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(NnError::Config(format!("dropout rate {rate} outside [0, 1)")))
    }
}

/// Binary cross-entropy of a predicted SR probability `p` against `y ∈ {0, 1}`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`bce_loss`] with respect to `p`; zero where the clamp is active.
pub fn bce_grad(p: f64, y: f64) -> f64 {
    if !(BCE_EPSILON..=1.0 - BCE_EPSILON).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}

/// Mean BCE over a batch.
pub fn mean_bce(probabilities: &[f64], targets: &[f64]) -> f64 {
    if probabilities.is_empty() {
        return 0.0;
    }
    probabilities
        .iter()
        .zip(targets)
        .map(|(&p, &y)| bce_loss(p, y))
        .sum::<f64>()
        / probabilities.len() as f64
}
