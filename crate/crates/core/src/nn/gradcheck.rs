//! Central finite-difference checks of the analytic gradients.
//!
//! Piecewise-linear layers (ReLU, max pooling) are not differentiable where
//! the routing changes. A coordinate is skipped when the activation pattern
//! at `θ ± h` differs from the pattern at `θ`.

use std::hash::Hasher;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::sr_probability;
use super::ops::bce_loss;
use super::{Layer, LayerCache, Mode, Network, NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Coordinates checked per parameter tensor; larger tensors are sampled.
    pub max_coords_per_tensor: usize,
    /// Seed for dropout masks (identical on every pass) and coordinate sampling.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            max_coords_per_tensor: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_relative_error: f64,
    /// Location of the worst coordinate, e.g. `param[3][17]` or `input[5]`.
    pub worst: Option<String>,
}

impl GradCheckReport {
    fn record(&mut self, analytic: f64, numeric: f64, location: impl FnOnce() -> String) {
        self.checked += 1;
        let err = relative_error(analytic, numeric);
        if err > self.max_relative_error || self.worst.is_none() {
            self.max_relative_error = self.max_relative_error.max(err);
            self.worst = Some(location());
        }
    }

    fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        if other.max_relative_error > self.max_relative_error {
            self.max_relative_error = other.max_relative_error;
            self.worst = other.worst;
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn coordinates(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut idx = sample(rng, len, max).into_vec();
        idx.sort_unstable();
        idx
    }
}

fn cache_signature(cache: &LayerCache) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    cache.hash_pattern(&mut h);
    h.finish()
}

/// Checks one layer under the objective `Σ c_i y_i` with random weights `c`,
/// covering the input gradient and every parameter gradient.
pub fn check_layer_gradients(
    layer: &Layer,
    input: &Tensor,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, NnError> {
    let mut pick = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let eval = |l: &Layer, x: &Tensor| -> Result<(Tensor, LayerCache), NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        l.forward(x.clone(), Mode::Train, &mut rng)
    };
    let (y, cache) = eval(layer, input)?;
    let base_sig = cache_signature(&cache);
    let c: Vec<f64> = (0..y.len()).map(|_| pick.gen_range(-1.0..1.0)).collect();
    let objective = |t: &Tensor| -> f64 { t.data().iter().zip(&c).map(|(a, b)| a * b).sum() };

    let mut grads: Vec<Vec<f64>> = {
        let mut p = Vec::new();
        layer.collect_params(&mut p);
        p.iter().map(|t| vec![0.0; t.len()]).collect()
    };
    let upstream = Tensor::new(y.shape().to_vec(), c.clone())?;
    let dx = layer
        .backward(&cache, upstream, &mut grads, true)?
        .ok_or_else(|| NnError::Shape("layer returned no input gradient".into()))?;

    let h = config.step;
    let mut report = GradCheckReport::default();

    for i in coordinates(input.len(), config.max_coords_per_tensor, &mut pick) {
        let mut plus = input.clone();
        plus.data_mut()[i] += h;
        let mut minus = input.clone();
        minus.data_mut()[i] -= h;
        let (yp, cp) = eval(layer, &plus)?;
        let (ym, cm) = eval(layer, &minus)?;
        if cache_signature(&cp) != base_sig || cache_signature(&cm) != base_sig {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (objective(&yp) - objective(&ym)) / (2.0 * h);
        report.record(dx.data()[i], numeric, || format!("input[{i}]"));
    }

    for (k, g) in grads.iter().enumerate() {
        for i in coordinates(g.len(), config.max_coords_per_tensor, &mut pick) {
            let shifted = |delta: f64| -> Result<(Tensor, LayerCache), NnError> {
                let mut l = layer.clone();
                {
                    let mut params = Vec::new();
                    l.collect_params_mut(&mut params);
                    params[k][i] += delta;
                }
                eval(&l, input)
            };
            let (yp, cp) = shifted(h)?;
            let (ym, cm) = shifted(-h)?;
            if cache_signature(&cp) != base_sig || cache_signature(&cm) != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (objective(&yp) - objective(&ym)) / (2.0 * h);
            report.record(g[i], numeric, || format!("param[{k}][{i}]"));
        }
    }
    Ok(report)
}

/// Mean BCE of a network and the combined activation signature, with the
/// dropout RNG reseeded so every call draws the same masks.
fn network_loss(
    net: &Network,
    inputs: &[&Tensor],
    targets: &[f64],
    seed: u64,
) -> Result<(f64, u64), NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = std::collections::hash_map::DefaultHasher::new();
    let mut total = 0.0;
    for (x, &y) in inputs.iter().zip(targets) {
        let trace = net.forward(x, Mode::Train, &mut rng)?;
        h.write_u64(trace.pattern_signature());
        total += bce_loss(sr_probability(&trace.output)?, y);
    }
    Ok((total / inputs.len() as f64, h.finish()))
}

/// Checks the mean-BCE parameter gradients of a whole classifier.
pub fn check_network_gradients(
    net: &Network,
    inputs: &[&Tensor],
    targets: &[f64],
    config: &GradCheckConfig,
) -> Result<GradCheckReport, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let analytic = net.batch_gradients(inputs, targets, Mode::Train, &mut rng)?;
    let (_, base_sig) = network_loss(net, inputs, targets, config.seed)?;
    let mut pick = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let h = config.step;
    let mut report = GradCheckReport::default();
    let mut probe = net.clone();

    for (k, g) in analytic.gradients.tensors.iter().enumerate() {
        let mut part = GradCheckReport::default();
        for i in coordinates(g.len(), config.max_coords_per_tensor, &mut pick) {
            let original = probe.params()[k][i];
            probe.params_mut()[k][i] = original + h;
            let plus = network_loss(&probe, inputs, targets, config.seed);
            probe.params_mut()[k][i] = original - h;
            let minus = network_loss(&probe, inputs, targets, config.seed);
            probe.params_mut()[k][i] = original;
            let ((lp, sp), (lm, sm)) = (plus?, minus?);
            if sp != base_sig || sm != base_sig {
                part.skipped_kinks += 1;
                continue;
            }
            part.record(g[i], (lp - lm) / (2.0 * h), || format!("param[{k}][{i}]"));
        }
        report.merge(part);
    }
    Ok(report)
}
