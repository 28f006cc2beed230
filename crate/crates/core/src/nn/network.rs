use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{backward_sequence, check_finite, params_in};
use super::ops::{bce_grad, bce_loss};
use super::{GradientSet, Layer, LayerCache, Mode, NnError, Tensor};

/// Index of the security-related class in the softmax output.
pub const SR_CLASS: usize = 1;
pub const NONSR_CLASS: usize = 0;

/// An ordered stack of layers ending, for classifiers, in a 2-way softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Output of a forward pass together with the per-layer caches.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub output: Tensor,
    caches: Vec<LayerCache>,
}

impl ForwardTrace {
    /// Hash of the ReLU activity pattern and pooling argmax choices.
    pub fn pattern_signature(&self) -> u64 {
        use std::hash::Hasher;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for cache in &self.caches {
            cache.hash_pattern(&mut h);
        }
        h.finish()
    }
}

#[derive(Debug, Clone)]
pub struct BatchGradients {
    /// Mean BCE over the batch.
    pub loss: f64,
    /// SR probability per sample.
    pub probabilities: Vec<f64>,
    /// Gradient of the mean loss.
    pub gradients: GradientSet,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let mut shape = input.to_vec();
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(shape)
    }

    pub fn forward(
        &self,
        input: &Tensor,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardTrace, NnError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = input.clone();
        for layer in &self.layers {
            let (next, cache) = layer.forward(h, mode, rng)?;
            check_finite(&next, layer)?;
            caches.push(cache);
            h = next;
        }
        Ok(ForwardTrace { output: h, caches })
    }

    /// Inference-mode output (dropout disabled).
    pub fn infer(&self, input: &Tensor) -> Result<Tensor, NnError> {
        // the RNG is never consulted in inference mode
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(input, Mode::Infer, &mut rng)?.output)
    }

    /// Probability of the SR class for one input, in inference mode.
    pub fn predict_sr(&self, input: &Tensor) -> Result<f64, NnError> {
        let out = self.infer(input)?;
        sr_probability(&out)
    }

    /// Back-propagates `grad_output` through a recorded trace, adding
    /// parameter gradients into `grads`. Returns the input gradient when asked.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        grad_output: Tensor,
        grads: &mut GradientSet,
        need_input: bool,
    ) -> Result<Option<Tensor>, NnError> {
        if grads.tensors.len() != params_in(&self.layers) {
            return Err(NnError::Shape("gradient set does not match the network".into()));
        }
        backward_sequence(&self.layers, &trace.caches, grad_output, &mut grads.tensors, need_input)
    }

    pub fn zero_gradients(&self) -> GradientSet {
        GradientSet::zeros_like(&self.params())
    }

    /// Mean-BCE loss and exact gradients over a batch.
    ///
    /// Each sample's forward pass draws its dropout masks from `rng` in
    /// order; the backward pass reuses them.
    pub fn batch_gradients(
        &self,
        inputs: &[&Tensor],
        targets: &[f64],
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<BatchGradients, NnError> {
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(NnError::Shape(format!(
                "{} inputs for {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let mut gradients = self.zero_gradients();
        let mut total = 0.0;
        let mut probabilities = Vec::with_capacity(inputs.len());
        for (input, &y) in inputs.iter().zip(targets) {
            let trace = self.forward(input, mode, rng)?;
            let p = sr_probability(&trace.output)?;
            total += bce_loss(p, y);
            probabilities.push(p);
            let mut g = vec![0.0; 2];
            g[SR_CLASS] = bce_grad(p, y);
            self.backward_into(&trace, Tensor::vector(g), &mut gradients, false)?;
        }
        let n = inputs.len() as f64;
        gradients.scale(1.0 / n);
        if !gradients.is_finite() {
            return Err(NnError::NonFinite("gradients".into()));
        }
        Ok(BatchGradients {
            loss: total / n,
            probabilities,
            gradients,
        })
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            layer.collect_params(&mut out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            layer.collect_params_mut(&mut out);
        }
        out
    }

    /// Total number of weights and biases.
    pub fn count_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Sets the rate of every dropout layer, including those inside branches.
    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<(), NnError> {
        super::ops::check_dropout_rate(rate)?;
        fn visit(layers: &mut [Layer], rate: f64) {
            for layer in layers {
                match layer {
                    Layer::Dropout { rate: r } => *r = rate,
                    Layer::Concat(branches) => branches.iter_mut().for_each(|b| visit(b, rate)),
                    _ => {}
                }
            }
        }
        visit(&mut self.layers, rate);
        Ok(())
    }

    pub fn summary(&self) -> String {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{i:>2}: {}", l.describe()))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub(crate) fn sr_probability(output: &Tensor) -> Result<f64, NnError> {
    match output.shape() {
        [2] => Ok(output.data()[SR_CLASS]),
        other => Err(NnError::Shape(format!(
            "classifier output must be a 2-way probability vector, got {other:?}"
        ))),
    }
}
