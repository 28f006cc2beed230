//! Declarative specs and builders for the four classifier networks.
//!
//! Inputs are `L × d` document matrices. Every network ends in a 2-way
//! softmax whose index 1 is the SR class.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Conv, Dense, Layer, Network};

#[derive(Debug, Error)]
pub enum ArchitectureError {
    #[error("input length {len} is too short for {name}; minimum is {min}")]
    InputTooShort { name: ArchitectureKind, len: usize, min: usize },
    #[error("invalid architecture spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchitectureKind {
    Shallow,
    Deep,
    Alex,
    Alpha,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 4] = [
        ArchitectureKind::Shallow,
        ArchitectureKind::Deep,
        ArchitectureKind::Alex,
        ArchitectureKind::Alpha,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchitectureKind::Shallow => "shallow",
            ArchitectureKind::Deep => "deep",
            ArchitectureKind::Alex => "alex",
            ArchitectureKind::Alpha => "alpha",
        }
    }

    /// Parallel n-gram branches (shallow, deep) versus a sequential conv ladder.
    pub fn is_parallel(self) -> bool {
        matches!(self, ArchitectureKind::Shallow | ArchitectureKind::Deep)
    }

    /// Reference parameter count each variant is reported against.
    pub fn reference_params(self) -> usize {
        match self {
            ArchitectureKind::Shallow => 116_354,
            ArchitectureKind::Deep => 662_018,
            ArchitectureKind::Alex => 6_052_866,
            ArchitectureKind::Alpha => 100_946,
        }
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchitectureKind {
    type Err = ArchitectureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "shallow" => Ok(ArchitectureKind::Shallow),
            "deep" => Ok(ArchitectureKind::Deep),
            "alex" | "alexsrn" => Ok(ArchitectureKind::Alex),
            "alpha" | "alphasrn" => Ok(ArchitectureKind::Alpha),
            other => Err(ArchitectureError::Invalid(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub ngram: usize,
    pub filters: usize,
}

const fn k(ngram: usize, filters: usize) -> KernelSpec {
    KernelSpec { ngram, filters }
}

/// Everything needed to rebuild a network; embedded in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: ArchitectureKind,
    pub input_len: usize,
    pub embed_dim: usize,
    /// Parallel branches for shallow/deep, the sequential ladder for alex/alpha.
    pub kernel_plan: Vec<KernelSpec>,
    /// Deep only: the conv applied to each pooled branch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_conv: Option<KernelSpec>,
    /// Sequential builds: indices into `kernel_plan` followed by a max pool.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pool_after: Vec<usize>,
    /// Hidden dense widths before the 2-way head.
    pub fc_plan: Vec<usize>,
    pub dropout_rate: f64,
    pub pool_window: usize,
    pub seed: u64,
}

impl ArchitectureSpec {
    pub fn shallow(input_len: usize) -> Self {
        ArchitectureSpec {
            name: ArchitectureKind::Shallow,
            input_len,
            embed_dim: 100,
            kernel_plan: vec![k(1, 128), k(3, 128), k(5, 128)],
            second_conv: None,
            pool_after: Vec::new(),
            fc_plan: Vec::new(),
            dropout_rate: 0.2,
            pool_window: 2,
            seed: 0,
        }
    }

    pub fn deep(input_len: usize) -> Self {
        ArchitectureSpec {
            name: ArchitectureKind::Deep,
            second_conv: Some(k(3, 128)),
            ..Self::shallow(input_len)
        }
    }

    pub fn alex(input_len: usize) -> Self {
        ArchitectureSpec {
            name: ArchitectureKind::Alex,
            kernel_plan: vec![k(7, 96), k(5, 256), k(3, 384), k(3, 384), k(3, 256)],
            pool_after: vec![0, 1, 4],
            fc_plan: vec![512, 512],
            ..Self::shallow(input_len)
        }
    }

    pub fn alpha(input_len: usize) -> Self {
        ArchitectureSpec {
            name: ArchitectureKind::Alpha,
            kernel_plan: vec![k(7, 32), k(5, 64), k(3, 128), k(3, 64), k(3, 64)],
            pool_after: vec![0, 1],
            fc_plan: vec![128, 64, 32],
            ..Self::shallow(input_len)
        }
    }

    pub fn default_for(kind: ArchitectureKind, input_len: usize) -> Self {
        match kind {
            ArchitectureKind::Shallow => Self::shallow(input_len),
            ArchitectureKind::Deep => Self::deep(input_len),
            ArchitectureKind::Alex => Self::alex(input_len),
            ArchitectureKind::Alpha => Self::alpha(input_len),
        }
    }

    fn validate(&self) -> Result<(), ArchitectureError> {
        let bad = |m: String| Err(ArchitectureError::Invalid(m));
        if self.embed_dim == 0 {
            return bad("embed_dim must be at least 1".into());
        }
        if self.kernel_plan.is_empty() {
            return bad("kernel_plan is empty".into());
        }
        if self.kernel_plan.iter().any(|k| k.ngram == 0 || k.filters == 0) {
            return bad("kernel n-gram sizes and filter counts must be positive".into());
        }
        if self.fc_plan.contains(&0) {
            return bad("fc widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.pool_window == 0 {
            return bad("pool_window must be positive".into());
        }
        if self.name == ArchitectureKind::Deep && self.second_conv.is_none() {
            return bad("deep architecture needs second_conv".into());
        }
        if let Some(&i) = self.pool_after.iter().find(|&&i| i >= self.kernel_plan.len()) {
            return bad(format!("pool_after index {i} out of range"));
        }
        Ok(())
    }

    /// Sequence length left after the convolution stack, or `None` when some
    /// stage no longer fits.
    fn surviving_len(&self, len: usize) -> Option<usize> {
        let conv = |l: usize, n: usize| l.checked_sub(n).map(|r| r + 1).filter(|&r| r > 0);
        let pool = |l: usize| {
            let w = self.pool_window;
            (l >= w).then(|| (l - w) / w + 1)
        };
        if self.name.is_parallel() {
            let mut shortest = usize::MAX;
            for kern in &self.kernel_plan {
                let mut l = conv(len, kern.ngram)?;
                if let Some(second) = self.second_conv {
                    l = conv(pool(l)?, second.ngram)?;
                }
                shortest = shortest.min(l);
            }
            Some(shortest)
        } else {
            let mut l = len;
            for (i, kern) in self.kernel_plan.iter().enumerate() {
                l = conv(l, kern.ngram)?;
                if self.pool_after.contains(&i) {
                    l = pool(l)?;
                }
            }
            Some(l)
        }
    }

    /// Smallest input length the network accepts.
    pub fn min_input_len(&self) -> usize {
        (1..=1 << 16)
            .find(|&l| self.surviving_len(l).is_some())
            .unwrap_or(usize::MAX)
    }
}

/// Builds the network described by `spec` with weights drawn from `spec.seed`.
pub fn build(spec: &ArchitectureSpec) -> Result<Network, ArchitectureError> {
    spec.validate()?;
    let Some(final_len) = spec.surviving_len(spec.input_len) else {
        return Err(ArchitectureError::InputTooShort {
            name: spec.name,
            len: spec.input_len,
            min: spec.min_input_len(),
        });
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.embed_dim;
    let mut layers = Vec::new();

    let features = if spec.name.is_parallel() {
        let mut branches = Vec::new();
        let mut total = 0;
        for kern in &spec.kernel_plan {
            let mut branch = vec![Layer::Conv(Conv::new(kern.ngram, kern.filters, d, &mut rng)), Layer::Relu];
            let mut width = kern.filters;
            if let Some(second) = spec.second_conv {
                branch.push(Layer::MaxPool {
                    window: spec.pool_window,
                    stride: spec.pool_window,
                });
                branch.push(Layer::Conv(Conv::new(second.ngram, second.filters, width, &mut rng)));
                branch.push(Layer::Relu);
                width = second.filters;
            }
            branch.push(Layer::GlobalMaxPool);
            branch.push(Layer::Flatten);
            total += width;
            branches.push(branch);
        }
        layers.push(Layer::Concat(branches));
        layers.push(Layer::Dropout {
            rate: spec.dropout_rate,
        });
        total
    } else {
        let mut width = d;
        for (i, kern) in spec.kernel_plan.iter().enumerate() {
            layers.push(Layer::Conv(Conv::new(kern.ngram, kern.filters, width, &mut rng)));
            layers.push(Layer::Relu);
            if spec.pool_after.contains(&i) {
                layers.push(Layer::MaxPool {
                    window: spec.pool_window,
                    stride: spec.pool_window,
                });
            }
            width = kern.filters;
        }
        layers.push(Layer::Flatten);
        final_len * width
    };

    let mut inputs = features;
    for &width in &spec.fc_plan {
        layers.push(Layer::Dense(Dense::new(inputs, width, &mut rng)));
        layers.push(Layer::Relu);
        layers.push(Layer::Dropout {
            rate: spec.dropout_rate,
        });
        inputs = width;
    }
    layers.push(Layer::Dense(Dense::new(inputs, 2, &mut rng)));
    layers.push(Layer::Softmax);

    let net = Network::new(layers);
    debug_assert_eq!(
        net.output_shape(&[spec.input_len, d]).ok().as_deref(),
        Some(&[2usize][..])
    );
    Ok(net)
}

pub fn build_shallow(input_len: usize, embed_dim: usize, filters: usize) -> Result<Network, ArchitectureError> {
    let mut spec = ArchitectureSpec::shallow(input_len);
    spec.embed_dim = embed_dim;
    spec.kernel_plan.iter_mut().for_each(|k| k.filters = filters);
    build(&spec)
}

pub fn build_deep(
    input_len: usize,
    embed_dim: usize,
    filters: usize,
    second_conv_filters: usize,
) -> Result<Network, ArchitectureError> {
    let mut spec = ArchitectureSpec::deep(input_len);
    spec.embed_dim = embed_dim;
    spec.kernel_plan.iter_mut().for_each(|k| k.filters = filters);
    spec.second_conv = Some(k(3, second_conv_filters));
    build(&spec)
}

pub fn build_alex(input_len: usize, embed_dim: usize) -> Result<Network, ArchitectureError> {
    let mut spec = ArchitectureSpec::alex(input_len);
    spec.embed_dim = embed_dim;
    build(&spec)
}

pub fn build_alpha(input_len: usize, embed_dim: usize) -> Result<Network, ArchitectureError> {
    let mut spec = ArchitectureSpec::alpha(input_len);
    spec.embed_dim = embed_dim;
    build(&spec)
}

pub fn count_params(net: &Network) -> usize {
    net.count_params()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{check_network_gradients, GradCheckConfig, Tensor};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_input(len: usize, dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::new(vec![len, dim], (0..len * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn shallow_param_count() {
        for len in [5, 50, 200] {
            assert_eq!(count_params(&build_shallow(len, 100, 128).unwrap()), 116_354);
        }
        // 128·(100+300+500) + 3·128 conv parameters, 384·2 + 2 for the head
        assert_eq!(128 * 900 + 3 * 128 + 384 * 2 + 2, 116_354);
    }

    #[test]
    fn minimum_lengths() {
        assert_eq!(ArchitectureSpec::shallow(0).min_input_len(), 5);
        assert_eq!(ArchitectureSpec::deep(0).min_input_len(), 10);
        assert_eq!(ArchitectureSpec::alex(0).min_input_len(), 46);
        assert_eq!(ArchitectureSpec::alpha(0).min_input_len(), 42);
        for kind in ArchitectureKind::ALL {
            let spec = ArchitectureSpec::default_for(kind, 0);
            let min = spec.min_input_len();
            let short = ArchitectureSpec { input_len: min - 1, ..spec.clone() };
            assert!(matches!(build(&short), Err(ArchitectureError::InputTooShort { .. })));
            assert!(build(&ArchitectureSpec { input_len: min, ..spec }).is_ok());
        }
    }

    #[test]
    fn alpha_filter_ladder() {
        let spec = ArchitectureSpec::alpha(64);
        let filters: Vec<usize> = spec.kernel_plan.iter().map(|k| k.filters).collect();
        assert_eq!(&filters[..4], [32, 64, 128, 64]);
        let ngrams: Vec<usize> = spec.kernel_plan.iter().map(|k| k.ngram).collect();
        assert_eq!(ngrams, [7, 5, 3, 3, 3]);
    }

    #[test]
    fn outputs_are_probability_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in ArchitectureKind::ALL {
            let mut spec = ArchitectureSpec::default_for(kind, 0);
            spec.input_len = spec.min_input_len() + 3;
            spec.embed_dim = 12;
            let net = build(&spec).unwrap();
            let out = net.infer(&random_input(spec.input_len, 12, &mut rng)).unwrap();
            assert_eq!(out.shape(), [2]);
            assert_abs_diff_eq!(out.data().iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            assert!(matches!(net.layers().last(), Some(Layer::Softmax)));
        }
    }

    #[test]
    fn deep_without_second_conv_is_shallow_plus_pooling() {
        let deep = build(&ArchitectureSpec::deep(30)).unwrap();
        let shallow = build(&ArchitectureSpec::shallow(30)).unwrap();
        let (Layer::Concat(db), Layer::Concat(sb)) = (&deep.layers()[0], &shallow.layers()[0]) else {
            panic!("parallel builds start with a concat");
        };
        for (d, s) in db.iter().zip(sb) {
            let stripped: Vec<&str> = d
                .iter()
                .enumerate()
                .filter(|(i, _)| !(2..=4).contains(i))
                .map(|(_, l)| l.kind())
                .collect();
            assert_eq!(stripped, s.iter().map(Layer::kind).collect::<Vec<_>>());
            assert_eq!(d[2].kind(), Layer::MaxPool { window: 2, stride: 2 }.kind());
        }
        let tail = |n: &Network| n.layers()[1..].iter().map(Layer::kind).collect::<Vec<_>>();
        assert_eq!(tail(&deep), tail(&shallow));
    }

    #[test]
    fn builders_are_pure() {
        let spec = ArchitectureSpec::alpha(50);
        assert_eq!(build(&spec).unwrap(), build(&spec).unwrap());
        let other = build(&ArchitectureSpec { seed: 9, ..spec.clone() }).unwrap();
        let base = build(&spec).unwrap();
        assert_ne!(base, other);
        let shapes = |n: &Network| n.params().iter().map(|p| p.len()).collect::<Vec<_>>();
        assert_eq!(shapes(&base), shapes(&other));
    }

    #[test]
    fn small_builds_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in ArchitectureKind::ALL {
            let mut spec = ArchitectureSpec::default_for(kind, 0);
            spec.embed_dim = 6;
            spec.kernel_plan.iter_mut().for_each(|k| k.filters = 4);
            if let Some(s) = spec.second_conv.as_mut() {
                s.filters = 3;
            }
            spec.fc_plan.iter_mut().for_each(|w| *w = 5);
            spec.input_len = spec.min_input_len() + 2;
            let net = build(&spec).unwrap();
            let xs: Vec<Tensor> = (0..3).map(|_| random_input(spec.input_len, 6, &mut rng)).collect();
            let refs: Vec<&Tensor> = xs.iter().collect();
            let cfg = GradCheckConfig {
                max_coords_per_tensor: 16,
                ..Default::default()
            };
            let report = check_network_gradients(&net, &refs, &[1.0, 0.0, 1.0], &cfg).unwrap();
            assert!(report.checked > 0);
            assert!(report.max_relative_error <= 1e-4, "{kind}: {report:?}");
        }
    }

    #[test]
    fn spec_json_round_trip() {
        for kind in ArchitectureKind::ALL {
            let spec = ArchitectureSpec::default_for(kind, 200);
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<ArchitectureSpec>(&json).unwrap(), spec);
        }
        assert_eq!("AlphaSRN".parse::<ArchitectureKind>().unwrap(), ArchitectureKind::Alpha);
    }
}
