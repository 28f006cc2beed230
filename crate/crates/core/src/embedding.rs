//! Skip-gram word embeddings with negative sampling, and document matrices.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Tensor;
use crate::preprocess::{build_vocabulary, PreprocessError, TokenSequence, Vocabulary};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding corpus is empty")]
    EmptyCorpus,
    #[error("invalid embedding configuration: {0}")]
    Config(String),
    #[error("token {0:?} is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("embedding file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("non-finite embedding weights after epoch {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Vocabulary(#[from] PreprocessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 1,
            seed: 0,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let bad = |m: &str| Err(EmbeddingError::Config(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.min_count == 0 {
            return bad("min_count must be at least 1");
        }
        Ok(())
    }
}

/// Settings a model was trained with; absent for models loaded from text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    vocabulary: Vocabulary,
    /// Row-major `|V| × dim`.
    vectors: Vec<f64>,
    dim: usize,
    meta: Option<TrainingMeta>,
}

impl PartialEq for EmbeddingModel {
    fn eq(&self, other: &Self) -> bool {
        self.vocabulary == other.vocabulary && self.dim == other.dim && self.vectors == other.vectors
    }
}

impl EmbeddingModel {
    pub fn new(vocabulary: Vocabulary, dim: usize, vectors: Vec<f64>) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::Config("dim must be at least 1".into()));
        }
        if vectors.len() != vocabulary.len() * dim {
            return Err(EmbeddingError::Config(format!(
                "{} values for {} tokens of dimension {dim}",
                vectors.len(),
                vocabulary.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::Config("embedding contains non-finite values".into()));
        }
        Ok(EmbeddingModel {
            vocabulary,
            vectors,
            dim,
            meta: None,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn meta(&self) -> Option<&TrainingMeta> {
        self.meta.as_ref()
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn vector_of(&self, token: &str) -> Option<&[f64]> {
        self.vocabulary.index_of(token).map(|i| self.vector(i))
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }
}

/// Skip-gram (center, context) index pairs, position by position.
pub fn generate_pairs(indices: &[usize], window: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, &center) in indices.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(indices.len().saturating_sub(1));
        for j in lo..=hi {
            if j != i {
                pairs.push((center, indices[j]));
            }
        }
    }
    pairs
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(x)` without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Loss and gradients of one negative-sampling term.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnsGradients {
    pub loss: f64,
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    /// One row per negative, in the order given.
    pub negatives: Vec<Vec<f64>>,
}

/// `-ln σ(u_o·v) - Σ_k ln σ(-u_k·v)` for center vector `v`, context output
/// vector `u_o` and negative output vectors `u_k`.
pub fn sgns_gradients(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> SgnsGradients {
    let dim = center.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let s = dot(context, center);
    let mut loss = neg_log_sigmoid(s);
    let g = sigmoid(s) - 1.0;
    let mut d_center: Vec<f64> = context.iter().map(|u| g * u).collect();
    let d_context: Vec<f64> = center.iter().map(|v| g * v).collect();
    let mut d_negs = Vec::with_capacity(negatives.len());
    for &u in negatives {
        let s = dot(u, center);
        loss += neg_log_sigmoid(-s);
        let g = sigmoid(s);
        for k in 0..dim {
            d_center[k] += g * u[k];
        }
        d_negs.push(center.iter().map(|v| g * v).collect());
    }
    SgnsGradients {
        loss,
        center: d_center,
        context: d_context,
        negatives: d_negs,
    }
}

/// Trains skip-gram embeddings by plain SGD with a linearly decaying rate.
///
/// The input (center) table is returned as the embedding.
pub fn train_skipgram(
    corpus: &[TokenSequence],
    config: &SkipGramConfig,
) -> Result<EmbeddingModel, EmbeddingError> {
    config.validate()?;
    if corpus.iter().all(|s| s.tokens.is_empty()) {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let vocabulary = build_vocabulary(corpus, config.min_count)?;
    if vocabulary.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let v = vocabulary.len();
    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 0.5 / dim as f64;
    let mut input: Vec<f64> = (0..v * dim).map(|_| rng.gen_range(-bound..bound)).collect();
    let mut output = vec![0.0; v * dim];

    let counts = vocabulary.counts().expect("freshly built vocabulary has counts");
    let noise = WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75)))
        .expect("counts are positive");

    let encoded: Vec<Vec<usize>> = corpus.iter().map(|s| vocabulary.encode(&s.tokens)).collect();
    let words_per_epoch: usize = encoded.iter().map(Vec::len).sum();
    let total = (words_per_epoch * config.epochs) as f64 + 1.0;
    let mut processed = 0usize;
    let mut neu = vec![0.0; dim];
    let mut negs = Vec::with_capacity(config.negatives);

    for epoch in 1..=config.epochs {
        for sentence in &encoded {
            for (i, &center) in sentence.iter().enumerate() {
                let lr = config.learning_rate * (1.0 - processed as f64 / total).max(1e-4);
                processed += 1;
                let lo = i.saturating_sub(config.window);
                let hi = (i + config.window).min(sentence.len() - 1);
                for (j, &context) in sentence.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    negs.clear();
                    for _ in 0..config.negatives {
                        let n = noise.sample(&mut rng);
                        if n != context {
                            negs.push(n);
                        }
                    }
                    sgd_pair(&mut input, &mut output, dim, center, context, &negs, lr, &mut neu);
                }
            }
        }
        if input.iter().chain(&output).any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite(epoch));
        }
    }

    let mut model = EmbeddingModel::new(vocabulary, dim, input)?;
    model.meta = Some(TrainingMeta {
        window: config.window,
        negatives: config.negatives,
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        seed: config.seed,
    });
    Ok(model)
}

/// One SGD step on a single negative-sampling term. Equivalent to applying
/// [`sgns_gradients`] to each output row in turn, without allocating.
#[allow(clippy::too_many_arguments)]
fn sgd_pair(
    input: &mut [f64],
    output: &mut [f64],
    dim: usize,
    center: usize,
    context: usize,
    negatives: &[usize],
    lr: f64,
    neu: &mut [f64],
) {
    neu.iter_mut().for_each(|x| *x = 0.0);
    let v = &input[center * dim..(center + 1) * dim];
    for (target, label) in std::iter::once((context, 1.0)).chain(negatives.iter().map(|&n| (n, 0.0))) {
        let u = &mut output[target * dim..(target + 1) * dim];
        let s: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        // descent step on -ln σ(±s)
        let g = (label - sigmoid(s)) * lr;
        for k in 0..dim {
            neu[k] += g * u[k];
            u[k] += g * v[k];
        }
    }
    let v = &mut input[center * dim..(center + 1) * dim];
    for k in 0..dim {
        v[k] += neu[k];
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Top-`k` tokens by cosine similarity, excluding `token` itself.
pub fn nearest_neighbors(
    model: &EmbeddingModel,
    token: &str,
    k: usize,
) -> Result<Vec<(String, f64)>, EmbeddingError> {
    if k == 0 {
        return Err(EmbeddingError::Config("k must be at least 1".into()));
    }
    let q = model
        .vocabulary
        .index_of(token)
        .ok_or_else(|| EmbeddingError::OutOfVocabulary(token.to_string()))?;
    let query = model.vector(q);
    let mut scored: Vec<(usize, f64)> = (0..model.vocabulary.len())
        .filter(|&i| i != q)
        .map(|i| (i, cosine(query, model.vector(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(i, s)| (model.vocabulary.token(i).unwrap().to_string(), s))
        .collect())
}

/// Fixed-length `max_len × dim` input matrix for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentMatrix {
    pub doc_id: String,
    pub rows: Tensor,
    pub valid_rows: usize,
    /// Set when no token of the document was in the vocabulary.
    pub empty: bool,
}

pub fn vectorize_document(model: &EmbeddingModel, seq: &TokenSequence, max_len: usize) -> DocumentMatrix {
    let dim = model.dim;
    let mut data = vec![0.0; max_len * dim];
    let mut valid = 0;
    for index in seq.tokens.iter().filter_map(|t| model.vocabulary.index_of(t)) {
        if valid == max_len {
            break;
        }
        data[valid * dim..(valid + 1) * dim].copy_from_slice(model.vector(index));
        valid += 1;
    }
    if valid == 0 {
        log::warn!("document {} has no in-vocabulary tokens", seq.doc_id);
    }
    DocumentMatrix {
        doc_id: seq.doc_id.clone(),
        rows: Tensor::new(vec![max_len, dim], data).expect("sized above"),
        valid_rows: valid,
        empty: valid == 0,
    }
}

/// Writes the text format: a `<vocab_size> <dim>` header, then one
/// `<token> <v1> ... <v_dim>` line per token in index order.
pub fn write_embeddings<W: Write>(model: &EmbeddingModel, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{} {}", model.vocabulary.len(), model.dim)?;
    let mut line = String::new();
    for (i, token) in model.vocabulary.tokens().iter().enumerate() {
        line.clear();
        line.push_str(token);
        for x in model.vector(i) {
            // `{}` prints the shortest string that parses back to the same f64
            write!(line, " {x}").unwrap();
        }
        writeln!(out, "{line}")?;
    }
    out.flush()
}

pub fn read_embeddings<R: BufRead>(reader: R) -> Result<EmbeddingModel, EmbeddingError> {
    let fmt = |line: usize, message: String| EmbeddingError::Format { line, message };
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(l) => l?,
        None => return Err(fmt(1, "empty file, expected `<vocab_size> <dim>` header".into())),
    };
    let parts: Vec<&str> = header.split_whitespace().collect();
    let (size, dim) = match parts.as_slice() {
        [a, b] => match (a.parse::<usize>(), b.parse::<usize>()) {
            (Ok(a), Ok(b)) if b > 0 => (a, b),
            _ => return Err(fmt(1, format!("bad header {header:?}"))),
        },
        _ => return Err(fmt(1, format!("bad header {header:?}"))),
    };
    let mut tokens = Vec::with_capacity(size);
    let mut vectors = Vec::with_capacity(size * dim);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or_default();
        let before = vectors.len();
        for f in fields {
            let x: f64 = f
                .parse()
                .map_err(|_| fmt(line_no, format!("invalid number {f:?}")))?;
            if !x.is_finite() {
                return Err(fmt(line_no, format!("non-finite value {f:?}")));
            }
            vectors.push(x);
        }
        let got = vectors.len() - before;
        if got != dim {
            return Err(fmt(line_no, format!("expected {dim} values for {token:?}, found {got}")));
        }
        tokens.push(token.to_string());
    }
    if tokens.len() != size {
        return Err(fmt(
            tokens.len() + 1,
            format!("header announces {size} tokens, file has {}", tokens.len()),
        ));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = tokens.iter().position(|t| !seen.insert(t.as_str())) {
        return Err(fmt(dup + 2, format!("duplicate token {:?}", tokens[dup])));
    }
    EmbeddingModel::new(Vocabulary::from_tokens(tokens), dim, vectors)
}

pub fn save_embeddings(model: &EmbeddingModel, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
    let mut buf = Vec::new();
    write_embeddings(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingModel, EmbeddingError> {
    read_embeddings(BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn seq(tokens: &[&str]) -> TokenSequence {
        TokenSequence {
            doc_id: "d".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn toy_model(tokens: &[&str], dim: usize, vectors: Vec<f64>) -> EmbeddingModel {
        let vocab = Vocabulary::from_tokens(tokens.iter().map(|s| s.to_string()).collect());
        EmbeddingModel::new(vocab, dim, vectors).unwrap()
    }

    #[test]
    fn pair_examples() {
        assert_eq!(generate_pairs(&[0, 1, 2], 1), [(0, 1), (1, 0), (1, 2), (2, 1)]);
        assert!(generate_pairs(&[0], 3).is_empty());
        assert!(generate_pairs(&[], 3).is_empty());
        assert_eq!(
            generate_pairs(&[0, 1, 2], 2),
            [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
        );
    }

    #[test]
    fn sgns_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-5;
        for _ in 0..100 {
            let dim = rng.gen_range(1..12);
            let k = rng.gen_range(0..6);
            let mut r = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
            let v = r(dim);
            let u = r(dim);
            let negs: Vec<Vec<f64>> = (0..k).map(|_| r(dim)).collect();
            let loss = |v: &[f64], u: &[f64], negs: &[Vec<f64>]| {
                let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
                sgns_gradients(v, u, &refs).loss
            };
            let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
            let g = sgns_gradients(&v, &u, &refs);
            let check = |a: f64, n: f64| {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                assert!(rel <= 1e-4, "analytic {a} numeric {n}");
            };
            for i in 0..dim {
                let (mut p, mut m) = (v.clone(), v.clone());
                p[i] += h;
                m[i] -= h;
                check(g.center[i], (loss(&p, &u, &negs) - loss(&m, &u, &negs)) / (2.0 * h));
                let (mut p, mut m) = (u.clone(), u.clone());
                p[i] += h;
                m[i] -= h;
                check(g.context[i], (loss(&v, &p, &negs) - loss(&v, &m, &negs)) / (2.0 * h));
                for n in 0..k {
                    let (mut p, mut m) = (negs.clone(), negs.clone());
                    p[n][i] += h;
                    m[n][i] -= h;
                    check(g.negatives[n][i], (loss(&v, &u, &p) - loss(&v, &u, &m)) / (2.0 * h));
                }
            }
        }
    }

    #[test]
    fn sgd_pair_matches_gradient_step() {
        let dim = 3;
        let mut input = vec![0.1, -0.2, 0.3, 0.0, 0.0, 0.0];
        let mut output = vec![0.2, 0.1, -0.1, -0.3, 0.4, 0.05];
        let lr = 0.1;
        // context 0, one negative 1, center 0: distinct rows so the step is exact
        let v = input[0..3].to_vec();
        let g = sgns_gradients(&v, &output[0..3], &[&output[3..6]]);
        let expect_v: Vec<f64> = (0..3).map(|k| v[k] - lr * g.center[k]).collect();
        let expect_u: Vec<f64> = (0..3).map(|k| output[k] - lr * g.context[k]).collect();
        let mut neu = vec![0.0; dim];
        sgd_pair(&mut input, &mut output, dim, 0, 0, &[1], lr, &mut neu);
        for k in 0..3 {
            assert_abs_diff_eq!(input[k], expect_v[k], epsilon = 1e-15);
            assert_abs_diff_eq!(output[k], expect_u[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn planted_cooccurrence() {
        let corpus: Vec<TokenSequence> = (0..1000).map(|_| seq(&["alpha", "beta"])).collect();
        let cfg = SkipGramConfig {
            window: 1,
            ..Default::default()
        };
        let model = train_skipgram(&corpus, &cfg).unwrap();
        assert_eq!(model.dim(), 100);
        assert_eq!(nearest_neighbors(&model, "alpha", 1).unwrap()[0].0, "beta");
    }

    #[test]
    fn shared_contexts_make_neighbors() {
        // alpha/gamma share contexts {beta, delta}; xray/yank share {kilo, lima}
        let pairs = [
            ["alpha", "beta"], ["gamma", "beta"], ["alpha", "delta"], ["gamma", "delta"],
            ["xray", "kilo"], ["yank", "kilo"], ["xray", "lima"], ["yank", "lima"],
        ];
        let corpus: Vec<TokenSequence> = (0..200).flat_map(|_| pairs.iter().map(|p| seq(p))).collect();
        for seed in 0..3 {
            let cfg = SkipGramConfig { dim: 20, window: 1, seed, ..Default::default() };
            let model = train_skipgram(&corpus, &cfg).unwrap();
            assert_eq!(nearest_neighbors(&model, "alpha", 1).unwrap()[0].0, "gamma");
            assert_eq!(nearest_neighbors(&model, "yank", 1).unwrap()[0].0, "xray");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = vec![seq(&["a", "b", "c", "a", "d"]), seq(&["c", "d", "e", "b"])];
        let cfg = SkipGramConfig {
            dim: 8,
            seed: 3,
            ..Default::default()
        };
        let a = train_skipgram(&corpus, &cfg).unwrap();
        let b = train_skipgram(&corpus, &cfg).unwrap();
        assert_eq!(a.vectors(), b.vectors());
        let c = train_skipgram(&corpus, &SkipGramConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a.vectors(), c.vectors());
    }

    #[test]
    fn training_errors() {
        assert!(matches!(
            train_skipgram(&[], &SkipGramConfig::default()),
            Err(EmbeddingError::EmptyCorpus)
        ));
        assert!(matches!(
            train_skipgram(&[seq(&[])], &SkipGramConfig::default()),
            Err(EmbeddingError::EmptyCorpus)
        ));
        let cfg = SkipGramConfig { dim: 0, ..Default::default() };
        assert!(matches!(train_skipgram(&[seq(&["a"])], &cfg), Err(EmbeddingError::Config(_))));
    }

    #[test]
    fn neighbor_examples() {
        let m = toy_model(
            &["a", "b", "c", "d"],
            2,
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0],
        );
        let nn = nearest_neighbors(&m, "a", 10).unwrap();
        assert_eq!(nn.len(), 3);
        assert_eq!(nn[0].0, "c");
        assert_abs_diff_eq!(nn[0].1, 1.0, epsilon = 1e-9);
        assert_eq!(nn[2].0, "b");
        assert_abs_diff_eq!(nn[2].1, 0.0, epsilon = 1e-9);
        match nearest_neighbors(&m, "zzz", 1) {
            Err(EmbeddingError::OutOfVocabulary(t)) => assert_eq!(t, "zzz"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn vectorize_examples() {
        let tokens: Vec<String> = (0..8).map(|i| format!("t{i}")).collect();
        let vocab = Vocabulary::from_tokens(tokens.clone());
        let vectors: Vec<f64> = (0..8 * 100).map(|i| i as f64 + 1.0).collect();
        let m = EmbeddingModel::new(vocab, 100, vectors).unwrap();

        let d = vectorize_document(&m, &seq(&["t0", "oov", "t1", "t2"]), 5);
        assert_eq!(d.rows.shape(), [5, 100]);
        assert_eq!(d.valid_rows, 3);
        assert!(d.rows.data()[300..].iter().all(|&x| x == 0.0));
        assert_eq!(&d.rows.data()[..100], m.vector(0));
        assert_eq!(&d.rows.data()[100..200], m.vector(1));

        let long: Vec<&str> = tokens.iter().take(7).map(String::as_str).collect();
        let d = vectorize_document(&m, &seq(&long), 5);
        assert_eq!(d.valid_rows, 5);
        assert_eq!(&d.rows.data()[400..], m.vector(4));

        let d = vectorize_document(&m, &seq(&["x", "y"]), 4);
        assert!(d.empty);
        assert_eq!(d.valid_rows, 0);
        assert!(d.rows.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn text_round_trip() {
        let m = toy_model(
            &["foo", "bar", "baz"],
            4,
            vec![0.1, 1e-300, -3.5, 2.0 / 3.0, 1.0, 2.0, 3.0, 4.0, -0.0, 5e10, 7.25, -1e-7],
        );
        let mut buf = Vec::new();
        write_embeddings(&m, &mut buf).unwrap();
        let back = read_embeddings(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn format_errors_name_the_line() {
        let mut text = String::from("2 100\n");
        text.push_str(&format!("a{}\n", " 0.5".repeat(100)));
        text.push_str(&format!("b{}\n", " 0.5".repeat(99)));
        match read_embeddings(text.as_bytes()) {
            Err(EmbeddingError::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_embeddings(&b""[..]), Err(EmbeddingError::Format { line: 1, .. })));
        assert!(matches!(
            read_embeddings(&b"3 2\na 1 2\n"[..]),
            Err(EmbeddingError::Format { .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip_preserves_neighbor_ranking(
            values in proptest::collection::vec(-10.0f64..10.0, 6 * 5)
        ) {
            let names = ["a", "b", "c", "d", "e", "f"];
            let m = toy_model(&names, 5, values);
            let mut buf = Vec::new();
            write_embeddings(&m, &mut buf).unwrap();
            let back = read_embeddings(buf.as_slice()).unwrap();
            for t in names {
                prop_assert_eq!(nearest_neighbors(&m, t, 5).unwrap(), nearest_neighbors(&back, t, 5).unwrap());
            }
        }

        #[test]
        fn oov_tokens_do_not_change_the_matrix(
            picks in proptest::collection::vec((0usize..4, proptest::bool::ANY), 0..20)
        ) {
            let m = toy_model(&["a", "b", "c", "d"], 2, (0..8).map(f64::from).collect());
            let names = ["a", "b", "c", "d"];
            let with: Vec<String> = picks.iter().map(|&(i, oov)| {
                if oov { format!("zz{i}") } else { names[i].to_string() }
            }).collect();
            let without: Vec<String> = with.iter().filter(|t| !t.starts_with("zz")).cloned().collect();
            let a = vectorize_document(&m, &TokenSequence { doc_id: "x".into(), tokens: with }, 6);
            let b = vectorize_document(&m, &TokenSequence { doc_id: "x".into(), tokens: without }, 6);
            prop_assert_eq!(a.rows, b.rows);
            prop_assert_eq!(a.valid_rows, b.valid_rows);
        }
    }
}
