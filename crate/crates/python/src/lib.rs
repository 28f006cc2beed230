//! Python module `srtriage`: stemming, embeddings, classifiers and the
//! end-to-end pipeline.

use std::fmt::Display;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use srtriage::architectures::{build, ArchitectureKind, ArchitectureSpec};
use srtriage::corpus::{load_corpus_jsonl, Label};
use srtriage::embedding::{
    load_embeddings, nearest_neighbors, save_embeddings, train_skipgram, vectorize_document,
    EmbeddingModel, SkipGramConfig,
};
use srtriage::evaluator;
use srtriage::nn::Network;
use srtriage::pipeline::{run_pipeline, PipelineConfig};
use srtriage::preprocess::{self, Stoplist, TokenSequence};
use srtriage::trainer::load_checkpoint;

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn stoplist_from(stopwords: Option<Vec<String>>) -> Stoplist {
    match stopwords {
        Some(words) => Stoplist::parse(&words.join("\n")),
        None => Stoplist::english(),
    }
}

/// Porter2 stem of one lowercase word.
#[pyfunction]
pub fn stem(word: &str) -> String {
    preprocess::stem(word)
}

/// Tokenize, drop stopwords and stem. `stopwords` replaces the English list.
#[pyfunction]
#[pyo3(signature = (text, stopwords=None))]
pub fn preprocess_text(text: &str, stopwords: Option<Vec<String>>) -> Vec<String> {
    preprocess::preprocess_text(text, &stoplist_from(stopwords))
}

fn labels_from(labels: &[u8]) -> PyResult<Vec<Label>> {
    labels
        .iter()
        .map(|&l| match l {
            1 => Ok(Label::Sr),
            0 => Ok(Label::NonSr),
            other => Err(value_err(format!("labels must be 0 or 1, got {other}"))),
        })
        .collect()
}

/// Area under the ROC curve; label 1 marks the security-related class.
#[pyfunction]
pub fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    evaluator::auc(&scores, &labels_from(&labels)?).map_err(value_err)
}

/// ROC points `(fpr, tpr)` from (0, 0) to (1, 1).
#[pyfunction]
pub fn roc_curve(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<Vec<(f64, f64)>> {
    evaluator::roc_curve(&scores, &labels_from(&labels)?).map_err(value_err)
}

fn spec_for(arch: &str, input_len: usize, embed_dim: usize, seed: u64) -> PyResult<ArchitectureSpec> {
    let kind: ArchitectureKind = arch.parse().map_err(value_err)?;
    let mut spec = ArchitectureSpec::default_for(kind, input_len);
    spec.embed_dim = embed_dim;
    spec.seed = seed;
    Ok(spec)
}

/// Trainable parameter count of a named architecture.
#[pyfunction]
#[pyo3(signature = (arch, input_len=200, embed_dim=100))]
pub fn architecture_param_count(arch: &str, input_len: usize, embed_dim: usize) -> PyResult<usize> {
    let net = build(&spec_for(arch, input_len, embed_dim, 0)?).map_err(value_err)?;
    Ok(net.count_params())
}

/// Runs ingest-to-evaluation on a corpus JSONL file and returns the test
/// report as a JSON string. `config` is a JSON object of overrides.
#[pyfunction]
#[pyo3(signature = (corpus, config=None, out_dir=None))]
pub fn run(corpus: PathBuf, config: Option<&str>, out_dir: Option<PathBuf>) -> PyResult<String> {
    let cfg: PipelineConfig = match config {
        Some(json) => serde_json::from_str(json).map_err(value_err)?,
        None => PipelineConfig::default(),
    };
    let docs = load_corpus_jsonl(&corpus).map_err(|e| PyOSError::new_err(e.to_string()))?;
    let outcome = run_pipeline(&docs, &cfg, out_dir.as_deref()).map_err(value_err)?;
    serde_json::to_string(&outcome.test).map_err(value_err)
}

/// Skip-gram word vectors.
#[pyclass(module = "srtriage", frozen)]
pub struct Embedding {
    pub inner: EmbeddingModel,
}

#[pymethods]
impl Embedding {
    /// Trains on pre-tokenized sentences.
    #[staticmethod]
    #[pyo3(signature = (sentences, dim=100, window=5, negatives=5, epochs=5, learning_rate=0.025, min_count=1, seed=0))]
    #[allow(clippy::too_many_arguments)]
    pub fn train(
        sentences: Vec<Vec<String>>,
        dim: usize,
        window: usize,
        negatives: usize,
        epochs: usize,
        learning_rate: f64,
        min_count: u64,
        seed: u64,
    ) -> PyResult<Self> {
        let corpus: Vec<TokenSequence> = sentences
            .into_iter()
            .enumerate()
            .map(|(i, tokens)| TokenSequence {
                doc_id: i.to_string(),
                tokens,
            })
            .collect();
        let cfg = SkipGramConfig {
            dim,
            window,
            negatives,
            epochs,
            learning_rate,
            min_count,
            seed,
        };
        Ok(Embedding {
            inner: train_skipgram(&corpus, &cfg).map_err(value_err)?,
        })
    }

    #[staticmethod]
    pub fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Embedding {
            inner: load_embeddings(path).map_err(value_err)?,
        })
    }

    pub fn save(&self, path: PathBuf) -> PyResult<()> {
        save_embeddings(&self.inner, path).map_err(value_err)
    }

    #[getter]
    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn vocabulary(&self) -> Vec<String> {
        self.inner.vocabulary().tokens().to_vec()
    }

    pub fn __len__(&self) -> usize {
        self.inner.vocabulary().len()
    }

    pub fn __contains__(&self, token: &str) -> bool {
        self.inner.vocabulary().index_of(token).is_some()
    }

    pub fn vector(&self, token: &str) -> PyResult<Vec<f64>> {
        self.inner
            .vector_of(token)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| PyValueError::new_err(format!("{token:?} is not in the vocabulary")))
    }

    /// The `k` most cosine-similar tokens, excluding `token` itself.
    #[pyo3(signature = (token, k=10))]
    pub fn nearest(&self, token: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        nearest_neighbors(&self.inner, token, k).map_err(value_err)
    }

    pub fn __repr__(&self) -> String {
        format!("Embedding(vocab={}, dim={})", self.inner.vocabulary().len(), self.inner.dim())
    }
}

/// A CNN classifier, either freshly initialized or loaded from a checkpoint.
#[pyclass(module = "srtriage", frozen)]
pub struct Classifier {
    pub network: Network,
    pub spec: ArchitectureSpec,
}

#[pymethods]
impl Classifier {
    #[staticmethod]
    #[pyo3(signature = (arch, input_len=200, embed_dim=100, seed=0))]
    pub fn build(arch: &str, input_len: usize, embed_dim: usize, seed: u64) -> PyResult<Self> {
        let spec = spec_for(arch, input_len, embed_dim, seed)?;
        let network = build(&spec).map_err(value_err)?;
        Ok(Classifier { network, spec })
    }

    #[staticmethod]
    pub fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = load_checkpoint(path).map_err(value_err)?;
        Ok(Classifier {
            network: ckpt.network,
            spec: ckpt.spec,
        })
    }

    #[getter]
    pub fn name(&self) -> String {
        self.spec.name.as_str().to_string()
    }

    #[getter]
    pub fn input_len(&self) -> usize {
        self.spec.input_len
    }

    #[getter]
    pub fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    pub fn param_count(&self) -> usize {
        self.network.count_params()
    }

    pub fn summary(&self) -> String {
        self.network.summary()
    }

    /// SR probability of each text, embedded with `embedding`.
    #[pyo3(signature = (embedding, texts, stopwords=None))]
    pub fn predict(
        &self,
        embedding: &Embedding,
        texts: Vec<String>,
        stopwords: Option<Vec<String>>,
    ) -> PyResult<Vec<f64>> {
        if embedding.inner.dim() != self.spec.embed_dim {
            return Err(value_err(format!(
                "classifier expects {}-dimensional embeddings, got {}",
                self.spec.embed_dim,
                embedding.inner.dim()
            )));
        }
        let stoplist = stoplist_from(stopwords);
        texts
            .iter()
            .enumerate()
            .map(|(i, text)| {
                let seq = TokenSequence {
                    doc_id: i.to_string(),
                    tokens: preprocess::preprocess_text(text, &stoplist),
                };
                let matrix = vectorize_document(&embedding.inner, &seq, self.spec.input_len);
                evaluator::predict(&self.network, &matrix.rows).map_err(value_err)
            })
            .collect()
    }

    pub fn __repr__(&self) -> String {
        format!(
            "Classifier({}, input_len={}, params={})",
            self.spec.name.as_str(),
            self.spec.input_len,
            self.network.count_params()
        )
    }
}

#[pymodule]
#[pyo3(name = "srtriage")]
fn srtriage_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(stem, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess_text, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(roc_curve, m)?)?;
    m.add_function(wrap_pyfunction!(architecture_param_count, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<Embedding>()?;
    m.add_class::<Classifier>()?;
    Ok(())
}
