//! End-to-end run: tokens, embeddings, split, training and evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::architectures::{build, ArchitectureError, ArchitectureKind, ArchitectureSpec};
use crate::corpus::{make_split, CorpusError, Document, SplitBundle, SplitRatios};
use crate::embedding::{save_embeddings, train_skipgram, vectorize_document, EmbeddingError, EmbeddingModel, SkipGramConfig};
use crate::evaluator::{evaluate, EvalError, EvaluationSummary, DEFAULT_THRESHOLD};
use crate::preprocess::{preprocess_document, PreprocessError, Stoplist, TokenSequence};
use crate::trainer::{train, TrainError, TrainOutcome, TrainingConfig, Sample};

/// Offsets added to the global seed for each stochastic component.
pub const EMBEDDING_SEED_OFFSET: u64 = 100;
pub const ARCHITECTURE_SEED_OFFSET: u64 = 200;
pub const TRAINING_SEED_OFFSET: u64 = 300;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Architecture(#[from] ArchitectureError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("document {0} has no label")]
    Unlabeled(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Replaces the built-in English stopword list.
    pub stopwords: Option<PathBuf>,
    pub embedding: SkipGramConfig,
    pub architecture: ArchitectureKind,
    /// Overrides every conv filter count of the chosen architecture.
    pub filters: Option<usize>,
    /// Overrides the hidden dense widths.
    pub fc_plan: Option<Vec<usize>>,
    pub training: TrainingConfig,
    pub split: SplitRatios,
    pub temporal: bool,
    pub threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            stopwords: None,
            embedding: SkipGramConfig::default(),
            architecture: ArchitectureKind::Shallow,
            filters: None,
            fc_plan: None,
            training: TrainingConfig::default(),
            split: SplitRatios::default(),
            temporal: true,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl PipelineConfig {
    /// Copy with the global seed pushed into every component.
    pub fn effective(&self) -> PipelineConfig {
        let mut cfg = self.clone();
        cfg.embedding.seed = self.seed.wrapping_add(EMBEDDING_SEED_OFFSET);
        cfg.training.seed = self.seed.wrapping_add(TRAINING_SEED_OFFSET);
        cfg
    }

    pub fn stoplist(&self) -> Result<Stoplist, PipelineError> {
        Ok(match &self.stopwords {
            Some(path) => Stoplist::from_file(path)?,
            None => Stoplist::english(),
        })
    }

    pub fn architecture_spec(&self) -> ArchitectureSpec {
        let mut spec = ArchitectureSpec::default_for(self.architecture, self.training.max_len);
        spec.embed_dim = self.embedding.dim;
        spec.dropout_rate = self.training.dropout_rate;
        spec.seed = self.seed.wrapping_add(ARCHITECTURE_SEED_OFFSET);
        if let Some(f) = self.filters {
            spec.kernel_plan.iter_mut().for_each(|k| k.filters = f);
            if let Some(second) = spec.second_conv.as_mut() {
                second.filters = f;
            }
        }
        if let Some(fc) = &self.fc_plan {
            spec.fc_plan = fc.clone();
        }
        spec
    }
}

pub fn tokenize_documents(docs: &[Document], stoplist: &Stoplist) -> Vec<TokenSequence> {
    docs.iter().map(|d| preprocess_document(d, stoplist)).collect()
}

/// Vectorizes labeled documents into training samples.
pub fn vectorize_samples(
    model: &EmbeddingModel,
    docs: &[Document],
    stoplist: &Stoplist,
    max_len: usize,
) -> Result<Vec<Sample>, PipelineError> {
    docs.iter()
        .map(|doc| {
            let label = doc.label.ok_or_else(|| PipelineError::Unlabeled(doc.id.clone()))?;
            let matrix = vectorize_document(model, &preprocess_document(doc, stoplist), max_len);
            Ok(Sample {
                id: doc.id.clone(),
                input: matrix.rows,
                label,
                source: doc.source,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub config: PipelineConfig,
    pub embedding: EmbeddingModel,
    pub split: SplitBundle,
    pub training: TrainOutcome,
    /// Best-epoch network on the test partition.
    pub test: EvaluationSummary,
}

/// Paths written by [`run_pipeline`] inside the output directory.
pub mod artifacts {
    pub const EFFECTIVE_CONFIG: &str = "effective_config.json";
    pub const EMBEDDINGS: &str = "embeddings.txt";
    pub const SPLIT: &str = "split.json";
    pub const CHECKPOINTS: &str = "checkpoints";
    pub const REPORT: &str = "report.json";
    pub const ROC: &str = "roc.csv";
}

#[derive(Serialize)]
struct SplitIds<'a> {
    seed: u64,
    train: Vec<&'a str>,
    validation: Vec<&'a str>,
    test: Vec<&'a str>,
}

/// Runs the whole pipeline. Embeddings are learned from every document's text
/// (labels unused); the classifier sees only the labeled documents.
pub fn run_pipeline(
    docs: &[Document],
    config: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<PipelineOutcome, PipelineError> {
    let mut cfg = config.effective();
    let stoplist = cfg.stoplist()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        // echoed relative to the output directory so that runs into
        // different directories produce identical files
        let mut echoed = cfg.clone();
        echoed.training.checkpoint_dir = Some(PathBuf::from(artifacts::CHECKPOINTS));
        fs::write(dir.join(artifacts::EFFECTIVE_CONFIG), serde_json::to_string_pretty(&echoed)?)?;
        cfg.training.checkpoint_dir = Some(dir.join(artifacts::CHECKPOINTS));
    }

    let tokens = tokenize_documents(docs, &stoplist);
    let embedding = train_skipgram(&tokens, &cfg.embedding)?;
    log::info!("embedding: {} tokens, dim {}", embedding.vocabulary().len(), embedding.dim());

    let labeled: Vec<Document> = docs.iter().filter(|d| d.label.is_some()).cloned().collect();
    let split = make_split(&labeled, cfg.split, cfg.seed, cfg.temporal)?;
    let max_len = cfg.training.max_len;
    let train_set = vectorize_samples(&embedding, &split.train, &stoplist, max_len)?;
    let val_set = vectorize_samples(&embedding, &split.validation, &stoplist, max_len)?;
    let test_set = vectorize_samples(&embedding, &split.test, &stoplist, max_len)?;

    let spec = cfg.architecture_spec();
    let network = build(&spec)?;
    log::info!("{} network, {} parameters", spec.name, network.count_params());
    let training = train(network, &spec, &train_set, &val_set, &cfg.training)?;
    let test = evaluate(&training.best, &test_set, cfg.threshold)?;

    if let Some(dir) = out_dir {
        save_embeddings(&embedding, dir.join(artifacts::EMBEDDINGS))?;
        let ids = |d: &'_ [Document]| -> Vec<String> { d.iter().map(|x| x.id.clone()).collect() };
        let (tr, va, te) = (ids(&split.train), ids(&split.validation), ids(&split.test));
        let split_ids = SplitIds {
            seed: split.seed,
            train: tr.iter().map(String::as_str).collect(),
            validation: va.iter().map(String::as_str).collect(),
            test: te.iter().map(String::as_str).collect(),
        };
        fs::write(dir.join(artifacts::SPLIT), serde_json::to_string_pretty(&split_ids)?)?;
        fs::write(dir.join(artifacts::REPORT), serde_json::to_string_pretty(&test)?)?;
        fs::write(dir.join(artifacts::ROC), test.overall.roc_csv())?;
    }

    Ok(PipelineOutcome {
        config: cfg,
        embedding,
        split,
        training,
        test,
    })
}
