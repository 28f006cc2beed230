use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use srtriage::architectures::{build, ArchitectureKind};
use srtriage::corpus::{
    duplicate_ids, load_corpus_jsonl, make_split, parse_nvd_feed, save_corpus_jsonl, Document, Label,
    Source,
};
use srtriage::embedding::{load_embeddings, save_embeddings, train_skipgram, vectorize_document, EmbeddingModel};
use srtriage::evaluator::{evaluate, predict};
use srtriage::nn::Network;
use srtriage::pipeline::{tokenize_documents, vectorize_samples, PipelineConfig};
use srtriage::preprocess::{preprocess_text, read_token_cache, write_token_cache, Stoplist, TokenSequence};
use srtriage::trainer::{load_checkpoint, train};

use crate::exit::UsageError;
use crate::{config, Cli, Command, EmbedArgs, EvalArgs, IngestArgs, ModelArgs, PredictArgs, SplitArgs, TrainArgs};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::Ingest(args) => ingest(args, cfg, require_out(out)?),
        Command::Preprocess(args) => {
            if args.stopwords.is_some() {
                cfg.stopwords = args.stopwords;
            }
            preprocess(&args.corpus, cfg, require_out(out)?)
        }
        Command::Split(args) => split(args, cfg, require_out(out)?),
        Command::Embed(args) => embed(args, cfg, require_out(out)?),
        Command::Train(args) => train_cmd(args, cfg, require_out(out)?),
        Command::Eval(args) => eval(args, cfg, out),
        Command::Predict(args) => predict_cmd(args, cfg, out),
    }
}

fn require_out(out: Option<&Path>) -> Result<&Path> {
    out.ok_or_else(|| UsageError("this command needs --out DIR".into()).into())
}

fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    load_corpus_jsonl(path).with_context(|| format!("reading corpus {}", path.display()))
}

fn ingest(args: IngestArgs, cfg: PipelineConfig, out: &Path) -> Result<()> {
    if args.nvd.is_empty() && args.issues.is_empty() {
        bail!(UsageError("ingest needs at least one --nvd or --issues file".into()));
    }
    let mut docs = Vec::new();
    for path in &args.nvd {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let feed = parse_nvd_feed(&bytes).with_context(|| format!("parsing NVD feed {}", path.display()))?;
        if feed.skipped > 0 {
            log::warn!("{}: skipped {} items without an English description", path.display(), feed.skipped);
        }
        docs.extend(feed.documents);
    }
    for path in &args.issues {
        docs.extend(load_corpus(path)?);
    }
    let dups = duplicate_ids(&docs);
    if !dups.is_empty() {
        bail!("duplicate document ids: {}", dups.join(", "));
    }

    config::echo(out, &cfg.effective())?;
    save_corpus_jsonl(out.join("corpus.jsonl"), &docs)?;

    let mut counts: BTreeMap<Source, usize> = BTreeMap::new();
    for doc in &docs {
        *counts.entry(doc.source).or_default() += 1;
    }
    println!("{:<12}{:>10}", "source", "documents");
    for (source, n) in &counts {
        println!("{:<12}{:>10}", source.as_str(), n);
    }
    println!("{:<12}{:>10}", "total", docs.len());
    let cves = counts.get(&Source::Cve).copied().unwrap_or(0);
    let issues: usize = counts.iter().filter(|(s, _)| s.is_issue()).map(|(_, n)| n).sum();
    println!("CVE: {cves}, issues: {issues}");
    Ok(())
}

fn preprocess(corpus: &Path, cfg: PipelineConfig, out: &Path) -> Result<()> {
    let docs = load_corpus(corpus)?;
    let seqs = tokenize_documents(&docs, &cfg.stoplist()?);
    config::echo(out, &cfg.effective())?;
    let mut file = io::BufWriter::new(fs::File::create(out.join("tokens.jsonl"))?);
    write_token_cache(&mut file, &seqs)?;
    file.flush()?;
    let total: usize = seqs.iter().map(|s| s.tokens.len()).sum();
    println!("documents: {}, tokens: {total}", seqs.len());
    Ok(())
}

fn split(args: SplitArgs, mut cfg: PipelineConfig, out: &Path) -> Result<()> {
    if args.random {
        cfg.temporal = false;
    }
    let docs = load_corpus(&args.corpus)?;
    let labeled: Vec<Document> = docs.into_iter().filter(|d| d.label.is_some()).collect();
    let cfg = cfg.effective();
    let bundle = make_split(&labeled, cfg.split, cfg.seed, cfg.temporal)?;
    config::echo(out, &cfg)?;
    for (name, part) in [("train", &bundle.train), ("validation", &bundle.validation), ("test", &bundle.test)] {
        save_corpus_jsonl(out.join(format!("{name}.jsonl")), part)?;
    }
    println!(
        "train: {}, validation: {}, test: {}",
        bundle.train.len(),
        bundle.validation.len(),
        bundle.test.len()
    );
    Ok(())
}

fn embed(args: EmbedArgs, mut cfg: PipelineConfig, out: &Path) -> Result<()> {
    if let Some(dim) = args.dim {
        cfg.embedding.dim = dim;
    }
    if let Some(epochs) = args.epochs {
        cfg.embedding.epochs = epochs;
    }
    if let Some(window) = args.window {
        cfg.embedding.window = window;
    }
    let cfg = cfg.effective();
    let seqs: Vec<TokenSequence> = match (&args.corpus, &args.tokens) {
        (_, Some(path)) => {
            let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
            read_token_cache(BufReader::new(file))?
        }
        (Some(path), None) => tokenize_documents(&load_corpus(path)?, &cfg.stoplist()?),
        (None, None) => bail!(UsageError("embed needs --corpus or --tokens".into())),
    };
    let model = train_skipgram(&seqs, &cfg.embedding)?;
    config::echo(out, &cfg)?;
    save_embeddings(&model, out.join("embeddings.txt"))?;
    println!("vocab: {}, dim: {}", model.vocabulary().len(), model.dim());
    Ok(())
}

fn load_model_embeddings(path: &Path) -> Result<EmbeddingModel> {
    load_embeddings(path).with_context(|| format!("reading embeddings {}", path.display()))
}

fn train_cmd(args: TrainArgs, mut cfg: PipelineConfig, out: &Path) -> Result<()> {
    if let Some(arch) = &args.arch {
        cfg.architecture = arch.parse::<ArchitectureKind>()?;
    }
    let t = &mut cfg.training;
    t.max_epochs = args.max_epochs.unwrap_or(t.max_epochs);
    t.patience = args.patience.unwrap_or(t.patience);
    t.max_len = args.max_len.unwrap_or(t.max_len);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);

    let embedding = load_model_embeddings(&args.embeddings)?;
    let mut cfg = cfg.effective();
    // the network input width is fixed by the embedding file
    cfg.embedding.dim = embedding.dim();
    cfg.training.checkpoint_dir = Some(PathBuf::from("."));
    config::echo(out, &cfg)?;
    cfg.training.checkpoint_dir = Some(out.to_path_buf());
    let stoplist = cfg.stoplist()?;
    let max_len = cfg.training.max_len;
    let train_set = vectorize_samples(&embedding, &load_corpus(&args.train)?, &stoplist, max_len)?;
    let val_set = vectorize_samples(&embedding, &load_corpus(&args.validation)?, &stoplist, max_len)?;

    let spec = cfg.architecture_spec();
    let network = build(&spec)?;
    println!("architecture: {}", spec.name);
    println!("params: {}", network.count_params());
    println!("{}", network.summary());

    let outcome = train(network, &spec, &train_set, &val_set, &cfg.training)?;
    let h = &outcome.history;
    if let Some(best) = h.best() {
        println!(
            "best epoch: {} val_loss={:.6} val_acc={:.4}",
            best.epoch, best.val_loss, best.val_acc
        );
    }
    println!(
        "stopped at epoch {} ({})",
        h.stopped_epoch,
        if h.stopped_early { "early stopping" } else { "epoch limit" }
    );
    Ok(())
}

struct LoadedModel {
    network: Network,
    embedding: EmbeddingModel,
    input_len: usize,
    threshold: f64,
}

fn load_model(args: &ModelArgs, cfg: &PipelineConfig) -> Result<LoadedModel> {
    let ckpt = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let embedding = load_model_embeddings(&args.embeddings)?;
    if ckpt.spec.embed_dim != embedding.dim() {
        bail!(
            "checkpoint expects {}-dimensional embeddings but {} has dimension {}",
            ckpt.spec.embed_dim,
            args.embeddings.display(),
            embedding.dim()
        );
    }
    let threshold = args.threshold.unwrap_or(cfg.threshold);
    if !(0.0..=1.0).contains(&threshold) {
        bail!(UsageError(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    Ok(LoadedModel {
        network: ckpt.network,
        embedding,
        input_len: ckpt.spec.input_len,
        threshold,
    })
}

/// Writes `body` to `dir/name`, or to stdout without an output directory.
fn emit(out: Option<&Path>, name: &str, body: &str) -> Result<Option<PathBuf>> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(name);
            fs::write(&path, body)?;
            Ok(Some(path))
        }
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
            stdout.flush()?;
            Ok(None)
        }
    }
}

fn eval(args: EvalArgs, cfg: PipelineConfig, out: Option<&Path>) -> Result<()> {
    let cfg = cfg.effective();
    let model = load_model(&args.model, &cfg)?;
    let docs = load_corpus(&args.test)?;
    let samples = vectorize_samples(&model.embedding, &docs, &cfg.stoplist()?, model.input_len)?;
    let summary = evaluate(&model.network, &samples, model.threshold)?;
    if !summary.overall.auc_available {
        log::warn!("test set has a single class; AUC omitted");
    }
    let body = if args.per_source {
        serde_json::to_string_pretty(&summary)?
    } else {
        serde_json::to_string_pretty(&summary.overall)?
    };
    if let Some(dir) = out {
        config::echo(dir, &cfg)?;
        fs::write(dir.join("roc.csv"), summary.overall.roc_csv())?;
    }
    emit(out, "report.json", &(body + "\n"))?;
    Ok(())
}

#[derive(Serialize)]
struct Prediction<'a> {
    id: &'a str,
    p_sr: f64,
    label: &'static str,
}

/// One input line: a JSON object carrying `text`, or the raw text itself.
fn parse_input_line(line: &str, line_no: usize) -> (String, String) {
    let fallback_id = format!("line{line_no}");
    if let Ok(serde_json::Value::Object(obj)) = serde_json::from_str::<serde_json::Value>(line) {
        if let Some(text) = obj.get("text").and_then(|t| t.as_str()) {
            let id = obj.get("id").and_then(|v| v.as_str()).map(str::to_string).unwrap_or(fallback_id);
            return (id, text.to_string());
        }
    }
    (fallback_id, line.to_string())
}

fn predict_cmd(args: PredictArgs, cfg: PipelineConfig, out: Option<&Path>) -> Result<()> {
    let cfg = cfg.effective();
    let model = load_model(&args.model, &cfg)?;
    let inputs: Vec<(String, String)> = match &args.input {
        Some(path) => {
            let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
            let mut inputs = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if !line.trim().is_empty() {
                    inputs.push(parse_input_line(&line, i + 1));
                }
            }
            inputs
        }
        None => args.text.iter().enumerate().map(|(i, t)| (format!("text{}", i + 1), t.clone())).collect(),
    };
    let stoplist: Stoplist = cfg.stoplist()?;
    let mut body = String::new();
    for (id, text) in &inputs {
        let seq = TokenSequence {
            doc_id: id.clone(),
            tokens: preprocess_text(text, &stoplist),
        };
        let matrix = vectorize_document(&model.embedding, &seq, model.input_len);
        let p_sr = predict(&model.network, &matrix.rows)?;
        let label = if p_sr >= model.threshold { Label::Sr } else { Label::NonSr };
        let record = Prediction { id, p_sr, label: label.as_str() };
        body.push_str(&serde_json::to_string(&record)?);
        body.push('\n');
    }
    if let Some(dir) = out {
        config::echo(dir, &cfg)?;
    }
    emit(out, "predictions.jsonl", &body)?;
    Ok(())
}
