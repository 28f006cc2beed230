//! Text normalization: lowercasing, stopword removal, Snowball stemming and
//! vocabulary construction.

mod stemmer;

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Document;

pub use stemmer::stem;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("min_count must be at least 1")]
    InvalidMinCount,
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

const ENGLISH_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

/// SHA-256 of the shipped English stopword file.
pub const ENGLISH_STOPWORDS_SHA256: &str =
    "d72318c848c657ccfb899c3d87649f80975a8d20cbe57ea29d2c7320d518842e";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stoplist {
    words: HashSet<String>,
}

impl Stoplist {
    /// The bundled English list.
    pub fn english() -> Self {
        Self::parse(ENGLISH_STOPWORDS)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// One token per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Stoplist { words }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PreprocessError> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Hex SHA-256 of arbitrary bytes; used to pin stopword files.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn english_stopwords_text() -> &'static str {
    ENGLISH_STOPWORDS
}

/// Lowercases and splits on every non-alphabetic character, so digits,
/// punctuation and symbols never survive into a token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphabetic() {
            current.extend(c.to_lowercase().filter(|l| l.is_alphabetic()));
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

pub fn remove_stopwords(tokens: Vec<String>, stoplist: &Stoplist) -> Vec<String> {
    tokens.into_iter().filter(|t| !stoplist.contains(t)).collect()
}

/// Tokenize, drop stopwords, then stem each surviving token.
pub fn preprocess_text(text: &str, stoplist: &Stoplist) -> Vec<String> {
    remove_stopwords(tokenize(text), stoplist)
        .iter()
        .map(|t| stem(t))
        .collect()
}

/// Stemmed tokens of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub tokens: Vec<String>,
}

pub fn preprocess_document(doc: &Document, stoplist: &Stoplist) -> TokenSequence {
    TokenSequence {
        doc_id: doc.id.clone(),
        tokens: preprocess_text(&doc.text, stoplist),
    }
}

pub fn write_token_cache<W: Write>(mut out: W, seqs: &[TokenSequence]) -> std::io::Result<()> {
    for seq in seqs {
        writeln!(out, "{}", serde_json::to_string(seq).expect("serializable"))?;
    }
    Ok(())
}

pub fn read_token_cache<R: BufRead>(reader: R) -> Result<Vec<TokenSequence>, PreprocessError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PreprocessError::Line {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Token to dense index table.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    /// Empty when the vocabulary was restored from a file without counts.
    counts: Vec<u64>,
    min_count: u64,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Vocabulary {
    /// Vocabulary with the given index order and no frequency information.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            index,
            counts: Vec::new(),
            min_count: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, index: usize) -> Option<u64> {
        self.counts.get(index).copied()
    }

    pub fn counts(&self) -> Option<&[u64]> {
        (!self.counts.is_empty()).then_some(self.counts.as_slice())
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Maps tokens to indices, dropping out-of-vocabulary tokens.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.index_of(t.as_ref())).collect()
    }
}

/// Counts tokens over all sequences, drops those below `min_count` and
/// assigns indices by descending count, ties broken lexicographically.
pub fn build_vocabulary(
    corpus: &[TokenSequence],
    min_count: u64,
) -> Result<Vocabulary, PreprocessError> {
    if min_count < 1 {
        return Err(PreprocessError::InvalidMinCount);
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for token in corpus.iter().flat_map(|s| &s.tokens) {
        *counts.entry(token.as_str()).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(PreprocessError::EmptyCorpus);
    }
    let mut kept: Vec<(&str, u64)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens: Vec<String> = kept.iter().map(|(t, _)| t.to_string()).collect();
    let mut vocab = Vocabulary::from_tokens(tokens);
    vocab.counts = kept.iter().map(|&(_, c)| c).collect();
    vocab.min_count = min_count;
    Ok(vocab)
}
