//! Document ingestion, class balancing and train/validation/test splitting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error("schema error: missing or invalid field `{field}`")]
    Schema { field: String },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("both labels must be present, found only {0}")]
    SingleLabel(Label),
    #[error("document `{0}` has no label")]
    Unlabeled(String),
    #[error("document `{0}` has no timestamp")]
    MissingTimestamp(String),
    #[error("document `{0}` has empty text")]
    EmptyText(String),
    #[error("a split needs at least 10 documents, got {0}")]
    TooFewDocuments(usize),
    #[error("invalid split ratios {0:?}")]
    InvalidRatios((f64, f64, f64)),
    #[error("temporal split has an empty test partition (all newest documents share the boundary timestamp)")]
    EmptyTemporalTest,
}

/// Binary class: security-related or not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Sr,
    NonSr,
}

impl Label {
    /// 1.0 for SR, 0.0 for non-SR.
    pub fn target(self) -> f64 {
        match self {
            Label::Sr => 1.0,
            Label::NonSr => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Sr => "sr",
            Label::NonSr => "nonsr",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sr" => Ok(Label::Sr),
            "nonsr" | "non-sr" | "non_sr" => Ok(Label::NonSr),
            other => Err(format!("invalid label `{other}` (expected \"sr\" or \"nonsr\")")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Cve,
    GitLabIssue,
    GitHubIssue,
    Wikipedia,
    Other,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Cve => "cve",
            Source::GitLabIssue => "gitlab",
            Source::GitHubIssue => "github",
            Source::Wikipedia => "wikipedia",
            Source::Other => "other",
        }
    }

    /// Issue-tracker sources, reported together as "issues".
    pub fn is_issue(self) -> bool {
        matches!(self, Source::GitLabIssue | Source::GitHubIssue)
    }

    /// Lenient parse; unknown names map to [`Source::Other`].
    pub fn parse(s: &str) -> Source {
        match s.to_ascii_lowercase().as_str() {
            "cve" | "nvd" => Source::Cve,
            "gitlab" | "gitlab_issue" | "gitlabissue" => Source::GitLabIssue,
            "github" | "github_issue" | "githubissue" => Source::GitHubIssue,
            "wikipedia" | "wiki" => Source::Wikipedia,
            _ => Source::Other,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One issue, CVE description or article.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub text: String,
    /// Absent for embedding-only documents such as Wikipedia articles.
    pub label: Option<Label>,
    pub created_at: Option<DateTime<Utc>>,
    pub source: Source,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        label: Option<Label>,
        created_at: Option<DateTime<Utc>>,
        source: Source,
    ) -> Result<Self, CorpusError> {
        let doc = Document {
            id: id.into(),
            text: text.into(),
            label,
            created_at,
            source,
        };
        if doc.text.trim().is_empty() {
            return Err(CorpusError::EmptyText(doc.id));
        }
        Ok(doc)
    }
}

/// Parses ISO-8601 timestamps, including the minute-precision form used by
/// NVD feeds (`2019-12-31T17:15Z`). Sub-second precision is dropped.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let ts = if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        t.with_timezone(&Utc)
    } else {
        let naive = s.strip_suffix('Z').unwrap_or(s);
        ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S"]
            .iter()
            .find_map(|fmt| NaiveDateTime::parse_from_str(naive, fmt).ok())
            .or_else(|| {
                chrono::NaiveDate::parse_from_str(naive, "%Y-%m-%d")
                    .ok()
                    .and_then(|d| d.and_hms_opt(0, 0, 0))
            })?
            .and_utc()
    };
    DateTime::from_timestamp(ts.timestamp(), 0)
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn byte_offset(content: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = content
        .split(|&b| b == b'\n')
        .take(line - 1)
        .map(|l| l.len() + 1)
        .sum();
    (line_start + column.saturating_sub(1)).min(content.len())
}

/// Result of parsing an NVD data feed.
#[derive(Debug, Clone, PartialEq)]
pub struct NvdFeed {
    pub documents: Vec<Document>,
    /// Items skipped because they carry no English description.
    pub skipped: usize,
}

fn field<'a>(
    v: &'a serde_json::Value,
    key: &str,
    path: &str,
) -> Result<&'a serde_json::Value, CorpusError> {
    v.get(key).ok_or_else(|| CorpusError::Schema {
        field: format!("{path}{key}"),
    })
}

/// Parses an NVD JSON 1.1 data feed. Every item becomes an SR document from
/// the CVE source, timestamped with its publication date.
pub fn parse_nvd_feed(content: &[u8]) -> Result<NvdFeed, CorpusError> {
    let root: serde_json::Value = serde_json::from_slice(content).map_err(|e| CorpusError::Json {
        offset: byte_offset(content, e.line(), e.column()),
        message: e.to_string(),
    })?;
    if let Some(version) = root.get("CVE_data_version") {
        if version.as_str() != Some("4.0") {
            return Err(CorpusError::Schema {
                field: "CVE_data_version".into(),
            });
        }
    }
    let items = field(&root, "CVE_Items", "")?
        .as_array()
        .ok_or_else(|| CorpusError::Schema {
            field: "CVE_Items".into(),
        })?;

    let mut documents = Vec::with_capacity(items.len());
    let mut skipped = 0;
    for (i, item) in items.iter().enumerate() {
        let at = format!("CVE_Items[{i}].");
        let cve = field(item, "cve", &at)?;
        let id = field(field(cve, "CVE_data_meta", &format!("{at}cve."))?, "ID", &format!("{at}cve.CVE_data_meta."))?
            .as_str()
            .ok_or_else(|| CorpusError::Schema {
                field: format!("{at}cve.CVE_data_meta.ID"),
            })?;
        let published = field(item, "publishedDate", &at)?;
        let created_at = published
            .as_str()
            .and_then(parse_timestamp)
            .ok_or_else(|| CorpusError::Schema {
                field: format!("{at}publishedDate"),
            })?;
        let english = cve
            .get("description")
            .and_then(|d| d.get("description_data"))
            .and_then(|d| d.as_array())
            .and_then(|entries| {
                entries.iter().find_map(|e| {
                    let lang = e.get("lang")?.as_str()?;
                    let value = e.get("value")?.as_str()?;
                    (lang.eq_ignore_ascii_case("en") && !value.trim().is_empty()).then_some(value)
                })
            });
        match english {
            Some(text) => documents.push(Document {
                id: id.to_string(),
                text: text.to_string(),
                label: Some(Label::Sr),
                created_at: Some(created_at),
                source: Source::Cve,
            }),
            None => skipped += 1,
        }
    }
    Ok(NvdFeed { documents, skipped })
}

/// One line of the corpus JSONL interchange format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub source: String,
}

impl From<&Document> for CorpusRecord {
    fn from(doc: &Document) -> Self {
        CorpusRecord {
            id: doc.id.clone(),
            text: doc.text.clone(),
            label: doc.label.map(|l| l.as_str().to_string()),
            created_at: doc.created_at.as_ref().map(format_timestamp),
            source: doc.source.as_str().to_string(),
        }
    }
}

fn record_to_document(value: serde_json::Value, line: usize) -> Result<Document, CorpusError> {
    let err = |message: String| CorpusError::Line { line, message };
    for required in ["id", "text", "source"] {
        if value.get(required).is_none() {
            return Err(err(format!("missing required field `{required}`")));
        }
    }
    let record: CorpusRecord =
        serde_json::from_value(value).map_err(|e| err(format!("invalid record: {e}")))?;
    let label = record
        .label
        .as_deref()
        .map(Label::from_str)
        .transpose()
        .map_err(err)?;
    let created_at = match record.created_at.as_deref() {
        Some(s) => Some(parse_timestamp(s).ok_or_else(|| err(format!("invalid timestamp `{s}`")))?),
        None => None,
    };
    if record.text.trim().is_empty() {
        return Err(err(format!("document `{}` has empty text", record.id)));
    }
    Ok(Document {
        id: record.id,
        text: record.text,
        label,
        created_at,
        source: Source::parse(&record.source),
    })
}

/// Reads corpus JSONL from any reader. Blank lines are ignored; line numbers
/// in errors are 1-based.
pub fn read_corpus_jsonl<R: BufRead>(reader: R) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| CorpusError::Line {
            line: line_no,
            message: format!("malformed JSON: {e}"),
        })?;
        docs.push(record_to_document(value, line_no)?);
    }
    Ok(docs)
}

pub fn load_corpus_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    let file = std::fs::File::open(path)?;
    read_corpus_jsonl(std::io::BufReader::new(file))
}

pub fn write_corpus_jsonl<W: Write>(mut out: W, docs: &[Document]) -> Result<(), CorpusError> {
    for doc in docs {
        let line = serde_json::to_string(&CorpusRecord::from(doc)).expect("record serializes");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_corpus_jsonl(path: impl AsRef<Path>, docs: &[Document]) -> Result<(), CorpusError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_corpus_jsonl(&mut out, docs)?;
    out.flush()?;
    Ok(())
}

fn require_label(doc: &Document) -> Result<Label, CorpusError> {
    doc.label.ok_or_else(|| CorpusError::Unlabeled(doc.id.clone()))
}

/// Keeps every document of the minority label and an equally sized uniform
/// sample of the majority label, then shuffles. Deterministic for a seed.
pub fn balance_classes(docs: &[Document], seed: u64) -> Result<Vec<Document>, CorpusError> {
    let mut sr = Vec::new();
    let mut non_sr = Vec::new();
    for doc in docs {
        match require_label(doc)? {
            Label::Sr => sr.push(doc.clone()),
            Label::NonSr => non_sr.push(doc.clone()),
        }
    }
    if sr.is_empty() {
        return Err(CorpusError::SingleLabel(Label::NonSr));
    }
    if non_sr.is_empty() {
        return Err(CorpusError::SingleLabel(Label::Sr));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (minority, mut majority) = if sr.len() <= non_sr.len() {
        (sr, non_sr)
    } else {
        (non_sr, sr)
    };
    majority.shuffle(&mut rng);
    majority.truncate(minority.len());
    let mut out = minority;
    out.extend(majority);
    out.shuffle(&mut rng);
    Ok(out)
}

/// Training, validation and test partitions of a labeled corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub train: Vec<Document>,
    pub validation: Vec<Document>,
    pub test: Vec<Document>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            validation: 0.20,
            test: 0.10,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.train, self.validation, self.test];
        let ok = parts.iter().all(|r| r.is_finite() && *r >= 0.0)
            && (parts.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(CorpusError::InvalidRatios((self.train, self.validation, self.test)))
        }
    }

    /// Partition sizes for `n` documents: floored validation and test, remainder to train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let validation = floor(self.validation);
        let test = floor(self.test);
        (n - validation - test, validation, test)
    }
}

/// Largest-remainder apportionment of `total` across groups of the given sizes.
fn apportion(total: usize, group_sizes: &[usize]) -> Vec<usize> {
    let n: usize = group_sizes.iter().sum();
    if n == 0 {
        return vec![0; group_sizes.len()];
    }
    let mut shares: Vec<usize> = group_sizes.iter().map(|&g| total * g / n).collect();
    let mut order: Vec<usize> = (0..group_sizes.len()).collect();
    // ties broken by group index for determinism
    order.sort_by_key(|&i| (std::cmp::Reverse((total * group_sizes[i]) % n), i));
    let mut missing = total - shares.iter().sum::<usize>();
    for i in order {
        if missing == 0 {
            break;
        }
        if shares[i] < group_sizes[i] {
            shares[i] += 1;
            missing -= 1;
        }
    }
    shares
}

/// Stratified random partition into parts of exactly the requested sizes.
fn stratified_partition(
    docs: Vec<Document>,
    sizes: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<Document>>, CorpusError> {
    let mut groups: BTreeMap<Label, Vec<Document>> = BTreeMap::new();
    for doc in docs {
        groups.entry(require_label(&doc)?).or_default().push(doc);
    }
    // Apportion every part but the first against the members still
    // unassigned; the first part takes what remains.
    let mut remaining: Vec<usize> = groups.values().map(Vec::len).collect();
    let per_part: Vec<Vec<usize>> = sizes[1..]
        .iter()
        .map(|&s| {
            let shares = apportion(s, &remaining);
            for (r, taken) in remaining.iter_mut().zip(&shares) {
                *r -= taken;
            }
            shares
        })
        .collect();
    let mut parts: Vec<Vec<Document>> = vec![Vec::new(); sizes.len()];
    for (g, mut members) in groups.into_values().enumerate() {
        members.shuffle(rng);
        let mut rest = members.into_iter();
        for (k, shares) in per_part.iter().enumerate() {
            parts[k + 1].extend(rest.by_ref().take(shares[g]));
        }
        parts[0].extend(rest);
    }
    for part in &mut parts {
        part.shuffle(rng);
    }
    Ok(parts)
}

/// Splits labeled documents into train/validation/test.
///
/// Without `temporal` the split is stratified by label. With `temporal` the
/// newest documents form the test partition and the rest is split randomly;
/// documents sharing the boundary timestamp stay out of the test partition so
/// that every test document is strictly newer than everything else.
pub fn make_split(
    docs: &[Document],
    ratios: SplitRatios,
    seed: u64,
    temporal: bool,
) -> Result<SplitBundle, CorpusError> {
    ratios.validate()?;
    if docs.len() < 10 {
        return Err(CorpusError::TooFewDocuments(docs.len()));
    }
    for doc in docs {
        require_label(doc)?;
        if temporal && doc.created_at.is_none() {
            return Err(CorpusError::MissingTimestamp(doc.id.clone()));
        }
    }
    let (n_train, n_val, n_test) = ratios.sizes(docs.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if !temporal {
        let mut parts =
            stratified_partition(docs.to_vec(), &[n_train, n_val, n_test], &mut rng)?.into_iter();
        let (train, validation, test) = (
            parts.next().unwrap(),
            parts.next().unwrap(),
            parts.next().unwrap(),
        );
        return Ok(SplitBundle {
            train,
            validation,
            test,
            seed,
        });
    }

    let mut sorted = docs.to_vec();
    sorted.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
    let mut cut = sorted.len() - n_test;
    if cut > 0 {
        let boundary = sorted[cut - 1].created_at;
        while cut < sorted.len() && sorted[cut].created_at == boundary {
            cut += 1;
        }
    }
    if cut == sorted.len() {
        return Err(CorpusError::EmptyTemporalTest);
    }
    let mut test = sorted.split_off(cut);
    test.shuffle(&mut rng);
    let rest_train = sorted.len() - n_val;
    let mut parts = stratified_partition(sorted, &[rest_train, n_val], &mut rng)?.into_iter();
    Ok(SplitBundle {
        train: parts.next().unwrap(),
        validation: parts.next().unwrap(),
        test,
        seed,
    })
}

/// True iff every test document is strictly newer than every training and
/// validation document. Missing timestamps make the check fail.
pub fn check_temporal(split: &SplitBundle) -> bool {
    let earliest_test = split.test.iter().map(|d| d.created_at).min().flatten();
    let rest: Option<Vec<DateTime<Utc>>> = split
        .train
        .iter()
        .chain(&split.validation)
        .map(|d| d.created_at)
        .collect();
    let test_complete = split.test.iter().all(|d| d.created_at.is_some());
    match (earliest_test, rest) {
        (Some(test_min), Some(rest)) if test_complete => {
            rest.iter().max().is_none_or(|rest_max| test_min > *rest_max)
        }
        _ => false,
    }
}

/// Ids occurring more than once, sorted.
pub fn duplicate_ids(docs: &[Document]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dups: Vec<String> = docs
        .iter()
        .filter(|d| !seen.insert(d.id.as_str()))
        .map(|d| d.id.clone())
        .collect();
    dups.sort();
    dups.dedup();
    dups
}
