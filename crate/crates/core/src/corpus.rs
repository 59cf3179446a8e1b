//! Vocabularies, documents, corpora and the plain-text corpus format.
//!
//! Token-list format (UTF-8, LF):
//!
//! ```text
//! V=<int> J=<int>
//! @word <id> <label>        (optional, zero or more)
//! <id> <id> ... [#label=normal|abnormal]
//! ...                       (exactly J document lines)
//! ```
//!
//! The count-vector format shares the header and replaces the token ids of
//! each document line with `<id>:<count>` pairs.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Word index space shared by all documents of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    size: usize,
    labels: Option<Vec<String>>,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidInput("vocabulary size must be at least 1".into()));
        }
        Ok(Vocabulary { size, labels: None })
    }

    /// Vocabulary with one unique, whitespace-free label per word id.
    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        let mut vocab = Vocabulary::new(labels.len())?;
        let mut seen = HashSet::new();
        for label in &labels {
            if label.is_empty() || label.chars().any(char::is_whitespace) {
                return Err(Error::InvalidInput(format!("invalid word label {label:?}")));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate word label {label:?}")));
            }
        }
        vocab.labels = Some(labels);
        Ok(vocab)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn label(&self, word: u32) -> Option<&str> {
        self.labels.as_ref()?.get(word as usize).map(String::as_str)
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }
}

/// Ground-truth class of a document, when known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Label {
    Normal,
    Abnormal,
    #[default]
    Unlabeled,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
            Label::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Label::Normal),
            "abnormal" => Ok(Label::Abnormal),
            "unlabeled" | "" => Ok(Label::Unlabeled),
            other => Err(Error::InvalidInput(format!("unknown label {other:?}"))),
        }
    }
}

/// An exchangeable bag of word tokens at a fixed position in the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub index: usize,
    pub tokens: Vec<u32>,
    pub label: Label,
}

impl Document {
    pub fn new(index: usize, tokens: Vec<u32>) -> Self {
        Document {
            index,
            tokens,
            label: Label::Unlabeled,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = label;
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A temporally ordered sequence of documents over one vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    vocabulary: Vocabulary,
    documents: Vec<Document>,
}

impl Corpus {
    /// Builds a corpus, renumbering documents by position and checking token bounds.
    pub fn new(vocabulary: Vocabulary, mut documents: Vec<Document>) -> Result<Self> {
        let v = vocabulary.size();
        for (j, doc) in documents.iter_mut().enumerate() {
            doc.index = j;
            if let Some(&bad) = doc.tokens.iter().find(|&&w| w as usize >= v) {
                return Err(Error::MalformedCorpus {
                    line: j + 2,
                    reason: format!("token id {bad} out of range for V={v}"),
                });
            }
        }
        Ok(Corpus {
            vocabulary,
            documents,
        })
    }

    pub fn from_token_lists(v: usize, docs: Vec<Vec<u32>>) -> Result<Self> {
        let documents = docs
            .into_iter()
            .enumerate()
            .map(|(j, tokens)| Document::new(j, tokens))
            .collect();
        Corpus::new(Vocabulary::new(v)?, documents)
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.size()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }

    /// Sub-corpus of documents `range`, renumbered from zero.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Corpus {
        let documents = self.documents[range].to_vec();
        Corpus::new(self.vocabulary.clone(), documents).expect("sub-corpus of a valid corpus")
    }
}

/// On-disk layout of document lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    TokenList,
    CountVector,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token-list" | "tokens" => Ok(CorpusFormat::TokenList),
            "count-vector" | "counts" => Ok(CorpusFormat::CountVector),
            other => Err(Error::InvalidInput(format!("unknown corpus format {other:?}"))),
        }
    }
}

/// Concentration and prior parameters of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    /// Table concentration.
    pub alpha: f64,
    /// Topic concentration.
    pub gamma: f64,
    /// Weight of the global table counts in the dynamic topic draw.
    pub delta: f64,
    /// Symmetric Dirichlet parameter of the topic base measure.
    pub eta: f64,
}

/// Inference defaults, tuned on the bars benchmark.
impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            alpha: 10.0,
            gamma: 0.1,
            delta: 0.00005,
            eta: 0.5,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_gamma(self.gamma)?;
        check_delta(self.delta)?;
        check_eta(self.eta)
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    positive("alpha", alpha)
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    positive("gamma", gamma)
}

pub(crate) fn check_eta(eta: f64) -> Result<()> {
    positive("eta", eta)
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if delta.is_finite() && delta >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidHyperParameter(format!("delta must be >= 0, got {delta}")))
    }
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidHyperParameter(format!("{name} must be > 0, got {value}")))
    }
}

/// Parses a corpus from text in the given format.
pub fn parse_corpus(text: &str, format: CorpusFormat) -> Result<Corpus> {
    let mut lines = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));
    let header = lines.next().unwrap_or("");
    let (v, j) = parse_header(header)?;
    let mut vocab_labels: Vec<Option<String>> = Vec::new();
    let mut documents = Vec::with_capacity(j.min(1 << 16));
    let mut line_no = 1;

    for line in lines {
        line_no += 1;
        if let Some(rest) = line.strip_prefix("@word") {
            if !documents.is_empty() {
                return Err(malformed(line_no, "@word line after documents"));
            }
            let mut parts = rest.split_whitespace();
            let (Some(id), Some(label), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(malformed(line_no, "expected `@word <id> <label>`"));
            };
            let id: usize = id
                .parse()
                .map_err(|_| malformed(line_no, format!("bad word id {id:?}")))?;
            if id >= v {
                return Err(malformed(line_no, format!("word id {id} out of range for V={v}")));
            }
            if vocab_labels.is_empty() {
                vocab_labels = vec![None; v];
            }
            if vocab_labels[id].replace(label.to_string()).is_some() {
                return Err(malformed(line_no, format!("word {id} labelled twice")));
            }
            continue;
        }
        if documents.len() == j {
            if !line.trim().is_empty() {
                return Err(malformed(line_no, "trailing content after the last document"));
            }
            continue;
        }
        documents.push(parse_document_line(line, line_no, v, format, documents.len())?);
    }
    if documents.len() != j {
        return Err(malformed(
            line_no,
            format!("header declares J={j} documents, found {}", documents.len()),
        ));
    }

    let vocabulary = if vocab_labels.is_empty() {
        Vocabulary::new(v)?
    } else {
        let labels = vocab_labels
            .into_iter()
            .enumerate()
            .map(|(id, l)| l.ok_or_else(|| malformed(1, format!("word {id} has no label"))))
            .collect::<Result<Vec<_>>>()?;
        Vocabulary::with_labels(labels).map_err(|e| malformed(1, e.to_string()))?
    };
    Corpus::new(vocabulary, documents)
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let mut v = None;
    let mut j = None;
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| malformed(1, format!("bad header field {field:?}")))?;
        let value: usize = value
            .parse()
            .map_err(|_| malformed(1, format!("bad header value {field:?}")))?;
        let slot = match key {
            "V" => &mut v,
            "J" => &mut j,
            _ => return Err(malformed(1, format!("unknown header key {key:?}"))),
        };
        if slot.replace(value).is_some() {
            return Err(malformed(1, format!("duplicate header key {key:?}")));
        }
    }
    match (v, j) {
        (Some(0), _) => Err(malformed(1, "V must be at least 1")),
        (Some(v), Some(j)) => Ok((v, j)),
        _ => Err(malformed(1, "header must be `V=<int> J=<int>`")),
    }
}

fn parse_document_line(
    line: &str,
    line_no: usize,
    v: usize,
    format: CorpusFormat,
    index: usize,
) -> Result<Document> {
    let (body, comment) = match line.split_once('#') {
        Some((body, comment)) => (body, Some(comment.trim())),
        None => (line, None),
    };
    let label = match comment {
        None => Label::Unlabeled,
        Some(c) => {
            let value = c
                .strip_prefix("label=")
                .ok_or_else(|| malformed(line_no, format!("unknown comment {c:?}")))?;
            value.parse().map_err(|e: Error| malformed(line_no, e.to_string()))?
        }
    };

    let mut tokens = Vec::new();
    for field in body.split_whitespace() {
        match format {
            CorpusFormat::TokenList => tokens.push(parse_word(field, line_no, v)?),
            CorpusFormat::CountVector => {
                let (word, count) = field
                    .split_once(':')
                    .ok_or_else(|| malformed(line_no, format!("expected word:count, got {field:?}")))?;
                let word = parse_word(word, line_no, v)?;
                let count: i64 = count
                    .parse()
                    .map_err(|_| malformed(line_no, format!("bad count {count:?}")))?;
                if count < 0 {
                    return Err(malformed(line_no, format!("negative count {count} for word {word}")));
                }
                if count > u32::MAX as i64 {
                    return Err(malformed(line_no, format!("count {count} too large")));
                }
                tokens.extend(std::iter::repeat_n(word, count as usize));
            }
        }
    }
    if format == CorpusFormat::CountVector {
        tokens.sort_unstable();
    }
    Ok(Document {
        index,
        tokens,
        label,
    })
}

fn parse_word(field: &str, line_no: usize, v: usize) -> Result<u32> {
    let id: i64 = field
        .parse()
        .map_err(|_| malformed(line_no, format!("bad token {field:?}")))?;
    if id < 0 || id as u64 >= v as u64 {
        return Err(malformed(line_no, format!("token id {id} out of range for V={v}")));
    }
    Ok(id as u32)
}

fn malformed(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedCorpus {
        line,
        reason: reason.into(),
    }
}

/// Renders a corpus in the token-list format.
pub fn format_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "V={} J={}", corpus.vocab_size(), corpus.len());
    if let Some(labels) = corpus.vocabulary().labels() {
        for (id, label) in labels.iter().enumerate() {
            let _ = writeln!(out, "@word {id} {label}");
        }
    }
    for doc in corpus.documents() {
        let mut first = true;
        for w in &doc.tokens {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{w}");
        }
        if doc.label != Label::Unlabeled {
            if !first {
                out.push(' ');
            }
            let _ = write!(out, "#label={}", doc.label);
        }
        out.push('\n');
    }
    out
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, format).map_err(|e| e.at_path(path))
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    std::fs::write(path, format_corpus(corpus)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_header_and_documents() {
        let c = parse_corpus("V=2 J=2\n0 0 1\n1\n", CorpusFormat::TokenList).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.documents()[0].len(), 3);
        assert_eq!(c.documents()[1].len(), 1);
        assert_eq!(c.documents()[1].index, 1);
    }

    #[test]
    fn empty_document_line() {
        let c = parse_corpus("V=3 J=3\n0\n\n2 #label=abnormal\n", CorpusFormat::TokenList).unwrap();
        assert!(c.documents()[1].is_empty());
        assert_eq!(c.documents()[2].label, Label::Abnormal);
        // trailing empty document, no final newline
        let c = parse_corpus("V=3 J=2\n0\n", CorpusFormat::TokenList).unwrap();
        assert!(c.documents()[1].is_empty());
    }

    #[test]
    fn out_of_range_token_is_malformed() {
        let err = parse_corpus("V=2 J=1\n0 2\n", CorpusFormat::TokenList).unwrap_err();
        assert!(matches!(err, Error::MalformedCorpus { line: 2, .. }), "{err}");
        assert!(parse_corpus("V=2 J=1\n-1\n", CorpusFormat::TokenList).is_err());
    }

    #[test]
    fn count_vector_expands_sorted() {
        let c = parse_corpus("V=4 J=1\n3:2 0:1 2:0\n", CorpusFormat::CountVector).unwrap();
        assert_eq!(c.documents()[0].tokens, vec![0, 3, 3]);
        let err = parse_corpus("V=4 J=1\n3:-1\n", CorpusFormat::CountVector).unwrap_err();
        assert!(matches!(err, Error::MalformedCorpus { .. }));
    }

    #[test]
    fn header_errors() {
        for bad in ["", "V=0 J=0", "V=2", "J=1 V=2 V=3", "V=x J=1", "W=2 J=1"] {
            assert!(parse_corpus(bad, CorpusFormat::TokenList).is_err(), "{bad:?}");
        }
        assert!(parse_corpus("V=2 J=2\n0\n", CorpusFormat::TokenList).is_ok());
        assert!(parse_corpus("V=2 J=1\n0\n1\n", CorpusFormat::TokenList).is_err());
    }

    #[test]
    fn vocabulary_labels_round_trip() {
        let vocab = Vocabulary::with_labels(vec!["a".into(), "b".into()]).unwrap();
        let c = Corpus::new(vocab, vec![Document::new(0, vec![1, 0])]).unwrap();
        let back = parse_corpus(&format_corpus(&c), CorpusFormat::TokenList).unwrap();
        assert_eq!(back, c);
        assert!(Vocabulary::with_labels(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let c = Corpus::from_token_lists(2, vec![vec![0]]).unwrap();
        let err = save_corpus(&c, Path::new("/nonexistent-dir/x/corpus.txt")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/nonexistent-dir/x/corpus.txt"));
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(HyperParams::default().validate().is_ok());
        let bad = [
            HyperParams { alpha: 0.0, ..Default::default() },
            HyperParams { gamma: -1.0, ..Default::default() },
            HyperParams { delta: -0.1, ..Default::default() },
            HyperParams { eta: f64::NAN, ..Default::default() },
        ];
        for h in bad {
            assert!(matches!(h.validate(), Err(Error::InvalidHyperParameter(_))));
        }
    }

    fn arb_corpus() -> impl Strategy<Value = Corpus> {
        (1usize..12).prop_flat_map(|v| {
            let doc = (
                proptest::collection::vec(0..v as u32, 0..15),
                prop_oneof![Just(Label::Normal), Just(Label::Abnormal), Just(Label::Unlabeled)],
            );
            proptest::collection::vec(doc, 0..10).prop_map(move |docs| {
                let docs = docs
                    .into_iter()
                    .enumerate()
                    .map(|(j, (t, l))| Document::new(j, t).with_label(l))
                    .collect();
                Corpus::new(Vocabulary::new(v).unwrap(), docs).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(c in arb_corpus()) {
            let back = parse_corpus(&format_corpus(&c), CorpusFormat::TokenList).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
