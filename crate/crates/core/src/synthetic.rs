//! The "bars" benchmark: ten bar-shaped topics on a 5×5 word grid, normal
//! documents from the dynamic generative process, and injected abnormal
//! documents whose topics avoid those of the preceding document.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::anomaly::DocResult;
use crate::corpus::{Corpus, Document, HyperParams, Label, Vocabulary};
use crate::crf::{Generator, Mode, TopicLaw, TopicSource};
use crate::error::{Error, Result};

/// Parameters of a bars corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct BarsSpec {
    /// Side of the word grid; there are `grid` rows and `grid` columns of bars.
    pub grid: usize,
    pub train_docs: usize,
    pub test_docs: usize,
    /// Inclusive range of document lengths, drawn uniformly.
    pub doc_len: (usize, usize),
    /// Fraction of test documents made abnormal when `abnormal_positions` is `None`.
    pub abnormal_fraction: f64,
    /// Explicit abnormal positions, as indices into the test part.
    pub abnormal_positions: Option<Vec<usize>>,
    /// Topic law of normal documents.
    pub mode: Mode,
}

impl Default for BarsSpec {
    fn default() -> Self {
        BarsSpec {
            grid: 5,
            train_docs: 200,
            test_docs: 200,
            doc_len: (100, 100),
            abnormal_fraction: 0.1,
            abnormal_positions: None,
            mode: Mode::Dynamic,
        }
    }
}

impl BarsSpec {
    /// Hyperparameters used to generate the benchmark by default. `eta` is
    /// unused because the topics are the fixed bars.
    pub fn default_hyper() -> HyperParams {
        HyperParams {
            alpha: 1.0,
            gamma: 0.5,
            delta: 0.0,
            eta: 0.5,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.grid * self.grid
    }

    pub fn num_bars(&self) -> usize {
        2 * self.grid
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 2 {
            return Err(Error::InvalidConfig("bars grid must be at least 2".into()));
        }
        if self.doc_len.0 == 0 || self.doc_len.0 > self.doc_len.1 {
            return Err(Error::InvalidConfig(format!(
                "document length range {}..={} is invalid",
                self.doc_len.0, self.doc_len.1
            )));
        }
        if !(0.0..=1.0).contains(&self.abnormal_fraction) {
            return Err(Error::InvalidConfig(format!(
                "abnormal fraction {} outside [0, 1]",
                self.abnormal_fraction
            )));
        }
        if let Some(p) = &self.abnormal_positions {
            if let Some(bad) = p.iter().find(|&&i| i >= self.test_docs) {
                return Err(Error::InvalidConfig(format!(
                    "abnormal position {bad} outside the {} test documents",
                    self.test_docs
                )));
            }
        }
        Ok(())
    }
}

/// Word distributions of the bar topics: rows first, then columns.
pub fn bar_topics(grid: usize) -> Vec<Vec<f64>> {
    let v = grid * grid;
    let p = 1.0 / grid as f64;
    let mut bars = Vec::with_capacity(2 * grid);
    for r in 0..grid {
        let mut phi = vec![0.0; v];
        for c in 0..grid {
            phi[r * grid + c] = p;
        }
        bars.push(phi);
    }
    for c in 0..grid {
        let mut phi = vec![0.0; v];
        for r in 0..grid {
            phi[r * grid + c] = p;
        }
        bars.push(phi);
    }
    bars
}

/// Latent structure of one generated document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthDoc {
    pub label: Label,
    /// `(bar, customers)` per table, in creation order.
    pub tables: Vec<(usize, u32)>,
    /// Table of each token.
    pub seats: Vec<u32>,
}

impl TruthDoc {
    /// Fraction of the document's tokens drawn from each bar.
    pub fn mixture(&self, bars: usize) -> Vec<f64> {
        let mut mix = vec![0.0; bars];
        let n: u32 = self.tables.iter().map(|t| t.1).sum();
        for &(b, c) in &self.tables {
            mix[b] += c as f64 / n.max(1) as f64;
        }
        mix
    }

    /// Bar of each table.
    pub fn bars_used(&self) -> impl Iterator<Item = usize> + '_ {
        self.tables.iter().map(|t| t.0)
    }
}

/// Generation record of a whole bars sequence, training part first.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub hyper: HyperParams,
    pub mode: Mode,
    pub grid: usize,
    pub train_docs: usize,
    pub docs: Vec<TruthDoc>,
}

#[derive(Debug, Clone)]
pub struct BarsData {
    pub train: Corpus,
    pub test: Corpus,
    pub truth: Truth,
}

fn bars_vocabulary(grid: usize) -> Result<Vocabulary> {
    let labels = (0..grid * grid).map(|w| format!("r{}c{}", w / grid, w % grid)).collect();
    Vocabulary::with_labels(labels)
}

/// Generates training and test corpora. Abnormal documents occur only in the
/// test part.
pub fn generate_bars<R: Rng + ?Sized>(spec: &BarsSpec, hyper: &HyperParams, rng: &mut R) -> Result<BarsData> {
    spec.validate()?;
    let total = spec.train_docs + spec.test_docs;
    let mut abnormal = vec![false; total];
    match &spec.abnormal_positions {
        Some(positions) => {
            for &p in positions {
                abnormal[spec.train_docs + p] = true;
            }
        }
        None => {
            let count = (spec.abnormal_fraction * spec.test_docs as f64).round() as usize;
            for p in sample(rng, spec.test_docs, count.min(spec.test_docs)) {
                abnormal[spec.train_docs + p] = true;
            }
        }
    }

    let bars = bar_topics(spec.grid);
    let mut gen = Generator::new(*hyper, spec.mode, spec.vocab_size(), TopicSource::Fixed(bars))?;
    let mut allowed = Vec::with_capacity(spec.num_bars());
    for (j, &is_abnormal) in abnormal.iter().enumerate() {
        let len = rng.random_range(spec.doc_len.0..=spec.doc_len.1);
        let law = if is_abnormal {
            allowed.clear();
            allowed.extend((0..spec.num_bars()).filter(|&b| {
                j == 0
                    || !gen.state.doc(j - 1).tables().iter().any(|t| gen.topic_atom[t.topic as usize] == Some(b))
            }));
            if allowed.is_empty() {
                return Err(Error::Generation(format!(
                    "document {j}: every bar was used by the previous document"
                )));
            }
            TopicLaw::Relabel(&allowed)
        } else {
            TopicLaw::Model
        };
        gen.generate_doc(len, law, rng)?;
    }
    let generated = gen.into_generated()?;

    let mut docs = Vec::with_capacity(total);
    let mut truth_docs = Vec::with_capacity(total);
    for (j, doc) in generated.corpus.documents().iter().enumerate() {
        let label = if abnormal[j] { Label::Abnormal } else { Label::Normal };
        let rest = generated.state.doc(j);
        let tables = rest
            .tables()
            .iter()
            .map(|t| {
                let bar = generated.topic_atom[t.topic as usize]
                    .ok_or_else(|| Error::Internal("bars topic without an atom".into()))?;
                Ok((bar, t.customers))
            })
            .collect::<Result<Vec<_>>>()?;
        let seats = (0..doc.len())
            .map(|i| rest.seat_of(i).map(|t| t as u32))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Internal("unseated token in generated data".into()))?;
        truth_docs.push(TruthDoc { label, tables, seats });
        docs.push(Document::new(j, doc.tokens.clone()).with_label(label));
    }
    let test = docs.split_off(spec.train_docs);
    let vocab = bars_vocabulary(spec.grid)?;
    Ok(BarsData {
        train: Corpus::new(vocab.clone(), docs)?,
        test: Corpus::new(vocab, test)?,
        truth: Truth {
            hyper: *hyper,
            mode: spec.mode,
            grid: spec.grid,
            train_docs: spec.train_docs,
            docs: truth_docs,
        },
    })
}

/// Scores `corpus` against the true bars and true assignments, where
/// `corpus` holds the truth's documents starting at `offset`.
///
/// Each document's log-likelihood is its words under the true bars plus the
/// log probability of its table bars given everything before them, under the
/// law that generated normal documents. Divided by the length as usual.
pub fn true_model_score(truth: &Truth, corpus: &Corpus, offset: usize) -> Result<Vec<DocResult>> {
    let grid = truth.grid;
    if corpus.vocab_size() != grid * grid {
        return Err(Error::VocabMismatch {
            model: grid * grid,
            data: corpus.vocab_size(),
        });
    }
    if offset + corpus.len() > truth.docs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} documents at offset {offset} exceed the {} in the truth",
            corpus.len(),
            truth.docs.len()
        )));
    }
    let bars = bar_topics(grid);
    let num_bars = bars.len();
    let h = truth.hyper;
    let base = h.gamma / num_bars as f64;

    let mut m_dot = vec![0u32; num_bars];
    let mut prev = vec![0u32; num_bars];
    let mut results = Vec::with_capacity(corpus.len());
    for (j, tdoc) in truth.docs.iter().enumerate().take(offset + corpus.len()) {
        if tdoc.tables.iter().any(|t| t.0 >= num_bars) {
            return Err(Error::InvalidInput(format!("truth document {j} names a bar out of range")));
        }
        let prev_total: u32 = prev.iter().sum();
        let mut local = vec![0u32; num_bars];
        let mut log_prior = 0.0;
        for (n, &(b, _)) in tdoc.tables.iter().enumerate() {
            let m_total: u32 = m_dot.iter().sum();
            let (w, den) = match truth.mode {
                Mode::Dynamic => (
                    local[b] as f64 + prev[b] as f64 + h.delta * m_dot[b] as f64,
                    n as f64 + prev_total as f64 + h.delta * m_total as f64 + h.gamma,
                ),
                Mode::Hdp => (m_dot[b] as f64, m_total as f64 + h.gamma),
            };
            log_prior += ((w + base) / den).ln();
            local[b] += 1;
            m_dot[b] += 1;
        }

        if j >= offset {
            let doc = &corpus.documents()[j - offset];
            if doc.len() != tdoc.seats.len() {
                return Err(Error::DimensionMismatch(format!(
                    "document {} has {} tokens, truth has {}",
                    doc.index,
                    doc.len(),
                    tdoc.seats.len()
                )));
            }
            if doc.is_empty() {
                results.push(DocResult::undefined(doc.index, doc.label));
            } else {
                let mut loglik = log_prior;
                for (&w, &t) in doc.tokens.iter().zip(&tdoc.seats) {
                    let &(b, _) = tdoc.tables.get(t as usize).ok_or_else(|| {
                        Error::InvalidInput(format!("truth document {j} seats a token at missing table {t}"))
                    })?;
                    let p = bars[b][w as usize];
                    if p == 0.0 {
                        return Err(Error::DimensionMismatch(format!(
                            "document {}: word {w} cannot come from bar {b}; corpus and truth are misaligned",
                            doc.index
                        )));
                    }
                    loglik += p.ln();
                }
                let mut r = DocResult::from_normalized(doc.index, loglik / doc.len() as f64, doc.label);
                r.sample_logliks = vec![loglik];
                results.push(r);
            }
        }
        prev = local;
    }
    Ok(results)
}

const TRUTH_MAGIC: &str = "dynhdp-truth v1";

pub fn format_truth(truth: &Truth) -> String {
    let h = &truth.hyper;
    let mut out = format!("{TRUTH_MAGIC}\n");
    let _ = writeln!(out, "mode {}", truth.mode);
    let _ = writeln!(
        out,
        "hyper alpha={:?} gamma={:?} delta={:?} eta={:?}",
        h.alpha, h.gamma, h.delta, h.eta
    );
    let _ = writeln!(out, "bars grid={} train={} docs={}", truth.grid, truth.train_docs, truth.docs.len());
    for (j, d) in truth.docs.iter().enumerate() {
        let tables: Vec<String> = d.tables.iter().map(|(b, c)| format!("{b}:{c}")).collect();
        let seats: Vec<String> = d.seats.iter().map(u32::to_string).collect();
        let _ = writeln!(
            out,
            "doc {j} {} tables={} seats={}",
            d.label,
            tables.join(","),
            seats.join(",")
        );
    }
    out.push_str("end\n");
    out
}

fn truth_err(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRecord {
        line,
        reason: reason.into(),
    }
}

fn kv<'a>(line: usize, field: Option<&'a str>, key: &str) -> Result<&'a str> {
    field
        .and_then(|f| f.strip_prefix(key))
        .and_then(|f| f.strip_prefix('='))
        .ok_or_else(|| truth_err(line, format!("expected `{key}=`")))
}

fn num<T: std::str::FromStr>(line: usize, s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| truth_err(line, format!("bad {what} {s:?}")))
}

pub fn parse_truth(text: &str) -> Result<Truth> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let mut next = |what: &str| lines.next().ok_or_else(|| truth_err(0, format!("unexpected end of file, expected {what}")));

    let (n, magic) = next("header")?;
    if magic != TRUTH_MAGIC {
        return Err(truth_err(n, "not a bars truth file"));
    }
    let (n, mode) = next("mode")?;
    let mode: Mode = mode
        .strip_prefix("mode ")
        .ok_or_else(|| truth_err(n, "expected `mode`"))?
        .parse()
        .map_err(|_| truth_err(n, "bad mode"))?;

    let (n, hyper_line) = next("hyper")?;
    let mut f = hyper_line
        .strip_prefix("hyper ")
        .ok_or_else(|| truth_err(n, "expected `hyper`"))?
        .split_whitespace();
    let hyper = HyperParams {
        alpha: num(n, kv(n, f.next(), "alpha")?, "alpha")?,
        gamma: num(n, kv(n, f.next(), "gamma")?, "gamma")?,
        delta: num(n, kv(n, f.next(), "delta")?, "delta")?,
        eta: num(n, kv(n, f.next(), "eta")?, "eta")?,
    };
    hyper.validate().map_err(|e| truth_err(n, e.to_string()))?;

    let (n, bars_line) = next("bars")?;
    let mut f = bars_line
        .strip_prefix("bars ")
        .ok_or_else(|| truth_err(n, "expected `bars`"))?
        .split_whitespace();
    let grid: usize = num(n, kv(n, f.next(), "grid")?, "grid")?;
    let train_docs: usize = num(n, kv(n, f.next(), "train")?, "train")?;
    let count: usize = num(n, kv(n, f.next(), "docs")?, "docs")?;
    if !(2..=1024).contains(&grid) {
        return Err(truth_err(n, format!("grid {grid} out of range")));
    }
    if train_docs > count || count > text.len() {
        return Err(truth_err(n, "document counts are inconsistent"));
    }

    let mut docs = Vec::with_capacity(count);
    for j in 0..count {
        let (n, line) = next("doc")?;
        let mut f = line.split_whitespace();
        if f.next() != Some("doc") {
            return Err(truth_err(n, "expected `doc`"));
        }
        let id: usize = num(n, f.next().unwrap_or(""), "document id")?;
        if id != j {
            return Err(truth_err(n, format!("expected doc {j}, got {id}")));
        }
        let label: Label = num(n, f.next().unwrap_or(""), "label")?;
        let tables = kv(n, f.next(), "tables")?;
        let tables = if tables.is_empty() {
            Vec::new()
        } else {
            tables
                .split(',')
                .map(|t| {
                    let (b, c) = t.split_once(':').ok_or_else(|| truth_err(n, format!("bad table {t:?}")))?;
                    let b: usize = num(n, b, "bar")?;
                    let c: u32 = num(n, c, "customer count")?;
                    if b >= 2 * grid || c == 0 {
                        return Err(truth_err(n, format!("bad table {t:?}")));
                    }
                    Ok((b, c))
                })
                .collect::<Result<Vec<_>>>()?
        };
        let seats = kv(n, f.next(), "seats")?;
        let seats = if seats.is_empty() {
            Vec::new()
        } else {
            seats.split(',').map(|s| num(n, s, "seat")).collect::<Result<Vec<u32>>>()?
        };
        if f.next().is_some() {
            return Err(truth_err(n, "trailing fields"));
        }
        let mut counts = vec![0u32; tables.len()];
        for &s in &seats {
            *counts
                .get_mut(s as usize)
                .ok_or_else(|| truth_err(n, format!("seat {s} names a missing table")))? += 1;
        }
        if counts.iter().zip(&tables).any(|(&c, t)| c != t.1) {
            return Err(truth_err(n, "table customer counts disagree with seats"));
        }
        docs.push(TruthDoc { label, tables, seats });
    }
    let (n, end) = next("end")?;
    if end != "end" {
        return Err(truth_err(n, "expected `end`"));
    }
    for (n, rest) in lines {
        if !rest.trim().is_empty() {
            return Err(truth_err(n, "trailing content after `end`"));
        }
    }
    Ok(Truth {
        hyper,
        mode,
        grid,
        train_docs,
        docs,
    })
}

pub fn save_truth(truth: &Truth, path: &Path) -> Result<()> {
    std::fs::write(path, format_truth(truth)).map_err(|e| Error::io(path, e))
}

pub fn load_truth(path: &Path) -> Result<Truth> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_truth(&text).map_err(|e| e.at_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn small_spec() -> BarsSpec {
        BarsSpec {
            train_docs: 20,
            test_docs: 30,
            doc_len: (10, 30),
            abnormal_fraction: 0.2,
            ..Default::default()
        }
    }

    #[test]
    fn bars_are_uniform_rows_and_columns() {
        let bars = bar_topics(5);
        assert_eq!(bars.len(), 10);
        for phi in &bars {
            assert!((phi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(phi.iter().filter(|&&p| p == 0.2).count(), 5);
        }
        assert!((0..5).all(|w| bars[0][w] == 0.2));
        assert!((5..25).all(|w| bars[0][w] == 0.0));
        assert!([0, 5, 10, 15, 20].iter().all(|&w| bars[5][w] == 0.2));
    }

    #[test]
    fn abnormal_documents_avoid_previous_bars() {
        let spec = small_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = generate_bars(&spec, &BarsSpec::default_hyper(), &mut rng).unwrap();
        assert_eq!(data.train.vocab_size(), 25);
        assert!(data.train.documents().iter().all(|d| d.label == Label::Normal));
        let abnormal = data.test.documents().iter().filter(|d| d.label == Label::Abnormal).count();
        assert_eq!(abnormal, 6);
        let docs = &data.truth.docs;
        for j in 1..docs.len() {
            assert_eq!(docs[j].label == Label::Abnormal, j >= 20 && data.test.documents()[j - 20].label == Label::Abnormal);
            if docs[j].label == Label::Abnormal {
                let prev: Vec<usize> = docs[j - 1].bars_used().collect();
                assert!(docs[j].bars_used().all(|b| !prev.contains(&b)));
            }
        }
    }

    #[test]
    fn explicit_positions_and_zero_fraction() {
        let mut spec = small_spec();
        spec.abnormal_positions = Some(vec![0, 7]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = generate_bars(&spec, &BarsSpec::default_hyper(), &mut rng).unwrap();
        let flagged: Vec<usize> = data
            .test
            .documents()
            .iter()
            .filter(|d| d.label == Label::Abnormal)
            .map(|d| d.index)
            .collect();
        assert_eq!(flagged, vec![0, 7]);

        spec.abnormal_positions = None;
        spec.abnormal_fraction = 0.0;
        let data = generate_bars(&spec, &BarsSpec::default_hyper(), &mut rng).unwrap();
        assert!(data.test.documents().iter().all(|d| d.label == Label::Normal));

        spec.abnormal_positions = Some(vec![30]);
        assert!(generate_bars(&spec, &BarsSpec::default_hyper(), &mut rng).is_err());
    }

    #[test]
    fn word_frequencies_match_assigned_bars() {
        let spec = BarsSpec {
            train_docs: 1000,
            test_docs: 0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data = generate_bars(&spec, &BarsSpec::default_hyper(), &mut rng).unwrap();
        let bars = bar_topics(5);
        let mut observed = [0.0f64; 25];
        let mut expected = [0.0f64; 25];
        for (doc, truth) in data.train.documents().iter().zip(&data.truth.docs) {
            for (&w, &t) in doc.tokens.iter().zip(&truth.seats) {
                observed[w as usize] += 1.0;
                let b = truth.tables[t as usize].0;
                for (e, p) in expected.iter_mut().zip(&bars[b]) {
                    *e += p;
                }
            }
        }
        assert_eq!(observed.iter().sum::<f64>(), 1e5);
        let stat: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e).powi(2) / e).sum();
        let p = 1.0 - ChiSquared::new(24.0).unwrap().cdf(stat);
        assert!(p > 0.01, "chi-square {stat}, p = {p}");
    }

    #[test]
    fn single_token_truth_score() {
        let h = HyperParams::default();
        let truth = Truth {
            hyper: h,
            mode: Mode::Dynamic,
            grid: 5,
            train_docs: 0,
            docs: vec![TruthDoc {
                label: Label::Normal,
                tables: vec![(3, 1)],
                seats: vec![0],
            }],
        };
        let corpus = Corpus::from_token_lists(25, vec![vec![16]]).unwrap();
        let r = &true_model_score(&truth, &corpus, 0).unwrap()[0];
        // first table anywhere: only the base measure contributes
        let expected = -(0.2f64.ln()) - ((h.gamma / 10.0) / h.gamma).ln();
        assert!((r.abnormality_score - expected).abs() < 1e-12);
    }

    #[test]
    fn unexpected_bars_score_worse() {
        let truth_doc = |bar: usize| TruthDoc {
            label: Label::Normal,
            tables: vec![(bar, 5)],
            seats: vec![0; 5],
        };
        let truth = |second: usize| Truth {
            hyper: HyperParams::default(),
            mode: Mode::Dynamic,
            grid: 5,
            train_docs: 1,
            docs: vec![truth_doc(0), truth_doc(second)],
        };
        let matched = Corpus::from_token_lists(25, vec![vec![0, 1, 2, 3, 4]]).unwrap();
        let other = Corpus::from_token_lists(25, vec![vec![5, 6, 7, 8, 9]]).unwrap();
        let same = true_model_score(&truth(0), &matched, 1).unwrap()[0].abnormality_score;
        let shifted = true_model_score(&truth(1), &other, 1).unwrap()[0].abnormality_score;
        assert!(shifted > same);
        assert!(true_model_score(&truth(0), &other, 1).is_err());
    }

    #[test]
    fn empty_document_is_undefined() {
        let truth = Truth {
            hyper: HyperParams::default(),
            mode: Mode::Dynamic,
            grid: 5,
            train_docs: 0,
            docs: vec![TruthDoc {
                label: Label::Abnormal,
                tables: vec![],
                seats: vec![],
            }],
        };
        let corpus = Corpus::from_token_lists(25, vec![vec![]]).unwrap();
        assert!(!true_model_score(&truth, &corpus, 0).unwrap()[0].defined);
    }

    #[test]
    fn truth_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = generate_bars(&small_spec(), &BarsSpec::default_hyper(), &mut rng).unwrap();
        let text = format_truth(&data.truth);
        assert_eq!(parse_truth(&text).unwrap(), data.truth);
        assert!(parse_truth(&text.replacen("seats=0", "seats=9", 1)).is_err());
        assert!(parse_truth(&text[..text.len() - 5]).is_err());
        let scores = true_model_score(&data.truth, &data.test, data.truth.train_docs).unwrap();
        assert_eq!(scores.len(), 30);
        assert!(scores.iter().all(|r| r.defined && r.abnormality_score.is_finite()));
    }
}
