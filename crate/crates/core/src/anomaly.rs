//! Abnormality scores from the online sampler, and ROC evaluation.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Label};
use crate::error::{Error, Result};
use crate::inference::{online_infer, sample_document, GibbsConfig, ModelSnapshot};

/// Score of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocResult {
    pub doc_index: usize,
    /// Log predictive likelihood divided by the document length.
    pub normalized_loglik: f64,
    /// `-normalized_loglik`; larger is more abnormal.
    pub abnormality_score: f64,
    /// False for empty documents, whose score carries no information.
    pub defined: bool,
    pub sample_logliks: Vec<f64>,
    pub label: Label,
}

impl DocResult {
    pub fn undefined(doc_index: usize, label: Label) -> Self {
        DocResult {
            doc_index,
            normalized_loglik: f64::NAN,
            abnormality_score: f64::NAN,
            defined: false,
            sample_logliks: Vec::new(),
            label,
        }
    }

    pub fn from_normalized(doc_index: usize, normalized_loglik: f64, label: Label) -> Self {
        DocResult {
            doc_index,
            normalized_loglik,
            abnormality_score: -normalized_loglik,
            defined: true,
            sample_logliks: Vec::new(),
            label,
        }
    }
}

/// Harmonic-mean estimate of `log p(x)` from per-sample log-likelihoods,
/// divided by the document length `n`.
///
/// Returns `None` when `n == 0`.
pub fn predictive_loglik(samples: &[f64], n: usize) -> Result<Option<f64>> {
    if n == 0 {
        return Ok(None);
    }
    if samples.is_empty() {
        return Err(Error::InvalidInput("harmonic mean needs at least one sample".into()));
    }
    if let Some(bad) = samples.iter().find(|l| !l.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite sample log-likelihood {bad}")));
    }
    // log mean exp(-l), shifted by the largest -l
    let shift = samples.iter().map(|l| -l).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = samples.iter().map(|l| (-l - shift).exp()).sum();
    let log_mean = shift + (sum / samples.len() as f64).ln();
    Ok(Some(-log_mean / n as f64))
}

/// Scores the documents of `corpus` in order with the per-document sampler.
///
/// With `update` the snapshot absorbs each document after it is scored, so
/// later documents see the new topics; otherwise the snapshot is left as is.
/// The previous document's tables are chained forward either way.
pub fn score_corpus(
    snapshot: &mut ModelSnapshot,
    corpus: &Corpus,
    cfg: &GibbsConfig,
    update: bool,
) -> Result<Vec<DocResult>> {
    cfg.validate()?;
    if corpus.vocab_size() != snapshot.vocab_size() {
        return Err(Error::VocabMismatch {
            model: snapshot.vocab_size(),
            data: corpus.vocab_size(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut prev = snapshot.m_last().to_vec();
    let mut results = Vec::with_capacity(corpus.len());
    for doc in corpus.documents() {
        if doc.is_empty() {
            results.push(DocResult::undefined(doc.index, doc.label));
            continue;
        }
        let post = if update {
            online_infer(snapshot, &prev, doc, cfg, &mut rng)?
        } else {
            sample_document(snapshot, &prev, doc, cfg, &mut rng)?
        };
        let normalized = predictive_loglik(&post.sample_logliks, doc.len())?
            .ok_or_else(|| Error::Internal("non-empty document has no length".into()))?;
        let mut result = DocResult::from_normalized(doc.index, normalized, doc.label);
        result.sample_logliks = post.sample_logliks;
        results.push(result);
        prev = post.local_counts;
        if !update {
            // topics opened by this document do not exist for the next one
            prev.truncate(snapshot.num_topics());
        }
    }
    Ok(results)
}

/// One operating point: documents scoring at least `threshold` are flagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// From `(0,0)` at threshold `+inf` to `(1,1)`.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC curve of `(score, is_abnormal)` pairs, sweeping every distinct score.
/// Tied scores move the curve diagonally.
pub fn roc_auc(scores: &[(f64, bool)]) -> Result<RocCurve> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidInput(format!("score {s} is not a number")));
    }
    let positives = scores.iter().filter(|(_, p)| *p).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidInput(format!(
            "ROC needs both classes, got {positives} abnormal and {negatives} normal"
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area2 = 0.0; // twice the area, in units of one positive-negative pair
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        let (tp0, fp0) = (tp, fp);
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) * (tp + tp0)) as f64;
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    Ok(RocCurve {
        points,
        auc: area2 / (2.0 * positives as f64 * negatives as f64),
    })
}

/// Pairs defined scores with their labels for [`roc_auc`]; unlabeled and
/// undefined documents are skipped.
pub fn labeled_scores(results: &[DocResult]) -> Vec<(f64, bool)> {
    results
        .iter()
        .filter(|r| r.defined && r.label != Label::Unlabeled)
        .map(|r| (r.abnormality_score, r.label == Label::Abnormal))
        .collect()
}

const SCORES_HEADER: &str = "doc_index,score,defined,label";
const ROC_HEADER: &str = "threshold,fpr,tpr";
const LABELS_HEADER: &str = "doc_index,label";

pub fn format_scores(results: &[DocResult]) -> String {
    let mut out = format!("{SCORES_HEADER}\n");
    for r in results {
        let score = if r.defined {
            format!("{:?}", r.abnormality_score)
        } else {
            String::new()
        };
        let _ = writeln!(out, "{},{},{},{}", r.doc_index, score, r.defined, r.label);
    }
    out
}

fn csv_err(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRecord {
        line,
        reason: reason.into(),
    }
}

/// Data rows of a CSV with the given header, as `(line number, fields)`.
fn csv_rows(text: &str, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let found = reader.headers().map_err(|e| csv_err(1, e.to_string()))?;
    if found.iter().ne(header.split(',')) {
        return Err(csv_err(1, format!("expected header `{header}`")));
    }
    reader
        .records()
        .map(|r| {
            let record = r.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                csv_err(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            Ok((line, record.iter().map(str::to_owned).collect()))
        })
        .collect()
}

/// Parses a scores CSV. Per-sample log-likelihoods are not stored and come
/// back empty.
pub fn parse_scores(text: &str) -> Result<Vec<DocResult>> {
    csv_rows(text, SCORES_HEADER)?
        .into_iter()
        .map(|(n, f)| {
            let doc_index = f[0].parse().map_err(|_| csv_err(n, format!("bad doc_index {:?}", f[0])))?;
            let defined: bool = f[2].parse().map_err(|_| csv_err(n, format!("bad defined flag {:?}", f[2])))?;
            let label: Label = f[3].parse().map_err(|_| csv_err(n, format!("bad label {:?}", f[3])))?;
            if !defined {
                if !f[1].is_empty() {
                    return Err(csv_err(n, "undefined row carries a score"));
                }
                return Ok(DocResult::undefined(doc_index, label));
            }
            let score: f64 = f[1].parse().map_err(|_| csv_err(n, format!("bad score {:?}", f[1])))?;
            if !score.is_finite() {
                return Err(csv_err(n, format!("score {score} is not finite")));
            }
            Ok(DocResult::from_normalized(doc_index, -score, label))
        })
        .collect()
}

pub fn format_labels(labels: &[(usize, Label)]) -> String {
    let mut out = format!("{LABELS_HEADER}\n");
    for (j, l) in labels {
        let _ = writeln!(out, "{j},{l}");
    }
    out
}

pub fn parse_labels(text: &str) -> Result<Vec<(usize, Label)>> {
    csv_rows(text, LABELS_HEADER)?
        .into_iter()
        .map(|(n, f)| {
            let j = f[0].parse().map_err(|_| csv_err(n, format!("bad doc_index {:?}", f[0])))?;
            let l = f[1].parse().map_err(|_| csv_err(n, format!("bad label {:?}", f[1])))?;
            Ok((j, l))
        })
        .collect()
}

pub fn format_roc(curve: &RocCurve) -> String {
    let mut out = format!("{ROC_HEADER}\n");
    for p in &curve.points {
        let _ = writeln!(out, "{:?},{:?},{:?}", p.threshold, p.fpr, p.tpr);
    }
    out
}

pub fn parse_roc(text: &str) -> Result<Vec<RocPoint>> {
    csv_rows(text, ROC_HEADER)?
        .into_iter()
        .map(|(n, f)| {
            let num = |s: &str| s.parse::<f64>().map_err(|_| csv_err(n, format!("bad number {s:?}")));
            Ok(RocPoint {
                threshold: num(&f[0])?,
                fpr: num(&f[1])?,
                tpr: num(&f[2])?,
            })
        })
        .collect()
}

pub fn load_scores(path: &Path) -> Result<Vec<DocResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text).map_err(|e| e.at_path(path))
}

pub fn load_labels(path: &Path) -> Result<Vec<(usize, Label)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text).map_err(|e| e.at_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute_force(scores: &[(f64, bool)]) -> f64 {
        let mut hits = 0.0;
        let mut pairs = 0.0;
        for a in scores.iter().filter(|s| s.1) {
            for n in scores.iter().filter(|s| !s.1) {
                pairs += 1.0;
                if a.0 > n.0 {
                    hits += 1.0;
                } else if a.0 == n.0 {
                    hits += 0.5;
                }
            }
        }
        hits / pairs
    }

    #[test]
    fn harmonic_mean_examples() {
        assert_eq!(predictive_loglik(&[-3.0; 7], 2).unwrap(), Some(-1.5));
        assert_eq!(predictive_loglik(&[-4.5], 3).unwrap(), Some(-1.5));
        let got = predictive_loglik(&[0.5f64.ln(), 0.25f64.ln()], 1).unwrap().unwrap();
        assert!((got + 3f64.ln()).abs() < 1e-12);
        assert_eq!(predictive_loglik(&[], 0).unwrap(), None);
        assert!(predictive_loglik(&[], 4).is_err());
    }

    #[test]
    fn harmonic_mean_is_stable_and_order_free() {
        let a = predictive_loglik(&[-1e6, -2.0, -5e5], 10).unwrap().unwrap();
        let b = predictive_loglik(&[-5e5, -1e6, -2.0], 10).unwrap().unwrap();
        assert!(a.is_finite());
        assert_eq!(a, b);
        // dominated by the smallest likelihood
        assert!((a - (-1e6 + 3f64.ln()) / 10.0).abs() < 1e-9);
    }

    #[test]
    fn auc_examples() {
        let c = roc_auc(&[(0.9, true), (0.8, false), (0.7, true), (0.6, false)]).unwrap();
        assert!((c.auc - 0.75).abs() < 1e-15);
        assert_eq!(roc_auc(&[(2.0, true), (1.0, false), (3.0, true)]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[(1.0, true), (1.0, false)]).unwrap().auc, 0.5);
        assert!(roc_auc(&[(1.0, true)]).is_err());
        assert!(roc_auc(&[]).is_err());
        assert!(roc_auc(&[(f64::NAN, true), (0.0, false)]).is_err());
    }

    #[test]
    fn auc_matches_pair_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.random_range(2..=200);
            let mut s: Vec<(f64, bool)> = (0..n)
                .map(|_| (rng.random_range(0..20) as f64 / 4.0, rng.random_bool(0.3)))
                .collect();
            s[0].1 = true;
            s[1].1 = false;
            let c = roc_auc(&s).unwrap();
            assert!((c.auc - brute_force(&s)).abs() < 1e-12);
            let first = c.points[0];
            let last = *c.points.last().unwrap();
            assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
            assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
            assert!(c.points.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
            let shifted: Vec<_> = s.iter().map(|&(x, l)| (x.exp() * 3.0 + 1.0, l)).collect();
            assert!((roc_auc(&shifted).unwrap().auc - c.auc).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_csv_round_trip() {
        let rows = vec![
            DocResult::from_normalized(0, -1.25, Label::Normal),
            DocResult::undefined(1, Label::Abnormal),
            DocResult::from_normalized(2, -0.1 / 3.0, Label::Unlabeled),
        ];
        let text = format_scores(&rows);
        assert!(text.starts_with("doc_index,score,defined,label\n0,1.25,true,normal\n1,,false,abnormal\n"));
        let back = parse_scores(&text).unwrap();
        assert_eq!(back[0], rows[0]);
        assert_eq!(back[2], rows[2]);
        assert!(!back[1].defined);
        assert!(parse_scores("doc_index,score,defined,label\n0,x,true,normal\n").is_err());
        assert!(parse_scores("nope\n").is_err());
        assert_eq!(format_scores(&[]), "doc_index,score,defined,label\n");
    }

    #[test]
    fn labels_and_roc_csv() {
        let labels = vec![(0, Label::Normal), (3, Label::Abnormal)];
        assert_eq!(parse_labels(&format_labels(&labels)).unwrap(), labels);
        let c = roc_auc(&[(0.5, true), (0.1, false)]).unwrap();
        let pts = parse_roc(&format_roc(&c)).unwrap();
        assert_eq!(pts, c.points);
    }
}
