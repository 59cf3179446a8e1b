//! Parser checks shared by the fuzz targets and the seed replay test: any
//! input may be rejected, but an accepted one must render to text that
//! parses again and renders identically.

use dynhdp::anomaly::{format_labels, format_roc, format_scores, parse_labels, parse_roc, parse_scores, RocCurve};
use dynhdp::corpus::{format_corpus, parse_corpus};
use dynhdp::features::{format_pgm, parse_pgm};
use dynhdp::inference::{format_snapshot, parse_snapshot};
use dynhdp::synthetic::{format_truth, parse_truth};
use dynhdp::CorpusFormat;

fn stable<T, E: std::fmt::Debug>(first: String, parse: impl Fn(&str) -> Result<T, E>, render: impl Fn(&T) -> String) {
    let again = parse(&first).unwrap_or_else(|e| panic!("rendered output rejected: {e:?}\n{first}"));
    assert_eq!(render(&again), first, "rendering is not stable");
}

pub fn corpus(data: &[u8], format: CorpusFormat) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = parse_corpus(text, format) {
        stable(format_corpus(&c), |t| parse_corpus(t, CorpusFormat::TokenList), format_corpus);
    }
}

pub fn snapshot(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = parse_snapshot(text) {
        stable(format_snapshot(&s), parse_snapshot, format_snapshot);
    }
}

pub fn truth(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = parse_truth(text) {
        stable(format_truth(&t), parse_truth, format_truth);
    }
}

pub fn pgm(data: &[u8]) {
    if let Ok(frame) = parse_pgm(data) {
        let bytes = format_pgm(&frame);
        let again = parse_pgm(&bytes).expect("rendered PGM rejected");
        assert_eq!((again.width(), again.height()), (frame.width(), frame.height()));
        assert_eq!(format_pgm(&again), bytes, "rendering is not stable");
    }
}

pub fn scores(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = parse_scores(text) {
        stable(format_scores(&r), parse_scores, |r| format_scores(r));
    }
}

pub fn labels(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(l) = parse_labels(text) {
        stable(format_labels(&l), parse_labels, |l| format_labels(l));
    }
}

pub fn roc(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let render = |points: &Vec<_>| {
        format_roc(&RocCurve {
            points: points.clone(),
            auc: 0.0,
        })
    };
    if let Ok(p) = parse_roc(text) {
        stable(render(&p), parse_roc, render);
    }
}
