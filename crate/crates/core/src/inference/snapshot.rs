//! Frozen global model state and its text format.
//!
//! ```text
//! dynhdp-snapshot v1
//! mode <hdp|dynamic>
//! hyper alpha=<f64> gamma=<f64> delta=<f64> eta=<f64>
//! training sweeps=<n> burn_in=<n> sample_lag=<n> chains=<n> seed=<u64> docs=<n>
//! vocab <V>
//! topics <K>
//! m_dot <K counts>
//! m_last <K counts>
//! topic <k> total=<n> [<word>:<count> ...]      (K lines, k = 0..K-1, words ascending)
//! end
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::HyperParams;
use crate::crf::{CrfState, Mode};
use crate::error::{Error, Result};

pub const SNAPSHOT_VERSION: u32 = 1;
const MAGIC: &str = "dynhdp-snapshot";

/// Provenance of a trained snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainingMeta {
    pub sweeps: usize,
    pub burn_in: usize,
    pub sample_lag: usize,
    pub chains: usize,
    pub seed: u64,
    pub train_docs: usize,
}

/// Global statistics carried from training into online inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub hyper: HyperParams,
    pub mode: Mode,
    pub meta: TrainingMeta,
    vocab: usize,
    /// Row-major `K x V`.
    topic_word: Vec<u32>,
    topic_total: Vec<u32>,
    m_dot: Vec<u32>,
    m_last: Vec<u32>,
}

impl ModelSnapshot {
    pub fn from_state(state: &CrfState, hyper: &HyperParams, mode: Mode, meta: TrainingMeta) -> Self {
        let k = state.num_topics();
        let m_last = match state.num_docs() {
            0 => vec![0; k],
            n => state.doc(n - 1).topic_tables().to_vec(),
        };
        ModelSnapshot {
            hyper: *hyper,
            mode,
            meta,
            vocab: state.vocab_size(),
            topic_word: (0..k).flat_map(|k| state.topic_words(k).iter().copied()).collect(),
            topic_total: state.topic_total().to_vec(),
            m_dot: state.m_dot().to_vec(),
            m_last,
        }
    }

    /// Snapshot with no topics.
    pub fn empty(vocab: usize, hyper: HyperParams, mode: Mode) -> Self {
        ModelSnapshot {
            hyper,
            mode,
            meta: TrainingMeta::default(),
            vocab,
            topic_word: Vec::new(),
            topic_total: Vec::new(),
            m_dot: Vec::new(),
            m_last: Vec::new(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn num_topics(&self) -> usize {
        self.m_dot.len()
    }

    pub fn m_dot(&self) -> &[u32] {
        &self.m_dot
    }

    pub fn m_last(&self) -> &[u32] {
        &self.m_last
    }

    pub fn topic_total(&self) -> &[u32] {
        &self.topic_total
    }

    pub fn topic_words(&self, k: usize) -> &[u32] {
        &self.topic_word[k * self.vocab..(k + 1) * self.vocab]
    }

    /// Posterior-mean word probability of topic `k`.
    pub fn phi_estimate(&self, k: usize, w: usize) -> f64 {
        let eta = self.hyper.eta;
        (self.topic_word[k * self.vocab + w] as f64 + eta) / (self.topic_total[k] as f64 + self.vocab as f64 * eta)
    }

    /// Dense `K x V` matrix of [`phi_estimate`](Self::phi_estimate).
    pub fn phi_matrix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.topic_word.len());
        for k in 0..self.num_topics() {
            for w in 0..self.vocab {
                out.push(self.phi_estimate(k, w));
            }
        }
        out
    }

    /// Adds one document's final tables and tokens and makes its table counts
    /// the new `m_last`. `local_counts` may be
    /// longer than `K`; extra entries are new topics, appended in order.
    pub(crate) fn absorb(&mut self, local_counts: &[u32], token_topics: &[(usize, u32)]) {
        let k_old = self.num_topics();
        let k_new = local_counts.len().max(k_old);
        if k_new > k_old {
            self.m_dot.resize(k_new, 0);
            self.topic_total.resize(k_new, 0);
            self.m_last.resize(k_new, 0);
            self.topic_word.resize(k_new * self.vocab, 0);
        }
        for (k, &m) in local_counts.iter().enumerate() {
            self.m_dot[k] += m;
        }
        for &(k, w) in token_topics {
            self.topic_word[k * self.vocab + w as usize] += 1;
            self.topic_total[k] += 1;
        }
        self.m_last.iter_mut().for_each(|m| *m = 0);
        self.m_last[..local_counts.len()].copy_from_slice(local_counts);
    }

    fn check(&self) -> Result<()> {
        self.hyper.validate()?;
        let k = self.num_topics();
        if self.vocab == 0 {
            return Err(Error::InvalidInput("snapshot vocabulary is empty".into()));
        }
        if self.topic_total.len() != k || self.m_last.len() != k || self.topic_word.len() != k * self.vocab {
            return Err(Error::InvalidInput("snapshot arrays disagree on K".into()));
        }
        for k in 0..k {
            let sum: u64 = self.topic_words(k).iter().map(|&c| c as u64).sum();
            if sum != self.topic_total[k] as u64 {
                return Err(Error::InvalidInput(format!("topic {k} word counts do not sum to its total")));
            }
        }
        Ok(())
    }
}

pub fn format_snapshot(s: &ModelSnapshot) -> String {
    let mut out = String::new();
    let h = &s.hyper;
    let m = &s.meta;
    let _ = writeln!(out, "{MAGIC} v{SNAPSHOT_VERSION}");
    let _ = writeln!(out, "mode {}", s.mode);
    let _ = writeln!(out, "hyper alpha={} gamma={} delta={} eta={}", h.alpha, h.gamma, h.delta, h.eta);
    let _ = writeln!(
        out,
        "training sweeps={} burn_in={} sample_lag={} chains={} seed={} docs={}",
        m.sweeps, m.burn_in, m.sample_lag, m.chains, m.seed, m.train_docs
    );
    let _ = writeln!(out, "vocab {}", s.vocab);
    let _ = writeln!(out, "topics {}", s.num_topics());
    write_counts(&mut out, "m_dot", &s.m_dot);
    write_counts(&mut out, "m_last", &s.m_last);
    for k in 0..s.num_topics() {
        let _ = write!(out, "topic {k} total={}", s.topic_total[k]);
        for (w, &c) in s.topic_words(k).iter().enumerate() {
            if c > 0 {
                let _ = write!(out, " {w}:{c}");
            }
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

fn write_counts(out: &mut String, key: &str, counts: &[u32]) {
    out.push_str(key);
    for c in counts {
        let _ = write!(out, " {c}");
    }
    out.push('\n');
}

/// Line cursor that reports byte offsets.
struct Lines<'a> {
    text: &'a str,
    offset: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        if self.offset >= self.text.len() {
            return Err(Error::Parse {
                offset: self.text.len(),
                reason: format!("unexpected end of file, expected {what}"),
            });
        }
        let start = self.offset;
        let rest = &self.text[start..];
        let (line, advance) = match rest.find('\n') {
            Some(i) => (&rest[..i], i + 1),
            None => (rest, rest.len()),
        };
        self.offset += advance;
        Ok((start, line))
    }

    /// Next line, which must start with `key `; returns the remainder.
    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (at, line) = self.next_line(key)?;
        match line.strip_prefix(key) {
            Some(rest) if rest.is_empty() || rest.starts_with(' ') => Ok((at, rest.trim_start())),
            _ => Err(parse_err(at, format!("expected `{key}` line"))),
        }
    }
}

fn parse_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        reason: reason.into(),
    }
}

fn parse_num<T: std::str::FromStr>(at: usize, s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| parse_err(at, format!("bad {what} {s:?}")))
}

/// Parses `key=value` fields in the given order.
fn fields<'a>(at: usize, rest: &'a str, keys: &[&str]) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = rest.split_whitespace().collect();
    if parts.len() != keys.len() {
        return Err(parse_err(at, format!("expected fields {keys:?}")));
    }
    parts
        .iter()
        .zip(keys)
        .map(|(p, k)| {
            p.strip_prefix(k)
                .and_then(|v| v.strip_prefix('='))
                .ok_or_else(|| parse_err(at, format!("expected `{k}=`, got {p:?}")))
        })
        .collect()
}

fn parse_counts(at: usize, rest: &str, k: usize, what: &str) -> Result<Vec<u32>> {
    let counts = rest
        .split_whitespace()
        .map(|c| parse_num(at, c, what))
        .collect::<Result<Vec<u32>>>()?;
    if counts.len() != k {
        return Err(parse_err(at, format!("{what} has {} entries, expected {k}", counts.len())));
    }
    Ok(counts)
}

pub fn parse_snapshot(text: &str) -> Result<ModelSnapshot> {
    let mut lines = Lines { text, offset: 0 };

    let (at, header) = lines.next_line("header")?;
    let version = header
        .strip_prefix(MAGIC)
        .and_then(|r| r.strip_prefix(" v"))
        .ok_or_else(|| parse_err(at, "not a snapshot file"))?;
    let version: u32 = parse_num(at, version, "version")?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: SNAPSHOT_VERSION,
        });
    }

    let (at, mode) = lines.keyed("mode")?;
    let mode: Mode = mode.parse().map_err(|_| parse_err(at, format!("bad mode {mode:?}")))?;

    let (at, rest) = lines.keyed("hyper")?;
    let f = fields(at, rest, &["alpha", "gamma", "delta", "eta"])?;
    let hyper = HyperParams {
        alpha: parse_num(at, f[0], "alpha")?,
        gamma: parse_num(at, f[1], "gamma")?,
        delta: parse_num(at, f[2], "delta")?,
        eta: parse_num(at, f[3], "eta")?,
    };
    hyper.validate().map_err(|e| parse_err(at, e.to_string()))?;

    let (at, rest) = lines.keyed("training")?;
    let f = fields(at, rest, &["sweeps", "burn_in", "sample_lag", "chains", "seed", "docs"])?;
    let meta = TrainingMeta {
        sweeps: parse_num(at, f[0], "sweeps")?,
        burn_in: parse_num(at, f[1], "burn_in")?,
        sample_lag: parse_num(at, f[2], "sample_lag")?,
        chains: parse_num(at, f[3], "chains")?,
        seed: parse_num(at, f[4], "seed")?,
        train_docs: parse_num(at, f[5], "docs")?,
    };

    let (at, rest) = lines.keyed("vocab")?;
    let vocab: usize = parse_num(at, rest, "vocab size")?;
    if vocab == 0 {
        return Err(parse_err(at, "vocab size must be at least 1"));
    }
    let (at, rest) = lines.keyed("topics")?;
    let k: usize = parse_num(at, rest, "topic count")?;
    // every topic needs a line, so K is bounded by the input size
    if k > text.len() {
        return Err(parse_err(at, "topic count exceeds file size"));
    }
    if k.checked_mul(vocab).is_none_or(|cells| cells > (1 << 28)) {
        return Err(parse_err(at, "topic-word table too large"));
    }

    let (at, rest) = lines.keyed("m_dot")?;
    let m_dot = parse_counts(at, rest, k, "m_dot")?;
    let (at, rest) = lines.keyed("m_last")?;
    let m_last = parse_counts(at, rest, k, "m_last")?;

    let mut topic_word = vec![0u32; k * vocab];
    let mut topic_total = Vec::with_capacity(k);
    for expected in 0..k {
        let (at, rest) = lines.keyed("topic")?;
        let mut parts = rest.split_whitespace();
        let id: usize = parse_num(at, parts.next().unwrap_or(""), "topic id")?;
        if id != expected {
            return Err(parse_err(at, format!("expected topic {expected}, got {id}")));
        }
        let total = parts
            .next()
            .and_then(|p| p.strip_prefix("total="))
            .ok_or_else(|| parse_err(at, "expected `total=`"))?;
        let total: u32 = parse_num(at, total, "total")?;
        let mut sum = 0u64;
        let mut last_word: Option<usize> = None;
        for pair in parts {
            let (w, c) = pair
                .split_once(':')
                .ok_or_else(|| parse_err(at, format!("expected word:count, got {pair:?}")))?;
            let w: usize = parse_num(at, w, "word id")?;
            let c: u32 = parse_num(at, c, "count")?;
            if w >= vocab {
                return Err(parse_err(at, format!("word {w} out of range for V={vocab}")));
            }
            if last_word.is_some_and(|lw| w <= lw) {
                return Err(parse_err(at, "word ids must be strictly ascending"));
            }
            last_word = Some(w);
            topic_word[expected * vocab + w] = c;
            sum += c as u64;
        }
        if sum != total as u64 {
            return Err(parse_err(at, format!("topic {id} counts sum to {sum}, total says {total}")));
        }
        topic_total.push(total);
    }

    let (at, end) = lines.next_line("end")?;
    if end != "end" {
        return Err(parse_err(at, "expected `end`"));
    }
    if !text[lines.offset..].trim().is_empty() {
        return Err(parse_err(lines.offset, "trailing content after `end`"));
    }

    let snapshot = ModelSnapshot {
        hyper,
        mode,
        meta,
        vocab,
        topic_word,
        topic_total,
        m_dot,
        m_last,
    };
    snapshot.check().map_err(|e| parse_err(at, e.to_string()))?;
    Ok(snapshot)
}

pub fn save_snapshot(snapshot: &ModelSnapshot, path: &Path) -> Result<()> {
    std::fs::write(path, format_snapshot(snapshot)).map_err(|e| Error::io(path, e))
}

pub fn load_snapshot(path: &Path) -> Result<ModelSnapshot> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_snapshot(&text).map_err(|e| e.at_path(path))
}
