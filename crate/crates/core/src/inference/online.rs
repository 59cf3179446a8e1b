//! Per-document Gibbs sampler run against a frozen snapshot.
//!
//! Snapshot topics keep their posterior-mean word distributions while the
//! document is sampled; topics first opened by this document use the
//! base-measure predictive `1/V`. Only after the last sweep are the
//! document's counts folded into the snapshot.

use rand::Rng;

use super::{GibbsConfig, ModelSnapshot};
use crate::corpus::Document;
use crate::crf::{sample_index, sample_log_index, Mode};
use crate::error::{Error, Result};

/// Outcome of sampling one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocPosterior {
    /// Per-sample `log p(words, table topics | seating, past)`.
    pub sample_logliks: Vec<f64>,
    /// Final tables per topic; entries past the snapshot's K are new topics.
    pub local_counts: Vec<u32>,
    /// Final `(topic, word)` of every token.
    pub token_topics: Vec<(usize, u32)>,
    pub num_tokens: usize,
}

impl DocPosterior {
    fn empty(k: usize) -> Self {
        DocPosterior {
            sample_logliks: Vec::new(),
            local_counts: vec![0; k],
            token_topics: Vec::new(),
            num_tokens: 0,
        }
    }
}

struct Table {
    customers: u32,
    topic: usize,
}

/// Read-only view of the snapshot quantities the conditionals use.
struct Frozen<'a> {
    snapshot: &'a ModelSnapshot,
    phi: Vec<f64>,
    prev: Vec<u32>,
    prev_total: f64,
    m_dot_total: f64,
    k_snap: usize,
    inv_v: f64,
}

impl Frozen<'_> {
    fn lik(&self, k: usize, w: usize) -> f64 {
        if k < self.k_snap {
            self.phi[k * self.snapshot.vocab_size() + w]
        } else {
            self.inv_v
        }
    }

    /// Unnormalized topic weight of one more table on topic `k` when the
    /// document already has `local` tables on it, or `None` for a topic the
    /// document opened itself and no longer uses (that case is the new-topic weight).
    fn topic_weight(&self, k: usize, local: u32) -> f64 {
        let h = &self.snapshot.hyper;
        if k >= self.k_snap {
            return match (local, self.snapshot.mode) {
                (0, _) => h.gamma,
                (c, Mode::Dynamic) => (1.0 + h.delta) * c as f64,
                (c, Mode::Hdp) => c as f64,
            };
        }
        let global = self.snapshot.m_dot()[k] as f64;
        match self.snapshot.mode {
            Mode::Dynamic => local as f64 + self.prev[k] as f64 + h.delta * (global + local as f64),
            Mode::Hdp => global + local as f64,
        }
    }

    fn normalizer(&self, local_total: u32) -> f64 {
        let h = &self.snapshot.hyper;
        let lt = local_total as f64;
        match self.snapshot.mode {
            Mode::Dynamic => lt + self.prev_total + h.delta * (self.m_dot_total + lt) + h.gamma,
            Mode::Hdp => self.m_dot_total + lt + h.gamma,
        }
    }
}

struct DocChain<'a> {
    frozen: Frozen<'a>,
    words: &'a [u32],
    seats: Vec<usize>,
    tables: Vec<Table>,
    /// Tables per topic, snapshot topics first.
    local: Vec<u32>,
    local_total: u32,
    scratch: Vec<f64>,
}

impl<'a> DocChain<'a> {
    fn num_topics(&self) -> usize {
        self.local.len()
    }

    fn unseat(&mut self, i: usize) {
        let t = self.seats[i];
        self.tables[t].customers -= 1;
        if self.tables[t].customers == 0 {
            let k = self.tables[t].topic;
            self.drop_table_topic(k);
            let last = self.tables.len() - 1;
            self.tables.swap_remove(t);
            if t != last {
                for s in &mut self.seats {
                    if *s == last {
                        *s = t;
                    }
                }
            }
        }
        self.seats[i] = usize::MAX;
    }

    /// Removes one table's worth of topic `k`, discarding a document-local
    /// topic that no table uses any more.
    fn drop_table_topic(&mut self, k: usize) {
        self.local[k] -= 1;
        self.local_total -= 1;
        if k >= self.frozen.k_snap && self.local[k] == 0 {
            let last = self.local.len() - 1;
            self.local.swap_remove(k);
            if k != last {
                for table in &mut self.tables {
                    if table.topic == last {
                        table.topic = k;
                    }
                }
            }
        }
    }

    fn add_table_topic(&mut self, k: usize) -> usize {
        let k = if k == self.local.len() {
            self.local.push(0);
            k
        } else {
            k
        };
        self.local[k] += 1;
        self.local_total += 1;
        k
    }

    /// Topic weights for one more table given the current local counts, with
    /// the brand-new topic last.
    fn fill_topic_weights(&mut self, out: &mut Vec<f64>) {
        out.clear();
        for k in 0..self.num_topics() {
            let c = self.local[k];
            // a document-local topic with tables is an ordinary topic here
            out.push(self.frozen.topic_weight(k, c));
        }
        out.push(self.frozen.snapshot.hyper.gamma);
    }

    fn place_token<R: Rng + ?Sized>(&mut self, i: usize, rng: &mut R, prior: &mut Vec<f64>) -> Result<()> {
        let w = self.words[i] as usize;
        self.fill_topic_weights(prior);
        let k_count = self.num_topics();
        let den = self.frozen.normalizer(self.local_total);
        let mut mass = prior[k_count] * self.frozen.inv_v;
        for (k, p) in prior[..k_count].iter().enumerate() {
            mass += p * self.frozen.lik(k, w);
        }

        self.scratch.clear();
        for table in &self.tables {
            self.scratch.push(table.customers as f64 * self.frozen.lik(table.topic, w));
        }
        self.scratch.push(self.frozen.snapshot.hyper.alpha * mass / den);
        let pick = sample_index(rng, &self.scratch)?;
        if pick < self.tables.len() {
            self.tables[pick].customers += 1;
            self.seats[i] = pick;
            return Ok(());
        }

        self.scratch.clear();
        for (k, p) in prior[..k_count].iter().enumerate() {
            self.scratch.push(p * self.frozen.lik(k, w));
        }
        self.scratch.push(prior[k_count] * self.frozen.inv_v);
        let k = sample_index(rng, &self.scratch)?;
        let k = self.add_table_topic(k);
        self.tables.push(Table { customers: 1, topic: k });
        self.seats[i] = self.tables.len() - 1;
        Ok(())
    }

    fn resample_table<R: Rng + ?Sized>(&mut self, t: usize, rng: &mut R, prior: &mut Vec<f64>) -> Result<()> {
        let old = self.tables[t].topic;
        self.tables[t].topic = usize::MAX;
        self.drop_table_topic(old);
        self.fill_topic_weights(prior);
        let k_count = self.num_topics();

        self.scratch.clear();
        self.scratch.resize(k_count + 1, 0.0);
        for (k, p) in prior.iter().enumerate() {
            self.scratch[k] = if *p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
        }
        for (i, &s) in self.seats.iter().enumerate() {
            if s != t {
                continue;
            }
            let w = self.words[i] as usize;
            for k in 0..k_count {
                self.scratch[k] += self.frozen.lik(k, w).ln();
            }
            self.scratch[k_count] += self.frozen.inv_v.ln();
        }
        let k = sample_log_index(rng, &mut self.scratch)?;
        let k = self.add_table_topic(k);
        self.tables[t].topic = k;
        Ok(())
    }

    /// `log p(words, table topics | seating, past)` of the current state.
    fn sample_loglik(&self) -> f64 {
        let mut acc = 0.0;
        for (i, &t) in self.seats.iter().enumerate() {
            acc += self.frozen.lik(self.tables[t].topic, self.words[i] as usize).ln();
        }
        let mut running = vec![0u32; self.num_topics()];
        for (n, table) in self.tables.iter().enumerate() {
            let k = table.topic;
            acc += (self.frozen.topic_weight(k, running[k]) / self.frozen.normalizer(n as u32)).ln();
            running[k] += 1;
        }
        acc
    }
}

/// Runs the per-document sampler against `snapshot` without modifying it.
///
/// `prev` holds the previous document's tables per topic; missing entries
/// count as zero.
pub fn sample_document<R: Rng + ?Sized>(
    snapshot: &ModelSnapshot,
    prev: &[u32],
    doc: &Document,
    cfg: &GibbsConfig,
    rng: &mut R,
) -> Result<DocPosterior> {
    cfg.validate()?;
    snapshot.hyper.validate()?;
    let v = snapshot.vocab_size();
    if let Some(&bad) = doc.tokens.iter().find(|&&w| w as usize >= v) {
        return Err(Error::VocabMismatch {
            model: v,
            data: bad as usize + 1,
        });
    }
    let k_snap = snapshot.num_topics();
    if doc.is_empty() {
        return Ok(DocPosterior::empty(k_snap));
    }

    let mut prev_padded = vec![0u32; k_snap];
    for (dst, &src) in prev_padded.iter_mut().zip(prev) {
        *dst = src;
    }
    let frozen = Frozen {
        snapshot,
        phi: snapshot.phi_matrix(),
        prev_total: prev_padded.iter().map(|&m| m as f64).sum(),
        prev: prev_padded,
        m_dot_total: snapshot.m_dot().iter().map(|&m| m as f64).sum(),
        k_snap,
        inv_v: 1.0 / v as f64,
    };
    let mut chain = DocChain {
        frozen,
        words: &doc.tokens,
        seats: vec![usize::MAX; doc.len()],
        tables: Vec::new(),
        local: vec![0; k_snap],
        local_total: 0,
        scratch: Vec::new(),
    };
    let mut prior = Vec::new();
    for i in 0..doc.len() {
        chain.place_token(i, rng, &mut prior)?;
    }

    let mut samples = Vec::with_capacity(cfg.num_samples());
    for sweep in 1..=cfg.sweeps {
        for i in 0..doc.len() {
            chain.unseat(i);
            chain.place_token(i, rng, &mut prior)?;
        }
        for t in 0..chain.tables.len() {
            chain.resample_table(t, rng, &mut prior)?;
        }
        if cfg.is_sample_sweep(sweep) {
            samples.push(chain.sample_loglik());
        }
    }

    let token_topics = chain
        .seats
        .iter()
        .zip(chain.words)
        .map(|(&t, &w)| (chain.tables[t].topic, w))
        .collect();
    Ok(DocPosterior {
        sample_logliks: samples,
        local_counts: chain.local,
        token_topics,
        num_tokens: doc.len(),
    })
}

/// Samples `doc` and then folds its final counts into `snapshot`.
pub fn online_infer<R: Rng + ?Sized>(
    snapshot: &mut ModelSnapshot,
    prev: &[u32],
    doc: &Document,
    cfg: &GibbsConfig,
    rng: &mut R,
) -> Result<DocPosterior> {
    let posterior = sample_document(snapshot, prev, doc, cfg, rng)?;
    if posterior.num_tokens > 0 {
        snapshot.absorb(&posterior.local_counts, &posterior.token_topics);
    }
    Ok(posterior)
}
