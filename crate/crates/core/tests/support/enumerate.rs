//! Exact posterior over seating and topic configurations of a tiny corpus,
//! by enumeration, and the matching canonical key of a sampler state.
//!
//! A configuration is canonical when tables within a document are numbered
//! by first customer and topics are numbered by first table, scanning
//! documents in order. The sequential generative process produces exactly
//! these labelings, so each one's probability is a plain product of
//! sequential draws.

use std::collections::HashMap;

use dynhdp::inference::{DynamicConditional, GibbsChain, GibbsConfig};
use dynhdp::{Corpus, CrfState, HyperParams, Mode};

/// Sweeps discarded before counting.
pub const BURN_IN: usize = 1_000;
/// Sweeps counted, one configuration each.
pub const SAMPLES: usize = 100_000;

/// Per-document table of every token, then the topic of every table in
/// document order.
pub type Key = (Vec<Vec<usize>>, Vec<usize>);

/// Restricted growth strings of length `n`: all set partitions, blocks
/// numbered by first element.
pub fn restricted_growth(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    fn rec(n: usize, cur: &mut Vec<usize>, max: usize, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        let limit = if cur.is_empty() { 0 } else { max + 1 };
        for b in 0..=limit {
            cur.push(b);
            rec(n, cur, max.max(b), out);
            cur.pop();
        }
    }
    rec(n, &mut cur, 0, &mut out);
    out
}

/// Probability of one canonical configuration and its words under the
/// sequential process, with topics integrated out.
pub fn sequential_prob(docs: &[Vec<u32>], v: usize, key: &Key, hyper: &HyperParams, mode: Mode) -> f64 {
    let (seats, topics) = key;
    let (alpha, gamma, delta, eta) = (hyper.alpha, hyper.gamma, hyper.delta, hyper.eta);
    let mut p = 1.0;
    let mut seen: Vec<f64> = Vec::new();
    let mut word_counts: Vec<Vec<f64>> = Vec::new();
    let mut prev: Vec<f64> = Vec::new();
    let mut next_table = 0;
    for (j, words) in docs.iter().enumerate() {
        let mut customers: Vec<f64> = Vec::new();
        let mut table_topic: Vec<usize> = Vec::new();
        let mut local = vec![0.0; seen.len()];
        for (i, &w) in words.iter().enumerate() {
            let t = seats[j][i];
            let den = i as f64 + alpha;
            if t < customers.len() {
                p *= customers[t] / den;
                customers[t] += 1.0;
            } else {
                p *= alpha / den;
                customers.push(1.0);
                let k = topics[next_table];
                next_table += 1;
                let k_count = seen.len();
                let weight = |k: usize| match mode {
                    Mode::Hdp => seen[k],
                    Mode::Dynamic => local[k] + prev.get(k).copied().unwrap_or(0.0) + delta * seen[k],
                };
                let total: f64 = (0..k_count).map(weight).sum::<f64>() + gamma;
                if k < k_count {
                    p *= weight(k) / total;
                } else {
                    p *= gamma / total;
                    seen.push(0.0);
                    local.push(0.0);
                    word_counts.push(vec![0.0; v]);
                }
                seen[k] += 1.0;
                local[k] += 1.0;
                table_topic.push(k);
            }
            let k = table_topic[t];
            let row = &mut word_counts[k];
            let total: f64 = row.iter().sum();
            p *= (row[w as usize] + eta) / (total + v as f64 * eta);
            row[w as usize] += 1.0;
        }
        prev = local;
    }
    p
}

/// Normalized posterior over all canonical configurations of `docs`.
pub fn exact_posterior(docs: &[Vec<u32>], v: usize, hyper: &HyperParams, mode: Mode) -> HashMap<Key, f64> {
    let per_doc: Vec<Vec<Vec<usize>>> = docs.iter().map(|d| restricted_growth(d.len())).collect();
    let mut seatings: Vec<Vec<Vec<usize>>> = vec![Vec::new()];
    for options in &per_doc {
        let mut grown = Vec::new();
        for s in &seatings {
            for o in options {
                let mut s = s.clone();
                s.push(o.clone());
                grown.push(s);
            }
        }
        seatings = grown;
    }
    let mut out = HashMap::new();
    let mut z = 0.0;
    for seats in seatings {
        let tables: usize = seats.iter().map(|s| s.iter().max().map_or(0, |&m| m + 1)).sum();
        for topics in restricted_growth(tables) {
            let key = (seats.clone(), topics);
            let p = sequential_prob(docs, v, &key, hyper, mode);
            if p > 0.0 {
                z += p;
                out.insert(key, p);
            }
        }
    }
    for p in out.values_mut() {
        *p /= z;
    }
    out
}

/// Canonical key of a fully seated state.
pub fn canonical_key(state: &CrfState) -> Key {
    let mut seats = Vec::new();
    let mut topics = Vec::new();
    let mut topic_ids: HashMap<usize, usize> = HashMap::new();
    for j in 0..state.num_docs() {
        let doc = state.doc(j);
        let mut table_ids: HashMap<usize, usize> = HashMap::new();
        let mut row = Vec::new();
        for i in 0..doc.words().len() {
            let t = doc.seat_of(i).expect("seated");
            let next = table_ids.len();
            let id = *table_ids.entry(t).or_insert_with(|| {
                let k = doc.tables()[t].topic as usize;
                let next_k = topic_ids.len();
                topics.push(*topic_ids.entry(k).or_insert(next_k));
                next
            });
            row.push(id);
        }
        seats.push(row);
    }
    (seats, topics)
}

/// Total-variation distance between an empirical histogram and `exact`.
pub fn tv_distance(counts: &HashMap<Key, u64>, exact: &HashMap<Key, f64>) -> f64 {
    let n: u64 = counts.values().sum();
    let mut tv = 0.0;
    for (key, &p) in exact {
        let q = counts.get(key).copied().unwrap_or(0) as f64 / n as f64;
        tv += (p - q).abs();
    }
    for (key, &c) in counts {
        if !exact.contains_key(key) {
            tv += c as f64 / n as f64;
        }
    }
    tv / 2.0
}

/// Histogram of canonical configurations visited by a batch Gibbs chain.
pub fn gibbs_histogram(
    docs: &[Vec<u32>],
    v: usize,
    hyper: &HyperParams,
    mode: Mode,
    conditional: DynamicConditional,
    seed: u64,
) -> HashMap<Key, u64> {
    let corpus = Corpus::from_token_lists(v, docs.to_vec()).unwrap();
    let mut cfg = GibbsConfig::batch(mode, seed);
    cfg.conditional = conditional;
    let mut chain = GibbsChain::new(&corpus, hyper, &cfg, 0).unwrap();
    for _ in 0..BURN_IN {
        chain.sweep().unwrap();
    }
    let mut counts = HashMap::new();
    for _ in 0..SAMPLES {
        chain.sweep().unwrap();
        *counts.entry(canonical_key(chain.state())).or_insert(0) += 1;
    }
    counts
}
