use statrs::function::gamma::ln_gamma;

use crate::corpus::HyperParams;
use crate::crf::{CrfState, Mode};

/// Log of the dynamic-law numerator product for `n > 0` tables of one topic
/// in one document: `prod_{c<n} (base + (1+delta) c)`, where the first factor
/// is `gamma` instead when the topic has not appeared in any earlier document.
pub(crate) fn log_topic_urn(base: f64, seen_before: u64, n: u32, gamma: f64, delta: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let s = 1.0 + delta;
    if seen_before == 0 {
        let mut acc = gamma.ln();
        for c in 1..n {
            acc += (s * c as f64).ln();
        }
        return acc;
    }
    if base <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (0..n).map(|c| (base + s * c as f64).ln()).sum()
}

/// Log of `prod_{c<n} (base + (1+delta) c)`.
pub(crate) fn log_denominator(base: f64, n: u32, delta: f64) -> f64 {
    let s = 1.0 + delta;
    (0..n).map(|c| (base + s * c as f64).ln()).sum()
}

/// Log joint probability of seating, topic assignments and words (topics
/// integrated out) under the sequential generative process.
pub fn log_joint(state: &CrfState, hyper: &HyperParams, mode: Mode) -> f64 {
    let mut total = 0.0;
    let alpha = hyper.alpha;
    for j in 0..state.num_docs() {
        let doc = state.doc(j);
        let n = doc.words().len() as f64;
        total += doc.table_count() as f64 * alpha.ln() - (ln_gamma(n + alpha) - ln_gamma(alpha));
        for table in doc.tables() {
            total += ln_gamma(table.customers as f64);
        }
    }

    let gamma = hyper.gamma;
    match mode {
        Mode::Hdp => {
            let k = state.num_topics() as f64;
            let m_total = state.total_tables() as f64;
            total += k * gamma.ln() - (ln_gamma(m_total + gamma) - ln_gamma(gamma));
            for &m in state.m_dot() {
                total += ln_gamma(m as f64);
            }
        }
        Mode::Dynamic => {
            let delta = hyper.delta;
            let k_count = state.num_topics();
            let mut seen = vec![0u64; k_count];
            let mut seen_total = 0u64;
            for j in 0..state.num_docs() {
                let local = state.doc(j).topic_tables();
                let mut prev_total = 0u64;
                for k in 0..k_count {
                    let prev = if j == 0 { 0 } else { state.doc(j - 1).topic_tables()[k] };
                    prev_total += prev as u64;
                    let base = prev as f64 + delta * seen[k] as f64;
                    total += log_topic_urn(base, seen[k], local[k], gamma, delta);
                }
                let m = state.doc(j).table_count();
                total -= log_denominator(prev_total as f64 + delta * seen_total as f64 + gamma, m, delta);
                for k in 0..k_count {
                    seen[k] += local[k] as u64;
                }
                seen_total += m as u64;
            }
        }
    }

    let eta = hyper.eta;
    let v = state.vocab_size() as f64;
    for k in 0..state.num_topics() {
        total += ln_gamma(v * eta) - ln_gamma(state.topic_total()[k] as f64 + v * eta);
        for &c in state.topic_words(k) {
            if c > 0 {
                total += ln_gamma(c as f64 + eta) - ln_gamma(eta);
            }
        }
    }
    total
}
