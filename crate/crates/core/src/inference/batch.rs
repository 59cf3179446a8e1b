use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::joint::{log_denominator, log_topic_urn};
use super::{log_joint, DynamicConditional, GibbsConfig, ModelSnapshot, TrainingMeta};
use crate::corpus::{Corpus, HyperParams};
use crate::crf::{sample_index, sample_log_index, CrfState, Mode, SeatChoice, TopicChoice};
use crate::error::{Error, Result};

/// One Gibbs chain over a training corpus.
pub struct GibbsChain {
    state: CrfState,
    hyper: HyperParams,
    mode: Mode,
    conditional: DynamicConditional,
    rng: ChaCha8Rng,
    ctx: DocContext,
    scratch: Vec<f64>,
    prior: Vec<f64>,
    lik: Vec<f64>,
    /// Topic whose removal from document `j` left a later document with zero
    /// probability; a new table must take it.
    forced: Option<usize>,
    sweeps_done: usize,
}

/// Per-document caches valid while sampling one document.
#[derive(Default)]
struct DocContext {
    j: usize,
    /// Tables per topic over documents before `j`.
    prefix: Vec<u32>,
    prefix_total: u64,
    /// Forward numerator correction per topic, keyed by the `m[j][k]` it was computed for.
    forward_topic: Vec<Option<(u32, f64)>>,
    /// Forward denominator correction indexed by `m[j].`.
    forward_denominator: Vec<Option<f64>>,
}

impl GibbsChain {
    /// Builds a chain and its first state by sequential construction.
    pub fn new(corpus: &Corpus, hyper: &HyperParams, cfg: &GibbsConfig, chain: u64) -> Result<Self> {
        hyper.validate()?;
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::InvalidInput("training corpus has no documents".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(chain);
        let mut chain = GibbsChain {
            state: CrfState::unseated(corpus),
            hyper: *hyper,
            mode: cfg.mode,
            conditional: cfg.conditional,
            rng,
            ctx: DocContext::default(),
            scratch: Vec::new(),
            prior: Vec::new(),
            lik: Vec::new(),
            forced: None,
            sweeps_done: 0,
        };
        for j in 0..chain.state.num_docs() {
            chain.enter_doc(j);
            for i in 0..chain.state.doc(j).words().len() {
                chain.place_token(j, i)?;
            }
        }
        chain.state.validate()?;
        Ok(chain)
    }

    pub fn state(&self) -> &CrfState {
        &self.state
    }

    pub fn into_state(self) -> CrfState {
        self.state
    }

    pub fn sweeps_done(&self) -> usize {
        self.sweeps_done
    }

    /// One full pass: every token's table, then every table's topic, document by document.
    pub fn sweep(&mut self) -> Result<()> {
        for j in 0..self.state.num_docs() {
            self.enter_doc(j);
            for i in 0..self.state.doc(j).words().len() {
                let vacated = self.state.unseat(j, i)?;
                if vacated.topic_removed {
                    self.reset_topics();
                }
                self.place_token(j, i)?;
            }
            for t in 0..self.state.doc(j).tables().len() {
                self.resample_table(j, t)?;
            }
        }
        self.sweeps_done += 1;
        if cfg!(debug_assertions) {
            self.state.validate()?;
        }
        Ok(())
    }

    fn enter_doc(&mut self, j: usize) {
        self.ctx.j = j;
        self.ctx.forward_denominator.clear();
        self.reset_topics();
    }

    /// Rebuilds topic-indexed caches after the topic set changed.
    fn reset_topics(&mut self) {
        let k_count = self.state.num_topics();
        let j = self.ctx.j;
        self.ctx.prefix.clear();
        self.ctx.prefix.resize(k_count, 0);
        for l in 0..j {
            for (acc, &m) in self.ctx.prefix.iter_mut().zip(self.state.doc(l).topic_tables()) {
                *acc += m;
            }
        }
        self.ctx.prefix_total = self.ctx.prefix.iter().map(|&m| m as u64).sum();
        self.ctx.forward_topic.clear();
        self.ctx.forward_topic.resize(k_count, None);
    }

    /// Fills `self.prior` with the unnormalized topic weight of a new table in
    /// document `j` for every existing topic, and returns the new-topic weight
    /// and the shared normalizer (including forward denominator effects).
    fn topic_prior(&mut self, j: usize) -> (f64, f64) {
        let k_count = self.state.num_topics();
        let gamma = self.hyper.gamma;
        let delta = self.hyper.delta;
        self.prior.clear();
        self.forced = None;
        match (self.mode, self.conditional) {
            (Mode::Hdp, _) => {
                self.prior.extend(self.state.m_dot().iter().map(|&m| m as f64));
                let den = self.state.total_tables() as f64 + gamma;
                (gamma, den)
            }
            (Mode::Dynamic, DynamicConditional::Local) => {
                let local = self.state.doc(j).topic_tables();
                let m_dot = self.state.m_dot();
                let mut den = gamma;
                for k in 0..k_count {
                    let w = local[k] as f64 + self.state.local_count(j.wrapping_sub(1), k) as f64 + delta * m_dot[k] as f64;
                    den += w;
                    self.prior.push(w);
                }
                (gamma, den)
            }
            (Mode::Dynamic, DynamicConditional::Exact) => {
                let s = 1.0 + delta;
                let local_total = self.state.doc(j).table_count() as f64;
                let prev_total = if j == 0 { 0.0 } else { self.state.doc(j - 1).table_count() as f64 };
                let den = s * local_total + prev_total + delta * self.ctx.prefix_total as f64 + gamma;
                for k in 0..k_count {
                    let c = self.state.doc(j).topic_tables()[k];
                    let mk = self.ctx.prefix[k];
                    let own = if c == 0 && mk == 0 {
                        gamma
                    } else {
                        s * c as f64 + self.state.local_count(j.wrapping_sub(1), k) as f64 + delta * mk as f64
                    };
                    let forward = self.forward_topic(j, k);
                    if forward == f64::INFINITY {
                        self.forced = Some(k);
                    }
                    self.prior.push(own * forward.exp());
                }
                let forward_den = self.forward_denominator(j);
                (gamma, den * forward_den.exp())
            }
        }
    }

    /// Change in the log topic-prior of documents after `j` when document `j`
    /// gains one table of topic `k` (numerator terms only). Infinite when the
    /// gain turns a later document's zero probability positive.
    fn forward_topic(&mut self, j: usize, k: usize) -> f64 {
        let c = self.state.doc(j).topic_tables()[k];
        if let Some((at, value)) = self.ctx.forward_topic[k] {
            if at == c {
                return value;
            }
        }
        let gamma = self.hyper.gamma;
        let delta = self.hyper.delta;
        let mut acc = 0.0;
        let mut seen_before = self.ctx.prefix[k] as u64 + c as u64;
        let mut prev = c;
        for l in j + 1..self.state.num_docs() {
            let n = self.state.doc(l).topic_tables()[k];
            if n > 0 {
                let prev_after = if l == j + 1 { prev + 1 } else { prev };
                let before = log_topic_urn(
                    prev as f64 + delta * seen_before as f64,
                    seen_before,
                    n,
                    gamma,
                    delta,
                );
                let after = log_topic_urn(
                    prev_after as f64 + delta * (seen_before + 1) as f64,
                    seen_before + 1,
                    n,
                    gamma,
                    delta,
                );
                if before == f64::NEG_INFINITY {
                    acc = f64::INFINITY;
                    break;
                }
                acc += after - before;
            }
            seen_before += n as u64;
            prev = n;
        }
        self.ctx.forward_topic[k] = Some((c, acc));
        acc
    }

    /// Change in the log normalizers of documents after `j` when document `j`
    /// gains one table (of any topic), as `after - before`.
    fn forward_denominator(&mut self, j: usize) -> f64 {
        let tables = self.state.doc(j).table_count() as usize;
        if let Some(Some(v)) = self.ctx.forward_denominator.get(tables) {
            return *v;
        }
        let gamma = self.hyper.gamma;
        let delta = self.hyper.delta;
        let mut acc = 0.0;
        let mut seen_before = self.ctx.prefix_total + tables as u64;
        let mut prev = tables as u64;
        for l in j + 1..self.state.num_docs() {
            let n = self.state.doc(l).table_count();
            if n > 0 {
                let base = prev as f64 + delta * seen_before as f64 + gamma;
                let bump = if l == j + 1 { 1.0 + delta } else { delta };
                if bump != 0.0 {
                    acc += log_denominator(base + bump, n, delta) - log_denominator(base, n, delta);
                }
            }
            seen_before += n as u64;
            prev = n as u64;
        }
        if self.ctx.forward_denominator.len() <= tables {
            self.ctx.forward_denominator.resize(tables + 1, None);
        }
        self.ctx.forward_denominator[tables] = Some(acc);
        acc
    }

    /// Seats unseated token `i` of document `j` by its full conditional.
    fn place_token(&mut self, j: usize, i: usize) -> Result<()> {
        let w = self.state.doc(j).words()[i] as usize;
        let v = self.state.vocab_size() as f64;
        let eta = self.hyper.eta;
        let (new_topic_weight, den) = self.topic_prior(j);
        if let Some(k) = self.forced {
            let at = self.state.doc(j).tables().len();
            return self.state.seat(j, i, SeatChoice::NewTable { at, topic: TopicChoice::Existing(k) });
        }

        let k_count = self.state.num_topics();
        self.lik.clear();
        for k in 0..k_count {
            let c = self.state.topic_word_count(k, w) as f64;
            let n = self.state.topic_total()[k] as f64;
            self.lik.push((c + eta) / (n + v * eta));
        }
        let lik_new = 1.0 / v;

        let mut mass = new_topic_weight * lik_new;
        for k in 0..k_count {
            mass += self.prior[k] * self.lik[k];
        }

        self.scratch.clear();
        for table in self.state.doc(j).tables() {
            self.scratch.push(table.customers as f64 * self.lik[table.topic as usize]);
        }
        self.scratch.push(self.hyper.alpha * mass / den);
        let pick = sample_index(&mut self.rng, &self.scratch)?;
        let tables = self.state.doc(j).tables().len();
        if pick < tables {
            return self.state.seat(j, i, SeatChoice::Table(pick));
        }

        self.scratch.clear();
        for k in 0..k_count {
            self.scratch.push(self.prior[k] * self.lik[k]);
        }
        self.scratch.push(new_topic_weight * lik_new);
        let k = sample_index(&mut self.rng, &self.scratch)?;
        let topic = if k < k_count {
            TopicChoice::Existing(k)
        } else {
            TopicChoice::New { at: k_count }
        };
        self.state.seat(j, i, SeatChoice::NewTable { at: tables, topic })?;
        if k == k_count {
            self.reset_topics();
        }
        Ok(())
    }

    fn resample_table(&mut self, j: usize, t: usize) -> Result<()> {
        let words = self.state.table_word_counts(j, t);
        let (_, removed) = self.state.detach_table(j, t, &words);
        if removed {
            self.reset_topics();
        }
        let (new_topic_weight, _) = self.topic_prior(j);
        if let Some(k) = self.forced {
            self.state.attach_table(j, t, &words, TopicChoice::Existing(k))?;
            return Ok(());
        }
        let k_count = self.state.num_topics();
        let v = self.state.vocab_size() as f64;
        let eta = self.hyper.eta;

        self.scratch.clear();
        for k in 0..k_count {
            let prior = self.prior[k];
            if prior <= 0.0 {
                self.scratch.push(f64::NEG_INFINITY);
                continue;
            }
            let row = self.state.topic_words(k);
            let total = self.state.topic_total()[k] as f64;
            self.scratch.push(prior.ln() + table_loglik(&words, |w| row[w as usize] as f64, total, eta, v));
        }
        self.scratch.push(new_topic_weight.ln() + table_loglik(&words, |_| 0.0, 0.0, eta, v));
        let k = sample_log_index(&mut self.rng, &mut self.scratch)?;
        let topic = if k < k_count {
            TopicChoice::Existing(k)
        } else {
            TopicChoice::New { at: k_count }
        };
        self.state.attach_table(j, t, &words, topic)?;
        if k == k_count {
            self.reset_topics();
        }
        Ok(())
    }
}

/// Collapsed log-probability of a table's words joining a topic with the
/// given counts.
pub(crate) fn table_loglik(words: &[(u32, u32)], count: impl Fn(u32) -> f64, total: f64, eta: f64, v: f64) -> f64 {
    let mut acc = 0.0;
    let mut n = 0u32;
    for &(w, c) in words {
        let base = count(w) + eta;
        for r in 0..c {
            acc += (base + r as f64).ln();
        }
        n += c;
    }
    let base = total + v * eta;
    for r in 0..n {
        acc -= (base + r as f64).ln();
    }
    acc
}

/// Runs `cfg.chains` independent chains and snapshots the final state of the
/// one with the highest log joint.
pub fn batch_train(corpus: &Corpus, hyper: &HyperParams, cfg: &GibbsConfig) -> Result<(ModelSnapshot, CrfState)> {
    hyper.validate()?;
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidInput("training corpus has no documents".into()));
    }
    let run = |chain: u64| -> Result<(f64, CrfState)> {
        let mut gibbs = GibbsChain::new(corpus, hyper, cfg, chain)?;
        for _ in 0..cfg.sweeps {
            gibbs.sweep()?;
        }
        let state = gibbs.into_state();
        state.validate()?;
        let lj = log_joint(&state, hyper, cfg.mode);
        Ok((lj, state))
    };
    let results: Vec<Result<(f64, CrfState)>> = (0..cfg.chains as u64).into_par_iter().map(run).collect();
    let mut best: Option<(f64, CrfState)> = None;
    for r in results {
        let (lj, state) = r?;
        if best.as_ref().is_none_or(|(b, _)| lj > *b) {
            best = Some((lj, state));
        }
    }
    let (_, state) = best.expect("at least one chain");
    let meta = TrainingMeta {
        sweeps: cfg.sweeps,
        burn_in: cfg.burn_in,
        sample_lag: cfg.sample_lag,
        chains: cfg.chains,
        seed: cfg.seed,
        train_docs: corpus.len(),
    };
    let snapshot = ModelSnapshot::from_state(&state, hyper, cfg.mode, meta);
    Ok((snapshot, state))
}
