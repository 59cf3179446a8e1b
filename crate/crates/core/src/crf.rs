//! Chinese-restaurant-franchise state: table seating per document, topic
//! assignment per table, and the count statistics the samplers read.
//!
//! Counts are kept dense. Removing a table or topic swaps the last element
//! into the hole; [`Vacated`] records enough to undo that exactly, so an
//! unseat followed by seating at [`Vacated::restore_choice`] reproduces the
//! previous state bit for bit.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::corpus::{check_alpha, check_delta, check_eta, check_gamma, Corpus, HyperParams};
use crate::error::{Error, Result};

/// Which topic-draw law the model uses for new tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Tables pick topics in proportion to global table counts.
    Hdp,
    /// Tables favour topics of the current and previous documents.
    #[default]
    Dynamic,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Hdp => "hdp",
            Mode::Dynamic => "dynamic",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hdp" => Ok(Mode::Hdp),
            "dynamic" => Ok(Mode::Dynamic),
            other => Err(Error::InvalidInput(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Table {
    pub customers: u32,
    pub topic: u32,
}

/// Marks a table whose topic has been detached for resampling.
const DETACHED: u32 = u32::MAX;

/// One document's seating.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Restaurant {
    pub(crate) words: Vec<u32>,
    pub(crate) seats: Vec<Option<u32>>,
    pub(crate) tables: Vec<Table>,
    /// Tables serving each topic in this document (`m[j][k]`).
    pub(crate) topic_tables: Vec<u32>,
}

impl Restaurant {
    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn seat_of(&self, i: usize) -> Option<usize> {
        self.seats[i].map(|t| t as usize)
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn topic_tables(&self) -> &[u32] {
        &self.topic_tables
    }

    pub fn table_count(&self) -> u32 {
        self.tables.len() as u32
    }

    /// Topic of token `i`, if seated.
    pub fn topic_of(&self, i: usize) -> Option<usize> {
        let t = self.seats[i]?;
        let k = self.tables[t as usize].topic;
        (k != DETACHED).then_some(k as usize)
    }
}

/// Topic for a new table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopicChoice {
    Existing(usize),
    /// Instantiate a fresh topic at index `at` (`at == K` appends).
    New { at: usize },
}

/// Where to seat a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeatChoice {
    Table(usize),
    /// Open a table at index `at` (`at == tables.len()` appends).
    NewTable { at: usize, topic: TopicChoice },
}

impl SeatChoice {
    pub fn new_table_appended(state: &CrfState, j: usize, topic: TopicChoice) -> Self {
        SeatChoice::NewTable {
            at: state.docs[j].tables.len(),
            topic,
        }
    }
}

/// What an unseat removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vacated {
    pub table: usize,
    pub topic: usize,
    pub table_removed: bool,
    pub topic_removed: bool,
}

impl Vacated {
    /// The seat choice that undoes this unseat exactly.
    pub fn restore_choice(&self) -> SeatChoice {
        if !self.table_removed {
            return SeatChoice::Table(self.table);
        }
        let topic = if self.topic_removed {
            TopicChoice::New { at: self.topic }
        } else {
            TopicChoice::Existing(self.topic)
        };
        SeatChoice::NewTable {
            at: self.table,
            topic,
        }
    }
}

/// Topic argument of [`CrfState::word_loglik`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopicRef {
    Existing(usize),
    New,
}

/// Full franchise state over a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrfState {
    pub(crate) vocab: usize,
    pub(crate) docs: Vec<Restaurant>,
    pub(crate) m_dot: Vec<u32>,
    /// Row-major `K x V` token counts per topic.
    pub(crate) topic_word: Vec<u32>,
    pub(crate) topic_total: Vec<u32>,
}

impl CrfState {
    /// Empty state holding the corpus tokens, nothing seated.
    pub fn unseated(corpus: &Corpus) -> Self {
        let docs = corpus
            .documents()
            .iter()
            .map(|d| Restaurant {
                words: d.tokens.clone(),
                seats: vec![None; d.tokens.len()],
                tables: Vec::new(),
                topic_tables: Vec::new(),
            })
            .collect();
        CrfState {
            vocab: corpus.vocab_size(),
            docs,
            m_dot: Vec::new(),
            topic_word: Vec::new(),
            topic_total: Vec::new(),
        }
    }

    pub(crate) fn empty(vocab: usize) -> Self {
        CrfState {
            vocab,
            docs: Vec::new(),
            m_dot: Vec::new(),
            topic_word: Vec::new(),
            topic_total: Vec::new(),
        }
    }

    pub(crate) fn push_document(&mut self) -> usize {
        self.docs.push(Restaurant {
            words: Vec::new(),
            seats: Vec::new(),
            tables: Vec::new(),
            topic_tables: vec![0; self.num_topics()],
        });
        self.docs.len() - 1
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn num_topics(&self) -> usize {
        self.m_dot.len()
    }

    pub fn doc(&self, j: usize) -> &Restaurant {
        &self.docs[j]
    }

    pub fn m_dot(&self) -> &[u32] {
        &self.m_dot
    }

    pub fn topic_total(&self) -> &[u32] {
        &self.topic_total
    }

    pub fn topic_word_count(&self, k: usize, w: usize) -> u32 {
        self.topic_word[k * self.vocab + w]
    }

    pub fn topic_words(&self, k: usize) -> &[u32] {
        &self.topic_word[k * self.vocab..(k + 1) * self.vocab]
    }

    pub fn total_tables(&self) -> u64 {
        self.m_dot.iter().map(|&m| m as u64).sum()
    }

    /// `m[j][k]`, zero when `j` or `k` is out of range.
    pub fn local_count(&self, j: usize, k: usize) -> u32 {
        self.docs
            .get(j)
            .and_then(|d| d.topic_tables.get(k).copied())
            .unwrap_or(0)
    }

    /// Seat probabilities for the next token of document `j`: one
    /// entry per occupied table, then the new-table entry.
    pub fn table_probs(&self, j: usize, alpha: f64) -> Result<Vec<f64>> {
        check_alpha(alpha)?;
        let mut weights: Vec<f64> = self.docs[j]
            .tables
            .iter()
            .map(|t| t.customers as f64)
            .collect();
        weights.push(alpha);
        normalize(weights)
    }

    /// Topic probabilities for a new table under the global law.
    pub fn topic_probs_hdp(&self, gamma: f64) -> Result<Vec<f64>> {
        hdp_topic_probs(&self.m_dot, gamma)
    }

    /// Topic probabilities for a new table in document `j` under the
    /// dynamic law. Document `j - 1` counts are zero for `j == 0`.
    pub fn topic_probs_dynamic(&self, j: usize, gamma: f64, delta: f64) -> Result<Vec<f64>> {
        let k = self.num_topics();
        let local = padded(&self.docs[j].topic_tables, k);
        let prev = if j == 0 {
            vec![0; k]
        } else {
            padded(&self.docs[j - 1].topic_tables, k)
        };
        dynamic_topic_probs(&local, &prev, &self.m_dot, gamma, delta)
    }

    /// Collapsed predictive log-probability of word `w` under topic `k`.
    pub fn word_loglik(&self, k: TopicRef, w: usize, eta: f64) -> Result<f64> {
        check_eta(eta)?;
        let v = self.vocab as f64;
        Ok(match k {
            TopicRef::New => -v.ln(),
            TopicRef::Existing(k) => {
                let c = self.topic_word_count(k, w) as f64;
                let n = self.topic_total[k] as f64;
                ((c + eta) / (n + v * eta)).ln()
            }
        })
    }

    /// Removes token `i` of document `j` from its table.
    pub fn unseat(&mut self, j: usize, i: usize) -> Result<Vacated> {
        let doc = &mut self.docs[j];
        let t = doc.seats[i]
            .take()
            .ok_or_else(|| Error::Internal(format!("token ({j},{i}) is not seated")))?
            as usize;
        let w = doc.words[i] as usize;
        let k = doc.tables[t].topic as usize;
        doc.tables[t].customers -= 1;
        let emptied = doc.tables[t].customers == 0;
        self.topic_word[k * self.vocab + w] -= 1;
        self.topic_total[k] -= 1;

        let mut vacated = Vacated {
            table: t,
            topic: k,
            table_removed: false,
            topic_removed: false,
        };
        if emptied {
            self.remove_table(j, t);
            self.docs[j].topic_tables[k] -= 1;
            self.m_dot[k] -= 1;
            vacated.table_removed = true;
            if self.m_dot[k] == 0 && self.topic_total[k] == 0 {
                self.remove_topic(k);
                vacated.topic_removed = true;
            }
        }
        Ok(vacated)
    }

    /// Seats token `i` of document `j`.
    pub fn seat(&mut self, j: usize, i: usize, choice: SeatChoice) -> Result<()> {
        if self.docs[j].seats[i].is_some() {
            return Err(Error::Internal(format!("token ({j},{i}) is already seated")));
        }
        let t = match choice {
            SeatChoice::Table(t) => {
                if t >= self.docs[j].tables.len() {
                    return Err(Error::Internal(format!("table {t} does not exist in document {j}")));
                }
                t
            }
            SeatChoice::NewTable { at, topic } => {
                if at > self.docs[j].tables.len() {
                    return Err(Error::Internal(format!("table slot {at} out of range")));
                }
                let k = self.resolve_topic(topic)?;
                self.insert_table(j, at, k);
                at
            }
        };
        let doc = &mut self.docs[j];
        let w = doc.words[i] as usize;
        let k = doc.tables[t].topic as usize;
        doc.tables[t].customers += 1;
        doc.seats[i] = Some(t as u32);
        self.topic_word[k * self.vocab + w] += 1;
        self.topic_total[k] += 1;
        Ok(())
    }

    pub(crate) fn resolve_topic(&mut self, topic: TopicChoice) -> Result<usize> {
        match topic {
            TopicChoice::Existing(k) if k < self.num_topics() => Ok(k),
            TopicChoice::Existing(k) => Err(Error::Internal(format!("topic {k} does not exist"))),
            TopicChoice::New { at } if at <= self.num_topics() => {
                self.insert_topic(at);
                Ok(at)
            }
            TopicChoice::New { at } => Err(Error::Internal(format!("topic slot {at} out of range"))),
        }
    }

    /// Tokens of document `j` at table `t`, as sorted `(word, count)` pairs.
    pub fn table_word_counts(&self, j: usize, t: usize) -> Vec<(u32, u32)> {
        let doc = &self.docs[j];
        let mut words: Vec<u32> = doc
            .seats
            .iter()
            .zip(&doc.words)
            .filter(|(s, _)| **s == Some(t as u32))
            .map(|(_, &w)| w)
            .collect();
        words.sort_unstable();
        let mut out: Vec<(u32, u32)> = Vec::new();
        for w in words {
            match out.last_mut() {
                Some((last, c)) if *last == w => *c += 1,
                _ => out.push((w, 1)),
            }
        }
        out
    }

    /// Takes table `t` of document `j` off its topic, removing the topic if
    /// it becomes empty. Returns the old topic and whether it was removed.
    pub(crate) fn detach_table(&mut self, j: usize, t: usize, words: &[(u32, u32)]) -> (usize, bool) {
        let k = self.docs[j].tables[t].topic as usize;
        debug_assert_ne!(k as u32, DETACHED);
        for &(w, c) in words {
            self.topic_word[k * self.vocab + w as usize] -= c;
            self.topic_total[k] -= c;
        }
        self.docs[j].topic_tables[k] -= 1;
        self.m_dot[k] -= 1;
        self.docs[j].tables[t].topic = DETACHED;
        if self.m_dot[k] == 0 && self.topic_total[k] == 0 {
            self.remove_topic(k);
            (k, true)
        } else {
            (k, false)
        }
    }

    pub(crate) fn attach_table(
        &mut self,
        j: usize,
        t: usize,
        words: &[(u32, u32)],
        topic: TopicChoice,
    ) -> Result<usize> {
        let k = self.resolve_topic(topic)?;
        for &(w, c) in words {
            self.topic_word[k * self.vocab + w as usize] += c;
            self.topic_total[k] += c;
        }
        self.docs[j].topic_tables[k] += 1;
        self.m_dot[k] += 1;
        self.docs[j].tables[t].topic = k as u32;
        Ok(k)
    }

    fn insert_table(&mut self, j: usize, at: usize, k: usize) {
        let doc = &mut self.docs[j];
        let end = doc.tables.len();
        doc.tables.push(Table {
            customers: 0,
            topic: k as u32,
        });
        if at < end {
            doc.tables.swap(at, end);
            for s in doc.seats.iter_mut().flatten() {
                if *s as usize == at {
                    *s = end as u32;
                }
            }
        }
        doc.topic_tables[k] += 1;
        self.m_dot[k] += 1;
    }

    fn remove_table(&mut self, j: usize, t: usize) {
        let doc = &mut self.docs[j];
        let last = doc.tables.len() - 1;
        doc.tables.swap_remove(t);
        if t != last {
            for s in doc.seats.iter_mut().flatten() {
                if *s as usize == last {
                    *s = t as u32;
                }
            }
        }
    }

    fn insert_topic(&mut self, at: usize) {
        let end = self.num_topics();
        self.m_dot.push(0);
        self.topic_total.push(0);
        self.topic_word.extend(std::iter::repeat_n(0, self.vocab));
        for doc in &mut self.docs {
            doc.topic_tables.push(0);
        }
        if at < end {
            self.swap_topics(at, end);
        }
    }

    fn remove_topic(&mut self, k: usize) {
        let last = self.num_topics() - 1;
        if k != last {
            self.swap_topics(k, last);
        }
        self.m_dot.pop();
        self.topic_total.pop();
        self.topic_word.truncate(last * self.vocab);
        for doc in &mut self.docs {
            doc.topic_tables.pop();
        }
    }

    /// Exchanges topic indices `a` and `b` everywhere.
    fn swap_topics(&mut self, a: usize, b: usize) {
        self.m_dot.swap(a, b);
        self.topic_total.swap(a, b);
        let v = self.vocab;
        for w in 0..v {
            self.topic_word.swap(a * v + w, b * v + w);
        }
        let (a32, b32) = (a as u32, b as u32);
        for doc in &mut self.docs {
            doc.topic_tables.swap(a, b);
            for table in &mut doc.tables {
                if table.topic == a32 {
                    table.topic = b32;
                } else if table.topic == b32 {
                    table.topic = a32;
                }
            }
        }
    }

    /// Recomputes every count from the assignments and checks it against the
    /// stored statistics.
    pub fn validate(&self) -> Result<()> {
        let k_count = self.num_topics();
        let v = self.vocab;
        let fail = |msg: String| Err(Error::Internal(msg));
        if self.topic_total.len() != k_count || self.topic_word.len() != k_count * v {
            return fail("topic arrays have inconsistent lengths".into());
        }
        let mut m_dot = vec![0u32; k_count];
        let mut topic_word = vec![0u32; k_count * v];
        for (j, doc) in self.docs.iter().enumerate() {
            if doc.topic_tables.len() != k_count {
                return fail(format!("document {j} has {} topic slots", doc.topic_tables.len()));
            }
            let mut customers = vec![0u32; doc.tables.len()];
            for (i, seat) in doc.seats.iter().enumerate() {
                let Some(t) = *seat else {
                    return fail(format!("token ({j},{i}) unseated"));
                };
                let t = t as usize;
                if t >= doc.tables.len() {
                    return fail(format!("token ({j},{i}) seated at missing table {t}"));
                }
                customers[t] += 1;
                let k = doc.tables[t].topic as usize;
                if k >= k_count {
                    return fail(format!("table ({j},{t}) has invalid topic {k}"));
                }
                topic_word[k * v + doc.words[i] as usize] += 1;
            }
            let mut local = vec![0u32; k_count];
            for (t, table) in doc.tables.iter().enumerate() {
                if table.customers == 0 || table.customers != customers[t] {
                    return fail(format!(
                        "table ({j},{t}) has {} customers, counted {}",
                        table.customers, customers[t]
                    ));
                }
                local[table.topic as usize] += 1;
            }
            if local != doc.topic_tables {
                return fail(format!("document {j} topic table counts disagree"));
            }
            for (acc, m) in m_dot.iter_mut().zip(&local) {
                *acc += m;
            }
        }
        if m_dot != self.m_dot {
            return fail("global table counts disagree".into());
        }
        if topic_word != self.topic_word {
            return fail("topic-word counts disagree".into());
        }
        for k in 0..k_count {
            let total: u32 = self.topic_words(k).iter().sum();
            if total != self.topic_total[k] {
                return fail(format!("topic {k} total {} != {}", self.topic_total[k], total));
            }
            if self.m_dot[k] == 0 {
                return fail(format!("topic {k} has no tables"));
            }
        }
        Ok(())
    }

    /// Checks counts only, allowing unseated tokens (used mid-construction).
    pub(crate) fn validate_partial(&self) -> Result<()> {
        let mut m_dot = vec![0u32; self.num_topics()];
        for doc in &self.docs {
            for table in &doc.tables {
                m_dot[table.topic as usize] += 1;
            }
        }
        if m_dot != self.m_dot {
            return Err(Error::Internal("global table counts disagree".into()));
        }
        Ok(())
    }
}

fn padded(counts: &[u32], k: usize) -> Vec<u32> {
    let mut out = counts.to_vec();
    out.resize(k, 0);
    out
}

/// Global topic law over explicit table counts.
pub fn hdp_topic_probs(m_dot: &[u32], gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let mut weights: Vec<f64> = m_dot.iter().map(|&m| m as f64).collect();
    weights.push(gamma);
    normalize(weights)
}

/// Dynamic topic law over explicit counts: `local` = current document, `prev` = previous
/// document, `m_dot` = all tables so far (including `local`).
pub fn dynamic_topic_probs(
    local: &[u32],
    prev: &[u32],
    m_dot: &[u32],
    gamma: f64,
    delta: f64,
) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    check_delta(delta)?;
    if local.len() != m_dot.len() || prev.len() != m_dot.len() {
        return Err(Error::InvalidInput("count vectors differ in length".into()));
    }
    let mut weights: Vec<f64> = local
        .iter()
        .zip(prev)
        .zip(m_dot)
        .map(|((&l, &p), &g)| l as f64 + p as f64 + delta * g as f64)
        .collect();
    weights.push(gamma);
    normalize(weights)
}

pub(crate) fn normalize(mut weights: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Internal(format!("probability normalizer is {total}")));
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Draws an index with probability proportional to `weights`.
pub(crate) fn sample_index<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Internal(format!("sampling normalizer is {total}")));
    }
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return Ok(i);
        }
        u -= w;
    }
    // rounding: fall back to the last positive weight
    Ok(weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1))
}

/// Draws an index from unnormalized log-weights.
pub(crate) fn sample_log_index<R: Rng + ?Sized>(rng: &mut R, log_weights: &mut [f64]) -> Result<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Internal("all log-weights are -inf".into()));
    }
    for lw in log_weights.iter_mut() {
        *lw = (*lw - max).exp();
    }
    sample_index(rng, log_weights)
}

/// Where new topics come from when generating data.
#[derive(Debug, Clone, PartialEq)]
pub enum TopicSource {
    /// Each new topic draws its word distribution from a symmetric Dirichlet(eta).
    Dirichlet,
    /// New topics are atoms drawn uniformly from these fixed word distributions;
    /// drawing an atom that is already instantiated reuses its topic.
    Fixed(Vec<Vec<f64>>),
}

/// Output of [`forward_generate`].
#[derive(Debug, Clone)]
pub struct Generated {
    pub corpus: Corpus,
    pub state: CrfState,
    /// Word distribution of each instantiated topic.
    pub topic_phi: Vec<Vec<f64>>,
    /// For fixed sources, the atom index of each topic.
    pub topic_atom: Vec<Option<usize>>,
}

/// How a new table picks its topic during generation.
#[derive(Debug, Clone, Copy)]
pub(crate) enum TopicLaw<'a> {
    Model,
    /// Draws as `Model` would over atoms, then maps each distinct atom drawn
    /// in the document one-to-one onto an atom picked uniformly from this
    /// list (fixed sources only). The seating and table structure keep the
    /// model's law; only the identity of the atoms changes.
    Relabel(&'a [usize]),
}

/// Sequential sampler of the generative process.
pub(crate) struct Generator {
    pub(crate) hyper: HyperParams,
    pub(crate) mode: Mode,
    pub(crate) source: TopicSource,
    pub(crate) state: CrfState,
    pub(crate) topic_phi: Vec<Vec<f64>>,
    pub(crate) topic_atom: Vec<Option<usize>>,
    atom_topic: Vec<Option<usize>>,
    relabel: Vec<Option<usize>>,
}

impl Generator {
    pub(crate) fn new(hyper: HyperParams, mode: Mode, vocab: usize, source: TopicSource) -> Result<Self> {
        hyper.validate()?;
        if vocab == 0 {
            return Err(Error::InvalidInput("vocabulary size must be at least 1".into()));
        }
        let atoms = match &source {
            TopicSource::Dirichlet => 0,
            TopicSource::Fixed(phis) => {
                if phis.is_empty() {
                    return Err(Error::InvalidInput("fixed topic source is empty".into()));
                }
                for phi in phis {
                    let sum: f64 = phi.iter().sum();
                    if phi.len() != vocab || phi.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::InvalidInput("fixed topic is not a distribution over V".into()));
                    }
                }
                phis.len()
            }
        };
        Ok(Generator {
            hyper,
            mode,
            source,
            state: CrfState::empty(vocab),
            topic_phi: Vec::new(),
            topic_atom: Vec::new(),
            atom_topic: vec![None; atoms],
            relabel: vec![None; atoms],
        })
    }

    /// Generates one more document of `len` tokens.
    pub(crate) fn generate_doc<R: Rng + ?Sized>(&mut self, len: usize, law: TopicLaw<'_>, rng: &mut R) -> Result<usize> {
        let j = self.state.push_document();
        self.relabel.fill(None);
        for i in 0..len {
            let seat_p = self.state.table_probs(j, self.hyper.alpha)?;
            let t = sample_index(rng, &seat_p)?;
            let choice = if t < self.state.docs[j].tables.len() {
                SeatChoice::Table(t)
            } else {
                let topic = self.draw_topic(j, law, rng)?;
                SeatChoice::new_table_appended(&self.state, j, topic)
            };
            let k = match choice {
                SeatChoice::Table(t) => self.state.docs[j].tables[t].topic as usize,
                SeatChoice::NewTable { topic: TopicChoice::Existing(k), .. } => k,
                SeatChoice::NewTable { topic: TopicChoice::New { .. }, .. } => self.state.num_topics(),
            };
            if k == self.state.num_topics() {
                self.instantiate_pending(rng)?;
            }
            let w = sample_index(rng, &self.topic_phi[k])? as u32;
            let doc = &mut self.state.docs[j];
            doc.words.push(w);
            doc.seats.push(None);
            self.state.seat(j, i, choice)?;
        }
        debug_assert!(self.state.validate_partial().is_ok());
        Ok(j)
    }

    /// Records the word distribution of the topic about to be created.
    fn instantiate_pending<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if self.topic_phi.len() == self.state.num_topics() + 1 {
            return Ok(());
        }
        let phi = match &self.source {
            TopicSource::Dirichlet => draw_dirichlet(rng, self.hyper.eta, self.state.vocab)?,
            TopicSource::Fixed(_) => unreachable!("fixed atoms are registered when drawn"),
        };
        self.topic_phi.push(phi);
        self.topic_atom.push(None);
        Ok(())
    }

    fn draw_topic<R: Rng + ?Sized>(&mut self, j: usize, law: TopicLaw<'_>, rng: &mut R) -> Result<TopicChoice> {
        if let TopicLaw::Relabel(allowed) = law {
            return self.draw_relabeled(j, allowed, rng);
        }
        let k_count = self.state.num_topics();
        let probs = match self.mode {
            Mode::Hdp => self.state.topic_probs_hdp(self.hyper.gamma)?,
            Mode::Dynamic => self.state.topic_probs_dynamic(j, self.hyper.gamma, self.hyper.delta)?,
        };
        let pick = sample_index(rng, &probs)?;
        if pick < k_count {
            return Ok(TopicChoice::Existing(pick));
        }
        match &self.source {
            TopicSource::Dirichlet => Ok(TopicChoice::New { at: k_count }),
            TopicSource::Fixed(phis) => {
                let atom = rng.random_range(0..phis.len());
                Ok(self.topic_for_atom(atom))
            }
        }
    }

    fn draw_relabeled<R: Rng + ?Sized>(&mut self, j: usize, allowed: &[usize], rng: &mut R) -> Result<TopicChoice> {
        let atoms = self.atom_topic.len();
        let h = self.hyper;
        let count = |state: &CrfState, doc: Option<usize>, atom_topic: Option<usize>| match (doc, atom_topic) {
            (Some(d), Some(k)) => state.local_count(d, k),
            _ => 0,
        };
        // shadow atom s stands for actual atom relabel[s] in this document
        let mut weights = Vec::with_capacity(atoms);
        for s in 0..atoms {
            let shadow_local = count(&self.state, Some(j), self.relabel[s].and_then(|a| self.atom_topic[a]));
            let actual_local = count(&self.state, Some(j), self.atom_topic[s]);
            let global = self.atom_topic[s].map_or(0, |k| self.state.m_dot[k]) - actual_local + shadow_local;
            let w = match self.mode {
                Mode::Hdp => global as f64,
                Mode::Dynamic => {
                    let prev = count(&self.state, j.checked_sub(1), self.atom_topic[s]);
                    (shadow_local + prev) as f64 + h.delta * global as f64
                }
            };
            weights.push(w + h.gamma / atoms as f64);
        }
        let s = sample_index(rng, &weights)?;
        let actual = match self.relabel[s] {
            Some(a) => a,
            None => {
                let free: Vec<usize> = allowed
                    .iter()
                    .copied()
                    .filter(|a| !self.relabel.contains(&Some(*a)))
                    .collect();
                if free.is_empty() {
                    return Err(Error::Generation(format!(
                        "document {j} needs more atoms than the {} allowed",
                        allowed.len()
                    )));
                }
                let a = free[rng.random_range(0..free.len())];
                self.relabel[s] = Some(a);
                a
            }
        };
        Ok(self.topic_for_atom(actual))
    }

    fn topic_for_atom(&mut self, atom: usize) -> TopicChoice {
        if let Some(k) = self.atom_topic[atom] {
            return TopicChoice::Existing(k);
        }
        let TopicSource::Fixed(phis) = &self.source else {
            unreachable!("atoms exist only for fixed sources")
        };
        let k = self.state.num_topics();
        self.atom_topic[atom] = Some(k);
        self.topic_phi.push(phis[atom].clone());
        self.topic_atom.push(Some(atom));
        TopicChoice::New { at: k }
    }

    pub(crate) fn into_generated(self) -> Result<Generated> {
        let docs = self.state.docs.iter().map(|d| d.words.clone()).collect();
        let corpus = Corpus::from_token_lists(self.state.vocab, docs)?;
        self.state.validate()?;
        Ok(Generated {
            corpus,
            state: self.state,
            topic_phi: self.topic_phi,
            topic_atom: self.topic_atom,
        })
    }
}

pub(crate) fn draw_dirichlet<R: Rng + ?Sized>(rng: &mut R, eta: f64, dim: usize) -> Result<Vec<f64>> {
    let gamma = Gamma::new(eta, 1.0).map_err(|e| Error::InvalidHyperParameter(e.to_string()))?;
    loop {
        let mut draw: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draw.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            for x in &mut draw {
                *x /= sum;
            }
            return Ok(draw);
        }
    }
}

/// Samples a corpus and its latent seating from the generative process.
pub fn forward_generate<R: Rng + ?Sized>(
    hyper: &HyperParams,
    lengths: &[usize],
    vocab: usize,
    mode: Mode,
    source: TopicSource,
    rng: &mut R,
) -> Result<Generated> {
    if lengths.contains(&0) {
        return Err(Error::InvalidInput("document lengths must be positive".into()));
    }
    let mut generator = Generator::new(*hyper, mode, vocab, source)?;
    for &n in lengths {
        generator.generate_doc(n, TopicLaw::Model, rng)?;
    }
    generator.into_generated()
}
