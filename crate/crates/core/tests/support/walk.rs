//! Random seat/unseat walks over a franchise state, checked against counts
//! recomputed from the assignments after every operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dynhdp::crf::{SeatChoice, TopicChoice};
use dynhdp::{Corpus, CrfState};

fn corpus(rng: &mut ChaCha8Rng, docs: usize, v: u32) -> Corpus {
    let lists = (0..docs)
        .map(|_| {
            let n = rng.random_range(0..8);
            (0..n).map(|_| rng.random_range(0..v)).collect()
        })
        .collect();
    Corpus::from_token_lists(v as usize, lists).unwrap()
}

/// Recomputes every statistic from seats and table topics and compares.
fn check_counts(state: &CrfState) {
    let k_count = state.num_topics();
    let v = state.vocab_size();
    let mut m_dot = vec![0u32; k_count];
    let mut topic_word = vec![vec![0u32; v]; k_count];
    for j in 0..state.num_docs() {
        let doc = state.doc(j);
        let mut customers = vec![0u32; doc.tables().len()];
        for (i, &w) in doc.words().iter().enumerate() {
            if let Some(t) = doc.seat_of(i) {
                customers[t] += 1;
                topic_word[doc.tables()[t].topic as usize][w as usize] += 1;
            }
        }
        let mut local = vec![0u32; k_count];
        for (t, table) in doc.tables().iter().enumerate() {
            assert!(table.customers > 0, "empty table ({j},{t})");
            assert_eq!(table.customers, customers[t], "customers at ({j},{t})");
            local[table.topic as usize] += 1;
        }
        assert_eq!(doc.topic_tables(), &local[..], "topic tables of document {j}");
        for k in 0..k_count {
            assert_eq!(state.local_count(j, k), local[k]);
            m_dot[k] += local[k];
        }
    }
    assert_eq!(state.m_dot(), &m_dot[..]);
    assert!(m_dot.iter().all(|&m| m > 0), "topic without tables");
    assert_eq!(state.total_tables(), m_dot.iter().map(|&m| m as u64).sum::<u64>());
    for (k, row) in topic_word.iter().enumerate() {
        assert_eq!(state.topic_words(k), &row[..]);
        assert_eq!(state.topic_total()[k], row.iter().sum::<u32>());
    }
}

fn random_choice(state: &CrfState, j: usize, rng: &mut ChaCha8Rng) -> SeatChoice {
    let tables = state.doc(j).tables().len();
    if tables > 0 && rng.random_bool(0.6) {
        return SeatChoice::Table(rng.random_range(0..tables));
    }
    let k_count = state.num_topics();
    let topic = if k_count > 0 && rng.random_bool(0.7) {
        TopicChoice::Existing(rng.random_range(0..k_count))
    } else {
        TopicChoice::New {
            at: rng.random_range(0..=k_count),
        }
    };
    SeatChoice::NewTable {
        at: rng.random_range(0..=tables),
        topic,
    }
}

/// Applies `operations` random seats and unseats, checking every count after
/// each one and that seating back at the vacated spot restores the state
/// exactly. Panics on the first violation; returns how many times the walk
/// passed through a fully seated state.
pub fn random_walk(operations: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = corpus(&mut rng, 6, 5);
    let mut state = CrfState::unseated(&corpus);
    let tokens: Vec<(usize, usize)> = (0..corpus.len())
        .flat_map(|j| (0..corpus.documents()[j].len()).map(move |i| (j, i)))
        .collect();
    assert!(!tokens.is_empty());
    let mut full_validations = 0;
    for _ in 0..operations {
        let (j, i) = tokens[rng.random_range(0..tokens.len())];
        if state.doc(j).seat_of(i).is_some() {
            let before = state.clone();
            let vacated = state.unseat(j, i).unwrap();
            check_counts(&state);
            let mut restored = state.clone();
            restored.seat(j, i, vacated.restore_choice()).unwrap();
            assert_eq!(restored, before, "unseat then restore differs at ({j},{i})");
            assert!(state.unseat(j, i).is_err(), "double unseat accepted");
        } else {
            let choice = random_choice(&state, j, &mut rng);
            state.seat(j, i, choice).unwrap();
            check_counts(&state);
            assert!(state.seat(j, i, SeatChoice::Table(0)).is_err(), "double seat accepted");
        }
        if tokens.iter().all(|&(j, i)| state.doc(j).seat_of(i).is_some()) {
            state.validate().unwrap();
            full_validations += 1;
        }
    }
    full_validations
}
