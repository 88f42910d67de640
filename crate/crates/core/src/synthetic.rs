//! Small generated QA corpus with type-specific answer markers, used to
//! exercise the full pipeline end to end.
//!
//! Each question is a wh-word, a filler or two, and one or two entity words.
//! Every candidate mentions the question's first entity. The correct one
//! also carries a marker word of the question's type (a person, date or
//! place token); wrong ones carry another type's marker or a noise word.
//! Word vectors are random, except that each type's markers are drawn
//! around a common centre.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::seed;
use crate::text::{Candidate, EmbeddingTable, QADataset, Question, Token, WhType};

const QUESTION_FILLERS: [&str; 12] = [
    "is", "was", "did", "the", "of", "in", "to", "for", "first", "born", "make", "find",
];
const ANSWER_FILLERS: [&str; 15] = [
    "he", "she", "it", "has", "had", "been", "at", "on", "and", "with", "by", "from", "known",
    "later", "early",
];
const ENTITIES: usize = 100;
const MARKERS: usize = 10;
const NOISE: usize = 15;
const MARKER_SPREAD: f32 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub train_per_type: usize,
    pub test_per_type: usize,
    /// Candidates per question; exactly one is correct.
    pub candidates: usize,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_per_type: 20,
            test_per_type: 10,
            candidates: 4,
            embedding_dim: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub train: QADataset,
    pub test: QADataset,
    pub table: EmbeddingTable,
}

fn marker_prefix(t: WhType) -> &'static str {
    match t {
        WhType::Who => "person",
        WhType::When => "year",
        WhType::Where => "place",
        WhType::Other => "thing",
    }
}

fn markers(t: WhType) -> Vec<String> {
    (0..MARKERS).map(|i| format!("{}{i}", marker_prefix(t))).collect()
}

fn entity(i: usize) -> String {
    format!("ent{i:02}")
}

/// Every word the generator can emit.
pub fn vocabulary() -> Vec<String> {
    let mut v: Vec<String> = WhType::ANALOGY.iter().map(|t| t.as_str().to_owned()).collect();
    v.extend(QUESTION_FILLERS.iter().map(|s| s.to_string()));
    v.extend(ANSWER_FILLERS.iter().map(|s| s.to_string()));
    v.extend((0..ENTITIES).map(entity));
    for t in WhType::ANALOGY {
        v.extend(markers(t));
    }
    v.extend((0..NOISE).map(|i| format!("noise{i}")));
    v
}

fn tokens(words: Vec<String>) -> Vec<Token> {
    words.into_iter().map(|w| Token::new(&w).expect("generated words are valid")).collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &'a [&'a str]) -> String {
    items.choose(rng).expect("non-empty").to_string()
}

fn answer(rng: &mut ChaCha8Rng, ent: &str, key: String) -> Vec<Token> {
    let mut words = vec![ent.to_owned(), key];
    for _ in 0..rng.gen_range(1..=3) {
        words.push(pick(rng, &ANSWER_FILLERS));
    }
    words[1..].shuffle(rng);
    tokens(words)
}

fn question(rng: &mut ChaCha8Rng, id: String, t: WhType, candidates: usize) -> Question {
    let ent = entity(rng.gen_range(0..ENTITIES));
    let mut words = vec![t.as_str().to_owned()];
    for _ in 0..rng.gen_range(1..=2) {
        words.push(pick(rng, &QUESTION_FILLERS));
    }
    words.push(ent.clone());
    if rng.gen_bool(0.5) {
        words.push(entity(rng.gen_range(0..ENTITIES)));
    }

    let own = markers(t);
    let others: Vec<String> = WhType::ANALOGY
        .iter()
        .filter(|&&o| o != t)
        .flat_map(|&o| markers(o))
        .collect();
    let right = rng.gen_range(0..candidates);
    let cands = (0..candidates)
        .map(|i| {
            let key = if i == right {
                own.choose(rng).expect("markers").clone()
            } else if rng.gen_bool(0.6) {
                others.choose(rng).expect("markers").clone()
            } else {
                format!("noise{}", rng.gen_range(0..NOISE))
            };
            Candidate {
                text: answer(rng, &ent, key).into(),
                label: i == right,
            }
        })
        .collect();
    Question::new(id, tokens(words), cands)
}

fn split(rng: &mut ChaCha8Rng, name: &str, per_type: usize, candidates: usize) -> Result<QADataset> {
    let mut qs = Vec::with_capacity(per_type * 3);
    for t in WhType::ANALOGY {
        for i in 0..per_type {
            qs.push(question(rng, format!("{name}-{t}-{i}"), t, candidates));
        }
    }
    QADataset::new(qs)
}

/// Builds train and test splits plus a random word-vector table covering
/// the whole vocabulary.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if config.candidates < 2 {
        return Err(Error::Config("synthetic questions need at least 2 candidates".into()));
    }
    if config.train_per_type == 0 || config.test_per_type == 0 || config.embedding_dim == 0 {
        return Err(Error::Config("synthetic split sizes and dim must be positive".into()));
    }
    let mut rng = seed::rng(config.seed, "synthetic/text");
    let train = split(&mut rng, "train", config.train_per_type, config.candidates)?;
    let test = split(&mut rng, "test", config.test_per_type, config.candidates)?;

    let mut rng = seed::rng(config.seed, "synthetic/vectors");
    let mut table = EmbeddingTable::new(config.embedding_dim, config.seed)?;
    let dim = config.embedding_dim;
    let uniform = |rng: &mut ChaCha8Rng| -> Vec<f32> { (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    // Markers of one type sit near a shared centre, like semantically
    // related words in pretrained vectors.
    let centres: Vec<Vec<f32>> = WhType::ANALOGY.iter().map(|_| uniform(&mut rng)).collect();
    for w in vocabulary() {
        let ty = WhType::ANALOGY.iter().position(|&t| w.starts_with(marker_prefix(t)));
        let v = match ty {
            Some(i) => {
                let jitter = uniform(&mut rng);
                centres[i].iter().zip(jitter).map(|(c, j)| c + MARKER_SPREAD * j).collect()
            }
            None => uniform(&mut rng),
        };
        table.insert(&w, &v)?;
    }
    Ok(SyntheticCorpus { train, test, table })
}

impl SyntheticCorpus {
    /// Writes `train.tsv`, `test.tsv` and `vectors.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let header = "question_id\tquestion\tcandidate\tlabel\n";
        write_atomic(&dir.join("train.tsv"), (header.to_owned() + &self.train.to_tsv()).as_bytes())?;
        write_atomic(&dir.join("test.tsv"), (header.to_owned() + &self.test.to_tsv()).as_bytes())?;
        write_atomic(&dir.join("vectors.txt"), self.table.to_text().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn vocabulary_is_small_and_distinct() {
        let v = vocabulary();
        let set: HashSet<&String> = v.iter().collect();
        assert_eq!(set.len(), v.len());
        assert!(v.len() <= 200);
    }

    #[test]
    fn corpus_shape() {
        let c = generate(&SyntheticConfig::default()).unwrap();
        assert_eq!(c.train.len(), 60);
        assert_eq!(c.test.len(), 30);
        let vocab: HashSet<String> = vocabulary().into_iter().collect();
        for ds in [&c.train, &c.test] {
            assert!(ds.vocabulary().is_subset(&vocab));
            for q in ds.questions() {
                assert_eq!(q.candidates.len(), 4);
                assert_eq!(q.positives().count(), 1);
                assert_ne!(q.wh_type, WhType::Other);
            }
        }
        assert!(vocab.iter().all(|w| c.table.contains(w)));
    }

    #[test]
    fn correct_answers_carry_own_marker() {
        let c = generate(&SyntheticConfig::default()).unwrap();
        for q in c.train.questions() {
            let prefix = marker_prefix(q.wh_type);
            for cand in &q.candidates {
                let has = cand.text.iter().any(|t| t.as_str().starts_with(prefix));
                assert_eq!(has, cand.label, "{}", q.id);
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate(&SyntheticConfig::default()).unwrap();
        let b = generate(&SyntheticConfig::default()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.table, b.table);
        let c = generate(&SyntheticConfig { seed: 1, ..Default::default() }).unwrap();
        assert_ne!(a.train, c.train);
    }
}
