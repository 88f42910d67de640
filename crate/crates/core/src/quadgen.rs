//! Prototype selection and analogical quadruple generation.
//!
//! A quadruple `[q_p : a_p :: q_i : a_ij]` pairs a prototype QA pair with a
//! question of the same wh-type and one of its candidates. It is positive
//! when the candidate is a correct answer.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use log::warn;
use rand::seq::{index, SliceRandom};

use crate::error::{Error, Result};
use crate::seed;
use crate::text::{join, tokenize, QADataset, Question, Sentence, WhType};

#[derive(Clone, Debug, PartialEq)]
pub struct Prototype {
    /// Id of the dataset question the pair was taken from.
    pub source_id: String,
    pub question: Sentence,
    pub answer: Sentence,
    pub wh_type: WhType,
}

/// Prototype lists keyed by wh-type.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrototypeSet {
    by_type: BTreeMap<WhType, Vec<Prototype>>,
    /// Requested types that had no answerable question.
    pub empty_types: Vec<WhType>,
    /// `(type, requested, available)` where fewer than `p` were available.
    pub clamped: Vec<(WhType, usize, usize)>,
}

impl PrototypeSet {
    pub fn from_prototypes(protos: Vec<Prototype>) -> Self {
        let mut by_type: BTreeMap<WhType, Vec<Prototype>> = BTreeMap::new();
        for p in protos {
            by_type.entry(p.wh_type).or_default().push(p);
        }
        PrototypeSet {
            by_type,
            ..Default::default()
        }
    }

    pub fn of_type(&self, t: WhType) -> &[Prototype] {
        self.by_type.get(&t).map_or(&[], Vec::as_slice)
    }

    pub fn types(&self) -> impl Iterator<Item = WhType> + '_ {
        self.by_type.iter().filter(|(_, v)| !v.is_empty()).map(|(t, _)| *t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Prototype> {
        self.by_type.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.by_type.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn source_ids(&self) -> HashSet<&str> {
        self.iter().map(|p| p.source_id.as_str()).collect()
    }

    /// `wh_type<TAB>source_id<TAB>question<TAB>answer` per prototype.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in self.iter() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                p.wh_type,
                p.source_id,
                join(&p.question),
                join(&p.answer)
            );
        }
        out
    }

    pub fn from_tsv(text: &str, path: &std::path::Path) -> Result<Self> {
        let mut protos = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::parse(path, i + 1, "expected 4 columns"));
            }
            let wh_type = cols[0]
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad type {:?}", cols[0])))?;
            protos.push(Prototype {
                source_id: cols[1].to_owned(),
                question: tokenize(cols[2]).into(),
                answer: tokenize(cols[3]).into(),
                wh_type,
            });
        }
        Ok(PrototypeSet::from_prototypes(protos))
    }
}

fn first_usable_answer(q: &Question) -> Option<&Sentence> {
    if q.text.is_empty() {
        return None;
    }
    q.positives().map(|c| &c.text).find(|t| !t.is_empty())
}

/// Draws up to `p` prototypes per analogy type (who, when, where).
pub fn select_prototypes(dataset: &QADataset, p: usize, seed: u64) -> Result<PrototypeSet> {
    select_prototypes_for(dataset, p, seed, &WhType::ANALOGY)
}

/// Draws up to `p` prototypes for each of `types` by a seeded shuffle of
/// that type's answerable questions. Each question gives at most one
/// prototype: itself paired with its first correct answer.
pub fn select_prototypes_for(
    dataset: &QADataset,
    p: usize,
    seed: u64,
    types: &[WhType],
) -> Result<PrototypeSet> {
    if p == 0 {
        return Err(Error::Contract("prototype count must be at least 1".into()));
    }
    let mut set = PrototypeSet::default();
    for &t in types {
        let mut pool: Vec<(&Question, &Sentence)> = dataset
            .of_type(t)
            .filter_map(|q| first_usable_answer(q).map(|a| (q, a)))
            .collect();
        if pool.is_empty() {
            warn!("no answerable {t} questions; {t} has no prototypes");
            set.empty_types.push(t);
            set.by_type.insert(t, Vec::new());
            continue;
        }
        if pool.len() < p {
            warn!("only {} answerable {t} questions for {p} prototypes", pool.len());
            set.clamped.push((t, p, pool.len()));
        }
        let mut rng = seed::rng(seed, &format!("prototypes/{t}"));
        pool.shuffle(&mut rng);
        let chosen = pool
            .into_iter()
            .take(p)
            .map(|(q, a)| Prototype {
                source_id: q.id.clone(),
                question: q.text.clone(),
                answer: a.clone(),
                wh_type: t,
            })
            .collect();
        set.by_type.insert(t, chosen);
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Quadruple {
    pub a: Sentence,
    pub b: Sentence,
    pub c: Sentence,
    pub d: Sentence,
    /// `Some(true)` when `d` correctly answers `c`; `None` at evaluation time.
    pub label: Option<bool>,
    pub wh_type: WhType,
}

impl Quadruple {
    fn new(p: &Prototype, q: &Question, d: &Sentence, label: Option<bool>) -> Self {
        Quadruple {
            a: p.question.clone(),
            b: p.answer.clone(),
            c: q.text.clone(),
            d: d.clone(),
            label,
            wh_type: q.wh_type,
        }
    }
}

/// Positive quadruples for every (prototype, question, correct answer)
/// triple of a type, each followed by up to `negatives_per_positive`
/// quadruples with distinct random wrong answers of the same question.
///
/// Prototype questions never appear as targets. Sentences that tokenize to
/// nothing are left out.
pub fn generate_training_quadruples(
    dataset: &QADataset,
    prototypes: &PrototypeSet,
    negatives_per_positive: usize,
    seed: u64,
) -> Vec<Quadruple> {
    let excluded = prototypes.source_ids();
    let mut rng = seed::rng(seed, "negatives");
    let mut out = Vec::new();
    for t in WhType::ALL {
        let protos = prototypes.of_type(t);
        if protos.is_empty() {
            continue;
        }
        let targets: Vec<&Question> = dataset
            .of_type(t)
            .filter(|q| !excluded.contains(q.id.as_str()) && !q.text.is_empty())
            .collect();
        for p in protos {
            for q in &targets {
                let wrong: Vec<&Sentence> =
                    q.negatives().map(|c| &c.text).filter(|s| !s.is_empty()).collect();
                for right in q.positives().map(|c| &c.text).filter(|s| !s.is_empty()) {
                    out.push(Quadruple::new(p, q, right, Some(true)));
                    let n = negatives_per_positive.min(wrong.len());
                    for i in index::sample(&mut rng, wrong.len(), n) {
                        out.push(Quadruple::new(p, q, wrong[i], Some(false)));
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalQuadruples {
    /// `p × k` quadruples, prototype-major, candidate-minor.
    pub quadruples: Vec<Quadruple>,
    /// Set when the question's type has no prototypes.
    pub skipped: bool,
}

/// All prototype × candidate quadruples for one question.
pub fn generate_eval_quadruples(question: &Question, prototypes: &[Prototype]) -> EvalQuadruples {
    let quadruples = prototypes
        .iter()
        .flat_map(|p| {
            question
                .candidates
                .iter()
                .map(move |c| Quadruple::new(p, question, &c.text, None))
        })
        .collect();
    EvalQuadruples {
        quadruples,
        skipped: prototypes.is_empty(),
    }
}

/// `wh_type<TAB>a<TAB>b<TAB>c<TAB>d<TAB>y`, tokens space-joined.
pub fn quadruples_to_tsv(quads: &[Quadruple]) -> String {
    let mut out = String::new();
    for q in quads {
        let y = match q.label {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            q.wh_type,
            join(&q.a),
            join(&q.b),
            join(&q.c),
            join(&q.d),
            y
        );
    }
    out
}
