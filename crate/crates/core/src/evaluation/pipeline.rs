use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use log::{info, warn};
use rand::Rng;

use crate::analogy::{rank_candidates, sort_entries, RankMode, Ranking, ScoredCandidate};
use crate::error::{Error, Result};
use crate::quadgen::{select_prototypes_for, Prototype, PrototypeSet};
use crate::seed;
use crate::text::{EmbeddingTable, QADataset, Question, WhType};

use super::encoders::{MeanEncoder, SentenceEncoder};
use super::metrics::{map, mrr, RankedList};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub mode: RankMode,
    pub cosine_epsilon: f64,
    /// Questions of other types are ignored entirely.
    pub types: Vec<WhType>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: RankMode::Energy,
            cosine_epsilon: 1e-8,
            types: WhType::ANALOGY.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    /// A wh-type name or `combined`.
    pub subset: String,
    pub questions: usize,
    pub skipped: usize,
    /// `None` when no question was evaluated.
    pub map: Option<f64>,
    pub mrr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn combined(&self) -> &MetricsRow {
        self.rows.last().expect("report always has a combined row")
    }

    pub fn row(&self, subset: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.subset == subset)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("subset\tquestions\tskipped\tMAP\tMRR\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.subset,
                r.questions,
                r.skipped,
                fmt_metric(r.map),
                fmt_metric(r.mrr)
            );
        }
        out
    }
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{v:.6}"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub lists: Vec<RankedList>,
    /// Degenerate shift comparisons met while scoring.
    pub degenerate: usize,
}

fn usable(q: &Question, protos: &[Prototype], excluded: &HashSet<&str>) -> bool {
    q.has_positive()
        && !protos.is_empty()
        && !excluded.contains(q.id.as_str())
        && !q.text.is_empty()
        && q.candidates.iter().all(|c| !c.text.is_empty())
}

/// Runs `rank` on every usable question of `options.types` and aggregates
/// MAP/MRR per type and combined. Questions without a correct candidate,
/// without same-type prototypes, serving as a prototype, or holding an empty
/// sentence are counted as skipped.
pub fn evaluate_with(
    dataset: &QADataset,
    prototypes: &PrototypeSet,
    options: &EvalOptions,
    mut rank: impl FnMut(&Question, &[Prototype]) -> Result<Ranking>,
) -> Result<Evaluation> {
    let excluded = prototypes.source_ids();
    let mut lists = Vec::new();
    let mut skipped: HashMap<WhType, usize> = HashMap::new();
    let mut degenerate = 0;
    for q in dataset.questions().iter().filter(|q| options.types.contains(&q.wh_type)) {
        let protos = prototypes.of_type(q.wh_type);
        if !usable(q, protos, &excluded) {
            *skipped.entry(q.wh_type).or_default() += 1;
            continue;
        }
        let ranking = rank(q, protos)?;
        degenerate += ranking.degenerate;
        lists.push(RankedList {
            question_id: q.id.clone(),
            wh_type: q.wh_type,
            entries: ranking.entries,
            labels: q.labels(),
        });
    }
    if degenerate > 0 {
        warn!("{degenerate} shift comparisons had a near-zero norm and scored 0");
    }

    let row = |subset: String, lists: &[RankedList], skipped: usize| -> Result<MetricsRow> {
        let (map, mrr) = if lists.is_empty() {
            (None, None)
        } else {
            (Some(map(lists)?), Some(mrr(lists)?))
        };
        Ok(MetricsRow {
            subset,
            questions: lists.len(),
            skipped,
            map,
            mrr,
        })
    };
    let mut rows = Vec::with_capacity(options.types.len() + 1);
    for &t in &options.types {
        let of_type: Vec<RankedList> = lists.iter().filter(|l| l.wh_type == t).cloned().collect();
        rows.push(row(t.to_string(), &of_type, skipped.get(&t).copied().unwrap_or(0))?);
    }
    rows.push(row("combined".into(), &lists, skipped.values().sum())?);
    Ok(Evaluation {
        report: MetricsReport { rows },
        lists,
        degenerate,
    })
}

type PrototypeVectors = HashMap<WhType, Vec<(Vec<f64>, Vec<f64>)>>;

fn encode_prototypes<E: SentenceEncoder>(encoder: &E, prototypes: &PrototypeSet) -> Result<PrototypeVectors> {
    let mut out = HashMap::new();
    for t in prototypes.types() {
        let vecs = prototypes
            .of_type(t)
            .iter()
            .map(|p| Ok((encoder.encode(&p.question)?, encoder.encode(&p.answer)?)))
            .collect::<Result<Vec<_>>>()?;
        out.insert(t, vecs);
    }
    Ok(out)
}

fn rank_one<E: SentenceEncoder>(
    encoder: &E,
    q: &Question,
    protos: &[(Vec<f64>, Vec<f64>)],
    options: &EvalOptions,
) -> Result<Ranking> {
    let question = encoder.encode(&q.text)?;
    let cands = q
        .candidates
        .iter()
        .map(|c| encoder.encode(&c.text))
        .collect::<Result<Vec<_>>>()?;
    rank_candidates(&question, &cands, protos, options.mode, options.cosine_epsilon)
}

/// Ranks candidates by prototype-max analogical score under `encoder`.
pub fn evaluate<E: SentenceEncoder>(
    encoder: &E,
    dataset: &QADataset,
    prototypes: &PrototypeSet,
    options: &EvalOptions,
) -> Result<Evaluation> {
    let vecs = encode_prototypes(encoder, prototypes)?;
    evaluate_with(dataset, prototypes, options, |q, _| {
        rank_one(encoder, q, &vecs[&q.wh_type], options)
    })
}

/// Rankings for every question of `options.types` that has same-type
/// prototypes and no empty sentence, labelled or not. Others are skipped
/// and counted.
pub fn rank_questions<E: SentenceEncoder>(
    encoder: &E,
    dataset: &QADataset,
    prototypes: &PrototypeSet,
    options: &EvalOptions,
) -> Result<(Vec<(String, Ranking)>, usize)> {
    let vecs = encode_prototypes(encoder, prototypes)?;
    let mut out = Vec::new();
    let mut skipped = 0;
    for q in dataset.questions().iter().filter(|q| options.types.contains(&q.wh_type)) {
        let rankable = !q.text.is_empty() && q.candidates.iter().all(|c| !c.text.is_empty());
        match vecs.get(&q.wh_type) {
            Some(protos) if rankable => out.push((q.id.clone(), rank_one(encoder, q, protos, options)?)),
            _ => skipped += 1,
        }
    }
    Ok((out, skipped))
}

/// `question_id<TAB>candidate_index<TAB>score<TAB>rank<TAB>best_prototype_index`,
/// ranks 1-based.
pub fn rankings_to_tsv(rankings: &[(String, Ranking)]) -> String {
    let mut out = String::new();
    for (id, r) in rankings {
        for (rank, e) in r.entries.iter().enumerate() {
            let _ = writeln!(out, "{id}\t{}\t{}\t{}\t{}", e.index, e.score, rank + 1, e.best_prototype);
        }
    }
    out
}

/// Same ranking with averaged word vectors as sentence vectors.
pub fn baseline_rank(
    dataset: &QADataset,
    table: &EmbeddingTable,
    prototypes: &PrototypeSet,
    options: &EvalOptions,
) -> Result<Evaluation> {
    evaluate(&MeanEncoder::new(table), dataset, prototypes, options)
}

/// Uniformly random scores, seeded per question.
pub fn random_rank(
    dataset: &QADataset,
    prototypes: &PrototypeSet,
    seed: u64,
    options: &EvalOptions,
) -> Result<Evaluation> {
    evaluate_with(dataset, prototypes, options, |q, _| {
        let mut rng = seed::rng(seed, &format!("random-scores/{}", q.id));
        let mut entries: Vec<ScoredCandidate> = (0..q.candidates.len())
            .map(|index| ScoredCandidate {
                index,
                score: rng.gen(),
                best_prototype: 0,
            })
            .collect();
        sort_entries(&mut entries, RankMode::Energy);
        Ok(Ranking {
            entries,
            mode: RankMode::Energy,
            degenerate: 0,
        })
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub p: usize,
    pub map: Option<f64>,
    pub mrr: Option<f64>,
    pub questions: usize,
}

/// Re-selects `p` prototypes per type from `source` for each value and
/// evaluates `dataset` with them.
pub fn sweep_prototypes<E: SentenceEncoder>(
    encoder: &E,
    dataset: &QADataset,
    source: &QADataset,
    p_values: &[usize],
    seed: u64,
    options: &EvalOptions,
) -> Result<Vec<SweepRow>> {
    if p_values.is_empty() {
        return Err(Error::Contract("sweep needs at least one p value".into()));
    }
    let mut rows = Vec::with_capacity(p_values.len());
    for &p in p_values {
        let protos = select_prototypes_for(source, p, seed, &options.types)?;
        let combined = evaluate(encoder, dataset, &protos, options)?.report.combined().clone();
        info!("p = {p}: MAP {:?} MRR {:?}", combined.map, combined.mrr);
        rows.push(SweepRow {
            p,
            map: combined.map,
            mrr: combined.mrr,
            questions: combined.questions,
        });
    }
    Ok(rows)
}

/// `p<TAB>MAP<TAB>MRR` with a header.
pub fn sweep_to_tsv(rows: &[SweepRow]) -> String {
    let mut out = String::from("p\tMAP\tMRR\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}", r.p, fmt_metric(r.map), fmt_metric(r.mrr));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analogy::analogical_dissimilarity;
    use crate::text::{tokenize, Candidate, Token};

    /// Sentence vector = per-position word ids, for hand-checkable scores.
    struct IdentityEncoder(HashMap<String, f64>);

    impl SentenceEncoder for IdentityEncoder {
        fn dim(&self) -> usize {
            2
        }
        fn encode(&self, tokens: &[Token]) -> Result<Vec<f64>> {
            let id = |i: usize| tokens.get(i).map_or(0.0, |t| self.0[t.as_str()]);
            Ok(vec![id(0), id(1)])
        }
    }

    fn q(id: &str, text: &str, cands: &[(&str, bool)]) -> Question {
        Question::new(
            id,
            tokenize(text),
            cands
                .iter()
                .map(|(t, l)| Candidate { text: tokenize(t).into(), label: *l })
                .collect(),
        )
    }

    fn toy() -> QADataset {
        QADataset::new(vec![
            q("p1", "who a", &[("x b", true), ("y c", false)]),
            q("t1", "who b", &[("y c", false), ("x d", true), ("z a", false)]),
            q("t2", "who c", &[("x a", true), ("y b", false)]),
            q("t3", "who d", &[("y a", false), ("z b", false)]),
            q("t4", "when a", &[("x a", true)]),
        ])
        .unwrap()
    }

    fn ids() -> IdentityEncoder {
        let words = ["who", "when", "a", "b", "c", "d", "x", "y", "z"];
        IdentityEncoder(words.iter().enumerate().map(|(i, w)| (w.to_string(), i as f64 + 1.0)).collect())
    }

    fn protos() -> PrototypeSet {
        let ds = toy();
        select_prototypes_for(&ds, 1, 0, &[WhType::Who]).unwrap()
    }

    #[test]
    fn skips_are_counted_per_type() {
        let ev = evaluate(&ids(), &toy(), &protos(), &EvalOptions::default()).unwrap();
        let who = ev.report.row("who").unwrap();
        // t3 has no positive; the prototype question itself is excluded.
        assert_eq!((who.questions, who.skipped), (2, 2));
        let when = ev.report.row("when").unwrap();
        assert_eq!((when.questions, when.skipped, when.mrr), (0, 1, None));
        assert_eq!(ev.report.combined().skipped, 3);
        assert!(ev.report.to_tsv().contains("when\t0\t1\tNA\tNA\n"));
    }

    #[test]
    fn identity_encoder_matches_dissimilarity_oracle() {
        let enc = ids();
        let ds = toy();
        let ps = protos();
        let opts = EvalOptions { mode: RankMode::Dissimilarity, ..Default::default() };
        let ev = evaluate(&enc, &ds, &ps, &opts).unwrap();

        let proto = &ps.of_type(WhType::Who)[0];
        let (pa, pb) = (enc.encode(&proto.question).unwrap(), enc.encode(&proto.answer).unwrap());
        let mut total_rr = 0.0;
        for list in &ev.lists {
            let question = ds.questions().iter().find(|x| x.id == list.question_id).unwrap();
            let c = enc.encode(&question.text).unwrap();
            let scores: Vec<f64> = question
                .candidates
                .iter()
                .map(|cand| analogical_dissimilarity(&pa, &pb, &c, &enc.encode(&cand.text).unwrap()).unwrap())
                .collect();
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap());
            assert_eq!(list.entries.iter().map(|e| e.index).collect::<Vec<_>>(), order);
            let first = order.iter().position(|&i| question.candidates[i].label).unwrap();
            total_rr += 1.0 / (first + 1) as f64;
        }
        let oracle = total_rr / ev.lists.len() as f64;
        assert!((ev.report.row("who").unwrap().mrr.unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_inverted_scorers() {
        let ds = QADataset::new(vec![
            q("p", "who a", &[("a", true)]),
            q("1", "who b", &[("a", false), ("b", true), ("c", false)]),
            q("2", "who c", &[("a", true), ("b", false), ("c", false), ("d", false)]),
        ])
        .unwrap();
        let ps = PrototypeSet::from_prototypes(vec![Prototype {
            source_id: "p".into(),
            question: tokenize("who a").into(),
            answer: tokenize("a").into(),
            wh_type: WhType::Who,
        }]);
        let run = |invert: bool| {
            evaluate_with(&ds, &ps, &EvalOptions::default(), |q, _| {
                let mut entries: Vec<ScoredCandidate> = q
                    .candidates
                    .iter()
                    .enumerate()
                    .map(|(index, c)| {
                        let s = if c.label { 1.0 } else { 0.0 };
                        ScoredCandidate { index, score: if invert { -s } else { s }, best_prototype: 0 }
                    })
                    .collect();
                sort_entries(&mut entries, RankMode::Energy);
                Ok(Ranking { entries, mode: RankMode::Energy, degenerate: 0 })
            })
            .unwrap()
        };
        let best = run(false);
        assert_eq!(best.report.combined().map, Some(1.0));
        assert_eq!(best.report.combined().mrr, Some(1.0));
        let worst = run(true);
        let expected = (1.0 / 3.0 + 1.0 / 4.0) / 2.0;
        assert!((worst.report.combined().mrr.unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_candidates_keep_input_order() {
        let mut t = EmbeddingTable::new(2, 0).unwrap();
        for (w, v) in [("who", [1.0, 0.0]), ("a", [0.0, 1.0]), ("b", [1.0, 1.0]), ("c", [0.5, 0.2])] {
            t.insert(w, &v).unwrap();
        }
        let ds = QADataset::new(vec![
            q("p", "who a", &[("b", true)]),
            q("1", "who c", &[("a b", false), ("a b", true), ("c", false)]),
        ])
        .unwrap();
        let ps = PrototypeSet::from_prototypes(vec![Prototype {
            source_id: "p".into(),
            question: tokenize("who a").into(),
            answer: tokenize("b").into(),
            wh_type: WhType::Who,
        }]);
        let ev = baseline_rank(&ds, &t, &ps, &EvalOptions::default()).unwrap();
        let e = &ev.lists[0].entries;
        let pos0 = e.iter().position(|x| x.index == 0).unwrap();
        let pos1 = e.iter().position(|x| x.index == 1).unwrap();
        assert_eq!(pos1, pos0 + 1);
        assert_eq!(e[pos0].score, e[pos1].score);
    }

    #[test]
    fn sweep_rows_and_determinism() {
        let ds = toy();
        let enc = ids();
        let opts = EvalOptions::default();
        let one = sweep_prototypes(&enc, &ds, &ds, &[1], 3, &opts).unwrap();
        assert_eq!(one.len(), 1);
        let twice = sweep_prototypes(&enc, &ds, &ds, &[2, 2], 3, &opts).unwrap();
        assert_eq!(twice[0], twice[1]);
        assert!(sweep_prototypes(&enc, &ds, &ds, &[], 3, &opts).is_err());
        assert!(sweep_to_tsv(&one).starts_with("p\tMAP\tMRR\n1\t"));
    }

    #[test]
    fn rank_questions_includes_unlabelled() {
        let ds = toy();
        let (ranked, skipped) = rank_questions(&ids(), &ds, &protos(), &EvalOptions::default()).unwrap();
        // Every who question is ranked, including t3 and the prototype's own;
        // the when question has no prototypes.
        assert_eq!((ranked.len(), skipped), (4, 1));
        let tsv = rankings_to_tsv(&ranked);
        assert_eq!(tsv.lines().count(), 2 + 3 + 2 + 2);
        assert!(tsv.lines().all(|l| l.split('\t').count() == 5));
    }

    #[test]
    fn random_scorer_is_seeded() {
        let ds = toy();
        let ps = protos();
        let opts = EvalOptions::default();
        let a = random_rank(&ds, &ps, 1, &opts).unwrap();
        assert_eq!(a, random_rank(&ds, &ps, 1, &opts).unwrap());
        for l in &a.lists {
            let mut idx: Vec<usize> = l.entries.iter().map(|e| e.index).collect();
            idx.sort_unstable();
            assert_eq!(idx, (0..l.labels.len()).collect::<Vec<_>>());
        }
    }
}
