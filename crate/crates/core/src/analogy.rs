//! Shift vectors, analogical dissimilarity, cosine energy, the contrastive
//! objective, and candidate ranking.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Var};

/// Reading of the dissimilar-pair loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossVariant {
    /// `max(E − m, 0)²`: pushes dissimilar energies below the margin.
    #[default]
    Hinge,
    /// `max((E − m)², 0) = (E − m)²`: pulls dissimilar energies to the margin.
    Literal,
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossVariant::Hinge => "hinge",
            LossVariant::Literal => "literal",
        })
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hinge" => Ok(LossVariant::Hinge),
            "literal" => Ok(LossVariant::Literal),
            other => Err(Error::Config(format!("unknown loss variant {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub margin: f64,
    pub loss_variant: LossVariant,
    /// Coefficient of the squared-norm penalty on trainable weights.
    pub l2_lambda: f64,
    pub cosine_epsilon: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            margin: 0.0,
            loss_variant: LossVariant::Hinge,
            l2_lambda: 0.0,
            cosine_epsilon: 1e-8,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.margin) {
            return Err(Error::Config(format!("margin {} outside [-1, 1]", self.margin)));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::Config(format!("l2 lambda {} must be >= 0", self.l2_lambda)));
        }
        if !(self.cosine_epsilon > 0.0) {
            return Err(Error::Config(format!(
                "cosine epsilon {} must be > 0",
                self.cosine_epsilon
            )));
        }
        Ok(())
    }
}

fn check_lengths(op: &'static str, lens: &[usize]) -> Result<()> {
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Shape {
            op,
            shapes: format!("lengths {lens:?}"),
        });
    }
    Ok(())
}

/// `‖(a − b) − (c − d)‖`. Zero exactly when `a : b :: c : d` holds as an
/// arithmetic proportion.
pub fn analogical_dissimilarity<R: Real>(a: &[R], b: &[R], c: &[R], d: &[R]) -> Result<f64> {
    check_lengths("analogical_dissimilarity", &[a.len(), b.len(), c.len(), d.len()])?;
    let sq: f64 = (0..a.len())
        .map(|i| {
            let v = (a[i].as_f64() - b[i].as_f64()) - (c[i].as_f64() - d[i].as_f64());
            v * v
        })
        .sum();
    Ok(sq.sqrt())
}

/// Pairwise differences `f(a) − f(b)` and `f(c) − f(d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftPair {
    pub f_ab: Vec<f64>,
    pub f_cd: Vec<f64>,
}

impl ShiftPair {
    pub fn new(f_ab: Vec<f64>, f_cd: Vec<f64>) -> Result<Self> {
        check_lengths("shift_pair", &[f_ab.len(), f_cd.len()])?;
        Ok(ShiftPair { f_ab, f_cd })
    }

    pub fn from_vectors<R: Real>(a: &[R], b: &[R], c: &[R], d: &[R]) -> Result<Self> {
        check_lengths("shift_pair", &[a.len(), b.len(), c.len(), d.len()])?;
        let diff = |x: &[R], y: &[R]| x.iter().zip(y).map(|(p, q)| p.as_f64() - q.as_f64()).collect();
        Ok(ShiftPair {
            f_ab: diff(a, b),
            f_cd: diff(c, d),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Energy {
    pub value: f64,
    /// Set when a shift had norm below epsilon; `value` is then 0.
    pub degenerate: bool,
}

/// Cosine similarity between the two shifts.
pub fn energy(pair: &ShiftPair, eps: f64) -> Energy {
    cosine(&pair.f_ab, &pair.f_cd, eps)
}

fn cosine(u: &[f64], v: &[f64], eps: f64) -> Energy {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu < eps || nv < eps {
        return Energy {
            value: 0.0,
            degenerate: true,
        };
    }
    Energy {
        value: (dot / (nu * nv)).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// `(1 − E)²` for analogous quadruples; the configured margin term otherwise.
pub fn contrastive_loss(e: f64, analogous: bool, hp: &HyperParams) -> f64 {
    if analogous {
        (1.0 - e).powi(2)
    } else {
        match hp.loss_variant {
            LossVariant::Hinge => (e - hp.margin).max(0.0).powi(2),
            LossVariant::Literal => (e - hp.margin).powi(2),
        }
    }
}

/// [`contrastive_loss`] recorded on a tape, for a scalar energy var.
pub fn contrastive_loss_on_tape<R: Real>(
    tape: &mut Tape<R>,
    e: Var,
    analogous: bool,
    hp: &HyperParams,
) -> Result<Var> {
    if analogous {
        let neg = tape.scale(e, -R::one())?;
        let gap = tape.add_scalar(neg, R::one())?;
        tape.square(gap)
    } else {
        let shifted = tape.add_scalar(e, R::lit(-hp.margin))?;
        match hp.loss_variant {
            LossVariant::Hinge => {
                let h = tape.relu(shifted)?;
                tape.square(h)
            }
            LossVariant::Literal => tape.square(shifted),
        }
    }
}

/// Sentence vectors of one quadruple on a tape, with its label.
#[derive(Clone, Copy, Debug)]
pub struct EncodedQuadruple {
    pub a: Var,
    pub b: Var,
    pub c: Var,
    pub d: Var,
    pub analogous: bool,
}

/// Energy of an encoded quadruple recorded on a tape.
pub fn energy_on_tape<R: Real>(tape: &mut Tape<R>, q: &EncodedQuadruple, eps: f64) -> Result<Var> {
    let f_ab = tape.sub(q.a, q.b)?;
    let f_cd = tape.sub(q.c, q.d)?;
    tape.cosine(f_ab, f_cd, R::lit(eps))
}

/// Mean contrastive loss over `batch` plus `l2_lambda · Σ‖θ‖²` over
/// `trainable`.
pub fn batch_loss<R: Real>(
    tape: &mut Tape<R>,
    batch: &[EncodedQuadruple],
    hp: &HyperParams,
    trainable: &[Var],
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Contract("batch_loss on an empty batch".into()));
    }
    let mut losses = Vec::with_capacity(batch.len());
    for q in batch {
        let e = energy_on_tape(tape, q, hp.cosine_epsilon)?;
        losses.push(contrastive_loss_on_tape(tape, e, q.analogous, hp)?);
    }
    let all = tape.concat(&losses)?;
    let total = tape.sum(all)?;
    let mean = tape.scale(total, R::lit(1.0 / batch.len() as f64))?;
    if hp.l2_lambda == 0.0 || trainable.is_empty() {
        return Ok(mean);
    }
    let mut norms = Vec::with_capacity(trainable.len());
    for &p in trainable {
        let sq = tape.square(p)?;
        norms.push(tape.sum(sq)?);
    }
    let norms = tape.concat(&norms)?;
    let l2 = tape.sum(norms)?;
    let l2 = tape.scale(l2, R::lit(hp.l2_lambda))?;
    tape.add(mean, l2)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankMode {
    /// Highest cosine between prototype shift and candidate shift first.
    #[default]
    Energy,
    /// Lowest analogical dissimilarity first.
    Dissimilarity,
}

impl fmt::Display for RankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankMode::Energy => "energy",
            RankMode::Dissimilarity => "dissimilarity",
        })
    }
}

impl FromStr for RankMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "energy" => Ok(RankMode::Energy),
            "dissimilarity" => Ok(RankMode::Dissimilarity),
            other => Err(Error::Config(format!("unknown ranking mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredCandidate {
    /// Position in the question's original candidate list.
    pub index: usize,
    pub score: f64,
    /// Prototype that produced `score`.
    pub best_prototype: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ranking {
    /// Best candidate first.
    pub entries: Vec<ScoredCandidate>,
    pub mode: RankMode,
    /// Degenerate (zero-norm) shift comparisons seen while scoring.
    pub degenerate: usize,
}

impl Ranking {
    pub fn order(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }
}

/// Scores each candidate by its best prototype (max energy or min
/// dissimilarity) and sorts, keeping original order among ties.
pub fn rank_candidates<R: Real, V: AsRef<[R]>>(
    question: &[R],
    candidates: &[V],
    prototypes: &[(V, V)],
    mode: RankMode,
    eps: f64,
) -> Result<Ranking> {
    if candidates.is_empty() {
        return Err(Error::Contract("rank_candidates needs at least one candidate".into()));
    }
    if prototypes.is_empty() {
        return Err(Error::Contract("rank_candidates needs at least one prototype".into()));
    }
    let to64 = |v: &[R]| -> Vec<f64> { v.iter().map(|x| x.as_f64()).collect() };
    let q = to64(question);
    let proto_shifts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = prototypes
        .iter()
        .map(|(pq, pa)| {
            let (pq, pa) = (to64(pq.as_ref()), to64(pa.as_ref()));
            let shift = pq.iter().zip(&pa).map(|(x, y)| x - y).collect();
            (pq, pa, shift)
        })
        .collect();

    let mut degenerate = 0;
    let mut entries = Vec::with_capacity(candidates.len());
    for (index, cand) in candidates.iter().enumerate() {
        let d = to64(cand.as_ref());
        check_lengths("rank_candidates", &[q.len(), d.len()])?;
        let q_shift: Vec<f64> = q.iter().zip(&d).map(|(x, y)| x - y).collect();
        let mut best: Option<(f64, usize)> = None;
        for (pi, (pq, pa, shift)) in proto_shifts.iter().enumerate() {
            check_lengths("rank_candidates", &[shift.len(), q_shift.len()])?;
            let score = match mode {
                RankMode::Energy => {
                    let e = cosine(shift, &q_shift, eps);
                    degenerate += usize::from(e.degenerate);
                    e.value
                }
                RankMode::Dissimilarity => analogical_dissimilarity(pq, pa, &q, &d)?,
            };
            let better = match (best, mode) {
                (None, _) => true,
                (Some((b, _)), RankMode::Energy) => score > b,
                (Some((b, _)), RankMode::Dissimilarity) => score < b,
            };
            if better {
                best = Some((score, pi));
            }
        }
        let (score, best_prototype) = best.expect("at least one prototype");
        entries.push(ScoredCandidate {
            index,
            score,
            best_prototype,
        });
    }
    sort_entries(&mut entries, mode);
    Ok(Ranking {
        entries,
        mode,
        degenerate,
    })
}

/// Stable sort: descending for energy, ascending for dissimilarity.
pub fn sort_entries(entries: &mut [ScoredCandidate], mode: RankMode) {
    entries.sort_by(|x, y| {
        let ord = x.score.partial_cmp(&y.score).unwrap_or(Ordering::Equal);
        match mode {
            RankMode::Energy => ord.reverse(),
            RankMode::Dissimilarity => ord,
        }
    });
}
