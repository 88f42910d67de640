//! Finite-difference check of the whole training objective: four sentence
//! encodings, shifts, energy, contrastive loss and the L2 term.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::analogy::{batch_loss, EncodedQuadruple, HyperParams, LossVariant};
use crate::encoder::{encode_on_tape, EncoderParams, EncoderVars};
use crate::error::{Error, Result};
use crate::numerics::{
    finite_difference_check, mixed_precision_check, GradReport, Real, ScalarFn, Tape, Tensor, Var,
};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    /// 32-bit analytic gradients against 64-bit central differences.
    Mixed32,
    /// Everything in 64-bit.
    F64,
}

impl Precision {
    pub fn tolerance(self) -> f64 {
        match self {
            Precision::Mixed32 => 1e-4,
            Precision::F64 => 1e-7,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Mixed32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::Mixed32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision {other:?}, use f32 or f64"))),
        }
    }
}

/// Two quadruples sharing their prototype pair, one of each label.
#[derive(Clone, Debug)]
pub struct PipelineInstance {
    pub input_dim: usize,
    pub hidden: usize,
    /// Sentences as rows of word vectors: a, b, c, d₁, d₂.
    pub sentences: Vec<Vec<Vec<f64>>>,
    pub hp: HyperParams,
    /// Values are exactly representable in 32-bit.
    pub params: Vec<Tensor<f64>>,
}

fn small(rng: &mut ChaCha8Rng, k: f64) -> f64 {
    f64::from(rng.gen_range(-k..k) as f32)
}

impl PipelineInstance {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let input_dim = rng.gen_range(1..=3);
        let hidden = rng.gen_range(1..=3);
        let sentences = (0..5)
            .map(|_| {
                let t = rng.gen_range(1..=3);
                (0..t)
                    .map(|_| (0..input_dim).map(|_| small(rng, 1.0)).collect())
                    .collect()
            })
            .collect();
        let hp = HyperParams {
            margin: [0.0, 0.25, 0.5][rng.gen_range(0..3)],
            loss_variant: if rng.gen_bool(0.5) {
                LossVariant::Hinge
            } else {
                LossVariant::Literal
            },
            l2_lambda: 0.01,
            cosine_epsilon: 1e-8,
        };
        let shapes = EncoderParams::<f64>::zeros(input_dim, hidden).expect("positive sizes");
        let params = shapes
            .tensors()
            .into_iter()
            .map(|t| {
                let data = (0..t.len()).map(|_| small(rng, 0.9)).collect();
                Tensor::new(t.shape().to_vec(), data).expect("same shape")
            })
            .collect();
        PipelineInstance {
            input_dim,
            hidden,
            sentences,
            hp,
            params,
        }
    }
}

impl ScalarFn for PipelineInstance {
    fn eval<R: Real>(&self, tape: &mut Tape<R>, inputs: &[Var]) -> Result<Var> {
        let vars = EncoderVars::from_vars(inputs)?;
        let mut enc = Vec::with_capacity(self.sentences.len());
        for s in &self.sentences {
            let xs: Vec<Var> = s
                .iter()
                .map(|row| {
                    let v = Tensor::vector(row.iter().map(|&x| R::lit(x)).collect())?;
                    Ok(tape.constant(v))
                })
                .collect::<Result<_>>()?;
            enc.push(encode_on_tape(tape, &xs, &vars)?);
        }
        let quad = |d: Var, analogous| EncodedQuadruple {
            a: enc[0],
            b: enc[1],
            c: enc[2],
            d,
            analogous,
        };
        batch_loss(tape, &[quad(enc[3], true), quad(enc[4], false)], &self.hp, inputs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub precision: Precision,
    pub instances: usize,
    pub max_rel_error: f64,
    pub worst_instance: usize,
    pub worst: GradReport,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.precision.tolerance()
    }
}

/// Checks `instances` random pipeline instances drawn from `seed`.
pub fn run_pipeline_suite(instances: usize, seed: u64, precision: Precision) -> Result<SuiteReport> {
    // The reference derivative is always taken in 64-bit, where a step of
    // 1e-6 keeps both truncation and rounding error near 1e-9.
    const EPS: f64 = 1e-6;
    let mut rng = seed::rng(seed, "gradient-suite");
    let mut out = SuiteReport {
        precision,
        instances,
        max_rel_error: 0.0,
        worst_instance: 0,
        worst: GradReport::default(),
    };
    for i in 0..instances {
        let inst = PipelineInstance::random(&mut rng);
        let report = match precision {
            Precision::Mixed32 => {
                let xs: Vec<Tensor<f32>> = inst.params.iter().map(Tensor::cast).collect();
                mixed_precision_check(&inst, &xs, EPS)?
            }
            Precision::F64 => finite_difference_check(&inst, &inst.params, EPS)?,
        };
        if report.max_rel_error > out.max_rel_error || !report.max_rel_error.is_finite() {
            out.max_rel_error = report.max_rel_error;
            out.worst_instance = i;
            out.worst = report;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_respect_size_limits() {
        let mut rng = seed::rng(1, "t");
        for _ in 0..20 {
            let inst = PipelineInstance::random(&mut rng);
            assert!((1..=3).contains(&inst.input_dim) && (1..=3).contains(&inst.hidden));
            assert!(inst.sentences.iter().all(|s| (1..=3).contains(&s.len())));
            assert_eq!(inst.params.len(), 18);
        }
    }

    #[test]
    fn short_suite_passes_both_modes() {
        for p in [Precision::F64, Precision::Mixed32] {
            let r = run_pipeline_suite(5, 7, p).unwrap();
            assert!(r.passed(), "{p}: {r:?}");
        }
    }

    #[test]
    fn precision_names_round_trip() {
        for p in [Precision::F64, Precision::Mixed32] {
            assert_eq!(p.to_string().parse::<Precision>().unwrap(), p);
        }
    }
}
