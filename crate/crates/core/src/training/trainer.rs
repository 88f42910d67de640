use std::collections::HashMap;
use std::path::PathBuf;

use log::{debug, info, warn};
use rand::seq::SliceRandom;

use crate::analogy::{batch_loss, EncodedQuadruple, HyperParams};
use crate::encoder::{embed, encode_on_tape, Dropout, EncoderParams, EncoderVars};
use crate::error::{Error, Result};
use crate::numerics::{Float, Real, Tape, Tensor, Var};
use crate::quadgen::{generate_training_quadruples, PrototypeSet, Quadruple};
use crate::seed;
use crate::text::{EmbeddingTable, QADataset, Sentence};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::checkpoint::write_weights;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Sentence vector size; the GRU hidden size is half of it.
    pub dim: usize,
    pub negatives_per_positive: usize,
    /// Rescale the global gradient norm to at most this value.
    pub clip_norm: Option<f64>,
    pub hp: HyperParams,
    /// Where to write the current weights if the loss stops being finite.
    pub dump_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            weight_decay: 0.01,
            dropout: 0.5,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            dim: 300,
            negatives_per_positive: 1,
            clip_norm: None,
            hp: HyperParams::default(),
            dump_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay {} must be >= 0", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::Config(format!("dim must be even and positive, got {}", self.dim)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm {c} must be > 0")));
            }
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-quadruple objective over the epoch (L2 term included).
    pub mean_loss: f64,
    pub batches: usize,
    /// Quadruples whose energy hit the zero-norm guard.
    pub degenerate: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: EncoderParams<Float>,
    pub log: Vec<EpochLog>,
    pub quadruples: usize,
}

/// Generates training quadruples from `dataset` and fits a fresh encoder.
pub fn train(
    config: &TrainConfig,
    dataset: &QADataset,
    prototypes: &PrototypeSet,
    table: &EmbeddingTable,
) -> Result<TrainOutcome> {
    config.validate()?;
    let quads =
        generate_training_quadruples(dataset, prototypes, config.negatives_per_positive, config.seed);
    if quads.is_empty() {
        return Err(Error::Config(
            "no training quadruples: check prototypes and answer labels".into(),
        ));
    }
    let positives = quads.iter().filter(|q| q.label == Some(true)).count();
    info!(
        "{} training quadruples ({} positive, {} negative)",
        quads.len(),
        positives,
        quads.len() - positives
    );
    let params = EncoderParams::for_output_dim(table.dim(), config.dim, config.seed)?;
    train_quadruples(config, &quads, table, params)
}

/// Fits `params` on labelled quadruples.
pub fn train_quadruples(
    config: &TrainConfig,
    quads: &[Quadruple],
    table: &EmbeddingTable,
    mut params: EncoderParams<Float>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if table.dim() != params.input_dim() {
        return Err(Error::Config(format!(
            "embedding dim {} does not match encoder input dim {}",
            table.dim(),
            params.input_dim()
        )));
    }
    if let Some(i) = quads.iter().position(|q| q.label.is_none()) {
        return Err(Error::Contract(format!("training quadruple {i} has no label")));
    }
    if let Some(i) = quads
        .iter()
        .position(|q| [&q.a, &q.b, &q.c, &q.d].iter().any(|s| s.is_empty()))
    {
        return Err(Error::Contract(format!("training quadruple {i} has an empty sentence")));
    }

    let adam = config.adam();
    let mut state = AdamState::new(params.tensors());
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..quads.len()).collect();

    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng_indexed(config.seed, "shuffle", &[epoch as u64]));
        let mut total = 0.0;
        let mut degenerate = 0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Quadruple> = chunk.iter().map(|&i| &quads[i]).collect();
            let ctx = StepContext { epoch, batch: b + 1 };
            let step = match run_batch(config, &batch, table, &params, ctx) {
                Ok(s) => s,
                Err(e) => {
                    dump(config, &params, ctx);
                    return Err(e);
                }
            };
            if step.degenerate == batch.len() {
                warn!("epoch {epoch} batch {}: every quadruple had a zero-norm shift", b + 1);
            }
            let mut grads = step.grads;
            if let Some(max) = config.clip_norm {
                clip(&mut grads, max);
            }
            adam_step(&mut params.tensors_mut(), &grads, &mut state, &adam).map_err(|e| {
                Error::Training {
                    epoch,
                    batch: b + 1,
                    msg: e.to_string(),
                }
            })?;
            total += step.loss * batch.len() as f64;
            degenerate += step.degenerate;
            batches += 1;
            debug!("epoch {epoch} batch {}: loss {:.6}", b + 1, step.loss);
        }
        let mean_loss = total / quads.len() as f64;
        info!("epoch {epoch}: mean loss {mean_loss:.6}");
        log.push(EpochLog {
            epoch,
            mean_loss,
            batches,
            degenerate,
        });
    }
    Ok(TrainOutcome {
        params,
        log,
        quadruples: quads.len(),
    })
}

#[derive(Clone, Copy)]
struct StepContext {
    epoch: usize,
    batch: usize,
}

struct BatchStep {
    loss: f64,
    grads: Vec<Tensor<Float>>,
    degenerate: usize,
}

fn run_batch(
    config: &TrainConfig,
    batch: &[&Quadruple],
    table: &EmbeddingTable,
    params: &EncoderParams<Float>,
    ctx: StepContext,
) -> Result<BatchStep> {
    let mut tape: Tape<Float> = Tape::new();
    let vars = params.register(&mut tape);
    // Prototype sentences recur across a batch; encode each distinct one once.
    let mut cache: HashMap<Sentence, Var> = HashMap::new();
    let mut encoded = Vec::with_capacity(batch.len());
    for (i, q) in batch.iter().enumerate() {
        let mut enc = |s: &Sentence, tape: &mut Tape<Float>| -> Result<Var> {
            if let Some(&v) = cache.get(s) {
                return Ok(v);
            }
            let v = encode_sentence(tape, s, table, &vars)?;
            cache.insert(s.clone(), v);
            Ok(v)
        };
        let mut a = enc(&q.a, &mut tape)?;
        let mut b = enc(&q.b, &mut tape)?;
        let mut c = enc(&q.c, &mut tape)?;
        let mut d = enc(&q.d, &mut tape)?;
        let dropout = Dropout {
            rate: config.dropout,
            training: true,
            seed: seed::derive_indexed(
                config.seed,
                "dropout",
                &[ctx.epoch as u64, ctx.batch as u64, i as u64],
            ),
        };
        // One mask for all four sentences of the quadruple.
        if let Some(mask) = dropout.mask::<Float>(params.output_dim()) {
            let m = tape.constant(mask);
            for v in [&mut a, &mut b, &mut c, &mut d] {
                *v = tape.hadamard(*v, m)?;
            }
        }
        encoded.push(EncodedQuadruple {
            a,
            b,
            c,
            d,
            analogous: q.label == Some(true),
        });
    }
    let loss = batch_loss(&mut tape, &encoded, &config.hp, vars.all())?;
    let value = tape.value(loss).item().as_f64();
    if !value.is_finite() {
        return Err(Error::Training {
            epoch: ctx.epoch,
            batch: ctx.batch,
            msg: format!("loss is {value}"),
        });
    }
    let degenerate = tape.degenerate_count();
    let grads = tape.backward(loss)?;
    Ok(BatchStep {
        loss: value,
        grads: vars.all().iter().map(|&v| grads.grad(v)).collect(),
        degenerate,
    })
}

fn encode_sentence(
    tape: &mut Tape<Float>,
    s: &Sentence,
    table: &EmbeddingTable,
    vars: &EncoderVars,
) -> Result<Var> {
    let inputs: Vec<Var> = embed::<Float>(s, table)?
        .into_iter()
        .map(|x| tape.constant(x))
        .collect();
    encode_on_tape(tape, &inputs, vars)
}

fn clip(grads: &mut [Tensor<Float>], max: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max {
        let s = Float::lit(max / norm);
        for g in grads {
            *g = g.scale(s);
        }
    }
}

fn dump(config: &TrainConfig, params: &EncoderParams<Float>, ctx: StepContext) {
    let Some(dir) = &config.dump_dir else { return };
    match write_weights(dir, params) {
        Ok(()) => warn!(
            "training stopped at epoch {} batch {}; weights saved to {}",
            ctx.epoch,
            ctx.batch,
            dir.display()
        ),
        Err(e) => warn!("could not save weights to {}: {e}", dir.display()),
    }
}
