//! Checkpoint directory layout:
//!
//! ```text
//! manifest.txt    name<TAB>shape<TAB>offset, one line per tensor
//! weights.bin     little-endian f32 values in manifest order (a 64-bit build
//!                 rounds on save)
//! config.json     training settings and embedding source
//! prototypes.tsv  prototypes fixed at training time
//! loss_log.tsv    epoch<TAB>mean_loss<TAB>batches<TAB>degenerate
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analogy::{HyperParams, LossVariant};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::io::{check_dir_target, write_dir_atomic};
use crate::numerics::{Float, Real, Tensor};
use crate::quadgen::PrototypeSet;

use super::trainer::{EpochLog, TrainConfig};

const MANIFEST: &str = "manifest.txt";
const WEIGHTS: &str = "weights.bin";
const CONFIG: &str = "config.json";
const PROTOTYPES: &str = "prototypes.tsv";
const LOSS_LOG: &str = "loss_log.tsv";
const FORMAT: &str = "analogia-checkpoint/1";

/// Flat, serializable view of everything needed to rebuild a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub format: String,
    pub input_dim: usize,
    pub hidden: usize,
    pub embeddings: Option<PathBuf>,
    pub oov_seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dim: usize,
    pub negatives_per_positive: usize,
    pub clip_norm: Option<f64>,
    pub margin: f64,
    pub loss_variant: LossVariant,
    pub l2_lambda: f64,
    pub cosine_epsilon: f64,
}

impl CheckpointConfig {
    pub fn new(
        config: &TrainConfig,
        params: &EncoderParams<Float>,
        embeddings: Option<PathBuf>,
        oov_seed: u64,
    ) -> Self {
        CheckpointConfig {
            format: FORMAT.into(),
            input_dim: params.input_dim(),
            hidden: params.hidden(),
            embeddings,
            oov_seed,
            lr: config.lr,
            weight_decay: config.weight_decay,
            dropout: config.dropout,
            epochs: config.epochs,
            batch_size: config.batch_size,
            seed: config.seed,
            dim: config.dim,
            negatives_per_positive: config.negatives_per_positive,
            clip_norm: config.clip_norm,
            margin: config.hp.margin,
            loss_variant: config.hp.loss_variant,
            l2_lambda: config.hp.l2_lambda,
            cosine_epsilon: config.hp.cosine_epsilon,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            dim: self.dim,
            negatives_per_positive: self.negatives_per_positive,
            clip_norm: self.clip_norm,
            hp: HyperParams {
                margin: self.margin,
                loss_variant: self.loss_variant,
                l2_lambda: self.l2_lambda,
                cosine_epsilon: self.cosine_epsilon,
            },
            dump_dir: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub params: EncoderParams<Float>,
    pub prototypes: PrototypeSet,
    pub loss_log: Vec<EpochLog>,
}

impl Checkpoint {
    /// Fails early if `save(dir)` would refuse to replace `dir`.
    pub fn check_target(dir: &Path) -> Result<()> {
        check_dir_target(dir, MANIFEST)
    }

    /// Writes the checkpoint directory atomically. An existing directory is
    /// replaced only if it already holds a checkpoint.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let config = serde_json::to_string_pretty(&self.config)
            .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
        let mut log = String::from("epoch\tmean_loss\tbatches\tdegenerate\n");
        for l in &self.loss_log {
            let _ = writeln!(log, "{}\t{}\t{}\t{}", l.epoch, l.mean_loss, l.batches, l.degenerate);
        }
        write_dir_atomic(dir, MANIFEST, |tmp| {
            fill_weights(tmp, &self.params)?;
            write(tmp, CONFIG, (config + "\n").as_bytes())?;
            write(tmp, PROTOTYPES, self.prototypes.to_tsv().as_bytes())?;
            write(tmp, LOSS_LOG, log.as_bytes())
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config_path = dir.join(CONFIG);
        let text = read(&config_path)?;
        let config: CheckpointConfig = serde_json::from_str(&text)
            .map_err(|e| Error::parse(&config_path, e.line(), e.to_string()))?;
        if config.format != FORMAT {
            return Err(Error::Config(format!(
                "{}: unsupported checkpoint format {:?}",
                config_path.display(),
                config.format
            )));
        }
        let params = read_weights(dir, config.input_dim, config.hidden)?;
        let proto_path = dir.join(PROTOTYPES);
        let prototypes = PrototypeSet::from_tsv(&read(&proto_path)?, &proto_path)?;
        let loss_log = read_loss_log(&dir.join(LOSS_LOG))?;
        Ok(Checkpoint {
            config,
            params,
            prototypes,
            loss_log,
        })
    }
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn fill_weights(dir: &Path, params: &EncoderParams<Float>) -> Result<()> {
    let mut manifest = String::new();
    let mut bytes = Vec::new();
    let mut offset = 0;
    for (name, t) in EncoderParams::<Float>::names().iter().zip(params.tensors()) {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(manifest, "{name}\t{}\t{offset}", shape.join(","));
        for v in t.data() {
            bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        offset += t.len();
    }
    write(dir, MANIFEST, manifest.as_bytes())?;
    write(dir, WEIGHTS, &bytes)
}

/// Writes only `manifest.txt` and `weights.bin`.
pub(crate) fn write_weights(dir: &Path, params: &EncoderParams<Float>) -> Result<()> {
    write_dir_atomic(dir, MANIFEST, |tmp| fill_weights(tmp, params))
}

fn read_weights(dir: &Path, input_dim: usize, hidden: usize) -> Result<EncoderParams<Float>> {
    let manifest_path = dir.join(MANIFEST);
    let manifest = read(&manifest_path)?;
    let weights_path = dir.join(WEIGHTS);
    let raw = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    if raw.len() % 4 != 0 {
        return Err(Error::Config(format!(
            "{}: size {} is not a multiple of 4",
            weights_path.display(),
            raw.len()
        )));
    }
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let names = EncoderParams::<Float>::names();
    let mut tensors = Vec::with_capacity(names.len());
    let lines: Vec<(usize, &str)> = manifest
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    if lines.len() != names.len() {
        return Err(Error::parse(
            &manifest_path,
            lines.len(),
            format!("expected {} tensors, found {}", names.len(), lines.len()),
        ));
    }
    for ((i, line), expected) in lines.into_iter().zip(&names) {
        let bad = |msg: String| Error::parse(&manifest_path, i + 1, msg);
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad("expected name, shape and offset".into()));
        }
        if cols[0] != expected {
            return Err(bad(format!("expected tensor {expected}, found {}", cols[0])));
        }
        let shape: Vec<usize> = cols[1]
            .split(',')
            .map(|s| s.parse().map_err(|_| bad(format!("bad shape {:?}", cols[1]))))
            .collect::<Result<_>>()?;
        let offset: usize = cols[2]
            .parse()
            .map_err(|_| bad(format!("bad offset {:?}", cols[2])))?;
        let len: usize = shape.iter().product();
        let data = values
            .get(offset..offset + len)
            .ok_or_else(|| bad(format!("tensor runs past the end of {WEIGHTS}")))?;
        let data = data.iter().map(|&v| Float::lit(f64::from(v))).collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    EncoderParams::from_tensors(input_dim, hidden, tensors)
}

fn read_loss_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::parse(path, i + 1, "expected epoch, loss, batches, degenerate");
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(bad());
        }
        out.push(EpochLog {
            epoch: cols[0].parse().map_err(|_| bad())?,
            mean_loss: cols[1].parse().map_err(|_| bad())?,
            batches: cols[2].parse().map_err(|_| bad())?,
            degenerate: cols[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}
