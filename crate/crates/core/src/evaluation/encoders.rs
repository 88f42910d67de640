use crate::encoder::{encode, Dropout, EncoderParams};
use crate::error::{Error, Result};
use crate::numerics::{Float, Real};
use crate::text::{EmbeddingTable, Token};

/// Maps a non-empty token sequence to a fixed-size vector.
pub trait SentenceEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, tokens: &[Token]) -> Result<Vec<f64>>;
}

/// The trained BiGRU encoder, dropout off.
pub struct GruEncoder<'a> {
    params: &'a EncoderParams<Float>,
    table: &'a EmbeddingTable,
}

impl<'a> GruEncoder<'a> {
    pub fn new(params: &'a EncoderParams<Float>, table: &'a EmbeddingTable) -> Result<Self> {
        if params.input_dim() != table.dim() {
            return Err(Error::Config(format!(
                "checkpoint expects {}-dim embeddings, table has {}",
                params.input_dim(),
                table.dim()
            )));
        }
        Ok(GruEncoder { params, table })
    }
}

impl SentenceEncoder for GruEncoder<'_> {
    fn dim(&self) -> usize {
        self.params.output_dim()
    }

    fn encode(&self, tokens: &[Token]) -> Result<Vec<f64>> {
        let v = encode(tokens, self.table, self.params, Dropout::OFF)?;
        Ok(v.data().iter().map(|x| x.as_f64()).collect())
    }
}

/// Unweighted mean of word vectors, OOV vectors included.
pub struct MeanEncoder<'a> {
    table: &'a EmbeddingTable,
}

impl<'a> MeanEncoder<'a> {
    pub fn new(table: &'a EmbeddingTable) -> Self {
        MeanEncoder { table }
    }
}

impl SentenceEncoder for MeanEncoder<'_> {
    fn dim(&self) -> usize {
        self.table.dim()
    }

    fn encode(&self, tokens: &[Token]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::Domain("cannot average an empty sentence".into()));
        }
        let mut sum = vec![0.0; self.table.dim()];
        for t in tokens {
            for (s, &v) in sum.iter_mut().zip(self.table.lookup(t).iter()) {
                *s += f64::from(v);
            }
        }
        let n = tokens.len() as f64;
        Ok(sum.into_iter().map(|s| s / n).collect())
    }
}
