//! Bidirectional GRU sentence encoder with temporal max pooling.
//!
//! Each direction runs the gated recurrence
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```
//!
//! from a zero state. Per-timestep states of both directions are
//! concatenated and max-pooled over time into a `2h`-dimensional vector.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::seed;
use crate::text::{EmbeddingTable, Token};

/// Weights of one GRU direction.
#[derive(Clone, Debug, PartialEq)]
pub struct GruWeights<R: Real> {
    pub w_z: Tensor<R>,
    pub w_r: Tensor<R>,
    pub w_h: Tensor<R>,
    pub u_z: Tensor<R>,
    pub u_r: Tensor<R>,
    pub u_h: Tensor<R>,
    pub b_z: Tensor<R>,
    pub b_r: Tensor<R>,
    pub b_h: Tensor<R>,
}

const GRU_NAMES: [&str; 9] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];

impl<R: Real> GruWeights<R> {
    fn zeros(input_dim: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, input_dim]);
        let u = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        GruWeights {
            w_z: w(),
            w_r: w(),
            w_h: w(),
            u_z: u(),
            u_r: u(),
            u_h: u(),
            b_z: b(),
            b_r: b(),
            b_h: b(),
        }
    }

    fn tensors(&self) -> [&Tensor<R>; 9] {
        [
            &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z,
            &self.b_r, &self.b_h,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<R>; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }
}

/// Both GRU directions. Output dimension is `2 * hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<R: Real> {
    pub forward: GruWeights<R>,
    pub backward: GruWeights<R>,
    hidden: usize,
    input_dim: usize,
}

impl<R: Real> EncoderParams<R> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::Config(format!(
                "encoder needs positive sizes, got input {input_dim}, hidden {hidden}"
            )));
        }
        Ok(EncoderParams {
            forward: GruWeights::zeros(input_dim, hidden),
            backward: GruWeights::zeros(input_dim, hidden),
            hidden,
            input_dim,
        })
    }

    /// Weight matrices uniform in `[-1/√h, 1/√h]`, biases zero.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(input_dim, hidden)?;
        let k = 1.0 / (hidden as f64).sqrt();
        let mut rng = seed::rng(seed, "encoder-init");
        for t in params.tensors_mut() {
            if t.rank() == 2 {
                for v in t.data_mut() {
                    *v = R::lit(rng.gen_range(-k..=k));
                }
            }
        }
        Ok(params)
    }

    /// Builds params for output dimension `dim` (must be even).
    pub fn for_output_dim(input_dim: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Config(format!("output dim must be even and positive, got {dim}")));
        }
        Self::init(input_dim, dim / 2, seed)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Canonical tensor names, in the order of [`Self::tensors`].
    pub fn names() -> Vec<String> {
        ["forward", "backward"]
            .iter()
            .flat_map(|d| GRU_NAMES.iter().map(move |n| format!("{d}.{n}")))
            .collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor<R>> {
        let mut v: Vec<&Tensor<R>> = self.forward.tensors().into();
        v.extend(self.backward.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<R>> {
        let mut v: Vec<&mut Tensor<R>> = self.forward.tensors_mut().into();
        v.extend(self.backward.tensors_mut());
        v
    }

    /// Rebuilds params from tensors in canonical order, checking shapes.
    pub fn from_tensors(input_dim: usize, hidden: usize, tensors: Vec<Tensor<R>>) -> Result<Self> {
        let mut params = Self::zeros(input_dim, hidden)?;
        if tensors.len() != 18 {
            return Err(Error::Config(format!("expected 18 tensors, got {}", tensors.len())));
        }
        for ((slot, t), name) in params.tensors_mut().into_iter().zip(tensors).zip(Self::names()) {
            if slot.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(params)
    }

    pub fn cast<S: Real>(&self) -> EncoderParams<S> {
        let tensors = self.tensors().into_iter().map(Tensor::cast).collect();
        EncoderParams::from_tensors(self.input_dim, self.hidden, tensors).expect("same shapes")
    }

    /// Sum of squares over every weight and bias.
    pub fn squared_norm(&self) -> R {
        self.tensors()
            .iter()
            .map(|t| t.data().iter().map(|&v| v * v).sum::<R>())
            .sum()
    }

    /// Records every tensor as a trainable leaf.
    pub fn register(&self, tape: &mut Tape<R>) -> EncoderVars {
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| tape.param(t.clone())).collect();
        EncoderVars::from_vars(&vars).expect("18 vars")
    }
}

/// Tape handles for one GRU direction.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub w_r: Var,
    pub w_h: Var,
    pub u_z: Var,
    pub u_r: Var,
    pub u_h: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_h: Var,
}

impl GruVars {
    fn from_slice(v: &[Var]) -> Self {
        GruVars {
            w_z: v[0],
            w_r: v[1],
            w_h: v[2],
            u_z: v[3],
            u_r: v[4],
            u_h: v[5],
            b_z: v[6],
            b_r: v[7],
            b_h: v[8],
        }
    }
}

/// Tape handles for all encoder tensors.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub forward: GruVars,
    pub backward: GruVars,
    all: Vec<Var>,
}

impl EncoderVars {
    /// Takes 18 vars in canonical tensor order.
    pub fn from_vars(vars: &[Var]) -> Result<Self> {
        if vars.len() != 18 {
            return Err(Error::Contract(format!("expected 18 encoder vars, got {}", vars.len())));
        }
        Ok(EncoderVars {
            forward: GruVars::from_slice(&vars[..9]),
            backward: GruVars::from_slice(&vars[9..]),
            all: vars.to_vec(),
        })
    }

    pub fn all(&self) -> &[Var] {
        &self.all
    }
}

/// One GRU step on plain values.
pub fn gru_cell<R: Real>(x: &Tensor<R>, h_prev: &Tensor<R>, w: &GruWeights<R>) -> Result<Tensor<R>> {
    let gate = |wm: &Tensor<R>, um: &Tensor<R>, b: &Tensor<R>, h: &Tensor<R>| -> Result<Tensor<R>> {
        wm.matmul(x)?.add(&um.matmul(h)?)?.add(b)
    };
    let z = gate(&w.w_z, &w.u_z, &w.b_z, h_prev)?.map(Real::sigmoid);
    let r = gate(&w.w_r, &w.u_r, &w.b_r, h_prev)?.map(Real::sigmoid);
    let cand = gate(&w.w_h, &w.u_h, &w.b_h, &r.hadamard(h_prev)?)?.map(|v| v.tanh());
    let keep = z.map(|v| R::one() - v);
    keep.hadamard(h_prev)?.add(&z.hadamard(&cand)?)
}

/// One GRU step recorded on a tape.
pub fn gru_cell_on_tape<R: Real>(tape: &mut Tape<R>, x: Var, h_prev: Var, w: &GruVars) -> Result<Var> {
    let gate = |tape: &mut Tape<R>, wm: Var, um: Var, b: Var, h: Var| -> Result<Var> {
        let wx = tape.matmul(wm, x)?;
        let uh = tape.matmul(um, h)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, b)
    };
    let z_pre = gate(tape, w.w_z, w.u_z, w.b_z, h_prev)?;
    let z = tape.sigmoid(z_pre)?;
    let r_pre = gate(tape, w.w_r, w.u_r, w.b_r, h_prev)?;
    let r = tape.sigmoid(r_pre)?;
    let rh = tape.hadamard(r, h_prev)?;
    let c_pre = gate(tape, w.w_h, w.u_h, w.b_h, rh)?;
    let cand = tape.tanh(c_pre)?;
    // (1 − z) ⊙ h + z ⊙ h̃  ==  h + z ⊙ (h̃ − h)
    let delta = tape.sub(cand, h_prev)?;
    let step = tape.hadamard(z, delta)?;
    tape.add(h_prev, step)
}

/// Word vectors for `tokens`, converted to the working precision.
pub fn embed<R: Real>(tokens: &[Token], table: &EmbeddingTable) -> Result<Vec<Tensor<R>>> {
    tokens
        .iter()
        .map(|t| Tensor::vector(table.lookup(t).iter().map(|&v| R::lit(f64::from(v))).collect()))
        .collect()
}

/// Encodes already-embedded inputs on a tape and returns the pooled
/// (pre-dropout) sentence vector. Inputs are typically constants.
pub fn encode_on_tape<R: Real>(tape: &mut Tape<R>, inputs: &[Var], vars: &EncoderVars) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::Domain("cannot encode an empty sentence".into()));
    }
    let hidden = tape.value(vars.forward.b_z).len();
    let h0 = tape.constant(Tensor::zeros(&[hidden]));

    let mut fwd = Vec::with_capacity(inputs.len());
    let mut h = h0;
    for &x in inputs {
        h = gru_cell_on_tape(tape, x, h, &vars.forward)?;
        fwd.push(h);
    }
    let mut bwd = Vec::with_capacity(inputs.len());
    h = h0;
    for &x in inputs.iter().rev() {
        h = gru_cell_on_tape(tape, x, h, &vars.backward)?;
        bwd.push(h);
    }
    // Columnwise max of [fwd_t, bwd_t] splits into a max per direction.
    let fwd = tape.stack(&fwd)?;
    let bwd = tape.stack(&bwd)?;
    let fwd = tape.maxpool_time(fwd)?;
    let bwd = tape.maxpool_time(bwd)?;
    tape.concat(&[fwd, bwd])
}

/// Inverted-dropout settings applied to the pooled sentence vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    pub training: bool,
    pub seed: u64,
}

impl Dropout {
    pub const OFF: Dropout = Dropout {
        rate: 0.0,
        training: false,
        seed: 0,
    };

    /// Keep-mask scaled by `1/(1-rate)`, or `None` when dropout is inactive.
    pub fn mask<R: Real>(&self, dim: usize) -> Option<Tensor<R>> {
        if !self.training || self.rate <= 0.0 {
            return None;
        }
        let mut rng = seed::rng(self.seed, "dropout");
        let keep = R::lit(1.0 / (1.0 - self.rate));
        let data = (0..dim)
            .map(|_| if rng.gen::<f64>() < self.rate { R::zero() } else { keep })
            .collect();
        Some(Tensor::vector(data).expect("dim > 0"))
    }
}

/// Encodes one sentence without recording gradients.
pub fn encode<R: Real>(
    tokens: &[Token],
    table: &EmbeddingTable,
    params: &EncoderParams<R>,
    dropout: Dropout,
) -> Result<Tensor<R>> {
    if tokens.is_empty() {
        return Err(Error::Domain("cannot encode an empty sentence".into()));
    }
    if table.dim() != params.input_dim() {
        return Err(Error::Config(format!(
            "embedding dim {} does not match encoder input dim {}",
            table.dim(),
            params.input_dim()
        )));
    }
    let xs = embed::<R>(tokens, table)?;
    let h0 = Tensor::zeros(&[params.hidden()]);
    let run = |w: &GruWeights<R>, order: &mut dyn Iterator<Item = &Tensor<R>>| -> Result<Vec<Tensor<R>>> {
        let mut h = h0.clone();
        let mut states = Vec::with_capacity(xs.len());
        for x in order {
            h = gru_cell(x, &h, w)?;
            states.push(h.clone());
        }
        Ok(states)
    };
    let fwd = run(&params.forward, &mut xs.iter())?;
    let mut bwd = run(&params.backward, &mut xs.iter().rev())?;
    bwd.reverse();

    let rows: Vec<Vec<R>> = fwd
        .iter()
        .zip(&bwd)
        .map(|(f, b)| [f.data(), b.data()].concat())
        .collect();
    let (pooled, _) = Tensor::from_rows(&rows)?.max_over_rows()?;
    match dropout.mask(pooled.len()) {
        Some(mask) => pooled.hadamard(&mask),
        None => Ok(pooled),
    }
}

/// Encodes several sentences at once by padding to the longest one. Pad
/// steps leave the recurrent state unchanged and pool as −∞, so results
/// match [`encode`] sentence by sentence.
pub fn encode_batch<R: Real>(
    sentences: &[&[Token]],
    table: &EmbeddingTable,
    params: &EncoderParams<R>,
) -> Result<Vec<Tensor<R>>> {
    if let Some(i) = sentences.iter().position(|s| s.is_empty()) {
        return Err(Error::Domain(format!("sentence {i} in batch is empty")));
    }
    if sentences.is_empty() {
        return Ok(Vec::new());
    }
    let max_t = sentences.iter().map(|s| s.len()).max().unwrap_or(0);
    let (hid, din) = (params.hidden(), params.input_dim());
    let b = sentences.len();
    let zero_x = Tensor::zeros(&[din]);
    let embedded: Vec<Vec<Tensor<R>>> = sentences
        .iter()
        .map(|s| embed::<R>(s, table))
        .collect::<Result<_>>()?;

    let mut pooled = vec![vec![R::neg_infinity(); 2 * hid]; b];
    for (dir, w) in [(0usize, &params.forward), (1, &params.backward)] {
        let mut h: Vec<Tensor<R>> = vec![Tensor::zeros(&[hid]); b];
        for step in 0..max_t {
            for (i, xs) in embedded.iter().enumerate() {
                let len = xs.len();
                // Backward direction reads each sentence right to left, so
                // its pad steps come after the real tokens as well.
                let pos = if dir == 0 { step } else { len.wrapping_sub(1 + step) };
                let valid = step < len;
                let x = if valid { &xs[pos] } else { &zero_x };
                let next = gru_cell(x, &h[i], w)?;
                if valid {
                    h[i] = next;
                    for (j, &v) in h[i].data().iter().enumerate() {
                        let slot = &mut pooled[i][dir * hid + j];
                        if v > *slot {
                            *slot = v;
                        }
                    }
                }
            }
        }
    }
    pooled.into_iter().map(Tensor::vector).collect()
}
