use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: `θ ← θ − lr · weight_decay · θ` after each update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per trainable tensor, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<R: Real> {
    pub m: Vec<Tensor<R>>,
    pub v: Vec<Tensor<R>>,
    pub t: u64,
}

impl<R: Real> AdamState<R> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<R>>) -> Self {
        let m: Vec<Tensor<R>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update followed by decoupled weight decay.
/// Non-finite gradients leave params and state untouched and return a
/// domain error.
pub fn adam_step<R: Real>(
    params: &mut [&mut Tensor<R>],
    grads: &[Tensor<R>],
    state: &mut AdamState<R>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::Domain(format!("non-finite gradient for tensor {i}")));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = cfg.lr * cfg.weight_decay;
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, &gj) in m.iter_mut().zip(g) {
            *mj = R::lit(cfg.beta1 * mj.as_f64() + (1.0 - cfg.beta1) * gj.as_f64());
        }
        let v = state.v[i].data_mut();
        for (vj, &gj) in v.iter_mut().zip(g) {
            let gj = gj.as_f64();
            *vj = R::lit(cfg.beta2 * vj.as_f64() + (1.0 - cfg.beta2) * gj * gj);
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let m_hat = m[j].as_f64() / bc1;
            let v_hat = v[j].as_f64() / bc2;
            let mut x = w.as_f64() - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            x -= decay * x;
            *w = R::lit(x);
        }
    }
    Ok(())
}
