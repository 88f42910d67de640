use crate::error::{Error, Result};

use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};

/// A scalar function recorded on a tape, evaluable at any precision.
pub trait ScalarFn {
    fn eval<R: Real>(&self, tape: &mut Tape<R>, inputs: &[Var]) -> Result<Var>;
}

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradReport {
    /// max over coordinates of |analytic − numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_coord: usize,
    pub coords: usize,
}

fn analytic<R: Real, F: ScalarFn>(f: &F, xs: &[Tensor<R>]) -> Result<Vec<Tensor<R>>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f.eval(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars.iter().map(|&v| grads.grad(v)).collect())
}

fn value<R: Real, F: ScalarFn>(f: &F, xs: &[Tensor<R>]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = f.eval(&mut tape, &vars)?;
    let val = tape.value(out);
    if !val.is_scalar() {
        return Err(Error::Contract("gradient check needs a scalar function".into()));
    }
    let v = val.item().as_f64();
    if !v.is_finite() {
        return Err(Error::Domain(format!("non-finite function value {v}")));
    }
    Ok(v)
}

fn numeric<R: Real, F: ScalarFn>(f: &F, xs: &[Tensor<R>], eps: f64) -> Result<Vec<Vec<f64>>> {
    let mut work = xs.to_vec();
    let mut out = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        let mut g = Vec::with_capacity(xs[i].len());
        for j in 0..xs[i].len() {
            let orig = xs[i].data()[j];
            work[i].data_mut()[j] = orig + R::lit(eps);
            let plus = value(f, &work)?;
            work[i].data_mut()[j] = orig - R::lit(eps);
            let minus = value(f, &work)?;
            work[i].data_mut()[j] = orig;
            g.push((plus - minus) / (2.0 * eps));
        }
        out.push(g);
    }
    Ok(out)
}

fn compare<R: Real>(analytic: &[Tensor<R>], numeric: &[Vec<f64>]) -> GradReport {
    let mut report = GradReport::default();
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (j, (&av, &nv)) in a.data().iter().zip(n).enumerate() {
            let av = av.as_f64();
            let err = (av - nv).abs() / 1f64.max(av.abs()).max(nv.abs());
            report.coords += 1;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = err;
                report.worst_input = i;
                report.worst_coord = j;
            }
        }
    }
    report
}

/// Compares tape gradients of `f` at `xs` with central finite differences
/// evaluated at the same precision.
pub fn finite_difference_check<R: Real, F: ScalarFn>(
    f: &F,
    xs: &[Tensor<R>],
    eps: f64,
) -> Result<GradReport> {
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }
    let a = analytic(f, xs)?;
    let n = numeric(f, xs, eps)?;
    Ok(compare(&a, &n))
}

/// Analytic gradients in 32-bit against finite differences of the same
/// function evaluated in 64-bit.
pub fn mixed_precision_check<F: ScalarFn>(
    f: &F,
    xs: &[Tensor<f32>],
    eps: f64,
) -> Result<GradReport> {
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }
    let a = analytic(f, xs)?;
    let wide: Vec<Tensor<f64>> = xs.iter().map(Tensor::cast).collect();
    let n = numeric(f, &wide, eps)?;
    Ok(compare(&a, &n))
}

struct Closure<F>(F);

/// Single-input convenience wrapper around [`finite_difference_check`].
pub fn check_scalar_fn<R: Real>(
    f: impl Fn(&mut Tape<R>, Var) -> Result<Var>,
    x: &Tensor<R>,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }
    let f = Closure(f);
    let mut tape = Tape::new();
    let var = tape.param(x.clone());
    let out = (f.0)(&mut tape, var)?;
    let analytic = tape.backward(out)?.grad(var);

    let eval = |x: &Tensor<R>| -> Result<f64> {
        let mut tape = Tape::new();
        let var = tape.constant(x.clone());
        let out = (f.0)(&mut tape, var)?;
        let v = tape.value(out).item().as_f64();
        if !v.is_finite() {
            return Err(Error::Domain(format!("non-finite function value {v}")));
        }
        Ok(v)
    };
    let mut work = x.clone();
    let mut numeric = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let orig = x.data()[j];
        work.data_mut()[j] = orig + R::lit(eps);
        let plus = eval(&work)?;
        work.data_mut()[j] = orig - R::lit(eps);
        let minus = eval(&work)?;
        work.data_mut()[j] = orig;
        numeric.push((plus - minus) / (2.0 * eps));
    }
    Ok(compare(&[analytic], &[numeric]).max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_has_tiny_error() {
        let x = Tensor::vector(vec![3.0f64]).unwrap();
        let err = check_scalar_fn(|t, x| t.square(x), &x, 1e-4).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::vector(vec![1.0f64, -2.0]).unwrap();
        let err = check_scalar_fn(
            |t, x| {
                let z = t.scale(x, 0.0)?;
                let s = t.sum(z)?;
                t.add_scalar(s, 4.0)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn tanh_sum_matches() {
        let x = Tensor::vector(vec![0.3f64, -0.7]).unwrap();
        let err = check_scalar_fn(
            |t, x| {
                let y = t.tanh(x)?;
                t.sum(y)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn bad_eps_and_non_finite_values_are_rejected() {
        let x = Tensor::vector(vec![1.0f64]).unwrap();
        assert!(matches!(
            check_scalar_fn(|t, x| t.square(x), &x, 0.0),
            Err(Error::Contract(_))
        ));
        let err = check_scalar_fn(|t, x| t.scale(x, f64::INFINITY), &x, 1e-4);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    /// Every differentiable op composed into a scalar through a fixed random
    /// projection, so each input coordinate influences the result.
    struct OpProbe {
        op: usize,
    }

    impl ScalarFn for OpProbe {
        fn eval<R: Real>(&self, t: &mut Tape<R>, x: &[Var]) -> Result<Var> {
            let out = match self.op {
                0 => t.matmul(x[0], x[1])?,
                1 => t.add(x[1], x[2])?,
                2 => t.sub(x[1], x[2])?,
                3 => t.hadamard(x[1], x[2])?,
                4 => t.sigmoid(x[1])?,
                5 => t.tanh(x[1])?,
                6 => t.concat(&[x[1], x[2]])?,
                7 => t.maxpool_time(x[0])?,
                8 => t.scale(x[1], R::lit(-1.7))?,
                9 => t.cosine(x[1], x[2], R::lit(1e-8))?,
                10 => t.stack(&[x[1], x[2]])?,
                11 => t.square(x[1])?,
                _ => unreachable!(),
            };
            // Weight the output by a deterministic pattern before summing.
            let n = t.value(out).len();
            let shape = t.value(out).shape().to_vec();
            let w: Vec<R> = (0..n).map(|i| R::lit(0.3 + 0.17 * i as f64)).collect();
            let w = t.constant(Tensor::new(shape, w)?);
            let p = t.hadamard(out, w)?;
            t.sum(p)
        }
    }

    fn random_inputs(seed: u64, rows: usize, cols: usize) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        vec![
            Tensor::matrix(rows, cols, draw(rows * cols)).unwrap(),
            Tensor::vector(draw(cols)).unwrap(),
            Tensor::vector(draw(cols)).unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn every_op_matches_finite_differences_f64(
            op in 0usize..12,
            rows in 1usize..=5,
            cols in 1usize..=5,
            seed in any::<u64>(),
        ) {
            let xs = random_inputs(seed, rows, cols);
            let report = finite_difference_check(&OpProbe { op }, &xs, 1e-5).unwrap();
            prop_assert!(report.max_rel_error < 1e-7, "op {op}: {report:?}");
        }

        #[test]
        fn every_op_matches_finite_differences_f32(
            op in 0usize..12,
            rows in 1usize..=5,
            cols in 1usize..=5,
            seed in any::<u64>(),
        ) {
            let xs: Vec<Tensor<f32>> = random_inputs(seed, rows, cols).iter().map(Tensor::cast).collect();
            let report = mixed_precision_check(&OpProbe { op }, &xs, 1e-5).unwrap();
            prop_assert!(report.max_rel_error < 1e-4, "op {op}: {report:?}");
        }

        #[test]
        fn maxpool_routes_incoming_gradient_per_column(
            rows in 1usize..=5,
            cols in 1usize..=5,
            seed in any::<u64>(),
        ) {
            let xs = random_inputs(seed, rows, cols);
            let mut t = Tape::<f64>::new();
            let x = t.param(xs[0].clone());
            let y = t.maxpool_time(x).unwrap();
            let w = t.constant(xs[1].clone());
            let p = t.hadamard(y, w).unwrap();
            let loss = t.sum(p).unwrap();
            let g = t.backward(loss).unwrap().grad(x);
            for j in 0..cols {
                let col: Vec<f64> = (0..rows).map(|i| g.data()[i * cols + j]).collect();
                let nonzero = col.iter().filter(|v| **v != 0.0).count();
                prop_assert!(nonzero <= 1);
                prop_assert!((col.iter().sum::<f64>() - xs[1].data()[j]).abs() < 1e-15);
            }
        }
    }
}
