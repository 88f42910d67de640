use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation selector for [`Tape::apply`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Hadamard,
    Sigmoid,
    Tanh,
    Concat,
    MaxPoolTime,
    Scale(f64),
}

#[derive(Debug)]
enum Op<R: Real> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Scale(Var, R),
    AddScalar(Var),
    Square(Var),
    Relu(Var),
    Sum(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    MaxPoolTime { input: Var, argmax: Vec<usize> },
    Cosine { a: Var, b: Var, degenerate: bool },
}

#[derive(Debug)]
struct Node<R: Real> {
    value: Tensor<R>,
    op: Op<R>,
    tracked: bool,
}

/// Linear record of executed operations. Backward replays it in exact
/// reverse order; a tape can be differentiated once.
#[derive(Debug)]
pub struct Tape<R: Real> {
    nodes: Vec<Node<R>>,
    consumed: bool,
    degenerate: usize,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-variable gradients returned by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<R: Real> {
    grads: Vec<Option<Tensor<R>>>,
    shapes: Vec<Vec<usize>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient for `var`; zero when `var` is not on any path to the loss.
    pub fn grad(&self, var: Var) -> Tensor<R> {
        match self.grads.get(var.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn get(&self, var: Var) -> Option<&Tensor<R>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
            degenerate: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of cosine evaluations that hit the zero-norm guard.
    pub fn degenerate_count(&self) -> usize {
        self.degenerate
    }

    pub fn value(&self, var: Var) -> &Tensor<R> {
        &self.nodes[var.0].value
    }

    /// Records a trainable leaf whose gradient is reported by `backward`.
    pub fn param(&mut self, value: Tensor<R>) -> Var {
        self.leaf(value, true)
    }

    /// Records an untracked leaf. It never receives a gradient.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor<R>, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, inputs: &[Var]) -> Result<Var> {
        if self.consumed {
            return Err(Error::State("tape already consumed by backward".into()));
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::Contract(format!(
                    "{kind:?} takes {n} inputs, got {}",
                    inputs.len()
                )));
            }
            Ok(())
        };
        match kind {
            OpKind::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Sub => {
                arity(2)?;
                self.sub(inputs[0], inputs[1])
            }
            OpKind::Hadamard => {
                arity(2)?;
                self.hadamard(inputs[0], inputs[1])
            }
            OpKind::Sigmoid => {
                arity(1)?;
                self.sigmoid(inputs[0])
            }
            OpKind::Tanh => {
                arity(1)?;
                self.tanh(inputs[0])
            }
            OpKind::Concat => self.concat(inputs),
            OpKind::MaxPoolTime => {
                arity(1)?;
                self.maxpool_time(inputs[0])
            }
            OpKind::Scale(c) => {
                arity(1)?;
                self.scale(inputs[0], R::lit(c))
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        self.push(out, Op::Hadamard(a, b), &[a, b])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(Real::sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.tanh());
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn scale(&mut self, a: Var, c: R) -> Result<Var> {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: R) -> Result<Var> {
        let out = self.value(a).map(|v| v + c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v * v);
        self.push(out, Op::Square(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(R::zero()));
        self.push(out, Op::Relu(a), &[a])
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Concatenates vectors end to end, or matrices with equal column
    /// counts along the row axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", "no inputs"));
        };
        let rank = self.value(first).rank();
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rank() != rank || (rank == 2 && v.cols() != cols) {
                let shapes: Vec<_> = parts.iter().map(|&p| self.value(p).shape().to_vec()).collect();
                return Err(Error::shape("concat", format!("{shapes:?}")));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = if rank == 1 {
            Tensor::vector(data)?
        } else {
            Tensor::matrix(rows, cols, data)?
        };
        self.push(out, Op::Concat(parts.to_vec()), parts)
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::Domain("stack of zero rows".into()));
        };
        let width = self.value(first).len();
        let mut data = Vec::with_capacity(width * rows.len());
        for &r in rows {
            let v = self.value(r);
            if v.rank() != 1 || v.len() != width {
                return Err(Error::shape(
                    "stack",
                    format!("row {:?} vs width {width}", v.shape()),
                ));
            }
            data.extend_from_slice(v.data());
        }
        let out = Tensor::matrix(rows.len(), width, data)?;
        self.push(out, Op::Stack(rows.to_vec()), rows)
    }

    /// Columnwise max over the time (row) axis of a `T×d` tensor.
    pub fn maxpool_time(&mut self, a: Var) -> Result<Var> {
        let (out, argmax) = self.value(a).max_over_rows()?;
        self.push(out, Op::MaxPoolTime { input: a, argmax }, &[a])
    }

    /// Cosine similarity of two equal-length vectors. Returns 0 and
    /// propagates no gradient when either norm is below `eps`.
    pub fn cosine(&mut self, a: Var, b: Var, eps: R) -> Result<Var> {
        let (u, v) = (self.value(a), self.value(b));
        if u.len() != v.len() {
            return Err(Error::shape(
                "cosine",
                format!("{:?} vs {:?}", u.shape(), v.shape()),
            ));
        }
        let (nu, nv) = (u.norm(), v.norm());
        let degenerate = nu < eps || nv < eps;
        let value = if degenerate {
            self.degenerate += 1;
            R::zero()
        } else {
            u.dot(v)? / (nu * nv)
        };
        self.push(Tensor::scalar(value), Op::Cosine { a, b, degenerate }, &[a, b])
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<R>> {
        if self.consumed {
            return Err(Error::State("tape already consumed by backward".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<R>>> = vec![None; n];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![R::one()])?);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            for (input, contrib) in self.local_grads(node, &g)? {
                if !self.nodes[input.0].tracked {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a = *a + *c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn local_grads(&self, node: &Node<R>, g: &Tensor<R>) -> Result<Vec<(Var, Tensor<R>)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &node.value;
        let grads = match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if bv.rank() == 1 {
                    // y = A x: dA = g xᵀ, dx = Aᵀ g
                    let (m, k) = (av.rows(), av.cols());
                    let mut da = Vec::with_capacity(m * k);
                    for i in 0..m {
                        for j in 0..k {
                            da.push(g.data()[i] * bv.data()[j]);
                        }
                    }
                    vec![
                        (*a, Tensor::matrix(m, k, da)?),
                        (*b, av.transpose().matmul(g)?),
                    ]
                } else {
                    vec![
                        (*a, g.matmul(&bv.transpose())?),
                        (*b, av.transpose().matmul(g)?),
                    ]
                }
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-R::one()))],
            Op::Hadamard(a, b) => vec![(*a, g.hadamard(val(*b))?), (*b, g.hadamard(val(*a))?)],
            Op::Sigmoid(a) => {
                let d = out.map(|y| y * (R::one() - y));
                vec![(*a, g.hadamard(&d)?)]
            }
            Op::Tanh(a) => {
                let d = out.map(|y| R::one() - y * y);
                vec![(*a, g.hadamard(&d)?)]
            }
            Op::Scale(a, c) => vec![(*a, g.scale(*c))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Square(a) => {
                let two = R::lit(2.0);
                vec![(*a, g.hadamard(&val(*a).map(|x| two * x))?)]
            }
            Op::Relu(a) => {
                let mask = val(*a).map(|x| if x > R::zero() { R::one() } else { R::zero() });
                vec![(*a, g.hadamard(&mask)?)]
            }
            Op::Sum(a) => {
                let av = val(*a);
                vec![(*a, Tensor::new(av.shape().to_vec(), vec![g.item(); av.len()])?)]
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let pv = val(p);
                    let n = pv.len();
                    let slice = g.data()[offset..offset + n].to_vec();
                    res.push((p, Tensor::new(pv.shape().to_vec(), slice)?));
                    offset += n;
                }
                res
            }
            Op::Stack(rows) => rows
                .iter()
                .enumerate()
                .map(|(i, &r)| Ok((r, Tensor::vector(g.row(i).to_vec())?)))
                .collect::<Result<_>>()?,
            Op::MaxPoolTime { input, argmax } => {
                let iv = val(*input);
                let cols = iv.cols();
                let mut d = Tensor::zeros(iv.shape());
                for (j, &t) in argmax.iter().enumerate() {
                    d.data_mut()[t * cols + j] = g.data()[j];
                }
                vec![(*input, d)]
            }
            Op::Cosine { a, b, degenerate } => {
                let (u, v) = (val(*a), val(*b));
                if *degenerate {
                    vec![(*a, Tensor::zeros(u.shape())), (*b, Tensor::zeros(v.shape()))]
                } else {
                    // dE/du = v/(|u||v|) - E u/|u|²
                    let (nu, nv) = (u.norm(), v.norm());
                    let e = out.item();
                    let gs = g.item();
                    let inv = R::one() / (nu * nv);
                    let du = v.scale(inv).sub(&u.scale(e / (nu * nu)))?.scale(gs);
                    let dv = u.scale(inv).sub(&v.scale(e / (nv * nv)))?.scale(gs);
                    vec![(*a, du), (*b, dv)]
                }
            }
        };
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor<f64> {
        Tensor::vector(data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::<f64>::new();
        let i = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = tape.constant(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let out = tape.apply(OpKind::MatMul, &[i, m]).unwrap();
        assert_eq!(tape.value(out).data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(v(&[0.0]));
        let y = tape.apply(OpKind::Sigmoid, &[x]).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5]);
    }

    #[test]
    fn maxpool_columnwise() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::matrix(2, 2, vec![1.0, 5.0, 3.0, 2.0]).unwrap());
        let y = tape.apply(OpKind::MaxPoolTime, &[x]).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 5.0]);
    }

    #[test]
    fn maxpool_ties_route_to_earliest_row() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::matrix(3, 2, vec![2.0, 1.0, 2.0, 4.0, 0.0, 4.0]).unwrap());
        let y = tape.maxpool_time(x).unwrap();
        let w = tape.constant(v(&[1.5, -2.0]));
        let p = tape.hadamard(y, w).unwrap();
        let loss = tape.sum(p).unwrap();
        let g = tape.backward(loss).unwrap().grad(x);
        assert_eq!(g.data(), &[1.5, 0.0, 0.0, -2.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_time_axis_is_domain_error() {
        let mut tape = Tape::<f64>::new();
        assert!(matches!(tape.stack(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(v(&[3.0]));
        let sq = tape.hadamard(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.grad(x).data(), &[6.0]);
    }

    #[test]
    fn untouched_tensor_gets_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(v(&[2.0]));
        let w = tape.param(v(&[7.0, 8.0]));
        let loss = tape.square(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.grad(w).data(), &[0.0, 0.0]);
        assert!(g.get(w).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(v(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn tape_is_single_use() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(v(&[1.0]));
        let y = tape.square(x).unwrap();
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::State(_))));
        assert!(matches!(tape.square(x), Err(Error::State(_))));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(v(&[1.0, 2.0]));
        let b = tape.constant(v(&[1.0, 2.0, 3.0]));
        match tape.add(a, b) {
            Err(Error::Shape { op, .. }) => assert_eq!(op, "add"),
            other => panic!("unexpected {other:?}"),
        }
        let m = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.matmul(m, b), Err(Error::Shape { op: "matmul", .. })));
    }

    #[test]
    fn sub_self_is_zero_and_concat_keeps_elements() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(v(&[1.5, -2.0, 3.0]));
        let z = tape.sub(a, a).unwrap();
        assert!(tape.value(z).data().iter().all(|&x| x == 0.0));
        let b = tape.constant(v(&[4.0]));
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c).len(), 4);
    }

    #[test]
    fn degenerate_cosine_is_flagged() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(v(&[0.0, 0.0]));
        let b = tape.param(v(&[1.0, 0.0]));
        let e = tape.cosine(a, b, 1e-8).unwrap();
        assert_eq!(tape.value(e).item(), 0.0);
        assert_eq!(tape.degenerate_count(), 1);
        let g = tape.backward(e).unwrap();
        assert_eq!(g.grad(b).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_visits_only_ops_before_the_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(v(&[2.0]));
        let loss = tape.square(x).unwrap();
        // Recorded after the loss; must not contribute.
        let _later = tape.scale(x, 100.0).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.grad(x).data(), &[4.0]);
    }
}
