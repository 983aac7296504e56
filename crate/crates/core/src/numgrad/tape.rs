//! Reverse-mode gradient tape.
//!
//! A [`Tape`] records the forward computation as a flat list of nodes in
//! topological order (inputs always precede the ops consuming them).
//! [`Tape::backward`] walks the list in reverse, accumulating gradients with
//! a fixed summation order so results are bit-deterministic.
//!
//! The op set is intentionally small: affine layers, relu, column
//! concatenation, cosine similarity, softmax cross-entropy, elementwise
//! square, and affine combinations of scalars. That covers every layer and
//! loss this crate trains.

use crate::error::{Error, Result};
use crate::numgrad::tensor::{dense_forward, Activation, ParamId, ParamStore, Real, Tensor2};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    /// Constant input; receives a gradient but owns no parameter.
    Leaf,
    /// Trainable parameter leaf; gradient flows back into a [`ParamStore`].
    Param(ParamId),
    MatMul(NodeId, NodeId),
    /// Broadcast-add a single row over every row of the left input.
    AddRow(NodeId, NodeId),
    Relu(NodeId),
    Square(NodeId),
    ConcatCols(NodeId, NodeId),
    /// Cosine similarity of two single-row vectors, producing a 1x1 scalar.
    CosineSim(NodeId, NodeId),
    /// Cross-entropy of softmax(logits) against a class index, 1x1 scalar.
    SoftmaxCrossEntropy(NodeId, usize),
    /// `sum(coeff_i * scalar_i) + constant` over 1x1 inputs. Coefficients are
    /// plain numbers, so non-differentiable gates can be baked in here.
    Affine(Vec<(T, NodeId)>, T),
}

struct Node<T> {
    op: Op<T>,
    value: Tensor2<T>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor2<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. the given node, if any flowed there.
    pub fn get(&self, id: NodeId) -> Option<&Tensor2<T>> {
        self.grads[id.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value computed at a node during the forward pass.
    pub fn value(&self, id: NodeId) -> &Tensor2<T> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value.scalar()
    }

    fn push(&mut self, op: Op<T>, value: Tensor2<T>) -> Result<NodeId> {
        value.ensure_finite(op_name(&op))?;
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records a constant input.
    pub fn leaf(&mut self, value: Tensor2<T>) -> Result<NodeId> {
        self.push(Op::Leaf, value)
    }

    /// Single-row constant input from a slice.
    pub fn input_row(&mut self, values: &[T]) -> Result<NodeId> {
        let t = Tensor2::row(values)?;
        self.leaf(t)
    }

    /// Records a parameter leaf; its gradient lands in the store on
    /// [`Tape::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<NodeId> {
        self.push(Op::Param(id), store.value(id).clone())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), value)
    }

    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::Config(format!(
                "row-broadcast add shape mismatch: {}x{} + {}x{}",
                xv.rows(),
                xv.cols(),
                rv.rows(),
                rv.cols()
            )));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out.set(r, c, out.get(r, c) + rv.get(0, c));
            }
        }
        self.push(Op::AddRow(x, row), out)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let mut out = self.value(x).clone();
        for v in out.values_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        self.push(Op::Relu(x), out)
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        let mut out = self.value(x).clone();
        for v in out.values_mut() {
            *v = *v * *v;
        }
        self.push(Op::Square(x), out)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::Config(format!(
                "column concat row mismatch: {}x{} vs {}x{}",
                av.rows(),
                av.cols(),
                bv.rows(),
                bv.cols()
            )));
        }
        let rows = av.rows();
        let (p, q) = (av.cols(), bv.cols());
        let mut values = Vec::with_capacity(rows * (p + q));
        for r in 0..rows {
            values.extend_from_slice(&av.values()[r * p..(r + 1) * p]);
            values.extend_from_slice(&bv.values()[r * q..(r + 1) * q]);
        }
        let out = Tensor2::from_vec(rows, p + q, values)?;
        self.push(Op::ConcatCols(a, b), out)
    }

    /// Cosine similarity of two single-row vectors as a 1x1 node.
    pub fn cosine_sim(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != 1 || bv.rows() != 1 {
            return Err(Error::Config(
                "cosine similarity expects single-row vectors".to_string(),
            ));
        }
        let sim = crate::numgrad::cosine_similarity(av.values(), bv.values())?;
        let out = Tensor2::from_vec(1, 1, vec![sim])?;
        self.push(Op::CosineSim(a, b), out)
    }

    /// `1 - cosine_sim(a, b)` as a 1x1 node.
    pub fn cosine_dist(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sim = self.cosine_sim(a, b)?;
        self.affine(&[(-T::one(), sim)], T::one())
    }

    /// Cross-entropy of softmax(logits) against `class`, with the usual
    /// log-sum-exp stabilization.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, class: usize) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.rows() != 1 {
            return Err(Error::Config(
                "cross-entropy expects a single logits row".to_string(),
            ));
        }
        if class >= lv.cols() {
            return Err(Error::Data(format!(
                "class index {class} out of range for {} logits",
                lv.cols()
            )));
        }
        let vals = lv.values();
        let max = vals.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for &v in vals {
            sum = sum + (v - max).exp();
        }
        let loss = max + sum.ln() - vals[class];
        let out = Tensor2::from_vec(1, 1, vec![loss])?;
        self.push(Op::SoftmaxCrossEntropy(logits, class), out)
    }

    /// `sum(coeff * term) + constant` over 1x1 scalar nodes.
    pub fn affine(&mut self, terms: &[(T, NodeId)], constant: T) -> Result<NodeId> {
        let mut acc = constant;
        for &(coeff, id) in terms {
            let v = self.value(id);
            if v.shape() != (1, 1) {
                return Err(Error::Config(format!(
                    "affine combination expects 1x1 scalars, got {}x{}",
                    v.rows(),
                    v.cols()
                )));
            }
            acc = acc + coeff * v.scalar();
        }
        let out = Tensor2::from_vec(1, 1, vec![acc])?;
        self.push(Op::Affine(terms.to_vec(), constant), out)
    }

    /// Constant 1x1 node (an empty affine combination).
    pub fn constant(&mut self, value: T) -> Result<NodeId> {
        self.affine(&[], value)
    }

    /// Mean of 1x1 scalar nodes; a constant zero node when `terms` is empty.
    pub fn mean(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        if terms.is_empty() {
            return self.constant(T::zero());
        }
        let inv = T::one() / T::from_f64_lossy(terms.len() as f64);
        let weighted: Vec<(T, NodeId)> = terms.iter().map(|&id| (inv, id)).collect();
        self.affine(&weighted, T::zero())
    }

    /// Affine layer `act(x * w + b)` recorded on the tape. Values agree with
    /// the plain [`dense_forward`] by construction.
    pub fn dense(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        activation: Activation,
    ) -> Result<NodeId> {
        // Validate with the value-level forward so both paths report the
        // same shape errors.
        dense_forward(self.value(x), self.value(w), self.value(b), activation)?;
        let y = self.matmul(x, w)?;
        let y = self.add_row(y, b)?;
        match activation {
            Activation::Identity => Ok(y),
            Activation::Relu => self.relu(y),
        }
    }

    /// Smallest |pre-activation| over all relu nodes, i.e. the distance to
    /// the nearest relu kink. Gradient checks resample inputs when this is
    /// within epsilon of zero.
    pub fn min_relu_input_magnitude(&self) -> Option<T> {
        let mut min: Option<T> = None;
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                for &v in self.nodes[x.0].value.values() {
                    let m = v.abs();
                    min = Some(match min {
                        Some(cur) if cur <= m => cur,
                        _ => m,
                    });
                }
            }
        }
        min
    }

    /// Smallest vector norm entering any cosine-similarity node. Gradient
    /// checks resample draws whose norms are small enough to make the
    /// cosine ill-conditioned.
    pub fn min_cosine_input_norm(&self) -> Option<T> {
        let mut min: Option<T> = None;
        for node in &self.nodes {
            if let Op::CosineSim(a, b) = node.op {
                for id in [a, b] {
                    let n = norm(self.nodes[id.0].value.values());
                    min = Some(match min {
                        Some(cur) if cur <= n => cur,
                        _ => n,
                    });
                }
            }
        }
        min
    }

    /// Reverse pass from a 1x1 scalar node. Returns per-node gradients;
    /// nothing in the tape or any parameter store is mutated.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Config(
                "backward expects a 1x1 scalar loss node".to_string(),
            ));
        }
        let mut grads: Vec<Option<Tensor2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor2::from_vec(1, 1, vec![T::one()])?);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            g.ensure_finite(&format!("gradient of node {id}"))?;
            match &self.nodes[id].op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(&self.nodes[b.0].value);
                    let gb = self.nodes[a.0].value.t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(x, row) => {
                    accumulate(&mut grads, *row, g.column_sums());
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let mut gx = g.clone();
                    for (gv, xv) in gx.values_mut().iter_mut().zip(xv.values().iter()) {
                        if *xv <= T::zero() {
                            *gv = T::zero();
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Square(x) => {
                    let xv = &self.nodes[x.0].value;
                    let two = T::from_f64_lossy(2.0);
                    let mut gx = g.clone();
                    for (gv, xv) in gx.values_mut().iter_mut().zip(xv.values().iter()) {
                        *gv = *gv * two * *xv;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let (p, q) = (self.nodes[a.0].value.cols(), self.nodes[b.0].value.cols());
                    let rows = g.rows();
                    let mut ga = Tensor2::zeros(rows, p);
                    let mut gb = Tensor2::zeros(rows, q);
                    for r in 0..rows {
                        for c in 0..p {
                            ga.set(r, c, g.get(r, c));
                        }
                        for c in 0..q {
                            gb.set(r, c, g.get(r, p + c));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::CosineSim(a, b) => {
                    let gs = g.scalar();
                    let av = self.nodes[a.0].value.values();
                    let bv = self.nodes[b.0].value.values();
                    let sim = self.nodes[id].value.scalar();
                    let na = norm(av);
                    let nb = norm(bv);
                    let mut ga = Tensor2::zeros(1, av.len());
                    let mut gb = Tensor2::zeros(1, bv.len());
                    for i in 0..av.len() {
                        // d sim / d a_i = b_i/(|a||b|) - sim * a_i/|a|^2
                        ga.values_mut()[i] = gs * (bv[i] / (na * nb) - sim * av[i] / (na * na));
                        gb.values_mut()[i] = gs * (av[i] / (na * nb) - sim * bv[i] / (nb * nb));
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SoftmaxCrossEntropy(logits, class) => {
                    let gs = g.scalar();
                    let lv = self.nodes[logits.0].value.values();
                    let max = lv.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                    let mut sum = T::zero();
                    for &v in lv {
                        sum = sum + (v - max).exp();
                    }
                    let mut gl = Tensor2::zeros(1, lv.len());
                    for (i, (&logit, g_out)) in
                        lv.iter().zip(gl.values_mut().iter_mut()).enumerate()
                    {
                        let p = (logit - max).exp() / sum;
                        let delta = if i == *class { T::one() } else { T::zero() };
                        *g_out = gs * (p - delta);
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::Affine(terms, _) => {
                    let gs = g.scalar();
                    for &(coeff, term) in terms {
                        let gt = Tensor2::from_vec(1, 1, vec![gs * coeff])?;
                        accumulate(&mut grads, term, gt);
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Adds the gradients of every parameter leaf into the store, in node
    /// order (deterministic).
    pub fn accumulate_param_grads(
        &self,
        grads: &Gradients<T>,
        store: &mut ParamStore<T>,
    ) -> Result<()> {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(pid) = node.op {
                if let Some(g) = grads.get(NodeId(idx)) {
                    g.ensure_finite(&format!("gradient of parameter {}", store.name(pid)))?;
                    store.get_mut(pid).grad.add_assign(g);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor2<T>>], id: NodeId, g: Tensor2<T>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn norm<T: Real>(v: &[T]) -> T {
    let mut acc = T::zero();
    for x in v {
        acc = acc + *x * *x;
    }
    acc.sqrt()
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Param(_) => "param",
        Op::MatMul(..) => "matmul",
        Op::AddRow(..) => "add_row",
        Op::Relu(_) => "relu",
        Op::Square(_) => "square",
        Op::ConcatCols(..) => "concat_cols",
        Op::CosineSim(..) => "cosine_sim",
        Op::SoftmaxCrossEntropy(..) => "softmax_cross_entropy",
        Op::Affine(..) => "affine",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_on_tape_matches_plain_forward() {
        let x = Tensor2::from_vec(2, 3, vec![0.1_f64, -0.4, 0.7, 1.0, 0.2, -0.3]).unwrap();
        let w = Tensor2::from_vec(3, 2, vec![0.5, -0.2, 0.1, 0.9, -0.7, 0.3]).unwrap();
        let b = Tensor2::from_vec(1, 2, vec![0.05, -0.1]).unwrap();
        let plain = dense_forward(&x, &w, &b, Activation::Relu).unwrap();

        let mut store = ParamStore::new();
        let wid = store.insert("w", w).unwrap();
        let bid = store.insert("b", b).unwrap();
        let mut tape = Tape::new();
        let xn = tape.leaf(x).unwrap();
        let wn = tape.param(&store, wid).unwrap();
        let bn = tape.param(&store, bid).unwrap();
        let y = tape.dense(xn, wn, bn, Activation::Relu).unwrap();
        assert_eq!(tape.value(y), &plain);
    }

    #[test]
    fn backward_through_square_of_params() {
        // f = sum of squares via cosine-free path: y = w * x, loss = y^2 summed
        let mut store = ParamStore::new();
        let wid = store
            .insert("w", Tensor2::from_vec(1, 1, vec![3.0_f64]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let wn = tape.param(&store, wid).unwrap();
        let sq = tape.square(wn).unwrap();
        let grads = tape.backward(sq).unwrap();
        tape.accumulate_param_grads(&grads, &mut store).unwrap();
        // d(w^2)/dw = 2w = 6
        assert!((store.get(wid).grad.scalar() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_sim_gradient_is_zero_for_parallel_vectors() {
        // sim(a, c*a) = 1 for c > 0 and is scale invariant, so the gradient
        // along any direction that keeps direction unchanged must vanish.
        let mut tape = Tape::<f64>::new();
        let a = tape.input_row(&[1.0, 2.0, -0.5]).unwrap();
        let b = tape.input_row(&[2.0, 4.0, -1.0]).unwrap();
        let sim = tape.cosine_sim(a, b).unwrap();
        assert!((tape.scalar(sim) - 1.0).abs() < 1e-12);
        let grads = tape.backward(sim).unwrap();
        for g in grads.get(a).unwrap().values() {
            assert!(g.abs() < 1e-12);
        }
    }

    #[test]
    fn affine_combination_accumulates_constants_and_coeffs() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(2.0).unwrap();
        let b = tape.constant(5.0).unwrap();
        let c = tape.affine(&[(0.5, a), (-1.0, b)], 3.0).unwrap();
        assert!((tape.scalar(c) - (0.5 * 2.0 - 5.0 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn softmax_cross_entropy_uniform_logits() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.input_row(&[0.0, 0.0]).unwrap();
        let ce = tape.softmax_cross_entropy(logits, 0).unwrap();
        assert!((tape.scalar(ce) - (2.0_f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_cross_entropy_rejects_bad_class() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.input_row(&[0.0, 0.0]).unwrap();
        let err = tape.softmax_cross_entropy(logits, 2).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn concat_cols_splits_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input_row(&[1.0, 2.0]).unwrap();
        let b = tape.input_row(&[3.0]).unwrap();
        let cat = tape.concat_cols(a, b).unwrap();
        assert_eq!(tape.value(cat).values(), &[1.0, 2.0, 3.0]);
        // loss = cat * [10, 20, 30]^T, so d loss / d cat = (10, 20, 30)
        // split as (10, 20) for a and (30,) for b.
        let w = tape
            .leaf(Tensor2::from_vec(3, 1, vec![10.0, 20.0, 30.0]).unwrap())
            .unwrap();
        let loss = tape.matmul(cat, w).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().values(), &[10.0, 20.0]);
        assert_eq!(grads.get(b).unwrap().values(), &[30.0]);
    }
}
