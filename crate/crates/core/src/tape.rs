//! Dynamically recorded tape for reverse-mode differentiation.
//!
//! Every forward pass builds a fresh [`Tape`]. Operations append nodes that
//! keep their output value plus whatever the backward rule needs; node ids
//! are monotone so a single reverse sweep visits each node after all of its
//! consumers.

use crate::ops::conv::ConvSaved;
use crate::ops::norm::BatchNormSaved;
use crate::param::{ParamId, ParamStore};
use crate::tensor::{invalid, shape_err, Float, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d(Box<ConvSaved>),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Relu(Var),
    Tanh(Var),
    BatchNorm(Box<BatchNormSaved<T>>),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    ConcatCols {
        inputs: Vec<Var>,
        widths: Vec<usize>,
    },
    HaarBand {
        input: Var,
        band: usize,
    },
    LazySplit {
        input: Var,
        axis: usize,
        parity: usize,
    },
    Huber {
        input: Var,
        delta: T,
    },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    corrupt_backward: bool,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            corrupt_backward: false,
        }
    }

    /// Test hook: skews the conv2d weight gradient so verification tooling
    /// can prove it catches a broken backward rule.
    #[doc(hidden)]
    pub fn set_corrupt_backward(&mut self, on: bool) {
        self.corrupt_backward = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an op output after the finiteness check every forward op owes.
    pub(crate) fn record(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var> {
        value.check_finite(name)?;
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    /// Input leaf; it takes part in differentiation iff the tensor has a grad slot.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad();
        let mut value = tensor;
        value.set_requires_grad(false);
        self.push(value, Op::Leaf, rg)
    }

    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(false);
        self.push(tensor, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let mut value = store.param(id).tensor.clone();
        value.set_requires_grad(false);
        self.push(value, Op::Param(id), true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Propagates d(loss)/d(node) to every node and adds the parameter parts
    /// into `store`. Calling it twice without zeroing accumulates twice.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.backward_node(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads[i]) {
                store.accumulate_grad(*id, g);
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = GradSink {
            nodes: &self.nodes,
            grads,
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d(saved) => {
                crate::ops::conv::backward(saved, g, &mut acc, self.corrupt_backward)
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => crate::ops::linear::backward(*input, *weight, *bias, g, &mut acc),
            Op::Relu(x) => {
                let xv = acc.value(*x).data().to_vec();
                acc.add(*x, |dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(&xv) {
                        if *xi > T::zero() {
                            *d += *gi;
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                acc.add(*x, |dx| {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += *gi * (T::one() - *yi * *yi);
                    }
                });
            }
            Op::BatchNorm(saved) => crate::ops::norm::backward(saved, g, &mut acc),
            Op::MaxPool { input, argmax } => acc.add(*input, |dx| {
                for (gi, &src) in g.iter().zip(argmax) {
                    dx[src] += *gi;
                }
            }),
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = acc.value(*x).dims4().expect("pooled input is rank 4");
                let hw = h * w;
                let inv = T::one() / T::of(hw as f64);
                acc.add(*x, |dx| {
                    for (plane, gi) in dx.chunks_mut(hw).zip(g) {
                        let v = *gi * inv;
                        plane.iter_mut().for_each(|d| *d += v);
                    }
                });
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => crate::ops::loss::softmax_ce_backward(*logits, labels, probs, g[0], &mut acc),
            Op::Add(a, b) => {
                acc.add(*a, |d| axpy(d, T::one(), g));
                acc.add(*b, |d| axpy(d, T::one(), g));
            }
            Op::Sub(a, b) => {
                acc.add(*a, |d| axpy(d, T::one(), g));
                acc.add(*b, |d| axpy(d, -T::one(), g));
            }
            Op::Mul(a, b) => {
                let av = acc.value(*a).data().to_vec();
                let bv = acc.value(*b).data().to_vec();
                acc.add(*a, |d| {
                    for ((di, gi), bi) in d.iter_mut().zip(g).zip(&bv) {
                        *di += *gi * *bi;
                    }
                });
                acc.add(*b, |d| {
                    for ((di, gi), ai) in d.iter_mut().zip(g).zip(&av) {
                        *di += *gi * *ai;
                    }
                });
            }
            Op::Scale(a, s) => acc.add(*a, |d| axpy(d, *s, g)),
            Op::Sum(a) => acc.add(*a, |d| d.iter_mut().for_each(|di| *di += g[0])),
            Op::ConcatCols { inputs, widths } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (v, &w) in inputs.iter().zip(widths) {
                    acc.add(*v, |d| {
                        for (row, drow) in d.chunks_mut(w).enumerate() {
                            let src = &g[row * total + offset..row * total + offset + w];
                            axpy(drow, T::one(), src);
                        }
                    });
                    offset += w;
                }
            }
            Op::HaarBand { input, band } => {
                crate::wavelet::haar::band_backward(*input, *band, g, &mut acc)
            }
            Op::LazySplit {
                input,
                axis,
                parity,
            } => crate::wavelet::haar::lazy_split_backward(*input, *axis, *parity, g, &mut acc),
            Op::Huber { input, delta } => crate::wavelet::loss::huber_backward(*input, *delta, g[0], &mut acc),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("shapes already checked")
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let av = self.value(a);
        Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| f(*x)).collect())
            .expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        self.record("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        self.record("sub", out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        self.record("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.map(a, |x| x * s);
        self.record("scale", out, Op::Scale(a, s), &[a])
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        self.record("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, |x| if x > T::zero() { x } else { T::zero() });
        self.record("relu", out, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, |x| x.tanh());
        self.record("tanh", out, Op::Tanh(a), &[a])
    }

    /// Concatenates `[N, K_i]` matrices along the feature axis.
    pub fn concat_cols(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return invalid("concat_cols", "nothing to concatenate");
        };
        let (n, _) = self.value(first).dims2()?;
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let (rows, w) = self.value(v).dims2()?;
            if rows != n {
                return shape_err("concat_cols", format!("row count {rows} vs {n}"));
            }
            widths.push(w);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for row in 0..n {
            for (&v, &w) in inputs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(v).data()[row * w..(row + 1) * w]);
            }
        }
        let out = Tensor::new(vec![n, total], data)?;
        self.record(
            "concat_cols",
            out,
            Op::ConcatCols {
                inputs: inputs.to_vec(),
                widths,
            },
            inputs,
        )
    }
}

/// Gradient accumulator handed to per-op backward rules.
pub(crate) struct GradSink<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Float> GradSink<'_, T> {
    pub(crate) fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Runs `f` on the (lazily zeroed) gradient buffer of `v`, if `v` needs one.
    pub(crate) fn add(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(slot);
    }
}

#[inline]
pub(crate) fn axpy<T: Float>(dst: &mut [T], a: T, src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * *s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_all_ones() {
        let mut tape = Tape::<f64>::new();
        let t = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64).with_grad());
        let loss = tape.sum(t).unwrap();
        let mut store = ParamStore::new();
        let grads = tape.backward(loss, &mut store).unwrap();
        assert_eq!(grads.get(t).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .add_param("w", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss, &mut store).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.param(id).tensor.grad().unwrap(), &[4.0, 8.0, 12.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let t = tape.leaf(Tensor::zeros(&[2]).with_grad());
        let mut store = ParamStore::new();
        assert!(matches!(
            tape.backward(t, &mut store),
            Err(TensorError::NotScalar(_))
        ));
    }

    #[test]
    fn relu_and_tanh_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let t = tape.tanh(x).unwrap();
        assert_eq!(tape.value(t).data()[1], 0.0);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![0.0, 1.0]).unwrap().with_grad());
        let r = tape.relu(x).unwrap();
        let loss = tape.sum(r).unwrap();
        let g = tape.backward(loss, &mut ParamStore::new()).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![1], vec![f64::MAX]).unwrap());
        assert!(matches!(
            tape.add(x, x),
            Err(TensorError::NonFinite { op: "add" })
        ));
    }
}
