//! Named learnable parameters, non-learnable buffers and the SGD update.

use std::collections::HashMap;

use crate::tensor::{invalid, Float, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub momentum: Vec<T>,
}

/// Owns every parameter and buffer of one model. Names are unique across
/// parameters and buffers together.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    buffers: Vec<(String, Tensor<T>)>,
    names: HashMap<String, usize>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
        }
    }

    fn claim(&mut self, name: &str) -> Result<()> {
        if self.names.contains_key(name) {
            return invalid("param_store", format!("duplicate name `{name}`"));
        }
        self.names.insert(name.to_owned(), self.names.len());
        Ok(())
    }

    pub fn add_param(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        self.claim(&name)?;
        let momentum = vec![T::zero(); tensor.numel()];
        self.params.push(Parameter {
            name,
            tensor: tensor.with_grad(),
            momentum,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<BufferId> {
        let name = name.into();
        self.claim(&name)?;
        self.buffers.push((name, tensor));
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].1
    }

    pub fn buffers(&self) -> &[(String, Tensor<T>)] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [(String, Tensor<T>)] {
        &mut self.buffers
    }

    /// Two distinct buffers borrowed mutably at once.
    pub fn buffer_pair_mut(&mut self, a: BufferId, b: BufferId) -> (&mut Tensor<T>, &mut Tensor<T>) {
        assert_ne!(a.0, b.0, "buffer_pair_mut needs distinct buffers");
        if a.0 < b.0 {
            let (lo, hi) = self.buffers.split_at_mut(b.0);
            (&mut lo[a.0].1, &mut hi[0].1)
        } else {
            let (lo, hi) = self.buffers.split_at_mut(a.0);
            (&mut hi[0].1, &mut lo[b.0].1)
        }
    }

    pub fn find_param(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn grads_are_zero(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.tensor.grad().is_none_or(|g| g.iter().all(|v| *v == T::zero())))
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &[T]) {
        let g = self.params[id.0]
            .tensor
            .grad_mut()
            .expect("parameters always carry a gradient buffer");
        for (dst, src) in g.iter_mut().zip(grad) {
            *dst += *src;
        }
    }
}

/// Heavy-ball SGD: `buf <- momentum * buf + grad; p <- p - lr * buf`.
/// Gradients are left in place; the caller zeroes them.
pub fn sgd_step<T: Float>(store: &mut ParamStore<T>, lr: f64, momentum: f64) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return invalid("sgd_step", format!("learning rate must be positive, got {lr}"));
    }
    let lr = T::of(lr);
    let mu = T::of(momentum);
    for p in store.params_mut() {
        let Parameter {
            tensor, momentum, ..
        } = p;
        let (data, grad) = tensor.data_and_grad_mut();
        let grad = grad.expect("parameters always carry a gradient buffer");
        for ((w, b), g) in data.iter_mut().zip(momentum.iter_mut()).zip(grad.iter()) {
            *b = mu * *b + *g;
            *w -= lr * *b;
        }
    }
    Ok(())
}
