//! Parameterized layers: thin wrappers binding store entries to tape ops.

use rand::Rng;

use crate::ops::{Conv2dOpts, Mode};
use crate::param::{BufferId, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Float, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    KaimingUniform,
    Zero,
}

fn init_tensor<T: Float, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, init: Init, rng: &mut R) -> Tensor<T> {
    match init {
        Init::Zero => Tensor::zeros(shape),
        Init::KaimingUniform => {
            let bound = (6.0 / fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub opts: Conv2dOpts,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        opts: Conv2dOpts,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let w = init_tensor(&[out_channels, in_channels, kernel.0, kernel.1], fan_in, init, rng);
        let weight = store.add_param(format!("{name}.weight"), w)?;
        let bias = if bias {
            Some(store.add_param(format!("{name}.bias"), Tensor::zeros(&[out_channels]))?)
        } else {
            None
        };
        Ok(Self { weight, bias, opts })
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.conv2d(x, w, b, self.opts)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2dLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm2dLayer {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_param(format!("{name}.weight"), Tensor::full(&[channels], T::one()))?,
            beta: store.add_param(format!("{name}.bias"), Tensor::zeros(&[channels]))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store
                .add_buffer(format!("{name}.running_var"), Tensor::full(&[channels], T::one()))?,
        })
    }

    pub fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let (rm, rv) = store.buffer_pair_mut(self.running_mean, self.running_var);
        tape.batchnorm2d(x, g, b, rm, rv, mode)
    }
}

#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearLayer {
    /// Weights uniform in `±1/sqrt(in_features)`, zero bias.
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (in_features as f64).sqrt();
        let w = Tensor::from_fn(&[out_features, in_features], |_| {
            T::of(rng.random_range(-bound..bound))
        });
        Ok(Self {
            weight: store.add_param(format!("{name}.weight"), w)?,
            bias: store.add_param(format!("{name}.bias"), Tensor::zeros(&[out_features]))?,
        })
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, Some(b))
    }
}
