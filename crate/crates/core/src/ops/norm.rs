use crate::tape::{GradSink, Op, Tape, Var};
use crate::tensor::{invalid, shape_err, Float, Result, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) struct BatchNormSaved<T> {
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    invstd: Vec<T>,
    train: bool,
    n: usize,
    c: usize,
    hw: usize,
}

impl<T: Float> Tape<T> {
    /// Per-channel batch normalization over `[N,C,H,W]`.
    ///
    /// Train mode normalizes with the (biased) batch statistics and folds them
    /// into the running estimates with momentum 0.1, using the unbiased
    /// variance there. Eval mode normalizes with the running estimates.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut Tensor<T>,
        running_var: &mut Tensor<T>,
        mode: Mode,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        for (what, shape) in [
            ("scale", self.shape(gamma)),
            ("shift", self.shape(beta)),
            ("running mean", running_mean.shape()),
            ("running var", running_var.shape()),
        ] {
            if shape != [c] {
                return shape_err("batchnorm2d", format!("{what} shape {shape:?}, expected [{c}]"));
            }
        }
        let hw = h * w;
        let m = n * hw;
        let train = mode == Mode::Train;
        if train && m < 2 {
            return invalid(
                "batchnorm2d",
                "train mode needs at least two values per channel",
            );
        }
        let eps = T::of(BN_EPS);
        let x = self.value(input).data();
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();

        let mut invstd = vec![T::zero(); c];
        let mut mean = vec![T::zero(); c];
        if train {
            let mut var = vec![T::zero(); c];
            let inv_m = T::one() / T::of(m as f64);
            for ch in 0..c {
                let mut s = T::zero();
                for ni in 0..n {
                    let base = (ni * c + ch) * hw;
                    s += x[base..base + hw].iter().copied().sum::<T>();
                }
                mean[ch] = s * inv_m;
                let mut v = T::zero();
                for ni in 0..n {
                    let base = (ni * c + ch) * hw;
                    for xi in &x[base..base + hw] {
                        let d = *xi - mean[ch];
                        v += d * d;
                    }
                }
                var[ch] = v * inv_m;
                invstd[ch] = T::one() / (var[ch] + eps).sqrt();
            }
            let mom = T::of(BN_MOMENTUM);
            let unbias = T::of(m as f64 / (m as f64 - 1.0));
            for ch in 0..c {
                let rm = &mut running_mean.data_mut()[ch];
                *rm = (T::one() - mom) * *rm + mom * mean[ch];
                let rv = &mut running_var.data_mut()[ch];
                *rv = (T::one() - mom) * *rv + mom * var[ch] * unbias;
            }
        } else {
            for ch in 0..c {
                mean[ch] = running_mean.data()[ch];
                invstd[ch] = T::one() / (running_var.data()[ch] + eps).sqrt();
            }
        }

        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (x[i] - mean[ch]) * invstd[ch];
                    xhat[i] = xh;
                    out[i] = gm[ch] * xh + bt[ch];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let saved = BatchNormSaved {
            input,
            gamma,
            beta,
            xhat,
            invstd,
            train,
            n,
            c,
            hw,
        };
        self.record(
            "batchnorm2d",
            value,
            Op::BatchNorm(Box::new(saved)),
            &[input, gamma, beta],
        )
    }
}

pub(crate) fn backward<T: Float>(s: &BatchNormSaved<T>, g: &[T], acc: &mut GradSink<'_, T>) {
    let (n, c, hw) = (s.n, s.c, s.hw);
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for ni in 0..n {
        for ch in 0..c {
            let base = (ni * c + ch) * hw;
            for i in base..base + hw {
                sum_dy[ch] += g[i];
                sum_dy_xhat[ch] += g[i] * s.xhat[i];
            }
        }
    }
    acc.add(s.gamma, |d| {
        for (di, v) in d.iter_mut().zip(&sum_dy_xhat) {
            *di += *v;
        }
    });
    acc.add(s.beta, |d| {
        for (di, v) in d.iter_mut().zip(&sum_dy) {
            *di += *v;
        }
    });
    if !acc.wants(s.input) {
        return;
    }
    let gamma = acc.value(s.gamma).data().to_vec();
    let m = T::of((n * hw) as f64);
    acc.add(s.input, |dx| {
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * hw;
                let scale = gamma[ch] * s.invstd[ch];
                if s.train {
                    let k = scale / m;
                    for i in base..base + hw {
                        dx[i] += k * (m * g[i] - sum_dy[ch] - s.xhat[i] * sum_dy_xhat[ch]);
                    }
                } else {
                    for i in base..base + hw {
                        dx[i] += scale * g[i];
                    }
                }
            }
        }
    });
}
