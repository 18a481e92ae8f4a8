//! Wavelet regularizer: Huber penalty on detail maps plus squared drift
//! between the per-channel means of each level's input and approximation.

use crate::tape::{GradSink, Op, Tape, Var};
use crate::tensor::{invalid, Float, Result, Tensor};

use super::branch::WaveletBranchOutput;

pub const HUBER_DELTA: f64 = 1.0;

#[inline]
fn huber_point<T: Float>(v: T, delta: T) -> T {
    let a = v.abs();
    if a <= delta {
        T::of(0.5) * v * v
    } else {
        delta * (a - T::of(0.5) * delta)
    }
}

/// Mean over elements of the Huber function.
pub fn huber<T: Float>(t: &Tensor<T>, delta: f64) -> Result<T> {
    if !(delta > 0.0) {
        return invalid("huber", format!("delta must be positive, got {delta}"));
    }
    let d = T::of(delta);
    let s: T = t.data().iter().map(|v| huber_point(*v, d)).sum();
    Ok(s / T::of(t.numel() as f64))
}

impl<T: Float> Tape<T> {
    pub fn huber(&mut self, x: Var, delta: f64) -> Result<Var> {
        let v = huber(self.value(x), delta)?;
        self.record(
            "huber",
            Tensor::scalar(v),
            Op::Huber {
                input: x,
                delta: T::of(delta),
            },
            &[x],
        )
    }
}

pub(crate) fn huber_backward<T: Float>(input: Var, delta: T, g: T, acc: &mut GradSink<'_, T>) {
    let x = acc.value(input).data().to_vec();
    let k = g / T::of(x.len() as f64);
    acc.add(input, |d| {
        for (di, v) in d.iter_mut().zip(&x) {
            let slope = if v.abs() <= delta { *v } else { delta * v.signum() };
            *di += k * slope;
        }
    });
}

/// `alpha * sum_i huber(D_i) + beta * sum_i ||m^I_i - m^A_i||^2`, with the
/// squared norm taken over channels and averaged over the batch.
pub fn loss_wt<T: Float>(
    tape: &mut Tape<T>,
    branch: &WaveletBranchOutput,
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    if branch.details.is_empty() {
        return invalid("loss_wt", "branch has no levels");
    }
    let mut detail_sum: Option<Var> = None;
    for d in branch.details.iter().flatten() {
        let h = tape.huber(*d, HUBER_DELTA)?;
        detail_sum = Some(match detail_sum {
            Some(s) => tape.add(s, h)?,
            None => h,
        });
    }
    let mut mean_sum: Option<Var> = None;
    for &(mi, ma) in &branch.level_means {
        let (n, _) = tape.value(mi).dims2()?;
        let diff = tape.sub(mi, ma)?;
        let sq = tape.mul(diff, diff)?;
        let s = tape.sum(sq)?;
        let s = tape.scale(s, T::one() / T::of(n as f64))?;
        mean_sum = Some(match mean_sum {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    let a = tape.scale(detail_sum.expect("nonempty"), T::of(alpha))?;
    let b = tape.scale(mean_sum.expect("nonempty"), T::of(beta))?;
    tape.add(a, b)
}
