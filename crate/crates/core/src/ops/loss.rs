use crate::tape::{GradSink, Op, Tape, Var};
use crate::tensor::{invalid, Float, Result, Tensor};

/// Row-wise softmax of `[N, C]` values, computed from the shifted logits.
pub fn softmax_rows<T: Float>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = logits.dims2()?;
    let mut out = Vec::with_capacity(n * c);
    for row in logits.data().chunks(c) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|v| (*v - m).exp()).collect();
        let z: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    Tensor::new(vec![n, c], out)
}

impl<T: Float> Tape<T> {
    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.value(logits).dims2()?;
        if labels.len() != n {
            return invalid(
                "softmax_cross_entropy",
                format!("{} labels for {n} rows", labels.len()),
            );
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return invalid(
                "softmax_cross_entropy",
                format!("label {bad} outside [0, {c})"),
            );
        }
        let x = self.value(logits).data();
        let mut probs = Vec::with_capacity(n * c);
        let mut total = T::zero();
        for (row, &label) in x.chunks(c).zip(labels) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|v| (*v - m).exp()).sum();
            let lse = m + z.ln();
            total += lse - row[label];
            probs.extend(row.iter().map(|v| (*v - lse).exp()));
        }
        let loss = Tensor::scalar(total / T::of(n as f64));
        self.record(
            "softmax_cross_entropy",
            loss,
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }
}

pub(crate) fn softmax_ce_backward<T: Float>(
    logits: Var,
    labels: &[usize],
    probs: &[T],
    g: T,
    acc: &mut GradSink<'_, T>,
) {
    let n = labels.len();
    let c = probs.len() / n;
    let k = g / T::of(n as f64);
    acc.add(logits, |d| {
        for (i, &label) in labels.iter().enumerate() {
            for j in 0..c {
                let onehot = if j == label { T::one() } else { T::zero() };
                d[i * c + j] += k * (probs[i * c + j] - onehot);
            }
        }
    });
}
