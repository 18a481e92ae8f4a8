use crate::tape::{axpy, GradSink, Op, Tape, Var};
use crate::tensor::{shape_err, Float, Result, Tensor};

impl<T: Float> Tape<T> {
    /// `out[n,k] = sum_d input[n,d] * weight[k,d] + bias[k]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (n, d) = self.value(input).dims2()?;
        let (k, wd) = self.value(weight).dims2()?;
        if wd != d {
            return shape_err("linear", format!("input width {d}, weight expects {wd}"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [k] {
                return shape_err("linear", format!("bias shape {:?}, expected [{k}]", self.shape(b)));
            }
        }
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = bias.map(|b| self.value(b).data());
        let mut out = Vec::with_capacity(n * k);
        for row in x.chunks(d) {
            for (j, wrow) in w.chunks(d).enumerate() {
                let mut s = T::zero();
                for (xi, wi) in row.iter().zip(wrow) {
                    s += *xi * *wi;
                }
                out.push(match b {
                    Some(b) => s + b[j],
                    None => s,
                });
            }
        }
        let value = Tensor::new(vec![n, k], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.record(
            "linear",
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &inputs,
        )
    }
}

pub(crate) fn backward<T: Float>(
    input: Var,
    weight: Var,
    bias: Option<Var>,
    g: &[T],
    acc: &mut GradSink<'_, T>,
) {
    let (_, d) = acc.value(input).dims2().expect("rank 2");
    let (k, _) = acc.value(weight).dims2().expect("rank 2");
    if let Some(b) = bias {
        acc.add(b, |db| {
            for grow in g.chunks(k) {
                axpy(db, T::one(), grow);
            }
        });
    }
    if acc.wants(weight) {
        let x = acc.value(input).data().to_vec();
        acc.add(weight, |dw| {
            for (grow, xrow) in g.chunks(k).zip(x.chunks(d)) {
                for (j, gv) in grow.iter().enumerate() {
                    axpy(&mut dw[j * d..(j + 1) * d], *gv, xrow);
                }
            }
        });
    }
    if acc.wants(input) {
        let w = acc.value(weight).data().to_vec();
        acc.add(input, |dx| {
            for (grow, dxrow) in g.chunks(k).zip(dx.chunks_mut(d)) {
                for (j, gv) in grow.iter().enumerate() {
                    axpy(dxrow, *gv, &w[j * d..(j + 1) * d]);
                }
            }
        });
    }
}
