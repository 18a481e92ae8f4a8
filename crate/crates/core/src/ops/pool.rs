use crate::tape::{Op, Tape, Var};
use crate::tensor::{invalid, Float, Result, Tensor};

impl<T: Float> Tape<T> {
    /// Max pooling with implicit `-inf` padding. Ties go to the first maximum
    /// in row-major window order.
    pub fn maxpool2d(&mut self, input: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if h == 0 || w == 0 {
            return invalid("maxpool2d", "empty spatial dims");
        }
        if stride == 0 || h + 2 * pad < kernel || w + 2 * pad < kernel {
            return invalid(
                "maxpool2d",
                format!("kernel {kernel} stride {stride} pad {pad} does not fit {h}x{w}"),
            );
        }
        let ho = (h + 2 * pad - kernel) / stride + 1;
        let wo = (w + 2 * pad - kernel) / stride + 1;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best: Option<(T, usize)> = None;
                    for ky in 0..kernel {
                        let y = (oy * stride + ky) as isize - pad as isize;
                        if y < 0 || y as usize >= h {
                            continue;
                        }
                        for kx in 0..kernel {
                            let xx = (ox * stride + kx) as isize - pad as isize;
                            if xx < 0 || xx as usize >= w {
                                continue;
                            }
                            let idx = base + y as usize * w + xx as usize;
                            if best.is_none_or(|(b, _)| x[idx] > b) {
                                best = Some((x[idx], idx));
                            }
                        }
                    }
                    let (v, idx) = best.expect("window overlaps the input");
                    out.push(v);
                    argmax.push(idx);
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        self.record("maxpool2d", value, Op::MaxPool { input, argmax }, &[input])
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let hw = h * w;
        if hw == 0 {
            return invalid("global_avg_pool", "empty spatial dims");
        }
        let inv = T::one() / T::of(hw as f64);
        let out: Vec<T> = self
            .value(input)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(vec![n, c], out)?;
        self.record("global_avg_pool", value, Op::GlobalAvgPool(input), &[input])
    }
}
