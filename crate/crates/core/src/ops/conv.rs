//! 2D convolution via per-sample im2col.
//!
//! Each output element accumulates `input * weight` in `(channel, ky, kx)`
//! order starting from zero and adds the bias last, which is the same order a
//! naive nested loop uses, so both agree bit for bit.

use crate::tape::{axpy, GradSink, Op, Tape, Var};
use crate::tensor::{invalid, shape_err, Float, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Reflect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOpts {
    pub stride: usize,
    /// Padding rows (top and bottom) and columns (left and right).
    pub pad: (usize, usize),
    pub mode: PadMode,
}

impl Conv2dOpts {
    /// Stride-1 "same" padding of `(k - 1) / 2` per axis.
    pub fn same(kernel: (usize, usize), mode: PadMode) -> Self {
        Self {
            stride: 1,
            pad: ((kernel.0 - 1) / 2, (kernel.1 - 1) / 2),
            mode,
        }
    }

    pub fn strided(kernel: (usize, usize), stride: usize, mode: PadMode) -> Self {
        Self {
            stride,
            ..Self::same(kernel, mode)
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    /// Source row for each `(ky, oy)`; `None` falls in zero padding.
    rows: Vec<Option<usize>>,
    /// Source column for each `(kx, ox)`.
    cols: Vec<Option<usize>>,
}

pub(crate) struct ConvSaved {
    input: Var,
    weight: Var,
    bias: Option<Var>,
    geom: ConvGeom,
}

fn source_index(pos: isize, len: usize, mode: PadMode) -> Option<usize> {
    if pos >= 0 && (pos as usize) < len {
        return Some(pos as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Reflect => {
            let last = len as isize - 1;
            let r = if pos < 0 { -pos } else { 2 * last - pos };
            Some(r as usize)
        }
    }
}

impl ConvGeom {
    fn new(
        input: &[usize],
        weight: &[usize],
        opts: Conv2dOpts,
    ) -> Result<Self> {
        let [n, c, h, w] = *input else {
            return shape_err("conv2d", format!("input must be rank 4, got {input:?}"));
        };
        let [f, wc, kh, kw] = *weight else {
            return shape_err("conv2d", format!("weight must be rank 4, got {weight:?}"));
        };
        if wc != c {
            return shape_err("conv2d", format!("input has {c} channels, weight expects {wc}"));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return invalid("conv2d", format!("kernel {kh}x{kw} must have odd sides"));
        }
        if opts.stride < 1 {
            return invalid("conv2d", "stride must be at least 1");
        }
        let (ph, pw) = opts.pad;
        if opts.mode == PadMode::Reflect && (ph >= h || pw >= w) {
            return invalid(
                "conv2d",
                format!("reflect padding ({ph},{pw}) needs input larger than {h}x{w}"),
            );
        }
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return shape_err("conv2d", format!("kernel {kh}x{kw} exceeds padded {h}x{w}"));
        }
        let ho = (h + 2 * ph - kh) / opts.stride + 1;
        let wo = (w + 2 * pw - kw) / opts.stride + 1;
        let mut rows = Vec::with_capacity(kh * ho);
        for ky in 0..kh {
            for oy in 0..ho {
                let pos = (oy * opts.stride + ky) as isize - ph as isize;
                rows.push(source_index(pos, h, opts.mode));
            }
        }
        let mut cols = Vec::with_capacity(kw * wo);
        for kx in 0..kw {
            for ox in 0..wo {
                let pos = (ox * opts.stride + kx) as isize - pw as isize;
                cols.push(source_index(pos, w, opts.mode));
            }
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            ho,
            wo,
            rows,
            cols,
        })
    }

    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Visits every `(k, p, source offset)` triple of one sample's im2col matrix.
    #[inline]
    fn for_each_tap(&self, mut visit: impl FnMut(usize, usize, Option<usize>)) {
        for ci in 0..self.c {
            let base = ci * self.h * self.w;
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let k = (ci * self.kh + ky) * self.kw + kx;
                    for oy in 0..self.ho {
                        let row = self.rows[ky * self.ho + oy];
                        for ox in 0..self.wo {
                            let src = match (row, self.cols[kx * self.wo + ox]) {
                                (Some(r), Some(s)) => Some(base + r * self.w + s),
                                _ => None,
                            };
                            visit(k, oy * self.wo + ox, src);
                        }
                    }
                }
            }
        }
    }

    /// `[K, P]` patch matrix.
    fn im2col<T: Float>(&self, x: &[T], col: &mut [T]) {
        let p_len = self.p();
        self.for_each_tap(|k, p, src| col[k * p_len + p] = src.map_or(T::zero(), |s| x[s]));
    }

    /// `[P, K]` patch matrix.
    fn im2col_t<T: Float>(&self, x: &[T], colt: &mut [T]) {
        let k_len = self.k();
        self.for_each_tap(|k, p, src| colt[p * k_len + k] = src.map_or(T::zero(), |s| x[s]));
    }

    fn col2im_add<T: Float>(&self, col: &[T], dx: &mut [T]) {
        let p_len = self.p();
        self.for_each_tap(|k, p, src| {
            if let Some(s) = src {
                dx[s] += col[k * p_len + p];
            }
        });
    }
}

impl<T: Float> Tape<T> {
    /// `[N,C,H,W] * [F,C,kH,kW] (+ [F]) -> [N,F,H',W']`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        opts: Conv2dOpts,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(weight), opts)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.f] {
                return shape_err(
                    "conv2d",
                    format!("bias shape {:?}, expected [{}]", self.shape(b), geom.f),
                );
            }
        }
        let (k_len, p_len) = (geom.k(), geom.p());
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let b = bias.map(|b| self.value(b).data());
        let in_len = geom.c * geom.h * geom.w;
        let out_len = geom.f * p_len;
        let mut out = vec![T::zero(); geom.n * out_len];
        let mut col = vec![T::zero(); k_len * p_len];
        for n in 0..geom.n {
            geom.im2col(&x[n * in_len..(n + 1) * in_len], &mut col);
            let out_n = &mut out[n * out_len..(n + 1) * out_len];
            for f in 0..geom.f {
                let row = &mut out_n[f * p_len..(f + 1) * p_len];
                for k in 0..k_len {
                    axpy(row, wt[f * k_len + k], &col[k * p_len..(k + 1) * p_len]);
                }
                if let Some(b) = b {
                    row.iter_mut().for_each(|v| *v += b[f]);
                }
            }
        }
        let value = Tensor::new(vec![geom.n, geom.f, geom.ho, geom.wo], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        let saved = ConvSaved {
            input,
            weight,
            bias,
            geom,
        };
        self.record("conv2d", value, Op::Conv2d(Box::new(saved)), &inputs)
    }
}

pub(crate) fn backward<T: Float>(
    saved: &ConvSaved,
    g: &[T],
    acc: &mut GradSink<'_, T>,
    corrupt: bool,
) {
    let geom = &saved.geom;
    let (k_len, p_len) = (geom.k(), geom.p());
    let in_len = geom.c * geom.h * geom.w;
    let out_len = geom.f * p_len;

    if let Some(b) = saved.bias {
        acc.add(b, |db| {
            for n in 0..geom.n {
                for (f, d) in db.iter_mut().enumerate() {
                    let start = n * out_len + f * p_len;
                    *d += g[start..start + p_len].iter().copied().sum::<T>();
                }
            }
        });
    }

    if acc.wants(saved.weight) {
        let x = acc.value(saved.input).data();
        let mut dw = vec![T::zero(); geom.f * k_len];
        let mut colt = vec![T::zero(); p_len * k_len];
        for n in 0..geom.n {
            geom.im2col_t(&x[n * in_len..(n + 1) * in_len], &mut colt);
            for f in 0..geom.f {
                let drow = &mut dw[f * k_len..(f + 1) * k_len];
                let gf = &g[n * out_len + f * p_len..n * out_len + (f + 1) * p_len];
                for (p, gv) in gf.iter().enumerate() {
                    if *gv != T::zero() {
                        axpy(drow, *gv, &colt[p * k_len..(p + 1) * k_len]);
                    }
                }
            }
        }
        let factor = if corrupt { T::of(1.05) } else { T::one() };
        acc.add(saved.weight, |d| axpy(d, factor, &dw));
    }

    if acc.wants(saved.input) {
        let wt = acc.value(saved.weight).data().to_vec();
        let mut dcol = vec![T::zero(); k_len * p_len];
        acc.add(saved.input, |dx| {
            for n in 0..geom.n {
                dcol.iter_mut().for_each(|v| *v = T::zero());
                let gn = &g[n * out_len..(n + 1) * out_len];
                for k in 0..k_len {
                    let drow = &mut dcol[k * p_len..(k + 1) * p_len];
                    for f in 0..geom.f {
                        axpy(drow, wt[f * k_len + k], &gn[f * p_len..(f + 1) * p_len]);
                    }
                }
                geom.col2im_add(&dcol, &mut dx[n * in_len..(n + 1) * in_len]);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::ParamStore;

    #[test]
    fn identity_kernel_copies_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64));
        let w = tape.leaf(Tensor::full(&[1, 1, 1, 1], 1.0));
        let b = tape.leaf(Tensor::zeros(&[1]));
        let y = tape
            .conv2d(x, w, Some(b), Conv2dOpts::same((1, 1), PadMode::Zero))
            .unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn ones_kernel_on_constant_field() {
        let c = 0.7;
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 5, 5], c));
        let w = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = tape
            .conv2d(x, w, None, Conv2dOpts::same((3, 3), PadMode::Zero))
            .unwrap();
        let out = tape.value(y);
        for yy in 1..4 {
            for xx in 1..4 {
                assert!((out.data()[yy * 5 + xx] - 9.0 * c).abs() < 1e-12);
            }
        }
        // corners see 4 taps under zero padding
        assert!((out.data()[0] - 4.0 * c).abs() < 1e-12);
    }

    #[test]
    fn reflect_padding_of_constant_field_is_flat() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 4, 4], 2.0));
        let w = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = tape
            .conv2d(x, w, None, Conv2dOpts::same((3, 3), PadMode::Reflect))
            .unwrap();
        assert!(tape.value(y).data().iter().all(|v| (*v - 18.0).abs() < 1e-12));
    }

    #[test]
    fn output_size_with_stride() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3, 9, 9]));
        let w = tape.leaf(Tensor::zeros(&[4, 3, 3, 3]));
        let y = tape
            .conv2d(x, w, None, Conv2dOpts::strided((3, 3), 2, PadMode::Zero))
            .unwrap();
        assert_eq!(tape.shape(y), &[2, 4, 5, 5]);
    }

    #[test]
    fn errors() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]));
        let w_even = tape.leaf(Tensor::zeros(&[1, 2, 2, 2]));
        let w_bad_c = tape.leaf(Tensor::zeros(&[1, 3, 3, 3]));
        let w = tape.leaf(Tensor::zeros(&[1, 2, 3, 3]));
        let opts = Conv2dOpts::same((3, 3), PadMode::Zero);
        assert!(tape.conv2d(x, w_even, None, opts).is_err());
        assert!(tape.conv2d(x, w_bad_c, None, opts).is_err());
        let zero_stride = Conv2dOpts { stride: 0, ..opts };
        assert!(tape.conv2d(x, w, None, zero_stride).is_err());
    }

    #[test]
    fn bias_only_gradient_counts_positions() {
        let mut store = ParamStore::<f64>::new();
        let wid = store.add_param("w", Tensor::zeros(&[2, 1, 3, 3])).unwrap();
        let bid = store.add_param("b", Tensor::zeros(&[2])).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[2, 1, 4, 4], 1.0));
        let w = tape.param(&store, wid);
        let b = tape.param(&store, bid);
        let y = tape
            .conv2d(x, w, Some(b), Conv2dOpts::same((3, 3), PadMode::Zero))
            .unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.param(bid).tensor.grad().unwrap(), &[32.0, 32.0]);
    }
}
