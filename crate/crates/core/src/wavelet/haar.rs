//! Lazy (even/odd) splitting and the averaging 2D Haar split.
//!
//! For each 2x2 block `[a b; c d]` the split produces
//! `LL = (a+b+c+d)/4`, `LH = (a+b-c-d)/4`, `HL = (a-b+c-d)/4`,
//! `HH = (a-b-c+d)/4`. The `/4` normalization keeps `mean(LL) == mean(x)`.

use crate::tape::{GradSink, Op, Tape, Var};
use crate::tensor::{invalid, shape_err, Float, Result, Tensor};

/// The four half-resolution components of one Haar split.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandQuad<V> {
    pub ll: V,
    pub lh: V,
    pub hl: V,
    pub hh: V,
}

pub const LL: usize = 0;
pub const LH: usize = 1;
pub const HL: usize = 2;
pub const HH: usize = 3;

/// Signs applied to `(a, b, c, d)` for each band.
const SIGNS: [[f64; 4]; 4] = [
    [1.0, 1.0, 1.0, 1.0],
    [1.0, 1.0, -1.0, -1.0],
    [1.0, -1.0, 1.0, -1.0],
    [1.0, -1.0, -1.0, 1.0],
];

fn split_extent(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return invalid("lazy_split", format!("axis {axis} out of range for {shape:?}"));
    }
    let len = shape[axis];
    if len % 2 != 0 {
        return invalid("lazy_split", format!("length {len} along axis {axis} is odd"));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, len, inner))
}

fn take_parity<T: Float>(x: &Tensor<T>, axis: usize, parity: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = split_extent(x.shape(), axis)?;
    let half = len / 2;
    let mut data = Vec::with_capacity(outer * half * inner);
    for o in 0..outer {
        for i in 0..half {
            let start = (o * len + 2 * i + parity) * inner;
            data.extend_from_slice(&x.data()[start..start + inner]);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = half;
    Tensor::new(shape, data)
}

/// `(x[2n], x[2n+1])` along `axis`.
pub fn lazy_split<T: Float>(x: &Tensor<T>, axis: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((take_parity(x, axis, 0)?, take_parity(x, axis, 1)?))
}

/// Inverse of [`lazy_split`].
pub fn interleave<T: Float>(even: &Tensor<T>, odd: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if even.shape() != odd.shape() {
        return shape_err("interleave", format!("{:?} vs {:?}", even.shape(), odd.shape()));
    }
    if axis >= even.shape().len() {
        return invalid("interleave", format!("axis {axis} out of range"));
    }
    let half = even.shape()[axis];
    let outer: usize = even.shape()[..axis].iter().product();
    let inner: usize = even.shape()[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(even.numel() * 2);
    for o in 0..outer {
        for i in 0..half {
            let start = (o * half + i) * inner;
            data.extend_from_slice(&even.data()[start..start + inner]);
            data.extend_from_slice(&odd.data()[start..start + inner]);
        }
    }
    let mut shape = even.shape().to_vec();
    shape[axis] = half * 2;
    Tensor::new(shape, data)
}

fn haar_band<T: Float>(x: &Tensor<T>, band: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return invalid("haar_split", format!("spatial dims {h}x{w} must be even"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let s = SIGNS[band].map(T::of);
    let quarter = T::of(0.25);
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..ho {
            let top = base + 2 * i * w;
            let bot = top + w;
            for j in 0..wo {
                let a = src[top + 2 * j];
                let b = src[top + 2 * j + 1];
                let cc = src[bot + 2 * j];
                let d = src[bot + 2 * j + 1];
                out.push((s[0] * a + s[1] * b + s[2] * cc + s[3] * d) * quarter);
            }
        }
    }
    Tensor::new(vec![n, c, ho, wo], out)
}

pub fn haar_split<T: Float>(x: &Tensor<T>) -> Result<SubbandQuad<Tensor<T>>> {
    Ok(SubbandQuad {
        ll: haar_band(x, LL)?,
        lh: haar_band(x, LH)?,
        hl: haar_band(x, HL)?,
        hh: haar_band(x, HH)?,
    })
}

/// Exact inverse of [`haar_split`].
pub fn haar_inverse<T: Float>(q: &SubbandQuad<Tensor<T>>) -> Result<Tensor<T>> {
    let shape = q.ll.shape();
    for t in [&q.lh, &q.hl, &q.hh] {
        if t.shape() != shape {
            return shape_err("haar_inverse", format!("{:?} vs {:?}", t.shape(), shape));
        }
    }
    let (n, c, ho, wo) = q.ll.dims4()?;
    let (h, w) = (ho * 2, wo * 2);
    let mut out = vec![T::zero(); n * c * h * w];
    let (ll, lh, hl, hh) = (q.ll.data(), q.lh.data(), q.hl.data(), q.hh.data());
    for plane in 0..n * c {
        for i in 0..ho {
            for j in 0..wo {
                let k = (plane * ho + i) * wo + j;
                let top = plane * h * w + 2 * i * w + 2 * j;
                out[top] = ll[k] + lh[k] + hl[k] + hh[k];
                out[top + 1] = ll[k] + lh[k] - hl[k] - hh[k];
                out[top + w] = ll[k] - lh[k] + hl[k] - hh[k];
                out[top + w + 1] = ll[k] - lh[k] - hl[k] + hh[k];
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}

/// `(LH + HL + HH) / 3`, the lifting input built from the detail bands.
pub fn high_avg<T: Float>(q: &SubbandQuad<Tensor<T>>) -> Result<Tensor<T>> {
    if q.lh.shape() != q.hl.shape() || q.lh.shape() != q.hh.shape() {
        return shape_err("high_avg", "detail bands differ in shape");
    }
    let third = T::one() / T::of(3.0);
    let data = q
        .lh
        .data()
        .iter()
        .zip(q.hl.data())
        .zip(q.hh.data())
        .map(|((a, b), c)| (*a + *b + *c) * third)
        .collect();
    Tensor::new(q.lh.shape().to_vec(), data)
}

impl<T: Float> Tape<T> {
    pub fn haar_band(&mut self, x: Var, band: usize) -> Result<Var> {
        let out = haar_band(self.value(x), band)?;
        self.record("haar_split", out, Op::HaarBand { input: x, band }, &[x])
    }

    pub fn haar_split(&mut self, x: Var) -> Result<SubbandQuad<Var>> {
        Ok(SubbandQuad {
            ll: self.haar_band(x, LL)?,
            lh: self.haar_band(x, LH)?,
            hl: self.haar_band(x, HL)?,
            hh: self.haar_band(x, HH)?,
        })
    }

    /// Differentiable counterpart of the free [`high_avg`]; same arithmetic order.
    pub fn high_avg(&mut self, q: &SubbandQuad<Var>) -> Result<Var> {
        let s = self.add(q.lh, q.hl)?;
        let s = self.add(s, q.hh)?;
        self.scale(s, T::one() / T::of(3.0))
    }

    pub fn lazy_split(&mut self, x: Var, axis: usize) -> Result<(Var, Var)> {
        let even = take_parity(self.value(x), axis, 0)?;
        let odd = take_parity(self.value(x), axis, 1)?;
        let e = self.record(
            "lazy_split",
            even,
            Op::LazySplit {
                input: x,
                axis,
                parity: 0,
            },
            &[x],
        )?;
        let o = self.record(
            "lazy_split",
            odd,
            Op::LazySplit {
                input: x,
                axis,
                parity: 1,
            },
            &[x],
        )?;
        Ok((e, o))
    }
}

pub(crate) fn band_backward<T: Float>(input: Var, band: usize, g: &[T], acc: &mut GradSink<'_, T>) {
    let (_, _, h, w) = acc.value(input).dims4().expect("rank 4");
    let (ho, wo) = (h / 2, w / 2);
    let s = SIGNS[band].map(T::of);
    let quarter = T::of(0.25);
    acc.add(input, |dx| {
        for (plane, gp) in g.chunks(ho * wo).enumerate() {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let v = gp[i * wo + j] * quarter;
                    let top = base + 2 * i * w + 2 * j;
                    dx[top] += s[0] * v;
                    dx[top + 1] += s[1] * v;
                    dx[top + w] += s[2] * v;
                    dx[top + w + 1] += s[3] * v;
                }
            }
        }
    });
}

pub(crate) fn lazy_split_backward<T: Float>(
    input: Var,
    axis: usize,
    parity: usize,
    g: &[T],
    acc: &mut GradSink<'_, T>,
) {
    let (outer, len, inner) = split_extent(acc.value(input).shape(), axis).expect("checked forward");
    let half = len / 2;
    acc.add(input, |dx| {
        for o in 0..outer {
            for i in 0..half {
                let dst = (o * len + 2 * i + parity) * inner;
                let src = (o * half + i) * inner;
                for k in 0..inner {
                    dx[dst + k] += g[src + k];
                }
            }
        }
    });
}
