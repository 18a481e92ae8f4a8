//! Image samples and the deterministic preprocessing steps.

use std::path::{Path, PathBuf};

use crate::tensor::Tensor;

use super::netpbm::{self, Raster};
use super::{DataError, DataResult};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    /// `[C, H, W]` with values in `[0, 1]`.
    pub pixels: Tensor<f32>,
    pub label: usize,
    pub path: PathBuf,
}

/// Scales 8-bit samples to `[0, 1]`, de-interleaving to `[C, H, W]`.
pub fn raster_to_tensor(r: &Raster) -> Tensor<f32> {
    let (c, h, w) = (r.channels, r.height, r.width);
    Tensor::from_fn(&[c, h, w], |i| {
        let ch = i / (h * w);
        let px = i % (h * w);
        r.data[px * c + ch] as f32 / 255.0
    })
}

/// Quantizes a `[C, H, W]` tensor in `[0, 1]` back to bytes.
pub fn tensor_to_raster(t: &Tensor<f32>) -> DataResult<Raster> {
    let &[c, h, w] = t.shape() else {
        return Err(DataError::Invalid(format!("expected [C,H,W], got {:?}", t.shape())));
    };
    let mut data = vec![0u8; c * h * w];
    for ch in 0..c {
        for px in 0..h * w {
            let v = t.data()[ch * h * w + px].clamp(0.0, 1.0);
            data[px * c + ch] = (v * 255.0).round() as u8;
        }
    }
    Ok(Raster {
        width: w,
        height: h,
        channels: c,
        data,
    })
}

pub fn write_image(path: &Path, t: &Tensor<f32>) -> DataResult<()> {
    let raster = tensor_to_raster(t)?;
    let bytes = netpbm::encode(&raster).map_err(|msg| DataError::Image {
        path: path.to_path_buf(),
        msg,
    })?;
    std::fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a P5/P6 file and optionally resizes it to `side x side`.
pub fn load_image(path: &Path, side: Option<usize>) -> DataResult<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raster = netpbm::decode(&bytes).map_err(|msg| DataError::Image {
        path: path.to_path_buf(),
        msg,
    })?;
    let t = raster_to_tensor(&raster);
    match side {
        Some(s) if s != raster.width || s != raster.height => resize_bilinear(&t, s, s),
        _ => Ok(t),
    }
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(t: &Tensor<f32>, out_h: usize, out_w: usize) -> DataResult<Tensor<f32>> {
    let &[c, h, w] = t.shape() else {
        return Err(DataError::Invalid(format!("expected [C,H,W], got {:?}", t.shape())));
    };
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(DataError::Invalid("cannot resize an empty image".into()));
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(h, out_h);
    let xs = axis(w, out_w);
    let src = t.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out).map_err(|e| DataError::Invalid(e.to_string()))
}

/// 256-bin CDF equalization per channel:
/// `v' = (cdf(v) - cdf_min) / (1 - cdf_min)`. A channel with a single
/// occupied bin is returned unchanged.
pub fn hist_equalize(t: &Tensor<f32>) -> DataResult<Tensor<f32>> {
    let &[c, h, w] = t.shape() else {
        return Err(DataError::Invalid(format!("expected [C,H,W], got {:?}", t.shape())));
    };
    let n = h * w;
    let mut out = t.clone();
    for plane in out.data_mut().chunks_mut(n.max(1)).take(c) {
        let bins: Vec<usize> = plane.iter().map(|v| bin_of(*v)).collect();
        let mut hist = [0usize; 256];
        for &b in &bins {
            hist[b] += 1;
        }
        let mut cdf = [0f64; 256];
        let mut run = 0usize;
        for (i, count) in hist.iter().enumerate() {
            run += count;
            cdf[i] = run as f64 / n as f64;
        }
        let first = hist.iter().position(|&k| k > 0).unwrap_or(0);
        let cdf_min = cdf[first];
        if cdf_min >= 1.0 {
            continue;
        }
        for (v, b) in plane.iter_mut().zip(&bins) {
            *v = ((cdf[*b] - cdf_min) / (1.0 - cdf_min)) as f32;
        }
    }
    Ok(out)
}

pub fn bin_of(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scales_bytes() {
        let r = Raster {
            width: 2,
            height: 2,
            channels: 1,
            data: vec![0, 85, 170, 255],
        };
        let t = raster_to_tensor(&r);
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in t.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-7);
        }
        assert_eq!(tensor_to_raster(&t).unwrap(), r);
    }

    #[test]
    fn same_size_resize_is_identity() {
        let t = Tensor::from_fn(&[1, 5, 7], |i| (i as f32 * 0.37).fract());
        assert_eq!(resize_bilinear(&t, 5, 7).unwrap(), t);
    }

    #[test]
    fn resize_keeps_constants() {
        let t = Tensor::full(&[3, 9, 4], 0.25f32);
        let r = resize_bilinear(&t, 16, 16).unwrap();
        assert!(r.data().iter().all(|v| (*v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn equalize_constant_and_two_level() {
        let k = Tensor::full(&[1, 4, 4], 0.3f32);
        assert_eq!(hist_equalize(&k).unwrap(), k);
        let two = Tensor::from_fn(&[1, 2, 4], |i| if i % 2 == 0 { 0.2 } else { 0.7 });
        let e = hist_equalize(&two).unwrap();
        assert!(e.data().iter().all(|v| *v == 0.0 || *v == 1.0));
        assert_eq!(e.data()[0], 0.0);
        assert_eq!(e.data()[1], 1.0);
    }
}
