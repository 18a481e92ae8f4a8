//! Random flips, rotations, affine warps and brightness scaling.
//!
//! Geometric transforms are folded into one inverse map and resampled once,
//! bilinearly, replicating edge pixels outside the frame.

use rand::Rng;

use crate::tensor::Tensor;

use super::{DataError, DataResult};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub rotation_prob: f64,
    pub max_rotation_deg: f64,
    pub affine_prob: f64,
    /// Largest shift per axis as a fraction of the side.
    pub max_translate: f64,
    pub scale_range: (f64, f64),
    pub brightness_prob: f64,
    pub brightness_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            rotation_prob: 0.5,
            max_rotation_deg: 15.0,
            affine_prob: 0.5,
            max_translate: 0.1,
            scale_range: (0.9, 1.1),
            brightness_prob: 0.5,
            brightness_range: (0.8, 1.2),
        }
    }
}

impl AugmentConfig {
    /// Every transform disabled.
    pub fn none() -> Self {
        Self {
            flip_prob: 0.0,
            rotation_prob: 0.0,
            affine_prob: 0.0,
            brightness_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.flip_prob == 0.0 && self.rotation_prob == 0.0 && self.affine_prob == 0.0 && self.brightness_prob == 0.0
    }

    pub fn validate(&self) -> DataResult<()> {
        let probs = [self.flip_prob, self.rotation_prob, self.affine_prob, self.brightness_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(DataError::Invalid("augmentation probabilities must lie in [0, 1]".into()));
        }
        let (s0, s1) = self.scale_range;
        let (b0, b1) = self.brightness_range;
        if !(self.max_rotation_deg >= 0.0 && self.max_translate >= 0.0 && s0 > 0.0 && s0 <= s1 && b0 >= 0.0 && b0 <= b1) {
            return Err(DataError::Invalid("augmentation ranges are malformed".into()));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

pub fn hflip(t: &Tensor<f32>) -> Tensor<f32> {
    let w = *t.shape().last().expect("hflip expects [C,H,W]");
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(w.max(1)) {
        row.reverse();
    }
    out
}

/// Resamples `out(p) = in(A p + b)` around the image center.
fn warp(t: &Tensor<f32>, a: [[f64; 2]; 2], b: [f64; 2]) -> Tensor<f32> {
    let &[c, h, w] = t.shape() else {
        panic!("warp expects [C,H,W]")
    };
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let src = t.data();
    let mut out = Vec::with_capacity(t.numel());
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let sx = (a[0][0] * dx + a[0][1] * dy + b[0] + cx).clamp(0.0, (w - 1) as f64);
                let sy = (a[1][0] * dx + a[1][1] * dy + b[1] + cy).clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(vec![c, h, w], out).expect("shape preserved")
}

/// Applies the enabled transforms in the order flip, rotation + affine,
/// brightness. Random draws happen in a fixed order whether or not a
/// transform fires, so the stream position never depends on the image.
pub fn augment<R: Rng + ?Sized>(img: &Tensor<f32>, cfg: &AugmentConfig, rng: &mut R) -> DataResult<Tensor<f32>> {
    let &[_, h, w] = img.shape() else {
        return Err(DataError::Invalid(format!("expected [C,H,W], got {:?}", img.shape())));
    };
    let flip = rng.random::<f64>() < cfg.flip_prob;
    let rotate = rng.random::<f64>() < cfg.rotation_prob;
    let angle = uniform(rng, -cfg.max_rotation_deg, cfg.max_rotation_deg).to_radians();
    let affine = rng.random::<f64>() < cfg.affine_prob;
    let tx = uniform(rng, -cfg.max_translate, cfg.max_translate) * w as f64;
    let ty = uniform(rng, -cfg.max_translate, cfg.max_translate) * h as f64;
    let scale = uniform(rng, cfg.scale_range.0, cfg.scale_range.1);
    let bright = rng.random::<f64>() < cfg.brightness_prob;
    let gain = uniform(rng, cfg.brightness_range.0, cfg.brightness_range.1) as f32;

    let mut out = if flip { hflip(img) } else { img.clone() };
    if rotate || affine {
        let theta = if rotate { angle } else { 0.0 };
        let (s, t) = if affine { (scale, [tx, ty]) } else { (1.0, [0.0, 0.0]) };
        // Forward map p' = s R p + t, inverted for sampling.
        let (sin, cos) = theta.sin_cos();
        let a = [[cos / s, sin / s], [-sin / s, cos / s]];
        let b = [
            -(a[0][0] * t[0] + a[0][1] * t[1]),
            -(a[1][0] * t[0] + a[1][1] * t[1]),
        ];
        out = warp(&out, a, b);
    }
    if bright {
        for v in out.data_mut() {
            *v = (*v * gain).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}
