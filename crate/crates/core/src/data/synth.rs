//! Synthetic oriented-grating textures.
//!
//! Class `k` is a sinusoid of frequency `f_k`, log-spaced from 0.06 to 0.38
//! cycles per pixel, running along x for even `k` and along y for odd `k`.
//! Both orientations survive horizontal flips. Each image draws a random
//! phase and carries additive Gaussian noise with sigma 0.1.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

use super::image::write_image;
use super::manifest::{Manifest, ManifestRow, Split};
use super::{stream_seed, DataError, DataResult};

pub const NOISE_SIGMA: f64 = 0.1;
const AMPLITUDE: f64 = 0.35;
const TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub side: usize,
    pub seed: u64,
}

pub fn class_frequency(k: usize, classes: usize) -> f64 {
    let (lo, hi): (f64, f64) = (0.06, 0.38);
    if classes < 2 {
        return lo;
    }
    lo * (hi / lo).powf(k as f64 / (classes - 1) as f64)
}

/// One `[1, side, side]` texture of class `k`.
pub fn texture<R: Rng + ?Sized>(k: usize, classes: usize, side: usize, rng: &mut R) -> Tensor<f32> {
    let f = class_frequency(k, classes);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let along_y = k % 2 == 1;
    let mut data = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let t = if along_y { y } else { x } as f64;
            let v = 0.5 + AMPLITUDE * (std::f64::consts::TAU * f * t + phase).cos() + noise.sample(rng);
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Tensor::new(vec![1, side, side], data).expect("sized")
}

/// Writes `<root>/class<k>/img<i>.pgm` plus `<root>/manifest.csv`; the first
/// 80% of each class is train, the rest test.
pub fn synth_textures(root: &Path, cfg: &SynthConfig) -> DataResult<Manifest> {
    if cfg.classes < 2 || cfg.per_class < 2 || cfg.side == 0 {
        return Err(DataError::Invalid(
            "synthesis needs at least two classes, two images per class and a positive side".into(),
        ));
    }
    let n_train = ((cfg.per_class as f64 * TRAIN_FRACTION).round() as usize).clamp(1, cfg.per_class - 1);
    let mut rows = Vec::with_capacity(cfg.classes * cfg.per_class);
    for k in 0..cfg.classes {
        let dir = root.join(format!("class{k}"));
        std::fs::create_dir_all(&dir).map_err(|source| DataError::Io {
            path: dir.clone(),
            source,
        })?;
        for i in 0..cfg.per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, k as u64, i as u64]));
            let img = texture(k, cfg.classes, cfg.side, &mut rng);
            let rel = format!("class{k}/img{i}.pgm");
            write_image(&root.join(&rel), &img)?;
            rows.push(ManifestRow {
                path: rel,
                label: k,
                split: if i < n_train { Split::Train } else { Split::Test },
            });
        }
    }
    let manifest = Manifest {
        root: root.to_path_buf(),
        rows,
    };
    manifest.save(&root.join("manifest.csv"))?;
    Ok(manifest)
}
