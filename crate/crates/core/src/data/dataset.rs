//! In-memory split of preprocessed samples and deterministic batching.
//!
//! Pipeline order: load -> resize -> equalize (cached) -> augment (train
//! only, per epoch) -> stack.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

use super::augment::{augment, AugmentConfig};
use super::image::{hist_equalize, load_image, ImageSample};
use super::manifest::{Manifest, Split};
use super::{stream_seed, DataError, DataResult};

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineConfig {
    pub side: usize,
    pub channels: usize,
    pub equalize: bool,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub split: Split,
    samples: Vec<ImageSample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[N, C, side, side]`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Positions of the samples within the dataset.
    pub indices: Vec<usize>,
}

impl Dataset {
    pub fn load(manifest: &Manifest, split: Split, cfg: &PipelineConfig) -> DataResult<Self> {
        let mut samples = Vec::new();
        for row in manifest.split(split) {
            let path = manifest.resolve(row);
            let mut pixels = load_image(&path, Some(cfg.side))?;
            if pixels.shape()[0] != cfg.channels {
                return Err(DataError::Image {
                    path,
                    msg: format!("has {} channels, expected {}", pixels.shape()[0], cfg.channels),
                });
            }
            if cfg.equalize {
                pixels = hist_equalize(&pixels)?;
            }
            samples.push(ImageSample {
                pixels,
                label: row.label,
                path,
            });
        }
        Self::from_samples(split, samples)
    }

    pub fn from_samples(split: Split, samples: Vec<ImageSample>) -> DataResult<Self> {
        if samples.is_empty() {
            return Err(DataError::Invalid(format!("split `{split}` has no samples")));
        }
        let shape = samples[0].pixels.shape().to_vec();
        if samples.iter().any(|s| s.pixels.shape() != shape.as_slice()) {
            return Err(DataError::Invalid("samples differ in shape".into()));
        }
        Ok(Self { split, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Sample order for one epoch: a ChaCha8 shuffle keyed by
    /// `(seed, epoch)`, or manifest order when `shuffle` is off.
    pub fn epoch_order(&self, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, epoch as u64, SHUFFLE_STREAM]));
            order.shuffle(&mut rng);
        }
        order
    }

    /// Batches over `order`, keeping the final partial batch. Augmentation
    /// draws from a stream keyed by `(seed, epoch, sample index)`.
    pub fn batches<'a>(
        &'a self,
        order: &'a [usize],
        batch_size: usize,
        augmentation: Option<(&'a AugmentConfig, u64, usize)>,
    ) -> impl Iterator<Item = DataResult<Batch>> + 'a {
        order
            .chunks(batch_size.max(1))
            .map(move |chunk| self.batch(chunk, augmentation))
    }

    pub fn batch(&self, indices: &[usize], augmentation: Option<(&AugmentConfig, u64, usize)>) -> DataResult<Batch> {
        let mut images = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            images.push(match augmentation {
                Some((cfg, seed, epoch)) if !cfg.is_identity() => {
                    let key = stream_seed(&[seed, epoch as u64, i as u64, AUGMENT_STREAM]);
                    augment(&s.pixels, cfg, &mut ChaCha8Rng::seed_from_u64(key))?
                }
                _ => s.pixels.clone(),
            });
        }
        let images = Tensor::stack(&images).map_err(|e| DataError::Invalid(e.to_string()))?;
        Ok(Batch {
            images,
            labels: indices.iter().map(|&i| self.samples[i].label).collect(),
            indices: indices.to_vec(),
        })
    }
}
