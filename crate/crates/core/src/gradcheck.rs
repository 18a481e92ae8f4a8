//! Finite-difference verification of the full model's backward pass at f64.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{BackboneConfig, TapPoint};
use crate::model::{Model, ModelConfig, ModelResult, Variant};
use crate::ops::Mode;
use crate::tape::Tape;
use crate::tensor::Tensor;

const KINK_RETRIES: usize = 3;
const KINK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub variant: Variant,
    pub tap: TapPoint,
    pub levels: Option<usize>,
    pub backbone: BackboneConfig,
    pub num_classes: usize,
    pub batch: usize,
    /// Entries checked per parameter tensor (all of them if smaller).
    pub samples_per_tensor: usize,
    pub step: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl GradcheckConfig {
    pub fn tiny(variant: Variant, tap: TapPoint, levels: Option<usize>) -> Self {
        Self {
            variant,
            tap,
            levels,
            backbone: BackboneConfig::tiny(1),
            num_classes: 3,
            batch: 2,
            samples_per_tensor: 3,
            step: 1e-5,
            threshold: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    /// Parameter name without its last segment, e.g. `backbone.stem.conv`.
    pub group: String,
    pub max_rel_err: f64,
    pub worst_entry: String,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupError>,
    pub threshold: f64,
    /// Entries replaced because the loss was not smooth around them.
    pub skipped: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_err < self.threshold)
    }

    pub fn worst(&self) -> Option<&GroupError> {
        self.groups.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn group_of(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(g, _)| g)
}

fn loss_of(model: &mut Model<f64>, x: &Tensor<f64>, labels: &[usize], corrupt: bool) -> ModelResult<(f64, Tape<f64>, crate::model::LossParts)> {
    let mut tape = Tape::new();
    tape.set_corrupt_backward(corrupt);
    let out = model.forward(&mut tape, x, Mode::Train)?;
    let parts = model.loss(&mut tape, &out, labels)?;
    Ok((tape.value(parts.total).item(), tape, parts))
}

/// Compares the tape's gradients of `CE + Loss_WT` with central differences
/// on a randomly initialized model. The zero-initialized final lifting convs
/// are re-drawn so their gradients are not trivially zero.
pub fn gradcheck(cfg: &GradcheckConfig, corrupt_backward: bool) -> ModelResult<GradcheckReport> {
    let mut mc = ModelConfig::new(cfg.backbone.clone(), cfg.variant, cfg.tap, cfg.num_classes);
    mc.levels = cfg.levels;
    let mut model = Model::<f64>::new(mc, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    for p in model.store.params_mut() {
        if p.name.starts_with("wavelet.") && p.name.contains(".conv2.") {
            let fan_in: usize = p.tensor.shape().iter().skip(1).product::<usize>().max(1);
            let bound = (3.0 / fan_in as f64).sqrt();
            for v in p.tensor.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
    }
    let side = cfg.backbone.input_side;
    let x = Tensor::from_fn(&[cfg.batch, cfg.backbone.input_channels, side, side], |_| rng.random::<f64>());
    let labels: Vec<usize> = (0..cfg.batch).map(|i| i % cfg.num_classes).collect();

    let (_, tape, parts) = loss_of(&mut model, &x, &labels, corrupt_backward)?;
    model.store.zero_grad();
    tape.backward(parts.total, &mut model.store)?;
    drop(tape);
    let analytic: Vec<Vec<f64>> = model
        .store
        .params()
        .iter()
        .map(|p| p.tensor.grad().expect("parameter grad").to_vec())
        .collect();
    model.store.zero_grad();

    let mut groups: BTreeMap<String, GroupError> = BTreeMap::new();
    let central = |model: &mut Model<f64>, pi: usize, j: usize, h: f64| -> ModelResult<f64> {
        let orig = model.store.params()[pi].tensor.data()[j];
        model.store.params_mut()[pi].tensor.data_mut()[j] = orig + h;
        let plus = loss_of(model, &x, &labels, false)?.0;
        model.store.params_mut()[pi].tensor.data_mut()[j] = orig - h;
        let minus = loss_of(model, &x, &labels, false)?.0;
        model.store.params_mut()[pi].tensor.data_mut()[j] = orig;
        Ok((plus - minus) / (2.0 * h))
    };
    let mut skipped = 0;
    for (pi, grad) in analytic.iter().enumerate() {
        let name = model.store.params()[pi].name.clone();
        let n = grad.len();
        let want = cfg.samples_per_tensor.min(n);
        // Extra candidates replace entries whose neighborhood straddles a
        // ReLU kink, detected as disagreement between two step sizes.
        let candidates = sample(&mut rng, n, (want + KINK_RETRIES).min(n)).into_vec();
        let mut used = 0;
        for j in candidates {
            if used == want {
                break;
            }
            let numeric = central(&mut model, pi, j, cfg.step)?;
            let half = central(&mut model, pi, j, cfg.step / 2.0)?;
            if relative_error(numeric, half) > KINK_TOLERANCE {
                skipped += 1;
                continue;
            }
            used += 1;
            let err = relative_error(grad[j], numeric);
            let g = groups.entry(group_of(&name).to_owned()).or_insert_with(|| GroupError {
                group: group_of(&name).to_owned(),
                max_rel_err: 0.0,
                worst_entry: String::new(),
                checked: 0,
            });
            g.checked += 1;
            if err >= g.max_rel_err {
                g.max_rel_err = err;
                g.worst_entry = format!("{name}[{j}] analytic {:e} numeric {:e}", grad[j], numeric);
            }
        }
    }
    Ok(GradcheckReport {
        groups: groups.into_values().collect(),
        threshold: cfg.threshold,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert_eq!(relative_error(0.0, 1e-9), 1e-3);
    }

    #[test]
    fn groups_drop_last_segment() {
        assert_eq!(group_of("backbone.stem.conv.weight"), "backbone.stem.conv");
        assert_eq!(group_of("w"), "w");
    }
}
