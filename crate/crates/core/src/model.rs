//! Backbone plus optional wavelet branch plus one linear classifier.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::backbone::{Backbone, BackboneConfig, TapPoint};
use crate::nn::LinearLayer;
use crate::ops::{softmax_rows, Mode};
use crate::param::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::{Float, Tensor, TensorError};
use crate::wavelet::{loss_wt, WaveletBranch, WaveletBranchOutput};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type ModelResult<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Awtm,
    Dawn,
    BackboneOnly,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Awtm => "awtm",
            Variant::Dawn => "dawn",
            Variant::BackboneOnly => "backbone_only",
        })
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> ModelResult<Self> {
        match s {
            "awtm" => Ok(Variant::Awtm),
            "dawn" => Ok(Variant::Dawn),
            "backbone_only" | "backbone" => Ok(Variant::BackboneOnly),
            _ => Err(ModelError::Config(format!(
                "unknown variant `{s}` (expected awtm, dawn or backbone_only)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub variant: Variant,
    pub tap: TapPoint,
    /// `None` picks the deepest decomposition the tap allows.
    pub levels: Option<usize>,
    pub num_classes: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl ModelConfig {
    pub fn new(backbone: BackboneConfig, variant: Variant, tap: TapPoint, num_classes: usize) -> Self {
        Self {
            backbone,
            variant,
            tap,
            levels: None,
            num_classes,
            alpha: 0.1,
            beta: 0.1,
        }
    }

    pub fn has_branch(&self) -> bool {
        self.variant != Variant::BackboneOnly
    }

    /// Branch depth after resolving `auto`; 0 without a branch.
    pub fn resolved_levels(&self) -> ModelResult<usize> {
        if !self.has_branch() {
            return Ok(0);
        }
        let max = self.backbone.tap_max_levels(self.tap)?;
        match self.levels {
            None if max == 0 => Err(ModelError::Config(format!(
                "{} supports no wavelet levels",
                self.tap
            ))),
            None => Ok(max),
            Some(0) => Err(ModelError::Config("levels must be at least 1".into())),
            Some(l) if l > max => Err(ModelError::Config(format!(
                "{l} levels requested but {} allows at most {max}",
                self.tap
            ))),
            Some(l) => Ok(l),
        }
    }

    pub fn validate(&self) -> ModelResult<()> {
        self.backbone.validate()?;
        if self.num_classes < 2 {
            return Err(ModelError::Config("at least two classes are required".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(ModelError::Config("alpha and beta must be finite and non-negative".into()));
        }
        self.resolved_levels()?;
        Ok(())
    }

    /// Width of `F_WT`: `(L + 1) * C` for AWTM, `(3L + 1) * C` for the
    /// directional variant.
    pub fn wavelet_features(&self) -> ModelResult<usize> {
        let l = self.resolved_levels()?;
        let c = self.backbone.tap_info(self.tap).feature_channels;
        Ok(match self.variant {
            Variant::Awtm => (l + 1) * c,
            Variant::Dawn => (3 * l + 1) * c,
            Variant::BackboneOnly => 0,
        })
    }

    pub fn classifier_in_features(&self) -> ModelResult<usize> {
        Ok(self.backbone.out_features() + self.wavelet_features()?)
    }

    /// `key=value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let b = &self.backbone;
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let levels = self.levels.map_or_else(|| "auto".to_string(), |l| l.to_string());
        format!(
            "variant={}\ntap={}\nlevels={}\nnum_classes={}\nalpha={}\nbeta={}\n\
             input_channels={}\ninput_side={}\nstem_width={}\nstem_kernel={}\nstem_stride={}\n\
             stem_maxpool={}\nstage_widths={}\nblocks_per_stage={}\n",
            self.variant,
            self.tap,
            levels,
            self.num_classes,
            self.alpha,
            self.beta,
            b.input_channels,
            b.input_side,
            b.stem_width,
            b.stem_kernel,
            b.stem_stride,
            b.stem_maxpool,
            list(&b.stage_widths),
            list(&b.blocks_per_stage),
        )
    }

    pub fn from_kv(text: &str) -> ModelResult<Self> {
        let mut cfg = ModelConfig::new(BackboneConfig::tiny(1), Variant::Awtm, TapPoint::Pos3, 2);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("malformed line `{line}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one field by its `to_kv` key.
    pub fn set(&mut self, key: &str, value: &str) -> ModelResult<()> {
        fn num<N: FromStr>(key: &str, v: &str) -> ModelResult<N> {
            v.parse()
                .map_err(|_| ModelError::Config(format!("`{key}` has invalid value `{v}`")))
        }
        fn four(key: &str, v: &str) -> ModelResult<[usize; 4]> {
            let parts = v.split(',').map(|p| num(key, p.trim())).collect::<ModelResult<Vec<usize>>>()?;
            parts
                .try_into()
                .map_err(|_| ModelError::Config(format!("`{key}` needs four comma separated values")))
        }
        let b = &mut self.backbone;
        match key {
            "variant" => self.variant = value.parse()?,
            "tap" => self.tap = value.parse()?,
            "levels" => {
                self.levels = if value == "auto" { None } else { Some(num(key, value)?) };
            }
            "num_classes" => self.num_classes = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "input_channels" => b.input_channels = num(key, value)?,
            "input_side" => b.input_side = num(key, value)?,
            "stem_width" => b.stem_width = num(key, value)?,
            "stem_kernel" => b.stem_kernel = num(key, value)?,
            "stem_stride" => b.stem_stride = num(key, value)?,
            "stem_maxpool" => b.stem_maxpool = num(key, value)?,
            "stage_widths" => b.stage_widths = four(key, value)?,
            "blocks_per_stage" => b.blocks_per_stage = four(key, value)?,
            _ => return Err(ModelError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

pub struct Model<T> {
    config: ModelConfig,
    pub store: ParamStore<T>,
    backbone: Backbone,
    branch: Option<WaveletBranch>,
    classifier: LinearLayer,
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub logits: Var,
    pub f_cnn: Var,
    pub f_wt: Option<Var>,
    pub tap: Option<Var>,
    pub branch: Option<WaveletBranchOutput>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub ce: Var,
    pub wt: Option<Var>,
}

impl<T: Float> Model<T> {
    /// Builds a model with parameters drawn from a ChaCha8 stream seeded by
    /// `seed`: backbone first, then the branch, then the classifier.
    pub fn new(config: ModelConfig, seed: u64) -> ModelResult<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = Backbone::new(&mut store, "backbone", &config.backbone, &mut rng)?;
        let levels = config.resolved_levels()?;
        let channels = config.backbone.tap_info(config.tap).feature_channels;
        let branch = match config.variant {
            Variant::Awtm => Some(WaveletBranch::awtm(&mut store, "wavelet", channels, levels, &mut rng)?),
            Variant::Dawn => Some(WaveletBranch::dawn(&mut store, "wavelet", channels, levels, &mut rng)?),
            Variant::BackboneOnly => None,
        };
        let classifier = LinearLayer::new(
            &mut store,
            "classifier",
            config.classifier_in_features()?,
            config.num_classes,
            &mut rng,
        )?;
        Ok(Self {
            config,
            store,
            backbone,
            branch,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn branch(&self) -> Option<&WaveletBranch> {
        self.branch.as_ref()
    }

    /// Forward pass on a batch `[N, C, side, side]`.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: &Tensor<T>, mode: Mode) -> ModelResult<ModelOutput> {
        let (_, c, h, w) = x.dims4()?;
        let b = &self.config.backbone;
        if c != b.input_channels || h != b.input_side || w != b.input_side {
            return Err(ModelError::Tensor(TensorError::Shape {
                op: "model",
                detail: format!(
                    "input is {c}x{h}x{w}, model expects {}x{}x{}",
                    b.input_channels, b.input_side, b.input_side
                ),
            }));
        }
        let input = tape.constant(x.clone());
        let tap = self.branch.as_ref().map(|_| self.config.tap);
        let bb = self.backbone.forward(tape, &mut self.store, input, mode, tap)?;
        let (f_wt, branch) = match &self.branch {
            Some(br) => {
                let tapped = bb.tap.expect("tap requested");
                let out = br.forward(tape, &self.store, tapped)?;
                let mut pooled = Vec::new();
                for d in out.details.iter().flatten() {
                    pooled.push(tape.global_avg_pool(*d)?);
                }
                pooled.push(tape.global_avg_pool(out.final_approx())?);
                (Some(tape.concat_cols(&pooled)?), Some(out))
            }
            None => (None, None),
        };
        let fused = match f_wt {
            Some(f) => tape.concat_cols(&[bb.features, f])?,
            None => bb.features,
        };
        let logits = self.classifier.forward(tape, &self.store, fused)?;
        Ok(ModelOutput {
            logits,
            f_cnn: bb.features,
            f_wt,
            tap: bb.tap,
            branch,
        })
    }

    /// Class probabilities in eval mode.
    pub fn predict_proba(&mut self, x: &Tensor<T>) -> ModelResult<Tensor<T>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, x, Mode::Eval)?;
        Ok(softmax_rows(tape.value(out.logits))?)
    }

    pub fn loss(&self, tape: &mut Tape<T>, out: &ModelOutput, labels: &[usize]) -> ModelResult<LossParts> {
        total_loss(tape, out.logits, labels, out.branch.as_ref(), self.config.alpha, self.config.beta)
    }
}

/// Cross-entropy plus, when a branch is present, the wavelet regularizer.
pub fn total_loss<T: Float>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[usize],
    branch: Option<&WaveletBranchOutput>,
    alpha: f64,
    beta: f64,
) -> ModelResult<LossParts> {
    let ce = tape.softmax_cross_entropy(logits, labels)?;
    match branch {
        Some(b) => {
            let wt = loss_wt(tape, b, alpha, beta)?;
            let total = tape.add(ce, wt)?;
            Ok(LossParts { total, ce, wt: Some(wt) })
        }
        None => Ok(LossParts { total: ce, ce, wt: None }),
    }
}
