//! ResNet-shaped backbone with five tap points for the wavelet branch.
//!
//! Tap positions: `pos1` is the stem output before max pooling, `pos2..pos5`
//! follow stages 1 to 4.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::model::ModelError;
use crate::nn::{BatchNorm2dLayer, Conv2dLayer, Init};
use crate::ops::{Conv2dOpts, Mode, PadMode};
use crate::param::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::{Float, Result};
use crate::wavelet::max_levels;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub input_channels: usize,
    pub input_side: usize,
    pub stem_width: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_maxpool: bool,
    pub stage_widths: [usize; 4],
    pub blocks_per_stage: [usize; 4],
}

impl BackboneConfig {
    /// ResNet18 at 256x256.
    pub fn full(input_channels: usize) -> Self {
        Self {
            input_channels,
            input_side: 256,
            stem_width: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_maxpool: true,
            stage_widths: [64, 128, 256, 512],
            blocks_per_stage: [2, 2, 2, 2],
        }
    }

    /// Same topology at desk scale: 32x32 input, one block per stage.
    pub fn tiny(input_channels: usize) -> Self {
        Self {
            input_channels,
            input_side: 32,
            stem_width: 16,
            stem_kernel: 3,
            stem_stride: 1,
            stem_maxpool: false,
            stage_widths: [16, 32, 64, 128],
            blocks_per_stage: [1, 1, 1, 1],
        }
    }

    /// Total spatial reduction from input to the last stage.
    pub fn downsampling(&self) -> usize {
        self.stem_stride * if self.stem_maxpool { 2 } else { 1 } * 8
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = self.input_channels > 0
            && self.stem_width > 0
            && self.stage_widths.iter().all(|w| *w > 0)
            && self.blocks_per_stage.iter().all(|b| *b > 0);
        if !positive {
            return Err(ModelError::Config("widths, blocks and channels must be positive".into()));
        }
        if self.stem_kernel % 2 == 0 || self.stem_stride == 0 {
            return Err(ModelError::Config(format!(
                "stem kernel {} must be odd and stride {} positive",
                self.stem_kernel, self.stem_stride
            )));
        }
        let d = self.downsampling();
        if self.input_side == 0 || self.input_side % d != 0 {
            return Err(ModelError::Config(format!(
                "input side {} must be a positive multiple of {d}",
                self.input_side
            )));
        }
        Ok(())
    }

    pub fn out_features(&self) -> usize {
        self.stage_widths[3]
    }

    pub fn tap_info(&self, tap: TapPoint) -> TapInfo {
        let stem_side = self.input_side / self.stem_stride;
        let stage1_side = if self.stem_maxpool { stem_side / 2 } else { stem_side };
        let (side, channels) = match tap {
            TapPoint::Pos1 => (stem_side, self.stem_width),
            TapPoint::Pos2 => (stage1_side, self.stage_widths[0]),
            TapPoint::Pos3 => (stage1_side / 2, self.stage_widths[1]),
            TapPoint::Pos4 => (stage1_side / 4, self.stage_widths[2]),
            TapPoint::Pos5 => (stage1_side / 8, self.stage_widths[3]),
        };
        TapInfo {
            id: tap,
            feature_side: side,
            feature_channels: channels,
        }
    }

    /// Deepest branch a tap supports.
    pub fn tap_max_levels(&self, tap: TapPoint) -> Result<usize, ModelError> {
        let side = self.tap_info(tap).feature_side;
        max_levels(side).map_err(|_| {
            ModelError::Config(format!("{tap} has a {side}x{side} feature map, too small for any wavelet level"))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TapPoint {
    Pos1,
    Pos2,
    Pos3,
    Pos4,
    Pos5,
}

impl TapPoint {
    pub const ALL: [TapPoint; 5] = [
        TapPoint::Pos1,
        TapPoint::Pos2,
        TapPoint::Pos3,
        TapPoint::Pos4,
        TapPoint::Pos5,
    ];
}

impl fmt::Display for TapPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = TapPoint::ALL.iter().position(|t| t == self).expect("listed") + 1;
        write!(f, "pos{i}")
    }
}

impl FromStr for TapPoint {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        TapPoint::ALL
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown tap `{s}` (expected pos1..pos5)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TapInfo {
    pub id: TapPoint,
    pub feature_side: usize,
    pub feature_channels: usize,
}

#[derive(Clone, Debug)]
struct BasicBlock {
    conv1: Conv2dLayer,
    bn1: BatchNorm2dLayer,
    conv2: Conv2dLayer,
    bn2: BatchNorm2dLayer,
    shortcut: Option<(Conv2dLayer, BatchNorm2dLayer)>,
}

impl BasicBlock {
    fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_c: usize,
        out_c: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let k3 = Conv2dOpts::strided((3, 3), stride, PadMode::Zero);
        let conv1 = Conv2dLayer::new(store, &format!("{name}.conv1"), in_c, out_c, (3, 3), k3, false, Init::KaimingUniform, rng)?;
        let bn1 = BatchNorm2dLayer::new(store, &format!("{name}.bn1"), out_c)?;
        let conv2 = Conv2dLayer::new(
            store,
            &format!("{name}.conv2"),
            out_c,
            out_c,
            (3, 3),
            Conv2dOpts::same((3, 3), PadMode::Zero),
            false,
            Init::KaimingUniform,
            rng,
        )?;
        let bn2 = BatchNorm2dLayer::new(store, &format!("{name}.bn2"), out_c)?;
        let shortcut = if stride != 1 || in_c != out_c {
            let proj = Conv2dLayer::new(
                store,
                &format!("{name}.shortcut.conv"),
                in_c,
                out_c,
                (1, 1),
                Conv2dOpts::strided((1, 1), stride, PadMode::Zero),
                false,
                Init::KaimingUniform,
                rng,
            )?;
            let bn = BatchNorm2dLayer::new(store, &format!("{name}.shortcut.bn"), out_c)?;
            Some((proj, bn))
        } else {
            None
        };
        Ok(Self {
            conv1,
            bn1,
            conv2,
            bn2,
            shortcut,
        })
    }

    fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv1.forward(tape, store, x)?;
        let h = self.bn1.forward(tape, store, h, mode)?;
        let h = tape.relu(h)?;
        let h = self.conv2.forward(tape, store, h)?;
        let h = self.bn2.forward(tape, store, h, mode)?;
        let s = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(tape, store, x)?;
                bn.forward(tape, store, s, mode)?
            }
            None => x,
        };
        let sum = tape.add(h, s)?;
        tape.relu(sum)
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    config: BackboneConfig,
    stem: Conv2dLayer,
    stem_bn: BatchNorm2dLayer,
    stages: Vec<Vec<BasicBlock>>,
}

#[derive(Clone, Copy, Debug)]
pub struct BackboneOutput {
    /// Globally pooled last-stage features `[N, w4]`.
    pub features: Var,
    pub tap: Option<Var>,
}

impl Backbone {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: &BackboneConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let k = config.stem_kernel;
        let stem = Conv2dLayer::new(
            store,
            &format!("{prefix}.stem.conv"),
            config.input_channels,
            config.stem_width,
            (k, k),
            Conv2dOpts::strided((k, k), config.stem_stride, PadMode::Zero),
            false,
            Init::KaimingUniform,
            rng,
        )?;
        let stem_bn = BatchNorm2dLayer::new(store, &format!("{prefix}.stem.bn"), config.stem_width)?;
        let mut stages = Vec::with_capacity(4);
        let mut in_c = config.stem_width;
        for (s, (&width, &blocks)) in config
            .stage_widths
            .iter()
            .zip(&config.blocks_per_stage)
            .enumerate()
        {
            let mut stage = Vec::with_capacity(blocks);
            for b in 0..blocks {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let name = format!("{prefix}.stage{}.block{}", s + 1, b + 1);
                stage.push(BasicBlock::new(store, &name, in_c, width, stride, rng)?);
                in_c = width;
            }
            stages.push(stage);
        }
        Ok(Self {
            config: config.clone(),
            stem,
            stem_bn,
            stages,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: Mode,
        tap: Option<TapPoint>,
    ) -> Result<BackboneOutput> {
        let mut tapped = None;
        let h = self.stem.forward(tape, store, x)?;
        let h = self.stem_bn.forward(tape, store, h, mode)?;
        let mut h = tape.relu(h)?;
        if tap == Some(TapPoint::Pos1) {
            tapped = Some(h);
        }
        if self.config.stem_maxpool {
            h = tape.maxpool2d(h, 3, 2, 1)?;
        }
        for (s, stage) in self.stages.iter().enumerate() {
            for block in stage {
                h = block.forward(tape, store, h, mode)?;
            }
            if tap == Some(TapPoint::ALL[s + 1]) {
                tapped = Some(h);
            }
        }
        let features = tape.global_avg_pool(h)?;
        Ok(BackboneOutput {
            features,
            tap: tapped,
        })
    }
}
