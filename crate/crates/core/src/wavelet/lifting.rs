//! Learnable lifting steps.
//!
//! An AWTM level splits with the Haar transform, feeds `LL` to the predictor
//! and the averaged detail bands to the lifting stage:
//! `D = high_avg - P(LL)`, `A = LL + U(D)`.
//!
//! The directional variant splits lazily along width, lifts, then runs two
//! independent lifts along height, one on each horizontal output.

use rand::Rng;

use crate::nn::{Conv2dLayer, Init};
use crate::ops::{Conv2dOpts, PadMode};
use crate::param::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::{Float, Result};

use super::haar::SubbandQuad;

/// Predictor or updater: `conv -> tanh -> conv -> tanh`, channel preserving,
/// reflect padded. The second conv starts at zero so a fresh net outputs 0.
#[derive(Clone, Debug)]
pub struct LiftingNet {
    pub first: Conv2dLayer,
    pub second: Conv2dLayer,
}

impl LiftingNet {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        kernel: (usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        let opts = Conv2dOpts::same(kernel, PadMode::Reflect);
        let first = Conv2dLayer::new(
            store,
            &format!("{name}.conv1"),
            channels,
            channels,
            kernel,
            opts,
            true,
            Init::KaimingUniform,
            rng,
        )?;
        let second = Conv2dLayer::new(
            store,
            &format!("{name}.conv2"),
            channels,
            channels,
            kernel,
            opts,
            true,
            Init::Zero,
            rng,
        )?;
        Ok(Self { first, second })
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.first.forward(tape, store, x)?;
        let h = tape.tanh(h)?;
        let h = self.second.forward(tape, store, h)?;
        tape.tanh(h)
    }
}

/// One AWTM level: predictor `P` and updater `U` with 3x3 kernels.
#[derive(Clone, Debug)]
pub struct AwtmParams {
    pub predictor: LiftingNet,
    pub updater: LiftingNet,
}

impl AwtmParams {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            predictor: LiftingNet::new(store, &format!("{name}.predictor"), channels, (3, 3), rng)?,
            updater: LiftingNet::new(store, &format!("{name}.updater"), channels, (3, 3), rng)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LiftOutput {
    pub approx: Var,
    pub detail: Var,
    /// Per-channel spatial means `[N, C]` of the level input.
    pub mean_in: Var,
    /// Per-channel spatial means `[N, C]` of `approx`.
    pub mean_approx: Var,
}

pub fn awtm_forward<T: Float>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    params: &AwtmParams,
) -> Result<LiftOutput> {
    let q = tape.haar_split(x)?;
    let high = tape.high_avg(&q)?;
    let predicted = params.predictor.forward(tape, store, q.ll)?;
    let detail = tape.sub(high, predicted)?;
    let update = params.updater.forward(tape, store, detail)?;
    let approx = tape.add(q.ll, update)?;
    let mean_in = tape.global_avg_pool(x)?;
    let mean_approx = tape.global_avg_pool(approx)?;
    Ok(LiftOutput {
        approx,
        detail,
        mean_in,
        mean_approx,
    })
}

/// One predict/update pair operating along a single axis.
#[derive(Clone, Debug)]
pub struct DirectionalLift {
    pub predictor: LiftingNet,
    pub updater: LiftingNet,
    /// 3 for width, 2 for height.
    pub axis: usize,
}

impl DirectionalLift {
    fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        axis: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let kernel = if axis == 3 { (1, 3) } else { (3, 1) };
        Ok(Self {
            predictor: LiftingNet::new(store, &format!("{name}.predictor"), channels, kernel, rng)?,
            updater: LiftingNet::new(store, &format!("{name}.updater"), channels, kernel, rng)?,
            axis,
        })
    }

    /// Returns `(approx, detail)`.
    fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<(Var, Var)> {
        let (even, odd) = tape.lazy_split(x, self.axis)?;
        let p = self.predictor.forward(tape, store, even)?;
        let detail = tape.sub(odd, p)?;
        let u = self.updater.forward(tape, store, detail)?;
        let approx = tape.add(even, u)?;
        Ok((approx, detail))
    }
}

/// The three lifting schemes of one directional level.
#[derive(Clone, Debug)]
pub struct DawnParams {
    pub horizontal: DirectionalLift,
    pub vertical_low: DirectionalLift,
    pub vertical_high: DirectionalLift,
}

impl DawnParams {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            horizontal: DirectionalLift::new(store, &format!("{name}.horizontal"), channels, 3, rng)?,
            vertical_low: DirectionalLift::new(store, &format!("{name}.vertical_low"), channels, 2, rng)?,
            vertical_high: DirectionalLift::new(store, &format!("{name}.vertical_high"), channels, 2, rng)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct DawnOutput {
    pub bands: SubbandQuad<Var>,
    pub mean_in: Var,
    pub mean_approx: Var,
}

pub fn dawn_lifting_forward<T: Float>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    params: &DawnParams,
) -> Result<DawnOutput> {
    let (low, high) = params.horizontal.forward(tape, store, x)?;
    let (ll, lh) = params.vertical_low.forward(tape, store, low)?;
    let (hl, hh) = params.vertical_high.forward(tape, store, high)?;
    let mean_in = tape.global_avg_pool(x)?;
    let mean_approx = tape.global_avg_pool(ll)?;
    Ok(DawnOutput {
        bands: SubbandQuad { ll, lh, hl, hh },
        mean_in,
        mean_approx,
    })
}
