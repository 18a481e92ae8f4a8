//! Multi-resolution chaining: level `i` consumes the approximation of level
//! `i - 1`, starting from the branch input.

use rand::Rng;

use crate::param::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::{invalid, Float, Result};

use super::lifting::{awtm_forward, dawn_lifting_forward, AwtmParams, DawnParams};
use super::max_levels;

#[derive(Clone, Debug)]
pub enum LevelParams {
    Awtm(AwtmParams),
    Dawn(DawnParams),
}

#[derive(Clone, Debug)]
pub struct WaveletBranch {
    pub levels: Vec<LevelParams>,
}

#[derive(Clone, Debug)]
pub struct WaveletBranchOutput {
    /// Detail maps per level: one for AWTM levels, `[LH, HL, HH]` for
    /// directional levels.
    pub details: Vec<Vec<Var>>,
    /// Approximation after each level; the last one is `A_L`.
    pub approxes: Vec<Var>,
    /// `(m^I_i, m^A_i)` per level, each `[N, C]`.
    pub level_means: Vec<(Var, Var)>,
}

impl WaveletBranchOutput {
    pub fn final_approx(&self) -> Var {
        *self.approxes.last().expect("a branch has at least one level")
    }

    pub fn num_levels(&self) -> usize {
        self.details.len()
    }
}

impl WaveletBranch {
    pub fn awtm<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        levels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if levels == 0 {
            return invalid("wavelet_branch", "at least one level is required");
        }
        let levels = (0..levels)
            .map(|i| AwtmParams::new(store, &format!("{prefix}.level{}", i + 1), channels, rng).map(LevelParams::Awtm))
            .collect::<Result<_>>()?;
        Ok(Self { levels })
    }

    pub fn dawn<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        levels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if levels == 0 {
            return invalid("wavelet_branch", "at least one level is required");
        }
        let levels = (0..levels)
            .map(|i| DawnParams::new(store, &format!("{prefix}.level{}", i + 1), channels, rng).map(LevelParams::Dawn))
            .collect::<Result<_>>()?;
        Ok(Self { levels })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Detail maps each level contributes.
    pub fn details_per_level(&self) -> usize {
        match self.levels.first() {
            Some(LevelParams::Dawn(_)) => 3,
            _ => 1,
        }
    }

    pub fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<WaveletBranchOutput> {
        let (_, _, h, w) = tape.value(x).dims4()?;
        let allowed = max_levels(h.min(w))?;
        if self.levels.len() > allowed {
            return invalid(
                "wavelet_branch",
                format!(
                    "{} levels requested but a {h}x{w} input supports at most {allowed}",
                    self.levels.len()
                ),
            );
        }
        let mut out = WaveletBranchOutput {
            details: Vec::with_capacity(self.levels.len()),
            approxes: Vec::with_capacity(self.levels.len()),
            level_means: Vec::with_capacity(self.levels.len()),
        };
        let mut current = x;
        for level in &self.levels {
            match level {
                LevelParams::Awtm(p) => {
                    let lift = awtm_forward(tape, store, current, p)?;
                    out.details.push(vec![lift.detail]);
                    out.level_means.push((lift.mean_in, lift.mean_approx));
                    current = lift.approx;
                }
                LevelParams::Dawn(p) => {
                    let lift = dawn_lifting_forward(tape, store, current, p)?;
                    out.details.push(vec![lift.bands.lh, lift.bands.hl, lift.bands.hh]);
                    out.level_means.push((lift.mean_in, lift.mean_approx));
                    current = lift.bands.ll;
                }
            }
            out.approxes.push(current);
        }
        Ok(out)
    }
}
