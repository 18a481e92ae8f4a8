//! Wavelet machinery: splits, learnable lifting levels, branch chaining and
//! the wavelet regularization loss.

pub mod branch;
pub mod haar;
pub mod lifting;
pub mod loss;

pub use branch::{LevelParams, WaveletBranch, WaveletBranchOutput};
pub use haar::{haar_inverse, haar_split, high_avg, interleave, lazy_split, SubbandQuad};
pub use lifting::{
    awtm_forward, dawn_lifting_forward, AwtmParams, DawnOutput, DawnParams, LiftOutput, LiftingNet,
};
pub use loss::{huber, loss_wt, HUBER_DELTA};

use crate::tensor::{invalid, Result};

/// Deepest decomposition a `side x side` input allows: `floor(log2(side) - 2)`,
/// so the last level still sees at least a 4x4 approximation.
pub fn max_levels(side: usize) -> Result<usize> {
    if side < 4 {
        return invalid("max_levels", format!("side {side} is below the 4-pixel minimum"));
    }
    Ok(side.ilog2() as usize - 2)
}
