//! Gated three-stream fusion networks for monocular 3D pose regression.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors and a tape-based reverse-mode autodiff graph.
//! * [`fusion`]: the image / confidence-map / fusion stream network, its sigmoid
//!   gate over layer indices, hard-gate special cases and pruning.
//! * [`train`]: square loss, the sharpness penalty on the gate, ADAM and the
//!   training loop with its CSV trace.
//! * [`synth`]: a deterministic synthetic corpus of articulated poses with
//!   rendered depth-cue images and Gaussian confidence maps.
//! * [`eval`]: MPJPE, Procrustes-aligned error, PCP and squared Pearson analysis.
//! * [`baselines`]: single-stream and fixed-gate comparison networks.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod kv;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// `x` rounded to six significant digits, printed without trailing zeros.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("float round trip");
    format!("{rounded}")
}
