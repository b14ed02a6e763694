//! The three-stream fusion network.
//!
//! An image stream `{I_l}` and a confidence-map stream `{X_l}` run side by
//! side; a fusion stream `{Z_l}` consumes, at every layer, a gated mixture of
//! its own previous output and the concatenated data-stream features.

pub mod gate;
pub mod io;
pub mod network;
pub mod params;
pub mod prune;
pub mod spec;

pub use gate::{fusion_weights, gate_softness, hard_gate, FusionSchedule, Gate};
pub use network::{forward, ForwardMode, ForwardOutput, Model};
pub use params::{init_params, parameter_layout, ParameterSet};
pub use prune::{prune, prune_weights, split_point};
pub use spec::{Architecture, LayerSpec, NetworkSpec, StreamInput};
