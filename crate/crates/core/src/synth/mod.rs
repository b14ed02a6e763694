//! Deterministic synthetic training data.
//!
//! Poses come from forward kinematics over a joint-limited skeleton. Each
//! sample pairs a rendered image, which encodes joint depth in brightness,
//! with Gaussian confidence maps, which only know the 2D joint positions.

pub mod camera;
pub mod corpus;
pub mod render;
pub mod skeleton;

pub use camera::{project, Camera};
pub use corpus::{
    depth_mirrored, generate_corpus, read_corpus, write_corpus, Corpus, SynthConfig, TrainingSample,
};
pub use render::{gaussian_cmaps, render_depth_cue_image};
pub use skeleton::{sample_pose, SkeletonSpec};
