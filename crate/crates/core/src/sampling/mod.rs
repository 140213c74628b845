//! Counter-based random streams, Gaussian noise groups and collocation samplers.

mod collocation;
mod noise;
mod rng;

pub use collocation::{
    draw_drift, sample_fp_anisotropic, sample_fp_conditional, sample_fp_isotropic, sample_hjb,
    sample_unit_ball, CollocationBatch,
};
pub use noise::{
    draw_noise_groups, draw_point_noise, draw_point_noise_range, draw_training_noise, NoiseGroup, NoiseOrigin, NoisePair,
};
pub use rng::{uniform_f64, GaussianSource, RngStream, StreamKey};
