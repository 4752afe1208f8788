//! Viola-Jones pest detection: imaging primitives, integral images, Haar
//! cascades, tiled multi-scale detection, AdaBoost training and evaluation.

pub mod cascade;
pub mod detector;
pub mod evaluator;
pub mod imaging;
pub mod integral;
pub mod synth;
pub mod trainer;
