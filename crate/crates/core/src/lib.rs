//! Desk-scale text-to-image GAN on a procedural captioned-shapes dataset.
//!
//! The discriminator scores (image, sentence) pairs over three cases
//! (real+matched, real+mismatched, fake), carries an auxiliary decoder
//! trained to reconstruct real inputs, and lends its joint feature space to
//! a feature-aware generator regularizer. Evaluation is a from-scratch
//! Frechet distance in the feature space of a frozen attribute classifier.

pub mod archive;
pub mod experiments;
pub mod imgio;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod scenes;
pub mod training;

pub use fagan_tensor as tensor;
