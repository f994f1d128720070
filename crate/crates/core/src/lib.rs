//! # neurofill — recovery of fully-missing channels in multielectrode recordings
//!
//! Multielectrode time-series datasets are ragged: electrodes fail for whole
//! days, every participant carries a different array, and the common fix is
//! to discard the affected channels. This crate recovers those channels
//! instead. It provides:
//!
//! * a ragged dataset store with per-day availability flags ([`ragged`]),
//! * two signal-processing procedures that turn raw 500 Hz recordings into
//!   model-ready instances, plus electrode mask plans ([`pipeline`]),
//! * a nearest-neighbor linear baseline that learns correlation weights on
//!   train days and applies them on a held-out test day ([`linear`]),
//! * convolutional autoencoders trained with masked electrode modeling — one
//!   per participant, and a multihead variant that shares a backbone across
//!   participants ([`models`], [`trainer`]),
//! * a tensor engine with reverse-mode differentiation sized to those models
//!   ([`numerics`]),
//! * evaluation of reconstructions and imputations by time-series and
//!   frequency correlation, with CSV/SVG reports ([`eval`]),
//! * a move/rest random-forest decoding task measuring how much downstream
//!   accuracy imputation recovers under heavy missingness ([`decode`]),
//! * a deterministic synthetic data generator with known latent structure,
//!   used as the test oracle ([`synth`]).
//!
//! Everything randomized takes an explicit seed; repeated runs produce
//! byte-identical artifacts.

pub mod decode;
pub mod eval;
pub mod imputer;
pub mod linear;
pub mod models;
pub mod numerics;
pub mod pipeline;
pub mod ragged;
pub mod synth;
pub mod trainer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a stage-specific seed from a global seed and a stage label.
///
/// FNV-1a over the label, mixed with the global seed, so distinct stages of
/// one run never share an RNG stream.
pub fn derive_seed(global: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ global.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Seeded RNG for a named stage of a run.
pub fn stage_rng(global: u64, stage: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global, stage))
}

/// Round-half-up count for a fraction of a set size, with a floor of one
/// when the fraction is positive.
pub fn fraction_count(fraction: f64, set_size: usize) -> usize {
    if fraction <= 0.0 || set_size == 0 {
        return 0;
    }
    let n = (fraction * set_size as f64 + 0.5).floor() as usize;
    n.clamp(1, set_size)
}
