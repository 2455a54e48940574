//! Blind source separation from a microphone array aided by low-rate
//! sound power sensors ("blinkies").
//!
//! The crate provides the STFT front end, a synthetic convolutive scene
//! generator, an AuxIVA baseline, Itakura-Saito NMF updates for the stacked
//! blinky/source-power matrix, the joint separation algorithm that couples
//! both, and SDR/SIR evaluation.

pub mod auxiva;
pub mod blinkiva;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod nmf;
pub mod scene;
pub mod stft;

pub use error::{BssError, Result};
pub use stft::{analyze, synthesize, Spectrogram, TimeSignal};
