//! Classify binary files by recasting their bytes as audio signals.
//!
//! A file's bytes become a one-dimensional signal, the signal is framed and
//! run through standard audio analysis (STFT, mel filterbank, constant-Q
//! transform), and the resulting descriptors feed ordinary classifiers.
//! Alongside the audio path there are static comparison features (byte
//! bigrams, a PE structural hash, a Gabor image descriptor) and an error
//! analysis that scores how orthogonal two feature sets' mistakes are.

pub mod classify;
pub mod corpus;
pub mod descriptors;
pub mod ortho;
pub mod signal;
pub mod spectral;
pub mod staticfeat;

/// Nominal sample rate (Hz) assigned to decoded byte signals.
///
/// Binary files carry no sampling clock; this fixed rate anchors every
/// frequency mapping (mel scale, chroma pitch classes, CQT bin centers).
pub const SAMPLE_RATE: f64 = 22050.0;
