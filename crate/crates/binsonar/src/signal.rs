//! Byte-stream decoding into a one-dimensional signal, plus framing.
//!
//! Every file is treated as a raw sequence of unsigned integers (1, 2, or 4
//! bytes wide) and mapped onto `[-1, 1)` so the spectral kernels see a
//! zero-centered waveform.

use ndarray::Array2;
use thiserror::Error;

/// Analysis frame length in samples.
pub const DEFAULT_FRAME_LEN: usize = 2048;
/// Hop between consecutive frame centers in samples.
pub const DEFAULT_HOP: usize = 512;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("input byte stream is empty")]
    EmptyInput,
    #[error("bytes per sample must be 1, 2, or 4 (got {0})")]
    BadBytesPerSample(u8),
    #[error("hop {hop} must be in 1..={frame_len}")]
    BadHop { hop: usize, frame_len: usize },
    #[error("cannot frame an empty signal")]
    EmptySignal,
}

/// How many file bytes form one signal sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BytesPerSample {
    #[default]
    One,
    Two,
    Four,
}

impl BytesPerSample {
    pub fn width(self) -> usize {
        match self {
            BytesPerSample::One => 1,
            BytesPerSample::Two => 2,
            BytesPerSample::Four => 4,
        }
    }
}

impl TryFrom<u8> for BytesPerSample {
    type Error = SignalError;

    fn try_from(value: u8) -> Result<Self, SignalError> {
        match value {
            1 => Ok(BytesPerSample::One),
            2 => Ok(BytesPerSample::Two),
            4 => Ok(BytesPerSample::Four),
            other => Err(SignalError::BadBytesPerSample(other)),
        }
    }
}

/// A decoded byte stream: real samples in `[-1, 1)`.
#[derive(Debug, Clone)]
pub struct Signal {
    pub samples: Vec<f64>,
    /// Length of the source byte stream, before grouping and padding.
    pub source_len: usize,
    pub bytes_per_sample: BytesPerSample,
}

/// Decode bytes into a signal.
///
/// Consecutive non-overlapping groups of `bps.width()` bytes are read as
/// little-endian unsigned integers `v` and mapped to
/// `(v - 2^(8B-1)) / 2^(8B-1)`, so `0x80...` lands on zero. A trailing
/// partial group is dropped. Signals shorter than [`DEFAULT_FRAME_LEN`]
/// are zero-padded up to it so every file yields at least one frame.
pub fn bytes_to_signal(bytes: &[u8], bps: BytesPerSample) -> Result<Signal, SignalError> {
    if bytes.is_empty() {
        return Err(SignalError::EmptyInput);
    }
    let width = bps.width();
    let half = (1u64 << (8 * width - 1)) as f64;
    let mut samples: Vec<f64> = bytes
        .chunks_exact(width)
        .map(|group| {
            let mut v = 0u64;
            for (i, &b) in group.iter().enumerate() {
                v |= (b as u64) << (8 * i);
            }
            (v as f64 - half) / half
        })
        .collect();
    if samples.len() < DEFAULT_FRAME_LEN {
        samples.resize(DEFAULT_FRAME_LEN, 0.0);
    }
    Ok(Signal {
        samples,
        source_len: bytes.len(),
        bytes_per_sample: bps,
    })
}

/// Framing parameters: frame length, hop, window, centering.
#[derive(Debug, Clone)]
pub struct FrameParams {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Vec<f64>,
    pub center: bool,
}

impl FrameParams {
    /// Hann-windowed centered frames with the given sizes.
    pub fn new(frame_len: usize, hop: usize) -> Result<Self, SignalError> {
        if hop == 0 || hop > frame_len {
            return Err(SignalError::BadHop { hop, frame_len });
        }
        Ok(FrameParams {
            frame_len,
            hop,
            window: hann_window(frame_len),
            center: true,
        })
    }
}

impl Default for FrameParams {
    fn default() -> Self {
        FrameParams::new(DEFAULT_FRAME_LEN, DEFAULT_HOP).expect("default sizes are valid")
    }
}

/// Periodic Hann window: `w[k] = 0.5 * (1 - cos(2*pi*k / n))`.
pub fn hann_window(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|k| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos()))
        .collect()
}

/// Map an index into `0..n` by reflecting at the boundaries (no edge repeat).
fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Cut a signal into overlapping windowed frames.
///
/// With `center = true` the signal is reflect-padded by `frame_len / 2` on
/// each side and frame `m` covers padded samples `[m*hop, m*hop+frame_len)`,
/// giving `1 + floor(len / hop)` frames. With `center = false` only fully
/// contained frames are produced. Each frame is multiplied by the window.
pub fn frame_signal(signal: &Signal, params: &FrameParams) -> Result<Array2<f64>, SignalError> {
    let samples = &signal.samples;
    let n = samples.len();
    if n == 0 {
        return Err(SignalError::EmptySignal);
    }
    let frame_len = params.frame_len;
    let n_frames = if params.center {
        1 + n / params.hop
    } else if n >= frame_len {
        1 + (n - frame_len) / params.hop
    } else {
        0
    };
    let pad = if params.center { frame_len / 2 } else { 0 };
    let mut frames = Array2::zeros((n_frames, frame_len));
    for m in 0..n_frames {
        let start = (m * params.hop) as isize - pad as isize;
        for k in 0..frame_len {
            let idx = start + k as isize;
            let value = if idx >= 0 && (idx as usize) < n {
                samples[idx as usize]
            } else if params.center {
                samples[reflect_index(idx, n)]
            } else {
                0.0
            };
            frames[[m, k]] = value * params.window[k];
        }
    }
    Ok(frames)
}
