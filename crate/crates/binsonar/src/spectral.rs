//! Shared spectral kernels: power STFT, mel filterbank, dB conversion,
//! DCT-II, and a direct constant-Q transform.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::signal::{hann_window, Signal};

/// Lowest CQT center frequency in Hz (C1).
pub const CQT_FMIN: f64 = 32.703;
/// Number of CQT bins (seven octaves at twelve bins each).
pub const CQT_BINS: usize = 84;
/// CQT bins per octave.
pub const CQT_BINS_PER_OCTAVE: usize = 12;

/// Floor applied to power values before taking logs.
const DB_AMIN: f64 = 1e-10;
/// Dynamic range kept below the loudest value, in dB.
const DB_TOP: f64 = 80.0;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("frame length {0} must be a nonzero power of two")]
    FrameLenNotPowerOfTwo(usize),
    #[error("mel filterbank needs at least one band")]
    NoMelBands,
    #[error("invalid mel range: fmin {fmin} Hz, fmax {fmax} Hz at sr {sr} Hz")]
    BadMelRange { fmin: f64, fmax: f64, sr: f64 },
    #[error("spectrogram has {got} bins but the filterbank expects {expected}")]
    BinCountMismatch { expected: usize, got: usize },
    #[error("dct keep={keep} out of range 1..={n}")]
    DctKeepOutOfRange { keep: usize, n: usize },
}

/// Power spectrogram: non-negative values on an `n_frames x n_bins` grid.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub power: Array2<f64>,
    /// Center frequency of each bin in Hz.
    pub bin_hz: Vec<f64>,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.power.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.power.ncols()
    }
}

/// Squared-magnitude DFT of each windowed frame, bins `0..=n/2`.
pub fn stft_power(frames: &Array2<f64>, sr: f64) -> Result<Spectrogram, SpectralError> {
    let n = frames.ncols();
    if n == 0 || !n.is_power_of_two() {
        return Err(SpectralError::FrameLenNotPowerOfTwo(n));
    }
    let n_bins = n / 2 + 1;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut power = Array2::zeros((frames.nrows(), n_bins));
    let mut buf = vec![Complex64::default(); n];
    for (m, frame) in frames.outer_iter().enumerate() {
        for (slot, &v) in buf.iter_mut().zip(frame.iter()) {
            *slot = Complex64::new(v, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            power[[m, k]] = buf[k].norm_sqr();
        }
    }
    let bin_hz = (0..n_bins).map(|k| k as f64 * sr / n as f64).collect();
    Ok(Spectrogram { power, bin_hz })
}

/// Hz to mel, `2595 * log10(1 + f/700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

/// Mel back to Hz.
pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over FFT bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels x n_bins` non-negative weights.
    pub weights: Array2<f64>,
    pub sr: f64,
    pub fmin: f64,
    pub fmax: f64,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.ncols()
    }
}

/// Build `n_mels` triangular filters with edges equally spaced on the mel
/// scale, each scaled by `2 / (f_hi - f_lo)` so filter area is constant.
pub fn build_mel_filterbank(
    sr: f64,
    n_fft: usize,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Result<MelFilterbank, SpectralError> {
    if n_mels < 1 {
        return Err(SpectralError::NoMelBands);
    }
    if !(0.0 <= fmin && fmin < fmax && fmax <= sr / 2.0) {
        return Err(SpectralError::BadMelRange { fmin, fmax, sr });
    }
    let n_bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut weights = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (f_lo, f_c, f_hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let scale = 2.0 / (f_hi - f_lo);
        for k in 0..n_bins {
            let f = k as f64 * sr / n_fft as f64;
            let rising = (f - f_lo) / (f_c - f_lo);
            let falling = (f_hi - f) / (f_hi - f_c);
            let w = rising.min(falling).max(0.0);
            weights[[m, k]] = w * scale;
        }
    }
    Ok(MelFilterbank {
        weights,
        sr,
        fmin,
        fmax,
    })
}

/// Project a power spectrogram through the filterbank: one matrix product
/// per frame, result `n_frames x n_mels`.
pub fn apply_mel(
    spec: &Spectrogram,
    fb: &MelFilterbank,
) -> Result<Array2<f64>, SpectralError> {
    if spec.n_bins() != fb.n_bins() {
        return Err(SpectralError::BinCountMismatch {
            expected: fb.n_bins(),
            got: spec.n_bins(),
        });
    }
    Ok(spec.power.dot(&fb.weights.t()))
}

/// Convert power to dB: `10*log10(max(x, 1e-10))`, then floor every value
/// at 80 dB below the grid's maximum.
pub fn power_to_db(grid: &Array2<f64>) -> Array2<f64> {
    let mut db = grid.mapv(|x| 10.0 * x.max(DB_AMIN).log10());
    let max_db = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = max_db - DB_TOP;
    db.mapv_inplace(|x| x.max(floor));
    db
}

/// Orthonormal DCT-II, first `keep` coefficients.
///
/// `y[k] = a_k * sum_j v[j] * cos(pi * k * (2j+1) / (2n))` with
/// `a_0 = sqrt(1/n)` and `a_k = sqrt(2/n)` otherwise.
pub fn dct_ii(v: &[f64], keep: usize) -> Result<Vec<f64>, SpectralError> {
    let n = v.len();
    if keep == 0 || keep > n {
        return Err(SpectralError::DctKeepOutOfRange { keep, n });
    }
    let mut out = Vec::with_capacity(keep);
    for k in 0..keep {
        let a = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        let mut acc = 0.0;
        for (j, &x) in v.iter().enumerate() {
            acc += x * (std::f64::consts::PI * k as f64 * (2 * j + 1) as f64 / (2 * n) as f64).cos();
        }
        out.push(a * acc);
    }
    Ok(out)
}

/// Per-bin windowed complex exponentials for the constant-Q transform.
///
/// Bin `k` is centered at `fmin * 2^(k / bins_per_octave)` and its kernel
/// has `N_k = ceil(Q * sr / f_k)` taps (capped at the signal length), with
/// `Q = 1 / (2^(1/bins_per_octave) - 1)`.
#[derive(Debug, Clone)]
pub struct CqtKernelSet {
    pub sr: f64,
    pub quality: f64,
    pub center_hz: Vec<f64>,
    kernels: Vec<Vec<Complex64>>,
}

impl CqtKernelSet {
    pub fn new(
        sr: f64,
        fmin: f64,
        n_bins: usize,
        bins_per_octave: usize,
        max_len: usize,
    ) -> CqtKernelSet {
        let quality = 1.0 / (2f64.powf(1.0 / bins_per_octave as f64) - 1.0);
        let mut center_hz = Vec::with_capacity(n_bins);
        let mut kernels = Vec::with_capacity(n_bins);
        for k in 0..n_bins {
            let f_k = fmin * 2f64.powf(k as f64 / bins_per_octave as f64);
            let n_k = ((quality * sr / f_k).ceil() as usize).max(1).min(max_len);
            let window = hann_window(n_k);
            let kernel: Vec<Complex64> = (0..n_k)
                .map(|u| {
                    let phase = -2.0 * std::f64::consts::PI * quality * u as f64 / n_k as f64;
                    Complex64::from_polar(window[u], phase)
                })
                .collect();
            center_hz.push(f_k);
            kernels.push(kernel);
        }
        CqtKernelSet {
            sr,
            quality,
            center_hz,
            kernels,
        }
    }

    /// Kernel set with the stock 84-bin, 12-per-octave layout.
    pub fn standard(sr: f64, max_len: usize) -> CqtKernelSet {
        CqtKernelSet::new(sr, CQT_FMIN, CQT_BINS, CQT_BINS_PER_OCTAVE, max_len)
    }

    pub fn n_bins(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernel(&self, bin: usize) -> &[Complex64] {
        &self.kernels[bin]
    }
}

/// Constant-Q power grid, `n_frames x n_bins`.
///
/// Frame `m` is centered at sample `m * hop`; bin `k` is the squared
/// magnitude of the kernel inner product around that center, divided by
/// `N_k^2`. Signal indices outside the buffer contribute zero. The frame
/// count `1 + floor(len / hop)` matches [`stft_power`] on the same signal.
pub fn cqt_power(signal: &Signal, kernels: &CqtKernelSet, hop: usize) -> Array2<f64> {
    let samples = &signal.samples;
    let len = samples.len() as isize;
    let n_frames = 1 + samples.len() / hop;
    let mut grid = Array2::zeros((n_frames, kernels.n_bins()));
    for m in 0..n_frames {
        let center = (m * hop) as isize;
        for (k, kernel) in kernels.kernels.iter().enumerate() {
            let n_k = kernel.len() as isize;
            let start = center - n_k / 2;
            let u_lo = (-start).max(0) as usize;
            let u_hi = (len - start).clamp(0, n_k) as usize;
            let mut acc = Complex64::default();
            for u in u_lo..u_hi {
                acc += samples[(start + u as isize) as usize] * kernel[u];
            }
            grid[[m, k]] = acc.norm_sqr() / (n_k as f64 * n_k as f64);
        }
    }
    grid
}
