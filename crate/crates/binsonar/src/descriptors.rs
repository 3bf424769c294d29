//! The five audio descriptors and their aggregation into per-file vectors.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::signal::{
    bytes_to_signal, frame_signal, hann_window, BytesPerSample, FrameParams, SignalError,
};
use crate::spectral::{
    apply_mel, build_mel_filterbank, cqt_power, dct_ii, power_to_db, stft_power, CqtKernelSet,
    Spectrogram, SpectralError,
};
use crate::SAMPLE_RATE;

/// MFCC coefficients kept per frame.
pub const MFCC_DIM: usize = 20;
/// Mel bands, shared by the mel spectrogram and the MFCC path.
pub const MEL_BANDS: usize = 128;
/// Chroma pitch classes.
pub const CHROMA_DIM: usize = 12;

/// CENS quantization thresholds (strict `>` comparison).
const CENS_THRESHOLDS: [f64; 4] = [0.05, 0.1, 0.2, 0.4];
/// CENS temporal smoothing window length.
const CENS_SMOOTH_LEN: usize = 41;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("cannot aggregate an empty frame grid")]
    NoFrames,
}

/// Which audio descriptor to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DescriptorKind {
    Mfcc,
    MelSpectrogram,
    ChromaStft,
    ChromaCqt,
    ChromaCens,
}

impl DescriptorKind {
    /// Per-frame dimensionality of this descriptor.
    pub fn base_dim(self) -> usize {
        match self {
            DescriptorKind::Mfcc => MFCC_DIM,
            DescriptorKind::MelSpectrogram => MEL_BANDS,
            DescriptorKind::ChromaStft | DescriptorKind::ChromaCqt | DescriptorKind::ChromaCens => {
                CHROMA_DIM
            }
        }
    }

    /// Segment count used by the expanded ("local variation") form.
    pub fn default_segments(self) -> usize {
        match self {
            DescriptorKind::Mfcc => 16,
            DescriptorKind::MelSpectrogram => 3,
            DescriptorKind::ChromaStft | DescriptorKind::ChromaCqt | DescriptorKind::ChromaCens => {
                26
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DescriptorKind::Mfcc => "mfcc",
            DescriptorKind::MelSpectrogram => "melspec",
            DescriptorKind::ChromaStft => "chroma-stft",
            DescriptorKind::ChromaCqt => "chroma-cqt",
            DescriptorKind::ChromaCens => "chroma-cens",
        }
    }
}

/// Full configuration for one descriptor extraction.
#[derive(Debug, Clone, Copy)]
pub struct DescriptorConfig {
    pub kind: DescriptorKind,
    pub expanded: bool,
    pub segments: usize,
    pub bytes_per_sample: BytesPerSample,
}

impl DescriptorConfig {
    pub fn new(kind: DescriptorKind) -> Self {
        DescriptorConfig {
            kind,
            expanded: false,
            segments: kind.default_segments(),
            bytes_per_sample: BytesPerSample::One,
        }
    }

    pub fn expanded(kind: DescriptorKind) -> Self {
        DescriptorConfig {
            expanded: true,
            ..DescriptorConfig::new(kind)
        }
    }

    /// Final vector length: base dim, times segments when expanded.
    pub fn dim(&self) -> usize {
        if self.expanded {
            self.kind.base_dim() * self.segments
        } else {
            self.kind.base_dim()
        }
    }

    /// Stable name for persisted matrices, e.g. `mfcc-expanded` or
    /// `chroma-cqt-b2`; non-default segment counts show up as `-s<N>`.
    pub fn feature_name(&self) -> String {
        let mut name = self.kind.name().to_string();
        if self.expanded {
            name.push_str("-expanded");
            if self.segments != self.kind.default_segments() {
                name.push_str(&format!("-s{}", self.segments));
            }
        }
        let width = self.bytes_per_sample.width();
        if width != 1 {
            name.push_str(&format!("-b{width}"));
        }
        name
    }
}

/// One extracted per-file vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub feature_name: String,
    pub values: Vec<f64>,
}

/// MFCC frames: DCT-II of the log-mel power grid, first 20 coefficients.
pub fn mfcc(mel_db: &Array2<f64>, keep: usize) -> Result<Array2<f64>, DescriptorError> {
    let mut out = Array2::zeros((mel_db.nrows(), keep));
    for (m, row) in mel_db.outer_iter().enumerate() {
        let coeffs = dct_ii(row.as_slice().expect("row is contiguous"), keep)?;
        for (k, &c) in coeffs.iter().enumerate() {
            out[[m, k]] = c;
        }
    }
    Ok(out)
}

/// Mel power grid (no dB conversion), `n_frames x 128`.
pub fn melspectrogram(spec: &Spectrogram) -> Result<Array2<f64>, DescriptorError> {
    let fb = build_mel_filterbank(SAMPLE_RATE, (spec.n_bins() - 1) * 2, MEL_BANDS, 0.0, SAMPLE_RATE / 2.0)?;
    Ok(apply_mel(spec, &fb)?)
}

/// Pitch class of a frequency: `(round(12*log2(f/440)) + 69) mod 12`.
fn pitch_class(hz: f64) -> usize {
    let midi = (12.0 * (hz / 440.0).log2()).round() as i64 + 69;
    midi.rem_euclid(12) as usize
}

/// Fold STFT power onto 12 pitch classes; bin 0 is skipped and each frame is
/// normalized by its maximum (all-zero frames stay zero).
pub fn chroma_stft(spec: &Spectrogram) -> Array2<f64> {
    let mut chroma = Array2::zeros((spec.n_frames(), CHROMA_DIM));
    let classes: Vec<usize> = spec.bin_hz[1..].iter().map(|&f| pitch_class(f)).collect();
    for (m, row) in spec.power.outer_iter().enumerate() {
        for (k, &p) in row.iter().enumerate().skip(1) {
            chroma[[m, classes[k - 1]]] += p;
        }
    }
    normalize_frames_by_max(&mut chroma);
    chroma
}

/// Fold an 84-bin CQT grid onto 12 pitch classes (7 octaves summed), with
/// per-frame max normalization.
pub fn chroma_cqt(cqt_grid: &ArrayView2<f64>) -> Array2<f64> {
    let n_octaves = cqt_grid.ncols() / CHROMA_DIM;
    let mut chroma = Array2::zeros((cqt_grid.nrows(), CHROMA_DIM));
    for (m, row) in cqt_grid.outer_iter().enumerate() {
        for c in 0..CHROMA_DIM {
            let mut acc = 0.0;
            for o in 0..n_octaves {
                acc += row[c + CHROMA_DIM * o];
            }
            chroma[[m, c]] = acc;
        }
    }
    normalize_frames_by_max(&mut chroma);
    chroma
}

/// Energy-normalized chroma statistics.
///
/// Per frame: L1-normalize, quantize each value through the threshold
/// ladder, smooth every band across time with a Hann window (reflect
/// padding), then L2-normalize the frame.
pub fn chroma_cens(chroma: &ArrayView2<f64>) -> Array2<f64> {
    let (n_frames, n_classes) = chroma.dim();
    let mut quantized = Array2::zeros((n_frames, n_classes));
    for (m, row) in chroma.outer_iter().enumerate() {
        let l1: f64 = row.iter().map(|v| v.abs()).sum();
        if l1 == 0.0 {
            continue;
        }
        for (c, &v) in row.iter().enumerate() {
            let q = CENS_THRESHOLDS.iter().filter(|&&t| v / l1 > t).count();
            quantized[[m, c]] = q as f64;
        }
    }

    let window = hann_window(CENS_SMOOTH_LEN);
    let wsum: f64 = window.iter().sum();
    let half = CENS_SMOOTH_LEN as isize / 2;
    let mut smoothed = Array2::zeros((n_frames, n_classes));
    for c in 0..n_classes {
        for m in 0..n_frames as isize {
            let mut acc = 0.0;
            for (w_idx, &w) in window.iter().enumerate() {
                let t = m + w_idx as isize - half;
                let t = reflect_time(t, n_frames);
                acc += w * quantized[[t, c]];
            }
            smoothed[[m as usize, c]] = acc / wsum;
        }
    }

    for mut row in smoothed.outer_iter_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    smoothed
}

fn reflect_time(t: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = t.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

fn normalize_frames_by_max(grid: &mut Array2<f64>) {
    for mut row in grid.outer_iter_mut() {
        let max = row.iter().cloned().fold(0.0f64, f64::max);
        if max > 0.0 {
            row.mapv_inplace(|v| v / max);
        }
    }
}

/// Mean over all frames, one value per dimension.
pub fn aggregate_global(grid: &ArrayView2<f64>) -> Result<Vec<f64>, DescriptorError> {
    let n = grid.nrows();
    if n == 0 {
        return Err(DescriptorError::NoFrames);
    }
    let mut out = vec![0.0; grid.ncols()];
    for row in grid.outer_iter() {
        for (acc, &v) in out.iter_mut().zip(row.iter()) {
            *acc += v;
        }
    }
    for acc in &mut out {
        *acc /= n as f64;
    }
    Ok(out)
}

/// Mean per contiguous run of frames, concatenated over `segments` runs.
///
/// Run `r` covers frame indices `[floor(r*n/P), floor((r+1)*n/P))`; runs
/// that receive no frames contribute zeros so the output length is fixed.
pub fn aggregate_segmented(grid: &ArrayView2<f64>, segments: usize) -> Vec<f64> {
    let n = grid.nrows();
    let dim = grid.ncols();
    let mut out = vec![0.0; segments * dim];
    for r in 0..segments {
        let lo = r * n / segments;
        let hi = (r + 1) * n / segments;
        if hi <= lo {
            continue;
        }
        let chunk = &mut out[r * dim..(r + 1) * dim];
        for m in lo..hi {
            for (acc, &v) in chunk.iter_mut().zip(grid.row(m).iter()) {
                *acc += v;
            }
        }
        let count = (hi - lo) as f64;
        for acc in chunk.iter_mut() {
            *acc /= count;
        }
    }
    out
}

/// Per-frame descriptor grid for one file, before aggregation.
pub fn descriptor_frames(
    bytes: &[u8],
    kind: DescriptorKind,
    bps: BytesPerSample,
) -> Result<Array2<f64>, DescriptorError> {
    let signal = bytes_to_signal(bytes, bps)?;
    let params = FrameParams::default();
    match kind {
        DescriptorKind::Mfcc => {
            let frames = frame_signal(&signal, &params)?;
            let spec = stft_power(&frames, SAMPLE_RATE)?;
            let fb = build_mel_filterbank(SAMPLE_RATE, params.frame_len, MEL_BANDS, 0.0, SAMPLE_RATE / 2.0)?;
            let mel = apply_mel(&spec, &fb)?;
            let mel_db = power_to_db(&mel);
            mfcc(&mel_db, MFCC_DIM)
        }
        DescriptorKind::MelSpectrogram => {
            let frames = frame_signal(&signal, &params)?;
            let spec = stft_power(&frames, SAMPLE_RATE)?;
            melspectrogram(&spec)
        }
        DescriptorKind::ChromaStft => {
            let frames = frame_signal(&signal, &params)?;
            let spec = stft_power(&frames, SAMPLE_RATE)?;
            Ok(chroma_stft(&spec))
        }
        DescriptorKind::ChromaCqt => {
            let kernels = CqtKernelSet::standard(SAMPLE_RATE, signal.samples.len());
            let grid = cqt_power(&signal, &kernels, params.hop);
            Ok(chroma_cqt(&grid.view()))
        }
        DescriptorKind::ChromaCens => {
            let kernels = CqtKernelSet::standard(SAMPLE_RATE, signal.samples.len());
            let grid = cqt_power(&signal, &kernels, params.hop);
            let chroma = chroma_cqt(&grid.view());
            Ok(chroma_cens(&chroma.view()))
        }
    }
}

/// Decode, frame, run the configured descriptor, and aggregate.
pub fn extract_feature(bytes: &[u8], cfg: &DescriptorConfig) -> Result<FeatureVector, DescriptorError> {
    let grid = descriptor_frames(bytes, cfg.kind, cfg.bytes_per_sample)?;
    let values = if cfg.expanded {
        aggregate_segmented(&grid.view(), cfg.segments)
    } else {
        aggregate_global(&grid.view())?
    };
    Ok(FeatureVector {
        feature_name: cfg.feature_name(),
        values,
    })
}
