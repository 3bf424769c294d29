//! Static comparison features: byte bigrams, a PE structural hash, and a
//! Gabor-bank image descriptor.

use num_complex::Complex64;
use rustfft::FftPlanner;
use sha1::{Digest, Sha1};
use thiserror::Error;

/// Number of distinct byte bigrams.
pub const BIGRAM_DIM: usize = 65536;
/// Length of the structural hash vector (one entry per hex digit).
pub const PEHASH_DIM: usize = 40;
/// Length of the image descriptor.
pub const GIST_DIM: usize = 320;

/// Side length images are resampled to before filtering.
const GIST_IMAGE_SIZE: usize = 64;
/// Averaging grid per filter (4x4 blocks).
const GIST_GRID: usize = 4;
/// Orientation counts for the three filter scales; totals 20 subbands.
const GIST_ORIENTATIONS: [usize; 3] = [8, 6, 6];

#[derive(Debug, Error)]
pub enum PeError {
    #[error("buffer of {0} bytes is too small to hold a DOS header")]
    TooSmall(usize),
    #[error("not a PE file: {0}")]
    NotPe(&'static str),
    #[error("PE header truncated at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("section table needs {needed} bytes at offset {offset} but only {available} remain")]
    SectionTableOverflow {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("unsupported optional header magic {0:#06x}")]
    UnsupportedOptionalMagic(u16),
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot build an image from an empty byte stream")]
    EmptyInput,
    #[error("image {width}x{height} is too small for the descriptor (minimum 8x8)")]
    TooSmallForGist { width: usize, height: usize },
}

/// Overlapping byte-pair counts: index `first * 256 + second`.
///
/// The counts sum to `max(len - 1, 0)`.
pub fn byte_bigrams(bytes: &[u8]) -> Vec<u32> {
    let mut counts = vec![0u32; BIGRAM_DIM];
    for pair in bytes.windows(2) {
        counts[pair[0] as usize * 256 + pair[1] as usize] += 1;
    }
    counts
}

/// One section table entry's structural attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectionSummary {
    pub virtual_address: u32,
    pub raw_size: u32,
    pub characteristics: u32,
}

/// The PE structural attributes that feed the pehash vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeSummary {
    pub image_characteristics: u16,
    pub subsystem: u16,
    pub stack_commit: u64,
    pub heap_commit: u64,
    pub sections: Vec<SectionSummary>,
}

fn read_u16(bytes: &[u8], offset: usize) -> Result<u16, PeError> {
    let end = offset.checked_add(2).ok_or(PeError::Truncated { offset })?;
    if end > bytes.len() {
        return Err(PeError::Truncated { offset });
    }
    Ok(u16::from_le_bytes([bytes[offset], bytes[offset + 1]]))
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, PeError> {
    let end = offset.checked_add(4).ok_or(PeError::Truncated { offset })?;
    if end > bytes.len() {
        return Err(PeError::Truncated { offset });
    }
    Ok(u32::from_le_bytes(
        bytes[offset..end].try_into().expect("4 bytes"),
    ))
}

fn read_u64(bytes: &[u8], offset: usize) -> Result<u64, PeError> {
    let end = offset.checked_add(8).ok_or(PeError::Truncated { offset })?;
    if end > bytes.len() {
        return Err(PeError::Truncated { offset });
    }
    Ok(u64::from_le_bytes(
        bytes[offset..end].try_into().expect("8 bytes"),
    ))
}

/// Parse the structural attributes out of a PE image.
///
/// Both PE32 and PE32+ optional headers are understood. Every read is
/// bounds-checked, so truncated buffers produce errors rather than panics.
pub fn parse_pe_summary(bytes: &[u8]) -> Result<PeSummary, PeError> {
    if bytes.len() < 64 {
        return Err(PeError::TooSmall(bytes.len()));
    }
    if &bytes[0..2] != b"MZ" {
        return Err(PeError::NotPe("missing MZ magic"));
    }
    let pe_offset = read_u32(bytes, 0x3C)? as usize;
    let sig_end = pe_offset.checked_add(4).ok_or(PeError::Truncated {
        offset: pe_offset,
    })?;
    if sig_end > bytes.len() {
        return Err(PeError::Truncated { offset: pe_offset });
    }
    if &bytes[pe_offset..sig_end] != b"PE\0\0" {
        return Err(PeError::NotPe("missing PE signature"));
    }

    let coff = pe_offset + 4;
    let n_sections = read_u16(bytes, coff + 2)? as usize;
    let opt_size = read_u16(bytes, coff + 16)? as usize;
    let image_characteristics = read_u16(bytes, coff + 18)?;

    let opt = coff + 20;
    let magic = read_u16(bytes, opt)?;
    let (subsystem, stack_commit, heap_commit) = match magic {
        // PE32
        0x10B => (
            read_u16(bytes, opt + 68)?,
            read_u32(bytes, opt + 76)? as u64,
            read_u32(bytes, opt + 84)? as u64,
        ),
        // PE32+
        0x20B => (
            read_u16(bytes, opt + 68)?,
            read_u64(bytes, opt + 80)?,
            read_u64(bytes, opt + 96)?,
        ),
        other => return Err(PeError::UnsupportedOptionalMagic(other)),
    };

    let table = opt.checked_add(opt_size).ok_or(PeError::Truncated { offset: opt })?;
    let needed = n_sections * 40;
    if table > bytes.len() || needed > bytes.len() - table {
        return Err(PeError::SectionTableOverflow {
            offset: table,
            needed,
            available: bytes.len().saturating_sub(table),
        });
    }
    let mut sections = Vec::with_capacity(n_sections);
    for s in 0..n_sections {
        let base = table + s * 40;
        sections.push(SectionSummary {
            virtual_address: read_u32(bytes, base + 12)?,
            raw_size: read_u32(bytes, base + 16)?,
            characteristics: read_u32(bytes, base + 36)?,
        });
    }

    Ok(PeSummary {
        image_characteristics,
        subsystem,
        stack_commit,
        heap_commit,
        sections,
    })
}

/// SHA-1 over the canonical attribute string, as 40 ASCII codes.
///
/// The canonical string is the big-endian concatenation of image
/// characteristics, subsystem, stack commit, heap commit, then per section
/// its virtual address, raw size, and characteristics. The digest's
/// lowercase hex form is returned one character code per entry.
pub fn pehash_vector(summary: &PeSummary) -> Vec<f64> {
    pehash_hex(summary).bytes().map(|c| c as f64).collect()
}

/// The 40-character lowercase hex hash behind [`pehash_vector`].
pub fn pehash_hex(summary: &PeSummary) -> String {
    let mut canonical = Vec::with_capacity(20 + summary.sections.len() * 12);
    canonical.extend_from_slice(&summary.image_characteristics.to_be_bytes());
    canonical.extend_from_slice(&summary.subsystem.to_be_bytes());
    canonical.extend_from_slice(&summary.stack_commit.to_be_bytes());
    canonical.extend_from_slice(&summary.heap_commit.to_be_bytes());
    for section in &summary.sections {
        canonical.extend_from_slice(&section.virtual_address.to_be_bytes());
        canonical.extend_from_slice(&section.raw_size.to_be_bytes());
        canonical.extend_from_slice(&section.characteristics.to_be_bytes());
    }
    let digest = Sha1::digest(&canonical);
    let mut hex = String::with_capacity(40);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

/// A byte stream rendered as a grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

fn width_for_len(len: usize) -> usize {
    const KB: usize = 1024;
    match len {
        l if l < 10 * KB => 32,
        l if l < 30 * KB => 64,
        l if l < 60 * KB => 128,
        l if l < 100 * KB => 256,
        l if l < 200 * KB => 384,
        l if l < 500 * KB => 512,
        l if l < 1000 * KB => 768,
        _ => 1024,
    }
}

/// Lay the bytes out as a grayscale image, one byte per pixel.
///
/// The width is chosen from the file size and the final row is zero-padded.
pub fn binary_to_image(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    if bytes.is_empty() {
        return Err(ImageError::EmptyInput);
    }
    let width = width_for_len(bytes.len());
    let height = bytes.len().div_ceil(width);
    let mut pixels = bytes.to_vec();
    pixels.resize(width * height, 0);
    Ok(GrayImage {
        width,
        height,
        pixels,
    })
}

/// Bilinear resample to a square grid of `n x n` intensities in `[0, 1]`.
fn resize_bilinear(img: &GrayImage, n: usize) -> Vec<f64> {
    let (w, h) = (img.width, img.height);
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        let src_y = ((y as f64 + 0.5) * h as f64 / n as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = src_y.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = src_y - y0 as f64;
        for x in 0..n {
            let src_x =
                ((x as f64 + 0.5) * w as f64 / n as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = src_x.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = src_x - x0 as f64;
            let p = |yy: usize, xx: usize| img.pixels[yy * w + xx] as f64 / 255.0;
            let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
            let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
            out[y * n + x] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

/// Signed frequency coordinate of FFT bin `u` for a length-`n` transform.
fn signed_freq(u: usize, n: usize) -> f64 {
    if u < n / 2 {
        u as f64
    } else {
        u as f64 - n as f64
    }
}

/// Band-pass Gabor transfer functions on the `n x n` frequency grid.
///
/// Three scales carry 8, 6, and 6 orientations for 20 filters total. Each
/// filter's DC gain is forced to zero so constant images produce no
/// response.
fn build_gabor_bank(n: usize) -> Vec<Vec<f64>> {
    let mut bank = Vec::with_capacity(GIST_ORIENTATIONS.iter().sum());
    for (scale, &n_orient) in GIST_ORIENTATIONS.iter().enumerate() {
        let radial_width = 0.35;
        let center_freq = 0.3 / 1.85_f64.powi(scale as i32);
        let angular_width = 16.0 * (n_orient * n_orient) as f64 / 1024.0;
        for j in 0..n_orient {
            let theta = std::f64::consts::PI * j as f64 / n_orient as f64;
            let mut filter = vec![0.0; n * n];
            for v in 0..n {
                let fy = signed_freq(v, n);
                for u in 0..n {
                    let fx = signed_freq(u, n);
                    let fr = fx.hypot(fy);
                    let mut tr = fy.atan2(fx) + theta;
                    if tr > std::f64::consts::PI {
                        tr -= 2.0 * std::f64::consts::PI;
                    }
                    let radial = fr / (n as f64 * center_freq) - 1.0;
                    let g = (-10.0 * radial_width * radial * radial
                        - 2.0 * angular_width * std::f64::consts::PI * tr * tr)
                        .exp();
                    filter[v * n + u] = g;
                }
            }
            filter[0] = 0.0;
            bank.push(filter);
        }
    }
    bank
}

fn fft2(data: &mut [Complex64], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    // rows
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    // columns
    let mut col = vec![Complex64::default(); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = data[r * n + c];
        }
        fft.process(&mut col);
        for r in 0..n {
            data[r * n + c] = col[r];
        }
    }
}

/// Global image descriptor: per-filter response magnitudes averaged over a
/// 4x4 spatial grid, concatenated across the 20-filter Gabor bank.
pub fn gist_vector(img: &GrayImage) -> Result<Vec<f64>, ImageError> {
    if img.width < 8 || img.height < 8 {
        return Err(ImageError::TooSmallForGist {
            width: img.width,
            height: img.height,
        });
    }
    let n = GIST_IMAGE_SIZE;
    let resized = resize_bilinear(img, n);
    let mut spectrum: Vec<Complex64> = resized
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    fft2(&mut spectrum, n, false);

    let bank = build_gabor_bank(n);
    let block = n / GIST_GRID;
    let mut out = Vec::with_capacity(GIST_DIM);
    let mut response = vec![Complex64::default(); n * n];
    for filter in &bank {
        for (slot, (&s, &g)) in response.iter_mut().zip(spectrum.iter().zip(filter)) {
            *slot = s * g;
        }
        fft2(&mut response, n, true);
        let scale = 1.0 / (n * n) as f64;
        for gy in 0..GIST_GRID {
            for gx in 0..GIST_GRID {
                let mut acc = 0.0;
                for y in gy * block..(gy + 1) * block {
                    for x in gx * block..(gx + 1) * block {
                        acc += response[y * n + x].norm() * scale;
                    }
                }
                out.push(acc / (block * block) as f64);
            }
        }
    }
    Ok(out)
}
