//! Raster data model, float-container and PNG I/O, and quality metrics.
//!
//! Pixel data is stored row-major and channel-interleaved (HWC) as `f32` in a
//! nominal `[0, 1]` range. Values outside that range are legal (unclipped
//! noise); non-finite values are not.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// PSNR reported when the mean squared error is exactly zero.
///
/// Keeps reports finite and sortable instead of returning infinity.
pub const PSNR_CAP_DB: f64 = 99.0;

/// A floating-point raster carrying clean, noisy, denoised or fused pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePatch {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImagePatch {
    /// Builds a patch from interleaved row-major samples.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "unsupported channel count {channels} (expected 1 or 3)"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::InvalidArgument("dimension overflow".into()))?;
        if data.len() != expected {
            return Err(Error::shape(
                "pixel buffer length",
                expected,
                data.len(),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite pixel value".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// A patch filled with a constant value.
    pub fn splat(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// (height, width, channels) triple, handy for shape checks.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_shape(&self, other: &ImagePatch) -> bool {
        self.shape() == other.shape()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Applies `f` to every sample, validating finiteness of the result.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<ImagePatch> {
        let data: Vec<f32> = self.data.iter().map(|&v| f(v)).collect();
        ImagePatch::new(self.height, self.width, self.channels, data)
    }

    /// Clamps all samples into `[0, 1]` (used before 8-bit export).
    pub fn clamp01(&self) -> ImagePatch {
        let data = self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        ImagePatch {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }

    /// Extracts the `h`x`w` window with top-left corner at (`y`, `x`).
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<ImagePatch> {
        if y + h > self.height || x + w > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {h}x{w}@({y},{x}) exceeds image {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * self.channels);
        for row in y..y + h {
            let start = (row * self.width + x) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        ImagePatch::new(h, w, self.channels, data)
    }

    pub fn flip_horizontal(&self) -> ImagePatch {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(y, x, c, self.get(y, self.width - 1 - x, c));
                }
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> ImagePatch {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(y, x, c, self.get(self.height - 1 - y, x, c));
                }
            }
        }
        out
    }

    /// Rotates 90 degrees counter-clockwise.
    pub fn rot90(&self) -> ImagePatch {
        let (h, w, ch) = (self.height, self.width, self.channels);
        let mut out = ImagePatch {
            height: w,
            width: h,
            channels: ch,
            data: vec![0.0; self.data.len()],
        };
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    out.set(w - 1 - x, y, c, self.get(y, x, c));
                }
            }
        }
        out
    }
}

/// Everything needed to score one method on one evaluation set.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    /// Arithmetic mean of the per-image PSNR values, in dB.
    pub psnr: f64,
    /// Arithmetic mean of the per-image SSIM values.
    pub ssim: f64,
    /// (image id, psnr, ssim) per evaluated image.
    pub per_image: Vec<(String, f64, f64)>,
}

impl MetricReport {
    /// Aggregates per-image entries; the list must be non-empty.
    pub fn from_entries(per_image: Vec<(String, f64, f64)>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::InvalidArgument(
                "metric report needs at least one image".into(),
            ));
        }
        let n = per_image.len() as f64;
        let psnr = per_image.iter().map(|e| e.1).sum::<f64>() / n;
        let ssim = per_image.iter().map(|e| e.2).sum::<f64>() / n;
        Ok(Self {
            psnr,
            ssim,
            per_image,
        })
    }
}

fn check_same_shape(context: &'static str, a: &ImagePatch, b: &ImagePatch) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(
            context,
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}

/// Mean squared error over all samples, in f64.
pub fn mse(a: &ImagePatch, b: &ImagePatch) -> Result<f64> {
    check_same_shape("mse", a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// Peak signal-to-noise ratio in dB; capped at [`PSNR_CAP_DB`] when MSE is 0.
pub fn psnr(a: &ImagePatch, b: &ImagePatch, peak: f64) -> Result<f64> {
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "psnr peak must be positive, got {peak}"
        )));
    }
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * ((peak * peak) / err).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Normalized 11-tap 1-D Gaussian used by [`ssim`].
pub(crate) fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-window correlation with the SSIM Gaussian.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let wo = w - SSIM_WINDOW + 1;
    let ho = h - SSIM_WINDOW + 1;
    // Horizontal pass: h rows, wo columns.
    let mut tmp = vec![0.0; h * wo];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..wo {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * row[x + i];
            }
            tmp[y * wo + x] = acc;
        }
    }
    // Vertical pass: ho rows.
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * wo + x];
            }
            out[y * wo + x] = acc;
        }
    }
    out
}

/// Mean structural similarity over all valid 11x11 windows and channels.
///
/// Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, unit dynamic range;
/// computed per channel and averaged. Symmetric in its arguments.
pub fn ssim(a: &ImagePatch, b: &ImagePatch) -> Result<f64> {
    check_same_shape("ssim", a, b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.height, a.width
        )));
    }
    let c1 = (SSIM_K1 * 1.0_f64).powi(2);
    let c2 = (SSIM_K2 * 1.0_f64).powi(2);
    let k = ssim_kernel();
    let (h, w, ch) = a.shape();

    let mut channel_sum = 0.0;
    for c in 0..ch {
        let pa: Vec<f64> = (0..h * w)
            .map(|i| a.data[i * ch + c] as f64)
            .collect();
        let pb: Vec<f64> = (0..h * w)
            .map(|i| b.data[i * ch + c] as f64)
            .collect();
        let paa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let pbb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let pab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();

        let mu_a = filter_valid(&pa, h, w, &k);
        let mu_b = filter_valid(&pb, h, w, &k);
        let m_aa = filter_valid(&paa, h, w, &k);
        let m_bb = filter_valid(&pbb, h, w, &k);
        let m_ab = filter_valid(&pab, h, w, &k);

        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = m_aa[i] - ma * ma;
            let vb = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        channel_sum += acc / mu_a.len() as f64;
    }
    Ok(channel_sum / ch as f64)
}

const FRAS_MAGIC: &[u8; 4] = b"FRAS";
const FRAS_VERSION: u16 = 1;

/// Writes the float raster container: magic "FRAS", u16 version, u32
/// height/width/channels, then f32 samples, all little-endian.
pub fn save_raster(img: &ImagePatch, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>, bytes: &[u8]| -> Result<()> {
        out.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    write(&mut out, FRAS_MAGIC)?;
    write(&mut out, &FRAS_VERSION.to_le_bytes())?;
    write(&mut out, &(img.height as u32).to_le_bytes())?;
    write(&mut out, &(img.width as u32).to_le_bytes())?;
    write(&mut out, &(img.channels as u32).to_le_bytes())?;
    for v in &img.data {
        write(&mut out, &v.to_le_bytes())?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a float raster container written by [`save_raster`].
pub fn load_raster(path: impl AsRef<Path>) -> Result<ImagePatch> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rd = BufReader::new(file);

    let mut magic = [0u8; 4];
    rd.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "truncated header"))?;
    if &magic != FRAS_MAGIC {
        return Err(Error::format(path, "bad magic (not a FRAS file)"));
    }
    let mut u16buf = [0u8; 2];
    rd.read_exact(&mut u16buf)
        .map_err(|_| Error::format(path, "truncated header"))?;
    let version = u16::from_le_bytes(u16buf);
    if version != FRAS_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |rd: &mut BufReader<File>| -> Result<u32> {
        rd.read_exact(&mut u32buf)
            .map_err(|_| Error::format(path, "truncated header"))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let height = read_u32(&mut rd)? as usize;
    let width = read_u32(&mut rd)? as usize;
    let channels = read_u32(&mut rd)? as usize;
    let count = (height as u64)
        .checked_mul(width as u64)
        .and_then(|n| n.checked_mul(channels as u64))
        .filter(|&n| n <= (1 << 31))
        .ok_or_else(|| Error::format(path, "dimension overflow"))? as usize;

    let mut bytes = vec![0u8; count * 4];
    rd.read_exact(&mut bytes)
        .map_err(|_| Error::format(path, "truncated pixel data"))?;
    let mut trailing = [0u8; 1];
    if rd.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after pixel data"));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::format(path, "non-finite pixel value"));
    }
    ImagePatch::new(height, width, channels, data)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Loads an 8-bit grayscale or RGB PNG, mapping samples to `[0, 1]` by /255.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImagePatch> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "only 8-bit PNGs are supported"));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::format(
                path,
                format!("unsupported channel count ({other:?})"),
            ))
        }
    };
    let n = info.width as usize * info.height as usize * channels;
    let data = buf[..n].iter().map(|&b| b as f32 / 255.0).collect();
    ImagePatch::new(info.height as usize, info.width as usize, channels, data)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Saves as 8-bit PNG: samples are clamped to `[0, 1]` and rounded half-up.
pub fn save_png(img: &ImagePatch, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => {
            return Err(Error::InvalidArgument(format!(
                "unsupported channel count {c} for PNG export"
            )))
        }
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
        .collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_patch(seed: u64, h: usize, w: usize, ch: usize) -> ImagePatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * ch).map(|_| rng.random::<f32>()).collect();
        ImagePatch::new(h, w, ch, data).unwrap()
    }

    #[test]
    fn patch_validates_length_and_finiteness() {
        assert!(ImagePatch::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImagePatch::new(2, 2, 1, vec![f32::NAN; 4]).is_err());
        assert!(ImagePatch::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImagePatch::new(0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn psnr_identical_hits_cap() {
        let a = random_patch(1, 8, 8, 3);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_constant_offsets_match_hand_computation() {
        // offset 16/255: 10*log10(255^2/16^2) = 24.0484 dB
        let a = random_patch(2, 16, 16, 1);
        let b = a.map(|v| v + 16.0 / 255.0).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 24.048).abs() < 1e-3);
        // offset 1/255: 20*log10(255) = 48.1308 dB
        let c = a.map(|v| v + 1.0 / 255.0).unwrap();
        assert!((psnr(&a, &c, 1.0).unwrap() - 48.131).abs() < 1e-3);
    }

    #[test]
    fn psnr_shape_mismatch_is_error() {
        let a = random_patch(3, 8, 8, 1);
        let b = random_patch(3, 8, 9, 1);
        assert!(psnr(&a, &b, 1.0).is_err());
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let a = random_patch(4, 16, 16, 1);
        let mut last = f64::INFINITY;
        for amp in [1.0f32, 4.0, 16.0] {
            let b = a.map(|v| v + amp / 255.0).unwrap();
            let p = psnr(&a, &b, 1.0).unwrap();
            assert!(p < last, "psnr must decrease as amplitude grows");
            last = p;
        }
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = random_patch(5, 16, 16, 3);
        let s = ssim(&a, &a).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "got {s}");
    }

    #[test]
    fn ssim_checkerboard_negative_is_dissimilar() {
        let mut data = vec![0.0f32; 16 * 16];
        for y in 0..16 {
            for x in 0..16 {
                data[y * 16 + x] = ((x + y) % 2) as f32;
            }
        }
        let a = ImagePatch::new(16, 16, 1, data).unwrap();
        let b = a.map(|v| 1.0 - v).unwrap();
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.1, "checkerboard vs complement should be dissimilar, got {s}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = random_patch(6, 10, 12, 1);
        assert!(ssim(&a, &a).is_err());
    }

    /// Reference SSIM: direct per-window 2-D loops, no separable filtering.
    #[allow(clippy::needless_range_loop)]
    fn ssim_reference(a: &ImagePatch, b: &ImagePatch) -> f64 {
        let k1d = ssim_kernel();
        let mut k2d = [[0.0f64; SSIM_WINDOW]; SSIM_WINDOW];
        for (i, row) in k2d.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = k1d[i] * k1d[j];
            }
        }
        let c1 = (SSIM_K1_TEST * 1.0f64).powi(2);
        let c2 = (SSIM_K2_TEST * 1.0f64).powi(2);
        let (h, w, ch) = a.shape();
        let mut total = 0.0;
        for c in 0..ch {
            let mut acc = 0.0;
            let mut count = 0usize;
            for y0 in 0..=h - SSIM_WINDOW {
                for x0 in 0..=w - SSIM_WINDOW {
                    let (mut ma, mut mb, mut maa, mut mbb, mut mab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
                            let kv = k2d[dy][dx];
                            let va = a.get(y0 + dy, x0 + dx, c) as f64;
                            let vb = b.get(y0 + dy, x0 + dx, c) as f64;
                            ma += kv * va;
                            mb += kv * vb;
                            maa += kv * va * va;
                            mbb += kv * vb * vb;
                            mab += kv * va * vb;
                        }
                    }
                    let (va, vb, cov) = (maa - ma * ma, mbb - mb * mb, mab - ma * mb);
                    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / ch as f64
    }

    const SSIM_K1_TEST: f64 = 0.01;
    const SSIM_K2_TEST: f64 = 0.03;

    #[test]
    fn ssim_matches_direct_window_reference() {
        let a = random_patch(7, 14, 17, 3);
        let b = random_patch(8, 14, 17, 3);
        let fast = ssim(&a, &b).unwrap();
        let slow = ssim_reference(&a, &b);
        assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
    }

    #[test]
    fn raster_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.fras");
        let a = random_patch(9, 16, 16, 3);
        save_raster(&a, &path).unwrap();
        let b = load_raster(&path).unwrap();
        assert_eq!(a, b);
        // Re-saving produces identical bytes.
        let path2 = dir.path().join("q.fras");
        save_raster(&b, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn raster_rejects_corrupt_headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fras");
        std::fs::write(&path, b"JUNKJUNKJUNK").unwrap();
        assert!(load_raster(&path).is_err());
        std::fs::write(&path, b"FR").unwrap();
        assert!(load_raster(&path).is_err());
    }

    #[test]
    fn png_value_mapping_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.png");
        let img = ImagePatch::new(1, 3, 1, vec![1.0, 128.0 / 255.0, 0.0]).unwrap();
        save_png(&img, &path).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back.data()[0], 1.0);
        assert_eq!(back.data()[1], 128.0 / 255.0);
        assert_eq!(back.data()[2], 0.0);
    }

    #[test]
    fn metric_report_aggregates_means() {
        let r = MetricReport::from_entries(vec![
            ("a".into(), 30.0, 0.9),
            ("b".into(), 34.0, 0.8),
        ])
        .unwrap();
        assert!((r.psnr - 32.0).abs() < 1e-12);
        assert!((r.ssim - 0.85).abs() < 1e-12);
        assert!(MetricReport::from_entries(vec![]).is_err());
    }

    proptest! {
        #[test]
        fn psnr_is_symmetric(seed in 0u64..1000) {
            let a = random_patch(seed, 12, 12, 1);
            let b = random_patch(seed + 1, 12, 12, 1);
            let ab = psnr(&a, &b, 1.0).unwrap();
            let ba = psnr(&b, &a, 1.0).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn ssim_is_symmetric(seed in 0u64..200) {
            let a = random_patch(seed, 12, 12, 1);
            let b = random_patch(seed + 7, 12, 12, 1);
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
        }
    }
}
