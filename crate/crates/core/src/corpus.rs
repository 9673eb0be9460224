//! Procedural clean-image generator.
//!
//! Produces a small deterministic set of textures (gradients, gratings,
//! mosaics, smooth blobs, geometric shapes) so experiments and tests run
//! without downloading any data. The mix deliberately contains both smooth
//! regions and sharp edges: pixel-wise fusion is only interesting when
//! denoisers disagree locally.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{save_png, ImagePatch};
use crate::noise::derive_seed;
use crate::Result;

/// Generates `count` textures of `size` x `size` pixels and writes them as
/// 8-bit PNGs named `tex_NNN.png`. Returns the written paths in index order.
pub fn generate_corpus(
    dir: impl AsRef<Path>,
    count: usize,
    size: usize,
    channels: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let img = generate_texture(size, channels, derive_seed(seed, i as u64), i)?;
        let path = dir.join(format!("tex_{i:03}.png"));
        save_png(&img, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// One texture; `index` cycles through the texture families.
pub fn generate_texture(
    size: usize,
    channels: usize,
    seed: u64,
    index: usize,
) -> Result<ImagePatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = match index % 5 {
        0 => gratings(size, &mut rng),
        1 => shapes(size, &mut rng),
        2 => mosaic(size, &mut rng),
        3 => smooth_blobs(size, &mut rng),
        _ => stripes(size, &mut rng),
    };
    let data: Vec<f32> = if channels == 1 {
        plane.iter().map(|&v| v as f32).collect()
    } else {
        // Correlated color planes: shared luminance with mild per-channel tilt.
        let tilt: Vec<(f64, f64)> = (0..channels)
            .map(|_| (rng.random_range(-0.12..0.12), rng.random_range(-0.12..0.12)))
            .collect();
        let mut data = Vec::with_capacity(size * size * channels);
        for y in 0..size {
            for x in 0..size {
                let v = plane[y * size + x];
                for &(ty, tx) in &tilt {
                    let u = v
                        + ty * (y as f64 / size as f64 - 0.5)
                        + tx * (x as f64 / size as f64 - 0.5);
                    data.push(u.clamp(0.0, 1.0) as f32);
                }
            }
        }
        data
    };
    ImagePatch::new(size, size, channels, data)
}

fn gratings(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let terms: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(1.0..6.0),
                rng.random_range(1.0..6.0),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.08..0.22),
            )
        })
        .collect();
    let mut plane = vec![0.5; size * size];
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
            let mut val = 0.5;
            for &(fx, fy, phase, amp) in &terms {
                val += amp * (2.0 * PI * (fx * u + fy * v) + phase).sin();
            }
            plane[y * size + x] = val.clamp(0.0, 1.0);
        }
    }
    plane
}

fn shapes(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (gx, gy) = (rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
    let base = rng.random_range(0.3..0.7);
    let mut plane: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = (i / size, i % size);
            (base + gx * (x as f64 / size as f64 - 0.5) + gy * (y as f64 / size as f64 - 0.5))
                .clamp(0.0, 1.0)
        })
        .collect();
    let n_circ = rng.random_range(3..7);
    for _ in 0..n_circ {
        let cy = rng.random_range(0.0..size as f64);
        let cx = rng.random_range(0.0..size as f64);
        let r = rng.random_range(size as f64 * 0.06..size as f64 * 0.25);
        let value: f64 = rng.random_range(0.0..1.0);
        for y in 0..size {
            for x in 0..size {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                // One-pixel soft edge to avoid pure aliasing.
                let alpha = (0.5 + (r - d)).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    let i = y * size + x;
                    plane[i] = plane[i] * (1.0 - alpha) + value * alpha;
                }
            }
        }
    }
    plane
}

fn mosaic(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let k = rng.random_range(6..14);
    let sites: Vec<(f64, f64, f64)> = (0..k)
        .map(|_| {
            (
                rng.random_range(0.0..size as f64),
                rng.random_range(0.0..size as f64),
                rng.random_range(0.05..0.95),
            )
        })
        .collect();
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64, (i % size) as f64);
            sites
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - y).powi(2) + (a.1 - x).powi(2);
                    let db = (b.0 - y).powi(2) + (b.1 - x).powi(2);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap()
                .2
        })
        .collect()
}

fn smooth_blobs(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Coarse value-noise grid, bilinearly upsampled.
    let grid = (size / 8).max(2);
    let coarse: Vec<f64> = (0..(grid + 1) * (grid + 1))
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let cell = size as f64 / grid as f64;
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64, (i % size) as f64);
            let (gy, gx) = (y / cell, x / cell);
            let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
            let (fy, fx) = (gy - y0 as f64, gx - x0 as f64);
            let (y0, x0) = (y0.min(grid - 1), x0.min(grid - 1));
            let at = |yy: usize, xx: usize| coarse[yy * (grid + 1) + xx];
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
            let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
            top * (1.0 - fy) + bot * fy
        })
        .collect()
}

fn stripes(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let vertical = rng.random_bool(0.5);
    let mut edges = vec![0usize];
    let mut pos = 0usize;
    while pos < size {
        pos += rng.random_range(3..size / 3 + 4);
        edges.push(pos.min(size));
    }
    let values: Vec<f64> = (0..edges.len()).map(|_| rng.random_range(0.0..1.0)).collect();
    let band = |coord: usize| -> f64 {
        let idx = edges.iter().rposition(|&e| e <= coord).unwrap_or(0);
        values[idx]
    };
    (0..size * size)
        .map(|i| {
            let (y, x) = (i / size, i % size);
            if vertical {
                band(x)
            } else {
                band(y)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::load_png;

    #[test]
    fn corpus_is_deterministic_and_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let a = generate_corpus(dir.path().join("a"), 5, 48, 1, 9).unwrap();
        let b = generate_corpus(dir.path().join("b"), 5, 48, 1, 9).unwrap();
        assert_eq!(a.len(), 5);
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
        }
        let img = load_png(&a[0]).unwrap();
        assert_eq!(img.shape(), (48, 48, 1));
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn textures_have_structure() {
        // Each family should produce non-constant images.
        for i in 0..5 {
            let img = generate_texture(32, 1, 100 + i as u64, i).unwrap();
            let mean: f32 = img.data().iter().sum::<f32>() / img.data().len() as f32;
            let var: f32 = img
                .data()
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f32>()
                / img.data().len() as f32;
            assert!(var > 1e-4, "texture family {i} is flat");
        }
    }

    #[test]
    fn rgb_corpus_has_three_channels() {
        let img = generate_texture(24, 3, 4, 1).unwrap();
        assert_eq!(img.channels(), 3);
    }
}
