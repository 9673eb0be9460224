//! Noise synthesis: AWGN at fixed levels, signal-dependent heteroscedastic
//! noise, and spatially composite noise fields, plus dataset generation.
//!
//! Every operation is a pure function of `(inputs, seed)`. Noise is never
//! clipped: clean data stays in `[0, 1]` but noisy data may leave it, and
//! downstream consumers must accept out-of-range samples.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::image::{load_png, load_raster, save_raster, ImagePatch};
use crate::{Error, Result};

/// Axis-aligned rectangle, `(y, x)` top-left corner plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

/// One tile of a composite noise field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub rect: Rect,
    pub spec: NoiseSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Awgn,
    Heteroscedastic,
    Composite,
}

/// Declarative description of a noise field.
///
/// `sigma` is interpreted on the 0-255 scale; `sigma_s`/`sigma_c` on the
/// unit scale (per-pixel variance `y * sigma_s^2 + sigma_c^2`). For
/// composite specs, region `i` is synthesized with seed `seed + i`
/// (wrapping), and the nested specs' own seeds are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub sigma_s: f64,
    #[serde(default)]
    pub sigma_c: f64,
    #[serde(default)]
    pub regions: Vec<Region>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn awgn(sigma: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Awgn,
            sigma,
            sigma_s: 0.0,
            sigma_c: 0.0,
            regions: Vec::new(),
            seed,
        }
    }

    pub fn heteroscedastic(sigma_s: f64, sigma_c: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Heteroscedastic,
            sigma: 0.0,
            sigma_s,
            sigma_c,
            regions: Vec::new(),
            seed,
        }
    }

    pub fn composite(regions: Vec<Region>, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Composite,
            sigma: 0.0,
            sigma_s: 0.0,
            sigma_c: 0.0,
            regions,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 || self.sigma_s < 0.0 || self.sigma_c < 0.0 {
            return Err(Error::InvalidArgument(
                "noise sigma values must be non-negative".into(),
            ));
        }
        if self.kind == NoiseKind::Awgn && self.sigma > 75.0 {
            return Err(Error::InvalidArgument(format!(
                "awgn sigma {} outside supported range [0, 75]",
                self.sigma
            )));
        }
        match self.kind {
            NoiseKind::Composite => {
                if self.regions.is_empty() {
                    return Err(Error::InvalidArgument(
                        "composite noise spec needs at least one region".into(),
                    ));
                }
                for r in &self.regions {
                    if r.rect.height == 0 || r.rect.width == 0 {
                        return Err(Error::InvalidArgument("empty composite region".into()));
                    }
                    r.spec.validate()?;
                }
            }
            NoiseKind::Awgn | NoiseKind::Heteroscedastic => {}
        }
        Ok(())
    }

    /// Same spec with a different base seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.seed = seed;
        s
    }
}

/// SplitMix64 step; used to derive per-entry seeds from a base seed.
///
/// The result is masked to 63 bits so derived seeds survive a round trip
/// through TOML integers.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) & 0x7FFF_FFFF_FFFF_FFFF
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation `sigma/255`.
///
/// The output is not clipped. Deterministic given the seed.
pub fn add_awgn(clean: &ImagePatch, sigma: f64, seed: u64) -> Result<ImagePatch> {
    if sigma < 0.0 {
        return Err(Error::InvalidArgument(format!("negative sigma {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(clean.clone());
    }
    let std = sigma / 255.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = clean
        .data()
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            v + (z * std) as f32
        })
        .collect();
    ImagePatch::new(clean.height(), clean.width(), clean.channels(), data)
}

/// Adds zero-mean Gaussian noise with per-sample variance
/// `y * sigma_s^2 + sigma_c^2` (signal-dependent camera-style model).
pub fn add_heteroscedastic(
    clean: &ImagePatch,
    sigma_s: f64,
    sigma_c: f64,
    seed: u64,
) -> Result<ImagePatch> {
    if sigma_s < 0.0 || sigma_c < 0.0 {
        return Err(Error::InvalidArgument(
            "sigma_s and sigma_c must be non-negative".into(),
        ));
    }
    if sigma_s == 0.0 && sigma_c == 0.0 {
        return Ok(clean.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = clean
        .data()
        .iter()
        .map(|&v| {
            let var = (v.max(0.0) as f64) * sigma_s * sigma_s + sigma_c * sigma_c;
            let z: f64 = rng.sample(StandardNormal);
            v + (z * var.sqrt()) as f32
        })
        .collect();
    ImagePatch::new(clean.height(), clean.width(), clean.channels(), data)
}

/// Applies a composite spec: each region receives its sub-spec's noise
/// independently, with region `i` seeded by `spec.seed + i` (wrapping).
///
/// The regions must tile the image exactly; overlap or uncovered pixels are
/// an error. Noise within each region is sampled in the region's own
/// row-major order, so cropping the output to a region equals applying that
/// region's spec to the cropped clean input with the same seed.
pub fn add_composite(clean: &ImagePatch, spec: &NoiseSpec) -> Result<ImagePatch> {
    if spec.kind != NoiseKind::Composite {
        return Err(Error::InvalidArgument(
            "add_composite requires a composite spec".into(),
        ));
    }
    spec.validate()?;
    let (h, w, ch) = clean.shape();
    let mut covered = vec![false; h * w];
    for r in &spec.regions {
        let rc = r.rect;
        if rc.y + rc.height > h || rc.x + rc.width > w {
            return Err(Error::InvalidArgument(format!(
                "region {rc:?} exceeds image {h}x{w}"
            )));
        }
        for y in rc.y..rc.y + rc.height {
            for x in rc.x..rc.x + rc.width {
                if covered[y * w + x] {
                    return Err(Error::InvalidArgument(format!(
                        "composite regions overlap at ({y},{x})"
                    )));
                }
                covered[y * w + x] = true;
            }
        }
    }
    if !covered.iter().all(|&c| c) {
        return Err(Error::InvalidArgument(
            "composite regions do not cover the image".into(),
        ));
    }

    let mut out = clean.clone();
    for (i, r) in spec.regions.iter().enumerate() {
        let rc = r.rect;
        let sub_clean = clean.crop(rc.y, rc.x, rc.height, rc.width)?;
        let seed = spec.seed.wrapping_add(i as u64);
        let noisy = apply_with_seed(&r.spec, &sub_clean, seed)?;
        for y in 0..rc.height {
            for x in 0..rc.width {
                for c in 0..ch {
                    out.set(rc.y + y, rc.x + x, c, noisy.get(y, x, c));
                }
            }
        }
    }
    Ok(out)
}

/// Applies `spec` with its own base seed.
pub fn apply(spec: &NoiseSpec, clean: &ImagePatch) -> Result<ImagePatch> {
    apply_with_seed(spec, clean, spec.seed)
}

/// Applies `spec` with an explicit seed (the spec's own seed is ignored).
pub fn apply_with_seed(spec: &NoiseSpec, clean: &ImagePatch, seed: u64) -> Result<ImagePatch> {
    match spec.kind {
        NoiseKind::Awgn => add_awgn(clean, spec.sigma, seed),
        NoiseKind::Heteroscedastic => add_heteroscedastic(clean, spec.sigma_s, spec.sigma_c, seed),
        NoiseKind::Composite => add_composite(clean, &spec.with_seed(seed)),
    }
}

/// One (noisy, clean) pair of a generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub noisy: PathBuf,
    pub clean: PathBuf,
    pub seed: u64,
}

/// Dataset manifest: the generating spec plus the file pair list.
///
/// Paths are stored relative to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub patch: usize,
    pub spec: NoiseSpec,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

pub const MANIFEST_FORMAT: &str = "fusebench-manifest-v1";
pub const MANIFEST_FILE: &str = "manifest.toml";

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest =
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::format(path, format!("unknown format `{}`", m.format)));
        }
        m.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string(self)
            .map_err(|e| Error::InvalidArgument(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn noisy_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.noisy)
    }

    pub fn clean_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.clean)
    }

    /// Loads every (noisy, clean) pair into memory.
    pub fn load_pairs(&self) -> Result<Vec<(String, ImagePatch, ImagePatch)>> {
        self.entries
            .iter()
            .map(|e| {
                Ok((
                    e.id.clone(),
                    load_raster(self.noisy_path(e))?,
                    load_raster(self.clean_path(e))?,
                ))
            })
            .collect()
    }
}

/// Lists the loadable images (`.png` or `.fras`) in a directory, sorted by
/// file name for determinism.
pub fn list_clean_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = BTreeSet::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        match path.extension().and_then(|e| e.to_str()) {
            Some("png") | Some("fras") => {
                names.insert(path);
            }
            _ => {}
        }
    }
    Ok(names.into_iter().collect())
}

fn load_clean(path: &Path) -> Result<ImagePatch> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => load_png(path),
        Some("fras") => load_raster(path),
        _ => Err(Error::format(path, "unsupported clean image format")),
    }
}

/// Synthesizes `count` (noisy, clean) float-raster pairs from random crops of
/// the images in `clean_dir` and writes them plus a manifest into `out_dir`.
///
/// Entry `i` uses seed `derive_seed(spec.seed, i)` for both crop selection
/// and noise synthesis; re-running with the same configuration reproduces
/// byte-identical files.
pub fn make_dataset(
    clean_dir: impl AsRef<Path>,
    spec: &NoiseSpec,
    patch: usize,
    count: usize,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    spec.validate()?;
    if patch == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        patch,
        spec: spec.clone(),
        entries: Vec::with_capacity(count),
        base_dir: out_dir.to_path_buf(),
    };

    if count > 0 {
        let sources: Vec<(PathBuf, ImagePatch)> = list_clean_images(&clean_dir)?
            .into_iter()
            .map(|p| load_clean(&p).map(|img| (p, img)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|(_, img)| img.height() >= patch && img.width() >= patch)
            .collect();
        if sources.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no image in {} is at least {patch}x{patch}",
                clean_dir.as_ref().display()
            )));
        }

        for i in 0..count {
            let seed = derive_seed(spec.seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, img) = &sources[rng.random_range(0..sources.len())];
            let y = rng.random_range(0..=img.height() - patch);
            let x = rng.random_range(0..=img.width() - patch);
            let clean = img.crop(y, x, patch, patch)?;
            let noisy = apply_with_seed(spec, &clean, seed)?;

            let id = format!("patch_{i:04}");
            let noisy_rel = PathBuf::from(format!("{id}_noisy.fras"));
            let clean_rel = PathBuf::from(format!("{id}_clean.fras"));
            save_raster(&noisy, out_dir.join(&noisy_rel))?;
            save_raster(&clean, out_dir.join(&clean_rel))?;
            manifest.entries.push(ManifestEntry {
                id,
                noisy: noisy_rel,
                clean: clean_rel,
                seed,
            });
        }
    }

    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    fn flat(h: usize, w: usize, v: f32) -> ImagePatch {
        ImagePatch::splat(h, w, 1, v).unwrap()
    }

    fn sample_std(a: &ImagePatch, b: &ImagePatch) -> f64 {
        let n = a.data().len() as f64;
        let mean: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y) as f64)
            .sum::<f64>()
            / n;
        let var: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| {
                let d = (x - y) as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        var.sqrt()
    }

    #[test]
    fn spec_validation_bounds() {
        assert!(NoiseSpec::awgn(75.0, 0).validate().is_ok());
        assert!(NoiseSpec::awgn(75.1, 0).validate().is_err());
        assert!(NoiseSpec::heteroscedastic(-0.1, 0.0, 0).validate().is_err());
    }

    #[test]
    fn awgn_zero_sigma_is_identity() {
        let clean = flat(8, 8, 0.25);
        let noisy = add_awgn(&clean, 0.0, 7).unwrap();
        assert_eq!(clean, noisy);
    }

    #[test]
    fn awgn_empirical_std_matches_sigma() {
        let clean = flat(256, 256, 0.5);
        let noisy = add_awgn(&clean, 25.0, 11).unwrap();
        let std = sample_std(&noisy, &clean);
        assert!(
            (24.0 / 255.0..=26.0 / 255.0).contains(&std),
            "std {std} out of tolerance"
        );
    }

    #[test]
    fn awgn_same_seed_is_deterministic() {
        let clean = flat(32, 32, 0.5);
        let a = add_awgn(&clean, 15.0, 3).unwrap();
        let b = add_awgn(&clean, 15.0, 3).unwrap();
        assert_eq!(a, b);
        let c = add_awgn(&clean, 15.0, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn heteroscedastic_sigma_s_zero_reduces_to_awgn() {
        let clean = flat(64, 64, 0.3);
        let het = add_heteroscedastic(&clean, 0.0, 0.05, 9).unwrap();
        let awgn = add_awgn(&clean, 0.05 * 255.0, 9).unwrap();
        for (a, b) in het.data().iter().zip(awgn.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn heteroscedastic_zero_signal_zero_constant_is_noiseless() {
        let clean = flat(32, 32, 0.0);
        let noisy = add_heteroscedastic(&clean, 0.1, 0.0, 5).unwrap();
        let std = sample_std(&noisy, &clean);
        assert!(std <= 1e-8, "std {std}");
    }

    #[test]
    fn heteroscedastic_variance_matches_model() {
        let clean = flat(256, 256, 0.5);
        let noisy = add_heteroscedastic(&clean, 0.1, 0.02, 13).unwrap();
        let var = sample_std(&noisy, &clean).powi(2);
        let expected = 0.5 * 0.01 + 0.0004;
        assert!(
            (var - expected).abs() / expected < 0.10,
            "var {var} vs expected {expected}"
        );
    }

    #[test]
    fn composite_single_region_equals_global() {
        let clean = flat(32, 32, 0.5);
        let sub = NoiseSpec::awgn(20.0, 0);
        let spec = NoiseSpec::composite(
            vec![Region {
                rect: Rect {
                    y: 0,
                    x: 0,
                    height: 32,
                    width: 32,
                },
                spec: sub.clone(),
            }],
            99,
        );
        let composite = add_composite(&clean, &spec).unwrap();
        let global = add_awgn(&clean, 20.0, 99).unwrap();
        assert_eq!(composite, global);
    }

    #[test]
    fn composite_halves_match_their_sigmas() {
        let clean = flat(128, 256, 0.5);
        let spec = NoiseSpec::composite(
            vec![
                Region {
                    rect: Rect {
                        y: 0,
                        x: 0,
                        height: 128,
                        width: 128,
                    },
                    spec: NoiseSpec::awgn(5.0, 0),
                },
                Region {
                    rect: Rect {
                        y: 0,
                        x: 128,
                        height: 128,
                        width: 128,
                    },
                    spec: NoiseSpec::awgn(50.0, 0),
                },
            ],
            42,
        );
        let noisy = add_composite(&clean, &spec).unwrap();
        let left = noisy.crop(0, 0, 128, 128).unwrap();
        let left_clean = clean.crop(0, 0, 128, 128).unwrap();
        let right = noisy.crop(0, 128, 128, 128).unwrap();
        let right_clean = clean.crop(0, 128, 128, 128).unwrap();
        let s_left = sample_std(&left, &left_clean) * 255.0;
        let s_right = sample_std(&right, &right_clean) * 255.0;
        assert!((s_left - 5.0).abs() / 5.0 < 0.10, "left std {s_left}");
        assert!((s_right - 50.0).abs() / 50.0 < 0.10, "right std {s_right}");
    }

    #[test]
    fn composite_rejects_bad_tilings() {
        let clean = flat(16, 16, 0.5);
        let empty = NoiseSpec::composite(vec![], 0);
        assert!(add_composite(&clean, &empty).is_err());

        let partial = NoiseSpec::composite(
            vec![Region {
                rect: Rect {
                    y: 0,
                    x: 0,
                    height: 8,
                    width: 16,
                },
                spec: NoiseSpec::awgn(10.0, 0),
            }],
            0,
        );
        assert!(add_composite(&clean, &partial).is_err());

        let overlapping = NoiseSpec::composite(
            vec![
                Region {
                    rect: Rect {
                        y: 0,
                        x: 0,
                        height: 16,
                        width: 16,
                    },
                    spec: NoiseSpec::awgn(10.0, 0),
                },
                Region {
                    rect: Rect {
                        y: 0,
                        x: 0,
                        height: 1,
                        width: 1,
                    },
                    spec: NoiseSpec::awgn(10.0, 0),
                },
            ],
            0,
        );
        assert!(add_composite(&clean, &overlapping).is_err());
    }

    #[test]
    fn composite_commutes_with_region_cropping() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = corpus::generate_corpus(dir.path(), 1, 64, 1, 31).unwrap();
        let clean = load_png(&imgs[0]).unwrap();
        let quads: Vec<Region> = [(0, 0), (0, 32), (32, 0), (32, 32)]
            .iter()
            .enumerate()
            .map(|(i, &(y, x))| Region {
                rect: Rect {
                    y,
                    x,
                    height: 32,
                    width: 32,
                },
                spec: if i % 2 == 0 {
                    NoiseSpec::awgn(10.0 + 10.0 * i as f64, 0)
                } else {
                    NoiseSpec::heteroscedastic(0.08, 0.01, 0)
                },
            })
            .collect();
        let spec = NoiseSpec::composite(quads.clone(), 1234);
        let noisy = add_composite(&clean, &spec).unwrap();
        for (i, r) in quads.iter().enumerate() {
            let rc = r.rect;
            let crop_of_out = noisy.crop(rc.y, rc.x, rc.height, rc.width).unwrap();
            let crop_clean = clean.crop(rc.y, rc.x, rc.height, rc.width).unwrap();
            let direct =
                apply_with_seed(&r.spec, &crop_clean, 1234u64.wrapping_add(i as u64)).unwrap();
            assert_eq!(crop_of_out, direct, "region {i} does not commute");
        }
    }

    #[test]
    fn make_dataset_bookkeeping_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let clean_dir = dir.path().join("clean");
        std::fs::create_dir(&clean_dir).unwrap();
        corpus::generate_corpus(&clean_dir, 3, 96, 1, 5).unwrap();

        let spec = NoiseSpec::awgn(25.0, 77);
        let out0 = dir.path().join("empty");
        let m0 = make_dataset(&clean_dir, &spec, 64, 0, &out0).unwrap();
        assert!(m0.entries.is_empty());
        assert_eq!(
            std::fs::read_dir(&out0).unwrap().count(),
            1,
            "only the manifest should exist"
        );

        let out1 = dir.path().join("d1");
        let m1 = make_dataset(&clean_dir, &spec, 64, 4, &out1).unwrap();
        assert_eq!(m1.entries.len(), 4);
        let rasters = std::fs::read_dir(&out1)
            .unwrap()
            .filter(|e| {
                e.as_ref().unwrap().path().extension().and_then(|x| x.to_str()) == Some("fras")
            })
            .count();
        assert_eq!(rasters, 8);

        let out2 = dir.path().join("d2");
        make_dataset(&clean_dir, &spec, 64, 4, &out2).unwrap();
        let a = std::fs::read(out1.join(MANIFEST_FILE)).unwrap();
        let b = std::fs::read(out2.join(MANIFEST_FILE)).unwrap();
        assert_eq!(a, b, "manifests must be byte-identical across reruns");
        for e in &m1.entries {
            let x = std::fs::read(out1.join(&e.noisy)).unwrap();
            let y = std::fs::read(out2.join(&e.noisy)).unwrap();
            assert_eq!(x, y);
        }

        let reloaded = Manifest::load(out1.join(MANIFEST_FILE)).unwrap();
        assert_eq!(reloaded.entries.len(), 4);
        let pairs = reloaded.load_pairs().unwrap();
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[0].1.shape(), (64, 64, 1));
    }

    #[test]
    fn make_dataset_rejects_undersized_sources() {
        let dir = tempfile::tempdir().unwrap();
        let clean_dir = dir.path().join("clean");
        std::fs::create_dir(&clean_dir).unwrap();
        corpus::generate_corpus(&clean_dir, 1, 32, 1, 5).unwrap();
        let spec = NoiseSpec::awgn(25.0, 0);
        assert!(make_dataset(&clean_dir, &spec, 64, 1, dir.path().join("out")).is_err());
    }
}
