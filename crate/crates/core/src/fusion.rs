//! Converts score maps into normalized per-pixel weighting maps, fuses pool
//! results, and computes oracle ground-truth weights.

use std::path::Path;

use crate::image::{save_png, save_raster, ImagePatch};
use crate::nn::tape::{direct_weights_apply, fuse_weighted_apply, softmax_channels_apply};
use crate::nn::Tensor;
use crate::pool::PoolOutput;
use crate::{Error, Result};

/// Per-pixel sum tolerance for a valid weight stack.
pub const WEIGHT_SUM_TOL: f32 = 1e-6;

/// C single-channel maps that form a convex combination at every pixel.
#[derive(Debug, Clone)]
pub struct WeightStack {
    maps: Vec<ImagePatch>,
}

impl WeightStack {
    /// Validates entries in `[0, 1]` and per-pixel sums within 1e-6 of 1.
    pub fn new(maps: Vec<ImagePatch>) -> Result<WeightStack> {
        if maps.is_empty() {
            return Err(Error::InvalidArgument("weight stack needs at least one map".into()));
        }
        let shape = maps[0].shape();
        if shape.2 != 1 {
            return Err(Error::InvalidArgument("weight maps must be single-channel".into()));
        }
        for m in &maps {
            if m.shape() != shape {
                return Err(Error::shape(
                    "weight stack",
                    format!("{shape:?}"),
                    format!("{:?}", m.shape()),
                ));
            }
        }
        let n = shape.0 * shape.1;
        for i in 0..n {
            let mut sum = 0.0f32;
            for m in &maps {
                let v = m.data()[i];
                if !(-WEIGHT_SUM_TOL..=1.0 + WEIGHT_SUM_TOL).contains(&v) {
                    return Err(Error::Numerical(format!(
                        "weight {v} outside [0,1] at pixel {i}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::Numerical(format!(
                    "weights sum to {sum} at pixel {i}"
                )));
            }
        }
        Ok(WeightStack { maps })
    }

    pub fn maps(&self) -> &[ImagePatch] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// Spatial shape (height, width).
    pub fn spatial(&self) -> (usize, usize) {
        let (h, w, _) = self.maps[0].shape();
        (h, w)
    }

    /// Planar f64 view used by the losses.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w) = self.spatial();
        let mut t = Tensor::zeros(self.maps.len(), h, w);
        for (c, m) in self.maps.iter().enumerate() {
            let plane = t.plane_mut(c);
            for (o, &v) in plane.iter_mut().zip(m.data()) {
                *o = v as f64;
            }
        }
        t
    }

    fn from_tensor(t: &Tensor) -> Result<WeightStack> {
        let (c, h, w) = t.shape();
        let maps = (0..c)
            .map(|ch| {
                ImagePatch::new(h, w, 1, t.plane(ch).iter().map(|&v| v as f32).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        WeightStack::new(maps)
    }
}

/// One-hot per-pixel masks selecting the lowest-error denoiser, plus the
/// per-pixel squared-error maps they were derived from.
#[derive(Debug, Clone)]
pub struct OracleWeights {
    pub masks: Vec<ImagePatch>,
    pub error_maps: Vec<ImagePatch>,
}

impl OracleWeights {
    /// The masks as a weight stack (one-hot stacks are valid weights).
    pub fn as_weights(&self) -> Result<WeightStack> {
        WeightStack::new(self.masks.clone())
    }

    pub fn to_target_tensor(&self) -> Tensor {
        let (h, w, _) = self.masks[0].shape();
        let mut t = Tensor::zeros(self.masks.len(), h, w);
        for (c, m) in self.masks.iter().enumerate() {
            let plane = t.plane_mut(c);
            for (o, &v) in plane.iter_mut().zip(m.data()) {
                *o = v as f64;
            }
        }
        t
    }
}

fn stack_scores(scores: &[ImagePatch]) -> Result<Tensor> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no score maps given".into()));
    }
    let shape = scores[0].shape();
    if shape.2 != 1 {
        return Err(Error::InvalidArgument("score maps must be single-channel".into()));
    }
    let (h, w, _) = shape;
    let mut t = Tensor::zeros(scores.len(), h, w);
    for (c, s) in scores.iter().enumerate() {
        if s.shape() != shape {
            return Err(Error::shape(
                "score maps",
                format!("{shape:?}"),
                format!("{:?}", s.shape()),
            ));
        }
        let plane = t.plane_mut(c);
        for (o, &v) in plane.iter_mut().zip(s.data()) {
            *o = v as f64;
        }
    }
    Ok(t)
}

/// Per-pixel softmax across the C score maps (max-subtracted for overflow
/// safety). Adding a constant map to all scores leaves the result unchanged.
pub fn softmax_weights(scores: &[ImagePatch]) -> Result<WeightStack> {
    let stacked = stack_scores(scores)?;
    WeightStack::from_tensor(&softmax_channels_apply(&stacked))
}

/// Clamps raw maps into `[0, 1]` and renormalizes per pixel; pixels whose
/// clamped sum is below 1e-8 fall back to uniform weights.
pub fn direct_weights(raw: &[ImagePatch]) -> Result<WeightStack> {
    let stacked = stack_scores(raw)?;
    WeightStack::from_tensor(&direct_weights_apply(&stacked))
}

/// Per-pixel convex combination of the pool results: single-channel weights
/// broadcast across color channels. The output lies inside the per-pixel
/// min/max envelope of the inputs.
pub fn fuse(results: &PoolOutput, weights: &WeightStack) -> Result<ImagePatch> {
    if results.len() != weights.len() {
        return Err(Error::shape("fuse member count", results.len(), weights.len()));
    }
    let img_shape = results.results[0].1.shape();
    let (h, w) = weights.spatial();
    if (img_shape.0, img_shape.1) != (h, w) {
        return Err(Error::shape(
            "fuse spatial shape",
            format!("{:?}", (img_shape.0, img_shape.1)),
            format!("{:?}", (h, w)),
        ));
    }
    for (_, img) in &results.results {
        if img.shape() != img_shape {
            return Err(Error::shape(
                "pool result shapes",
                format!("{img_shape:?}"),
                format!("{:?}", img.shape()),
            ));
        }
    }
    let images: Vec<Tensor> = results.images().map(Tensor::from_patch).collect();
    let fused = fuse_weighted_apply(&weights.to_tensor(), &images);
    fused.to_patch()
}

/// Per-pixel squared error (summed over channels) of each result against the
/// ground truth, and the one-hot argmin masks. Ties break toward the lowest
/// pool index.
pub fn oracle_weights(results: &PoolOutput, ground_truth: &ImagePatch) -> Result<OracleWeights> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("empty pool output".into()));
    }
    let shape = ground_truth.shape();
    for (_, img) in &results.results {
        if img.shape() != shape {
            return Err(Error::shape(
                "oracle ground truth",
                format!("{shape:?}"),
                format!("{:?}", img.shape()),
            ));
        }
    }
    let (h, w, ch) = shape;
    let c = results.len();
    let mut error_maps: Vec<Vec<f32>> = vec![vec![0.0; h * w]; c];
    for (ci, (_, img)) in results.results.iter().enumerate() {
        #[allow(clippy::needless_range_loop)]
        for i in 0..h * w {
            let mut acc = 0.0f64;
            for k in 0..ch {
                let d = img.data()[i * ch + k] as f64 - ground_truth.data()[i * ch + k] as f64;
                acc += d * d;
            }
            error_maps[ci][i] = acc as f32;
        }
    }
    let mut masks: Vec<Vec<f32>> = vec![vec![0.0; h * w]; c];
    for i in 0..h * w {
        let mut best = 0usize;
        for ci in 1..c {
            if error_maps[ci][i] < error_maps[best][i] {
                best = ci;
            }
        }
        masks[best][i] = 1.0;
    }
    Ok(OracleWeights {
        masks: masks
            .into_iter()
            .map(|m| ImagePatch::new(h, w, 1, m))
            .collect::<Result<Vec<_>>>()?,
        error_maps: error_maps
            .into_iter()
            .map(|m| ImagePatch::new(h, w, 1, m))
            .collect::<Result<Vec<_>>>()?,
    })
}

/// Writes each weight map as a float raster plus an 8-bit heat-map PNG
/// (`<stem>_<name>.fras` / `.png`) for visual inspection.
pub fn export_weight_stack(
    stack: &WeightStack,
    names: &[String],
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (map, name) in stack.maps().iter().zip(names) {
        save_raster(map, dir.join(format!("{stem}_{name}.fras")))?;
        save_png(&heatmap(map), dir.join(format!("{stem}_{name}.png")))?;
    }
    Ok(())
}

/// Blue-to-red ramp over `[0, 1]`.
pub fn heatmap(map: &ImagePatch) -> ImagePatch {
    let (h, w, _) = map.shape();
    let mut data = Vec::with_capacity(h * w * 3);
    for &v in map.data() {
        let t = v.clamp(0.0, 1.0);
        data.push(t);
        data.push(4.0 * t * (1.0 - t) * 0.8);
        data.push(1.0 - t);
    }
    ImagePatch::new(h, w, 3, data).expect("heatmap construction")
}
