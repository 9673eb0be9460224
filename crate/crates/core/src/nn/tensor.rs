//! Dense CHW f64 feature maps.

use crate::image::ImagePatch;
use crate::{Error, Result};

/// A channels-height-width tensor of f64 samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Tensor {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(data.len(), channels * height * width);
        Tensor {
            channels,
            height,
            width,
            data,
        }
    }

    /// Scalar tensors carry reduced loss values through the tape.
    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            channels: 1,
            height: 1,
            width: 1,
            data: vec![v],
        }
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.channels == other.channels
            && self.height == other.height
            && self.width == other.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts an interleaved f32 patch into a planar f64 tensor.
    pub fn from_patch(img: &ImagePatch) -> Tensor {
        let (h, w, ch) = img.shape();
        let mut t = Tensor::zeros(ch, h, w);
        let src = img.data();
        for c in 0..ch {
            let plane = t.plane_mut(c);
            for i in 0..h * w {
                plane[i] = src[i * ch + c] as f64;
            }
        }
        t
    }

    /// Stacks two patches channel-wise (noisy followed by denoised).
    pub fn from_patch_pair(a: &ImagePatch, b: &ImagePatch) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::shape(
                "patch pair",
                format!("{:?}", a.shape()),
                format!("{:?}", b.shape()),
            ));
        }
        let (h, w, ch) = a.shape();
        let mut t = Tensor::zeros(2 * ch, h, w);
        for (c, img) in [a, b].into_iter().enumerate() {
            let src = img.data();
            for k in 0..ch {
                let plane = t.plane_mut(c * ch + k);
                for i in 0..h * w {
                    plane[i] = src[i * ch + k] as f64;
                }
            }
        }
        Ok(t)
    }

    /// Converts back to an interleaved f32 patch.
    pub fn to_patch(&self) -> Result<ImagePatch> {
        let mut data = vec![0.0f32; self.channels * self.height * self.width];
        for c in 0..self.channels {
            let plane = self.plane(c);
            for i in 0..self.height * self.width {
                data[i * self.channels + c] = plane[i] as f32;
            }
        }
        ImagePatch::new(self.height, self.width, self.channels, data)
    }

    /// Mirror-pads the spatial dims on the bottom/right up to a multiple of
    /// `m` (half-sample symmetric extension).
    pub fn pad_to_multiple(&self, m: usize) -> Tensor {
        let ph = self.height.div_ceil(m) * m;
        let pw = self.width.div_ceil(m) * m;
        if ph == self.height && pw == self.width {
            return self.clone();
        }
        let mut out = Tensor::zeros(self.channels, ph, pw);
        for c in 0..self.channels {
            let src = self.plane(c);
            let dst = out.plane_mut(c);
            for y in 0..ph {
                let sy = mirror_index(y, self.height);
                for x in 0..pw {
                    let sx = mirror_index(x, self.width);
                    dst[y * pw + x] = src[sy * self.width + sx];
                }
            }
        }
        out
    }

    /// Drops padded rows/columns, returning the top-left `h`x`w` window.
    pub fn crop_to(&self, h: usize, w: usize) -> Tensor {
        debug_assert!(h <= self.height && w <= self.width);
        let mut out = Tensor::zeros(self.channels, h, w);
        for c in 0..self.channels {
            let src = self.plane(c);
            let dst = out.plane_mut(c);
            for y in 0..h {
                dst[y * w..(y + 1) * w].copy_from_slice(&src[y * self.width..y * self.width + w]);
            }
        }
        out
    }
}

/// Half-sample symmetric mirror: ..2 1 0 | 0 1 2 .. n-1 | n-1 n-2..
pub fn mirror_index(i: usize, n: usize) -> usize {
    if i < n {
        return i;
    }
    let over = i - n;
    if over < n {
        n - 1 - over
    } else {
        // Degenerate tiny inputs; clamp rather than re-reflect.
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_roundtrip_preserves_layout() {
        let img = ImagePatch::new(2, 3, 3, (0..18).map(|i| i as f32 / 18.0).collect()).unwrap();
        let t = Tensor::from_patch(&img);
        assert_eq!(t.shape(), (3, 2, 3));
        assert_eq!(t.plane(1)[0], img.get(0, 0, 1) as f64);
        let back = t.to_patch().unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pad_and_crop_are_inverse_on_content() {
        let img = ImagePatch::new(5, 6, 1, (0..30).map(|i| i as f32).collect()).unwrap();
        let t = Tensor::from_patch(&img);
        let padded = t.pad_to_multiple(4);
        assert_eq!(padded.shape(), (1, 8, 8));
        let back = padded.crop_to(5, 6);
        assert_eq!(back, t);
        // Mirrored border reflects the last rows.
        assert_eq!(padded.plane(0)[5 * 8], t.plane(0)[4 * 6]); // row 5 = mirror of row 4
    }
}
