//! Minimal deterministic PNG plots: horizontal bar charts for per-method
//! metrics and line-style series for the pool sweep. No font or GUI
//! dependencies; labels use the built-in 5x7 bitmap font.

use fusebench_core::image::{save_png, ImagePatch};
use fusebench_core::Result;
use std::path::Path;

use crate::font::{glyph, GLYPH_WIDTH};

pub struct Canvas {
    w: usize,
    h: usize,
    data: Vec<f32>, // RGB interleaved
}

impl Canvas {
    pub fn new(w: usize, h: usize) -> Canvas {
        Canvas {
            w,
            h,
            data: vec![1.0; w * h * 3],
        }
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        if x < self.w && y < self.h {
            let i = (y * self.w + x) * 3;
            self.data[i..i + 3].copy_from_slice(&rgb);
        }
    }

    pub fn fill_rect(&mut self, x: usize, y: usize, w: usize, h: usize, rgb: [f32; 3]) {
        for yy in y..(y + h).min(self.h) {
            for xx in x..(x + w).min(self.w) {
                self.set(xx, yy, rgb);
            }
        }
    }

    pub fn hline(&mut self, x0: usize, x1: usize, y: usize, rgb: [f32; 3]) {
        for x in x0..=x1.min(self.w - 1) {
            self.set(x, y, rgb);
        }
    }

    pub fn vline(&mut self, x: usize, y0: usize, y1: usize, rgb: [f32; 3]) {
        for y in y0..=y1.min(self.h - 1) {
            self.set(x, y, rgb);
        }
    }

    /// Draws `text` at pixel scale `s`, top-left anchored.
    pub fn text(&mut self, x: usize, y: usize, text: &str, s: usize, rgb: [f32; 3]) {
        let mut cx = x;
        for c in text.chars() {
            let g = glyph(c);
            for (gy, row) in g.iter().enumerate() {
                for gx in 0..GLYPH_WIDTH {
                    if row & (1 << (GLYPH_WIDTH - 1 - gx)) != 0 {
                        self.fill_rect(cx + gx * s, y + gy * s, s, s, rgb);
                    }
                }
            }
            cx += (GLYPH_WIDTH + 1) * s;
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = ImagePatch::new(self.h, self.w, 3, self.data.clone())?;
        save_png(&img, path)
    }
}

const BAR: [f32; 3] = [0.20, 0.45, 0.80];
const HIGHLIGHT: [f32; 3] = [0.85, 0.45, 0.10];
const INK: [f32; 3] = [0.0, 0.0, 0.0];

/// Horizontal bar chart of (name, value) pairs; `highlight` names get a
/// distinct color. Values are annotated at the bar ends.
pub fn bar_chart(
    title: &str,
    entries: &[(String, f64)],
    highlight: &[&str],
    path: impl AsRef<Path>,
) -> Result<()> {
    let rows = entries.len().max(1);
    let label_w = 170;
    let value_w = 90;
    let bar_max = 360usize;
    let row_h = 22;
    let top = 28;
    let w = label_w + bar_max + value_w + 20;
    let h = top + rows * row_h + 16;
    let mut canvas = Canvas::new(w, h);
    canvas.text(10, 8, title, 2, INK);

    let lo = entries.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    let hi = entries.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if entries.is_empty() || (hi - lo).abs() < 1e-12 {
        (lo.min(0.0), hi.max(1.0))
    } else {
        // Pad the range so the worst bar is still visible.
        (lo - 0.1 * (hi - lo), hi)
    };

    for (i, (name, value)) in entries.iter().enumerate() {
        let y = top + i * row_h;
        canvas.text(10, y + 4, name, 1, INK);
        let frac = ((value - lo) / (hi - lo)).clamp(0.0, 1.0);
        let len = (frac * bar_max as f64).round() as usize;
        let color = if highlight.contains(&name.as_str()) {
            HIGHLIGHT
        } else {
            BAR
        };
        canvas.fill_rect(label_w, y + 2, len.max(1), row_h - 6, color);
        canvas.text(label_w + len + 6, y + 4, &format!("{value:.3}"), 1, INK);
    }
    canvas.vline(label_w - 2, top, top + rows * row_h, INK);
    canvas.save(path)
}

/// Series plot of (x label, value) points joined by steps, for sweep curves.
pub fn series_chart(
    title: &str,
    points: &[(String, f64)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let w = 560;
    let h = 340;
    let margin_l = 70;
    let margin_b = 46;
    let margin_t = 34;
    let margin_r = 20;
    let mut canvas = Canvas::new(w, h);
    canvas.text(10, 8, title, 2, INK);
    let plot_w = w - margin_l - margin_r;
    let plot_h = h - margin_t - margin_b;
    canvas.vline(margin_l, margin_t, h - margin_b, INK);
    canvas.hline(margin_l, w - margin_r, h - margin_b, INK);

    if points.is_empty() {
        return canvas.save(path);
    }
    let lo = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if (hi - lo).abs() < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo - 0.15 * (hi - lo), hi + 0.15 * (hi - lo))
    };
    let xy = |i: usize, v: f64| -> (usize, usize) {
        let x = margin_l + (i * plot_w) / points.len().max(1) + plot_w / (2 * points.len());
        let fy = (v - lo) / (hi - lo);
        let y = h - margin_b - (fy * plot_h as f64).round() as usize;
        (x, y)
    };
    let mut prev: Option<(usize, usize)> = None;
    for (i, (label, v)) in points.iter().enumerate() {
        let (x, y) = xy(i, *v);
        canvas.fill_rect(x.saturating_sub(2), y.saturating_sub(2), 5, 5, HIGHLIGHT);
        if let Some((px, py)) = prev {
            // Step join: horizontal then vertical.
            canvas.hline(px.min(x), px.max(x), py, BAR);
            canvas.vline(x, py.min(y), py.max(y), BAR);
        }
        prev = Some((x, y));
        canvas.text(x.saturating_sub(8), h - margin_b + 8, label, 1, INK);
        canvas.text(x.saturating_sub(20), y.saturating_sub(12), &format!("{v:.2}"), 1, INK);
    }
    canvas.text(6, margin_t.saturating_sub(14), &format!("{hi:.2}"), 1, INK);
    canvas.text(6, h - margin_b - 6, &format!("{lo:.2}"), 1, INK);
    canvas.save(path)
}
