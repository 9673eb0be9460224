//! 3x3 same-size convolution (zero padding) and its gradients.
//!
//! The hot loops process one kernel row at a time over contiguous image
//! rows so the compiler can vectorize; iteration order is fixed, so results
//! are bit-reproducible.

use super::tensor::Tensor;

/// Weight layout: `[out_ch][in_ch][ky][kx]`, flattened.
#[inline]
fn widx(oc: usize, ic: usize, in_ch: usize, ky: usize, kx: usize) -> usize {
    ((oc * in_ch + ic) * 3 + ky) * 3 + kx
}

/// dst[x] += c0*src[x-1] + c1*src[x] + c2*src[x+1], zero padding at the ends.
#[inline]
fn row_conv3(dst: &mut [f64], src: &[f64], c0: f64, c1: f64, c2: f64) {
    let w = dst.len();
    if w == 1 {
        dst[0] += c1 * src[0];
        return;
    }
    dst[0] += c1 * src[0] + c2 * src[1];
    for x in 1..w - 1 {
        dst[x] += c0 * src[x - 1] + c1 * src[x] + c2 * src[x + 1];
    }
    dst[w - 1] += c0 * src[w - 2] + c1 * src[w - 1];
}

/// out[oc] = bias[oc] + sum_ic input[ic] * W[oc][ic]
pub fn conv3x3_forward(input: &Tensor, weight: &[f64], bias: &[f64], out_ch: usize) -> Tensor {
    let (in_ch, h, w) = input.shape();
    debug_assert_eq!(weight.len(), out_ch * in_ch * 9);
    debug_assert_eq!(bias.len(), out_ch);
    let mut out = Tensor::zeros(out_ch, h, w);

    for (oc, &b) in bias.iter().enumerate() {
        out.plane_mut(oc).fill(b);
    }
    for oc in 0..out_ch {
        for ic in 0..in_ch {
            let src = input.plane(ic);
            let dst = out.plane_mut(oc);
            let k = &weight[widx(oc, ic, in_ch, 0, 0)..widx(oc, ic, in_ch, 0, 0) + 9];
            for y in 0..h {
                let dst_row = &mut dst[y * w..(y + 1) * w];
                for ky in 0..3usize {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &src[sy as usize * w..(sy as usize + 1) * w];
                    row_conv3(dst_row, src_row, k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
                }
            }
        }
    }
    out
}

/// Gradients of [`conv3x3_forward`] given the upstream gradient `dout`.
///
/// Returns `d_input` and accumulates into `d_weight`/`d_bias`.
pub fn conv3x3_backward(
    input: &Tensor,
    weight: &[f64],
    out_ch: usize,
    dout: &Tensor,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
) -> Tensor {
    let (in_ch, h, w) = input.shape();
    debug_assert_eq!(dout.shape(), (out_ch, h, w));
    let mut din = Tensor::zeros(in_ch, h, w);

    for (oc, db) in d_bias.iter_mut().enumerate() {
        *db += dout.plane(oc).iter().sum::<f64>();
    }

    // d_input: correlate dout with the flipped kernel.
    // forward: out[y][x] += w[ky][kx] * in[y+ky-1][x+kx-1]
    // => din[y][x] += w[ky][kx] * dout[y-(ky-1)][x-(kx-1)]
    for ic in 0..in_ch {
        let dst = din.plane_mut(ic);
        for oc in 0..out_ch {
            let g = dout.plane(oc);
            let k = &weight[widx(oc, ic, in_ch, 0, 0)..widx(oc, ic, in_ch, 0, 0) + 9];
            for y in 0..h {
                let dst_row = &mut dst[y * w..(y + 1) * w];
                for ky in 0..3usize {
                    let gy = y as isize - (ky as isize - 1);
                    if gy < 0 || gy >= h as isize {
                        continue;
                    }
                    let g_row = &g[gy as usize * w..(gy as usize + 1) * w];
                    // kx reversed: din[x] += k[ky][2]*g[x-1] + k[ky][1]*g[x] + k[ky][0]*g[x+1]
                    row_conv3(dst_row, g_row, k[ky * 3 + 2], k[ky * 3 + 1], k[ky * 3]);
                }
            }
        }
    }

    // d_weight[oc][ic][ky][kx] = sum_{y,x} dout[oc][y][x] * in[ic][y+ky-1][x+kx-1]
    for oc in 0..out_ch {
        let g = dout.plane(oc);
        for ic in 0..in_ch {
            let src = input.plane(ic);
            for ky in 0..3usize {
                let (mut a0, mut a1, mut a2) = (0.0f64, 0.0f64, 0.0f64);
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let g_row = &g[y * w..(y + 1) * w];
                    let s_row = &src[sy as usize * w..(sy as usize + 1) * w];
                    if w == 1 {
                        a1 += g_row[0] * s_row[0];
                        continue;
                    }
                    a1 += g_row[0] * s_row[0];
                    a2 += g_row[0] * s_row[1];
                    for x in 1..w - 1 {
                        let gv = g_row[x];
                        a0 += gv * s_row[x - 1];
                        a1 += gv * s_row[x];
                        a2 += gv * s_row[x + 1];
                    }
                    let gv = g_row[w - 1];
                    a0 += gv * s_row[w - 2];
                    a1 += gv * s_row[w - 1];
                }
                d_weight[widx(oc, ic, in_ch, ky, 0)] += a0;
                d_weight[widx(oc, ic, in_ch, ky, 1)] += a1;
                d_weight[widx(oc, ic, in_ch, ky, 2)] += a2;
            }
        }
    }
    din
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Reference forward: naive quintuple loop with explicit bounds checks.
    fn conv_reference(input: &Tensor, weight: &[f64], bias: &[f64], out_ch: usize) -> Tensor {
        let (in_ch, h, w) = input.shape();
        let mut out = Tensor::zeros(out_ch, h, w);
        for oc in 0..out_ch {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[oc];
                    for ic in 0..in_ch {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let sy = y as isize + ky - 1;
                                let sx = x as isize + kx - 1;
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    acc += weight
                                        [widx(oc, ic, in_ch, ky as usize, kx as usize)]
                                        * input.plane(ic)[sy as usize * w + sx as usize];
                                }
                            }
                        }
                    }
                    out.plane_mut(oc)[y * w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (h, w) in [(6, 7), (1, 5), (4, 1), (3, 3)] {
            let input = Tensor::from_data(3, h, w, rand_vec(&mut rng, 3 * h * w));
            let weight = rand_vec(&mut rng, 4 * 3 * 9);
            let bias = rand_vec(&mut rng, 4);
            let fast = conv3x3_forward(&input, &weight, &bias, 4);
            let slow = conv_reference(&input, &weight, &bias, 4);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12, "{h}x{w}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = Tensor::from_data(2, 5, 5, rand_vec(&mut rng, 2 * 5 * 5));
        let weight = rand_vec(&mut rng, 3 * 2 * 9);
        let bias = rand_vec(&mut rng, 3);
        // Loss = sum(out * probe) for a fixed random probe.
        let probe = rand_vec(&mut rng, 3 * 5 * 5);
        let loss = |inp: &Tensor, wt: &[f64], bs: &[f64]| -> f64 {
            conv3x3_forward(inp, wt, bs, 3)
                .data
                .iter()
                .zip(&probe)
                .map(|(o, p)| o * p)
                .sum()
        };

        let dout = Tensor::from_data(3, 5, 5, probe.clone());
        let mut dw = vec![0.0; weight.len()];
        let mut db = vec![0.0; bias.len()];
        let din = conv3x3_backward(&input, &weight, 3, &dout, &mut dw, &mut db);

        let h = 1e-6;
        for i in (0..input.data.len()).step_by(7) {
            let mut ip = input.clone();
            ip.data[i] += h;
            let mut im = input.clone();
            im.data[i] -= h;
            let fd = (loss(&ip, &weight, &bias) - loss(&im, &weight, &bias)) / (2.0 * h);
            assert!((fd - din.data[i]).abs() < 1e-6, "din[{i}]: {fd} vs {}", din.data[i]);
        }
        for i in (0..weight.len()).step_by(5) {
            let mut wp = weight.clone();
            wp[i] += h;
            let mut wm = weight.clone();
            wm[i] -= h;
            let fd = (loss(&input, &wp, &bias) - loss(&input, &wm, &bias)) / (2.0 * h);
            assert!((fd - dw[i]).abs() < 1e-6, "dw[{i}]: {fd} vs {}", dw[i]);
        }
        for i in 0..bias.len() {
            let mut bp = bias.clone();
            bp[i] += h;
            let mut bm = bias.clone();
            bm[i] -= h;
            let fd = (loss(&input, &weight, &bp) - loss(&input, &weight, &bm)) / (2.0 * h);
            assert!((fd - db[i]).abs() < 1e-6, "db[{i}]: {fd} vs {}", db[i]);
        }
    }
}
