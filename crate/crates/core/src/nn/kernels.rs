//! Slice-level forward and backward kernels. Shapes are validated by the
//! callers in [`super::tape`]; these functions only assert in debug builds.

use rayon::prelude::*;

/// Geometry of a same-padded, stride-1, 3x3 convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvDims {
    fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Row and column ranges of output pixels whose tap `(ky, kx)` lands inside
/// the input, and the flat offset from output pixel to input pixel.
#[inline]
fn tap_window(h: usize, w: usize, ky: usize, kx: usize) -> (usize, usize, usize, usize, isize) {
    let dy = ky as isize - 1;
    let dx = kx as isize - 1;
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy).min(h as isize) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize) as usize;
    (y0, y1, x0, x1, dy * w as isize + dx)
}

pub(crate) fn conv2d_forward(input: &[f64], weight: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
    let plane = d.plane();
    debug_assert_eq!(input.len(), d.c_in * plane);
    debug_assert_eq!(weight.len(), d.c_out * d.c_in * 9);
    let mut out = vec![0.0; d.c_out * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
        dst.fill(bias[o]);
        for c in 0..d.c_in {
            let src = &input[c * plane..(c + 1) * plane];
            let k = &weight[(o * d.c_in + c) * 9..(o * d.c_in + c + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = k[ky * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (y0, y1, x0, x1, off) = tap_window(d.h, d.w, ky, kx);
                    for y in y0..y1 {
                        let row = y * d.w;
                        let s = ((row + x0) as isize + off) as usize;
                        let dst_row = &mut dst[row + x0..row + x1];
                        let src_row = &src[s..s + x1 - x0];
                        for (o, i) in dst_row.iter_mut().zip(src_row) {
                            *o += wv * i;
                        }
                    }
                }
            }
        }
    });
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`. `grad_input` is only
/// computed when requested.
pub(crate) fn conv2d_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    d: ConvDims,
    want_input_grad: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let plane = d.plane();
    let grad_bias: Vec<f64> = grad_out.chunks(plane).map(|g| g.iter().sum()).collect();

    let mut grad_weight = vec![0.0; weight.len()];
    grad_weight
        .par_chunks_mut(d.c_in * 9)
        .enumerate()
        .for_each(|(o, gw)| {
            let g = &grad_out[o * plane..(o + 1) * plane];
            for c in 0..d.c_in {
                let src = &input[c * plane..(c + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (y0, y1, x0, x1, off) = tap_window(d.h, d.w, ky, kx);
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let row = y * d.w;
                            let s = ((row + x0) as isize + off) as usize;
                            acc += g[row + x0..row + x1]
                                .iter()
                                .zip(&src[s..s + x1 - x0])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                        gw[c * 9 + ky * 3 + kx] = acc;
                    }
                }
            }
        });

    let grad_input = want_input_grad.then(|| {
        let mut gi = vec![0.0; input.len()];
        gi.par_chunks_mut(plane).enumerate().for_each(|(c, dst)| {
            for o in 0..d.c_out {
                let g = &grad_out[o * plane..(o + 1) * plane];
                let k = &weight[(o * d.c_in + c) * 9..(o * d.c_in + c + 1) * 9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = k[ky * 3 + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (y0, y1, x0, x1, off) = tap_window(d.h, d.w, ky, kx);
                        for y in y0..y1 {
                            let row = y * d.w;
                            let s = ((row + x0) as isize + off) as usize;
                            for (di, gv) in dst[s..s + x1 - x0].iter_mut().zip(&g[row + x0..row + x1]) {
                                *di += wv * gv;
                            }
                        }
                    }
                }
            }
        });
        gi
    });

    (grad_input, grad_weight, grad_bias)
}

/// 2x2, stride-2 max pooling. Returns the pooled values and, for each output
/// cell, the flat input index that won (first maximum in row-major window
/// order).
pub(crate) fn maxpool2_forward(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let tl = base + 2 * y * w + 2 * x;
                let mut best = tl;
                for idx in [tl + 1, tl + w, tl + w + 1] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool2_backward(grad_out: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut gi = vec![0.0; input_len];
    for (g, &i) in grad_out.iter().zip(argmax) {
        gi[i] += g;
    }
    gi
}

pub(crate) fn dense_forward(input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = input.len();
    weight
        .chunks(n)
        .zip(bias)
        .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
        .collect()
}

/// Returns `(grad_input, grad_weight)`; the bias gradient is `grad_out`.
pub(crate) fn dense_backward(input: &[f64], weight: &[f64], grad_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = input.len();
    let mut gx = vec![0.0; n];
    let mut gw = vec![0.0; weight.len()];
    for ((row, grow), &g) in weight.chunks(n).zip(gw.chunks_mut(n)).zip(grad_out) {
        for ((w, gwv), (x, gxv)) in row.iter().zip(grow.iter_mut()).zip(input.iter().zip(gx.iter_mut())) {
            *gwv = g * x;
            *gxv += g * w;
        }
    }
    (gx, gw)
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
