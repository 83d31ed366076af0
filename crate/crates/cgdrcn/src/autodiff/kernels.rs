//! Raw compute kernels behind the graph operations.
//!
//! Everything here works on flat row-major buffers; the graph layer owns
//! shape checking. Forward and backward variants share the same index
//! arithmetic so gradients mirror the forward semantics exactly.

use super::Scalar;

/// Output extent of a convolution axis.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Valid output range along one axis for a fixed kernel offset: all `o` with
/// `0 <= o*stride + koff - pad < in_extent`.
fn valid_range(out_extent: usize, in_extent: usize, koff: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if koff >= pad { 0 } else { (pad - koff).div_ceil(stride) };
    if in_extent + pad < koff + 1 {
        return (0, 0);
    }
    let hi = ((in_extent - 1 + pad - koff) / stride + 1).min(out_extent);
    (lo, hi.max(lo))
}

/// Cross-correlation forward: `out[co] = bias[co] + sum_ci x[ci] * w[co][ci]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<S: Scalar>(
    x: &[S],
    cin: usize,
    h: usize,
    w: usize,
    wgt: &[S],
    cout: usize,
    k: usize,
    bias: &[S],
    stride: usize,
    pad: usize,
    out: &mut [S],
    oh: usize,
    ow: usize,
) {
    for co in 0..cout {
        let out_ch = &mut out[co * oh * ow..(co + 1) * oh * ow];
        out_ch.fill(bias[co]);
        for ci in 0..cin {
            let x_ch = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(oh, h, ky, pad, stride);
                for kx in 0..k {
                    let wv = wgt[((co * cin + ci) * k + ky) * k + kx];
                    let (ox_lo, ox_hi) = valid_range(ow, w, kx, pad, stride);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    if stride == 1 {
                        for oy in oy_lo..oy_hi {
                            let iy = oy + ky - pad;
                            let ix0 = ox_lo + kx - pad;
                            let src = &x_ch[iy * w + ix0..iy * w + ix0 + (ox_hi - ox_lo)];
                            let dst = &mut out_ch[oy * ow + ox_lo..oy * ow + ox_hi];
                            for (d, s) in dst.iter_mut().zip(src.iter()) {
                                *d = *d + wv * *s;
                            }
                        }
                    } else {
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let xrow = &x_ch[iy * w..(iy + 1) * w];
                            let orow = &mut out_ch[oy * ow..(oy + 1) * ow];
                            for ox in ox_lo..ox_hi {
                                orow[ox] = orow[ox] + wv * xrow[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv2d_forward`] w.r.t. input, weight, bias.
///
/// Any of the gradient outputs may be `None` when the corresponding operand
/// does not require a gradient. Buffers are accumulated into, not reset.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<S: Scalar>(
    x: &[S],
    cin: usize,
    h: usize,
    w: usize,
    wgt: &[S],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    gout: &[S],
    oh: usize,
    ow: usize,
    mut gx: Option<&mut [S]>,
    mut gw: Option<&mut [S]>,
    mut gb: Option<&mut [S]>,
) {
    if let Some(gb) = gb.as_deref_mut() {
        for co in 0..cout {
            let go_ch = &gout[co * oh * ow..(co + 1) * oh * ow];
            let mut acc = S::zero();
            for &g in go_ch {
                acc = acc + g;
            }
            gb[co] = gb[co] + acc;
        }
    }
    if gx.is_none() && gw.is_none() {
        return;
    }
    for co in 0..cout {
        let go_ch = &gout[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..cin {
            let x_ch = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(oh, h, ky, pad, stride);
                for kx in 0..k {
                    let widx = ((co * cin + ci) * k + ky) * k + kx;
                    let wv = wgt[widx];
                    let (ox_lo, ox_hi) = valid_range(ow, w, kx, pad, stride);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let mut wacc = S::zero();
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let go_row = &go_ch[oy * ow + ox_lo..oy * ow + ox_hi];
                        if stride == 1 {
                            let ix0 = ox_lo + kx - pad;
                            if gw.is_some() {
                                let xrow = &x_ch[iy * w + ix0..iy * w + ix0 + go_row.len()];
                                for (g, xv) in go_row.iter().zip(xrow.iter()) {
                                    wacc = wacc + *g * *xv;
                                }
                            }
                            if let Some(gx) = gx.as_deref_mut() {
                                let dst = &mut gx[ci * h * w + iy * w + ix0..ci * h * w + iy * w + ix0 + go_row.len()];
                                for (d, g) in dst.iter_mut().zip(go_row.iter()) {
                                    *d = *d + wv * *g;
                                }
                            }
                        } else {
                            for (j, g) in go_row.iter().enumerate() {
                                let ix = (ox_lo + j) * stride + kx - pad;
                                if gw.is_some() {
                                    wacc = wacc + *g * x_ch[iy * w + ix];
                                }
                                if let Some(gx) = gx.as_deref_mut() {
                                    gx[ci * h * w + iy * w + ix] = gx[ci * h * w + iy * w + ix] + wv * *g;
                                }
                            }
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        gw[widx] = gw[widx] + wacc;
                    }
                }
            }
        }
    }
}

/// Max-pool forward over non-overlapping `window`-sized blocks.
///
/// Records, per output cell, the flat input index of the maximum; ties go to
/// the first maximum in row-major scan order so backward routing is
/// deterministic.
pub fn maxpool2d_forward<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
    out: &mut [S],
    argmax: &mut Vec<u32>,
) {
    let oh = h / stride;
    let ow = w / stride;
    argmax.clear();
    argmax.reserve(c * oh * ow);
    for ci in 0..c {
        let x_ch = &x[ci * h * w..(ci + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let y0 = oy * stride;
                let x0 = ox * stride;
                let mut best = x_ch[y0 * w + x0];
                let mut best_idx = y0 * w + x0;
                for wy in y0..(y0 + window).min(h) {
                    for wx in x0..(x0 + window).min(w) {
                        let v = x_ch[wy * w + wx];
                        if v > best {
                            best = v;
                            best_idx = wy * w + wx;
                        }
                    }
                }
                out[(ci * oh + oy) * ow + ox] = best;
                argmax.push((ci * h * w + best_idx) as u32);
            }
        }
    }
}

/// Per-axis bilinear sampling table for 2x upsampling with half-pixel
/// centers and edge clamping: output index `o` blends input rows
/// `(i0, i1)` with weights `(1-t, t)`.
pub fn upsample2x_table(in_extent: usize) -> Vec<(usize, usize, f64)> {
    let out_extent = in_extent * 2;
    let mut table = Vec::with_capacity(out_extent);
    for o in 0..out_extent {
        let f = (o as f64 + 0.5) / 2.0 - 0.5;
        let floor = f.floor();
        let t = f - floor;
        let i0 = (floor.max(0.0) as usize).min(in_extent - 1);
        let i1 = ((floor + 1.0).max(0.0) as usize).min(in_extent - 1);
        table.push((i0, i1, t));
    }
    table
}

/// Bilinear 2x upsample. With `preserve_integral` the result is divided by 4
/// so the pixel sum matches the input's.
pub fn upsample2x_forward<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    preserve_integral: bool,
    out: &mut [S],
) {
    let ytab = upsample2x_table(h);
    let xtab = upsample2x_table(w);
    let oh = 2 * h;
    let ow = 2 * w;
    let quarter = S::from_f64(0.25);
    for ci in 0..c {
        let x_ch = &x[ci * h * w..(ci + 1) * h * w];
        let out_ch = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for (oy, &(y0, y1, ty)) in ytab.iter().enumerate() {
            let ty = S::from_f64(ty);
            let sy = S::one() - ty;
            let row0 = &x_ch[y0 * w..(y0 + 1) * w];
            let row1 = &x_ch[y1 * w..(y1 + 1) * w];
            let orow = &mut out_ch[oy * ow..(oy + 1) * ow];
            for (ox, &(x0, x1, tx)) in xtab.iter().enumerate() {
                let tx = S::from_f64(tx);
                let sx = S::one() - tx;
                let mut v = sy * (sx * row0[x0] + tx * row0[x1]) + ty * (sx * row1[x0] + tx * row1[x1]);
                if preserve_integral {
                    v = v * quarter;
                }
                orow[ox] = v;
            }
        }
    }
}

/// Transpose of [`upsample2x_forward`]: scatters the output gradient back
/// through the same sampling weights.
pub fn upsample2x_backward<S: Scalar>(
    gout: &[S],
    c: usize,
    h: usize,
    w: usize,
    preserve_integral: bool,
    gx: &mut [S],
) {
    let ytab = upsample2x_table(h);
    let xtab = upsample2x_table(w);
    let oh = 2 * h;
    let ow = 2 * w;
    let quarter = S::from_f64(0.25);
    for ci in 0..c {
        let gx_ch = &mut gx[ci * h * w..(ci + 1) * h * w];
        let go_ch = &gout[ci * oh * ow..(ci + 1) * oh * ow];
        for (oy, &(y0, y1, ty)) in ytab.iter().enumerate() {
            let ty = S::from_f64(ty);
            let sy = S::one() - ty;
            let gorow = &go_ch[oy * ow..(oy + 1) * ow];
            for (ox, &(x0, x1, tx)) in xtab.iter().enumerate() {
                let tx = S::from_f64(tx);
                let sx = S::one() - tx;
                let mut g = gorow[ox];
                if preserve_integral {
                    g = g * quarter;
                }
                gx_ch[y0 * w + x0] = gx_ch[y0 * w + x0] + g * sy * sx;
                gx_ch[y0 * w + x1] = gx_ch[y0 * w + x1] + g * sy * tx;
                gx_ch[y1 * w + x0] = gx_ch[y1 * w + x0] + g * ty * sx;
                gx_ch[y1 * w + x1] = gx_ch[y1 * w + x1] + g * ty * tx;
            }
        }
    }
}
