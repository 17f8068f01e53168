//! Raw numeric kernels behind the graph operations.
//!
//! Kernels work on plain slices so the forward constructors and the backward
//! dispatcher share one implementation. Parallel kernels split work into
//! disjoint output slices, each filled by a fixed sequential loop, so results
//! are bit-identical regardless of worker count.

use rayon::prelude::*;

use crate::scalar::Scalar;

/// N,C,H,W dims bundle to keep kernel signatures readable.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Dims4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims4 {
    pub fn from_shape(shape: &[usize]) -> Self {
        Dims4 {
            n: shape[0],
            c: shape[1],
            h: shape[2],
            w: shape[3],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

// ── convolution (stride 1, square kernel, zero padding) ─────────────

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    xd: Dims4,
    cout: usize,
    k: usize,
    pad: usize,
) -> Vec<T> {
    let plane = xd.plane();
    let mut out = vec![T::zero(); xd.n * cout * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(pi, oplane)| {
        let n = pi / cout;
        let o = pi % cout;
        oplane.fill(bias[o]);
        for c in 0..xd.c {
            let xplane = &x[(n * xd.c + c) * plane..][..plane];
            for u in 0..k {
                for v in 0..k {
                    let wv = weight[((o * xd.c + c) * k + u) * k + v];
                    accumulate_shifted(oplane, xplane, wv, xd.h, xd.w, u, v, pad);
                }
            }
        }
    });
    out
}

/// out[i][j] += wv * x[i+u-pad][j+v-pad] over the valid index range.
fn accumulate_shifted<T: Scalar>(
    out: &mut [T],
    x: &[T],
    wv: T,
    h: usize,
    w: usize,
    u: usize,
    v: usize,
    pad: usize,
) {
    let du = u as isize - pad as isize;
    let dv = v as isize - pad as isize;
    let i_lo = (-du).max(0) as usize;
    let i_hi = ((h as isize - du).min(h as isize)).max(0) as usize;
    let j_lo = (-dv).max(0) as usize;
    let j_hi = ((w as isize - dv).min(w as isize)).max(0) as usize;
    if j_lo >= j_hi {
        return;
    }
    for i in i_lo..i_hi {
        let src = (i as isize + du) as usize;
        let xrow = &x[src * w + (j_lo as isize + dv) as usize..][..j_hi - j_lo];
        let orow = &mut out[i * w + j_lo..][..j_hi - j_lo];
        for (o, s) in orow.iter_mut().zip(xrow) {
            *o = *o + wv * *s;
        }
    }
}

pub(crate) fn conv2d_backward_input<T: Scalar>(
    gout: &[T],
    weight: &[T],
    xd: Dims4,
    cout: usize,
    k: usize,
    pad: usize,
) -> Vec<T> {
    let plane = xd.plane();
    let mut gin = vec![T::zero(); xd.n * xd.c * plane];
    gin.par_chunks_mut(plane).enumerate().for_each(|(pi, gplane)| {
        let n = pi / xd.c;
        let c = pi % xd.c;
        for o in 0..cout {
            let gout_plane = &gout[(n * cout + o) * plane..][..plane];
            for u in 0..k {
                for v in 0..k {
                    let wv = weight[((o * xd.c + c) * k + u) * k + v];
                    scatter_shifted(gplane, gout_plane, wv, xd.h, xd.w, u, v, pad);
                }
            }
        }
    });
    gin
}

/// gin[i+u-pad][j+v-pad] += wv * g[i][j] over the valid index range
/// (transpose of `accumulate_shifted`).
fn scatter_shifted<T: Scalar>(
    gin: &mut [T],
    g: &[T],
    wv: T,
    h: usize,
    w: usize,
    u: usize,
    v: usize,
    pad: usize,
) {
    let du = u as isize - pad as isize;
    let dv = v as isize - pad as isize;
    let i_lo = (-du).max(0) as usize;
    let i_hi = ((h as isize - du).min(h as isize)).max(0) as usize;
    let j_lo = (-dv).max(0) as usize;
    let j_hi = ((w as isize - dv).min(w as isize)).max(0) as usize;
    if j_lo >= j_hi {
        return;
    }
    for i in i_lo..i_hi {
        let dst = (i as isize + du) as usize;
        let grow = &g[i * w + j_lo..][..j_hi - j_lo];
        let drow = &mut gin[dst * w + (j_lo as isize + dv) as usize..][..j_hi - j_lo];
        for (d, gv) in drow.iter_mut().zip(grow) {
            *d = *d + wv * *gv;
        }
    }
}

pub(crate) fn conv2d_backward_weight<T: Scalar>(
    gout: &[T],
    x: &[T],
    xd: Dims4,
    cout: usize,
    k: usize,
    pad: usize,
) -> Vec<T> {
    let plane = xd.plane();
    let wsize = xd.c * k * k;
    let mut gw = vec![T::zero(); cout * wsize];
    gw.par_chunks_mut(wsize).enumerate().for_each(|(o, gwslice)| {
        for c in 0..xd.c {
            for u in 0..k {
                for v in 0..k {
                    let du = u as isize - pad as isize;
                    let dv = v as isize - pad as isize;
                    let i_lo = (-du).max(0) as usize;
                    let i_hi = ((xd.h as isize - du).min(xd.h as isize)).max(0) as usize;
                    let j_lo = (-dv).max(0) as usize;
                    let j_hi = ((xd.w as isize - dv).min(xd.w as isize)).max(0) as usize;
                    let mut acc = T::zero();
                    if j_lo < j_hi {
                        for n in 0..xd.n {
                            let gplane = &gout[(n * cout + o) * plane..][..plane];
                            let xplane = &x[(n * xd.c + c) * plane..][..plane];
                            for i in i_lo..i_hi {
                                let src = (i as isize + du) as usize;
                                let grow = &gplane[i * xd.w + j_lo..][..j_hi - j_lo];
                                let xrow = &xplane
                                    [src * xd.w + (j_lo as isize + dv) as usize..][..j_hi - j_lo];
                                for (gv, xv) in grow.iter().zip(xrow) {
                                    acc = acc + *gv * *xv;
                                }
                            }
                        }
                    }
                    gwslice[(c * k + u) * k + v] = acc;
                }
            }
        }
    });
    gw
}

pub(crate) fn conv2d_backward_bias<T: Scalar>(gout: &[T], n: usize, cout: usize, plane: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); cout];
    gb.par_iter_mut().enumerate().for_each(|(o, slot)| {
        let mut acc = T::zero();
        for ni in 0..n {
            for gv in &gout[(ni * cout + o) * plane..][..plane] {
                acc = acc + *gv;
            }
        }
        *slot = acc;
    });
    gb
}

// ── batch normalization ──────────────────────────────────────────────

/// Per-channel mean and biased variance over the N,H,W axes.
pub(crate) fn bn_batch_stats<T: Scalar>(x: &[T], d: Dims4) -> (Vec<T>, Vec<T>) {
    let plane = d.plane();
    let m = T::from_f64((d.n * plane) as f64);
    let mut mean = vec![T::zero(); d.c];
    let mut var = vec![T::zero(); d.c];
    mean.par_iter_mut()
        .zip(var.par_iter_mut())
        .enumerate()
        .for_each(|(c, (mslot, vslot))| {
            let mut sum = T::zero();
            for n in 0..d.n {
                for xv in &x[(n * d.c + c) * plane..][..plane] {
                    sum = sum + *xv;
                }
            }
            let mu = sum / m;
            let mut sq = T::zero();
            for n in 0..d.n {
                for xv in &x[(n * d.c + c) * plane..][..plane] {
                    let dx = *xv - mu;
                    sq = sq + dx * dx;
                }
            }
            *mslot = mu;
            *vslot = sq / m;
        });
    (mean, var)
}

pub(crate) fn bn_normalize<T: Scalar>(
    x: &[T],
    d: Dims4,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> Vec<T> {
    let plane = d.plane();
    let mut out = vec![T::zero(); x.len()];
    out.par_chunks_mut(plane).enumerate().for_each(|(pi, oplane)| {
        let c = pi % d.c;
        let (mu, istd, ga, be) = (mean[c], inv_std[c], gamma[c], beta[c]);
        let xplane = &x[pi * plane..][..plane];
        for (o, xv) in oplane.iter_mut().zip(xplane) {
            *o = ga * ((*xv - mu) * istd) + be;
        }
    });
    out
}

/// Gradients for batchnorm. When `batch_stats` is set the normalization
/// statistics were computed from this batch and contribute to the gradient.
pub(crate) fn bn_backward<T: Scalar>(
    gout: &[T],
    x: &[T],
    d: Dims4,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    batch_stats: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane = d.plane();
    let m = T::from_f64((d.n * plane) as f64);

    // Per-channel reductions.
    let mut sums = vec![(T::zero(), T::zero()); d.c]; // (sum g, sum g*xhat)
    sums.par_iter_mut().enumerate().for_each(|(c, slot)| {
        let (mu, istd) = (mean[c], inv_std[c]);
        let mut sg = T::zero();
        let mut sgx = T::zero();
        for n in 0..d.n {
            let base = (n * d.c + c) * plane;
            for (gv, xv) in gout[base..][..plane].iter().zip(&x[base..][..plane]) {
                let xhat = (*xv - mu) * istd;
                sg = sg + *gv;
                sgx = sgx + *gv * xhat;
            }
        }
        *slot = (sg, sgx);
    });

    let gbeta: Vec<T> = sums.iter().map(|s| s.0).collect();
    let ggamma: Vec<T> = sums.iter().map(|s| s.1).collect();

    let mut gin = vec![T::zero(); x.len()];
    gin.par_chunks_mut(plane).enumerate().for_each(|(pi, gplane)| {
        let c = pi % d.c;
        let (mu, istd, ga) = (mean[c], inv_std[c], gamma[c]);
        let (sg, sgx) = sums[c];
        let xplane = &x[pi * plane..][..plane];
        let gout_plane = &gout[pi * plane..][..plane];
        if batch_stats {
            let scale = ga * istd / m;
            for ((gi, gv), xv) in gplane.iter_mut().zip(gout_plane).zip(xplane) {
                let xhat = (*xv - mu) * istd;
                *gi = scale * (m * *gv - sg - xhat * sgx);
            }
        } else {
            let scale = ga * istd;
            for (gi, gv) in gplane.iter_mut().zip(gout_plane) {
                *gi = scale * *gv;
            }
        }
    });

    (gin, ggamma, gbeta)
}

// ── 2x2 max pooling (stride 2) ───────────────────────────────────────

/// Returns pooled output plus the flat input index of each window maximum.
/// Ties break to the first element in row-major window order.
pub(crate) fn maxpool2x2_forward<T: Scalar>(x: &[T], d: Dims4) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (d.h / 2, d.w / 2);
    let in_plane = d.plane();
    let out_plane = oh * ow;
    let planes = d.n * d.c;
    let mut out = vec![T::zero(); planes * out_plane];
    let mut argmax = vec![0u32; planes * out_plane];
    out.par_chunks_mut(out_plane)
        .zip(argmax.par_chunks_mut(out_plane))
        .enumerate()
        .for_each(|(pi, (oplane, aplane))| {
            let xplane = &x[pi * in_plane..][..in_plane];
            for i in 0..oh {
                for j in 0..ow {
                    let base = (2 * i) * d.w + 2 * j;
                    let candidates = [base, base + 1, base + d.w, base + d.w + 1];
                    let mut best = candidates[0];
                    let mut best_v = xplane[best];
                    for &idx in &candidates[1..] {
                        if xplane[idx] > best_v {
                            best_v = xplane[idx];
                            best = idx;
                        }
                    }
                    oplane[i * ow + j] = best_v;
                    aplane[i * ow + j] = (pi * in_plane + best) as u32;
                }
            }
        });
    (out, argmax)
}

pub(crate) fn maxpool2x2_backward<T: Scalar>(gout: &[T], argmax: &[u32], in_len: usize) -> Vec<T> {
    let mut gin = vec![T::zero(); in_len];
    // Window argmaxes are disjoint per plane; a sequential scatter keeps the
    // accumulation order fixed.
    for (gv, &idx) in gout.iter().zip(argmax) {
        let slot = &mut gin[idx as usize];
        *slot = *slot + *gv;
    }
    gin
}

// ── bilinear resize (half-pixel centers) ─────────────────────────────

/// Source coordinates for one output axis: (lo index, hi index, fraction).
pub(crate) fn bilinear_axis<T: Scalar>(in_len: usize, out_len: usize) -> Vec<(usize, usize, T)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, T::from_f64(src - lo as f64))
        })
        .collect()
}

fn lerp<T: Scalar>(a: T, b: T, t: T) -> T {
    a + t * (b - a)
}

pub(crate) fn bilinear_resize_plane<T: Scalar>(
    src: &[T],
    in_w: usize,
    dst: &mut [T],
    out_w: usize,
    ys: &[(usize, usize, T)],
    xs: &[(usize, usize, T)],
) {
    for (i, &(y0, y1, fy)) in ys.iter().enumerate() {
        let row0 = &src[y0 * in_w..][..in_w];
        let row1 = &src[y1 * in_w..][..in_w];
        let drow = &mut dst[i * out_w..][..out_w];
        for (d, &(x0, x1, fx)) in drow.iter_mut().zip(xs) {
            let r0 = lerp(row0[x0], row0[x1], fx);
            let r1 = lerp(row1[x0], row1[x1], fx);
            *d = lerp(r0, r1, fy);
        }
    }
}

pub(crate) fn bilinear_forward<T: Scalar>(x: &[T], d: Dims4, out_h: usize, out_w: usize) -> Vec<T> {
    let ys = bilinear_axis::<T>(d.h, out_h);
    let xs = bilinear_axis::<T>(d.w, out_w);
    let in_plane = d.plane();
    let out_plane = out_h * out_w;
    let mut out = vec![T::zero(); d.n * d.c * out_plane];
    out.par_chunks_mut(out_plane).enumerate().for_each(|(pi, oplane)| {
        bilinear_resize_plane(&x[pi * in_plane..][..in_plane], d.w, oplane, out_w, &ys, &xs);
    });
    out
}

pub(crate) fn bilinear_backward<T: Scalar>(
    gout: &[T],
    d: Dims4,
    out_h: usize,
    out_w: usize,
) -> Vec<T> {
    let ys = bilinear_axis::<T>(d.h, out_h);
    let xs = bilinear_axis::<T>(d.w, out_w);
    let in_plane = d.plane();
    let out_plane = out_h * out_w;
    let mut gin = vec![T::zero(); d.n * d.c * in_plane];
    gin.par_chunks_mut(in_plane).enumerate().for_each(|(pi, gplane)| {
        let gout_plane = &gout[pi * out_plane..][..out_plane];
        for (i, &(y0, y1, fy)) in ys.iter().enumerate() {
            let wy1 = fy;
            let wy0 = T::one() - fy;
            for (j, &(x0, x1, fx)) in xs.iter().enumerate() {
                let g = gout_plane[i * out_w + j];
                let wx1 = fx;
                let wx0 = T::one() - fx;
                gplane[y0 * d.w + x0] = gplane[y0 * d.w + x0] + g * wy0 * wx0;
                gplane[y0 * d.w + x1] = gplane[y0 * d.w + x1] + g * wy0 * wx1;
                gplane[y1 * d.w + x0] = gplane[y1 * d.w + x0] + g * wy1 * wx0;
                gplane[y1 * d.w + x1] = gplane[y1 * d.w + x1] + g * wy1 * wx1;
            }
        }
    });
    gin
}
