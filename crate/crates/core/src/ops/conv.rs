//! 3-D convolution and pooling over [B, C, T, H, W] tensors.

use super::check;
use crate::error::Result;
use crate::scalar::Elem;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn out_extent(i: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = i + 2 * p;
    if padded < k {
        return None;
    }
    Some((padded - k) / s + 1)
}

/// Output-index range [lo, hi] for which `out·stride − pad + koff` lands
/// inside [0, in_len); None when empty.
fn valid_range(koff: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> Option<(usize, usize)> {
    let lo_num = pad as i64 - koff as i64;
    let lo = if lo_num <= 0 {
        0
    } else {
        ((lo_num + stride as i64 - 1) / stride as i64) as usize
    };
    let hi_num = in_len as i64 - 1 + pad as i64 - koff as i64;
    if hi_num < 0 {
        return None;
    }
    let hi = (hi_num / stride as i64) as usize;
    let hi = hi.min(out_len.saturating_sub(1));
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

#[derive(Clone, Copy)]
struct ConvDims {
    b: usize,
    ci: usize,
    co: usize,
    t: usize,
    h: usize,
    w: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    to: usize,
    ho: usize,
    wo: usize,
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
}

/// Shared loop for the forward pass and the two data-side backward passes.
/// `accumulate(x_plane_idx, out_plane_idx, wval)` is called once per
/// (kernel offset, valid output position) with precomputed flat indices.
fn conv_scan<E: Elem>(
    d: &ConvDims,
    weights: &[E],
    mut visit: impl FnMut(usize, usize, E),
) {
    let (st, sh, sw) = d.stride;
    let (pt, ph, pw) = d.pad;
    let in_plane = d.t * d.h * d.w;
    let out_plane = d.to * d.ho * d.wo;
    for b in 0..d.b {
        for co in 0..d.co {
            let out_base = (b * d.co + co) * out_plane;
            for ci in 0..d.ci {
                let in_base = (b * d.ci + ci) * in_plane;
                let w_base = ((co * d.ci + ci) * d.kt) * d.kh * d.kw;
                for kti in 0..d.kt {
                    let Some((tlo, thi)) = valid_range(kti, pt, st, d.t, d.to) else {
                        continue;
                    };
                    for khi in 0..d.kh {
                        let Some((hlo, hhi)) = valid_range(khi, ph, sh, d.h, d.ho) else {
                            continue;
                        };
                        for kwi in 0..d.kw {
                            let Some((wlo, whi)) = valid_range(kwi, pw, sw, d.w, d.wo) else {
                                continue;
                            };
                            let wval = weights[w_base + (kti * d.kh + khi) * d.kw + kwi];
                            if wval == E::zero() {
                                continue;
                            }
                            for to in tlo..=thi {
                                let ti = to * st + kti - pt;
                                for ho in hlo..=hhi {
                                    let hi = ho * sh + khi - ph;
                                    let x_row = in_base + (ti * d.h + hi) * d.w;
                                    let o_row = out_base + (to * d.ho + ho) * d.wo;
                                    for woi in wlo..=whi {
                                        let wi = woi * sw + kwi - pw;
                                        visit(x_row + wi, o_row + woi, wval);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Convolution with per-axis stride and zero padding; optional fused bias
/// of shape [Co].
pub fn conv3d<E: Elem>(
    t: &Tape<E>,
    x: Var,
    w: Var,
    bias: Option<Var>,
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
) -> Result<Var> {
    let vx = t.value(x);
    let vw = t.value(w);
    let (sx, sw_) = (vx.shape(), vw.shape());
    check(sx.len() == 5 && sw_.len() == 5, "conv3d", || {
        format!("x {sx:?} w {sw_:?}")
    })?;
    check(sx[1] == sw_[1], "conv3d", || {
        format!("in-channels {} vs kernel {}", sx[1], sw_[1])
    })?;
    check(stride.0 > 0 && stride.1 > 0 && stride.2 > 0, "conv3d", || "zero stride".into())?;
    let to = out_extent(sx[2], sw_[2], stride.0, pad.0);
    let ho = out_extent(sx[3], sw_[3], stride.1, pad.1);
    let wo = out_extent(sx[4], sw_[4], stride.2, pad.2);
    let (Some(to), Some(ho), Some(wo)) = (to, ho, wo) else {
        return Err(crate::error::CoreError::ShapeMismatch(format!(
            "conv3d: kernel {:?} larger than padded input {:?}",
            &sw_[2..],
            &sx[2..]
        )));
    };
    let d = ConvDims {
        b: sx[0],
        ci: sx[1],
        co: sw_[0],
        t: sx[2],
        h: sx[3],
        w: sx[4],
        kt: sw_[2],
        kh: sw_[3],
        kw: sw_[4],
        to,
        ho,
        wo,
        stride,
        pad,
    };
    let out_numel = d.b * d.co * to * ho * wo;
    let mut data = vec![E::zero(); out_numel];
    conv_scan(&d, vw.data(), |xi, oi, wv| data[oi] += wv * vx.data()[xi]);

    let mut parents = vec![x, w];
    if let Some(bv) = bias {
        let bs = t.shape(bv);
        check(bs == vec![d.co], "conv3d", || format!("bias {bs:?} vs Co {}", d.co))?;
        let vb = t.value(bv);
        let plane = to * ho * wo;
        for b in 0..d.b {
            for co in 0..d.co {
                let base = (b * d.co + co) * plane;
                let add = vb.data()[co];
                for v in &mut data[base..base + plane] {
                    *v += add;
                }
            }
        }
        parents.push(bv);
    }

    let has_bias = bias.is_some();
    let x_numel = vx.numel();
    let w_numel = vw.numel();
    t.push(
        Tensor::new(vec![d.b, d.co, to, ho, wo], data)?,
        parents,
        move |g| {
            let mut dx = vec![E::zero(); x_numel];
            conv_scan(&d, vw.data(), |xi, oi, wv| dx[xi] += wv * g[oi]);
            // Weight gradient: same traversal but indexed per kernel tap,
            // with the tap value replaced by an accumulator.
            let mut dw = vec![E::zero(); w_numel];
            conv_scan_weights(&d, vx.data(), g, &mut dw);
            let mut out = vec![dx, dw];
            if has_bias {
                let plane = d.to * d.ho * d.wo;
                let mut db = vec![E::zero(); d.co];
                for b in 0..d.b {
                    for co in 0..d.co {
                        let base = (b * d.co + co) * plane;
                        let mut acc = E::zero();
                        for &v in &g[base..base + plane] {
                            acc += v;
                        }
                        db[co] += acc;
                    }
                }
                out.push(db);
            }
            out
        },
    )
}

fn conv_scan_weights<E: Elem>(d: &ConvDims, x: &[E], g: &[E], dw: &mut [E]) {
    let (st, sh, sw) = d.stride;
    let (pt, ph, pw) = d.pad;
    let in_plane = d.t * d.h * d.w;
    let out_plane = d.to * d.ho * d.wo;
    for b in 0..d.b {
        for co in 0..d.co {
            let out_base = (b * d.co + co) * out_plane;
            for ci in 0..d.ci {
                let in_base = (b * d.ci + ci) * in_plane;
                let w_base = ((co * d.ci + ci) * d.kt) * d.kh * d.kw;
                for kti in 0..d.kt {
                    let Some((tlo, thi)) = valid_range(kti, pt, st, d.t, d.to) else {
                        continue;
                    };
                    for khi in 0..d.kh {
                        let Some((hlo, hhi)) = valid_range(khi, ph, sh, d.h, d.ho) else {
                            continue;
                        };
                        for kwi in 0..d.kw {
                            let Some((wlo, whi)) = valid_range(kwi, pw, sw, d.w, d.wo) else {
                                continue;
                            };
                            let mut acc = E::zero();
                            for to in tlo..=thi {
                                let ti = to * st + kti - pt;
                                for ho in hlo..=hhi {
                                    let hi = ho * sh + khi - ph;
                                    let x_row = in_base + (ti * d.h + hi) * d.w;
                                    let o_row = out_base + (to * d.ho + ho) * d.wo;
                                    for woi in wlo..=whi {
                                        let wi = woi * sw + kwi - pw;
                                        acc += x[x_row + wi] * g[o_row + woi];
                                    }
                                }
                            }
                            dw[w_base + (kti * d.kh + khi) * d.kw + kwi] += acc;
                        }
                    }
                }
            }
        }
    }
}

fn pool_dims<E: Elem>(
    op: &str,
    t: &Tape<E>,
    x: Var,
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
) -> Result<([usize; 5], usize, usize, usize)> {
    let s = t.shape(x);
    check(s.len() == 5, op, || format!("input {s:?}"))?;
    check(stride.0 > 0 && stride.1 > 0 && stride.2 > 0, op, || "zero stride".into())?;
    check(
        kernel.0 > 0 && kernel.0 <= s[2] && kernel.1 > 0 && kernel.1 <= s[3] && kernel.2 > 0 && kernel.2 <= s[4],
        op,
        || format!("kernel {kernel:?} on input {s:?}"),
    )?;
    let to = (s[2] - kernel.0) / stride.0 + 1;
    let ho = (s[3] - kernel.1) / stride.1 + 1;
    let wo = (s[4] - kernel.2) / stride.2 + 1;
    Ok(([s[0], s[1], s[2], s[3], s[4]], to, ho, wo))
}

/// Max pooling, no padding; ties resolve to the first element in scan
/// order so the backward scatter is deterministic.
pub fn max_pool3d<E: Elem>(
    t: &Tape<E>,
    x: Var,
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
) -> Result<Var> {
    let ([b, c, ti, hi, wi], to, ho, wo) = pool_dims("max_pool3d", t, x, kernel, stride)?;
    let vx = t.value(x);
    let in_plane = ti * hi * wi;
    let out_numel = b * c * to * ho * wo;
    let mut data = vec![E::zero(); out_numel];
    let mut argmax = vec![0usize; out_numel];
    let mut oi = 0usize;
    for bc in 0..b * c {
        let base = bc * in_plane;
        for ot in 0..to {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = E::neg_infinity();
                    let mut best_idx = 0usize;
                    for kt in 0..kernel.0 {
                        for kh in 0..kernel.1 {
                            let row = base + ((ot * stride.0 + kt) * hi + oh * stride.1 + kh) * wi + ow * stride.2;
                            for kw in 0..kernel.2 {
                                let v = vx.data()[row + kw];
                                if v > best {
                                    best = v;
                                    best_idx = row + kw;
                                }
                            }
                        }
                    }
                    data[oi] = best;
                    argmax[oi] = best_idx;
                    oi += 1;
                }
            }
        }
    }
    let x_numel = vx.numel();
    t.push(
        Tensor::new(vec![b, c, to, ho, wo], data)?,
        vec![x],
        move |g| {
            let mut dx = vec![E::zero(); x_numel];
            for (gi, &src) in g.iter().zip(&argmax) {
                dx[src] += *gi;
            }
            vec![dx]
        },
    )
}

/// Windowed average pooling, no padding.
pub fn avg_pool3d<E: Elem>(
    t: &Tape<E>,
    x: Var,
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
) -> Result<Var> {
    let ([b, c, ti, hi, wi], to, ho, wo) = pool_dims("avg_pool3d", t, x, kernel, stride)?;
    let vx = t.value(x);
    let in_plane = ti * hi * wi;
    let window = kernel.0 * kernel.1 * kernel.2;
    let inv = E::one() / E::from_usize(window);
    let out_numel = b * c * to * ho * wo;
    let mut data = vec![E::zero(); out_numel];
    let mut oi = 0usize;
    for bc in 0..b * c {
        let base = bc * in_plane;
        for ot in 0..to {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = E::zero();
                    for kt in 0..kernel.0 {
                        for kh in 0..kernel.1 {
                            let row = base + ((ot * stride.0 + kt) * hi + oh * stride.1 + kh) * wi + ow * stride.2;
                            for kw in 0..kernel.2 {
                                acc += vx.data()[row + kw];
                            }
                        }
                    }
                    data[oi] = acc * inv;
                    oi += 1;
                }
            }
        }
    }
    let x_numel = vx.numel();
    t.push(
        Tensor::new(vec![b, c, to, ho, wo], data)?,
        vec![x],
        move |g| {
            let mut dx = vec![E::zero(); x_numel];
            let mut oi = 0usize;
            for bc in 0..b * c {
                let base = bc * in_plane;
                for ot in 0..to {
                    for oh in 0..ho {
                        for ow in 0..wo {
                            let spread = g[oi] * inv;
                            for kt in 0..kernel.0 {
                                for kh in 0..kernel.1 {
                                    let row = base
                                        + ((ot * stride.0 + kt) * hi + oh * stride.1 + kh) * wi
                                        + ow * stride.2;
                                    for kw in 0..kernel.2 {
                                        dx[row + kw] += spread;
                                    }
                                }
                            }
                            oi += 1;
                        }
                    }
                }
            }
            vec![dx]
        },
    )
}

/// Mean over all of T, H, W: [B,C,T,H,W] -> [B,C].
pub fn global_avg_pool<E: Elem>(t: &Tape<E>, x: Var) -> Result<Var> {
    let s = t.shape(x);
    check(s.len() == 5, "global_avg_pool", || format!("input {s:?}"))?;
    let vx = t.value(x);
    let plane = s[2] * s[3] * s[4];
    check(plane > 0, "global_avg_pool", || "empty spatial extent".into())?;
    let inv = E::one() / E::from_usize(plane);
    let rows = s[0] * s[1];
    let mut data = vec![E::zero(); rows];
    for (r, out) in data.iter_mut().enumerate() {
        let mut acc = E::zero();
        for &v in &vx.data()[r * plane..(r + 1) * plane] {
            acc += v;
        }
        *out = acc * inv;
    }
    t.push(Tensor::new(vec![s[0], s[1]], data)?, vec![x], move |g| {
        let mut dx = vec![E::zero(); rows * plane];
        for (r, &gi) in g.iter().enumerate() {
            let spread = gi * inv;
            for v in &mut dx[r * plane..(r + 1) * plane] {
                *v = spread;
            }
        }
        vec![dx]
    })
}
