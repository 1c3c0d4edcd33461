//! Small 3D residual CNN: 1×3×3 stem conv, spatial max-pool, then one
//! bottleneck stack per configured stage. Later stages use a 3-frame
//! temporal kernel in their first 1×1 conv; spatial downsampling happens
//! in the middle conv of each stage's first block. No normalization
//! layers; every conv carries a bias.

use super::{Bound, InitCtx, ModelConfig, ParamStore};
use crate::error::{CoreError, Result};
use crate::ops;
use crate::scalar::Elem;
use crate::tape::{Tape, Var};

pub(crate) struct BlockPlan {
    pub prefix: String,
    pub in_ch: usize,
    pub out_ch: usize,
    /// Bottleneck width, out_ch / 4.
    pub inner: usize,
    /// Temporal kernel of the first conv, 1 or 3.
    pub kt: usize,
    /// Spatial stride of the middle conv.
    pub stride: usize,
    pub shortcut: bool,
}

pub(crate) fn plan(cfg: &ModelConfig) -> Vec<BlockPlan> {
    let mut plans = Vec::new();
    let mut in_ch = cfg.resnet_widths[0];
    for (s, (&w, &nb)) in cfg.resnet_widths.iter().zip(&cfg.resnet_blocks).enumerate() {
        for b in 0..nb {
            let stride = if b == 0 && s > 0 { 2 } else { 1 };
            plans.push(BlockPlan {
                prefix: format!("stage{s}.block{b}"),
                in_ch,
                out_ch: w,
                inner: w / 4,
                kt: if s >= 2 { 3 } else { 1 },
                stride,
                shortcut: in_ch != w || stride != 1,
            });
            in_ch = w;
        }
    }
    plans
}

pub(crate) fn init<E: Elem>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<E>> {
    let mut cx: InitCtx<E> = InitCtx::new(seed);
    cx.conv("stem.conv.w", [cfg.resnet_widths[0], cfg.channels, 1, 3, 3])?;
    cx.zeros("stem.conv.b", &[cfg.resnet_widths[0]])?;
    for p in plan(cfg) {
        cx.conv(&format!("{}.conv1.w", p.prefix), [p.inner, p.in_ch, p.kt, 1, 1])?;
        cx.zeros(&format!("{}.conv1.b", p.prefix), &[p.inner])?;
        cx.conv(&format!("{}.conv2.w", p.prefix), [p.inner, p.inner, 1, 3, 3])?;
        cx.zeros(&format!("{}.conv2.b", p.prefix), &[p.inner])?;
        cx.conv(&format!("{}.conv3.w", p.prefix), [p.out_ch, p.inner, 1, 1, 1])?;
        cx.zeros(&format!("{}.conv3.b", p.prefix), &[p.out_ch])?;
        if p.shortcut {
            cx.conv(&format!("{}.short.w", p.prefix), [p.out_ch, p.in_ch, 1, 1, 1])?;
            cx.zeros(&format!("{}.short.b", p.prefix), &[p.out_ch])?;
        }
    }
    let last = *cfg.resnet_widths.last().unwrap();
    cx.linear("head.classifier.w", [last, cfg.num_classes])?;
    cx.zeros("head.classifier.b", &[cfg.num_classes])?;
    cx.linear("head.adapter.w", [last, cfg.embed_dim_out])?;
    cx.zeros("head.adapter.b", &[cfg.embed_dim_out])?;
    Ok(cx.store)
}

pub(crate) fn block<E: Elem>(t: &Tape<E>, p: &Bound<E>, pl: &BlockPlan, x: Var) -> Result<Var> {
    let get = |n: &str| p.var(&format!("{}.{n}", pl.prefix));
    let pt = (pl.kt - 1) / 2;
    let h = ops::conv3d(t, x, get("conv1.w")?, Some(get("conv1.b")?), (1, 1, 1), (pt, 0, 0))?;
    let h = ops::relu(t, h)?;
    let h = ops::conv3d(
        t,
        h,
        get("conv2.w")?,
        Some(get("conv2.b")?),
        (1, pl.stride, pl.stride),
        (0, 1, 1),
    )?;
    let h = ops::relu(t, h)?;
    let h = ops::conv3d(t, h, get("conv3.w")?, Some(get("conv3.b")?), (1, 1, 1), (0, 0, 0))?;
    let sc = if pl.shortcut {
        ops::conv3d(
            t,
            x,
            get("short.w")?,
            Some(get("short.b")?),
            (1, pl.stride, pl.stride),
            (0, 0, 0),
        )?
    } else {
        x
    };
    ops::relu(t, ops::add(t, h, sc)?)
}

pub(crate) fn forward<E: Elem>(
    t: &Tape<E>,
    p: &Bound<E>,
    cfg: &ModelConfig,
    x: Var,
    _train: bool,
) -> Result<(Var, Var)> {
    let sh = t.shape(x);
    let want = [
        cfg.channels,
        cfg.clip_frames_primary,
        cfg.spatial_size,
        cfg.spatial_size,
    ];
    if sh.len() != 5 || sh[1..] != want {
        return Err(CoreError::ShapeMismatch(format!(
            "conv model input: want [B, {}, {}, {}, {}], got {sh:?}",
            want[0], want[1], want[2], want[3]
        )));
    }
    let h = ops::conv3d(
        t,
        x,
        p.var("stem.conv.w")?,
        Some(p.var("stem.conv.b")?),
        (1, 2, 2),
        (0, 1, 1),
    )?;
    let h = ops::relu(t, h)?;
    let mut h = ops::max_pool3d(t, h, (1, 2, 2), (1, 2, 2))?;
    for pl in plan(cfg) {
        h = block(t, p, &pl, h)?;
    }
    let pooled = ops::global_avg_pool(t, h)?;
    let logits = ops::linear(
        t,
        pooled,
        p.var("head.classifier.w")?,
        Some(p.var("head.classifier.b")?),
    )?;
    let emb = ops::linear(
        t,
        pooled,
        p.var("head.adapter.w")?,
        Some(p.var("head.adapter.b")?),
    )?;
    Ok((logits, emb))
}
