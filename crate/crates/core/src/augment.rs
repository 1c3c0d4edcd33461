//! Clip augmentation: weak (flip / scale / crop), strong (weak plus a
//! random subset of photometric and masking ops plus frame dropout), the
//! standard labeled-data pipeline (weak plus normalization), and temporal
//! subsampling at per-model frame rates.
//!
//! Every function is a pure function of (clip, config, seed): all
//! randomness comes from streams derived off the seed, so identical calls
//! are bit-identical and views can be rebuilt anywhere. One clip's frames
//! always share the same spatial transform parameters.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::VideoClip;
use crate::error::{CoreError, Result};
use crate::rng;
use crate::scalar::Elem;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Uniform range of the spatial rescale factor.
    pub scale_range: [f64; 2],
    /// Output side length of the random crop.
    pub crop_size: usize,
    /// How many distinct strong ops each strong view applies.
    pub strong_ops: usize,
    /// Normalized strength of the strong ops; 0 disables them all.
    pub strong_magnitude: f64,
    /// Probability of zeroing each frame of a strong view.
    pub frame_dropout_prob: f64,
    /// Temporal stride of the conv model's view (low frame rate).
    pub primary_stride: usize,
    /// Temporal stride of the transformer's view (high frame rate).
    pub auxiliary_stride: usize,
    /// Name folded into every derived seed, isolating augmentation
    /// randomness from other consumers of the run seed.
    pub seed_stream: String,
    /// Ablation switch: false turns all spatial augmentation (geometry and
    /// strong photometric ops) into the identity.
    pub spatial_enabled: bool,
    /// Ablation switch: false pins temporal sampling to stride 1, start 0
    /// and disables frame dropout.
    pub temporal_enabled: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            scale_range: [0.8, 1.25],
            crop_size: 16,
            strong_ops: 2,
            strong_magnitude: 0.5,
            frame_dropout_prob: 0.1,
            primary_stride: 2,
            auxiliary_stride: 1,
            seed_stream: "augment".into(),
            spatial_enabled: true,
            temporal_enabled: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CoreError::InvalidArgument(m));
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("frame_dropout_prob", self.frame_dropout_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} {p} outside [0, 1]"));
            }
        }
        if self.scale_range[0] <= 0.0 || self.scale_range[1] < self.scale_range[0] {
            return err(format!("scale_range {:?} must be positive and ordered", self.scale_range));
        }
        if self.crop_size == 0 {
            return err("crop_size must be positive".into());
        }
        if self.strong_ops > STRONG_OP_COUNT {
            return err(format!(
                "strong_ops {} exceeds the {STRONG_OP_COUNT} available ops",
                self.strong_ops
            ));
        }
        if !(0.0..=1.0).contains(&self.strong_magnitude) {
            return err(format!("strong_magnitude {} outside [0, 1]", self.strong_magnitude));
        }
        if self.primary_stride == 0 || self.auxiliary_stride == 0 {
            return err("temporal strides must be positive".into());
        }
        Ok(())
    }

    fn stream(&self, seed: u64, words: &[u64]) -> rand_chacha::ChaCha8Rng {
        let root = rng::derive_seed(seed, &[rng::hash_str(&self.seed_stream)]);
        rng::stream(root, words)
    }
}

/// Per-channel normalization statistics of a training set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const GEO: u64 = 0x67656f;
const FX: u64 = 0x6678;
const FRAME_DROP: u64 = 0x6664;
const START: u64 = 0x7374;

fn dims<E: Elem>(clip: &VideoClip<E>) -> Result<(usize, usize, usize, usize)> {
    let s = clip.frames.shape();
    if s.len() != 4 {
        return Err(CoreError::ShapeMismatch(format!("clip frames want [T,H,W,C], got {s:?}")));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

/// Bilinear sample of one frame at fractional (y, x), coordinates clamped
/// to the frame.
fn bilinear<E: Elem>(frame: &[E], h: usize, w: usize, c: usize, ch: usize, y: f64, x: f64) -> E {
    let yc = y.clamp(0.0, (h - 1) as f64);
    let xc = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (yc.floor() as usize, xc.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (yc - y0 as f64, xc - x0 as f64);
    let at = |yy: usize, xx: usize| frame[(yy * w + xx) * c + ch].to_f64();
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    E::from_f64(top * (1.0 - fy) + bot * fy)
}

struct Geometry {
    flip: bool,
    scaled_h: usize,
    scaled_w: usize,
    crop_y: usize,
    crop_x: usize,
}

fn draw_geometry(
    cfg: &AugmentConfig,
    h: usize,
    w: usize,
    r: &mut rand_chacha::ChaCha8Rng,
) -> Result<Geometry> {
    let crop = cfg.crop_size;
    let side = h.min(w);
    if (cfg.scale_range[1] * side as f64).floor() < crop as f64 {
        return Err(CoreError::InvalidArgument(format!(
            "crop {crop} larger than any scaled frame of a {h}x{w} clip under scale {:?}",
            cfg.scale_range
        )));
    }
    // Lower bound lifted so the scaled frame always fits the crop.
    let lo = cfg.scale_range[0].max(crop as f64 / side as f64);
    let hi = cfg.scale_range[1];
    let flip = r.gen_range(0.0..1.0) < cfg.flip_prob;
    let u = if lo < hi { r.gen_range(lo..hi) } else { lo };
    let scaled_h = ((h as f64 * u).floor() as usize).max(crop);
    let scaled_w = ((w as f64 * u).floor() as usize).max(crop);
    let crop_y = r.gen_range(0..=scaled_h - crop);
    let crop_x = r.gen_range(0..=scaled_w - crop);
    Ok(Geometry { flip, scaled_h, scaled_w, crop_y, crop_x })
}

fn apply_geometry<E: Elem>(clip: &VideoClip<E>, cfg: &AugmentConfig, geo: &Geometry) -> Result<VideoClip<E>> {
    let (t, h, w, c) = dims(clip)?;
    let crop = cfg.crop_size;
    let sy = geo.scaled_h as f64 / h as f64;
    let sx = geo.scaled_w as f64 / w as f64;
    let mut out = vec![E::zero(); t * crop * crop * c];
    for f in 0..t {
        let frame = &clip.frames.data()[f * h * w * c..(f + 1) * h * w * c];
        for oy in 0..crop {
            for ox in 0..crop {
                // Destination pixel in the scaled frame, mapped back to
                // source coordinates; scale 1 is the exact identity.
                let dy = (geo.crop_y + oy) as f64;
                let dx = (geo.crop_x + ox) as f64;
                let src_y = (dy + 0.5) / sy - 0.5;
                let mut src_x = (dx + 0.5) / sx - 0.5;
                if geo.flip {
                    src_x = (w - 1) as f64 - src_x;
                }
                for ch in 0..c {
                    out[((f * crop + oy) * crop + ox) * c + ch] =
                        bilinear(frame, h, w, c, ch, src_y, src_x);
                }
            }
        }
    }
    Ok(VideoClip {
        frames: Tensor::from_vec(&[t, crop, crop, c], out)?,
        label: clip.label,
        meta: clip.meta.clone(),
    })
}

/// Horizontal flip, random rescale, random crop; all frames share one set
/// of transform parameters. Identity when spatial augmentation is ablated
/// away (the crop size must then equal the clip size).
pub fn weak_augment<E: Elem>(clip: &VideoClip<E>, cfg: &AugmentConfig, seed: u64) -> Result<VideoClip<E>> {
    let (_, h, w, _) = dims(clip)?;
    if !cfg.spatial_enabled {
        if h != cfg.crop_size || w != cfg.crop_size {
            return Err(CoreError::InvalidArgument(format!(
                "spatial augmentation disabled but clip is {h}x{w}, not crop size {}",
                cfg.crop_size
            )));
        }
        return Ok(clip.clone());
    }
    if h < cfg.crop_size || w < cfg.crop_size {
        return Err(CoreError::InvalidArgument(format!(
            "clip {h}x{w} smaller than crop {}",
            cfg.crop_size
        )));
    }
    let mut r = cfg.stream(seed, &[GEO]);
    let geo = draw_geometry(cfg, h, w, &mut r)?;
    apply_geometry(clip, cfg, &geo)
}

pub(crate) const STRONG_OP_COUNT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StrongOp {
    BrightnessShift,
    ContrastScale,
    ChannelDrop,
    Cutout,
    PixelDropout,
    GaussianNoise,
}

const STRONG_OPS: [StrongOp; STRONG_OP_COUNT] = [
    StrongOp::BrightnessShift,
    StrongOp::ContrastScale,
    StrongOp::ChannelDrop,
    StrongOp::Cutout,
    StrongOp::PixelDropout,
    StrongOp::GaussianNoise,
];

/// Applies one strong op in place at magnitude `m` in [0, 1]; every op is
/// the identity at m = 0. Values stay clamped to [0, 1].
pub(crate) fn apply_strong_op<E: Elem>(
    frames: &mut Tensor<E>,
    op: StrongOp,
    m: f64,
    r: &mut rand_chacha::ChaCha8Rng,
) {
    let s = frames.shape().to_vec();
    let (t, h, w, c) = (s[0], s[1], s[2], s[3]);
    let clamp = |v: f64| E::from_f64(v.clamp(0.0, 1.0));
    match op {
        StrongOp::BrightnessShift => {
            let delta = (r.gen_range(-1.0..1.0f64)) * 0.4 * m;
            for v in frames.data_mut() {
                *v = clamp(v.to_f64() + delta);
            }
        }
        StrongOp::ContrastScale => {
            let factor = 1.0 + r.gen_range(-1.0..1.0f64) * 0.8 * m;
            for v in frames.data_mut() {
                *v = clamp(0.5 + (v.to_f64() - 0.5) * factor);
            }
        }
        StrongOp::ChannelDrop => {
            let ch = r.gen_range(0..c);
            let dropped = r.gen_range(0.0..1.0) < m;
            if dropped {
                for v in frames.data_mut().chunks_exact_mut(c) {
                    v[ch] = E::zero();
                }
            }
        }
        StrongOp::Cutout => {
            // One spatial square, zeroed in every frame.
            let side = ((h.min(w) as f64) * 0.5 * m).round() as usize;
            if side == 0 {
                return;
            }
            let y0 = r.gen_range(0..=h - side);
            let x0 = r.gen_range(0..=w - side);
            let data = frames.data_mut();
            for f in 0..t {
                for y in y0..y0 + side {
                    for x in x0..x0 + side {
                        for ch in 0..c {
                            data[((f * h + y) * w + x) * c + ch] = E::zero();
                        }
                    }
                }
            }
        }
        StrongOp::PixelDropout => {
            let p = 0.25 * m;
            let data = frames.data_mut();
            for f in 0..t {
                for px in 0..h * w {
                    if r.gen_range(0.0..1.0) < p {
                        for ch in 0..c {
                            data[(f * h * w + px) * c + ch] = E::zero();
                        }
                    }
                }
            }
        }
        StrongOp::GaussianNoise => {
            let sigma = 0.25 * m;
            let dist = Normal::new(0.0f64, sigma).expect("sigma is finite");
            for v in frames.data_mut() {
                *v = clamp(v.to_f64() + dist.sample(r));
            }
        }
    }
}

/// Weak augmentation, then `strong_ops` distinct random strong ops, then
/// frame dropout. The weak stage and the strong stage draw from separate
/// streams, so at zero magnitude and zero frame dropout the output equals
/// `weak_augment` under the same seed.
pub fn strong_augment<E: Elem>(clip: &VideoClip<E>, cfg: &AugmentConfig, seed: u64) -> Result<VideoClip<E>> {
    let mut out = weak_augment(clip, cfg, seed)?;
    if cfg.spatial_enabled && cfg.strong_ops > 0 && cfg.strong_magnitude > 0.0 {
        let mut r = cfg.stream(seed, &[FX]);
        let mut pool: Vec<StrongOp> = STRONG_OPS.to_vec();
        for _ in 0..cfg.strong_ops {
            let pick = r.gen_range(0..pool.len());
            let op = pool.swap_remove(pick);
            apply_strong_op(&mut out.frames, op, cfg.strong_magnitude, &mut r);
        }
    }
    if cfg.temporal_enabled && cfg.frame_dropout_prob > 0.0 {
        let mut r = cfg.stream(seed, &[FRAME_DROP]);
        let (t, h, w, c) = dims(&out)?;
        for f in 0..t {
            if r.gen_range(0.0..1.0) < cfg.frame_dropout_prob {
                for v in &mut out.frames.data_mut()[f * h * w * c..(f + 1) * h * w * c] {
                    *v = E::zero();
                }
            }
        }
    }
    Ok(out)
}

/// Per-channel standardization with training-set statistics.
pub fn normalize<E: Elem>(clip: &VideoClip<E>, stats: &ChannelStats) -> Result<VideoClip<E>> {
    let (_, _, _, c) = dims(clip)?;
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(CoreError::ShapeMismatch(format!(
            "stats cover {} channels, clip has {c}",
            stats.mean.len()
        )));
    }
    if stats.std.iter().any(|&s| s <= 0.0) {
        return Err(CoreError::InvalidArgument("channel std must be positive".into()));
    }
    let mut frames = clip.frames.clone();
    for px in frames.data_mut().chunks_exact_mut(c) {
        for (ch, v) in px.iter_mut().enumerate() {
            *v = E::from_f64((v.to_f64() - stats.mean[ch]) / stats.std[ch]);
        }
    }
    Ok(VideoClip { frames, label: clip.label, meta: clip.meta.clone() })
}

/// The labeled-data pipeline: weak augmentation plus normalization.
pub fn standard_augment<E: Elem>(
    clip: &VideoClip<E>,
    cfg: &AugmentConfig,
    stats: &ChannelStats,
    seed: u64,
) -> Result<VideoClip<E>> {
    normalize(&weak_augment(clip, cfg, seed)?, stats)
}

/// Largest valid start index for sampling `target_frames` at `stride`.
pub fn max_start(clip_len: usize, target_frames: usize, stride: usize) -> Result<usize> {
    let span = (target_frames - 1) * stride + 1;
    if target_frames == 0 || stride == 0 || span > clip_len {
        return Err(CoreError::InvalidArgument(format!(
            "cannot sample {target_frames} frames at stride {stride} from a {clip_len}-frame clip"
        )));
    }
    Ok(clip_len - span)
}

/// Frames start, start+stride, start+2·stride, …
pub fn temporal_sample_at<E: Elem>(
    clip: &VideoClip<E>,
    target_frames: usize,
    stride: usize,
    start: usize,
) -> Result<VideoClip<E>> {
    let (t, h, w, c) = dims(clip)?;
    if start > max_start(t, target_frames, stride)? {
        return Err(CoreError::InvalidArgument(format!(
            "start {start} out of range for {target_frames} frames at stride {stride} in {t}"
        )));
    }
    let fsz = h * w * c;
    let mut out = Vec::with_capacity(target_frames * fsz);
    for i in 0..target_frames {
        let f = start + i * stride;
        out.extend_from_slice(&clip.frames.data()[f * fsz..(f + 1) * fsz]);
    }
    Ok(VideoClip {
        frames: Tensor::from_vec(&[target_frames, h, w, c], out)?,
        label: clip.label,
        meta: clip.meta.clone(),
    })
}

/// Temporal sampling with a uniformly random start.
pub fn temporal_sample<E: Elem>(
    clip: &VideoClip<E>,
    cfg: &AugmentConfig,
    target_frames: usize,
    stride: usize,
    seed: u64,
) -> Result<VideoClip<E>> {
    let (t, ..) = dims(clip)?;
    let hi = max_start(t, target_frames, stride)?;
    let start = if hi == 0 {
        0
    } else {
        cfg.stream(seed, &[START]).gen_range(0..=hi)
    };
    temporal_sample_at(clip, target_frames, stride, start)
}

/// A start index valid for both models' views of one clip, so the pair
/// shares a temporal window. Temporal ablation pins it to 0.
pub fn shared_start(cfg: &AugmentConfig, model_frames: (usize, usize), clip_len: usize, seed: u64) -> Result<usize> {
    let (tz, ta) = model_frames;
    let (sz, sa) = effective_strides(cfg);
    let hi = max_start(clip_len, tz, sz)?.min(max_start(clip_len, ta, sa)?);
    if !cfg.temporal_enabled || hi == 0 {
        return Ok(0);
    }
    Ok(cfg.stream(seed, &[START]).gen_range(0..=hi))
}

/// (primary, auxiliary) strides after the temporal ablation switch.
pub fn effective_strides(cfg: &AugmentConfig) -> (usize, usize) {
    if cfg.temporal_enabled {
        (cfg.primary_stride, cfg.auxiliary_stride)
    } else {
        (1, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ClipMeta, VideoClip};

    fn clip(t: usize, h: usize, w: usize, c: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> VideoClip<f64> {
        let mut data = Vec::with_capacity(t * h * w * c);
        for ft in 0..t {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        data.push(f(ft, y, x, ch));
                    }
                }
            }
        }
        VideoClip {
            frames: Tensor::from_vec(&[t, h, w, c], data).unwrap(),
            label: Some(3),
            meta: ClipMeta::test_stub(),
        }
    }

    fn id_cfg() -> AugmentConfig {
        AugmentConfig { crop_size: 6, ..AugmentConfig::default() }
    }

    #[test]
    fn forced_double_flip_is_identity() {
        let c = clip(2, 6, 6, 1, |t, y, x, _| (t * 36 + y * 6 + x) as f64 / 80.0);
        let cfg = id_cfg();
        let geo = Geometry { flip: true, scaled_h: 6, scaled_w: 6, crop_y: 0, crop_x: 0 };
        let once = apply_geometry(&c, &cfg, &geo).unwrap();
        let twice = apply_geometry(&once, &cfg, &geo).unwrap();
        for (a, b) in twice.frames.data().iter().zip(c.frames.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_scale_origin_crop_is_identity() {
        let c = clip(3, 6, 6, 2, |t, y, x, ch| ((t + 1) * (y + 2) * (x + 3) * (ch + 1)) as f64 / 300.0);
        let cfg = id_cfg();
        let geo = Geometry { flip: false, scaled_h: 6, scaled_w: 6, crop_y: 0, crop_x: 0 };
        let out = apply_geometry(&c, &cfg, &geo).unwrap();
        assert_eq!(out.frames.data(), c.frames.data());
    }

    #[test]
    fn weak_is_deterministic_and_preserves_label() {
        let c = clip(4, 8, 8, 3, |t, y, x, ch| ((t * 31 + y * 7 + x * 3 + ch) % 17) as f64 / 17.0);
        let cfg = AugmentConfig { crop_size: 6, ..AugmentConfig::default() };
        let a = weak_augment(&c, &cfg, 42).unwrap();
        let b = weak_augment(&c, &cfg, 42).unwrap();
        assert_eq!(a.frames.data(), b.frames.data());
        assert_eq!(a.label, Some(3));
        assert_eq!(a.frames.shape(), &[4, 6, 6, 3]);
        let d = weak_augment(&c, &cfg, 43).unwrap();
        assert!(a.frames.data() != d.frames.data());
    }

    #[test]
    fn frames_share_one_geometry() {
        // Identical frames stay identical after augmentation.
        let c = clip(5, 8, 8, 1, |_, y, x, _| ((y * 8 + x) % 13) as f64 / 13.0);
        let cfg = AugmentConfig { crop_size: 5, ..AugmentConfig::default() };
        let out = weak_augment(&c, &cfg, 7).unwrap();
        let fsz = 25;
        for f in 1..5 {
            assert_eq!(
                out.frames.data()[..fsz],
                out.frames.data()[f * fsz..(f + 1) * fsz],
                "frame {f} transformed differently"
            );
        }
    }

    #[test]
    fn zero_magnitude_strong_equals_weak() {
        let c = clip(4, 8, 8, 3, |t, y, x, ch| ((t + y + x + ch) % 11) as f64 / 11.0);
        let cfg = AugmentConfig {
            crop_size: 6,
            strong_magnitude: 0.0,
            frame_dropout_prob: 0.0,
            ..AugmentConfig::default()
        };
        let w = weak_augment(&c, &cfg, 9).unwrap();
        let s = strong_augment(&c, &cfg, 9).unwrap();
        assert_eq!(w.frames.data(), s.frames.data());
    }

    #[test]
    fn cutout_zeroes_exactly_and_everywhere_in_time() {
        let c = clip(3, 8, 8, 2, |_, _, _, _| 0.7);
        let mut frames = c.frames.clone();
        let mut r = rng::stream(5, &[1]);
        apply_strong_op(&mut frames, StrongOp::Cutout, 0.5, &mut r);
        let zeros: usize = frames.data().iter().filter(|&&v| v == 0.0).count();
        // side = round(8 * 0.25) = 2, so 2x2 px * 3 frames * 2 channels.
        assert_eq!(zeros, 2 * 2 * 3 * 2);
        // Same spatial region in every frame.
        let per_frame = 8 * 8 * 2;
        let find = |f: usize| -> Vec<usize> {
            (0..per_frame).filter(|i| frames.data()[f * per_frame + i] == 0.0).collect()
        };
        assert_eq!(find(0), find(1));
        assert_eq!(find(0), find(2));
    }

    #[test]
    fn noise_op_raises_variance_of_flat_clip() {
        let flat = clip(4, 8, 8, 1, |_, _, _, _| 0.5);
        let cfg = AugmentConfig { crop_size: 8, ..AugmentConfig::default() };
        let weak = weak_augment(&flat, &cfg, 3).unwrap();
        let var = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / xs.len() as f64
        };
        let mut noisy = weak.frames.clone();
        let mut r = rng::stream(8, &[2]);
        apply_strong_op(&mut noisy, StrongOp::GaussianNoise, 0.5, &mut r);
        assert!(var(noisy.data()) > var(weak.frames.data()));
        assert!(var(weak.frames.data()) < 1e-18, "flat clip should stay flat under geometry");
    }

    #[test]
    fn strong_ops_are_identity_at_zero_magnitude() {
        let c = clip(2, 6, 6, 3, |t, y, x, ch| ((t * 5 + y * 3 + x * 2 + ch) % 7) as f64 / 7.0);
        for op in STRONG_OPS {
            let mut frames = c.frames.clone();
            let mut r = rng::stream(11, &[op as u64]);
            apply_strong_op(&mut frames, op, 0.0, &mut r);
            assert_eq!(frames.data(), c.frames.data(), "{op:?} not identity at m=0");
        }
    }

    #[test]
    fn temporal_sampling_arithmetic() {
        let c = clip(16, 2, 2, 1, |t, _, _, _| t as f64);
        let s = temporal_sample_at(&c, 4, 2, 0).unwrap();
        let picks: Vec<f64> = (0..4).map(|i| s.frames.data()[i * 4]).collect();
        assert_eq!(picks, vec![0.0, 2.0, 4.0, 6.0]);
        let s = temporal_sample_at(&c, 8, 1, 3).unwrap();
        let picks: Vec<f64> = (0..8).map(|i| s.frames.data()[i * 4]).collect();
        assert_eq!(picks, (3..11).map(|v| v as f64).collect::<Vec<_>>());
        assert_eq!(max_start(16, 4, 2).unwrap(), 9);
        assert_eq!(max_start(16, 8, 1).unwrap(), 8);
        assert!(temporal_sample_at(&c, 9, 2, 0).is_err());
        assert!(temporal_sample_at(&c, 4, 2, 10).is_err());
    }

    #[test]
    fn stride_two_aliases_period_two_flicker() {
        let c = clip(16, 2, 2, 1, |t, _, _, _| if t % 2 == 0 { 0.9 } else { 0.1 });
        let s = temporal_sample_at(&c, 4, 2, 0).unwrap();
        assert!(s.frames.data().iter().all(|&v| v == 0.9));
        let s = temporal_sample_at(&c, 4, 2, 1).unwrap();
        assert!(s.frames.data().iter().all(|&v| v == 0.1));
    }

    #[test]
    fn normalization_centers_the_mean_clip() {
        let stats = ChannelStats { mean: vec![0.3, 0.6], std: vec![0.2, 0.5] };
        let c = clip(2, 3, 3, 2, |_, _, _, ch| if ch == 0 { 0.3 } else { 0.6 });
        let n = normalize(&c, &stats).unwrap();
        assert!(n.frames.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn spatial_ablation_is_identity() {
        let c = clip(4, 6, 6, 3, |t, y, x, ch| ((t + y * x + ch) % 5) as f64 / 5.0);
        let cfg = AugmentConfig {
            crop_size: 6,
            spatial_enabled: false,
            frame_dropout_prob: 0.0,
            ..AugmentConfig::default()
        };
        let w = weak_augment(&c, &cfg, 1).unwrap();
        assert_eq!(w.frames.data(), c.frames.data());
        let s = strong_augment(&c, &cfg, 1).unwrap();
        assert_eq!(s.frames.data(), c.frames.data());
    }

    #[test]
    fn temporal_ablation_pins_strides_and_start() {
        let cfg = AugmentConfig { temporal_enabled: false, ..AugmentConfig::default() };
        assert_eq!(effective_strides(&cfg), (1, 1));
        assert_eq!(shared_start(&cfg, (4, 8), 16, 99).unwrap(), 0);
        let on = AugmentConfig::default();
        assert_eq!(effective_strides(&on), (2, 1));
        let starts: Vec<usize> = (0..64).map(|s| shared_start(&on, (4, 8), 16, s).unwrap()).collect();
        assert!(starts.iter().all(|&s| s <= 8));
        assert!(starts.iter().any(|&s| s > 0));
    }

    #[test]
    fn infeasible_crop_is_an_error() {
        let c = clip(2, 6, 6, 1, |_, _, _, _| 0.5);
        let cfg = AugmentConfig { crop_size: 9, ..AugmentConfig::default() };
        assert!(weak_augment(&c, &cfg, 0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        assert!(AugmentConfig { flip_prob: 1.3, ..AugmentConfig::default() }.validate().is_err());
        assert!(AugmentConfig { scale_range: [0.0, 1.0], ..AugmentConfig::default() }.validate().is_err());
        assert!(AugmentConfig { scale_range: [1.2, 0.8], ..AugmentConfig::default() }.validate().is_err());
        assert!(AugmentConfig { strong_ops: 7, ..AugmentConfig::default() }.validate().is_err());
        assert!(AugmentConfig { primary_stride: 0, ..AugmentConfig::default() }.validate().is_err());
    }
}
