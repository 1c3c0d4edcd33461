//! Synthetic video data: clip types, the procedural generator, split
//! construction, serialization, and the training batch iterator.
//!
//! Unlabeled clips carry their ground-truth class only in a private field;
//! nothing on the training path can read it. The pseudo-label quality
//! probe goes through [`UnlabeledClip::probe_ground_truth`], the one
//! deliberate opening.

mod generator;
mod iterator;

pub use generator::{class_name, generate_clip, CLASS_NAMES};
pub use iterator::{batches_per_epoch, Batch, BatchIterator};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::ChannelStats;
use crate::error::{CoreError, Result};
use crate::model::Archive;
use crate::rng;
use crate::scalar::Elem;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub clips_per_class: usize,
    pub clip_frames: usize,
    pub spatial: usize,
    pub channels: usize,
    /// Fraction of each class's training clips that keep their labels.
    pub label_ratio: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub test_per_class: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            clips_per_class: 120,
            clip_frames: 16,
            spatial: 16,
            channels: 3,
            label_ratio: 0.10,
            noise_sigma: 0.05,
            seed: 0,
            test_per_class: 25,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CoreError::InvalidArgument(m));
        if self.num_classes < 2 || self.num_classes > CLASS_NAMES.len() {
            return err(format!(
                "num_classes {} outside 2..={}",
                self.num_classes,
                CLASS_NAMES.len()
            ));
        }
        if self.clips_per_class == 0 || self.test_per_class == 0 {
            return err("clips_per_class and test_per_class must be positive".into());
        }
        if self.clip_frames < 8 {
            return err(format!("clip_frames {} too short for the motion programs", self.clip_frames));
        }
        if self.spatial < 8 {
            return err(format!("spatial {} too small for the motion programs", self.spatial));
        }
        if self.channels == 0 || self.channels > 3 {
            return err(format!("channels {} outside 1..=3", self.channels));
        }
        if !(self.label_ratio > 0.0 && self.label_ratio <= 1.0) {
            return err(format!("label_ratio {} outside (0, 1]", self.label_ratio));
        }
        if self.noise_sigma < 0.0 {
            return err(format!("noise_sigma {} negative", self.noise_sigma));
        }
        Ok(())
    }

    /// Labeled clips per class: ceil(label_ratio · clips_per_class),
    /// capped to the class size.
    pub fn labeled_per_class(&self) -> usize {
        ((self.label_ratio * self.clips_per_class as f64).ceil() as usize)
            .clamp(1, self.clips_per_class)
    }
}

/// Generator bookkeeping carried on every clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub class_name: String,
    pub seed: u64,
    pub noise_sigma: f64,
    /// Directional variant of the motion program (-1, 0, or +1). Probe
    /// material only; class labels never depend on it.
    pub direction: i8,
}

impl ClipMeta {
    #[cfg(test)]
    pub(crate) fn test_stub() -> Self {
        Self { class_name: "stub".into(), seed: 0, noise_sigma: 0.0, direction: 0 }
    }
}

/// One video clip, frames as [T, H, W, C] in [0, 1].
#[derive(Debug, Clone)]
pub struct VideoClip<E: Elem> {
    pub frames: Tensor<E>,
    pub label: Option<usize>,
    pub meta: ClipMeta,
}

/// A training clip whose label is withheld from the training path.
#[derive(Debug, Clone)]
pub struct UnlabeledClip<E: Elem> {
    pub frames: Tensor<E>,
    pub meta: ClipMeta,
    hidden_label: usize,
}

impl<E: Elem> UnlabeledClip<E> {
    /// Ground truth for the pseudo-label quality probe. Never call this
    /// from loss or batch construction code.
    pub fn probe_ground_truth(&self) -> usize {
        self.hidden_label
    }

    /// The clip with its label stripped, for the augmentation pipeline.
    pub fn unlabeled_video(&self) -> VideoClip<E> {
        VideoClip { frames: self.frames.clone(), label: None, meta: self.meta.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset<E: Elem> {
    pub config: DatasetConfig,
    pub labeled: Vec<VideoClip<E>>,
    pub unlabeled: Vec<UnlabeledClip<E>>,
    pub test: Vec<VideoClip<E>>,
}

const TRAIN_TAG: u64 = 0x7472;
const TEST_TAG: u64 = 0x7465;

/// Generates all three class-balanced splits. The first
/// `labeled_per_class` training clips of each class keep their labels;
/// the rest become unlabeled. Per-clip seeds are derived from disjoint
/// (split, class, index) words, so the splits can never share a clip.
pub fn build_dataset<E: Elem>(cfg: &DatasetConfig) -> Result<Dataset<E>> {
    cfg.validate()?;
    let n_l = cfg.labeled_per_class();
    let mut labeled = Vec::with_capacity(n_l * cfg.num_classes);
    let mut unlabeled = Vec::with_capacity((cfg.clips_per_class - n_l) * cfg.num_classes);
    let mut test = Vec::with_capacity(cfg.test_per_class * cfg.num_classes);
    for class in 0..cfg.num_classes {
        for i in 0..cfg.clips_per_class {
            let seed = rng::derive_seed(cfg.seed, &[TRAIN_TAG, class as u64, i as u64]);
            let clip = generate_clip::<E>(class, cfg, seed)?;
            if i < n_l {
                labeled.push(clip);
            } else {
                unlabeled.push(UnlabeledClip {
                    frames: clip.frames,
                    meta: clip.meta,
                    hidden_label: class,
                });
            }
        }
        for j in 0..cfg.test_per_class {
            let seed = rng::derive_seed(cfg.seed, &[TEST_TAG, class as u64, j as u64]);
            test.push(generate_clip::<E>(class, cfg, seed)?);
        }
    }
    Ok(Dataset { config: cfg.clone(), labeled, unlabeled, test })
}

impl<E: Elem> Dataset<E> {
    /// Per-channel mean and standard deviation over all training pixels
    /// (labeled and unlabeled), used for input normalization.
    pub fn channel_stats(&self) -> Result<ChannelStats> {
        let c = self.config.channels;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        let mut count = 0usize;
        let mut feed = |frames: &Tensor<E>| {
            for px in frames.data().chunks_exact(c) {
                for (ch, &v) in px.iter().enumerate() {
                    let x = v.to_f64();
                    sum[ch] += x;
                    sq[ch] += x * x;
                }
            }
            count += frames.numel() / c;
        };
        for clip in &self.labeled {
            feed(&clip.frames);
        }
        for clip in &self.unlabeled {
            feed(&clip.frames);
        }
        if count == 0 {
            return Err(CoreError::InvalidArgument("empty training set".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let std: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / count as f64 - m * m).max(0.0)).sqrt().max(1e-6))
            .collect();
        Ok(ChannelStats { mean, std })
    }
}

#[derive(Serialize, Deserialize)]
struct ClipRecord {
    label: Option<usize>,
    meta: ClipMeta,
}

fn clip_key(i: usize) -> String {
    format!("clip{i:06}")
}

fn split_archive<E: Elem>(
    cfg: &DatasetConfig,
    split: &str,
    clips: impl Iterator<Item = (Tensor<E>, ClipRecord)>,
) -> Result<Archive<E>> {
    let mut a = Archive::new();
    a.set_meta("kind", "clip-split");
    a.set_meta("split", split);
    a.set_meta(
        "config",
        &serde_json::to_string(cfg).map_err(|e| CoreError::Archive(e.to_string()))?,
    );
    for (i, (frames, record)) in clips.enumerate() {
        let key = clip_key(i);
        a.set_meta(
            &key,
            &serde_json::to_string(&record).map_err(|e| CoreError::Archive(e.to_string()))?,
        );
        a.push(&key, frames)?;
    }
    Ok(a)
}

fn read_split<E: Elem>(dir: &Path, split: &str) -> Result<(DatasetConfig, Vec<(Tensor<E>, ClipRecord)>)> {
    let path = dir.join(format!("{split}.bin"));
    let a = Archive::<E>::load(&path)?;
    if a.meta("kind") != Some("clip-split") || a.meta("split") != Some(split) {
        return Err(CoreError::Archive(format!("{path:?} is not the {split} split")));
    }
    let cfg: DatasetConfig = serde_json::from_str(
        a.meta("config").ok_or_else(|| CoreError::Archive(format!("{path:?}: missing config")))?,
    )
    .map_err(|e| CoreError::Archive(format!("{path:?}: bad config: {e}")))?;
    let mut clips = Vec::with_capacity(a.len());
    for i in 0..a.len() {
        let key = clip_key(i);
        let frames = a
            .get(&key)
            .ok_or_else(|| CoreError::Archive(format!("{path:?}: missing {key}")))?
            .clone();
        let record: ClipRecord = serde_json::from_str(
            a.meta(&key).ok_or_else(|| CoreError::Archive(format!("{path:?}: missing {key} record")))?,
        )
        .map_err(|e| CoreError::Archive(format!("{path:?}: bad {key} record: {e}")))?;
        clips.push((frames, record));
    }
    Ok((cfg, clips))
}

/// Writes labeled.bin, unlabeled.bin and test.bin into `dir`. Unlabeled
/// clips keep their ground truth in the serialized record so a reloaded
/// dataset can still serve the probe; it returns to the same private
/// field on load.
pub fn save_dataset<E: Elem>(ds: &Dataset<E>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let labeled = split_archive(
        &ds.config,
        "labeled",
        ds.labeled.iter().map(|c| {
            (c.frames.clone(), ClipRecord { label: c.label, meta: c.meta.clone() })
        }),
    )?;
    labeled.save(&dir.join("labeled.bin"))?;
    let unlabeled = split_archive(
        &ds.config,
        "unlabeled",
        ds.unlabeled.iter().map(|c| {
            (c.frames.clone(), ClipRecord { label: Some(c.hidden_label), meta: c.meta.clone() })
        }),
    )?;
    unlabeled.save(&dir.join("unlabeled.bin"))?;
    let test = split_archive(
        &ds.config,
        "test",
        ds.test.iter().map(|c| {
            (c.frames.clone(), ClipRecord { label: c.label, meta: c.meta.clone() })
        }),
    )?;
    test.save(&dir.join("test.bin"))?;
    Ok(())
}

pub fn load_dataset<E: Elem>(dir: &Path) -> Result<Dataset<E>> {
    let (cfg, labeled) = read_split::<E>(dir, "labeled")?;
    let (cfg_u, unlabeled) = read_split::<E>(dir, "unlabeled")?;
    let (cfg_t, test) = read_split::<E>(dir, "test")?;
    if cfg_u != cfg || cfg_t != cfg {
        return Err(CoreError::Archive("split configs disagree".into()));
    }
    let need_label = |r: ClipRecord, what: &str| -> Result<(usize, ClipMeta)> {
        match r.label {
            Some(l) => Ok((l, r.meta)),
            None => Err(CoreError::Archive(format!("{what} clip without stored label"))),
        }
    };
    let labeled = labeled
        .into_iter()
        .map(|(frames, r)| {
            let (l, meta) = need_label(r, "labeled")?;
            Ok(VideoClip { frames, label: Some(l), meta })
        })
        .collect::<Result<Vec<_>>>()?;
    let unlabeled = unlabeled
        .into_iter()
        .map(|(frames, r)| {
            let (l, meta) = need_label(r, "unlabeled")?;
            Ok(UnlabeledClip { frames, meta, hidden_label: l })
        })
        .collect::<Result<Vec<_>>>()?;
    let test = test
        .into_iter()
        .map(|(frames, r)| {
            let (l, meta) = need_label(r, "test")?;
            Ok(VideoClip { frames, label: Some(l), meta })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { config: cfg, labeled, unlabeled, test })
}

/// [T, H, W, C] clip frames to the [C, T, H, W] model input layout.
pub fn to_model_layout<E: Elem>(frames: &Tensor<E>) -> Result<Tensor<E>> {
    let s = frames.shape();
    if s.len() != 4 {
        return Err(CoreError::ShapeMismatch(format!("want [T,H,W,C], got {s:?}")));
    }
    let (t, h, w, c) = (s[0], s[1], s[2], s[3]);
    let src = frames.data();
    let mut out = vec![E::zero(); frames.numel()];
    for f in 0..t {
        for y in 0..h {
            for x in 0..w {
                let base = ((f * h + y) * w + x) * c;
                for ch in 0..c {
                    out[((ch * t + f) * h + y) * w + x] = src[base + ch];
                }
            }
        }
    }
    Tensor::from_vec(&[c, t, h, w], out)
}
