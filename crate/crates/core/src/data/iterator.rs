//! Deterministic training batches. Each epoch walks the unlabeled split
//! once in a seeded shuffle and pairs every chunk with labeled clips drawn
//! with replacement; every view's augmentation seed is a pure function of
//! (run seed, epoch, step, clip), so an epoch can be replayed bit-for-bit
//! from any step.

use rand::Rng;

use super::{to_model_layout, Dataset, VideoClip};
use crate::augment::{
    effective_strides, normalize, shared_start, standard_augment, strong_augment,
    temporal_sample_at, weak_augment, AugmentConfig, ChannelStats,
};
use crate::error::{CoreError, Result};
use crate::rng;
use crate::scalar::Elem;
use crate::tensor::Tensor;

const SHUFFLE: u64 = 0x7368;
const LAB: u64 = 0x6c61;
const UNL: u64 = 0x756e;

/// One optimization step's worth of model inputs, all [B, C, T, S, S].
/// The four unlabeled tensors are views of the same clips: weak and strong
/// per model, sharing one temporal window per clip.
pub struct Batch<E: Elem> {
    pub labeled_z: Tensor<E>,
    pub labeled_a: Tensor<E>,
    pub labels: Vec<usize>,
    pub weak_z: Tensor<E>,
    pub strong_z: Tensor<E>,
    pub weak_a: Tensor<E>,
    pub strong_a: Tensor<E>,
    /// Positions in the dataset's unlabeled split, for quality probes.
    pub unlabeled_indices: Vec<usize>,
}

pub fn batches_per_epoch(unlabeled: usize, batch_unlabeled: usize) -> usize {
    unlabeled.div_ceil(batch_unlabeled)
}

pub struct BatchIterator<'a, E: Elem> {
    ds: &'a Dataset<E>,
    aug: &'a AugmentConfig,
    stats: &'a ChannelStats,
    /// Frames per view for (primary, auxiliary).
    model_frames: (usize, usize),
    batch_labeled: usize,
    batch_unlabeled: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
    step: u64,
}

impl<'a, E: Elem> BatchIterator<'a, E> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ds: &'a Dataset<E>,
        aug: &'a AugmentConfig,
        stats: &'a ChannelStats,
        model_frames: (usize, usize),
        batch_labeled: usize,
        batch_unlabeled: usize,
        seed: u64,
        epoch: u64,
    ) -> Result<Self> {
        if ds.labeled.is_empty() || ds.unlabeled.is_empty() {
            return Err(CoreError::InvalidArgument(
                "training needs both labeled and unlabeled clips".into(),
            ));
        }
        if batch_labeled == 0 || batch_unlabeled == 0 {
            return Err(CoreError::InvalidArgument("batch sizes must be positive".into()));
        }
        aug.validate()?;
        let mut order: Vec<usize> = (0..ds.unlabeled.len()).collect();
        let mut r = rng::stream(seed, &[SHUFFLE, epoch]);
        for i in (1..order.len()).rev() {
            order.swap(i, r.gen_range(0..=i));
        }
        Ok(Self {
            ds,
            aug,
            stats,
            model_frames,
            batch_labeled,
            batch_unlabeled,
            seed,
            epoch,
            order,
            cursor: 0,
            step: 0,
        })
    }

    fn build(&self, unl: &[usize]) -> Result<Batch<E>> {
        let (tz, ta) = self.model_frames;
        let (stz, sta) = effective_strides(self.aug);

        let mut lab_r = rng::stream(self.seed, &[LAB, self.epoch, self.step]);
        let mut labels = Vec::with_capacity(self.batch_labeled);
        let mut lz = Vec::with_capacity(self.batch_labeled);
        let mut la = Vec::with_capacity(self.batch_labeled);
        for slot in 0..self.batch_labeled as u64 {
            let pick = lab_r.gen_range(0..self.ds.labeled.len());
            let clip = &self.ds.labeled[pick];
            labels.push(clip.label.ok_or_else(|| {
                CoreError::InvalidArgument("clip without label in the labeled split".into())
            })?);
            let slot_seed = rng::derive_seed(self.seed, &[LAB, self.epoch, self.step, slot]);
            let start = shared_start(self.aug, self.model_frames, clip.frames.shape()[0], slot_seed)?;
            let z = temporal_sample_at(clip, tz, stz, start)?;
            let a = temporal_sample_at(clip, ta, sta, start)?;
            lz.push(standard_augment(&z, self.aug, self.stats, rng::derive_seed(slot_seed, &[1]))?);
            la.push(standard_augment(&a, self.aug, self.stats, rng::derive_seed(slot_seed, &[2]))?);
        }

        let mut wz = Vec::with_capacity(unl.len());
        let mut sz = Vec::with_capacity(unl.len());
        let mut wa = Vec::with_capacity(unl.len());
        let mut sa = Vec::with_capacity(unl.len());
        for &j in unl {
            let vid = self.ds.unlabeled[j].unlabeled_video();
            let view_seed = rng::derive_seed(self.seed, &[UNL, self.epoch, self.step, j as u64]);
            // One temporal window for all four views; spatial transforms
            // stay independent per view.
            let start = shared_start(self.aug, self.model_frames, vid.frames.shape()[0], view_seed)?;
            let zb = temporal_sample_at(&vid, tz, stz, start)?;
            let ab = temporal_sample_at(&vid, ta, sta, start)?;
            let view = |k: u64| rng::derive_seed(view_seed, &[k]);
            wz.push(normalize(&weak_augment(&zb, self.aug, view(1))?, self.stats)?);
            sz.push(normalize(&strong_augment(&zb, self.aug, view(2))?, self.stats)?);
            wa.push(normalize(&weak_augment(&ab, self.aug, view(3))?, self.stats)?);
            sa.push(normalize(&strong_augment(&ab, self.aug, view(4))?, self.stats)?);
        }

        Ok(Batch {
            labeled_z: stack(&lz)?,
            labeled_a: stack(&la)?,
            labels,
            weak_z: stack(&wz)?,
            strong_z: stack(&sz)?,
            weak_a: stack(&wa)?,
            strong_a: stack(&sa)?,
            unlabeled_indices: unl.to_vec(),
        })
    }
}

impl<E: Elem> Iterator for BatchIterator<'_, E> {
    type Item = Result<Batch<E>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_unlabeled).min(self.order.len());
        let unl = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let batch = self.build(&unl);
        self.step += 1;
        Some(batch)
    }
}

/// Stacks same-shape [T,H,W,C] clips into one [B,C,T,H,W] tensor.
fn stack<E: Elem>(views: &[VideoClip<E>]) -> Result<Tensor<E>> {
    let shape = views[0].frames.shape().to_vec();
    let mut out = Vec::with_capacity(views.len() * views[0].frames.numel());
    for v in views {
        if v.frames.shape() != shape.as_slice() {
            return Err(CoreError::ShapeMismatch(format!(
                "ragged views in one batch: {:?} vs {:?}",
                v.frames.shape(),
                shape
            )));
        }
        out.extend_from_slice(to_model_layout(&v.frames)?.data());
    }
    Tensor::from_vec(&[views.len(), shape[3], shape[0], shape[1], shape[2]], out)
}
