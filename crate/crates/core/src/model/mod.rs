//! The two video classifiers: a small 3D residual CNN and a small video
//! transformer with divided space-time attention. Both expose logits and a
//! pooled embedding mapped through a per-model linear adapter into a shared
//! dimension so the embeddings are directly comparable.

mod checkpoint;
mod resnet;
mod vit;

pub use checkpoint::Archive;

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng;
use crate::scalar::Elem;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// Frames per clip fed to the conv model.
    pub clip_frames_primary: usize,
    /// Frames per clip fed to the transformer.
    pub clip_frames_auxiliary: usize,
    pub spatial_size: usize,
    pub channels: usize,
    /// Output channels per residual stage.
    pub resnet_widths: Vec<usize>,
    /// Bottleneck blocks per stage.
    pub resnet_blocks: Vec<usize>,
    pub vit_patch: usize,
    pub vit_embed: usize,
    pub vit_heads: usize,
    pub vit_layers: usize,
    pub vit_mlp_hidden: usize,
    /// Shared dimension of both models' adapted embeddings.
    pub embed_dim_out: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            clip_frames_primary: 4,
            clip_frames_auxiliary: 8,
            spatial_size: 16,
            channels: 3,
            resnet_widths: vec![8, 16, 32, 64],
            resnet_blocks: vec![1, 1, 1, 1],
            vit_patch: 4,
            vit_embed: 32,
            vit_heads: 2,
            vit_layers: 2,
            vit_mlp_hidden: 64,
            embed_dim_out: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CoreError::InvalidArgument(m));
        if self.num_classes < 2 {
            return err(format!("num_classes {} must be at least 2", self.num_classes));
        }
        if self.clip_frames_primary == 0 || self.clip_frames_auxiliary == 0 {
            return err("clip frame counts must be positive".into());
        }
        if self.channels == 0 {
            return err("channels must be positive".into());
        }
        if self.spatial_size < 8 {
            return err(format!(
                "spatial_size {} too small for the conv stem (needs at least 8)",
                self.spatial_size
            ));
        }
        if self.vit_patch == 0 || self.spatial_size % self.vit_patch != 0 {
            return err(format!(
                "spatial_size {} not divisible by vit_patch {}",
                self.spatial_size, self.vit_patch
            ));
        }
        if self.vit_heads == 0 || self.vit_embed % self.vit_heads != 0 {
            return err(format!(
                "vit_embed {} not divisible by vit_heads {}",
                self.vit_embed, self.vit_heads
            ));
        }
        if self.resnet_widths.is_empty() || self.resnet_widths.len() != self.resnet_blocks.len() {
            return err(format!(
                "resnet_widths ({}) and resnet_blocks ({}) must be non-empty and equal length",
                self.resnet_widths.len(),
                self.resnet_blocks.len()
            ));
        }
        if self.resnet_widths.iter().any(|&w| w == 0 || w % 4 != 0) {
            return err("each resnet width must be a positive multiple of 4 (bottleneck quarter)".into());
        }
        if self.resnet_blocks.iter().any(|&b| b == 0) {
            return err("each resnet stage needs at least one block".into());
        }
        if self.vit_embed == 0 || self.vit_layers == 0 || self.vit_mlp_hidden == 0 {
            return err("vit_embed, vit_layers and vit_mlp_hidden must be positive".into());
        }
        if self.embed_dim_out == 0 {
            return err("embed_dim_out must be positive".into());
        }
        Ok(())
    }
}

/// Which of the two models a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    /// 3D residual CNN.
    Primary,
    /// Video transformer.
    Auxiliary,
}

impl Arch {
    pub fn tag(self) -> &'static str {
        match self {
            Arch::Primary => "z",
            Arch::Auxiliary => "a",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "z" => Ok(Arch::Primary),
            "a" => Ok(Arch::Auxiliary),
            other => Err(CoreError::InvalidArgument(format!("unknown arch tag {other:?}"))),
        }
    }
}

/// Ordered, name-indexed collection of parameter tensors. Order is the
/// creation order and is stable, so gradient vectors and optimizer state
/// can align by position.
#[derive(Debug, Clone)]
pub struct ParamStore<E: Elem> {
    names: Vec<String>,
    tensors: Vec<Tensor<E>>,
    index: HashMap<String, usize>,
}

impl<E: Elem> Default for ParamStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> ParamStore<E> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<E>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(CoreError::InvalidArgument(format!("duplicate parameter {name:?}")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<E>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<E>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn cast<F: Elem>(&self) -> ParamStore<F> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Leafs every tensor onto `tape` in store order. Inside a no_grad
    /// scope this binds constants instead, which is the eval path.
    pub fn bind<'a>(&'a self, tape: &Tape<E>) -> Bound<'a, E> {
        Bound {
            store: self,
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }
}

/// A parameter store leafed onto one tape, resolvable by name.
pub struct Bound<'a, E: Elem> {
    store: &'a ParamStore<E>,
    pub vars: Vec<Var>,
}

impl<E: Elem> Bound<'_, E> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.store
            .index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| CoreError::InvalidArgument(format!("unknown parameter {name:?}")))
    }
}

/// One model's parameters plus the identity of how they were created.
#[derive(Debug, Clone)]
pub struct ModelParams<E: Elem> {
    pub store: ParamStore<E>,
    pub init_seed: u64,
    pub arch: Arch,
}

impl<E: Elem> ModelParams<E> {
    pub fn to_archive(&self) -> Result<Archive<E>> {
        let mut a = Archive::new();
        a.set_meta("arch", self.arch.tag());
        a.set_meta("seed", &self.init_seed.to_string());
        for (name, tensor) in self.store.iter() {
            a.push(name, tensor.clone())?;
        }
        Ok(a)
    }

    pub fn from_archive(a: &Archive<E>) -> Result<Self> {
        let arch = Arch::from_tag(
            a.meta("arch").ok_or_else(|| CoreError::Archive("missing arch meta".into()))?,
        )?;
        let init_seed = a
            .meta("seed")
            .ok_or_else(|| CoreError::Archive("missing seed meta".into()))?
            .parse::<u64>()
            .map_err(|e| CoreError::Archive(format!("bad seed meta: {e}")))?;
        let mut store = ParamStore::new();
        for (name, tensor) in a.entries() {
            store.insert(name, tensor.clone())?;
        }
        Ok(Self { store, init_seed, arch })
    }
}

/// Sampling helpers shared by both model inits. Every tensor gets its own
/// seed stream derived from its path, so insertion order never matters.
pub(crate) struct InitCtx<E: Elem> {
    seed: u64,
    pub store: ParamStore<E>,
}

impl<E: Elem> InitCtx<E> {
    pub fn new(seed: u64) -> Self {
        Self { seed, store: ParamStore::new() }
    }

    fn normal(&mut self, path: &str, shape: &[usize], std: f64) -> Result<()> {
        let mut r = rng::stream_for_path(self.seed, path, &[]);
        let dist = Normal::new(0.0f64, std).expect("std is finite and positive");
        let data: Vec<E> = (0..shape.iter().product::<usize>())
            .map(|_| E::from_f64(dist.sample(&mut r)))
            .collect();
        self.store.insert(path, Tensor::from_vec(shape, data)?)
    }

    /// Conv weight [Co, Ci, Kt, Kh, Kw]: N(0, 2 / fan_in), the usual scaled
    /// init for ReLU stacks.
    pub fn conv(&mut self, path: &str, shape: [usize; 5]) -> Result<()> {
        let fan_in = (shape[1] * shape[2] * shape[3] * shape[4]) as f64;
        self.normal(path, &shape, (2.0 / fan_in).sqrt())
    }

    /// Linear weight [In, Out]: N(0, 1 / fan_in).
    pub fn linear(&mut self, path: &str, shape: [usize; 2]) -> Result<()> {
        self.normal(path, &shape, (1.0 / shape[0] as f64).sqrt())
    }

    /// Positional-style embedding: N(0, 0.02).
    pub fn embedding(&mut self, path: &str, shape: &[usize]) -> Result<()> {
        self.normal(path, shape, 0.02)
    }

    pub fn zeros(&mut self, path: &str, shape: &[usize]) -> Result<()> {
        self.store.insert(path, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, path: &str, shape: &[usize]) -> Result<()> {
        self.store.insert(path, Tensor::full(shape, E::one()))
    }
}

/// Fresh parameters for one model. Identical (config, arch, seed) give
/// bit-identical tensors.
pub fn init_params<E: Elem>(cfg: &ModelConfig, arch: Arch, seed: u64) -> Result<ModelParams<E>> {
    cfg.validate()?;
    let store = match arch {
        Arch::Primary => resnet::init(cfg, seed)?,
        Arch::Auxiliary => vit::init(cfg, seed)?,
    };
    Ok(ModelParams { store, init_seed: seed, arch })
}

/// Forward pass on an existing tape. Returns (logits [B, K], embedding
/// [B, D]). `train` enables stochastic sublayers; both current models are
/// deterministic either way, the flag is part of the calling contract.
pub fn forward<E: Elem>(
    t: &Tape<E>,
    p: &Bound<E>,
    cfg: &ModelConfig,
    arch: Arch,
    x: Var,
    train: bool,
) -> Result<(Var, Var)> {
    match arch {
        Arch::Primary => resnet::forward(t, p, cfg, x, train),
        Arch::Auxiliary => vit::forward(t, p, cfg, x, train),
    }
}

/// Eval-mode forward on raw tensors: no gradients recorded.
pub fn forward_eval<E: Elem>(
    params: &ModelParams<E>,
    cfg: &ModelConfig,
    x: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let t: Tape<E> = Tape::new();
    t.no_grad(|| {
        let bound = params.store.bind(&t);
        let xv = t.constant(x.clone());
        let (logits, emb) = forward(&t, &bound, cfg, params.arch, xv, false)?;
        Ok((t.value(logits).as_ref().clone(), t.value(emb).as_ref().clone()))
    })
}

/// The embedding head alone.
pub fn embed_eval<E: Elem>(
    params: &ModelParams<E>,
    cfg: &ModelConfig,
    x: &Tensor<E>,
) -> Result<Tensor<E>> {
    forward_eval(params, cfg, x).map(|(_, emb)| emb)
}
