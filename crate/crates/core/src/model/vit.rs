//! Small video transformer. Frames are cut into square patches, linearly
//! embedded, tagged with learned spatial and temporal position embeddings,
//! then run through blocks of divided space-time attention: temporal
//! attention mixes tokens sharing a spatial index across frames, spatial
//! attention mixes tokens within a frame, and an MLP follows; every
//! sublayer is pre-norm with a residual. Classification and the embedding
//! head read the mean over all tokens.

use super::{Bound, InitCtx, ModelConfig, ParamStore};
use crate::error::{CoreError, Result};
use crate::ops;
use crate::scalar::Elem;
use crate::tape::{Tape, Var};

const LN_EPS: f64 = 1e-6;

pub(crate) fn init<E: Elem>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<E>> {
    let mut cx: InitCtx<E> = InitCtx::new(seed);
    let e = cfg.vit_embed;
    let patch_dim = cfg.channels * cfg.vit_patch * cfg.vit_patch;
    let patches = (cfg.spatial_size / cfg.vit_patch).pow(2);
    cx.linear("patch.w", [patch_dim, e])?;
    cx.zeros("patch.b", &[e])?;
    cx.embedding("pos", &[patches, e])?;
    cx.embedding("temporal", &[cfg.clip_frames_auxiliary, e])?;
    for i in 0..cfg.vit_layers {
        for ln in ["ln1", "ln2", "ln3"] {
            cx.ones(&format!("block{i}.{ln}.g"), &[e])?;
            cx.zeros(&format!("block{i}.{ln}.o"), &[e])?;
        }
        for attn in ["tattn", "sattn"] {
            for proj in ["q", "k", "v", "out"] {
                cx.linear(&format!("block{i}.{attn}.{proj}.w"), [e, e])?;
                cx.zeros(&format!("block{i}.{attn}.{proj}.b"), &[e])?;
            }
        }
        cx.linear(&format!("block{i}.mlp.fc1.w"), [e, cfg.vit_mlp_hidden])?;
        cx.zeros(&format!("block{i}.mlp.fc1.b"), &[cfg.vit_mlp_hidden])?;
        cx.linear(&format!("block{i}.mlp.fc2.w"), [cfg.vit_mlp_hidden, e])?;
        cx.zeros(&format!("block{i}.mlp.fc2.b"), &[e])?;
    }
    cx.ones("final_ln.g", &[e])?;
    cx.zeros("final_ln.o", &[e])?;
    cx.linear("head.classifier.w", [e, cfg.num_classes])?;
    cx.zeros("head.classifier.b", &[cfg.num_classes])?;
    cx.linear("head.adapter.w", [e, cfg.embed_dim_out])?;
    cx.zeros("head.adapter.b", &[cfg.embed_dim_out])?;
    Ok(cx.store)
}

/// Layer norm with learned per-feature gain and offset, over the last axis.
fn ln_affine<E: Elem>(t: &Tape<E>, p: &Bound<E>, prefix: &str, x: Var) -> Result<Var> {
    let y = ops::layer_norm(t, x, E::from_f64(LN_EPS))?;
    let shape = t.shape(y);
    let g = ops::broadcast_to(t, p.var(&format!("{prefix}.g"))?, &shape)?;
    let o = ops::broadcast_to(t, p.var(&format!("{prefix}.o"))?, &shape)?;
    ops::add(t, ops::mul(t, y, g)?, o)
}

/// Multi-head self-attention over [G, L, E] using the four projections
/// under `prefix`.
pub(crate) fn mha<E: Elem>(
    t: &Tape<E>,
    p: &Bound<E>,
    prefix: &str,
    x: Var,
    heads: usize,
) -> Result<Var> {
    let sh = t.shape(x);
    let (g, l, e) = (sh[0], sh[1], sh[2]);
    let dh = e / heads;
    let proj = |name: &str, x: Var| -> Result<Var> {
        ops::linear(
            t,
            x,
            p.var(&format!("{prefix}.{name}.w"))?,
            Some(p.var(&format!("{prefix}.{name}.b"))?),
        )
    };
    let split = |v: Var| -> Result<Var> {
        let v = ops::reshape(t, v, &[g, l, heads, dh])?;
        let v = ops::transpose(t, v, &[0, 2, 1, 3])?;
        ops::reshape(t, v, &[g * heads, l, dh])
    };
    let q = split(proj("q", x)?)?;
    let k = split(proj("k", x)?)?;
    let v = split(proj("v", x)?)?;
    let o = ops::sdpa(t, q, k, v)?;
    let o = ops::reshape(t, o, &[g, heads, l, dh])?;
    let o = ops::transpose(t, o, &[0, 2, 1, 3])?;
    let o = ops::reshape(t, o, &[g, l, e])?;
    proj("out", o)
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
        cfg.clip_frames_auxiliary,
        cfg.spatial_size,
        cfg.spatial_size,
    ];
    if sh.len() != 5 || sh[1..] != want {
        return Err(CoreError::ShapeMismatch(format!(
            "transformer input: want [B, {}, {}, {}, {}], got {sh:?}",
            want[0], want[1], want[2], want[3]
        )));
    }
    let b = sh[0];
    let (c, tf) = (cfg.channels, cfg.clip_frames_auxiliary);
    let (ps, e) = (cfg.vit_patch, cfg.vit_embed);
    let hp = cfg.spatial_size / ps;
    let np = hp * hp;
    let patch_dim = c * ps * ps;

    // [B,C,T,H,W] -> per-frame patch rows of length C·ps·ps.
    let h = ops::reshape(t, x, &[b, c, tf, hp, ps, hp, ps])?;
    let h = ops::transpose(t, h, &[0, 2, 3, 5, 1, 4, 6])?;
    let h = ops::reshape(t, h, &[b * tf * np, patch_dim])?;
    let h = ops::linear(t, h, p.var("patch.w")?, Some(p.var("patch.b")?))?;
    let h = ops::reshape(t, h, &[b, tf, np, e])?;

    let pos = ops::broadcast_to(t, p.var("pos")?, &[b, tf, np, e])?;
    let temp = ops::reshape(t, p.var("temporal")?, &[tf, 1, e])?;
    let temp = ops::broadcast_to(t, temp, &[b, tf, np, e])?;
    let mut h = ops::add(t, ops::add(t, h, pos)?, temp)?;

    for i in 0..cfg.vit_layers {
        // Temporal attention: tokens with the same spatial index attend
        // across frames.
        let y = ln_affine(t, p, &format!("block{i}.ln1"), h)?;
        let y = ops::transpose(t, y, &[0, 2, 1, 3])?;
        let y = ops::reshape(t, y, &[b * np, tf, e])?;
        let y = mha(t, p, &format!("block{i}.tattn"), y, cfg.vit_heads)?;
        let y = ops::reshape(t, y, &[b, np, tf, e])?;
        let y = ops::transpose(t, y, &[0, 2, 1, 3])?;
        h = ops::add(t, h, y)?;

        // Spatial attention within each frame.
        let y = ln_affine(t, p, &format!("block{i}.ln2"), h)?;
        let y = ops::reshape(t, y, &[b * tf, np, e])?;
        let y = mha(t, p, &format!("block{i}.sattn"), y, cfg.vit_heads)?;
        let y = ops::reshape(t, y, &[b, tf, np, e])?;
        h = ops::add(t, h, y)?;

        let y = ln_affine(t, p, &format!("block{i}.ln3"), h)?;
        let y = ops::linear(
            t,
            y,
            p.var(&format!("block{i}.mlp.fc1.w"))?,
            Some(p.var(&format!("block{i}.mlp.fc1.b"))?),
        )?;
        let y = ops::gelu(t, y)?;
        let y = ops::linear(
            t,
            y,
            p.var(&format!("block{i}.mlp.fc2.w"))?,
            Some(p.var(&format!("block{i}.mlp.fc2.b"))?),
        )?;
        h = ops::add(t, h, y)?;
    }

    let h = ln_affine(t, p, "final_ln", h)?;
    let h = ops::reshape(t, h, &[b, tf * np, e])?;
    let pooled = ops::scale(t, ops::sum_axis(t, h, 1)?, E::one() / E::from_usize(tf * np))?;

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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::rand_tensor;
    use crate::tensor::Tensor;

    fn attn_store(e: usize, seed: u64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (i, proj) in ["q", "k", "v", "out"].iter().enumerate() {
            s.insert(&format!("attn.{proj}.w"), rand_tensor(&[e, e], seed ^ i as u64)).unwrap();
            s.insert(&format!("attn.{proj}.b"), rand_tensor(&[e], seed ^ (i as u64 + 8))).unwrap();
        }
        s
    }

    #[test]
    fn single_token_attention_is_the_value_path() {
        // One token: softmax over one key is 1, so attention reduces to
        // out-projection of the value projection.
        let store = attn_store(4, 5);
        let x = rand_tensor(&[1, 1, 4], 99);
        let t = Tape::new();
        let b = store.bind(&t);
        let xv = t.constant(x.clone());
        let y = mha(&t, &b, "attn", xv, 2).unwrap();

        let wv = store.get("attn.v.w").unwrap();
        let bv = store.get("attn.v.b").unwrap();
        let wo = store.get("attn.out.w").unwrap();
        let bo = store.get("attn.out.b").unwrap();
        let mut v = vec![0.0f64; 4];
        for j in 0..4 {
            v[j] = bv.data()[j] + (0..4).map(|i| x.data()[i] * wv.data()[i * 4 + j]).sum::<f64>();
        }
        let vy = t.value(y);
        for j in 0..4 {
            let want = bo.data()[j] + (0..4).map(|i| v[i] * wo.data()[i * 4 + j]).sum::<f64>();
            assert!((vy.data()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn two_token_attention_matches_hand_arithmetic() {
        // 2 tokens, embed 2, one head; every step recomputed with scalar
        // arithmetic.
        let mut s: ParamStore<f64> = ParamStore::new();
        let wq = [0.5, -0.3, 0.2, 0.8];
        let wk = [1.0, 0.1, -0.4, 0.6];
        let wv = [0.7, 0.2, -0.1, 0.9];
        let wo = [0.3, -0.5, 0.4, 1.1];
        s.insert("attn.q.w", Tensor::from_vec(&[2, 2], wq.to_vec()).unwrap()).unwrap();
        s.insert("attn.q.b", Tensor::zeros(&[2])).unwrap();
        s.insert("attn.k.w", Tensor::from_vec(&[2, 2], wk.to_vec()).unwrap()).unwrap();
        s.insert("attn.k.b", Tensor::zeros(&[2])).unwrap();
        s.insert("attn.v.w", Tensor::from_vec(&[2, 2], wv.to_vec()).unwrap()).unwrap();
        s.insert("attn.v.b", Tensor::zeros(&[2])).unwrap();
        s.insert("attn.out.w", Tensor::from_vec(&[2, 2], wo.to_vec()).unwrap()).unwrap();
        s.insert("attn.out.b", Tensor::zeros(&[2])).unwrap();

        let xv = [0.6, -0.2, 0.1, 0.9];
        let t = Tape::new();
        let b = s.bind(&t);
        let x = t.constant(Tensor::from_vec(&[1, 2, 2], xv.to_vec()).unwrap());
        let y = mha(&t, &b, "attn", x, 1).unwrap();

        let mm = |x: &[f64], w: &[f64]| -> Vec<f64> {
            (0..2)
                .flat_map(|r| (0..2).map(move |c| x[r * 2] * w[c] + x[r * 2 + 1] * w[2 + c]))
                .collect()
        };
        let q = mm(&xv, &wq);
        let k = mm(&xv, &wk);
        let v = mm(&xv, &wv);
        let scale = 1.0 / 2f64.sqrt();
        let mut attn_out = vec![0.0; 4];
        for i in 0..2 {
            let s0 = (q[i * 2] * k[0] + q[i * 2 + 1] * k[1]) * scale;
            let s1 = (q[i * 2] * k[2] + q[i * 2 + 1] * k[3]) * scale;
            let m = s0.max(s1);
            let (e0, e1) = ((s0 - m).exp(), (s1 - m).exp());
            let (p0, p1) = (e0 / (e0 + e1), e1 / (e0 + e1));
            attn_out[i * 2] = p0 * v[0] + p1 * v[2];
            attn_out[i * 2 + 1] = p0 * v[1] + p1 * v[3];
        }
        let want = mm(&attn_out, &wo);
        let vy = t.value(y);
        for j in 0..4 {
            assert!((vy.data()[j] - want[j]).abs() < 1e-12, "{j}: {} vs {}", vy.data()[j], want[j]);
        }
    }

    #[test]
    fn temporal_attention_is_local_to_spatial_index_but_full_is_not() {
        // Perturb one token of frame 1. Temporal attention over [P, T, E]
        // must leave frame-0 tokens at other spatial indices untouched;
        // joint attention over all T·P tokens must not.
        let (tf, np, e) = (2usize, 4usize, 8usize);
        let store = attn_store(e, 17);
        let base = rand_tensor(&[1, tf, np, e], 31);
        let mut poked = base.clone();
        for d in 0..e {
            poked.data_mut()[(tf - 1) * np * e + 2 * e + d] += 0.5;
        }

        let run_divided = |x: &Tensor<f64>| -> Tensor<f64> {
            let t = Tape::new();
            let b = store.bind(&t);
            let xv = t.constant(x.clone());
            let y = ops::transpose(&t, xv, &[0, 2, 1, 3]).unwrap();
            let y = ops::reshape(&t, y, &[np, tf, e]).unwrap();
            let y = mha(&t, &b, "attn", y, 2).unwrap();
            let y = ops::reshape(&t, y, &[1, np, tf, e]).unwrap();
            let y = ops::transpose(&t, y, &[0, 2, 1, 3]).unwrap();
            t.value(y).as_ref().clone()
        };
        let run_full = |x: &Tensor<f64>| -> Tensor<f64> {
            let t = Tape::new();
            let b = store.bind(&t);
            let xv = t.constant(x.clone());
            let y = ops::reshape(&t, xv, &[1, tf * np, e]).unwrap();
            let y = mha(&t, &b, "attn", y, 2).unwrap();
            t.value(y).as_ref().clone()
        };

        let (da, db) = (run_divided(&base), run_divided(&poked));
        for pi in 0..np {
            let off = pi * e;
            let changed = (0..e).any(|d| (da.data()[off + d] - db.data()[off + d]).abs() > 1e-12);
            // Frame 0 row pi: only spatial index 2 sees the perturbed frame.
            assert_eq!(changed, pi == 2, "divided attention leaked at spatial index {pi}");
        }

        let (fa, fb) = (run_full(&base), run_full(&poked));
        let mut spill = 0;
        for pi in 0..np {
            if pi == 2 {
                continue;
            }
            let off = pi * e;
            if (0..e).any(|d| (fa.data()[off + d] - fb.data()[off + d]).abs() > 1e-12) {
                spill += 1;
            }
        }
        assert!(spill > 0, "joint attention should mix the perturbation everywhere");
    }

    #[test]
    fn batch_order_permutes_logits() {
        let cfg = ModelConfig::default();
        let params = super::super::init_params::<f32>(&cfg, super::super::Arch::Auxiliary, 11).unwrap();
        let a = rand_tensor(&[1, 3, 8, 16, 16], 1).cast::<f32>();
        let b = rand_tensor(&[1, 3, 8, 16, 16], 2).cast::<f32>();
        let mut ab = Vec::new();
        ab.extend_from_slice(a.data());
        ab.extend_from_slice(b.data());
        let mut ba = Vec::new();
        ba.extend_from_slice(b.data());
        ba.extend_from_slice(a.data());
        let ab = Tensor::from_vec(&[2, 3, 8, 16, 16], ab).unwrap();
        let ba = Tensor::from_vec(&[2, 3, 8, 16, 16], ba).unwrap();
        let (la, _) = super::super::forward_eval(&params, &cfg, &ab).unwrap();
        let (lb, _) = super::super::forward_eval(&params, &cfg, &ba).unwrap();
        assert_eq!(la.data()[..8], lb.data()[8..]);
        assert_eq!(la.data()[8..], lb.data()[..8]);
    }
}
