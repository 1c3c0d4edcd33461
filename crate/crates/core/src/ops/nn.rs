//! Activations, normalization, dropout, cross-entropy and attention.

use std::rc::Rc;

use rand::Rng;

use super::{bmm, check, scale, transpose};
use crate::error::{CoreError, Result};
use crate::rng;
use crate::scalar::Elem;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub fn relu<E: Elem>(t: &Tape<E>, a: Var) -> Result<Var> {
    let va = t.value(a);
    let data: Vec<E> = va
        .data()
        .iter()
        .map(|&x| if x > E::zero() { x } else { E::zero() })
        .collect();
    t.push(Tensor::new(va.shape().to_vec(), data)?, vec![a], move |g| {
        vec![g
            .iter()
            .zip(va.data())
            .map(|(&gi, &x)| if x > E::zero() { gi } else { E::zero() })
            .collect()]
    })
}

/// Tanh-approximation GELU: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
pub fn gelu<E: Elem>(t: &Tape<E>, a: Var) -> Result<Var> {
    let va = t.value(a);
    let c = E::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = E::from_f64(0.044715);
    let half = E::from_f64(0.5);
    let one = E::one();
    let three = E::from_f64(3.0);
    let data: Vec<E> = va
        .data()
        .iter()
        .map(|&x| {
            let u = c * (x + k * x * x * x);
            half * x * (one + u.tanh())
        })
        .collect();
    t.push(Tensor::new(va.shape().to_vec(), data)?, vec![a], move |g| {
        vec![g
            .iter()
            .zip(va.data())
            .map(|(&gi, &x)| {
                let u = c * (x + k * x * x * x);
                let th = u.tanh();
                let sech2 = one - th * th;
                let du = c * (one + three * k * x * x);
                gi * (half * (one + th) + half * x * sech2 * du)
            })
            .collect()]
    })
}

/// Normalizes the last axis to zero mean, unit variance (population
/// variance, no affine): y = (x − μ)/√(σ² + ε).
pub fn layer_norm<E: Elem>(t: &Tape<E>, a: Var, eps: E) -> Result<Var> {
    let va = t.value(a);
    let shape = va.shape().to_vec();
    check(!shape.is_empty(), "layer_norm", || "rank-0 input".into())?;
    let n = *shape.last().unwrap();
    check(n > 0, "layer_norm", || "empty last axis".into())?;
    let rows = va.numel() / n;
    let inv_n = E::one() / E::from_usize(n);
    let mut data = vec![E::zero(); va.numel()];
    let mut inv_std = vec![E::zero(); rows];
    for r in 0..rows {
        let x = &va.data()[r * n..(r + 1) * n];
        let mut mean = E::zero();
        for &v in x {
            mean += v;
        }
        mean *= inv_n;
        let mut var = E::zero();
        for &v in x {
            let d = v - mean;
            var += d * d;
        }
        var *= inv_n;
        let inv = E::one() / (var + eps).sqrt();
        inv_std[r] = inv;
        for (o, &v) in data[r * n..(r + 1) * n].iter_mut().zip(x) {
            *o = (v - mean) * inv;
        }
    }
    let out = Rc::new(Tensor::new(shape, data)?);
    let y = Rc::clone(&out);
    t.push_shared(out, vec![a], move |g| {
        // dx = inv_std · (g − mean(g) − y·mean(g·y)) per row.
        let mut dx = vec![E::zero(); y.numel()];
        for r in 0..rows {
            let yr = &y.data()[r * n..(r + 1) * n];
            let gr = &g[r * n..(r + 1) * n];
            let mut mg = E::zero();
            let mut mgy = E::zero();
            for (&gi, &yi) in gr.iter().zip(yr) {
                mg += gi;
                mgy += gi * yi;
            }
            mg *= inv_n;
            mgy *= inv_n;
            let inv = inv_std[r];
            for ((o, &gi), &yi) in dx[r * n..(r + 1) * n].iter_mut().zip(gr).zip(yr) {
                *o = inv * (gi - mg - yi * mgy);
            }
        }
        vec![dx]
    })
}

/// Max-subtracted softmax rows; writes into `out`, returns nothing.
pub(crate) fn softmax_rows_into<E: Elem>(x: &[E], n: usize, out: &mut [E]) {
    let rows = x.len() / n;
    for r in 0..rows {
        let xr = &x[r * n..(r + 1) * n];
        let or = &mut out[r * n..(r + 1) * n];
        let mut mx = xr[0];
        for &v in &xr[1..] {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = E::zero();
        for (o, &v) in or.iter_mut().zip(xr) {
            let e = (v - mx).exp();
            *o = e;
            sum += e;
        }
        let inv = E::one() / sum;
        for o in or.iter_mut() {
            *o = *o * inv;
        }
    }
}

/// Row softmax of a raw tensor over its last axis, no tape involved.
/// Teacher probabilities and inference paths use this.
pub fn softmax_probs<E: Elem>(x: &Tensor<E>) -> Result<Tensor<E>> {
    check(!x.shape().is_empty(), "softmax_probs", || "rank-0 input".into())?;
    let n = *x.shape().last().unwrap();
    check(n > 0, "softmax_probs", || "empty last axis".into())?;
    let mut out = vec![E::zero(); x.numel()];
    softmax_rows_into(x.data(), n, &mut out);
    Tensor::new(x.shape().to_vec(), out)
}

/// Softmax over the last axis.
pub fn softmax<E: Elem>(t: &Tape<E>, a: Var) -> Result<Var> {
    let va = t.value(a);
    let shape = va.shape().to_vec();
    check(!shape.is_empty(), "softmax", || "rank-0 input".into())?;
    let n = *shape.last().unwrap();
    check(n > 0, "softmax", || "empty last axis".into())?;
    let mut data = vec![E::zero(); va.numel()];
    softmax_rows_into(va.data(), n, &mut data);
    let out = Rc::new(Tensor::new(shape, data)?);
    let y = Rc::clone(&out);
    t.push_shared(out, vec![a], move |g| {
        // dx = y ⊙ (g − Σ g·y) per row.
        let rows = y.numel() / n;
        let mut dx = vec![E::zero(); y.numel()];
        for r in 0..rows {
            let yr = &y.data()[r * n..(r + 1) * n];
            let gr = &g[r * n..(r + 1) * n];
            let mut dot = E::zero();
            for (&gi, &yi) in gr.iter().zip(yr) {
                dot += gi * yi;
            }
            for ((o, &gi), &yi) in dx[r * n..(r + 1) * n].iter_mut().zip(gr).zip(yr) {
                *o = yi * (gi - dot);
            }
        }
        vec![dx]
    })
}

/// Inverted-scaling dropout: kept activations divided by the keep
/// probability so eval needs no rescale. `train == false` or `p == 0` is
/// the identity. The mask is a pure function of `seed`.
pub fn dropout<E: Elem>(t: &Tape<E>, a: Var, p: f64, seed: u64, train: bool) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(CoreError::InvalidArgument(format!(
            "dropout probability {p} outside [0, 1)"
        )));
    }
    if !train || p == 0.0 {
        return Ok(a);
    }
    let va = t.value(a);
    let keep = 1.0 - p;
    let inv_keep = E::from_f64(1.0 / keep);
    let mut r = rng::stream(seed, &[0x6d61_736b]);
    let mask: Vec<E> = (0..va.numel())
        .map(|_| {
            if r.gen::<f64>() < keep {
                inv_keep
            } else {
                E::zero()
            }
        })
        .collect();
    let data: Vec<E> = va.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    t.push(Tensor::new(va.shape().to_vec(), data)?, vec![a], move |g| {
        vec![g.iter().zip(&mask).map(|(&gi, &m)| gi * m).collect()]
    })
}

/// Scales each last-axis row to unit L2 norm. A zero-norm row is a hard
/// error, never silently epsilon-padded.
pub fn l2_normalize<E: Elem>(t: &Tape<E>, a: Var) -> Result<Var> {
    let va = t.value(a);
    let shape = va.shape().to_vec();
    check(!shape.is_empty(), "l2_normalize", || "rank-0 input".into())?;
    let n = *shape.last().unwrap();
    let rows = va.numel() / n;
    let mut norms = vec![E::zero(); rows];
    let mut data = vec![E::zero(); va.numel()];
    for r in 0..rows {
        let x = &va.data()[r * n..(r + 1) * n];
        let mut sq = E::zero();
        for &v in x {
            sq += v * v;
        }
        if sq == E::zero() {
            return Err(CoreError::Numeric(format!(
                "l2_normalize: zero-norm row {r}"
            )));
        }
        let norm = sq.sqrt();
        norms[r] = norm;
        let inv = E::one() / norm;
        for (o, &v) in data[r * n..(r + 1) * n].iter_mut().zip(x) {
            *o = v * inv;
        }
    }
    let out = Rc::new(Tensor::new(shape, data)?);
    let y = Rc::clone(&out);
    t.push_shared(out, vec![a], move |g| {
        // dx = (g − y·(y·g)) / ‖x‖ per row.
        let mut dx = vec![E::zero(); y.numel()];
        for r in 0..rows {
            let yr = &y.data()[r * n..(r + 1) * n];
            let gr = &g[r * n..(r + 1) * n];
            let mut dot = E::zero();
            for (&gi, &yi) in gr.iter().zip(yr) {
                dot += gi * yi;
            }
            let inv = E::one() / norms[r];
            for ((o, &gi), &yi) in dx[r * n..(r + 1) * n].iter_mut().zip(gr).zip(yr) {
                *o = (gi - yi * dot) * inv;
            }
        }
        vec![dx]
    })
}

/// Weighted mean cross-entropy with fused log-softmax:
/// Σᵢ wᵢ·(−log softmax(logitsᵢ)[yᵢ]) / denom. The explicit denominator
/// lets confidence-masked losses keep the full-batch divisor.
pub fn ce_mean<E: Elem>(
    t: &Tape<E>,
    logits: Var,
    labels: &[usize],
    weights: &[E],
    denom: E,
) -> Result<Var> {
    let vl = t.value(logits);
    let s = vl.shape().to_vec();
    check(s.len() == 2, "ce_mean", || format!("logits {s:?}"))?;
    let (b, k) = (s[0], s[1]);
    check(labels.len() == b && weights.len() == b, "ce_mean", || {
        format!("{} labels / {} weights for batch {b}", labels.len(), weights.len())
    })?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(CoreError::InvalidArgument(format!(
            "ce_mean: label {bad} out of range for {k} classes"
        )));
    }
    if denom <= E::zero() {
        return Err(CoreError::InvalidArgument("ce_mean: denom must be positive".into()));
    }
    let mut probs = vec![E::zero(); b * k];
    softmax_rows_into(vl.data(), k, &mut probs);
    let inv_denom = E::one() / denom;
    let mut total = E::zero();
    for i in 0..b {
        if weights[i] == E::zero() {
            continue;
        }
        let row = &vl.data()[i * k..(i + 1) * k];
        let mut mx = row[0];
        for &v in &row[1..] {
            if v > mx {
                mx = v;
            }
        }
        let mut lse = E::zero();
        for &v in row {
            lse += (v - mx).exp();
        }
        let lse = mx + lse.ln();
        total += weights[i] * (lse - row[labels[i]]);
    }
    total *= inv_denom;
    let labels = labels.to_vec();
    let weights = weights.to_vec();
    t.push(Tensor::scalar(total), vec![logits], move |g| {
        let up = g[0] * inv_denom;
        let mut dl = vec![E::zero(); b * k];
        for i in 0..b {
            let w = weights[i];
            if w == E::zero() {
                continue;
            }
            let scale = up * w;
            let pr = &probs[i * k..(i + 1) * k];
            let dr = &mut dl[i * k..(i + 1) * k];
            for (o, &p) in dr.iter_mut().zip(pr) {
                *o = scale * p;
            }
            dr[labels[i]] -= scale;
        }
        vec![dl]
    })
}

/// Scaled-dot-product attention composite over [G, L, D] tensors:
/// softmax(q·kᵀ/√D)·v. Built from primitives, so its gradient is assembled
/// from theirs.
pub fn sdpa<E: Elem>(t: &Tape<E>, q: Var, k: Var, v: Var) -> Result<Var> {
    let sq = t.shape(q);
    let sk = t.shape(k);
    let sv = t.shape(v);
    check(
        sq.len() == 3 && sk.len() == 3 && sv.len() == 3 && sq[0] == sk[0] && sq[0] == sv[0]
            && sq[2] == sk[2] && sk[1] == sv[1],
        "sdpa",
        || format!("q {sq:?} k {sk:?} v {sv:?}"),
    )?;
    let kt = transpose(t, k, &[0, 2, 1])?;
    let scores = bmm(t, q, kt)?;
    let scaled = scale(t, scores, E::from_f64(1.0 / (sq[2] as f64).sqrt()))?;
    let probs = softmax(t, scaled)?;
    bmm(t, probs, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_definition() {
        let t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = relu(&t, x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_symmetry() {
        let t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap());
        let y = softmax(&t, x).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_translation_invariant_and_stable() {
        let t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::from_vec(&[3], vec![1000.0, 1001.0, 1002.0]).unwrap());
        let y = softmax(&t, x).unwrap();
        let x2 = t.leaf(Tensor::from_vec(&[3], vec![0.0, 1.0, 2.0]).unwrap());
        let y2 = softmax(&t, x2).unwrap();
        let s: f64 = t.value(y).data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        for (a, b) in t.value(y).data().iter().zip(t.value(y2).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::from_vec(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]).unwrap());
        let y = layer_norm(&t, x, 1e-6).unwrap();
        let vy = t.value(y);
        for r in 0..2 {
            let row = &vy.data()[r * 4..(r + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn dropout_identity_cases_and_scaling() {
        let t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let eval = dropout(&t, x, 0.5, 1, false).unwrap();
        assert_eq!(eval, x);
        let p0 = dropout(&t, x, 0.0, 1, true).unwrap();
        assert_eq!(p0, x);
        let y = dropout(&t, x, 0.5, 1, true).unwrap();
        for (&xi, &yi) in t.value(x).data().iter().zip(t.value(y).data()) {
            assert!(yi == 0.0 || (yi - 2.0 * xi).abs() < 1e-12);
        }
        let y2 = {
            let t2: Tape<f64> = Tape::new();
            let x2 = t2.leaf(Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
            let y2 = dropout(&t2, x2, 0.5, 1, true).unwrap();
            t2.value(y2).data().to_vec()
        };
        assert_eq!(t.value(y).data(), &y2[..], "mask must be seed-determined");
    }

    #[test]
    fn dropout_rejects_p_one() {
        let t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::from_vec(&[1], vec![1.0]).unwrap());
        assert!(dropout(&t, x, 1.0, 1, true).is_err());
    }

    #[test]
    fn l2_normalize_unit_rows_and_zero_error() {
        let t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::from_vec(&[2, 2], vec![3.0, 4.0, 0.5, 0.0]).unwrap());
        let y = l2_normalize(&t, x).unwrap();
        for (a, b) in t.value(y).data().iter().zip(&[0.6, 0.8, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let z = t.leaf(Tensor::from_vec(&[2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap());
        assert!(matches!(l2_normalize(&t, z), Err(CoreError::Numeric(_))));
    }

    #[test]
    fn ce_uniform_logits_is_ln_k() {
        let t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap());
        let l = ce_mean(&t, x, &[0], &[1.0], 1.0).unwrap();
        assert!((t.value(l).item().unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_confident_correct_is_near_zero() {
        let t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::from_vec(&[1, 2], vec![100.0, 0.0]).unwrap());
        let l = ce_mean(&t, x, &[0], &[1.0], 1.0).unwrap();
        assert!(t.value(l).item().unwrap() < 1e-10);
    }

    #[test]
    fn ce_matches_direct_formula_oracle() {
        // −log(exp(z_y)/Σ exp(z_k)) summed explicitly, 5 classes.
        let logits = vec![0.3, -1.2, 2.0, 0.7, -0.5];
        let label = 2usize;
        let t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::from_vec(&[1, 5], logits.clone()).unwrap());
        let l = ce_mean(&t, x, &[label], &[1.0], 1.0).unwrap();
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let want = -(logits[label].exp() / z).ln();
        assert!((t.value(l).item().unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn ce_masked_sample_contributes_exactly_zero() {
        let t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap());
        let l = ce_mean(&t, x, &[0, 2], &[1.0, 0.0], 2.0).unwrap();
        let t2: Tape<f64> = Tape::new();
        let x2 = t2.leaf(Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let l2 = ce_mean(&t2, x2, &[0], &[1.0], 2.0).unwrap();
        assert_eq!(t.value(l).item().unwrap(), t2.value(l2).item().unwrap());
        let g = t.backward(l).unwrap();
        let gx = g.get(x).unwrap();
        assert!(gx[3..].iter().all(|&v| v == 0.0), "masked row must get zero grad");
    }

    #[test]
    fn ce_label_out_of_range() {
        let t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap());
        assert!(matches!(
            ce_mean(&t, x, &[2], &[1.0], 1.0),
            Err(CoreError::InvalidArgument(_))
        ));
    }

    #[test]
    fn sdpa_single_key_returns_value() {
        // One key/query: softmax over one logit is 1, output = value row.
        let t: Tape<f64> = Tape::new();
        let q = t.leaf(Tensor::from_vec(&[1, 1, 2], vec![0.3, -0.7]).unwrap());
        let k = t.leaf(Tensor::from_vec(&[1, 1, 2], vec![1.0, 2.0]).unwrap());
        let v = t.leaf(Tensor::from_vec(&[1, 1, 2], vec![5.0, -6.0]).unwrap());
        let y = sdpa(&t, q, k, v).unwrap();
        assert_eq!(t.value(y).data(), &[5.0, -6.0]);
    }

    #[test]
    fn sdpa_uniform_scores_average_values() {
        let t: Tape<f64> = Tape::new();
        let q = t.leaf(Tensor::from_vec(&[1, 1, 2], vec![0.0, 0.0]).unwrap());
        let k = t.leaf(Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, -3.0, 4.0]).unwrap());
        let v = t.leaf(Tensor::from_vec(&[1, 2, 2], vec![2.0, 4.0, 6.0, 8.0]).unwrap());
        let y = sdpa(&t, q, k, v).unwrap();
        assert_eq!(t.value(y).data(), &[4.0, 6.0]);
    }

    #[test]
    fn gelu_known_values() {
        let t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::from_vec(&[3], vec![0.0, 1.0, -1.0]).unwrap());
        let y = gelu(&t, x).unwrap();
        let d = t.value(y);
        assert_eq!(d.data()[0], 0.0);
        assert!((d.data()[1] - 0.841192).abs() < 1e-5);
        assert!((d.data()[2] + 0.158808).abs() < 1e-5);
    }
}
