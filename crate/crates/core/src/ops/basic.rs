//! Elementwise arithmetic and shape plumbing.

use super::check;
use crate::error::Result;
use crate::scalar::Elem;
use crate::tape::{Tape, Var};
use crate::tensor::{strides_of, Tensor};

/// Walks all linear indices of `out_shape` in row-major order, calling
/// `f(out_idx, src_idx)` where `src_idx` advances by `mapped_strides[d]`
/// (elements, possibly 0) when dimension `d` increments. One loop serves
/// transpose, broadcast, slice and concat.
pub(crate) fn walk_mapped(
    out_shape: &[usize],
    mapped_strides: &[usize],
    base: usize,
    mut f: impl FnMut(usize, usize),
) {
    let numel: usize = out_shape.iter().product();
    if numel == 0 {
        return;
    }
    let nd = out_shape.len();
    if nd == 0 {
        f(0, base);
        return;
    }
    let mut counters = vec![0usize; nd];
    let mut src = base;
    for out in 0..numel {
        f(out, src);
        for d in (0..nd).rev() {
            counters[d] += 1;
            src += mapped_strides[d];
            if counters[d] < out_shape[d] {
                break;
            }
            src -= mapped_strides[d] * out_shape[d];
            counters[d] = 0;
        }
    }
}

fn binary_shapes<E: Elem>(op: &str, t: &Tape<E>, a: Var, b: Var) -> Result<Vec<usize>> {
    let sa = t.shape(a);
    let sb = t.shape(b);
    check(sa == sb, op, || format!("{sa:?} vs {sb:?}"))?;
    Ok(sa)
}

pub fn add<E: Elem>(t: &Tape<E>, a: Var, b: Var) -> Result<Var> {
    let shape = binary_shapes("add", t, a, b)?;
    let va = t.value(a);
    let vb = t.value(b);
    let data: Vec<E> = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
    t.push(Tensor::new(shape, data)?, vec![a, b], |g| {
        vec![g.to_vec(), g.to_vec()]
    })
}

pub fn sub<E: Elem>(t: &Tape<E>, a: Var, b: Var) -> Result<Var> {
    let shape = binary_shapes("sub", t, a, b)?;
    let va = t.value(a);
    let vb = t.value(b);
    let data: Vec<E> = va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect();
    t.push(Tensor::new(shape, data)?, vec![a, b], |g| {
        vec![g.to_vec(), g.iter().map(|&v| -v).collect()]
    })
}

pub fn mul<E: Elem>(t: &Tape<E>, a: Var, b: Var) -> Result<Var> {
    let shape = binary_shapes("mul", t, a, b)?;
    let va = t.value(a);
    let vb = t.value(b);
    let data: Vec<E> = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
    t.push(Tensor::new(shape, data)?, vec![a, b], move |g| {
        let da = g.iter().zip(vb.data()).map(|(&gi, &y)| gi * y).collect();
        let db = g.iter().zip(va.data()).map(|(&gi, &x)| gi * x).collect();
        vec![da, db]
    })
}

pub fn scale<E: Elem>(t: &Tape<E>, a: Var, c: E) -> Result<Var> {
    let va = t.value(a);
    let data: Vec<E> = va.data().iter().map(|&x| x * c).collect();
    t.push(Tensor::new(va.shape().to_vec(), data)?, vec![a], move |g| {
        vec![g.iter().map(|&v| v * c).collect()]
    })
}

pub fn add_scalar<E: Elem>(t: &Tape<E>, a: Var, c: E) -> Result<Var> {
    let va = t.value(a);
    let data: Vec<E> = va.data().iter().map(|&x| x + c).collect();
    t.push(Tensor::new(va.shape().to_vec(), data)?, vec![a], |g| {
        vec![g.to_vec()]
    })
}

pub fn log<E: Elem>(t: &Tape<E>, a: Var) -> Result<Var> {
    let va = t.value(a);
    let data: Vec<E> = va.data().iter().map(|&x| x.ln()).collect();
    t.push(Tensor::new(va.shape().to_vec(), data)?, vec![a], move |g| {
        vec![g.iter().zip(va.data()).map(|(&gi, &x)| gi / x).collect()]
    })
}

pub fn exp<E: Elem>(t: &Tape<E>, a: Var) -> Result<Var> {
    let va = t.value(a);
    let data: Vec<E> = va.data().iter().map(|&x| x.exp()).collect();
    let out = std::rc::Rc::new(Tensor::new(va.shape().to_vec(), data)?);
    let y = std::rc::Rc::clone(&out);
    t.push_shared(out, vec![a], move |g| {
        vec![g.iter().zip(y.data()).map(|(&gi, &yi)| gi * yi).collect()]
    })
}

pub fn reshape<E: Elem>(t: &Tape<E>, a: Var, new_shape: &[usize]) -> Result<Var> {
    let va = t.value(a);
    let numel: usize = new_shape.iter().product();
    check(numel == va.numel(), "reshape", || {
        format!("{:?} -> {:?}", va.shape(), new_shape)
    })?;
    t.push(
        Tensor::new(new_shape.to_vec(), va.data().to_vec())?,
        vec![a],
        |g| vec![g.to_vec()],
    )
}

/// General axis permutation: `out[i_perm[0], ..] = in[i_0, ..]`, i.e.
/// output dimension `d` is input dimension `perm[d]`.
pub fn transpose<E: Elem>(t: &Tape<E>, a: Var, perm: &[usize]) -> Result<Var> {
    let va = t.value(a);
    let nd = va.shape().len();
    let mut seen = vec![false; nd];
    check(perm.len() == nd, "transpose", || {
        format!("perm {perm:?} for rank {nd}")
    })?;
    for &p in perm {
        check(p < nd && !seen[p], "transpose", || format!("bad perm {perm:?}"))?;
        seen[p] = true;
    }
    let in_shape = va.shape().to_vec();
    let in_strides = strides_of(&in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let mapped: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut data = vec![E::zero(); va.numel()];
    walk_mapped(&out_shape, &mapped, 0, |out, src| data[out] = va.data()[src]);
    let out_shape_bw = out_shape.clone();
    let numel = va.numel();
    t.push(Tensor::new(out_shape, data)?, vec![a], move |g| {
        let mut dx = vec![E::zero(); numel];
        walk_mapped(&out_shape_bw, &mapped, 0, |out, src| dx[src] = g[out]);
        vec![dx]
    })
}

pub fn concat<E: Elem>(t: &Tape<E>, parts: &[Var], axis: usize) -> Result<Var> {
    check(!parts.is_empty(), "concat", || "no inputs".into())?;
    let first = t.shape(parts[0]);
    check(axis < first.len(), "concat", || {
        format!("axis {axis} for rank {}", first.len())
    })?;
    let mut axis_total = 0usize;
    let mut part_lens = Vec::with_capacity(parts.len());
    for &p in parts {
        let s = t.shape(p);
        check(
            s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b),
            "concat",
            || format!("{s:?} vs {first:?} on axis {axis}"),
        )?;
        part_lens.push(s[axis]);
        axis_total += s[axis];
    }
    let mut out_shape = first.clone();
    out_shape[axis] = axis_total;

    // outer = product of dims before axis, inner = product after; each part
    // contributes `len·inner` contiguous elements per outer slice.
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let numel: usize = out_shape.iter().product();
    let mut data = vec![E::zero(); numel];
    let row = axis_total * inner;
    let mut offset = 0usize;
    let mut part_offsets = Vec::with_capacity(parts.len());
    for (&p, &len) in parts.iter().zip(&part_lens) {
        let vp = t.value(p);
        let chunk = len * inner;
        for o in 0..outer {
            data[o * row + offset..o * row + offset + chunk]
                .copy_from_slice(&vp.data()[o * chunk..(o + 1) * chunk]);
        }
        part_offsets.push(offset);
        offset += chunk;
    }
    let lens = part_lens.clone();
    t.push(Tensor::new(out_shape, data)?, parts.to_vec(), move |g| {
        let mut out = Vec::with_capacity(lens.len());
        for (&off, &len) in part_offsets.iter().zip(&lens) {
            let chunk = len * inner;
            let mut dp = vec![E::zero(); outer * chunk];
            for o in 0..outer {
                dp[o * chunk..(o + 1) * chunk]
                    .copy_from_slice(&g[o * row + off..o * row + off + chunk]);
            }
            out.push(dp);
        }
        out
    })
}

/// Narrow along one axis: keeps `[start, start+len)`.
pub fn slice<E: Elem>(t: &Tape<E>, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
    let va = t.value(a);
    let shape = va.shape().to_vec();
    check(axis < shape.len(), "slice", || {
        format!("axis {axis} for rank {}", shape.len())
    })?;
    check(start + len <= shape[axis] && len > 0, "slice", || {
        format!("[{start}, {start}+{len}) of extent {}", shape[axis])
    })?;
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let src_row = shape[axis] * inner;
    let chunk = len * inner;
    let mut out_shape = shape.clone();
    out_shape[axis] = len;
    let mut data = vec![E::zero(); outer * chunk];
    for o in 0..outer {
        data[o * chunk..(o + 1) * chunk]
            .copy_from_slice(&va.data()[o * src_row + start * inner..o * src_row + start * inner + chunk]);
    }
    let src_numel = va.numel();
    t.push(Tensor::new(out_shape, data)?, vec![a], move |g| {
        let mut dx = vec![E::zero(); src_numel];
        for o in 0..outer {
            dx[o * src_row + start * inner..o * src_row + start * inner + chunk]
                .copy_from_slice(&g[o * chunk..(o + 1) * chunk]);
        }
        vec![dx]
    })
}

/// Standard right-aligned broadcast; source dims must be 1 or equal.
pub fn broadcast_to<E: Elem>(t: &Tape<E>, a: Var, target: &[usize]) -> Result<Var> {
    let va = t.value(a);
    let src = va.shape().to_vec();
    check(src.len() <= target.len(), "broadcast_to", || {
        format!("{src:?} -> {target:?}")
    })?;
    // Left-pad source shape with 1s, then stride 0 on broadcast dims.
    let pad = target.len() - src.len();
    let src_strides = strides_of(&src);
    let mut mapped = vec![0usize; target.len()];
    for d in pad..target.len() {
        let sd = src[d - pad];
        check(sd == 1 || sd == target[d], "broadcast_to", || {
            format!("{src:?} -> {target:?} at dim {d}")
        })?;
        mapped[d] = if sd == 1 { 0 } else { src_strides[d - pad] };
    }
    let numel: usize = target.iter().product();
    let mut data = vec![E::zero(); numel];
    walk_mapped(target, &mapped, 0, |out, s| data[out] = va.data()[s]);
    let target_bw = target.to_vec();
    let src_numel = va.numel();
    t.push(Tensor::new(target.to_vec(), data)?, vec![a], move |g| {
        let mut dx = vec![E::zero(); src_numel];
        walk_mapped(&target_bw, &mapped, 0, |out, s| dx[s] += g[out]);
        vec![dx]
    })
}

pub fn sum_all<E: Elem>(t: &Tape<E>, a: Var) -> Result<Var> {
    let va = t.value(a);
    let s: E = va.data().iter().copied().sum();
    let n = va.numel();
    t.push(Tensor::scalar(s), vec![a], move |g| vec![vec![g[0]; n]])
}

pub fn mean_all<E: Elem>(t: &Tape<E>, a: Var) -> Result<Var> {
    let va = t.value(a);
    let n = va.numel();
    check(n > 0, "mean_all", || "empty tensor".into())?;
    let inv = E::one() / E::from_usize(n);
    let s: E = va.data().iter().copied().sum();
    t.push(Tensor::scalar(s * inv), vec![a], move |g| {
        vec![vec![g[0] * inv; n]]
    })
}

/// Reduces one axis away by summation.
pub fn sum_axis<E: Elem>(t: &Tape<E>, a: Var, axis: usize) -> Result<Var> {
    let va = t.value(a);
    let shape = va.shape().to_vec();
    check(axis < shape.len(), "sum_axis", || {
        format!("axis {axis} for rank {}", shape.len())
    })?;
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape.clone();
    out_shape.remove(axis);
    let mut data = vec![E::zero(); outer * inner];
    for o in 0..outer {
        for m in 0..mid {
            let src = (o * mid + m) * inner;
            let dst = o * inner;
            for i in 0..inner {
                data[dst + i] += va.data()[src + i];
            }
        }
    }
    t.push(Tensor::new(out_shape, data)?, vec![a], move |g| {
        let mut dx = vec![E::zero(); outer * mid * inner];
        for o in 0..outer {
            for m in 0..mid {
                let dst = (o * mid + m) * inner;
                let src = o * inner;
                dx[dst..dst + inner].copy_from_slice(&g[src..src + inner]);
            }
        }
        vec![dx]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::CoreError;

    fn t64() -> Tape<f64> {
        Tape::new()
    }

    #[test]
    fn add_rejects_mismatched_shapes() {
        let t = t64();
        let a = t.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let b = t.leaf(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        assert!(matches!(add(&t, a, b), Err(CoreError::ShapeMismatch(_))));
    }

    #[test]
    fn transpose_roundtrip() {
        let t = t64();
        let a = t.leaf(Tensor::from_vec(&[2, 3], (0..6).map(|v| v as f64).collect()).unwrap());
        let b = transpose(&t, a, &[1, 0]).unwrap();
        assert_eq!(t.shape(b), vec![3, 2]);
        assert_eq!(t.value(b).data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let c = transpose(&t, b, &[1, 0]).unwrap();
        assert_eq!(t.value(c).data(), t.value(a).data());
    }

    #[test]
    fn transpose_3d_backward_scatters() {
        let t = t64();
        let a = t.leaf(Tensor::from_vec(&[2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap());
        let b = transpose(&t, a, &[2, 0, 1]).unwrap();
        let s = sum_all(&t, b).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &[1.0; 8]);
    }

    #[test]
    fn concat_and_slice_inverse() {
        let t = t64();
        let a = t.leaf(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.leaf(Tensor::from_vec(&[2, 3], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).unwrap());
        let c = concat(&t, &[a, b], 1).unwrap();
        assert_eq!(t.shape(c), vec![2, 5]);
        assert_eq!(
            t.value(c).data(),
            &[1.0, 2.0, 5.0, 6.0, 7.0, 3.0, 4.0, 8.0, 9.0, 10.0]
        );
        let a2 = slice(&t, c, 1, 0, 2).unwrap();
        assert_eq!(t.value(a2).data(), t.value(a).data());
        let b2 = slice(&t, c, 1, 2, 3).unwrap();
        assert_eq!(t.value(b2).data(), t.value(b).data());
    }

    #[test]
    fn concat_backward_splits_gradient() {
        let t = t64();
        let a = t.leaf(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
        let b = t.leaf(Tensor::from_vec(&[1, 1], vec![3.0]).unwrap());
        let c = concat(&t, &[a, b], 1).unwrap();
        let w = t.constant(Tensor::from_vec(&[1, 3], vec![10.0, 20.0, 30.0]).unwrap());
        let p = mul(&t, c, w).unwrap();
        let s = sum_all(&t, p).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &[10.0, 20.0]);
        assert_eq!(g.get(b).unwrap(), &[30.0]);
    }

    #[test]
    fn broadcast_sums_backward() {
        let t = t64();
        let a = t.leaf(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let b = broadcast_to(&t, a, &[2, 3]).unwrap();
        assert_eq!(t.value(b).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let s = sum_all(&t, b).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn broadcast_middle_one_dim() {
        let t = t64();
        let a = t.leaf(Tensor::from_vec(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = broadcast_to(&t, a, &[2, 3, 2]).unwrap();
        assert_eq!(
            t.value(b).data(),
            &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0, 3.0, 4.0]
        );
    }

    #[test]
    fn sum_axis_values_and_grad() {
        let t = t64();
        let a = t.leaf(Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let s0 = sum_axis(&t, a, 0).unwrap();
        assert_eq!(t.value(s0).data(), &[5.0, 7.0, 9.0]);
        let s1 = sum_axis(&t, s0, 0).unwrap();
        let g = t.backward(s1).unwrap();
        assert_eq!(g.get(a).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn mean_all_grad() {
        let t = t64();
        let a = t.leaf(Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let m = mean_all(&t, a).unwrap();
        assert_eq!(t.value(m).item().unwrap(), 2.5);
        let g = t.backward(m).unwrap();
        assert_eq!(g.get(a).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn exp_log_inverse() {
        let t = t64();
        let a = t.leaf(Tensor::from_vec(&[3], vec![0.5, 1.0, 2.0]).unwrap());
        let b = log(&t, exp(&t, a).unwrap()).unwrap();
        for (x, y) in t.value(a).data().iter().zip(t.value(b).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
