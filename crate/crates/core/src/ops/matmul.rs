//! Dense matrix products and the linear-layer composite.

use super::{broadcast_to, check, reshape};
use crate::error::Result;
use crate::scalar::Elem;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// C[m,n] += A[m,k]·B[k,n], ikj order so the inner loop runs over
/// contiguous rows of B and C.
pub(crate) fn matmul_kernel<E: Elem>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == E::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    }
}

/// C[m,k] += A[m,n]·Bᵀ where B is [k,n]: inner loop contiguous over B rows.
fn matmul_bt_kernel<E: Elem>(a: &[E], b: &[E], c: &mut [E], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let c_row = &mut c[i * k..(i + 1) * k];
        for (kk, cj) in c_row.iter_mut().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            let mut acc = E::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *cj += acc;
        }
    }
}

/// C[k,n] += Aᵀ·B where A is [m,k], B is [m,n].
fn matmul_at_kernel<E: Elem>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == E::zero() {
                continue;
            }
            let c_row = &mut c[kk * n..(kk + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    }
}

/// 2-D product: [M,K]·[K,N] -> [M,N].
pub fn matmul<E: Elem>(t: &Tape<E>, a: Var, b: Var) -> Result<Var> {
    let va = t.value(a);
    let vb = t.value(b);
    let (sa, sb) = (va.shape(), vb.shape());
    check(sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0], "matmul", || {
        format!("{sa:?} x {sb:?}")
    })?;
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut data = vec![E::zero(); m * n];
    matmul_kernel(va.data(), vb.data(), &mut data, m, k, n);
    t.push(Tensor::new(vec![m, n], data)?, vec![a, b], move |g| {
        // dA = g·Bᵀ, dB = Aᵀ·g
        let mut da = vec![E::zero(); m * k];
        matmul_bt_kernel(g, vb.data(), &mut da, m, n, k);
        let mut db = vec![E::zero(); k * n];
        matmul_at_kernel(va.data(), g, &mut db, m, k, n);
        vec![da, db]
    })
}

/// Batched product: [G,M,K]·[G,K,N] -> [G,M,N].
pub fn bmm<E: Elem>(t: &Tape<E>, a: Var, b: Var) -> Result<Var> {
    let va = t.value(a);
    let vb = t.value(b);
    let (sa, sb) = (va.shape(), vb.shape());
    check(
        sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1],
        "bmm",
        || format!("{sa:?} x {sb:?}"),
    )?;
    let (gcount, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
    let mut data = vec![E::zero(); gcount * m * n];
    for gi in 0..gcount {
        matmul_kernel(
            &va.data()[gi * m * k..(gi + 1) * m * k],
            &vb.data()[gi * k * n..(gi + 1) * k * n],
            &mut data[gi * m * n..(gi + 1) * m * n],
            m,
            k,
            n,
        );
    }
    t.push(Tensor::new(vec![gcount, m, n], data)?, vec![a, b], move |g| {
        let mut da = vec![E::zero(); gcount * m * k];
        let mut db = vec![E::zero(); gcount * k * n];
        for gi in 0..gcount {
            let gg = &g[gi * m * n..(gi + 1) * m * n];
            matmul_bt_kernel(
                gg,
                &vb.data()[gi * k * n..(gi + 1) * k * n],
                &mut da[gi * m * k..(gi + 1) * m * k],
                m,
                n,
                k,
            );
            matmul_at_kernel(
                &va.data()[gi * m * k..(gi + 1) * m * k],
                gg,
                &mut db[gi * k * n..(gi + 1) * k * n],
                m,
                k,
                n,
            );
        }
        vec![da, db]
    })
}

/// x·W (+ b), applied over the last axis of an arbitrary-rank input.
pub fn linear<E: Elem>(t: &Tape<E>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let xs = t.shape(x);
    let ws = t.shape(w);
    check(ws.len() == 2 && !xs.is_empty() && *xs.last().unwrap() == ws[0], "linear", || {
        format!("x {xs:?} w {ws:?}")
    })?;
    let rows: usize = xs[..xs.len() - 1].iter().product();
    let flat = reshape(t, x, &[rows, ws[0]])?;
    let mut y = matmul(t, flat, w)?;
    if let Some(b) = b {
        let bs = t.shape(b);
        check(bs == vec![ws[1]], "linear", || format!("bias {bs:?} vs out {}", ws[1]))?;
        let bb = broadcast_to(t, b, &[rows, ws[1]])?;
        y = super::add(t, y, bb)?;
    }
    let mut out_shape = xs[..xs.len() - 1].to_vec();
    out_shape.push(ws[1]);
    reshape(t, y, &out_shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{mul, sum_all};

    #[test]
    fn matmul_2x3_3x2() {
        let t: Tape<f64> = Tape::new();
        let a = t.leaf(Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = t.leaf(Tensor::from_vec(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap());
        let c = matmul(&t, a, b).unwrap();
        assert_eq!(t.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_grads_match_hand_computation() {
        let t: Tape<f64> = Tape::new();
        let a = t.leaf(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.leaf(Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let c = matmul(&t, a, b).unwrap();
        let w = t.constant(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let s = sum_all(&t, mul(&t, c, w).unwrap()).unwrap();
        // s = C[0,0] = a00·b00 + a01·b10
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &[5.0, 7.0, 0.0, 0.0]);
        assert_eq!(g.get(b).unwrap(), &[1.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn bmm_matches_per_batch_matmul() {
        let t: Tape<f64> = Tape::new();
        let a = t.leaf(Tensor::from_vec(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.leaf(Tensor::from_vec(&[2, 2, 1], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let c = bmm(&t, a, b).unwrap();
        assert_eq!(t.shape(c), vec![2, 1, 1]);
        assert_eq!(t.value(c).data(), &[17.0, 53.0]);
    }

    #[test]
    fn linear_applies_bias_over_leading_dims() {
        let t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::from_vec(&[2, 2, 2], vec![1.0; 8]).unwrap());
        let w = t.leaf(Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = t.leaf(Tensor::from_vec(&[3], vec![0.5, 0.5, 0.5]).unwrap());
        let y = linear(&t, x, w, Some(b)).unwrap();
        assert_eq!(t.shape(y), vec![2, 2, 3]);
        let vy = t.value(y);
        for row in 0..4 {
            assert_eq!(&vy.data()[row * 3..row * 3 + 3], &[5.5, 7.5, 9.5]);
        }
    }
}
