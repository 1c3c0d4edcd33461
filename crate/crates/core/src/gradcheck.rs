//! Central finite-difference verification of analytic gradients.
//!
//! Everything here runs at f64: the perturbation step (1e-5 by default)
//! would drown in f32 rounding. The relative error reported is
//! |analytic − central| / max(1, |central|), maximized over coordinates.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::ops;
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A differentiable scalar function of several tensor inputs, expressed as
/// tape construction.
pub trait ScalarFn: Fn(&Tape<f64>, &[Var]) -> Result<Var> {}
impl<F: Fn(&Tape<f64>, &[Var]) -> Result<Var>> ScalarFn for F {}

fn eval_plain(f: &impl ScalarFn, inputs: &[Tensor<f64>]) -> Result<f64> {
    let tape: Tape<f64> = Tape::new();
    let vars: Vec<Var> = tape.no_grad(|| inputs.iter().map(|t| tape.leaf(t.clone())).collect());
    let y = f(&tape, &vars)?;
    let v = tape.value(y).item()?;
    if !v.is_finite() {
        return Err(CoreError::Numeric(format!("non-finite objective {v}")));
    }
    Ok(v)
}

/// Max relative error between backward() and central differences over every
/// coordinate of every input.
pub fn grad_check(f: impl ScalarFn, inputs: &[Tensor<f64>], step: f64) -> Result<f64> {
    grad_check_coords(f, inputs, step, None, 0)
}

/// Same, but checks at most `max_coords` deterministically sampled
/// coordinates per input. Used where inputs are whole parameter sets.
pub fn grad_check_sampled(
    f: impl ScalarFn,
    inputs: &[Tensor<f64>],
    step: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64> {
    grad_check_coords(f, inputs, step, Some(max_coords), seed)
}

fn grad_check_coords(
    f: impl ScalarFn,
    inputs: &[Tensor<f64>],
    step: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<f64> {
    if step <= 0.0 {
        return Err(CoreError::InvalidArgument("step must be positive".into()));
    }
    // Analytic gradients once.
    let tape: Tape<f64> = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = f(&tape, &vars)?;
    let y0 = tape.value(y).item()?;
    if !y0.is_finite() {
        return Err(CoreError::Numeric(format!("non-finite objective {y0}")));
    }
    let grads = tape.backward(y)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .get(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match max_coords {
            Some(cap) if input.numel() > cap => {
                let mut r = rng::stream(seed, &[0x6663, i as u64]);
                let mut picked: Vec<usize> = (0..cap).map(|_| r.gen_range(0..input.numel())).collect();
                picked.sort_unstable();
                picked.dedup();
                picked
            }
            _ => (0..input.numel()).collect(),
        };
        for j in coords {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let fp = eval_plain(&f, &work)?;
            work[i].data_mut()[j] = orig - step;
            let fm = eval_plain(&f, &work)?;
            work[i].data_mut()[j] = orig;
            let cd = (fp - fm) / (2.0 * step);
            let rel = (analytic[i][j] - cd).abs() / cd.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

/// Uniform tensor in [-1, 1), seeded.
pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, &[0x7264]);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| r.gen_range(-1.0..1.0))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Uniform tensor pushed away from zero by ±margin, for kinked ops (relu).
pub fn rand_tensor_off_zero(shape: &[usize], seed: u64, margin: f64) -> Tensor<f64> {
    let mut t = rand_tensor(shape, seed);
    for v in t.data_mut() {
        *v += if *v >= 0.0 { margin } else { -margin };
    }
    t
}

/// Random tensor with well-separated values so pooling argmaxes sit far
/// from decision boundaries.
pub fn rand_tensor_distinct(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut t = rand_tensor(shape, seed);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = *v * 0.3 + (i % 97) as f64 * 0.01;
    }
    t
}

/// Result row of one named primitive check.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
}

/// Reduces an op output to a scalar by dotting with a fixed random
/// constant, so gradients do not cancel through symmetric reductions.
fn dot_reduce(t: &Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = t.shape(y);
    let w = t.constant(rand_tensor(&shape, seed ^ 0x00dd));
    ops::sum_all(t, ops::mul(t, y, w)?)
}

/// Runs the finite-difference suite over every differentiable primitive
/// and composite, `instances` random instances each. Returns one row per
/// op; tolerances are asserted by callers.
pub fn primitive_suite(instances: usize, step: f64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let run = |name: &'static str,
                   rows: &mut Vec<CheckRow>,
                   check: &dyn Fn(u64) -> Result<f64>|
     -> Result<()> {
        let mut worst = 0.0f64;
        for k in 0..instances {
            let e = check(rng::derive_seed(0xABCD, &[rng::hash_str(name), k as u64]))?;
            if e > worst {
                worst = e;
            }
        }
        rows.push(CheckRow {
            name,
            instances,
            max_rel_err: worst,
        });
        Ok(())
    };

    run("add", &mut rows, &|s| {
        let xs = [rand_tensor(&[3, 4], s), rand_tensor(&[3, 4], s ^ 1)];
        grad_check(|t, v| dot_reduce(t, ops::add(t, v[0], v[1])?, s), &xs, step)
    })?;
    run("sub", &mut rows, &|s| {
        let xs = [rand_tensor(&[3, 4], s), rand_tensor(&[3, 4], s ^ 1)];
        grad_check(|t, v| dot_reduce(t, ops::sub(t, v[0], v[1])?, s), &xs, step)
    })?;
    run("mul", &mut rows, &|s| {
        let xs = [rand_tensor(&[3, 4], s), rand_tensor(&[3, 4], s ^ 1)];
        grad_check(|t, v| dot_reduce(t, ops::mul(t, v[0], v[1])?, s), &xs, step)
    })?;
    run("scale", &mut rows, &|s| {
        let xs = [rand_tensor(&[5], s)];
        grad_check(|t, v| dot_reduce(t, ops::scale(t, v[0], -1.7)?, s), &xs, step)
    })?;
    run("add_scalar", &mut rows, &|s| {
        let xs = [rand_tensor(&[5], s)];
        grad_check(|t, v| dot_reduce(t, ops::add_scalar(t, v[0], 0.9)?, s), &xs, step)
    })?;
    run("log", &mut rows, &|s| {
        let mut x = rand_tensor(&[6], s);
        for v in x.data_mut() {
            *v = v.abs() + 0.5;
        }
        grad_check(|t, v| dot_reduce(t, ops::log(t, v[0])?, s), &[x], step)
    })?;
    run("exp", &mut rows, &|s| {
        let xs = [rand_tensor(&[6], s)];
        grad_check(|t, v| dot_reduce(t, ops::exp(t, v[0])?, s), &xs, step)
    })?;
    run("matmul", &mut rows, &|s| {
        let xs = [rand_tensor(&[3, 4], s), rand_tensor(&[4, 2], s ^ 1)];
        grad_check(|t, v| dot_reduce(t, ops::matmul(t, v[0], v[1])?, s), &xs, step)
    })?;
    run("bmm", &mut rows, &|s| {
        let xs = [rand_tensor(&[2, 2, 3], s), rand_tensor(&[2, 3, 2], s ^ 1)];
        grad_check(|t, v| dot_reduce(t, ops::bmm(t, v[0], v[1])?, s), &xs, step)
    })?;
    run("conv3d", &mut rows, &|s| {
        let xs = [
            rand_tensor(&[2, 2, 3, 5, 5], s),
            rand_tensor(&[3, 2, 2, 3, 3], s ^ 1),
            rand_tensor(&[3], s ^ 2),
        ];
        grad_check(
            |t, v| {
                dot_reduce(
                    t,
                    ops::conv3d(t, v[0], v[1], Some(v[2]), (1, 2, 2), (1, 1, 1))?,
                    s,
                )
            },
            &xs,
            step,
        )
    })?;
    run("conv3d_stride1_nopad", &mut rows, &|s| {
        let xs = [rand_tensor(&[1, 2, 3, 4, 4], s), rand_tensor(&[2, 2, 2, 2, 2], s ^ 1)];
        grad_check(
            |t, v| dot_reduce(t, ops::conv3d(t, v[0], v[1], None, (1, 1, 1), (0, 0, 0))?, s),
            &xs,
            step,
        )
    })?;
    run("max_pool3d", &mut rows, &|s| {
        let xs = [rand_tensor_distinct(&[1, 2, 4, 4, 4], s)];
        grad_check(
            |t, v| dot_reduce(t, ops::max_pool3d(t, v[0], (2, 2, 2), (2, 2, 2))?, s),
            &xs,
            step,
        )
    })?;
    run("avg_pool3d", &mut rows, &|s| {
        let xs = [rand_tensor(&[1, 2, 4, 4, 4], s)];
        grad_check(
            |t, v| dot_reduce(t, ops::avg_pool3d(t, v[0], (2, 2, 2), (1, 2, 2))?, s),
            &xs,
            step,
        )
    })?;
    run("global_avg_pool", &mut rows, &|s| {
        let xs = [rand_tensor(&[2, 3, 2, 3, 3], s)];
        grad_check(|t, v| dot_reduce(t, ops::global_avg_pool(t, v[0])?, s), &xs, step)
    })?;
    run("relu", &mut rows, &|s| {
        let xs = [rand_tensor_off_zero(&[4, 4], s, 0.05)];
        grad_check(|t, v| dot_reduce(t, ops::relu(t, v[0])?, s), &xs, step)
    })?;
    run("gelu", &mut rows, &|s| {
        let xs = [rand_tensor(&[4, 4], s)];
        grad_check(|t, v| dot_reduce(t, ops::gelu(t, v[0])?, s), &xs, step)
    })?;
    run("layer_norm", &mut rows, &|s| {
        let xs = [rand_tensor(&[3, 6], s)];
        grad_check(|t, v| dot_reduce(t, ops::layer_norm(t, v[0], 1e-6)?, s), &xs, step)
    })?;
    run("softmax", &mut rows, &|s| {
        let xs = [rand_tensor(&[3, 5], s)];
        grad_check(|t, v| dot_reduce(t, ops::softmax(t, v[0])?, s), &xs, step)
    })?;
    run("reshape", &mut rows, &|s| {
        let xs = [rand_tensor(&[2, 6], s)];
        grad_check(|t, v| dot_reduce(t, ops::reshape(t, v[0], &[3, 4])?, s), &xs, step)
    })?;
    run("transpose", &mut rows, &|s| {
        let xs = [rand_tensor(&[2, 3, 4], s)];
        grad_check(|t, v| dot_reduce(t, ops::transpose(t, v[0], &[2, 0, 1])?, s), &xs, step)
    })?;
    run("concat", &mut rows, &|s| {
        let xs = [rand_tensor(&[2, 2], s), rand_tensor(&[2, 3], s ^ 1)];
        grad_check(|t, v| dot_reduce(t, ops::concat(t, &[v[0], v[1]], 1)?, s), &xs, step)
    })?;
    run("slice", &mut rows, &|s| {
        let xs = [rand_tensor(&[3, 5], s)];
        grad_check(|t, v| dot_reduce(t, ops::slice(t, v[0], 1, 1, 3)?, s), &xs, step)
    })?;
    run("broadcast_to", &mut rows, &|s| {
        let xs = [rand_tensor(&[1, 4], s)];
        grad_check(|t, v| dot_reduce(t, ops::broadcast_to(t, v[0], &[3, 4])?, s), &xs, step)
    })?;
    run("sum_axis", &mut rows, &|s| {
        let xs = [rand_tensor(&[2, 3, 2], s)];
        grad_check(|t, v| dot_reduce(t, ops::sum_axis(t, v[0], 1)?, s), &xs, step)
    })?;
    run("sum_all", &mut rows, &|s| {
        let xs = [rand_tensor(&[7], s)];
        grad_check(|t, v| ops::sum_all(t, v[0]), &xs, step)
    })?;
    run("mean_all", &mut rows, &|s| {
        let xs = [rand_tensor(&[7], s)];
        grad_check(|t, v| ops::mean_all(t, v[0]), &xs, step)
    })?;
    run("dropout", &mut rows, &|s| {
        let xs = [rand_tensor(&[4, 4], s)];
        grad_check(
            |t, v| dot_reduce(t, ops::dropout(t, v[0], 0.3, s ^ 0xd0, true)?, s),
            &xs,
            step,
        )
    })?;
    run("l2_normalize", &mut rows, &|s| {
        let mut x = rand_tensor(&[3, 4], s);
        for v in x.data_mut() {
            *v += if *v >= 0.0 { 0.3 } else { -0.3 };
        }
        grad_check(|t, v| dot_reduce(t, ops::l2_normalize(t, v[0])?, s), &[x], step)
    })?;
    run("ce_mean", &mut rows, &|s| {
        let xs = [rand_tensor(&[3, 5], s)];
        let labels = [0usize, 2, 4];
        let weights = [1.0, 0.0, 1.0];
        grad_check(
            move |t, v| ops::ce_mean(t, v[0], &labels, &weights, 3.0),
            &xs,
            step,
        )
    })?;
    run("sdpa", &mut rows, &|s| {
        let xs = [
            rand_tensor(&[2, 3, 4], s),
            rand_tensor(&[2, 3, 4], s ^ 1),
            rand_tensor(&[2, 3, 4], s ^ 2),
        ];
        grad_check(|t, v| dot_reduce(t, ops::sdpa(t, v[0], v[1], v[2])?, s), &xs, step)
    })?;
    run("linear", &mut rows, &|s| {
        let xs = [
            rand_tensor(&[2, 3, 4], s),
            rand_tensor(&[4, 3], s ^ 1),
            rand_tensor(&[3], s ^ 2),
        ];
        grad_check(
            |t, v| dot_reduce(t, ops::linear(t, v[0], v[1], Some(v[2]))?, s),
            &xs,
            step,
        )
    })?;
    Ok(rows)
}
