//! Training objectives: supervised cross-entropy, confidence-gated
//! pseudo-label consistency, and the cross-model contrastive term.
//!
//! Pseudo-label targets are computed from raw teacher probabilities with no
//! tape attached, so no gradient can reach the teacher through them. The
//! consistency denominator counts every unlabeled clip, including the ones
//! the confidence gate masked out: low confidence shrinks the term instead
//! of renormalizing it.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ops;
use crate::scalar::Elem;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Confidence gate on the teacher's max probability.
    pub tau_conf: f64,
    /// Temperature of the contrastive similarity.
    pub tau_contrastive: f64,
    /// Weight of the two pseudo-label consistency terms.
    pub gamma: f64,
    /// Weight of the contrastive term.
    pub beta: f64,
    /// Average the contrastive loss over anchors from both models; false
    /// restricts anchors to the first model's embeddings.
    pub contrastive_symmetric: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_conf: 0.8,
            tau_contrastive: 0.5,
            gamma: 2.0,
            beta: 2.0,
            contrastive_symmetric: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CoreError::InvalidArgument(m));
        if !(0.0..=1.0).contains(&self.tau_conf) {
            return err(format!("tau_conf {} outside [0, 1]", self.tau_conf));
        }
        if self.tau_contrastive <= 0.0 {
            return err(format!("tau_contrastive {} must be positive", self.tau_contrastive));
        }
        if self.gamma < 0.0 || self.beta < 0.0 {
            return err(format!("gamma {} and beta {} must be non-negative", self.gamma, self.beta));
        }
        Ok(())
    }
}

/// Mean cross-entropy of `logits` [B, K] against hard labels.
pub fn supervised_loss<E: Elem>(t: &Tape<E>, logits: Var, labels: &[usize]) -> Result<Var> {
    let b = labels.len();
    ops::ce_mean(t, logits, labels, &vec![E::one(); b], E::from_usize(b))
}

/// Hard targets distilled from one model's predictions for the other.
#[derive(Debug, Clone)]
pub struct PseudoLabels<E: Elem> {
    pub labels: Vec<usize>,
    /// 1 where the teacher cleared the confidence gate, else 0.
    pub weights: Vec<E>,
    /// Fraction of clips that cleared the gate.
    pub mask_rate: f64,
}

/// Argmax + confidence gate over teacher probabilities [B, K]. Ties pick
/// the lowest class index; confidence exactly at the gate passes.
pub fn pseudo_labels<E: Elem>(teacher_probs: &Tensor<E>, tau_conf: E) -> Result<PseudoLabels<E>> {
    let shape = teacher_probs.shape();
    if shape.len() != 2 {
        return Err(CoreError::ShapeMismatch(format!(
            "pseudo_labels: want [batch, classes], got {shape:?}"
        )));
    }
    let (b, k) = (shape[0], shape[1]);
    if b == 0 || k == 0 {
        return Err(CoreError::InvalidArgument("pseudo_labels: empty probabilities".into()));
    }
    let mut labels = Vec::with_capacity(b);
    let mut weights = Vec::with_capacity(b);
    let mut kept = 0usize;
    for r in 0..b {
        let row = &teacher_probs.data()[r * k..(r + 1) * k];
        let mut best = 0usize;
        for (i, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = i;
            }
        }
        labels.push(best);
        if row[best] >= tau_conf {
            weights.push(E::one());
            kept += 1;
        } else {
            weights.push(E::zero());
        }
    }
    Ok(PseudoLabels {
        labels,
        weights,
        mask_rate: kept as f64 / b as f64,
    })
}

/// Gated cross-entropy of student logits [B, K] against pseudo-labels,
/// averaged over all B clips regardless of the gate.
pub fn pseudo_loss<E: Elem>(t: &Tape<E>, student_logits: Var, pl: &PseudoLabels<E>) -> Result<Var> {
    ops::ce_mean(
        t,
        student_logits,
        &pl.labels,
        &pl.weights,
        E::from_usize(pl.labels.len()),
    )
}

/// Cross-model contrastive loss over two [B, D] embedding batches.
///
/// Embeddings are L2-normalized, stacked to 2B rows, and each anchor must
/// pick its counterpart from the other model out of the remaining 2B − 1
/// rows under temperature `tau`. Self-similarity is excluded with a large
/// negative additive mask.
pub fn contrastive_loss<E: Elem>(
    t: &Tape<E>,
    emb_a: Var,
    emb_b: Var,
    tau: E,
    symmetric: bool,
) -> Result<Var> {
    let sa = t.shape(emb_a);
    let sb = t.shape(emb_b);
    if sa.len() != 2 || sa != sb {
        return Err(CoreError::ShapeMismatch(format!(
            "contrastive_loss: want matching [batch, dim], got {sa:?} vs {sb:?}"
        )));
    }
    let b = sa[0];
    if b == 0 {
        return Err(CoreError::InvalidArgument("contrastive_loss: empty batch".into()));
    }
    let na = ops::l2_normalize(t, emb_a)?;
    let nb = ops::l2_normalize(t, emb_b)?;
    let all = ops::concat(t, &[na, nb], 0)?;
    let sim = ops::matmul(t, all, ops::transpose(t, all, &[1, 0])?)?;
    let sim = ops::scale(t, sim, E::one() / tau)?;
    let n = 2 * b;
    let mut mask = Tensor::zeros(&[n, n]);
    let neg = E::from_f64(-1e9);
    for i in 0..n {
        mask.data_mut()[i * n + i] = neg;
    }
    let sim = ops::add(t, sim, t.constant(mask))?;
    // Row i's positive is its counterpart in the other half.
    let labels: Vec<usize> = (0..n).map(|i| if i < b { b + i } else { i - b }).collect();
    let (weights, denom) = if symmetric {
        (vec![E::one(); n], E::from_usize(n))
    } else {
        let mut w = vec![E::one(); n];
        for wi in &mut w[b..] {
            *wi = E::zero();
        }
        (w, E::from_usize(b))
    };
    ops::ce_mean(t, sim, &labels, &weights, denom)
}

/// Per-step scalar record of every objective component, for the metrics log.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ls_z: f64,
    pub ls_a: f64,
    pub lu_z: f64,
    pub lu_a: f64,
    pub l_ca: f64,
    pub total: f64,
    /// Fraction of unlabeled clips where the conv teacher cleared the gate.
    pub mask_rate_za: f64,
    /// Fraction where the transformer teacher cleared the gate.
    pub mask_rate_az: f64,
}

/// Total objective: (ls_z + ls_a) + gamma·(lu_z + lu_a) + beta·l_ca.
/// Consistency and contrastive parts are optional so ablations skip them
/// without building dead graph.
pub fn combine<E: Elem>(
    t: &Tape<E>,
    ls_z: Var,
    ls_a: Var,
    consistency: Option<(Var, Var)>,
    contrastive: Option<Var>,
    cfg: &LossConfig,
) -> Result<Var> {
    let mut total = ops::add(t, ls_z, ls_a)?;
    if let Some((lu_z, lu_a)) = consistency {
        let lu = ops::add(t, lu_z, lu_a)?;
        total = ops::add(t, total, ops::scale(t, lu, E::from_f64(cfg.gamma))?)?;
    }
    if let Some(ca) = contrastive {
        total = ops::add(t, total, ops::scale(t, ca, E::from_f64(cfg.beta))?)?;
    }
    Ok(total)
}
