//! Distillation and masked-language-modeling losses with their gradients.

use crate::encoder::LayerOutputs;
use crate::error::{Error, Result};
use crate::tensor::{norm, Real};
use crate::tokenizer::IGNORE;

/// Sum over the top `k` layers of `||h_S^l - h_T^l||_2` on pooled vectors.
pub fn distill_loss<F: Real>(student: &LayerOutputs<F>, teacher: &LayerOutputs<F>, k: usize) -> Result<F> {
    Ok(distill_terms(&student.pooled, &teacher.pooled, k, false)?.0)
}

/// Per-layer distillation terms. Returns the loss and, for each of the top
/// `k` layers, the gradient with respect to the student's pooled vector.
/// With `normalize`, both vectors are scaled to unit length first.
///
/// The norm is not differentiable at zero; the gradient there is taken as 0.
pub fn distill_terms<F: Real>(
    student: &[Vec<F>],
    teacher: &[Vec<F>],
    k: usize,
    normalize: bool,
) -> Result<(F, Vec<(usize, Vec<F>)>)> {
    if k == 0 || student.len() < k || teacher.len() < k {
        return Err(Error::Shape(format!(
            "distillation over {k} layers needs at least that many (student {}, teacher {})",
            student.len(),
            teacher.len()
        )));
    }
    let (ls, lt) = (student.len(), teacher.len());
    let mut total = F::zero();
    let mut grads = Vec::with_capacity(k);
    for i in 0..k {
        let (hs, ht) = (&student[ls - k + i], &teacher[lt - k + i]);
        if hs.len() != ht.len() {
            return Err(Error::Shape(format!("pooled width {} vs {}", hs.len(), ht.len())));
        }
        let (us, ns) = if normalize { unit(hs)? } else { (hs.clone(), F::one()) };
        let ut = if normalize { unit(ht)?.0 } else { ht.clone() };
        let diff: Vec<F> = us.iter().zip(&ut).map(|(&a, &b)| a - b).collect();
        let dist = norm(&diff);
        total += dist;
        let mut g: Vec<F> = if dist > F::zero() {
            diff.iter().map(|&x| x / dist).collect()
        } else {
            vec![F::zero(); diff.len()]
        };
        if normalize {
            let proj: F = us.iter().zip(&g).map(|(&u, &gi)| u * gi).sum();
            g = g.iter().zip(&us).map(|(&gi, &u)| (gi - u * proj) / ns).collect();
        }
        grads.push((ls - k + i, g));
    }
    Ok((total, grads))
}

fn unit<F: Real>(v: &[F]) -> Result<(Vec<F>, F)> {
    let n = norm(v);
    if n <= F::zero() {
        return Err(Error::ZeroNorm);
    }
    Ok((v.iter().map(|&x| x / n).collect(), n))
}

/// Summed negative log-likelihood of `targets` under row-wise softmax of
/// `logits` (`targets.len() x vocab`), with the gradient w.r.t. the logits.
pub fn cross_entropy<F: Real>(logits: &[F], vocab: usize, targets: &[usize]) -> (F, Vec<F>) {
    let mut loss = F::zero();
    let mut grad = vec![F::zero(); logits.len()];
    for ((row, g), &t) in logits.chunks_exact(vocab).zip(grad.chunks_exact_mut(vocab)).zip(targets) {
        let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
        let mut z = F::zero();
        for (gi, &x) in g.iter_mut().zip(row) {
            *gi = (x - max).exp();
            z += *gi;
        }
        loss += z.ln() + max - row[t];
        let inv = F::one() / z;
        g.iter_mut().for_each(|gi| *gi *= inv);
        g[t] -= F::one();
    }
    (loss, grad)
}

/// MLM loss over full-sequence logits (`labels.len() x vocab`): summed
/// negative log-probability of the original token at every labelled
/// position. Positions labelled [`IGNORE`] contribute nothing.
pub fn mlm_loss<F: Real>(logits: &[F], vocab: usize, labels: &[i32]) -> Result<F> {
    if logits.len() != labels.len() * vocab {
        return Err(Error::Shape(format!(
            "{} logits for {} positions x {vocab} tokens",
            logits.len(),
            labels.len()
        )));
    }
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == IGNORE {
            continue;
        }
        if l < 0 || l as usize >= vocab {
            return Err(Error::LabelOutOfRange {
                label: l as i64,
                classes: vocab,
            });
        }
        rows.extend_from_slice(&logits[i * vocab..(i + 1) * vocab]);
        targets.push(l as usize);
    }
    if targets.is_empty() {
        return Err(Error::NoMaskedPositions);
    }
    Ok(cross_entropy(&rows, vocab, &targets).0)
}

/// `L = L_dis + L_mlm`, unweighted.
pub fn total_loss(dis: f64, mlm: f64) -> Result<f64> {
    if !dis.is_finite() || !mlm.is_finite() {
        return Err(Error::NonFinite(format!("loss components L_dis={dis}, L_mlm={mlm}")));
    }
    Ok(dis + mlm)
}
