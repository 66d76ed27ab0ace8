//! Per-pixel softmax cross-entropy averaged over the non-ignored pixels of a batch.

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Real, Tensor4};

/// Loss value plus what backward needs: `(softmax - one_hot) / count` per element.
#[derive(Debug, Clone)]
pub(crate) struct CrossEntropy<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

pub(crate) fn softmax_cross_entropy_full<T: Real>(
    logits: &Tensor4<T>,
    targets: &[LabelMap],
    ignore_label: Option<u8>,
) -> Result<CrossEntropy<T>> {
    let d = logits.dims();
    if targets.len() != d.n {
        return Err(Error::Shape(format!(
            "cross entropy: {} label maps for batch of {}",
            targets.len(),
            d.n
        )));
    }
    for (i, t) in targets.iter().enumerate() {
        if (t.height(), t.width()) != (d.h, d.w) {
            return Err(Error::Shape(format!(
                "cross entropy: label map {i} is {}x{}, logits are {}x{}",
                t.height(),
                t.width(),
                d.h,
                d.w
            )));
        }
    }

    let plane = d.plane();
    let x = logits.data();
    let mut grad = vec![T::zero(); d.len()];
    let mut total = T::zero();
    let mut count = 0usize;
    let mut probs = vec![T::zero(); d.c];

    for (n, target) in targets.iter().enumerate() {
        for (p, &label) in target.data().iter().enumerate() {
            if Some(label) == ignore_label {
                continue;
            }
            let class = label as usize;
            if class >= d.c {
                return Err(Error::Data(format!(
                    "cross entropy: label {label} at sample {n}, row {}, col {} is outside 0..{}",
                    p / d.w,
                    p % d.w,
                    d.c
                )));
            }
            let at = |c: usize| x[(n * d.c + c) * plane + p];
            let max = (0..d.c).map(at).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (c, pr) in probs.iter_mut().enumerate() {
                *pr = (at(c) - max).exp();
                z += *pr;
            }
            total += z.ln() - (at(class) - max);
            for (c, pr) in probs.iter().enumerate() {
                grad[(n * d.c + c) * plane + p] = *pr / z;
            }
            grad[(n * d.c + class) * plane + p] += -T::one();
            count += 1;
        }
    }

    if count == 0 {
        return Ok(CrossEntropy {
            loss: T::zero(),
            grad,
        });
    }
    let inv = T::one() / T::of(count as f64);
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok(CrossEntropy {
        loss: total * inv,
        grad,
    })
}

/// Mean negative log-likelihood of the target class over all non-ignored pixels.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor4<T>, targets: &[LabelMap], ignore_label: Option<u8>) -> Result<T> {
    softmax_cross_entropy_full(logits, targets, ignore_label).map(|ce| ce.loss)
}
