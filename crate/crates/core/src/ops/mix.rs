//! Softmax-weighted sum of equally shaped tensors.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

/// Numerically stable softmax of a short vector.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `sum_i softmax(logits)_i * maps_i`; returns the output and the weights used.
pub(crate) fn softmax_weighted_sum<T: Real>(maps: &[&Tensor4<T>], logits: &[T]) -> Result<(Tensor4<T>, Vec<T>)> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Argument("weighted sum of an empty list".into()))?
        .dims();
    if logits.len() != maps.len() {
        return Err(Error::Shape(format!(
            "{} weight logits for {} maps",
            logits.len(),
            maps.len()
        )));
    }
    for m in maps {
        if m.dims() != first {
            return Err(Error::Shape(format!(
                "weighted sum: map {} differs from {}",
                m.dims(),
                first
            )));
        }
    }
    let weights = softmax(logits);
    let mut out = vec![T::zero(); first.len()];
    for (m, &w) in maps.iter().zip(&weights) {
        for (o, &v) in out.iter_mut().zip(m.data()) {
            *o += w * v;
        }
    }
    Ok((Tensor4::from_vec(first, out)?, weights))
}

/// Gradient of the weighted sum with respect to the logits.
pub(crate) fn softmax_weighted_sum_logit_grad<T: Real>(maps: &[&Tensor4<T>], weights: &[T], grad_out: &[T]) -> Vec<T> {
    let dw: Vec<T> = maps
        .iter()
        .map(|m| m.data().iter().zip(grad_out).map(|(&v, &g)| v * g).sum())
        .collect();
    let mean: T = weights.iter().zip(&dw).map(|(&w, &d)| w * d).sum();
    weights.iter().zip(&dw).map(|(&w, &d)| w * (d - mean)).collect()
}

pub fn relu<T: Real>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn zero_logits_are_uniform() {
        for s in 1..6 {
            let w = softmax(&vec![0.0f64; s]);
            assert!(w.iter().all(|&v| v == 1.0 / s as f64));
        }
    }

    #[test]
    fn singleton_weight_is_one() {
        assert_eq!(softmax(&[-3.7f32]), vec![1.0]);
    }

    #[test]
    fn weighted_constants() {
        let d = Dims::new(1, 1, 2, 2);
        let maps: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&v| Tensor4::<f64>::filled(d, v)).collect();
        let refs: Vec<_> = maps.iter().collect();
        let logits: Vec<f64> = [0.5f64, 0.3, 0.2].iter().map(|w| w.ln()).collect();
        let (out, w) = softmax_weighted_sum(&refs, &logits).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!(out.data().iter().all(|&v| (v - 1.7).abs() < 1e-14));
    }
}
