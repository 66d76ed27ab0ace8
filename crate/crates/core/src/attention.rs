//! Scale attention: per-scale scalar weights fuse the score maps, and the
//! loss supervises the fused map plus every per-scale map.
//!
//! The weights are parameterised as `softmax(logits)`, so they are positive,
//! sum to one, and start uniform when the logits start at zero.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::softmax;
use crate::tensor::{LabelMap, Real, Tensor4};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    pub logits: Vec<T>,
}

impl<T: Real> AttentionWeights<T> {
    /// Equal initialisation: all logits zero, so every weight is `1/scales`.
    pub fn uniform(scales: usize) -> Self {
        AttentionWeights {
            logits: vec![T::zero(); scales],
        }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// The normalised per-scale weights.
    pub fn weights(&self) -> Vec<T> {
        softmax(&self.logits)
    }
}

/// Per-scale score maps living in a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleVars {
    pub maps: Vec<Var>,
    pub scales: Vec<f64>,
}

/// Per-scale score maps as plain tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleOutputs<T> {
    pub score_maps: Vec<Tensor4<T>>,
    pub scales: Vec<f64>,
}

/// Index of the full-resolution (scale 1.0) output, which must also be the largest scale.
pub fn reference_scale(scales: &[f64]) -> Result<usize> {
    if scales.is_empty() {
        return Err(Error::Argument("no score maps to fuse".into()));
    }
    let idx = scales
        .iter()
        .position(|&s| s == 1.0)
        .ok_or_else(|| Error::Argument(format!("scales {scales:?} do not include 1.0")))?;
    if scales.iter().any(|&s| s > 1.0 || s <= 0.0) {
        return Err(Error::Argument(format!("scales {scales:?} must lie in (0, 1]")));
    }
    Ok(idx)
}

/// Weighted sum of the score maps after resizing each to the scale-1.0 map's size.
pub fn fuse_graph<T: Real>(g: &mut Graph<T>, outputs: &ScaleVars, logits: Var) -> Result<Var> {
    if outputs.maps.len() != outputs.scales.len() {
        return Err(Error::Argument(format!(
            "{} score maps for {} scales",
            outputs.maps.len(),
            outputs.scales.len()
        )));
    }
    let reference = outputs.maps[reference_scale(&outputs.scales)?];
    let rd = g.dims(reference);
    let mut resized = Vec::with_capacity(outputs.maps.len());
    for &m in &outputs.maps {
        resized.push(g.bilinear_resize(m, rd.h, rd.w)?);
    }
    g.softmax_weighted_sum(&resized, logits)
}

pub fn fuse<T: Real>(outputs: &ScaleOutputs<T>, weights: &AttentionWeights<T>) -> Result<Tensor4<T>> {
    let mut g = Graph::new();
    let vars = ScaleVars {
        maps: outputs.score_maps.iter().map(|t| g.input(t.clone())).collect(),
        scales: outputs.scales.clone(),
    };
    let logits = g.input(Tensor4::vector(weights.logits.clone()));
    let out = fuse_graph(&mut g, &vars, logits)?;
    Ok(g.value(out).clone())
}

/// Cross entropy of the fused map (bilinearly upsampled to the label resolution)
/// plus, when `auxiliary` is set, one cross entropy per scale against labels
/// nearest-downsampled to that scale's map. All terms have weight one.
pub fn deep_supervision_loss_graph<T: Real>(
    g: &mut Graph<T>,
    outputs: &ScaleVars,
    fused: Var,
    gt: &[LabelMap],
    ignore_label: Option<u8>,
    auxiliary: bool,
) -> Result<Var> {
    let first = gt
        .first()
        .ok_or_else(|| Error::Argument("no ground truth supplied".into()))?;
    let (h, w) = (first.height(), first.width());
    if gt.iter().any(|l| (l.height(), l.width()) != (h, w)) {
        return Err(Error::Shape("ground-truth maps in a batch differ in size".into()));
    }
    let upsampled = g.bilinear_resize(fused, h, w)?;
    let mut terms = vec![g.softmax_cross_entropy(upsampled, gt, ignore_label)?];
    if auxiliary {
        for &m in &outputs.maps {
            let d = g.dims(m);
            let down: Vec<LabelMap> = gt.iter().map(|l| l.resize_nearest(d.h, d.w)).collect();
            terms.push(g.softmax_cross_entropy(m, &down, ignore_label)?);
        }
    }
    g.sum_scalars(&terms)
}

pub fn deep_supervision_loss<T: Real>(
    outputs: &ScaleOutputs<T>,
    fused: &Tensor4<T>,
    gt: &[LabelMap],
    ignore_label: Option<u8>,
    auxiliary: bool,
) -> Result<T> {
    let mut g = Graph::new();
    let vars = ScaleVars {
        maps: outputs.score_maps.iter().map(|t| g.input(t.clone())).collect(),
        scales: outputs.scales.clone(),
    };
    let f = g.input(fused.clone());
    let loss = deep_supervision_loss_graph(&mut g, &vars, f, gt, ignore_label, auxiliary)?;
    Ok(g.scalar(loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::softmax_cross_entropy;
    use crate::tensor::Dims;

    fn outputs(values: &[f64], sides: &[usize], scales: &[f64]) -> ScaleOutputs<f64> {
        ScaleOutputs {
            score_maps: values
                .iter()
                .zip(sides)
                .map(|(&v, &s)| Tensor4::filled(Dims::new(1, 2, s, s), v))
                .collect(),
            scales: scales.to_vec(),
        }
    }

    #[test]
    fn uniform_initialisation() {
        let w = AttentionWeights::<f64>::uniform(3).weights();
        assert!(w.iter().all(|&v| v == 1.0 / 3.0));
    }

    #[test]
    fn singleton_fusion_is_identity() {
        let t = Tensor4::<f32>::from_fn(Dims::new(1, 3, 4, 4), |_, c, y, x| (c * 16 + y * 4 + x) as f32 * 0.25 - 3.0);
        let out = ScaleOutputs {
            score_maps: vec![t.clone()],
            scales: vec![1.0],
        };
        let f = fuse(&out, &AttentionWeights { logits: vec![4.2] }).unwrap();
        assert_eq!(f, t);
    }

    #[test]
    fn weighted_constant_maps() {
        let out = outputs(&[1.0, 2.0, 3.0], &[6, 5, 3], &[1.0, 0.75, 0.5]);
        let logits = [0.5f64, 0.3, 0.2].iter().map(|v| v.ln()).collect();
        let f = fuse(&out, &AttentionWeights { logits }).unwrap();
        assert_eq!(f.dims(), Dims::new(1, 2, 6, 6));
        assert!(f.data().iter().all(|&v| (v - 1.7).abs() < 1e-14));
    }

    #[test]
    fn empty_and_missing_reference_rejected() {
        let empty = ScaleOutputs::<f64> {
            score_maps: vec![],
            scales: vec![],
        };
        assert!(matches!(fuse(&empty, &AttentionWeights::uniform(0)), Err(Error::Argument(_))));
        let out = outputs(&[1.0], &[4], &[0.5]);
        assert!(fuse(&out, &AttentionWeights::uniform(1)).is_err());
    }

    #[test]
    fn uniform_logits_give_one_plus_s_ln_c() {
        let out = outputs(&[0.0, 0.0, 0.0], &[4, 3, 2], &[1.0, 0.75, 0.5]);
        let fused = Tensor4::zeros(Dims::new(1, 2, 4, 4));
        let gt = vec![LabelMap::from_fn(32, 32, |y, x| ((y / 5 + x / 7) % 2) as u8)];
        let loss = deep_supervision_loss(&out, &fused, &gt, None, true).unwrap();
        assert!((loss - 4.0 * 2f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn single_scale_without_auxiliary_is_plain_cross_entropy() {
        let t = Tensor4::<f64>::from_fn(Dims::new(1, 3, 5, 5), |_, c, y, x| ((c * 7 + y * 3 + x) % 5) as f64 * 0.4);
        let gt = vec![LabelMap::from_fn(5, 5, |y, x| ((y + 2 * x) % 3) as u8)];
        let out = ScaleOutputs {
            score_maps: vec![t.clone()],
            scales: vec![1.0],
        };
        let loss = deep_supervision_loss(&out, &t, &gt, None, false).unwrap();
        assert_eq!(loss, softmax_cross_entropy(&t, &gt, None).unwrap());
    }

    #[test]
    fn confident_correct_logits_approach_zero() {
        let gt = vec![LabelMap::from_fn(8, 8, |_, x| (x >= 4) as u8)];
        let make = |side: usize| {
            let l = gt[0].resize_nearest(side, side);
            Tensor4::<f64>::from_fn(Dims::new(1, 2, side, side), |_, c, y, x| if l.at(y, x) as usize == c { 50.0 } else { -50.0 })
        };
        let out = ScaleOutputs {
            score_maps: vec![make(8), make(4)],
            scales: vec![1.0, 0.5],
        };
        let loss = deep_supervision_loss(&out, &make(8), &gt, None, true).unwrap();
        assert!(loss < 1e-30);
    }
}
