//! Bilinear resampling with half-pixel centres.
//!
//! Destination index `d` maps to source coordinate `(d + 0.5) * in / out - 0.5`,
//! clamped to `[0, in - 1]`. Up- and down-sampling share this one convention.

use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor4};

/// Per-axis sampling taps: `(lower index, upper index, weight of upper)`.
#[derive(Debug, Clone)]
pub(crate) struct AxisTaps<T> {
    taps: Vec<(usize, usize, T)>,
}

impl<T: Real> AxisTaps<T> {
    pub(crate) fn new(in_len: usize, out_len: usize) -> Self {
        let ratio = in_len as f64 / out_len as f64;
        let max = (in_len - 1) as f64;
        let taps = (0..out_len)
            .map(|d| {
                let src = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, max);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, T::of(src - i0 as f64))
            })
            .collect();
        AxisTaps { taps }
    }
}

fn check(input: Dims, out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Argument(format!(
            "bilinear_resize: output size {out_h}x{out_w} must be positive"
        )));
    }
    if input.h == 0 || input.w == 0 {
        return Err(Error::Shape(format!("bilinear_resize: empty input {input}")));
    }
    Ok(())
}

pub fn bilinear_resize<T: Real>(input: &Tensor4<T>, out_h: usize, out_w: usize) -> Result<Tensor4<T>> {
    let id = input.dims();
    check(id, out_h, out_w)?;
    if (out_h, out_w) == (id.h, id.w) {
        return Tensor4::from_vec(id, input.data().to_vec());
    }
    let ys = AxisTaps::<T>::new(id.h, out_h);
    let xs = AxisTaps::<T>::new(id.w, out_w);
    let od = Dims::new(id.n, id.c, out_h, out_w);
    let mut out = Vec::with_capacity(od.len());
    let one = T::one();
    for n in 0..id.n {
        for c in 0..id.c {
            let p = input.plane(n, c);
            for &(y0, y1, wy) in &ys.taps {
                let r0 = &p[y0 * id.w..(y0 + 1) * id.w];
                let r1 = &p[y1 * id.w..(y1 + 1) * id.w];
                for &(x0, x1, wx) in &xs.taps {
                    let top = (one - wx) * r0[x0] + wx * r0[x1];
                    let bottom = (one - wx) * r1[x0] + wx * r1[x1];
                    out.push((one - wy) * top + wy * bottom);
                }
            }
        }
    }
    Tensor4::from_vec(od, out)
}

pub(crate) fn bilinear_resize_backward<T: Real>(input_dims: Dims, out_h: usize, out_w: usize, grad_out: &[T]) -> Vec<T> {
    if (out_h, out_w) == (input_dims.h, input_dims.w) {
        return grad_out.to_vec();
    }
    let ys = AxisTaps::<T>::new(input_dims.h, out_h);
    let xs = AxisTaps::<T>::new(input_dims.w, out_w);
    let mut grad = vec![T::zero(); input_dims.len()];
    let one = T::one();
    let mut g = grad_out.iter();
    for n in 0..input_dims.n {
        for c in 0..input_dims.c {
            let base = input_dims.index(n, c, 0, 0);
            let w = input_dims.w;
            for &(y0, y1, wy) in &ys.taps {
                for &(x0, x1, wx) in &xs.taps {
                    let go = *g.next().expect("grad_out sized by forward");
                    grad[base + y0 * w + x0] += (one - wy) * (one - wx) * go;
                    grad[base + y0 * w + x1] += (one - wy) * wx * go;
                    grad[base + y1 * w + x0] += wy * (one - wx) * go;
                    grad[base + y1 * w + x1] += wy * wx * go;
                }
            }
        }
    }
    grad
}
