//! Average pooling whose windows are clipped at the border.
//!
//! Windows start at every multiple of `stride` inside the input and cover
//! `kernel` rows/columns, truncated to the valid region. Each output is the
//! mean over the in-bounds elements of its window, so output size is
//! `ceil(h / stride) x ceil(w / stride)`.

use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor4};

fn windows(len: usize, kernel: usize, stride: usize) -> Vec<(usize, usize)> {
    (0..len.div_ceil(stride))
        .map(|o| {
            let start = o * stride;
            (start, (start + kernel).min(len))
        })
        .collect()
}

fn check(kernel: usize, stride: usize) -> Result<()> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Argument(format!(
            "avg_pool_clipped: kernel ({kernel}) and stride ({stride}) must be positive"
        )));
    }
    Ok(())
}

pub fn pooled_dims(input: Dims, stride: usize) -> Dims {
    Dims::new(input.n, input.c, input.h.div_ceil(stride), input.w.div_ceil(stride))
}

pub fn avg_pool_clipped<T: Real>(input: &Tensor4<T>, kernel: usize, stride: usize) -> Result<Tensor4<T>> {
    check(kernel, stride)?;
    let id = input.dims();
    let od = pooled_dims(id, stride);
    let rows = windows(id.h, kernel, stride);
    let cols = windows(id.w, kernel, stride);
    let mut out = Vec::with_capacity(od.len());
    for n in 0..id.n {
        for c in 0..id.c {
            let plane = input.plane(n, c);
            for &(y0, y1) in &rows {
                for &(x0, x1) in &cols {
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        for &v in &plane[y * id.w + x0..y * id.w + x1] {
                            acc += v;
                        }
                    }
                    out.push(acc / T::of(((y1 - y0) * (x1 - x0)) as f64));
                }
            }
        }
    }
    Tensor4::from_vec(od, out)
}

pub(crate) fn avg_pool_clipped_backward<T: Real>(
    input_dims: Dims,
    kernel: usize,
    stride: usize,
    grad_out: &[T],
) -> Vec<T> {
    let rows = windows(input_dims.h, kernel, stride);
    let cols = windows(input_dims.w, kernel, stride);
    let mut grad = vec![T::zero(); input_dims.len()];
    let mut g = grad_out.iter();
    for n in 0..input_dims.n {
        for c in 0..input_dims.c {
            let base = input_dims.index(n, c, 0, 0);
            for &(y0, y1) in &rows {
                for &(x0, x1) in &cols {
                    let share = *g.next().expect("grad_out sized by forward")
                        / T::of(((y1 - y0) * (x1 - x0)) as f64);
                    for y in y0..y1 {
                        for v in &mut grad[base + y * input_dims.w + x0..base + y * input_dims.w + x1] {
                            *v += share;
                        }
                    }
                }
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_preserved_for_every_geometry() {
        for h in 1..=16 {
            for w in 1..=16 {
                let t = Tensor4::<f64>::filled(Dims::new(1, 1, h, w), 0.37);
                for kernel in 1..=17 {
                    for stride in 1..=17 {
                        let p = avg_pool_clipped(&t, kernel, stride).unwrap();
                        assert_eq!(p.dims().h, h.div_ceil(stride));
                        assert!(p.data().iter().all(|&v| (v - 0.37).abs() < 1e-13), "{h}x{w} k{kernel} s{stride}");
                    }
                }
            }
        }
    }

    #[test]
    fn clipped_corner_window() {
        // 10x10, kernel = stride = 4: window starts 0, 4, 8; the last covers rows/cols 8..10.
        let t = Tensor4::<f64>::from_fn(Dims::new(1, 1, 10, 10), |_, _, y, x| (y * 10 + x) as f64);
        let p = avg_pool_clipped(&t, 4, 4).unwrap();
        assert_eq!((p.dims().h, p.dims().w), (3, 3));
        let corner = (88.0 + 89.0 + 98.0 + 99.0) / 4.0;
        assert_eq!(p.at(0, 0, 2, 2), corner);
        let first: f64 = (0..4).flat_map(|y| (0..4).map(move |x| (y * 10 + x) as f64)).sum::<f64>() / 16.0;
        assert_eq!(p.at(0, 0, 0, 0), first);
    }

    #[test]
    fn exact_division_has_no_clipping() {
        let t = Tensor4::<f32>::zeros(Dims::new(1, 1, 24, 24));
        let p = avg_pool_clipped(&t, 4, 4).unwrap();
        assert_eq!((p.dims().h, p.dims().w), (6, 6));
    }

    #[test]
    fn zero_kernel_or_stride_rejected() {
        let t = Tensor4::<f32>::zeros(Dims::new(1, 1, 4, 4));
        assert!(matches!(avg_pool_clipped(&t, 0, 1), Err(Error::Argument(_))));
        assert!(matches!(avg_pool_clipped(&t, 2, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn backward_conserves_mass() {
        // Each window spreads its gradient over its valid cells, so totals match.
        let d = Dims::new(1, 2, 7, 9);
        let g = vec![1.0f64; pooled_dims(d, 3).len()];
        let gi = avg_pool_clipped_backward(d, 3, 3, &g);
        let total: f64 = gi.iter().sum();
        assert!((total - g.len() as f64).abs() < 1e-12);
    }
}
