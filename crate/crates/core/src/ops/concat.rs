use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor4};

/// Concatenate along the channel axis in argument order.
pub fn concat_channels<T: Real>(inputs: &[&Tensor4<T>]) -> Result<Tensor4<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Argument("concat_channels: no inputs".into()))?
        .dims();
    let mut channels = 0;
    for t in inputs {
        let d = t.dims();
        if (d.n, d.h, d.w) != (first.n, first.h, first.w) {
            return Err(Error::Shape(format!(
                "concat_channels: batch/height/width of {d} differ from {first}"
            )));
        }
        channels += d.c;
    }
    let od = Dims::new(first.n, channels, first.h, first.w);
    let plane = first.plane();
    let mut out = Vec::with_capacity(od.len());
    for n in 0..first.n {
        for t in inputs {
            let c = t.dims().c;
            let start = n * c * plane;
            out.extend_from_slice(&t.data()[start..start + c * plane]);
        }
    }
    Tensor4::from_vec(od, out)
}

/// Split a channel-concatenated buffer back into per-input pieces.
pub fn split_channels<T: Real>(data: &[T], out: Dims, channels: &[usize]) -> Vec<Vec<T>> {
    let plane = out.plane();
    let mut parts: Vec<Vec<T>> = channels
        .iter()
        .map(|&c| Vec::with_capacity(out.n * c * plane))
        .collect();
    let mut offset = 0;
    for _ in 0..out.n {
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&data[offset..offset + c * plane]);
            offset += c * plane;
        }
    }
    parts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_accounting() {
        let main = Tensor4::<f32>::zeros(Dims::new(1, 8, 3, 3));
        let branch = Tensor4::<f32>::zeros(Dims::new(1, 2, 3, 3));
        let out = concat_channels(&[&main, &branch, &branch, &branch, &branch]).unwrap();
        assert_eq!(out.dims().c, 16);
    }

    #[test]
    fn single_input_is_identity() {
        let t = Tensor4::<f64>::from_fn(Dims::new(2, 3, 2, 2), |n, c, y, x| (n + c + y + x) as f64);
        assert_eq!(concat_channels(&[&t]).unwrap(), t);
    }

    #[test]
    fn mismatched_spatial_rejected() {
        let a = Tensor4::<f32>::zeros(Dims::new(1, 1, 3, 3));
        let b = Tensor4::<f32>::zeros(Dims::new(1, 1, 3, 4));
        assert!(matches!(concat_channels(&[&a, &b]), Err(Error::Shape(_))));
    }

    #[test]
    fn split_reverses_concat_bit_exactly() {
        let a = Tensor4::<f64>::from_fn(Dims::new(2, 3, 2, 3), |n, c, y, x| (n * 100 + c * 10 + y * 3 + x) as f64 / 7.0);
        let b = Tensor4::<f64>::from_fn(Dims::new(2, 1, 2, 3), |n, _, y, x| -((n * 10 + y * 3 + x) as f64) / 3.0);
        let cat = concat_channels(&[&a, &b]).unwrap();
        let parts = split_channels(cat.data(), cat.dims(), &[3, 1]);
        assert_eq!(parts[0], a.data());
        assert_eq!(parts[1], b.data());
    }
}
