//! Joint image/label augmentation.
//!
//! Every transform here produces a backward coordinate field: for each
//! destination pixel, the source position to read from. The image is sampled
//! bilinearly and the labels by nearest neighbour from the same field, with
//! coordinates clamped to the image, so the pair stays aligned.

mod common;
mod mls;

pub use common::{common_augment, common_augment_with, CommonDraw};
pub use mls::{mls_affine_map, warp_pair, warp_pair_with, ControlPointSet, DeformSpec, Point};

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Real, Tensor4};

/// Source coordinates `(x, y)` for every destination pixel, row-major.
pub(crate) type Field = Vec<Point>;

pub(crate) fn check_pair<T: Real>(image: &Tensor4<T>, labels: &LabelMap) -> Result<()> {
    let d = image.dims();
    if (d.h, d.w) != (labels.height(), labels.width()) {
        return Err(Error::Shape(format!(
            "image is {}x{} but labels are {}x{}",
            d.h,
            d.w,
            labels.height(),
            labels.width()
        )));
    }
    Ok(())
}

/// Apply a backward field to an image (bilinear) and its labels (nearest).
pub(crate) fn remap<T: Real>(image: &Tensor4<T>, labels: &LabelMap, field: &[Point]) -> (Tensor4<T>, LabelMap) {
    let d = image.dims();
    debug_assert_eq!(field.len(), d.h * d.w);
    let (hmax, wmax) = ((d.h - 1) as f64, (d.w - 1) as f64);
    let clamped: Vec<Point> = field
        .iter()
        .map(|&[x, y]| [x.clamp(0.0, wmax), y.clamp(0.0, hmax)])
        .collect();

    let out_labels = LabelMap::from_fn(d.h, d.w, |y, x| {
        let [sx, sy] = clamped[y * d.w + x];
        labels.at(sy.round() as usize, sx.round() as usize)
    });

    let out_image = Tensor4::from_fn(d, |n, c, y, x| {
        let [sx, sy] = clamped[y * d.w + x];
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(d.w - 1), (y0 + 1).min(d.h - 1));
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let plane = image.plane(n, c);
        let v = |yy: usize, xx: usize| plane[yy * d.w + xx].as_f64();
        let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
        let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
        T::of(top * (1.0 - fy) + bottom * fy)
    });
    (out_image, out_labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn identity_field_copies_exactly() {
        let img = Tensor4::<f32>::from_fn(Dims::new(1, 2, 5, 4), |_, c, y, x| (c * 20 + y * 4 + x) as f32 / 7.0);
        let lab = LabelMap::from_fn(5, 4, |y, x| ((y + x) % 3) as u8);
        let field: Vec<Point> = (0..5).flat_map(|y| (0..4).map(move |x| [x as f64, y as f64])).collect();
        let (i2, l2) = remap(&img, &lab, &field);
        assert_eq!(i2, img);
        assert_eq!(l2, lab);
    }

    #[test]
    fn out_of_bounds_clamps_to_edge() {
        let img = Tensor4::<f64>::from_fn(Dims::new(1, 1, 3, 3), |_, _, y, x| (y * 3 + x) as f64);
        let lab = LabelMap::from_fn(3, 3, |y, x| (y * 3 + x) as u8);
        let field = vec![[-5.0, -5.0]; 9];
        let (i2, l2) = remap(&img, &lab, &field);
        assert!(i2.data().iter().all(|&v| v == 0.0));
        assert!(l2.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn mismatched_pair_rejected() {
        let img = Tensor4::<f32>::zeros(Dims::new(1, 1, 4, 4));
        assert!(matches!(check_pair(&img, &LabelMap::filled(4, 5, 0)), Err(Error::Shape(_))));
    }
}
