//! Conventional augmentation: random mirror, zoom and small rotation about the
//! image centre, composed into a single backward map. Regions that come from
//! outside the image repeat the nearest edge pixel. Mirroring reflects the
//! pixels only; class ids are left untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_pair, remap, Point};
use crate::error::Result;
use crate::tensor::{LabelMap, Real, Tensor4};

pub const SCALE_RANGE: (f64, f64) = (0.75, 1.25);
pub const ANGLE_RANGE_DEG: (f64, f64) = (-10.0, 10.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommonDraw {
    pub mirror: bool,
    pub scale: f64,
    pub angle_deg: f64,
}

impl CommonDraw {
    pub const IDENTITY: CommonDraw = CommonDraw {
        mirror: false,
        scale: 1.0,
        angle_deg: 0.0,
    };

    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CommonDraw {
            mirror: rng.random_bool(0.5),
            scale: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
            angle_deg: rng.random_range(ANGLE_RANGE_DEG.0..=ANGLE_RANGE_DEG.1),
        }
    }

    /// Source position for destination `(x, y)` in a `height x width` image.
    fn source(&self, x: usize, y: usize, height: usize, width: usize) -> Point {
        let cx = (width - 1) as f64 / 2.0;
        let cy = (height - 1) as f64 / 2.0;
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let (s, c) = (-self.angle_deg.to_radians()).sin_cos();
        let rx = (c * dx - s * dy) / self.scale;
        let ry = (s * dx + c * dy) / self.scale;
        let sx = if self.mirror { cx - rx } else { cx + rx };
        [sx, cy + ry]
    }
}

pub fn common_augment_with<T: Real>(
    image: &Tensor4<T>,
    labels: &LabelMap,
    draw: &CommonDraw,
) -> Result<(Tensor4<T>, LabelMap)> {
    check_pair(image, labels)?;
    let d = image.dims();
    let field: Vec<Point> = (0..d.h)
        .flat_map(|y| (0..d.w).map(move |x| (x, y)))
        .map(|(x, y)| draw.source(x, y, d.h, d.w))
        .collect();
    Ok(remap(image, labels, &field))
}

pub fn common_augment<T: Real>(image: &Tensor4<T>, labels: &LabelMap, seed: u64) -> Result<(Tensor4<T>, LabelMap)> {
    common_augment_with(image, labels, &CommonDraw::sample(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    fn pair() -> (Tensor4<f32>, LabelMap) {
        let img = Tensor4::from_fn(Dims::new(1, 1, 12, 10), |_, _, y, x| (y * 10 + x) as f32 / 120.0);
        let lab = LabelMap::from_fn(12, 10, |_, x| if x < 5 { 1 } else { 2 });
        (img, lab)
    }

    #[test]
    fn identity_draw_is_a_no_op() {
        let (img, lab) = pair();
        let (i2, l2) = common_augment_with(&img, &lab, &CommonDraw::IDENTITY).unwrap();
        assert_eq!(i2, img);
        assert_eq!(l2, lab);
    }

    #[test]
    fn mirror_swaps_columns_without_renaming_classes() {
        let (img, lab) = pair();
        let draw = CommonDraw {
            mirror: true,
            ..CommonDraw::IDENTITY
        };
        let (i2, l2) = common_augment_with(&img, &lab, &draw).unwrap();
        for y in 0..12 {
            for x in 0..10 {
                assert_eq!(l2.at(y, x), lab.at(y, 9 - x));
                assert_eq!(i2.at(0, 0, y, x), img.at(0, 0, y, 9 - x));
            }
        }
        assert_eq!(l2.at(0, 0), 2);
    }

    #[test]
    fn draws_stay_in_range_and_are_seeded() {
        for seed in 0..200 {
            let d = CommonDraw::sample(seed);
            assert!((0.75..=1.25).contains(&d.scale));
            assert!((-10.0..=10.0).contains(&d.angle_deg));
            assert_eq!(d, CommonDraw::sample(seed));
        }
    }

    #[test]
    fn zoom_in_keeps_the_centre() {
        let img = Tensor4::<f64>::from_fn(Dims::new(1, 1, 9, 9), |_, _, y, x| (y * 9 + x) as f64);
        let lab = LabelMap::filled(9, 9, 0);
        let draw = CommonDraw {
            scale: 1.25,
            ..CommonDraw::IDENTITY
        };
        let (i2, _) = common_augment_with(&img, &lab, &draw).unwrap();
        assert_eq!(i2.at(0, 0, 4, 4), img.at(0, 0, 4, 4));
    }
}
