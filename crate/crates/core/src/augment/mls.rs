//! Affine moving-least-squares deformation driven by a jittered control lattice.
//!
//! For a query point `v` the control points are weighted by
//! `w_i = 1 / |p_i - v|^(2 alpha)`; the weighted best affine map from the
//! centred `p` to the centred `q` is then applied to `v`.
//!
//! Warping needs, for each destination pixel, where to read from. That is
//! the inverse of the forward deformation; it is approximated here by
//! evaluating the same construction with the roles of `p` and `q` swapped.
//! The approximation is not an exact inverse, which augmentation does not need.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_pair, remap, Field};
use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Real, Tensor4};

/// A 2-D point as `[x, y]` in pixel units.
pub type Point = [f64; 2];

const COINCIDENT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlPointSet {
    p: Vec<Point>,
    q: Vec<Point>,
    alpha: f64,
    identity: bool,
}

fn collinear(points: &[Point]) -> bool {
    let Some(&a) = points.first() else { return true };
    let scale = points
        .iter()
        .map(|b| (b[0] - a[0]).abs().max((b[1] - a[1]).abs()))
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return true;
    }
    let far = points
        .iter()
        .copied()
        .max_by(|b, c| {
            let db = (b[0] - a[0]).hypot(b[1] - a[1]);
            let dc = (c[0] - a[0]).hypot(c[1] - a[1]);
            db.total_cmp(&dc)
        })
        .unwrap_or(a);
    let (ux, uy) = (far[0] - a[0], far[1] - a[1]);
    let norm = ux.hypot(uy);
    points
        .iter()
        .all(|b| ((b[0] - a[0]) * uy - (b[1] - a[1]) * ux).abs() / norm <= 1e-9 * scale)
}

impl ControlPointSet {
    pub fn new(p: Vec<Point>, q: Vec<Point>, alpha: f64) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::Argument(format!("{} source points but {} targets", p.len(), q.len())));
        }
        if p.len() < 3 {
            return Err(Error::Argument(format!("need at least 3 control points, got {}", p.len())));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Argument(format!("alpha must be positive, got {alpha}")));
        }
        if p.iter().chain(&q).any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::Argument("control points must be finite".into()));
        }
        if collinear(&p) {
            return Err(Error::Argument("source control points are collinear".into()));
        }
        let identity = p == q;
        Ok(ControlPointSet { p, q, alpha, identity })
    }

    pub fn p(&self) -> &[Point] {
        &self.p
    }

    pub fn q(&self) -> &[Point] {
        &self.q
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The same pairs with source and target exchanged.
    pub fn swapped(&self) -> Result<Self> {
        ControlPointSet::new(self.q.clone(), self.p.clone(), self.alpha)
    }
}

/// Evaluate the affine MLS deformation at `v`.
///
/// When every target equals its source the map is the identity, returned exactly.
pub fn mls_affine_map(v: Point, cps: &ControlPointSet) -> Result<Point> {
    if cps.identity {
        return Ok(v);
    }
    let mut w = Vec::with_capacity(cps.p.len());
    for (i, p) in cps.p.iter().enumerate() {
        let d = (p[0] - v[0]).hypot(p[1] - v[1]);
        if d < COINCIDENT {
            return Ok(cps.q[i]);
        }
        w.push(d.powf(-2.0 * cps.alpha));
    }
    let total: f64 = w.iter().sum();
    let centroid = |pts: &[Point]| {
        let mut c = [0.0; 2];
        for (pt, &wi) in pts.iter().zip(&w) {
            c[0] += wi * pt[0];
            c[1] += wi * pt[1];
        }
        [c[0] / total, c[1] / total]
    };
    let ps = centroid(&cps.p);
    let qs = centroid(&cps.q);

    // a = sum w p^T p (symmetric), b = sum w p^T q, with row-vector points.
    let (mut a00, mut a01, mut a11) = (0.0, 0.0, 0.0);
    let mut b = [[0.0; 2]; 2];
    for ((p, q), &wi) in cps.p.iter().zip(&cps.q).zip(&w) {
        let ph = [p[0] - ps[0], p[1] - ps[1]];
        let qh = [q[0] - qs[0], q[1] - qs[1]];
        a00 += wi * ph[0] * ph[0];
        a01 += wi * ph[0] * ph[1];
        a11 += wi * ph[1] * ph[1];
        for r in 0..2 {
            for c in 0..2 {
                b[r][c] += wi * ph[r] * qh[c];
            }
        }
    }
    let det = a00 * a11 - a01 * a01;
    let scale = (a00 + a11) * (a00 + a11);
    if !(det.abs() > 1e-14 * scale) || !det.is_finite() {
        return Err(Error::Numeric(format!(
            "singular moment matrix at ({}, {}): the weighted control points are collinear",
            v[0], v[1]
        )));
    }
    let inv = [[a11 / det, -a01 / det], [-a01 / det, a00 / det]];
    let mut m = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            m[r][c] = inv[r][0] * b[0][c] + inv[r][1] * b[1][c];
        }
    }
    let d = [v[0] - ps[0], v[1] - ps[1]];
    Ok([
        d[0] * m[0][0] + d[1] * m[1][0] + qs[0],
        d[0] * m[0][1] + d[1] * m[1][1] + qs[1],
    ])
}

/// Random lattice deformation parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformSpec {
    /// Control points per side of the lattice.
    pub grid: usize,
    /// Largest per-axis control point displacement, in pixels.
    pub max_displacement: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl DeformSpec {
    /// 4x4 lattice, displacement up to 5% of the image side.
    pub fn for_side(side: usize, seed: u64) -> Self {
        DeformSpec {
            grid: 4,
            max_displacement: 0.05 * side as f64,
            alpha: 1.0,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        DeformSpec { seed, ..self }
    }

    /// Lattice spacing in pixels along x and y.
    fn spacing(&self, height: usize, width: usize) -> (f64, f64) {
        let g = (self.grid - 1) as f64;
        ((width - 1) as f64 / g, (height - 1) as f64 / g)
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.grid < 2 {
            return Err(Error::Argument(format!("lattice needs at least 2 points per side, got {}", self.grid)));
        }
        if height < 2 || width < 2 {
            return Err(Error::Argument(format!("cannot deform a {height}x{width} image")));
        }
        if !(self.max_displacement >= 0.0) {
            return Err(Error::Argument(format!(
                "max displacement must be non-negative, got {}",
                self.max_displacement
            )));
        }
        let (sx, sy) = self.spacing(height, width);
        let half = sx.min(sy) / 2.0;
        if self.max_displacement >= half {
            return Err(Error::Argument(format!(
                "max displacement {} must stay below half the lattice spacing ({half})",
                self.max_displacement
            )));
        }
        Ok(())
    }

    /// Lattice `p` and jittered targets `q = p + U[-d, d]^2`.
    pub fn control_points(&self, height: usize, width: usize) -> Result<ControlPointSet> {
        self.validate(height, width)?;
        let (sx, sy) = self.spacing(height, width);
        let d = self.max_displacement;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut p = Vec::with_capacity(self.grid * self.grid);
        let mut q = Vec::with_capacity(self.grid * self.grid);
        for gy in 0..self.grid {
            for gx in 0..self.grid {
                let pt = [gx as f64 * sx, gy as f64 * sy];
                let (dx, dy) = if d > 0.0 {
                    (rng.random_range(-d..=d), rng.random_range(-d..=d))
                } else {
                    (0.0, 0.0)
                };
                p.push(pt);
                q.push([pt[0] + dx, pt[1] + dy]);
            }
        }
        ControlPointSet::new(p, q, self.alpha)
    }
}

/// Backward field for a forward deformation `p -> q`.
fn backward_field(cps: &ControlPointSet, height: usize, width: usize) -> Result<Field> {
    let inverse = cps.swapped()?;
    let mut field = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            field.push(mls_affine_map([x as f64, y as f64], &inverse)?);
        }
    }
    Ok(field)
}

/// Deform image and labels with explicit control points (content at `p_i` moves to `q_i`).
pub fn warp_pair_with<T: Real>(
    image: &Tensor4<T>,
    labels: &LabelMap,
    cps: &ControlPointSet,
) -> Result<(Tensor4<T>, LabelMap)> {
    check_pair(image, labels)?;
    let d = image.dims();
    let field = backward_field(cps, d.h, d.w)?;
    Ok(remap(image, labels, &field))
}

/// Deform image and labels with a random lattice drawn from `spec`.
pub fn warp_pair<T: Real>(image: &Tensor4<T>, labels: &LabelMap, spec: &DeformSpec) -> Result<(Tensor4<T>, LabelMap)> {
    check_pair(image, labels)?;
    let d = image.dims();
    let cps = spec.control_points(d.h, d.w)?;
    warp_pair_with(image, labels, &cps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    fn square() -> ControlPointSet {
        let p = vec![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]];
        ControlPointSet::new(p.clone(), p, 1.0).unwrap()
    }

    #[test]
    fn identity_pairs_give_identity_map() {
        let cps = square();
        for v in [[3.0, 4.0], [-2.0, 11.5], [5.0, 5.0]] {
            let f = mls_affine_map(v, &cps).unwrap();
            assert!((f[0] - v[0]).abs() < 1e-12 && (f[1] - v[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_query_returns_target() {
        let p = vec![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let q = vec![[1.0, 2.0], [12.0, 1.0], [0.5, 9.0]];
        let cps = ControlPointSet::new(p, q, 1.0).unwrap();
        assert_eq!(mls_affine_map([10.0, 0.0], &cps).unwrap(), [12.0, 1.0]);
    }

    #[test]
    fn construction_rejects_bad_sets() {
        let line = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [5.0, 5.0]];
        assert!(ControlPointSet::new(line.clone(), line, 1.0).is_err());
        let two = vec![[0.0, 0.0], [1.0, 0.0]];
        assert!(ControlPointSet::new(two.clone(), two, 1.0).is_err());
        let p = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(ControlPointSet::new(p.clone(), p[..2].to_vec(), 1.0).is_err());
        assert!(ControlPointSet::new(p.clone(), p, 0.0).is_err());
    }

    #[test]
    fn degenerate_weighting_is_a_numeric_error() {
        // A huge alpha underflows the weight of the distant point, leaving
        // only two effective points.
        let p = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 50.0]];
        let q = vec![[0.0, 1.0], [1.0, 1.0], [0.0, 51.0]];
        let cps = ControlPointSet::new(p, q, 200.0).unwrap();
        let r = mls_affine_map([0.5, 0.01], &cps);
        assert!(matches!(r, Err(Error::Numeric(m)) if m.contains("singular")));
    }

    #[test]
    fn displacement_bound_enforced() {
        let spec = DeformSpec {
            grid: 4,
            max_displacement: 11.0,
            alpha: 1.0,
            seed: 0,
        };
        // spacing 63/3 = 21, half = 10.5
        assert!(spec.validate(64, 64).is_err());
        assert!(DeformSpec::for_side(64, 0).validate(64, 64).is_ok());
    }

    #[test]
    fn zero_displacement_is_exact_identity() {
        let img = Tensor4::<f32>::from_fn(Dims::new(1, 1, 16, 16), |_, _, y, x| ((y * 7 + x * 3) % 11) as f32 / 11.0);
        let lab = LabelMap::from_fn(16, 16, |y, x| ((y / 4 + x / 5) % 3) as u8);
        let spec = DeformSpec {
            max_displacement: 0.0,
            ..DeformSpec::for_side(16, 3)
        };
        let (i2, l2) = warp_pair(&img, &lab, &spec).unwrap();
        assert_eq!(i2, img);
        assert_eq!(l2, lab);
    }
}
