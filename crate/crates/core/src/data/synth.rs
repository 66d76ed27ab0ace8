//! Synthetic stand-in for axial pelvic scans.
//!
//! Each series places one smooth blob per foreground class on a flat
//! background. Classes come in left/right twins that share intensity and
//! shape statistics, so the only cue separating a twin pair is which half of
//! the image the blob lies in; the left twin is always entirely in the left
//! half and the right twin in the right half. Unpaired structures sit on the
//! midline. Across the slices of a series every blob drifts and changes shape
//! smoothly. Images get additive Gaussian noise and then a box blur; labels
//! are the exact blob masks.
//!
//! This is a test fixture for the two mechanisms being studied, not a model of
//! real MR anatomy.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::io::{write_image, write_labels, Gray8};
use super::manifest::{Entry, Manifest};
use super::Sample;
use crate::error::{Error, Result};
use crate::seed::derive;
use crate::model::BACKBONE_STRIDE;
use crate::tensor::{LabelMap, Tensor4};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub side: usize,
    /// Number of left/right twin class pairs.
    pub pairs: usize,
    /// Number of midline classes without a twin.
    pub unpaired: usize,
    /// Base blob radius range as a fraction of the side.
    pub radius: [f64; 2],
    /// Standard deviation of the additive noise (intensities are in `[0, 1]`).
    pub noise: f64,
    /// Box blur radius in pixels; 0 disables blurring.
    pub blur: usize,
    pub background: f64,
    /// Relative amplitude of the slice-to-slice shape change.
    pub morph: f64,
    pub seed: u64,
    /// Placement attempts per series before giving up.
    pub max_attempts: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            side: 64,
            pairs: 2,
            unpaired: 1,
            radius: [0.078125, 0.125],
            noise: 0.04,
            blur: 1,
            background: 0.3,
            morph: 0.08,
            seed: 0,
            max_attempts: 2000,
        }
    }
}

/// Class ids of a left/right twin pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwinPair {
    pub left: u8,
    pub right: u8,
}

const MAX_ASPECT: f64 = 1.1;
const HARMONICS: usize = 3;
const MAX_HARMONIC: f64 = 0.03;
const MAX_DRIFT: f64 = 0.75;

impl SynthSpec {
    pub fn num_classes(&self) -> usize {
        1 + 2 * self.pairs + self.unpaired
    }

    pub fn class_names(&self) -> Vec<String> {
        let mut names = vec!["background".to_string()];
        for k in 0..self.pairs {
            names.push(format!("organ{k}-left"));
            names.push(format!("organ{k}-right"));
        }
        names.extend((0..self.unpaired).map(|u| format!("structure{u}")));
        names
    }

    pub fn twin_pairs(&self) -> Vec<TwinPair> {
        (0..self.pairs)
            .map(|k| TwinPair {
                left: (1 + 2 * k) as u8,
                right: (2 + 2 * k) as u8,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.side == 0 || self.side % BACKBONE_STRIDE != 0 {
            return fail(format!("side {} must be a positive multiple of {BACKBONE_STRIDE}", self.side));
        }
        if self.pairs + self.unpaired == 0 {
            return fail("need at least one foreground class".into());
        }
        if self.num_classes() > 254 {
            return fail(format!("{} classes exceed the 254 storable in 8-bit labels", self.num_classes()));
        }
        let [lo, hi] = self.radius;
        if !(lo > 0.0 && lo <= hi && hi < 0.25) {
            return fail(format!("radius range {:?} must satisfy 0 < min <= max < 0.25", self.radius));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail(format!("noise {} must be non-negative", self.noise));
        }
        if !(0.0..1.0).contains(&self.morph) {
            return fail(format!("morph {} must lie in [0, 1)", self.morph));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return fail(format!("background {} must lie in [0, 1]", self.background));
        }
        if self.max_attempts == 0 {
            return fail("max_attempts must be positive".into());
        }
        Ok(())
    }

    /// Blob intensity for each foreground class; twins share a value.
    fn intensities(&self) -> Vec<f64> {
        let groups = self.pairs + self.unpaired;
        let level = |g: usize| {
            if groups == 1 {
                0.8
            } else {
                0.6 + 0.35 * g as f64 / (groups - 1) as f64
            }
        };
        let mut out = vec![self.background];
        for k in 0..self.pairs {
            out.push(level(k));
            out.push(level(k));
        }
        out.extend((0..self.unpaired).map(|u| level(self.pairs + u)));
        out
    }
}

/// Star-shaped blob in a rotated, stretched frame.
#[derive(Debug, Clone)]
struct Blob {
    class: u8,
    cx: f64,
    cy: f64,
    radius: f64,
    aspect: f64,
    angle: f64,
    harmonics: [(f64, f64); HARMONICS],
    /// Phases and amplitudes of the slice-wise drift.
    drift: [f64; 6],
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, class: u8, spec: &SynthSpec) -> Self {
        let mut harmonics = [(0.0, 0.0); HARMONICS];
        for h in &mut harmonics {
            *h = (rng.random_range(0.0..MAX_HARMONIC), rng.random_range(0.0..2.0 * PI));
        }
        let mut drift = [0.0; 6];
        for d in &mut drift {
            *d = rng.random_range(0.0..2.0 * PI);
        }
        Blob {
            class,
            cx: 0.0,
            cy: 0.0,
            radius: rng.random_range(spec.radius[0]..=spec.radius[1]) * spec.side as f64,
            aspect: rng.random_range(1.0..MAX_ASPECT),
            angle: rng.random_range(0.0..PI),
            harmonics,
            drift,
        }
    }

    /// Largest distance from the centre any slice can reach, including drift.
    fn reach(&self, morph: f64) -> f64 {
        let h: f64 = self.harmonics.iter().map(|h| h.0).sum();
        self.radius * (1.0 + morph) * self.aspect * (1.0 + 0.5 * morph) * (1.0 + h) + MAX_DRIFT
    }

    /// The blob's geometry at slice position `t` in `[0, 1]`.
    fn at_slice(&self, t: f64, morph: f64) -> Blob {
        let wave = |i: usize| (2.0 * PI * t + self.drift[i]).sin();
        let mut b = self.clone();
        b.radius = self.radius * (1.0 + morph * wave(0));
        b.aspect = self.aspect * (1.0 + 0.5 * morph * wave(1));
        b.angle = self.angle + morph * wave(2);
        b.cx = self.cx + MAX_DRIFT * wave(3);
        b.cy = self.cy + MAX_DRIFT * wave(4);
        for (k, h) in b.harmonics.iter_mut().enumerate() {
            h.1 += morph * (k as f64 + 1.0) * wave(5);
        }
        b
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (c * dx + s * dy) / self.aspect;
        let v = -s * dx + c * dy;
        let rho = u.hypot(v);
        let theta = v.atan2(u);
        let bound = self.radius
            * (1.0
                + self
                    .harmonics
                    .iter()
                    .enumerate()
                    .map(|(k, &(a, p))| a * ((k as f64 + 2.0) * theta + p).cos())
                    .sum::<f64>());
        rho <= bound
    }
}

/// Allowed centre-x interval for each placement role.
enum Side {
    Left,
    Right,
    Midline,
}

fn place(rng: &mut ChaCha8Rng, blob: &mut Blob, side_kind: &Side, spec: &SynthSpec) -> bool {
    let n = spec.side as f64;
    let half = n / 2.0;
    let r = blob.reach(spec.morph);
    // pixel centres are integer coordinates 0..side-1; blobs stay one pixel off the border
    let (x_lo, x_hi) = match side_kind {
        Side::Left => (r + 1.0, half - 1.0 - r),
        Side::Right => (half + r, n - 2.0 - r),
        Side::Midline => (half - 2.0, half + 1.0),
    };
    let (y_lo, y_hi) = (r + 1.0, n - 2.0 - r);
    if x_lo > x_hi || y_lo > y_hi {
        return false;
    }
    blob.cx = rng.random_range(x_lo..=x_hi);
    blob.cy = rng.random_range(y_lo..=y_hi);
    true
}

fn layout(spec: &SynthSpec, series: u64) -> Result<Vec<Blob>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(spec.seed, &[series, 0]));
    let mut roles = Vec::new();
    for pair in spec.twin_pairs() {
        roles.push((pair.left, Side::Left));
        roles.push((pair.right, Side::Right));
    }
    for u in 0..spec.unpaired {
        roles.push(((1 + 2 * spec.pairs + u) as u8, Side::Midline));
    }
    'attempt: for _ in 0..spec.max_attempts {
        let mut blobs: Vec<Blob> = Vec::with_capacity(roles.len());
        for (class, role) in &roles {
            let mut b = Blob::random(&mut rng, *class, spec);
            if !place(&mut rng, &mut b, role, spec) {
                continue 'attempt;
            }
            let clash = blobs.iter().any(|o| {
                (o.cx - b.cx).hypot(o.cy - b.cy) < o.reach(spec.morph) + b.reach(spec.morph) + 1.0
            });
            if clash {
                continue 'attempt;
            }
            blobs.push(b);
        }
        return Ok(blobs);
    }
    Err(Error::Generation(format!(
        "could not place {} non-overlapping blobs in a {}x{} image after {} attempts; \
         lower the radius range or the class count",
        roles.len(),
        spec.side,
        spec.side,
        spec.max_attempts
    )))
}

fn box_blur(plane: &[f64], side: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return plane.to_vec();
    }
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; src.len()];
        for a in 0..side {
            for b in 0..side {
                let lo = b.saturating_sub(radius);
                let hi = (b + radius).min(side - 1);
                let sum: f64 = (lo..=hi)
                    .map(|k| if horizontal { src[a * side + k] } else { src[k * side + a] })
                    .sum();
                let v = sum / (hi - lo + 1) as f64;
                if horizontal {
                    out[a * side + b] = v;
                } else {
                    out[b * side + a] = v;
                }
            }
        }
        out
    };
    pass(&pass(plane, true), false)
}

fn render(spec: &SynthSpec, blobs: &[Blob], intensity: &[f64], noise_seed: u64) -> Result<(Tensor4<f32>, LabelMap)> {
    let n = spec.side;
    let labels = LabelMap::from_fn(n, n, |y, x| {
        blobs
            .iter()
            .find(|b| b.contains(x as f64, y as f64))
            .map_or(0, |b| b.class)
    });
    let mut plane: Vec<f64> = labels.data().iter().map(|&c| intensity[c as usize]).collect();
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(format!("synth noise: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        for v in &mut plane {
            *v += normal.sample(&mut rng);
        }
    }
    let plane = box_blur(&plane, n, spec.blur);
    let gray = Gray8 {
        height: n,
        width: n,
        data: plane.iter().map(|&v| super::io::quantize(v as f32)).collect(),
    };
    Ok((gray.to_tensor(), labels))
}

pub fn series_name(series: usize) -> String {
    format!("s{series:03}")
}

/// Generate `n_series` series of `slices` slices each, in memory.
pub fn generate_samples(spec: &SynthSpec, n_series: usize, slices: usize) -> Result<Vec<Sample>> {
    spec.validate()?;
    let intensity = spec.intensities();
    let mut out = Vec::with_capacity(n_series * slices);
    for s in 0..n_series {
        let base = layout(spec, s as u64)?;
        for k in 0..slices {
            let t = if slices > 1 { k as f64 / (slices - 1) as f64 } else { 0.0 };
            let blobs: Vec<Blob> = base.iter().map(|b| b.at_slice(t, spec.morph)).collect();
            let (image, labels) = render(spec, &blobs, &intensity, derive(spec.seed, &[s as u64, 1, k as u64]))?;
            out.push(Sample {
                image,
                labels,
                series: series_name(s),
                slice: k as u32,
            });
        }
    }
    Ok(out)
}

/// Write samples as PNG image/label pairs plus `manifest.txt` under `out_dir`.
pub fn write_dataset(
    samples: &[Sample],
    side: usize,
    class_names: Vec<String>,
    out_dir: &Path,
) -> Result<Manifest> {
    for sub in ["images", "labels"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let stem = format!("{}_{:03}_{i:05}.png", s.series, s.slice);
        let image = Path::new("images").join(&stem);
        let label = Path::new("labels").join(&stem);
        write_image(&out_dir.join(&image), &s.image)?;
        write_labels(&out_dir.join(&label), &s.labels)?;
        entries.push(Entry {
            image,
            label,
            series: s.series.clone(),
            slice: s.slice,
        });
    }
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        side,
        num_classes: class_names.len(),
        class_names,
        entries,
    };
    manifest.write(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// Generate a dataset on disk and return its manifest.
pub fn generate(spec: &SynthSpec, n_series: usize, slices: usize, out_dir: &Path) -> Result<Manifest> {
    let samples = generate_samples(spec, n_series, slices)?;
    write_dataset(&samples, spec.side, spec.class_names(), out_dir)
}
