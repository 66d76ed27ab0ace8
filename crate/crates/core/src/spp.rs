//! Spatial pyramid pooling over a square feature map.
//!
//! For each pyramid level `l` the `n x n` map is average-pooled with
//! `kernel = stride = ceil(n / l)` (border windows clipped), reduced by a 1x1
//! convolution, bilinearly upsampled back to `n x n`, and finally all branches
//! are concatenated after the untouched input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ConvVars, Graph, Var};
use crate::ops::{ConvGeom, ConvParams};
use crate::tensor::{Real, Tensor4};

pub const DEFAULT_LEVELS: [usize; 4] = [1, 2, 3, 6];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SppConfig {
    pub levels: Vec<usize>,
    pub in_channels: usize,
    pub reduced_channels: usize,
}

impl SppConfig {
    /// Levels with the default reduction `max(1, in_channels / levels.len())`.
    pub fn new(levels: Vec<usize>, in_channels: usize) -> Self {
        let reduced_channels = (in_channels / levels.len().max(1)).max(1);
        SppConfig {
            levels,
            in_channels,
            reduced_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("pyramid levels must be non-empty".into()));
        }
        if self.levels[0] == 0 || self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "pyramid levels {:?} must be positive and strictly increasing",
                self.levels
            )));
        }
        if self.reduced_channels == 0 || self.in_channels == 0 {
            return Err(Error::Config("pyramid channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels + self.levels.len() * self.reduced_channels
    }

    /// The 1x1 reduction layer expected for each level.
    pub fn level_conv_shape(&self) -> (usize, usize) {
        (self.reduced_channels, self.in_channels)
    }
}

/// Window geometry of one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinGeometry {
    pub kernel: usize,
    pub stride: usize,
    /// Number of pooled bins per side; differs from `l` when `l` does not divide `n` evenly.
    pub out: usize,
}

pub fn spp_bin_geometry(n: usize, l: usize) -> BinGeometry {
    let kernel = n.div_ceil(l).max(1);
    BinGeometry {
        kernel,
        stride: kernel,
        out: n.div_ceil(kernel),
    }
}

/// Pyramid pooling on a graph. `level_convs` holds one 1x1 layer per level.
pub fn spp_forward_graph<T: Real>(g: &mut Graph<T>, feature: Var, config: &SppConfig, level_convs: &[ConvVars]) -> Result<Var> {
    let d = g.dims(feature);
    if d.h != d.w {
        return Err(Error::Shape(format!(
            "pyramid pooling needs a square feature map, got height {} and width {}",
            d.h, d.w
        )));
    }
    if d.c != config.in_channels {
        return Err(Error::Shape(format!(
            "pyramid pooling configured for {} channels, feature has {}",
            config.in_channels, d.c
        )));
    }
    if level_convs.len() != config.levels.len() {
        return Err(Error::Shape(format!(
            "{} level convolutions for {} levels",
            level_convs.len(),
            config.levels.len()
        )));
    }
    let n = d.h;
    let mut parts = Vec::with_capacity(config.levels.len() + 1);
    parts.push(feature);
    for (&l, conv) in config.levels.iter().zip(level_convs) {
        let geo = spp_bin_geometry(n, l);
        let pooled = g.avg_pool_clipped(feature, geo.kernel, geo.stride)?;
        let reduced = g.conv(pooled, conv)?;
        parts.push(g.bilinear_resize(reduced, n, n)?);
    }
    g.concat_channels(&parts)
}

/// Tensor-level convenience wrapper around [`spp_forward_graph`].
pub fn spp_forward<T: Real>(feature: &Tensor4<T>, config: &SppConfig, level_convs: &[ConvParams<T>]) -> Result<Tensor4<T>> {
    for c in level_convs {
        if c.kernel() != 1 || c.geom != ConvGeom::default() {
            return Err(Error::Argument("pyramid level convolutions must be 1x1, stride 1, unpadded".into()));
        }
    }
    let mut g = Graph::new();
    let x = g.input(feature.clone());
    let convs: Vec<ConvVars> = level_convs.iter().map(|c| g.register_conv(c)).collect();
    let out = spp_forward_graph(&mut g, x, config, &convs)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    fn convs<T: Real>(cfg: &SppConfig, fill: T) -> Vec<ConvParams<T>> {
        cfg.levels
            .iter()
            .map(|_| {
                let mut p = ConvParams::zeros(cfg.reduced_channels, cfg.in_channels, 1, ConvGeom::default());
                p.weight.data_mut().iter_mut().for_each(|w| *w = fill);
                p
            })
            .collect()
    }

    #[test]
    fn geometry_examples() {
        assert_eq!(spp_bin_geometry(24, 6), BinGeometry { kernel: 4, stride: 4, out: 6 });
        assert_eq!(spp_bin_geometry(10, 3), BinGeometry { kernel: 4, stride: 4, out: 3 });
        assert_eq!(spp_bin_geometry(7, 6), BinGeometry { kernel: 2, stride: 2, out: 4 });
        let kernels: Vec<usize> = DEFAULT_LEVELS.iter().map(|&l| spp_bin_geometry(24, l).kernel).collect();
        assert_eq!(kernels, vec![24, 12, 8, 4]);
    }

    #[test]
    fn out_equals_level_when_it_divides() {
        for n in 1..=48 {
            for l in 1..=n {
                if n % l == 0 {
                    assert_eq!(spp_bin_geometry(n, l).out, l, "n={n} l={l}");
                }
            }
        }
    }

    #[test]
    fn channel_accounting() {
        let cfg = SppConfig::new(DEFAULT_LEVELS.to_vec(), 8);
        assert_eq!(cfg.reduced_channels, 2);
        let f = Tensor4::<f32>::filled(Dims::new(1, 8, 24, 24), 0.1);
        let out = spp_forward(&f, &cfg, &convs(&cfg, 0.0)).unwrap();
        assert_eq!(out.dims(), Dims::new(1, 16, 24, 24));
    }

    #[test]
    fn zero_convs_pass_the_feature_through() {
        let cfg = SppConfig::new(vec![1, 2, 3], 4);
        let f = Tensor4::<f64>::from_fn(Dims::new(2, 4, 7, 7), |n, c, y, x| ((n + 2 * c + 3 * y + 5 * x) % 11) as f64 - 4.0);
        let out = spp_forward(&f, &cfg, &convs(&cfg, 0.0)).unwrap();
        for n in 0..2 {
            for c in 0..out.dims().c {
                for y in 0..7 {
                    for x in 0..7 {
                        let expect = if c < 4 { f.at(n, c, y, x) } else { 0.0 };
                        assert_eq!(out.at(n, c, y, x), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_feature_gives_constant_branches() {
        let cfg = SppConfig::new(DEFAULT_LEVELS.to_vec(), 8);
        let f = Tensor4::<f64>::filled(Dims::new(1, 8, 10, 10), 0.75);
        // weights summing to one per output channel, zero bias
        let out = spp_forward(&f, &cfg, &convs(&cfg, 1.0 / 8.0)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.75).abs() < 1e-14));
    }

    #[test]
    fn non_square_rejected() {
        let cfg = SppConfig::new(vec![1, 2], 2);
        let f = Tensor4::<f32>::zeros(Dims::new(1, 2, 6, 5));
        assert!(matches!(spp_forward(&f, &cfg, &convs(&cfg, 0.0)), Err(Error::Shape(_))));
    }

    #[test]
    fn config_validation() {
        assert!(SppConfig::new(vec![], 4).validate().is_err());
        assert!(SppConfig::new(vec![2, 1], 4).validate().is_err());
        assert!(SppConfig::new(vec![1, 1], 4).validate().is_err());
        assert!(SppConfig::new(vec![1, 2, 3, 6], 4).validate().is_ok());
        assert_eq!(SppConfig::new(vec![1, 2, 3, 6], 2).reduced_channels, 1);
    }
}
