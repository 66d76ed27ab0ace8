//! The standard battery of gradient checks: every differentiable op plus the
//! pyramid layer, the deep-supervision loss and a tiny end-to-end network.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, GradReport};
use crate::attention::{deep_supervision_loss_graph, fuse_graph, ScaleVars};
use crate::graph::{ConvVars, Graph, Var};
use crate::model::{forward_graph, ApnetConfig, ApnetParams, ModelVars, ParamKind};
use crate::ops::ConvGeom;
use crate::spp::{spp_forward_graph, SppConfig};
use crate::tensor::{Dims, LabelMap, Tensor4, IGNORE_LABEL};
use crate::Result;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, dims: Dims) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so the ReLU kink is never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, dims: Dims) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_, _, _, _| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn projection(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn labels(rng: &mut ChaCha8Rng, n: usize, side: usize, classes: u8, ignore_some: bool) -> Vec<LabelMap> {
    (0..n)
        .map(|_| {
            LabelMap::from_fn(side, side, |_, _| {
                if ignore_some && rng.random_bool(0.1) {
                    IGNORE_LABEL
                } else {
                    rng.random_range(0..classes)
                }
            })
        })
        .collect()
}

fn project(g: &mut Graph<f64>, v: Var, w: &[f64]) -> Result<Var> {
    g.dot(v, w)
}

/// Configuration of the end-to-end check: 16x16 input, widths [2, 2, 2], levels [1, 2], two scales.
pub fn tiny_config() -> ApnetConfig {
    ApnetConfig {
        input_size: 16,
        input_channels: 1,
        num_classes: 3,
        scales: vec![1.0, 0.5],
        backbone_channels: vec![2, 2, 2],
        dilation_rate: 2,
        spp: Some(SppConfig::new(vec![1, 2], 2)),
        attention: true,
        deep_supervision: true,
    }
}

fn conv_check(name: &str, rng: &mut ChaCha8Rng, input: Dims, out_c: usize, k: usize, geom: ConvGeom, tol: f64) -> GradReport {
    let x = random(rng, input);
    let w = random(rng, Dims::new(out_c, input.c, k, k));
    let b = random(rng, Dims::new(1, out_c, 1, 1));
    let oh = geom.output_len(input.h, k).unwrap_or(1);
    let ow = geom.output_len(input.w, k).unwrap_or(1);
    let proj = projection(rng, input.n * out_c * oh * ow);
    grad_check(name, &[x, w, b], tol, move |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], geom)?;
        project(g, y, &proj)
    })
}

/// Run every check once for one seed.
pub fn run_seed(seed: u64, tol: f64) -> Vec<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    out.push(conv_check("conv2d", &mut rng, Dims::new(1, 2, 5, 5), 3, 3, ConvGeom::new(1, 1, 1), tol));
    out.push(conv_check("conv2d/stride2", &mut rng, Dims::new(2, 2, 7, 6), 2, 3, ConvGeom::new(2, 1, 1), tol));
    out.push(conv_check("conv2d/dilated", &mut rng, Dims::new(1, 2, 8, 8), 2, 3, ConvGeom::new(1, 2, 2), tol));
    out.push(conv_check("conv2d/1x1", &mut rng, Dims::new(1, 3, 4, 4), 2, 1, ConvGeom::default(), tol));

    {
        let x = away_from_zero(&mut rng, Dims::new(1, 2, 4, 4));
        let proj = projection(&mut rng, 32);
        out.push(grad_check("relu", &[x], tol, move |g, v| {
            let y = g.relu(v[0]);
            project(g, y, &proj)
        }));
    }

    for &(name, dims, k, s) in &[
        ("avg_pool_clipped", Dims::new(1, 1, 10, 10), 4, 4),
        ("avg_pool_clipped/overlap", Dims::new(1, 2, 7, 7), 3, 2),
    ] {
        let x = random(&mut rng, dims);
        let od = crate::ops::pooled_dims(dims, s);
        let proj = projection(&mut rng, od.len());
        out.push(grad_check(name, &[x], tol, move |g, v| {
            let y = g.avg_pool_clipped(v[0], k, s)?;
            project(g, y, &proj)
        }));
    }

    for &(name, dims, oh, ow) in &[
        ("bilinear_resize", Dims::new(1, 1, 3, 3), 7, 7),
        ("bilinear_resize/down", Dims::new(1, 2, 7, 5), 3, 4),
    ] {
        let x = random(&mut rng, dims);
        let proj = projection(&mut rng, dims.n * dims.c * oh * ow);
        out.push(grad_check(name, &[x], tol, move |g, v| {
            let y = g.bilinear_resize(v[0], oh, ow)?;
            project(g, y, &proj)
        }));
    }

    {
        let a = random(&mut rng, Dims::new(2, 2, 3, 3));
        let b = random(&mut rng, Dims::new(2, 1, 3, 3));
        let proj = projection(&mut rng, 2 * 3 * 9);
        out.push(grad_check("concat_channels", &[a, b], tol, move |g, v| {
            let y = g.concat_channels(v)?;
            project(g, y, &proj)
        }));
    }

    {
        let x = random(&mut rng, Dims::new(2, 4, 3, 3)).map(|v| 3.0 * v);
        let t = labels(&mut rng, 2, 3, 4, true);
        out.push(grad_check("softmax_cross_entropy", &[x], tol, move |g, v| {
            g.softmax_cross_entropy(v[0], &t, Some(IGNORE_LABEL))
        }));
    }

    {
        let maps = vec![
            random(&mut rng, Dims::new(1, 2, 6, 6)),
            random(&mut rng, Dims::new(1, 2, 5, 5)),
            random(&mut rng, Dims::new(1, 2, 3, 3)),
        ];
        let mut leaves = maps;
        leaves.push(random(&mut rng, Dims::new(1, 3, 1, 1)));
        let proj = projection(&mut rng, 2 * 36);
        out.push(grad_check("fuse", &leaves, tol, move |g, v| {
            let outputs = ScaleVars {
                maps: v[..3].to_vec(),
                scales: vec![1.0, 0.75, 0.5],
            };
            let f = fuse_graph(g, &outputs, v[3])?;
            project(g, f, &proj)
        }));
    }

    {
        let leaves = vec![
            random(&mut rng, Dims::new(1, 3, 4, 4)),
            random(&mut rng, Dims::new(1, 3, 3, 3)),
            random(&mut rng, Dims::new(1, 3, 2, 2)),
            random(&mut rng, Dims::new(1, 3, 1, 1)),
        ];
        let gt = labels(&mut rng, 1, 16, 3, true);
        out.push(grad_check("deep_supervision_loss", &leaves, tol, move |g, v| {
            let outputs = ScaleVars {
                maps: v[..3].to_vec(),
                scales: vec![1.0, 0.75, 0.5],
            };
            let fused = fuse_graph(g, &outputs, v[3])?;
            deep_supervision_loss_graph(g, &outputs, fused, &gt, Some(IGNORE_LABEL), true)
        }));
    }

    {
        let cfg = SppConfig::new(vec![1, 2, 3], 2);
        let mut leaves = vec![random(&mut rng, Dims::new(1, 2, 6, 6))];
        for _ in &cfg.levels {
            leaves.push(random(&mut rng, Dims::new(cfg.reduced_channels, 2, 1, 1)));
            leaves.push(random(&mut rng, Dims::new(1, cfg.reduced_channels, 1, 1)));
        }
        let proj = projection(&mut rng, cfg.out_channels() * 36);
        out.push(grad_check("spp", &leaves, tol, move |g, v| {
            let convs: Vec<ConvVars> = v[1..]
                .chunks(2)
                .map(|c| ConvVars {
                    weight: c[0],
                    bias: c[1],
                    geom: ConvGeom::default(),
                })
                .collect();
            let y = spp_forward_graph(g, v[0], &cfg, &convs)?;
            project(g, y, &proj)
        }));
    }

    out.push(model_check(&mut rng, seed, tol));
    out
}

fn model_check(rng: &mut ChaCha8Rng, seed: u64, tol: f64) -> GradReport {
    let config = tiny_config();
    let params = match ApnetParams::<f64>::init(&config, seed) {
        Ok(p) => p,
        Err(e) => {
            return GradReport {
                name: "apnet".into(),
                max_rel_err: f64::INFINITY,
                worst: None,
                elements: 0,
                tolerance: tol,
                passed: false,
                failure: Some(e.to_string()),
            }
        }
    };
    // Zero biases over zero padding sit exactly on the ReLU kink, and a dead
    // backbone makes every scale identical, so biases get small positive
    // values. Zero logits would hide the attention gradient.
    let layout = config.param_layout();
    let mut leaves = params.to_flat();
    for (leaf, spec) in leaves.iter_mut().zip(&layout) {
        let range = match spec.kind {
            ParamKind::Weight => continue,
            ParamKind::Bias => 0.05..0.3,
            ParamKind::AttentionLogits => -0.5..0.5,
        };
        for v in leaf.data_mut() {
            *v = rng.random_range(range.clone());
        }
    }
    let image = Tensor4::from_fn(Dims::new(1, 1, 16, 16), |_, _, _, _| rng.random_range(0.0..1.0));
    let gt = labels(rng, 1, 16, 3, true);
    grad_check("apnet", &leaves, tol, move |g, v| {
        let vars = ModelVars::bind(&config, v)?;
        let x = g.input(image.clone());
        let fv = forward_graph(g, x, &vars, &config)?;
        deep_supervision_loss_graph(g, &fv.outputs, fv.fused, &gt, Some(IGNORE_LABEL), true)
    })
}

/// Every check over every seed.
pub fn run(seeds: impl IntoIterator<Item = u64>, tol: f64) -> Vec<GradReport> {
    seeds.into_iter().flat_map(|s| run_seed(s, tol)).collect()
}

/// Collapse per-seed reports into one line per check: worst error, pass only if every seed passed.
pub fn summarize(reports: &[GradReport]) -> Vec<(GradReport, usize)> {
    let mut by_name: BTreeMap<&str, (GradReport, usize)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in reports {
        match by_name.get_mut(r.name.as_str()) {
            Some((agg, seeds)) => {
                *seeds += 1;
                agg.elements += r.elements;
                if r.max_rel_err > agg.max_rel_err {
                    agg.max_rel_err = r.max_rel_err;
                    agg.worst = r.worst;
                }
                agg.passed &= r.passed;
                if agg.failure.is_none() {
                    agg.failure.clone_from(&r.failure);
                }
            }
            None => {
                order.push(r.name.as_str());
                by_name.insert(r.name.as_str(), (r.clone(), 1));
            }
        }
    }
    order.into_iter().map(|n| by_name[n].clone()).collect()
}
