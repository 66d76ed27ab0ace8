//! A single-use tape recording the forward pass so gradients can be pulled back.
//!
//! Nodes are appended in evaluation order, so walking the node list in reverse
//! is a valid topological order for backpropagation.

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeom, ConvParams};
use crate::tensor::{Dims, LabelMap, Real, Tensor4};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A convolution layer whose weight and bias live in a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
    pub geom: ConvGeom,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Relu {
        input: Var,
    },
    AvgPool {
        input: Var,
        kernel: usize,
        stride: usize,
    },
    Resize {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    WeightedSum {
        maps: Vec<Var>,
        logits: Var,
        weights: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        grad: Vec<T>,
    },
    Sum {
        inputs: Vec<Var>,
    },
    Dot {
        input: Var,
        weights: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor4<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor4<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives no gradient.
    pub fn input(&mut self, value: Tensor4<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor4<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> Dims {
        self.nodes[v.0].value.dims()
    }

    /// Gradient accumulated by the last [`Graph::backward`], if the node received one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// First element of a node's value; losses are 1-element tensors.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    /// Register a layer's weight and bias as trainable leaves.
    pub fn register_conv(&mut self, p: &ConvParams<T>) -> ConvVars {
        ConvVars {
            weight: self.param(p.weight.clone()),
            bias: self.param(Tensor4::vector(p.bias.clone())),
            geom: p.geom,
        }
    }

    pub fn conv(&mut self, input: Var, layer: &ConvVars) -> Result<Var> {
        self.conv2d(input, layer.weight, layer.bias, layer.geom)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, geom: ConvGeom) -> Result<Var> {
        let out = ops::conv2d_forward(self.value(input), self.value(weight), self.value(bias).data(), geom)?;
        let rg = self.requires(&[input, weight, bias]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let rg = self.requires(&[input]);
        self.push(out, Op::Relu { input }, rg)
    }

    pub fn avg_pool_clipped(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let out = ops::avg_pool_clipped(self.value(input), kernel, stride)?;
        let rg = self.requires(&[input]);
        Ok(self.push(out, Op::AvgPool { input, kernel, stride }, rg))
    }

    pub fn bilinear_resize(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = ops::bilinear_resize(self.value(input), out_h, out_w)?;
        let rg = self.requires(&[input]);
        Ok(self.push(out, Op::Resize { input }, rg))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor4<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat_channels(&refs)?;
        let rg = self.requires(inputs);
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    /// `sum_i softmax(logits)_i * maps_i`. `logits` holds one value per map.
    pub fn softmax_weighted_sum(&mut self, maps: &[Var], logits: Var) -> Result<Var> {
        let refs: Vec<&Tensor4<T>> = maps.iter().map(|&v| self.value(v)).collect();
        let (out, weights) = ops::softmax_weighted_sum(&refs, self.value(logits).data())?;
        let mut all = maps.to_vec();
        all.push(logits);
        let rg = self.requires(&all);
        Ok(self.push(
            out,
            Op::WeightedSum {
                maps: maps.to_vec(),
                logits,
                weights,
            },
            rg,
        ))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[LabelMap], ignore_label: Option<u8>) -> Result<Var> {
        let ce = ops::softmax_cross_entropy_full(self.value(logits), targets, ignore_label)?;
        let rg = self.requires(&[logits]);
        Ok(self.push(Tensor4::scalar(ce.loss), Op::CrossEntropy { logits, grad: ce.grad }, rg))
    }

    /// Sum of 1-element tensors.
    pub fn sum_scalars(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::Argument("sum of no terms".into()));
        }
        let mut total = T::zero();
        for &v in inputs {
            let d = self.dims(v);
            if d.len() != 1 {
                return Err(Error::Shape(format!("sum_scalars: term has dims {d}, expected one element")));
            }
            total += self.scalar(v);
        }
        let rg = self.requires(inputs);
        Ok(self.push(
            Tensor4::scalar(total),
            Op::Sum {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    /// `sum_k input[k] * weights[k]`, a scalar projection used to test non-scalar ops.
    pub fn dot(&mut self, input: Var, weights: &[T]) -> Result<Var> {
        let data = self.value(input).data();
        if data.len() != weights.len() {
            return Err(Error::Shape(format!(
                "dot: {} weights for {} elements",
                weights.len(),
                data.len()
            )));
        }
        let total = data.iter().zip(weights).map(|(&a, &b)| a * b).sum();
        let rg = self.requires(&[input]);
        Ok(self.push(
            Tensor4::scalar(total),
            Op::Dot {
                input,
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Backpropagate from a 1-element `loss`, leaving gradients on every node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let d = self.dims(loss);
        if d.len() != 1 {
            return Err(Error::Shape(format!("backward from non-scalar node with dims {d}")));
        }
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.set_grad(g)?;
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let cg = ops::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    *geom,
                    g,
                    [self.wants(*input), self.wants(*weight), self.wants(*bias)],
                );
                if let Some(gi) = cg.input {
                    self.accumulate(grads, *input, gi);
                }
                if let Some(gw) = cg.weight {
                    self.accumulate(grads, *weight, gw);
                }
                if let Some(gb) = cg.bias {
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let gi = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *input, gi);
            }
            Op::AvgPool { input, kernel, stride } => {
                let gi = ops::avg_pool_clipped_backward(self.dims(*input), *kernel, *stride, g);
                self.accumulate(grads, *input, gi);
            }
            Op::Resize { input } => {
                let out = self.nodes[i].value.dims();
                let gi = ops::bilinear_resize_backward(self.dims(*input), out.h, out.w, g);
                self.accumulate(grads, *input, gi);
            }
            Op::Concat { inputs } => {
                let channels: Vec<usize> = inputs.iter().map(|&v| self.dims(v).c).collect();
                let parts = ops::split_channels(g, self.nodes[i].value.dims(), &channels);
                for (&v, part) in inputs.iter().zip(parts) {
                    self.accumulate(grads, v, part);
                }
            }
            Op::WeightedSum { maps, logits, weights } => {
                for (&m, &w) in maps.iter().zip(weights) {
                    if self.wants(m) {
                        self.accumulate(grads, m, g.iter().map(|&gv| w * gv).collect());
                    }
                }
                if self.wants(*logits) {
                    let refs: Vec<&Tensor4<T>> = maps.iter().map(|&v| self.value(v)).collect();
                    let gl = ops::softmax_weighted_sum_logit_grad(&refs, weights, g);
                    self.accumulate(grads, *logits, gl);
                }
            }
            Op::CrossEntropy { logits, grad } => {
                let scale = g[0];
                self.accumulate(grads, *logits, grad.iter().map(|&v| v * scale).collect());
            }
            Op::Sum { inputs } => {
                for &v in inputs {
                    self.accumulate(grads, v, vec![g[0]]);
                }
            }
            Op::Dot { input, weights } => {
                let scale = g[0];
                self.accumulate(grads, *input, weights.iter().map(|&w| w * scale).collect());
            }
        }
    }
}
