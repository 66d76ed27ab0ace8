//! 2-D cross-correlation with stride, zero padding and dilation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor4};

/// Stride, dilation and zero padding of a square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Default for ConvGeom {
    fn default() -> Self {
        ConvGeom {
            stride: 1,
            dilation: 1,
            padding: 0,
        }
    }
}

impl ConvGeom {
    pub fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        ConvGeom {
            stride,
            dilation,
            padding,
        }
    }

    /// `floor((len + 2p - d(k-1) - 1) / s) + 1`, or an error when not strictly positive.
    pub fn output_len(&self, len: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 || self.dilation == 0 || kernel == 0 {
            return Err(Error::Argument(format!(
                "stride {}, dilation {} and kernel {} must be positive",
                self.stride, self.dilation, kernel
            )));
        }
        let span = self.dilation * (kernel - 1) + 1;
        let padded = len + 2 * self.padding;
        if padded < span {
            return Err(Error::Shape(format!(
                "input extent {len} with padding {} is smaller than dilated kernel span {span}",
                self.padding
            )));
        }
        Ok((padded - span) / self.stride + 1)
    }
}

/// Weights (out_c, in_c, k, k), bias (out_c) and geometry of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
    pub geom: ConvGeom,
}

impl<T: Real> ConvParams<T> {
    pub fn new(weight: Tensor4<T>, bias: Vec<T>, geom: ConvGeom) -> Result<Self> {
        let wd = weight.dims();
        if wd.h != wd.w || wd.h % 2 == 0 {
            return Err(Error::Shape(format!(
                "kernel must be square with odd side, got {}x{}",
                wd.h, wd.w
            )));
        }
        if bias.len() != wd.n {
            return Err(Error::Shape(format!(
                "bias length {} does not match out_channels {}",
                bias.len(),
                wd.n
            )));
        }
        Ok(ConvParams { weight, bias, geom })
    }

    pub fn zeros(out_c: usize, in_c: usize, kernel: usize, geom: ConvGeom) -> Self {
        ConvParams {
            weight: Tensor4::zeros(Dims::new(out_c, in_c, kernel, kernel)),
            bias: vec![T::zero(); out_c],
            geom,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims().c
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims().h
    }
}

/// Output dims of a convolution, validating every axis.
pub fn conv2d_output_dims(input: Dims, weight: Dims, bias_len: usize, geom: ConvGeom) -> Result<Dims> {
    if weight.c != input.c {
        return Err(Error::Shape(format!(
            "conv2d: input channels {} do not match weight in_channels {}",
            input.c, weight.c
        )));
    }
    if weight.h != weight.w || weight.h % 2 == 0 {
        return Err(Error::Shape(format!(
            "conv2d: kernel height/width {}x{} must be equal and odd",
            weight.h, weight.w
        )));
    }
    if bias_len != weight.n {
        return Err(Error::Shape(format!(
            "conv2d: bias length {} does not match weight out_channels {}",
            bias_len, weight.n
        )));
    }
    let oh = geom.output_len(input.h, weight.h)?;
    let ow = geom.output_len(input.w, weight.w)?;
    Ok(Dims::new(input.n, weight.n, oh, ow))
}

/// Range of output indices `o` for which `o * stride + offset` lands in `[0, in_len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) + s - 1) / s
    };
    let limit = in_len as isize - offset;
    let hi = if limit <= 0 { 0 } else { (limit + s - 1) / s };
    let lo = (lo as usize).min(out_len);
    let hi = (hi as usize).min(out_len);
    (lo, hi.max(lo))
}

pub(crate) fn conv2d_forward<T: Real>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: &[T],
    geom: ConvGeom,
) -> Result<Tensor4<T>> {
    let id = input.dims();
    let wd = weight.dims();
    let od = conv2d_output_dims(id, wd, bias.len(), geom)?;
    let k = wd.h;
    let (s, dil, pad) = (geom.stride, geom.dilation as isize, geom.padding as isize);
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); od.len()];

    for b in 0..id.n {
        for co in 0..od.c {
            let o_base = od.index(b, co, 0, 0);
            let oplane = &mut out[o_base..o_base + od.plane()];
            oplane.iter_mut().for_each(|v| *v = bias[co]);
            for ci in 0..id.c {
                let i_base = id.index(b, ci, 0, 0);
                let iplane = &x[i_base..i_base + id.plane()];
                for ky in 0..k {
                    let oy_off = ky as isize * dil - pad;
                    let (y_lo, y_hi) = valid_range(od.h, id.h, s, oy_off);
                    for kx in 0..k {
                        let wv = wt[wd.index(co, ci, ky, kx)];
                        let ox_off = kx as isize * dil - pad;
                        let (x_lo, x_hi) = valid_range(od.w, id.w, s, ox_off);
                        for oy in y_lo..y_hi {
                            let iy = (oy * s) as isize + oy_off;
                            let irow = &iplane[iy as usize * id.w..(iy as usize + 1) * id.w];
                            let orow = &mut oplane[oy * od.w..(oy + 1) * od.w];
                            for ox in x_lo..x_hi {
                                let ix = ((ox * s) as isize + ox_off) as usize;
                                orow[ox] += wv * irow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor4::from_vec(od, out)
}

/// Gradients of a convolution; each output is computed only when requested.
pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    geom: ConvGeom,
    grad_out: &[T],
    want: [bool; 3],
) -> ConvGrads<T> {
    let id = input.dims();
    let wd = weight.dims();
    let k = wd.h;
    let oh = geom.output_len(id.h, k).expect("validated in forward");
    let ow = geom.output_len(id.w, k).expect("validated in forward");
    let od = Dims::new(id.n, wd.n, oh, ow);
    let (s, dil, pad) = (geom.stride, geom.dilation as isize, geom.padding as isize);
    let x = input.data();
    let wt = weight.data();

    let mut gi = want[0].then(|| vec![T::zero(); id.len()]);
    let mut gw = want[1].then(|| vec![T::zero(); wd.len()]);
    let gb = want[2].then(|| {
        let mut gb = vec![T::zero(); wd.n];
        for b in 0..od.n {
            for (co, acc) in gb.iter_mut().enumerate() {
                let base = od.index(b, co, 0, 0);
                for &g in &grad_out[base..base + od.plane()] {
                    *acc += g;
                }
            }
        }
        gb
    });

    if gi.is_some() || gw.is_some() {
        for b in 0..id.n {
            for co in 0..od.c {
                let o_base = od.index(b, co, 0, 0);
                let gplane = &grad_out[o_base..o_base + od.plane()];
                for ci in 0..id.c {
                    let i_base = id.index(b, ci, 0, 0);
                    for ky in 0..k {
                        let oy_off = ky as isize * dil - pad;
                        let (y_lo, y_hi) = valid_range(od.h, id.h, s, oy_off);
                        for kx in 0..k {
                            let widx = wd.index(co, ci, ky, kx);
                            let wv = wt[widx];
                            let ox_off = kx as isize * dil - pad;
                            let (x_lo, x_hi) = valid_range(od.w, id.w, s, ox_off);
                            let mut wacc = T::zero();
                            for oy in y_lo..y_hi {
                                let iy = ((oy * s) as isize + oy_off) as usize;
                                let row = i_base + iy * id.w;
                                let grow = &gplane[oy * od.w..(oy + 1) * od.w];
                                for ox in x_lo..x_hi {
                                    let ix = ((ox * s) as isize + ox_off) as usize;
                                    let g = grow[ox];
                                    if let Some(gi) = gi.as_mut() {
                                        gi[row + ix] += wv * g;
                                    }
                                    wacc += x[row + ix] * g;
                                }
                            }
                            if let Some(gw) = gw.as_mut() {
                                gw[widx] += wacc;
                            }
                        }
                    }
                }
            }
        }
    }

    ConvGrads {
        input: gi,
        weight: gw,
        bias: gb,
    }
}

/// Forward convolution of a tensor with a parameter record.
pub fn conv2d<T: Real>(input: &Tensor4<T>, params: &ConvParams<T>) -> Result<Tensor4<T>> {
    conv2d_forward(input, &params.weight, &params.bias, params.geom)
}
