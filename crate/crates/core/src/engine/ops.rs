//! Per-layer forward kernels.
//!
//! The `*_into` functions work on flat slices and write into caller-owned
//! buffers; the engine calls them once per layer per step without allocating.
//! The `Tensor` wrappers below them check shapes and allocate their output.
//!
//! Summation order is fixed: each output element starts from its bias and adds
//! terms in (input channel, kernel row, kernel column) order. Pruning relies on
//! this: dropping terms whose input is exactly zero leaves the sum bit-identical.

use crate::error::{Error, Result};
use crate::model::{Conv2dSpec, LifSpec, LinearSpec, MaxPool2dSpec, ResetMode};
use crate::tensor::{Shape, Tensor};

/// `input` is `[C, H, W]`; `out` must hold `O * oh * ow` values.
pub(crate) fn conv2d_into(
    spec: &Conv2dSpec,
    in_hw: (usize, usize),
    input: &[f32],
    out_hw: (usize, usize),
    out: &mut [f32],
) {
    let (h, w) = in_hw;
    let (oh, ow) = out_hw;
    let [kh, kw] = spec.kernel;
    let [sh, sw] = spec.stride;
    let [ph, pw] = spec.padding;
    let plane = oh * ow;
    let weights = spec.weights.data();
    let bias = spec.bias.data();

    for o in 0..spec.out_channels {
        let out_plane = &mut out[o * plane..(o + 1) * plane];
        out_plane.fill(bias[o]);
        let filter = &weights[o * spec.in_channels * kh * kw..(o + 1) * spec.in_channels * kh * kw];
        for c in 0..spec.in_channels {
            let in_plane = &input[c * h * w..(c + 1) * h * w];
            for i in 0..kh {
                // output rows whose receptive row y*sh + i - ph lands inside [0, h)
                let (y_lo, y_hi) = valid_range(i, ph, sh, h, oh);
                for j in 0..kw {
                    let wt = filter[(c * kh + i) * kw + j];
                    let (x_lo, x_hi) = valid_range(j, pw, sw, w, ow);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let iy = y * sh + i - ph;
                        let in_row = &in_plane[iy * w..(iy + 1) * w];
                        let out_row = &mut out_plane[y * ow..(y + 1) * ow];
                        for x in x_lo..x_hi {
                            out_row[x] += wt * in_row[x * sw + j - pw];
                        }
                    }
                }
            }
        }
    }
}

/// Range of output positions `p` with `0 <= p*stride + k - pad < len`.
fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // p*stride + k - pad <= len - 1  <=>  p <= (len - 1 + pad - k) / stride
    let hi = if len + pad > k {
        ((len - 1 + pad - k) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

pub(crate) fn linear_into(spec: &LinearSpec, input: &[f32], out: &mut [f32]) {
    let n = spec.in_features;
    let weights = spec.weights.data();
    for (o, (dst, &b)) in out.iter_mut().zip(spec.bias.data()).enumerate() {
        let row = &weights[o * n..(o + 1) * n];
        let mut acc = b;
        for (&wt, &x) in row.iter().zip(input) {
            acc += wt * x;
        }
        *dst = acc;
    }
}

pub(crate) fn maxpool_into(
    spec: &MaxPool2dSpec,
    c: usize,
    in_hw: (usize, usize),
    input: &[f32],
    out_hw: (usize, usize),
    out: &mut [f32],
) {
    let (h, w) = in_hw;
    let (oh, ow) = out_hw;
    let [kh, kw] = spec.kernel;
    let [sh, sw] = spec.stride;
    for ch in 0..c {
        let in_plane = &input[ch * h * w..(ch + 1) * h * w];
        let out_plane = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for i in 0..kh {
                    let row = &in_plane[(y * sh + i) * w..];
                    for j in 0..kw {
                        m = m.max(row[x * sw + j]);
                    }
                }
                out_plane[y * ow + x] = m;
            }
        }
    }
}

/// One leaky integrate-and-fire update over a flat neuron array.
///
/// On entry `spikes` holds the previous step's output; on exit the current
/// one. Returns the number of neurons that fired.
pub(crate) fn lif_into(spec: &LifSpec, input: &[f32], membrane: &mut [f32], spikes: &mut [f32]) -> u64 {
    let beta = spec.beta;
    let theta = spec.threshold;
    let mut fired = 0u64;
    match spec.reset {
        ResetMode::Subtract => {
            for ((u, s), &i) in membrane.iter_mut().zip(spikes.iter_mut()).zip(input) {
                *u = beta * *u + i - *s * theta;
                *s = if *u > theta { 1.0 } else { 0.0 };
                fired += *s as u64;
            }
        }
        ResetMode::Zero => {
            for ((u, s), &i) in membrane.iter_mut().zip(spikes.iter_mut()).zip(input) {
                let kept = if *s > 0.0 { 0.0 } else { *u };
                *u = beta * kept + i;
                *s = if *u > theta { 1.0 } else { 0.0 };
                fired += *s as u64;
            }
        }
    }
    fired
}

fn chw(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.dims() {
        &[c, h, w] => Ok((c, h, w)),
        d => Err(Error::shape(format!("{what} expects [C,H,W] input, got {d:?}"))),
    }
}

pub fn conv2d_forward(spec: &Conv2dSpec, input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(input, "conv2d")?;
    if c != spec.in_channels {
        return Err(Error::shape(format!(
            "conv2d expects {} input channels, got {c}",
            spec.in_channels
        )));
    }
    let (oh, ow) = spec
        .output_hw(h, w)
        .ok_or_else(|| Error::shape(format!("conv2d kernel {:?} larger than padded input", spec.kernel)))?;
    let mut out = Tensor::zeros(Shape::new(vec![spec.out_channels, oh, ow])?);
    conv2d_into(spec, (h, w), input.data(), (oh, ow), out.data_mut());
    Ok(out)
}

pub fn linear_forward(spec: &LinearSpec, input: &Tensor) -> Result<Tensor> {
    if input.dims() != [spec.in_features] {
        return Err(Error::shape(format!(
            "linear expects [{}] input, got {}",
            spec.in_features,
            input.shape()
        )));
    }
    let mut out = Tensor::zeros(Shape::new(vec![spec.out_features])?);
    linear_into(spec, input.data(), out.data_mut());
    Ok(out)
}

pub fn maxpool_forward(spec: &MaxPool2dSpec, input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(input, "maxpool2d")?;
    let (oh, ow) = spec
        .output_hw(h, w)
        .ok_or_else(|| Error::shape(format!("maxpool2d kernel {:?} larger than input {h}x{w}", spec.kernel)))?;
    let mut out = Tensor::zeros(Shape::new(vec![c, oh, ow])?);
    maxpool_into(spec, c, (h, w), input.data(), (oh, ow), out.data_mut());
    Ok(out)
}

/// Membrane potential and previous spikes of one LIF layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LifState {
    state: Option<(Tensor, Tensor)>,
}

impl LifState {
    /// Uninitialized state; the first `lif_step` sizes it from its input.
    pub fn new() -> Self {
        Self::default()
    }

    pub fn membrane(&self) -> Option<&Tensor> {
        self.state.as_ref().map(|(u, _)| u)
    }

    pub fn last_spikes(&self) -> Option<&Tensor> {
        self.state.as_ref().map(|(_, s)| s)
    }
}

/// Advances `state` by one step and returns the emitted spikes.
pub fn lif_step(spec: &LifSpec, state: &mut LifState, input_current: &Tensor) -> Result<Tensor> {
    let (membrane, spikes) = state.state.get_or_insert_with(|| {
        (
            Tensor::zeros(input_current.shape().clone()),
            Tensor::zeros(input_current.shape().clone()),
        )
    });
    if membrane.shape() != input_current.shape() {
        return Err(Error::shape(format!(
            "lif state is {}, input is {}",
            membrane.shape(),
            input_current.shape()
        )));
    }
    lif_into(spec, input_current.data(), membrane.data_mut(), spikes.data_mut());
    Ok(spikes.clone())
}
