//! Layer and network descriptions, plus shape inference over the layer stack.

mod json;

pub use json::{load_model, save_model, FORMAT_VERSION};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_THRESHOLD: f32 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResetMode {
    /// Subtract the threshold from the membrane after a spike.
    #[default]
    Subtract,
    /// Clear the membrane after a spike.
    Zero,
}

impl ResetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ResetMode::Subtract => "subtract",
            ResetMode::Zero => "zero",
        }
    }
}

/// 2-D convolution. Weights are `[out, in, kh, kw]`, bias is `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Conv2dSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if stride.contains(&0) {
            return Err(Error::shape("conv stride must be >= 1"));
        }
        let weights = Tensor::from_dims(&[out_channels, in_channels, kernel[0], kernel[1]], weights)?;
        let bias = Tensor::from_dims(&[out_channels], bias)?;
        Ok(Conv2dSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights,
            bias,
        })
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let dim = |n: usize, k: usize, s: usize, p: usize| (n + 2 * p).checked_sub(k).map(|span| span / s + 1);
        Some((
            dim(h, self.kernel[0], self.stride[0], self.padding[0])?,
            dim(w, self.kernel[1], self.stride[1], self.padding[1])?,
        ))
    }

    /// Weights of one output filter, `in * kh * kw` values.
    pub fn filter(&self, out: usize) -> &[f32] {
        let n = self.in_channels * self.kernel[0] * self.kernel[1];
        &self.weights.data()[out * n..(out + 1) * n]
    }
}

/// Fully connected layer. Weights are `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSpec {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LinearSpec {
    pub fn new(in_features: usize, out_features: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        Ok(LinearSpec {
            in_features,
            out_features,
            weights: Tensor::from_dims(&[out_features, in_features], weights)?,
            bias: Tensor::from_dims(&[out_features], bias)?,
        })
    }

    pub fn row(&self, out: usize) -> &[f32] {
        &self.weights.data()[out * self.in_features..(out + 1) * self.in_features]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2dSpec {
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
}

impl MaxPool2dSpec {
    pub fn new(kernel: [usize; 2], stride: [usize; 2]) -> Result<Self> {
        if kernel.contains(&0) || stride.contains(&0) {
            return Err(Error::shape("maxpool kernel and stride must be >= 1"));
        }
        Ok(MaxPool2dSpec { kernel, stride })
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let dim = |n: usize, k: usize, s: usize| n.checked_sub(k).map(|span| span / s + 1);
        Some((
            dim(h, self.kernel[0], self.stride[0])?,
            dim(w, self.kernel[1], self.stride[1])?,
        ))
    }
}

/// Leaky integrate-and-fire neuron parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifSpec {
    pub beta: f32,
    pub threshold: f32,
    pub reset: ResetMode,
}

impl LifSpec {
    pub fn new(beta: f32, threshold: f32, reset: ResetMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::shape(format!("lif beta {beta} outside [0, 1]")));
        }
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(Error::shape(format!(
                "lif threshold {threshold} must be finite and > 0"
            )));
        }
        Ok(LifSpec { beta, threshold, reset })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2dSpec),
    Lif(LifSpec),
    MaxPool2d(MaxPool2dSpec),
    Flatten,
    Linear(LinearSpec),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Lif(_) => "lif",
            Layer::MaxPool2d(_) => "maxpool2d",
            Layer::Flatten => "flatten",
            Layer::Linear(_) => "linear",
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(self, Layer::Conv2d(_) | Layer::Linear(_))
    }

    /// Number of stored parameters (weights plus bias).
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d(c) => c.weights.len() + c.bias.len(),
            Layer::Linear(l) => l.weights.len() + l.bias.len(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub format_version: u32,
    pub input_shape: Shape,
    pub num_steps: usize,
    pub layers: Vec<Layer>,
}

/// Input and output shape of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShapes {
    pub index: usize,
    pub kind: &'static str,
    pub input: Shape,
    pub output: Shape,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTrace {
    pub input: Shape,
    pub layers: Vec<LayerShapes>,
}

impl ShapeTrace {
    pub fn output(&self) -> &Shape {
        self.layers.last().map_or(&self.input, |l| &l.output)
    }
}

impl Network {
    pub fn new(input_shape: Shape, num_steps: usize, layers: Vec<Layer>) -> Self {
        Network {
            format_version: FORMAT_VERSION,
            input_shape,
            num_steps,
            layers,
        }
    }

    /// Runs shape inference over the layer stack and checks every structural
    /// invariant. Returns the per-layer shape trace.
    pub fn validate(&self) -> Result<ShapeTrace> {
        if self.input_shape.rank() != 3 {
            return Err(Error::shape(format!(
                "input_shape must be [C,H,W], got {}",
                self.input_shape
            )));
        }
        if self.num_steps == 0 {
            return Err(Error::Argument("num_steps must be >= 1".into()));
        }

        let mut trace = Vec::with_capacity(self.layers.len());
        let mut current = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let output = infer_layer(i, layer, &current)?;
            trace.push(LayerShapes {
                index: i,
                kind: layer.kind(),
                input: current,
                output: output.clone(),
            });
            current = output;
        }

        if let Some(last) = self.layers.last() {
            if !matches!(last, Layer::Lif(_)) {
                return Err(Error::validation(
                    self.layers.len() - 1,
                    format!("final layer must be lif (spike-count readout), found {}", last.kind()),
                ));
            }
        }

        Ok(ShapeTrace {
            input: self.input_shape.clone(),
            layers: trace,
        })
    }

    /// Number of output classes: neurons in the final LIF layer.
    pub fn num_classes(&self) -> Result<usize> {
        Ok(self.validate()?.output().numel())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }
}

fn infer_layer(i: usize, layer: &Layer, input: &Shape) -> Result<Shape> {
    let chw = |what: &str| -> Result<(usize, usize, usize)> {
        match input.dims() {
            &[c, h, w] => Ok((c, h, w)),
            _ => Err(Error::validation(
                i,
                format!("{what} expects [C,H,W] input from layer {}, got {input}", prev(i)),
            )),
        }
    };
    let shape = |dims: Vec<usize>| Shape::new(dims).map_err(|e| Error::validation(i, e.to_string()));

    match layer {
        Layer::Conv2d(conv) => {
            check_conv_params(i, conv)?;
            let (c, h, w) = chw("conv2d")?;
            if c != conv.in_channels {
                return Err(Error::validation(
                    i,
                    format!(
                        "conv2d in_channels {} does not match {c} channels produced by layer {}",
                        conv.in_channels,
                        prev(i)
                    ),
                ));
            }
            let (oh, ow) = conv.output_hw(h, w).ok_or_else(|| {
                Error::validation(
                    i,
                    format!("conv2d kernel {:?} larger than padded input {input}", conv.kernel),
                )
            })?;
            shape(vec![conv.out_channels, oh, ow])
        }
        Layer::MaxPool2d(pool) => {
            let (c, h, w) = chw("maxpool2d")?;
            let (oh, ow) = pool.output_hw(h, w).ok_or_else(|| {
                Error::validation(
                    i,
                    format!("maxpool2d kernel {:?} larger than input {input}", pool.kernel),
                )
            })?;
            shape(vec![c, oh, ow])
        }
        Layer::Flatten => shape(vec![input.numel()]),
        Layer::Linear(lin) => {
            check_linear_params(i, lin)?;
            match input.dims() {
                &[n] if n == lin.in_features => shape(vec![lin.out_features]),
                _ => Err(Error::validation(
                    i,
                    format!(
                        "linear in_features {} does not match shape {input} produced by layer {}",
                        lin.in_features,
                        prev(i)
                    ),
                )),
            }
        }
        Layer::Lif(_) => Ok(input.clone()),
    }
}

fn prev(i: usize) -> String {
    match i {
        0 => "input".to_string(),
        _ => (i - 1).to_string(),
    }
}

fn check_conv_params(i: usize, conv: &Conv2dSpec) -> Result<()> {
    let expect_w = [conv.out_channels, conv.in_channels, conv.kernel[0], conv.kernel[1]];
    if conv.weights.dims() != expect_w || conv.bias.dims() != [conv.out_channels] {
        return Err(Error::validation(
            i,
            "conv2d weight/bias shapes disagree with channel counts",
        ));
    }
    if conv.stride.contains(&0) {
        return Err(Error::validation(i, "conv2d stride must be >= 1"));
    }
    Ok(())
}

fn check_linear_params(i: usize, lin: &LinearSpec) -> Result<()> {
    if lin.weights.dims() != [lin.out_features, lin.in_features] || lin.bias.dims() != [lin.out_features] {
        return Err(Error::validation(
            i,
            "linear weight/bias shapes disagree with feature counts",
        ));
    }
    Ok(())
}
