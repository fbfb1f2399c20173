//! Model JSON reader and writer.
//!
//! The reader walks a `serde_json::Value` by hand rather than deriving
//! `Deserialize`, so that every schema error can name the layer index and the
//! offending field. Unknown fields are rejected.

use serde::Serialize;
use serde_json::{Map, Value};

use super::{Conv2dSpec, Layer, LifSpec, LinearSpec, MaxPool2dSpec, Network, ResetMode, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::tensor::Shape;

pub const FORMAT_VERSION: u32 = 1;

/// Parses and validates a model document.
pub fn load_model(text: &str) -> Result<Network> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::from_json(&e))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::schema(None, "document", "top level must be an object"))?;
    let mut fields = Fields::new(obj, None);

    let version = fields.usize("format_version")?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::schema(
            None,
            "format_version",
            format!("unsupported version {version}, this loader reads {FORMAT_VERSION}"),
        ));
    }
    let input_shape = fields.usize_array("input_shape")?;
    if input_shape.len() != 3 {
        return Err(Error::schema(None, "input_shape", "expected [C, H, W]"));
    }
    let input_shape = Shape::new(input_shape).map_err(|e| Error::schema(None, "input_shape", e.to_string()))?;
    let num_steps = fields.usize("num_steps")?;
    if num_steps == 0 {
        return Err(Error::schema(None, "num_steps", "must be >= 1"));
    }
    let raw_layers = fields
        .take("layers")?
        .as_array()
        .ok_or_else(|| Error::schema(None, "layers", "expected an array"))?;
    fields.finish()?;

    let layers = raw_layers
        .iter()
        .enumerate()
        .map(|(i, v)| parse_layer(i, v))
        .collect::<Result<Vec<_>>>()?;

    let net = Network {
        format_version: FORMAT_VERSION,
        input_shape,
        num_steps,
        layers,
    };
    net.validate()?;
    Ok(net)
}

fn parse_layer(index: usize, value: &Value) -> Result<Layer> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::schema(Some(index), "layer", "expected an object"))?;
    let mut f = Fields::new(obj, Some(index));
    let kind = f
        .take("type")?
        .as_str()
        .ok_or_else(|| Error::schema(Some(index), "type", "expected a string"))?;

    let layer = match kind {
        "conv2d" => {
            let in_channels = f.count("in_channels")?;
            let out_channels = f.count("out_channels")?;
            let kernel = f.pair("kernel", 1)?;
            let stride = f.pair("stride", 1)?;
            let padding = f.pair("padding", 0)?;
            let weights = f.floats("weights", out_channels * in_channels * kernel[0] * kernel[1])?;
            let bias = f.floats("bias", out_channels)?;
            Layer::Conv2d(
                Conv2dSpec::new(in_channels, out_channels, kernel, stride, padding, weights, bias)
                    .map_err(|e| Error::schema(Some(index), "weights", e.to_string()))?,
            )
        }
        "linear" => {
            let in_features = f.count("in_features")?;
            let out_features = f.count("out_features")?;
            let weights = f.floats("weights", out_features * in_features)?;
            let bias = f.floats("bias", out_features)?;
            Layer::Linear(
                LinearSpec::new(in_features, out_features, weights, bias)
                    .map_err(|e| Error::schema(Some(index), "weights", e.to_string()))?,
            )
        }
        "maxpool2d" => {
            let kernel = f.pair("kernel", 1)?;
            let stride = f.pair("stride", 1)?;
            Layer::MaxPool2d(MaxPool2dSpec { kernel, stride })
        }
        "flatten" => Layer::Flatten,
        "lif" => {
            let beta = f.float("beta")?;
            if !(0.0..=1.0).contains(&beta) {
                return Err(Error::schema(Some(index), "beta", format!("{beta} outside [0, 1]")));
            }
            let threshold = match f.take_opt("threshold") {
                Some(_) => f.float("threshold")?,
                None => DEFAULT_THRESHOLD,
            };
            if threshold <= 0.0 {
                return Err(Error::schema(Some(index), "threshold", "must be > 0"));
            }
            let reset = match f.take_opt("reset").map(|v| v.as_str()) {
                None => ResetMode::default(),
                Some(Some("subtract")) => ResetMode::Subtract,
                Some(Some("zero")) => ResetMode::Zero,
                Some(_) => return Err(Error::schema(Some(index), "reset", "expected \"subtract\" or \"zero\"")),
            };
            Layer::Lif(LifSpec { beta, threshold, reset })
        }
        other => {
            return Err(Error::schema(
                Some(index),
                "type",
                format!("unknown layer type \"{other}\""),
            ));
        }
    };
    f.finish()?;
    Ok(layer)
}

/// Tracks which keys of a JSON object have been consumed so leftovers can be
/// reported as unknown fields.
struct Fields<'a> {
    obj: &'a Map<String, Value>,
    layer: Option<usize>,
    seen: Vec<&'static str>,
}

impl<'a> Fields<'a> {
    fn new(obj: &'a Map<String, Value>, layer: Option<usize>) -> Self {
        Fields {
            obj,
            layer,
            seen: Vec::new(),
        }
    }

    fn err(&self, field: &str, msg: impl Into<String>) -> Error {
        Error::schema(self.layer, field, msg)
    }

    fn take_opt(&mut self, key: &'static str) -> Option<&'a Value> {
        if !self.seen.contains(&key) {
            self.seen.push(key);
        }
        self.obj.get(key)
    }

    fn take(&mut self, key: &'static str) -> Result<&'a Value> {
        self.take_opt(key).ok_or_else(|| self.err(key, "missing field"))
    }

    fn usize(&mut self, key: &'static str) -> Result<usize> {
        let v = self.take(key)?;
        v.as_u64()
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| self.err(key, format!("expected a non-negative integer, got {v}")))
    }

    /// A count that must be at least 1.
    fn count(&mut self, key: &'static str) -> Result<usize> {
        match self.usize(key)? {
            0 => Err(self.err(key, "must be >= 1")),
            n => Ok(n),
        }
    }

    fn usize_array(&mut self, key: &'static str) -> Result<Vec<usize>> {
        let v = self.take(key)?;
        let arr = v.as_array().ok_or_else(|| self.err(key, "expected an array"))?;
        arr.iter()
            .map(|x| {
                x.as_u64()
                    .and_then(|n| usize::try_from(n).ok())
                    .ok_or_else(|| self.err(key, format!("expected non-negative integers, got {x}")))
            })
            .collect()
    }

    fn pair(&mut self, key: &'static str, min: usize) -> Result<[usize; 2]> {
        let v = self.usize_array(key)?;
        match *v.as_slice() {
            [a, b] if a >= min && b >= min => Ok([a, b]),
            [_, _] => Err(self.err(key, format!("components must be >= {min}"))),
            _ => Err(self.err(key, format!("expected 2 components, got {}", v.len()))),
        }
    }

    fn float(&mut self, key: &'static str) -> Result<f32> {
        let v = self.take(key)?;
        to_f32(v).ok_or_else(|| self.err(key, format!("expected a finite 32-bit float, got {v}")))
    }

    fn floats(&mut self, key: &'static str, expected: usize) -> Result<Vec<f32>> {
        let v = self.take(key)?;
        let arr = v
            .as_array()
            .ok_or_else(|| self.err(key, "expected an array of numbers"))?;
        if arr.len() != expected {
            return Err(self.err(key, format!("expected {expected} values, got {}", arr.len())));
        }
        arr.iter()
            .enumerate()
            .map(|(i, x)| {
                to_f32(x).ok_or_else(|| self.err(key, format!("element {i} is not a finite 32-bit float: {x}")))
            })
            .collect()
    }

    fn finish(self) -> Result<()> {
        let mut unknown: Vec<&String> = self.obj.keys().filter(|k| !self.seen.contains(&k.as_str())).collect();
        unknown.sort();
        match unknown.first() {
            Some(k) => Err(Error::schema(self.layer, k.as_str(), "unknown field")),
            None => Ok(()),
        }
    }
}

/// JSON number to `f32`. The f64 parse is exact (`float_roundtrip`), and the
/// narrowing cast rounds to nearest, so shortest-form f32 strings come back
/// bit-identical.
fn to_f32(v: &Value) -> Option<f32> {
    let x = v.as_f64()? as f32;
    x.is_finite().then_some(x)
}

#[derive(Serialize)]
struct DocOut<'a> {
    format_version: u32,
    input_shape: &'a [usize],
    num_steps: usize,
    layers: Vec<LayerOut<'a>>,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LayerOut<'a> {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
        weights: &'a [f32],
        bias: &'a [f32],
    },
    Lif {
        beta: f32,
        threshold: f32,
        reset: &'static str,
    },
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        kernel: [usize; 2],
        stride: [usize; 2],
    },
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
        weights: &'a [f32],
        bias: &'a [f32],
    },
}

/// Serializes a network to the model JSON schema. Floats are written in
/// shortest round-trip form.
pub fn save_model(net: &Network) -> String {
    let layers = net
        .layers
        .iter()
        .map(|layer| match layer {
            Layer::Conv2d(c) => LayerOut::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
                weights: c.weights.data(),
                bias: c.bias.data(),
            },
            Layer::Lif(l) => LayerOut::Lif {
                beta: l.beta,
                threshold: l.threshold,
                reset: l.reset.as_str(),
            },
            Layer::MaxPool2d(p) => LayerOut::MaxPool2d {
                kernel: p.kernel,
                stride: p.stride,
            },
            Layer::Flatten => LayerOut::Flatten,
            Layer::Linear(l) => LayerOut::Linear {
                in_features: l.in_features,
                out_features: l.out_features,
                weights: l.weights.data(),
                bias: l.bias.data(),
            },
        })
        .collect();
    let doc = DocOut {
        format_version: net.format_version,
        input_shape: net.input_shape.dims(),
        num_steps: net.num_steps,
        layers,
    };
    // Serialization of plain structs and finite floats cannot fail.
    serde_json::to_string(&doc).expect("model serialization")
}
