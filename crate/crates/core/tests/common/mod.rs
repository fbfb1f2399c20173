//! Shared helpers for the integration tests: seeded random network
//! generators and a deliberately naive reference forward pass.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snnrt_core::model::{Conv2dSpec, LifSpec, LinearSpec, MaxPool2dSpec, ResetMode};
use snnrt_core::{FrameSequence, Layer, Network, Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_lif(rng: &mut ChaCha8Rng) -> LifSpec {
    let reset = if rng.gen_bool(0.5) {
        ResetMode::Subtract
    } else {
        ResetMode::Zero
    };
    LifSpec::new(rng.gen_range(0.2..=1.0), rng.gen_range(0.5..1.5), reset).unwrap()
}

#[derive(Clone, Copy)]
enum Role {
    Active,
    Silent,
    Random,
}

fn role(rng: &mut ChaCha8Rng, index: usize) -> Role {
    if index == 0 {
        return Role::Active;
    }
    match rng.gen_range(0..3) {
        0 => Role::Silent,
        1 => Role::Active,
        _ => Role::Random,
    }
}

/// Weights and bias for one output unit with `fan_in` inputs. Assumes
/// non-negative inputs: silent units can never fire, active units always
/// receive a drive above threshold.
fn unit(rng: &mut ChaCha8Rng, role: Role, fan_in: usize, threshold: f32) -> (Vec<f32>, f32) {
    match role {
        Role::Silent => (
            (0..fan_in).map(|_| -rng.gen_range(0.0..0.5f32)).collect(),
            -rng.gen_range(0.1..1.0f32),
        ),
        Role::Active => (
            (0..fan_in).map(|_| rng.gen_range(0.0..0.3f32)).collect(),
            threshold + 0.5,
        ),
        Role::Random => (
            (0..fan_in).map(|_| rng.gen_range(-0.5..0.8f32)).collect(),
            rng.gen_range(-0.3..0.3f32),
        ),
    }
}

fn mixed_units(rng: &mut ChaCha8Rng, count: usize, fan_in: usize, threshold: f32) -> (Vec<f32>, Vec<f32>) {
    let (mut weights, mut bias) = (Vec::new(), Vec::new());
    for o in 0..count {
        let r = role(rng, o);
        let (wv, b) = unit(rng, r, fan_in, threshold);
        weights.extend(wv);
        bias.push(b);
    }
    (weights, bias)
}

/// A conv SNN with 1 to 3 conv blocks and every dimension at most 16.
///
/// Every hidden weighted layer has an always-active unit at index 0, so
/// threshold-0 plans never empty a layer; the other units are a mix of
/// provably silent, always-active and random ones.
pub fn random_conv_snn(rng: &mut ChaCha8Rng) -> Network {
    let c0 = rng.gen_range(1..=3);
    let (h0, w0) = (rng.gen_range(6..=16), rng.gen_range(6..=16));
    let (mut c, mut h, mut w) = (c0, h0, w0);
    let mut layers = Vec::new();

    for _ in 0..rng.gen_range(1..=3) {
        let k = rng.gen_range(1..=3usize).min(h).min(w);
        let pad = rng.gen_range(0..=1usize);
        let out = rng.gen_range(2..=8);
        let lif = random_lif(rng);
        let (weights, bias) = mixed_units(rng, out, c * k * k, lif.threshold);
        let conv = Conv2dSpec::new(c, out, [k, k], [1, 1], [pad, pad], weights, bias).unwrap();
        let (oh, ow) = conv.output_hw(h, w).unwrap();
        layers.push(Layer::Conv2d(conv));
        layers.push(Layer::Lif(lif));
        (c, h, w) = (out, oh, ow);
        if h >= 4 && w >= 4 && rng.gen_bool(0.6) {
            layers.push(Layer::MaxPool2d(MaxPool2dSpec::new([2, 2], [2, 2]).unwrap()));
            (h, w) = (h / 2, w / 2);
        }
    }

    layers.push(Layer::Flatten);
    let mut features = c * h * w;
    if rng.gen_bool(0.5) {
        let hidden = rng.gen_range(2..=16);
        let lif = random_lif(rng);
        let (weights, bias) = mixed_units(rng, hidden, features, lif.threshold);
        layers.push(Layer::Linear(LinearSpec::new(features, hidden, weights, bias).unwrap()));
        layers.push(Layer::Lif(lif));
        features = hidden;
    }
    let classes = rng.gen_range(2..=6);
    let weights = (0..classes * features).map(|_| rng.gen_range(-0.4..0.6f32)).collect();
    let bias = (0..classes).map(|_| rng.gen_range(-0.2..0.4f32)).collect();
    layers.push(Layer::Linear(
        LinearSpec::new(features, classes, weights, bias).unwrap(),
    ));
    layers.push(Layer::Lif(random_lif(rng)));

    let steps = rng.gen_range(2..=10);
    Network::new(Shape::new(vec![c0, h0, w0]).unwrap(), steps, layers)
}

/// Any small network the engine supports: strided and padded convs, pools
/// with arbitrary stride, pools before or after LIF, dense-only stacks, both
/// reset modes, signed weights.
pub fn random_small_net(rng: &mut ChaCha8Rng) -> Network {
    let c0 = rng.gen_range(1..=3);
    let (h0, w0) = (rng.gen_range(3..=10), rng.gen_range(3..=10));
    let (mut c, mut h, mut w) = (c0, h0, w0);
    let mut layers = Vec::new();

    let conv_blocks = if rng.gen_bool(0.2) { 0 } else { rng.gen_range(1..=3) };
    for _ in 0..conv_blocks {
        let k = [rng.gen_range(1..=3usize), rng.gen_range(1..=3usize)];
        let stride = [rng.gen_range(1..=2usize), rng.gen_range(1..=2usize)];
        let pad = [rng.gen_range(0..=1usize), rng.gen_range(0..=1usize)];
        if h + 2 * pad[0] < k[0] || w + 2 * pad[1] < k[1] {
            break;
        }
        let out = rng.gen_range(1..=6);
        let weights = (0..out * c * k[0] * k[1])
            .map(|_| rng.gen_range(-1.0..1.0f32))
            .collect();
        let bias = (0..out).map(|_| rng.gen_range(-0.5..0.5f32)).collect();
        let conv = Conv2dSpec::new(c, out, k, stride, pad, weights, bias).unwrap();
        let (oh, ow) = conv.output_hw(h, w).unwrap();
        layers.push(Layer::Conv2d(conv));
        (c, h, w) = (out, oh, ow);

        let pool_first = rng.gen_bool(0.3);
        if !pool_first {
            layers.push(Layer::Lif(random_lif(rng)));
        }
        if rng.gen_bool(0.5) {
            let pk = [rng.gen_range(1..=2usize).min(h), rng.gen_range(1..=2usize).min(w)];
            let ps = [rng.gen_range(1..=2usize), rng.gen_range(1..=2usize)];
            let pool = MaxPool2dSpec::new(pk, ps).unwrap();
            let (oh, ow) = pool.output_hw(h, w).unwrap();
            layers.push(Layer::MaxPool2d(pool));
            (h, w) = (oh, ow);
        }
        if pool_first {
            layers.push(Layer::Lif(random_lif(rng)));
        }
    }

    layers.push(Layer::Flatten);
    let mut features = c * h * w;
    for _ in 0..rng.gen_range(0..=1) {
        let hidden = rng.gen_range(1..=12);
        layers.push(random_linear(rng, features, hidden));
        layers.push(Layer::Lif(random_lif(rng)));
        features = hidden;
    }
    let classes = rng.gen_range(1..=5);
    layers.push(random_linear(rng, features, classes));
    layers.push(Layer::Lif(random_lif(rng)));

    let steps = rng.gen_range(1..=10);
    Network::new(Shape::new(vec![c0, h0, w0]).unwrap(), steps, layers)
}

fn random_linear(rng: &mut ChaCha8Rng, i: usize, o: usize) -> Layer {
    let scale = 2.0 / (i as f32).sqrt();
    let weights = (0..i * o).map(|_| rng.gen_range(-scale..scale)).collect();
    let bias = (0..o).map(|_| rng.gen_range(-0.5..0.5f32)).collect();
    Layer::Linear(LinearSpec::new(i, o, weights, bias).unwrap())
}

/// `steps` frames of the network's input shape; each cell is zero with
/// probability `1 - density`, otherwise drawn from `lo..hi`.
pub fn random_frames(
    rng: &mut ChaCha8Rng,
    net: &Network,
    steps: usize,
    density: f64,
    lo: f32,
    hi: f32,
) -> FrameSequence {
    let mut dims = vec![steps];
    dims.extend_from_slice(net.input_shape.dims());
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            if rng.gen_bool(density) {
                rng.gen_range(lo..hi)
            } else {
                0.0
            }
        })
        .collect();
    FrameSequence::from_tensor(Tensor::from_dims(&dims, data).unwrap(), 1).unwrap()
}

// ---------------------------------------------------------------------------
// Naive reference forward pass. Activations are nested vectors indexed
// [c][y][x]; weights are read one element at a time through `Tensor::get`.
// Sums start from the bias and add terms in (c, i, j) order.

#[derive(Debug, Clone, PartialEq)]
pub enum Act {
    Map(Vec<Vec<Vec<f32>>>),
    Flat(Vec<f32>),
}

impl Act {
    pub fn flatten(&self) -> Vec<f32> {
        match self {
            Act::Map(m) => m.iter().flatten().flatten().copied().collect(),
            Act::Flat(v) => v.clone(),
        }
    }

    fn map(&self) -> &Vec<Vec<Vec<f32>>> {
        match self {
            Act::Map(m) => m,
            Act::Flat(_) => panic!("expected a feature map"),
        }
    }
}

fn to_map(frame: &[f32], c: usize, h: usize, w: usize) -> Act {
    Act::Map(
        (0..c)
            .map(|ch| {
                (0..h)
                    .map(|y| (0..w).map(|x| frame[(ch * h + y) * w + x]).collect())
                    .collect()
            })
            .collect(),
    )
}

fn conv(spec: &Conv2dSpec, input: &Act) -> Act {
    let x = input.map();
    let (h, w) = (x[0].len() as isize, x[0][0].len() as isize);
    let [kh, kw] = spec.kernel;
    let (oh, ow) = spec.output_hw(h as usize, w as usize).unwrap();
    let mut out = vec![vec![vec![0.0f32; ow]; oh]; spec.out_channels];
    for (o, plane) in out.iter_mut().enumerate() {
        for (oy, row) in plane.iter_mut().enumerate() {
            for (ox, cell) in row.iter_mut().enumerate() {
                let mut acc = spec.bias.get(&[o]).unwrap();
                for (c, plane) in x.iter().enumerate().take(spec.in_channels) {
                    for i in 0..kh {
                        for j in 0..kw {
                            let iy = (oy * spec.stride[0] + i) as isize - spec.padding[0] as isize;
                            let ix = (ox * spec.stride[1] + j) as isize - spec.padding[1] as isize;
                            if iy < 0 || ix < 0 || iy >= h || ix >= w {
                                continue;
                            }
                            acc += spec.weights.get(&[o, c, i, j]).unwrap() * plane[iy as usize][ix as usize];
                        }
                    }
                }
                *cell = acc;
            }
        }
    }
    Act::Map(out)
}

fn maxpool(spec: &MaxPool2dSpec, input: &Act) -> Act {
    let x = input.map();
    let (oh, ow) = spec.output_hw(x[0].len(), x[0][0].len()).unwrap();
    let out = x
        .iter()
        .map(|plane| {
            (0..oh)
                .map(|oy| {
                    (0..ow)
                        .map(|ox| {
                            let mut m = f32::NEG_INFINITY;
                            for i in 0..spec.kernel[0] {
                                for j in 0..spec.kernel[1] {
                                    m = m.max(plane[oy * spec.stride[0] + i][ox * spec.stride[1] + j]);
                                }
                            }
                            m
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Act::Map(out)
}

fn linear(spec: &LinearSpec, input: &Act) -> Act {
    let x = input.flatten();
    assert_eq!(x.len(), spec.in_features);
    Act::Flat(
        (0..spec.out_features)
            .map(|o| {
                let mut acc = spec.bias.get(&[o]).unwrap();
                for (i, v) in x.iter().enumerate() {
                    acc += spec.weights.get(&[o, i]).unwrap() * v;
                }
                acc
            })
            .collect(),
    )
}

/// Per-LIF-layer state: membrane and previous spikes, flattened.
#[derive(Default, Clone)]
struct LifMem {
    u: Vec<f32>,
    s: Vec<f32>,
}

fn lif(spec: &LifSpec, mem: &mut LifMem, input: &Act) -> Act {
    let current = input.flatten();
    if mem.u.is_empty() {
        mem.u = vec![0.0; current.len()];
        mem.s = vec![0.0; current.len()];
    }
    for (k, &i) in current.iter().enumerate() {
        let u = match spec.reset {
            ResetMode::Subtract => spec.beta * mem.u[k] + i - mem.s[k] * spec.threshold,
            ResetMode::Zero => {
                let prev = if mem.s[k] == 1.0 { 0.0 } else { mem.u[k] };
                spec.beta * prev + i
            }
        };
        mem.u[k] = u;
        mem.s[k] = if u > spec.threshold { 1.0 } else { 0.0 };
    }
    match input {
        Act::Map(m) => {
            let (c, h, w) = (m.len(), m[0].len(), m[0][0].len());
            to_map(&mem.s, c, h, w)
        }
        Act::Flat(_) => Act::Flat(mem.s.clone()),
    }
}

/// Reference run: for every step, every layer's output flattened, plus the
/// final layer's spike counts.
pub struct OracleRun {
    pub outputs: Vec<Vec<Vec<f32>>>,
    pub membranes: Vec<Vec<Vec<f32>>>,
    pub class_counts: Vec<u32>,
}

pub fn oracle_run(net: &Network, frames: &FrameSequence) -> OracleRun {
    let [c, h, w] = net.input_shape.dims().try_into().unwrap();
    let mut state = vec![LifMem::default(); net.layers.len()];
    let mut outputs = Vec::new();
    let mut membranes = Vec::new();
    let mut class_counts: Vec<u32> = Vec::new();
    for t in 0..frames.num_frames() {
        let mut act = to_map(frames.frame(t), c, h, w);
        let mut step_out = Vec::new();
        let mut step_mem = Vec::new();
        for (i, layer) in net.layers.iter().enumerate() {
            act = match layer {
                Layer::Conv2d(s) => conv(s, &act),
                Layer::Linear(s) => linear(s, &act),
                Layer::MaxPool2d(s) => maxpool(s, &act),
                Layer::Flatten => Act::Flat(act.flatten()),
                Layer::Lif(s) => lif(s, &mut state[i], &act),
            };
            step_out.push(act.flatten());
            step_mem.push(state[i].u.clone());
        }
        let last = step_out.last().unwrap();
        if class_counts.is_empty() {
            class_counts = vec![0; last.len()];
        }
        for (n, &s) in class_counts.iter_mut().zip(last) {
            *n += s as u32;
        }
        outputs.push(step_out);
        membranes.push(step_mem);
    }
    OracleRun {
        outputs,
        membranes,
        class_counts,
    }
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}
