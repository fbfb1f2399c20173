//! Deterministic networks and inputs for tests, demos and benchmarks.
//!
//! Architectures follow the two reference models (a two-block conv SNN over
//! 2x34x34 event frames and a 100-128-10 dense SNN over a 10x10 tactile grid).
//! Weights are seeded pseudo-random values, not trained parameters; channel
//! counts 12 and 32 for the conv model are our choice.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::events::{Event, EventStream, FrameSequence, NMNIST_SENSOR};
use crate::model::{Conv2dSpec, Layer, LifSpec, LinearSpec, MaxPool2dSpec, Network, ResetMode};
use crate::tensor::{Shape, Tensor};

pub const REFERENCE_BETA: f32 = 0.5;
pub const DEFAULT_FRAMES: usize = 10;

fn lif() -> Layer {
    Layer::Lif(LifSpec {
        beta: REFERENCE_BETA,
        threshold: 1.0,
        reset: ResetMode::Subtract,
    })
}

fn pool2() -> Layer {
    Layer::MaxPool2d(MaxPool2dSpec {
        kernel: [2, 2],
        stride: [2, 2],
    })
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn random_conv(rng: &mut ChaCha8Rng, i: usize, o: usize, k: usize, lo: f32, hi: f32) -> Conv2dSpec {
    let weights = uniform(rng, o * i * k * k, lo, hi);
    let bias = uniform(rng, o, -0.1, 0.1);
    Conv2dSpec::new(i, o, [k, k], [1, 1], [0, 0], weights, bias).expect("consistent conv fixture")
}

fn random_linear(rng: &mut ChaCha8Rng, i: usize, o: usize, lo: f32, hi: f32) -> LinearSpec {
    let weights = uniform(rng, o * i, lo, hi);
    let bias = uniform(rng, o, -0.1, 0.1);
    LinearSpec::new(i, o, weights, bias).expect("consistent linear fixture")
}

/// conv(2->12, 5x5) -> lif -> pool -> conv(12->32, 5x5) -> lif -> pool ->
/// flatten -> linear(800->10) -> lif, over 2x34x34 input.
pub fn nmnist_reference(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Network::new(
        Shape::new(vec![2, 34, 34]).expect("static shape"),
        DEFAULT_FRAMES,
        vec![
            Layer::Conv2d(random_conv(&mut rng, 2, 12, 5, -0.15, 0.45)),
            lif(),
            pool2(),
            Layer::Conv2d(random_conv(&mut rng, 12, 32, 5, -0.1, 0.1)),
            lif(),
            pool2(),
            Layer::Flatten,
            Layer::Linear(random_linear(&mut rng, 800, 10, -0.1, 0.1)),
            lif(),
        ],
    )
}

/// [`nmnist_reference`] with the first `silent` filters of the first conv
/// layer zeroed and given bias -1. On non-negative input those channels can
/// never reach threshold.
pub fn nmnist_with_silent_filters(seed: u64, silent: usize) -> Network {
    let mut net = nmnist_reference(seed);
    if let Layer::Conv2d(c) = &mut net.layers[0] {
        let per_filter = c.in_channels * c.kernel[0] * c.kernel[1];
        for o in 0..silent.min(c.out_channels) {
            c.weights.data_mut()[o * per_filter..(o + 1) * per_filter].fill(0.0);
            c.bias.data_mut()[o] = -1.0;
        }
    }
    net
}

/// flatten -> linear(100->128) -> lif -> linear(128->10) -> lif over a
/// single-channel 10x10 grid.
pub fn stmnist_dense(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Network::new(
        Shape::new(vec![1, 10, 10]).expect("static shape"),
        DEFAULT_FRAMES,
        vec![
            Layer::Flatten,
            Layer::Linear(random_linear(&mut rng, 100, 128, -0.3, 0.4)),
            lif(),
            Layer::Linear(random_linear(&mut rng, 128, 10, -0.25, 0.27)),
            lif(),
        ],
    )
}

/// Names of the four toy filters, in channel order.
pub const TOY_FILTERS: [&str; 4] = ["red", "green", "blue", "gray"];

/// A conv layer with four filters feeding a 16-neuron spiking layer, four
/// neurons per filter. The red (0) and blue (2) filters have negative weights
/// and bias, so on non-negative input their neurons never spike.
///
/// conv(1->4, 2x2) -> lif -> flatten -> linear(16->2) -> lif over 1x3x3.
pub fn four_filter_toy() -> Network {
    let filters: [([f32; 4], f32); 4] = [
        ([-1.0, -1.0, -1.0, -1.0], -0.5), // red
        ([0.6, 0.2, 0.2, 0.6], 0.0),      // green
        ([-0.5, -0.5, -0.5, -0.5], -1.0), // blue
        ([0.3, 0.5, 0.5, 0.3], 0.1),      // gray
    ];
    let weights = filters.iter().flat_map(|(w, _)| *w).collect();
    let bias = filters.iter().map(|(_, b)| *b).collect();
    let conv = Conv2dSpec::new(1, 4, [2, 2], [1, 1], [0, 0], weights, bias).expect("toy conv");

    // class 0 reads the green group, class 1 the gray group; silent groups
    // carry nonzero weights too, so removing their columns is observable
    let mut lw = vec![0.0f32; 2 * 16];
    for n in 0..16 {
        let channel = n / 4;
        lw[n] = if channel == 1 { 0.8 } else { 0.3 };
        lw[16 + n] = if channel == 3 { 0.8 } else { -0.3 };
    }
    let linear = LinearSpec::new(16, 2, lw, vec![0.0, 0.0]).expect("toy linear");

    Network::new(
        Shape::new(vec![1, 3, 3]).expect("static shape"),
        4,
        vec![Layer::Conv2d(conv), lif(), Layer::Flatten, Layer::Linear(linear), lif()],
    )
}

/// Non-negative inputs for [`four_filter_toy`].
pub fn four_filter_inputs() -> Vec<FrameSequence> {
    let patterns: [[f32; 9]; 3] = [
        [1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 1.0, 0.0, 1.0],
        [0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0],
        [2.0, 2.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    ];
    patterns
        .iter()
        .map(|p| {
            let data: Vec<f32> = p.iter().copied().cycle().take(4 * 9).collect();
            FrameSequence::from_tensor(Tensor::from_dims(&[4, 1, 3, 3], data).expect("toy frames"), 1).expect("rank 4")
        })
        .collect()
}

/// A stroke-like synthetic recording on the 34x34 sensor: a random polyline
/// swept over three short saccades, ~300 ms in total.
pub fn synthetic_nmnist_events(seed: u64) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = NMNIST_SENSOR;

    let mut stroke = Vec::new();
    let mut p = (rng.gen_range(8.0..26.0f32), rng.gen_range(8.0..26.0f32));
    for _ in 0..4 {
        let q = (rng.gen_range(6.0..28.0f32), rng.gen_range(6.0..28.0f32));
        for k in 0..=20 {
            let a = k as f32 / 20.0;
            stroke.push((p.0 + (q.0 - p.0) * a, p.1 + (q.1 - p.1) * a));
        }
        p = q;
    }

    let saccades = [(1.0f32, 1.0f32), (-1.0, 1.0), (0.0, -1.5)];
    let mut events = Vec::new();
    for (phase, (dx, dy)) in saccades.iter().enumerate() {
        let t0 = phase as u64 * 100_000;
        for _ in 0..500 {
            let &(sx, sy) = &stroke[rng.gen_range(0..stroke.len())];
            let frac = rng.gen_range(0.0..1.0f32);
            let x = (sx + dx * 2.0 * frac + rng.gen_range(-0.7..0.7f32)).round();
            let y = (sy + dy * 2.0 * frac + rng.gen_range(-0.7..0.7f32)).round();
            if x < 0.0 || y < 0.0 || x >= w as f32 || y >= h as f32 {
                continue;
            }
            events.push(Event {
                t: t0 + (frac * 99_999.0) as u64,
                x: x as u16,
                y: y as u16,
                polarity: u8::from(rng.gen_bool(0.55)),
            });
        }
    }
    EventStream::new(events, NMNIST_SENSOR).expect("events inside sensor")
}

/// Sparse non-negative frames: each cell holds a small count with
/// probability `density`.
pub fn random_sparse_frames(seed: u64, num_frames: usize, dims: &[usize], density: f64) -> FrameSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = vec![num_frames];
    all.extend_from_slice(dims);
    let n: usize = all.iter().product();
    let data = (0..n)
        .map(|_| {
            if rng.gen_bool(density) {
                rng.gen_range(1..=3) as f32
            } else {
                0.0
            }
        })
        .collect();
    FrameSequence::from_tensor(Tensor::from_dims(&all, data).expect("frame dims"), 1).expect("rank 4")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run_inference;
    use crate::events::{bin_to_frames, BinningOptions};

    #[test]
    fn fixtures_validate() {
        assert_eq!(nmnist_reference(1).layers.len(), 9);
        assert_eq!(nmnist_reference(1).validate().unwrap().layers[7].output.dims(), &[10]);
        assert_eq!(stmnist_dense(1).layers.len(), 5);
        four_filter_toy().validate().unwrap();
        nmnist_with_silent_filters(1, 6).validate().unwrap();
    }

    #[test]
    fn reference_model_is_active_on_synthetic_events() {
        let net = nmnist_reference(1);
        let frames = bin_to_frames(&synthetic_nmnist_events(3), DEFAULT_FRAMES, BinningOptions::default()).unwrap();
        let r = run_inference(&net, &frames).unwrap();
        for t in &r.per_layer_spike_totals {
            assert!(t.spikes > 0, "layer {} silent: {r:?}", t.layer_index);
        }
    }

    #[test]
    fn synthetic_events_are_deterministic() {
        assert_eq!(synthetic_nmnist_events(9), synthetic_nmnist_events(9));
        assert_ne!(synthetic_nmnist_events(9), synthetic_nmnist_events(10));
        assert!(synthetic_nmnist_events(9).len() > 1000);
    }
}
