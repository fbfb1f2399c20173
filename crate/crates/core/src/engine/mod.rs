//! Time-stepped execution of a layer stack.
//!
//! An [`Engine`] borrows an immutable [`Network`] and owns every buffer an
//! inference needs: one output buffer per layer, plus a membrane array and a
//! spike array for each LIF layer. Buffers are sized once in [`Engine::new`];
//! stepping never allocates.

mod ops;

pub use ops::{conv2d_forward, lif_step, linear_forward, maxpool_forward, LifState};

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::FrameSequence;
use crate::model::{Layer, Network, ShapeTrace};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpikeTotal {
    pub layer_index: usize,
    pub spikes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub class_spike_counts: Vec<u32>,
    pub predicted_class: usize,
    /// Total spikes emitted by each LIF layer over the whole window.
    pub per_layer_spike_totals: Vec<LayerSpikeTotal>,
}

/// Index of the largest count; ties go to the lowest index.
pub fn argmax_lowest(counts: &[u32]) -> usize {
    counts
        .iter()
        .enumerate()
        .fold((0, None::<u32>), |(best, best_v), (i, &v)| match best_v {
            Some(b) if v <= b => (best, best_v),
            _ => (i, Some(v)),
        })
        .0
}

/// Receives every spike tensor the engine emits, in execution order.
pub trait SpikeObserver {
    fn on_spikes(&mut self, step: usize, layer_index: usize, spikes: &[f32]);
}

impl<F: FnMut(usize, usize, &[f32])> SpikeObserver for F {
    fn on_spikes(&mut self, step: usize, layer_index: usize, spikes: &[f32]) {
        self(step, layer_index, spikes)
    }
}

struct NoObserver;

impl SpikeObserver for NoObserver {
    fn on_spikes(&mut self, _: usize, _: usize, _: &[f32]) {}
}

/// SoA state for one LIF layer.
struct LifBuffers {
    membrane: Vec<f32>,
    fired_total: u64,
}

pub struct Engine<'n> {
    net: &'n Network,
    trace: ShapeTrace,
    /// Output of each layer for the current step. For LIF layers this is the
    /// spike array, which doubles as the previous-step spikes on entry.
    outputs: Vec<Vec<f32>>,
    lif: Vec<Option<LifBuffers>>,
    step: usize,
    layer_time: Option<Vec<Duration>>,
}

impl<'n> Engine<'n> {
    pub fn new(net: &'n Network) -> Result<Self> {
        let trace = net.validate()?;
        if net.layers.is_empty() {
            return Err(Error::Argument("network has no layers to execute".into()));
        }
        let outputs = trace.layers.iter().map(|l| vec![0.0; l.output.numel()]).collect();
        let lif = net
            .layers
            .iter()
            .zip(&trace.layers)
            .map(|(layer, shapes)| {
                matches!(layer, Layer::Lif(_)).then(|| LifBuffers {
                    membrane: vec![0.0; shapes.output.numel()],
                    fired_total: 0,
                })
            })
            .collect();
        Ok(Engine {
            net,
            trace,
            outputs,
            lif,
            step: 0,
            layer_time: None,
        })
    }

    pub fn network(&self) -> &'n Network {
        self.net
    }

    pub fn shape_trace(&self) -> &ShapeTrace {
        &self.trace
    }

    /// Accumulate wall-clock time per layer across subsequent runs.
    pub fn enable_layer_timing(&mut self) {
        self.layer_time = Some(vec![Duration::ZERO; self.net.layers.len()]);
    }

    pub fn layer_times(&self) -> Option<&[Duration]> {
        self.layer_time.as_deref()
    }

    /// Zeroes every membrane and spike buffer.
    pub fn reset(&mut self) {
        for out in &mut self.outputs {
            out.fill(0.0);
        }
        for buf in self.lif.iter_mut().flatten() {
            buf.membrane.fill(0.0);
            buf.fired_total = 0;
        }
        self.step = 0;
    }

    /// Output of layer `index` after the most recent step.
    pub fn layer_output(&self, index: usize) -> &[f32] {
        &self.outputs[index]
    }

    /// Membrane potentials of LIF layer `index`, `None` for other layers.
    pub fn membrane(&self, index: usize) -> Option<&[f32]> {
        self.lif[index].as_ref().map(|b| b.membrane.as_slice())
    }

    /// Feeds one `[C,H,W]` frame through every layer.
    pub fn step(&mut self, frame: &[f32]) -> Result<()> {
        self.step_observed(frame, &mut NoObserver)
    }

    fn step_observed(&mut self, frame: &[f32], observer: &mut dyn SpikeObserver) -> Result<()> {
        if frame.len() != self.trace.input.numel() {
            return Err(Error::Inference {
                layer: 0,
                step: self.step,
                msg: format!(
                    "frame has {} values, network input {} needs {}",
                    frame.len(),
                    self.trace.input,
                    self.trace.input.numel()
                ),
            });
        }
        for i in 0..self.net.layers.len() {
            let started = self.layer_time.as_ref().map(|_| Instant::now());
            // split so the previous layer's output can be read while this one is written
            let (before, rest) = self.outputs.split_at_mut(i);
            let input: &[f32] = if i == 0 { frame } else { &before[i - 1] };
            let out = &mut rest[0];
            let shapes = &self.trace.layers[i];
            let hw = |dims: &[usize]| (dims[1], dims[2]);

            match &self.net.layers[i] {
                Layer::Conv2d(spec) => {
                    ops::conv2d_into(spec, hw(shapes.input.dims()), input, hw(shapes.output.dims()), out)
                }
                Layer::Linear(spec) => ops::linear_into(spec, input, out),
                Layer::MaxPool2d(spec) => ops::maxpool_into(
                    spec,
                    shapes.input.dims()[0],
                    hw(shapes.input.dims()),
                    input,
                    hw(shapes.output.dims()),
                    out,
                ),
                Layer::Flatten => out.copy_from_slice(input),
                Layer::Lif(spec) => {
                    let buf = self.lif[i].as_mut().expect("lif buffers allocated for lif layer");
                    buf.fired_total += ops::lif_into(spec, input, &mut buf.membrane, out);
                    observer.on_spikes(self.step, i, out);
                }
            }
            if let (Some(t0), Some(times)) = (started, self.layer_time.as_mut()) {
                times[i] += t0.elapsed();
            }
        }
        self.step += 1;
        Ok(())
    }

    /// Runs a full sample from zeroed state.
    pub fn run(&mut self, frames: &FrameSequence) -> Result<InferenceResult> {
        self.run_observed(frames, &mut NoObserver)
    }

    /// Like [`Engine::run`], reporting every LIF layer's spikes to `observer`.
    pub fn run_observed(
        &mut self,
        frames: &FrameSequence,
        observer: &mut dyn SpikeObserver,
    ) -> Result<InferenceResult> {
        if frames.frame_dims() != self.trace.input.dims() {
            return Err(Error::Inference {
                layer: 0,
                step: 0,
                msg: format!(
                    "frames are {:?}, network input is {}",
                    frames.frame_dims(),
                    self.trace.input
                ),
            });
        }
        self.reset();
        let last = self.net.layers.len() - 1;
        let mut counts = vec![0u32; self.outputs[last].len()];
        for t in 0..frames.num_frames() {
            self.step_observed(frames.frame(t), observer)?;
            for (c, &s) in counts.iter_mut().zip(&self.outputs[last]) {
                *c += s as u32;
            }
        }
        let per_layer_spike_totals = self
            .lif
            .iter()
            .enumerate()
            .filter_map(|(i, b)| {
                b.as_ref().map(|b| LayerSpikeTotal {
                    layer_index: i,
                    spikes: b.fired_total,
                })
            })
            .collect();
        Ok(InferenceResult {
            predicted_class: argmax_lowest(&counts),
            class_spike_counts: counts,
            per_layer_spike_totals,
        })
    }
}

/// One-shot inference with a fresh engine.
pub fn run_inference(net: &Network, frames: &FrameSequence) -> Result<InferenceResult> {
    Engine::new(net)?.run(frames)
}

/// Writes `step,layer_index,neuron_index` for every spike.
pub struct RasterWriter<W: std::io::Write> {
    out: W,
    error: Option<std::io::Error>,
}

impl<W: std::io::Write> RasterWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "step,layer_index,neuron_index")?;
        Ok(RasterWriter { out, error: None })
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: std::io::Write> SpikeObserver for RasterWriter<W> {
    fn on_spikes(&mut self, step: usize, layer_index: usize, spikes: &[f32]) {
        if self.error.is_some() {
            return;
        }
        for (n, _) in spikes.iter().enumerate().filter(|(_, &s)| s > 0.0) {
            if let Err(e) = writeln!(self.out, "{step},{layer_index},{n}") {
                self.error = Some(e);
                return;
            }
        }
    }
}
