//! Latency and memory measurement.
//!
//! Latency is wall-clock time of a complete inference (fresh state, all
//! frames) on one engine instance, single-threaded. Memory is an analytic
//! estimate: the sum of the buffers the engine actually allocates for weights,
//! neuron state and one input frame.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, InferenceResult};
use crate::error::{Error, Result};
use crate::events::FrameSequence;
use crate::model::{Layer, Network};
use crate::pruning::mac_count;

pub const DEFAULT_RUNS: usize = 500;

const F32_BYTES: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub label: String,
    pub runs: usize,
    pub mean_latency_s: f64,
    pub min_latency_s: f64,
    pub max_latency_s: f64,
    pub stddev_latency_s: f64,
    /// Mean seconds per inference spent in each layer, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_layer_time_s: Option<Vec<f64>>,
    pub mac_total: u64,
    pub memory_estimate_bytes: u64,
    pub predicted_class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_rss_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hostname: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_unix: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_sha256: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub runs: usize,
    pub label: String,
    pub per_layer: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            runs: DEFAULT_RUNS,
            label: String::new(),
            per_layer: false,
        }
    }
}

/// Summary statistics of a set of durations in seconds. Standard deviation is
/// the population form, so a single run reports 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub stddev: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // keep min <= mean <= max despite rounding in the mean
        Some(LatencyStats {
            mean: mean.clamp(min, max),
            min,
            max,
            stddev: var.sqrt(),
        })
    }
}

pub fn bench_inference(net: &Network, sample: &FrameSequence, runs: usize) -> Result<BenchReport> {
    bench_with(
        net,
        sample,
        &BenchOptions {
            runs,
            ..Default::default()
        },
    )
}

/// Times `opts.runs` inferences after one discarded warm-up run. Every run
/// must reproduce the warm-up result exactly.
pub fn bench_with(net: &Network, sample: &FrameSequence, opts: &BenchOptions) -> Result<BenchReport> {
    if opts.runs == 0 {
        return Err(Error::Argument("runs must be >= 1".into()));
    }
    let mut engine = Engine::new(net)?;
    let reference = engine.run(sample)?;

    let mut samples = Vec::with_capacity(opts.runs);
    for run in 0..opts.runs {
        let t0 = Instant::now();
        let result = engine.run(sample)?;
        samples.push(t0.elapsed().as_secs_f64());
        check_same(&reference, &result, run)?;
    }
    let stats = LatencyStats::from_samples(&samples).expect("runs >= 1");

    // separate pass: per-layer timers add overhead the headline numbers should not carry
    let per_layer_time_s = if opts.per_layer {
        engine.enable_layer_timing();
        for run in 0..opts.runs {
            let result = engine.run(sample)?;
            check_same(&reference, &result, run)?;
        }
        engine
            .layer_times()
            .map(|t| t.iter().map(|d| d.as_secs_f64() / opts.runs as f64).collect())
    } else {
        None
    };

    Ok(BenchReport {
        label: opts.label.clone(),
        runs: opts.runs,
        mean_latency_s: stats.mean,
        min_latency_s: stats.min,
        max_latency_s: stats.max,
        stddev_latency_s: stats.stddev,
        per_layer_time_s,
        mac_total: mac_count(net)?.total_macs,
        memory_estimate_bytes: estimate_memory(net)?.total_bytes,
        predicted_class: reference.predicted_class,
        peak_rss_bytes: None,
        hostname: None,
        timestamp_unix: None,
        model_sha256: None,
    })
}

fn check_same(reference: &InferenceResult, got: &InferenceResult, run: usize) -> Result<()> {
    if got != reference {
        return Err(Error::Internal(format!(
            "non-deterministic inference: run {run} produced {:?}, warm-up produced {:?}",
            got.class_spike_counts, reference.class_spike_counts
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub weights_bytes: u64,
    pub state_bytes: u64,
    pub frame_buffer_bytes: u64,
    pub total_bytes: u64,
}

/// Weights and biases, membrane plus spike arrays for every LIF neuron, and
/// one input frame, all as `f32`.
pub fn estimate_memory(net: &Network) -> Result<MemoryEstimate> {
    let trace = net.validate()?;
    let weights_bytes = F32_BYTES * net.param_count() as u64;
    let lif_neurons: usize = net
        .layers
        .iter()
        .zip(&trace.layers)
        .filter(|(l, _)| matches!(l, Layer::Lif(_)))
        .map(|(_, s)| s.output.numel())
        .sum();
    let state_bytes = F32_BYTES * 2 * lif_neurons as u64;
    let frame_buffer_bytes = F32_BYTES * net.input_shape.numel() as u64;
    Ok(MemoryEstimate {
        weights_bytes,
        state_bytes,
        frame_buffer_bytes,
        total_bytes: weights_bytes + state_bytes + frame_buffer_bytes,
    })
}

/// `a` relative to `b`: `speedup > 1` means `b` is faster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub speedup: f64,
    pub mac_ratio: f64,
    pub memory_ratio: f64,
    pub latency_delta_s: f64,
    pub mac_delta: i64,
    pub memory_delta_bytes: i64,
}

pub fn compare_reports(a: &BenchReport, b: &BenchReport) -> Comparison {
    let ratio = |x: f64, y: f64| if y == 0.0 { f64::INFINITY } else { x / y };
    Comparison {
        speedup: ratio(a.mean_latency_s, b.mean_latency_s),
        mac_ratio: ratio(a.mac_total as f64, b.mac_total as f64),
        memory_ratio: ratio(a.memory_estimate_bytes as f64, b.memory_estimate_bytes as f64),
        latency_delta_s: b.mean_latency_s - a.mean_latency_s,
        mac_delta: b.mac_total as i64 - a.mac_total as i64,
        memory_delta_bytes: b.memory_estimate_bytes as i64 - a.memory_estimate_bytes as i64,
    }
}

const CSV_COLUMNS: [&str; 14] = [
    "label",
    "runs",
    "mean_latency_s",
    "min_latency_s",
    "max_latency_s",
    "stddev_latency_s",
    "per_layer_time_s",
    "mac_total",
    "memory_estimate_bytes",
    "predicted_class",
    "peak_rss_bytes",
    "hostname",
    "timestamp_unix",
    "model_sha256",
];

/// Writes a header and one row per report. Per-layer times are joined with `;`.
pub fn write_csv<W: std::io::Write>(out: W, reports: &[BenchReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in reports {
        let opt = |v: Option<String>| v.unwrap_or_default();
        w.write_record([
            r.label.clone(),
            r.runs.to_string(),
            r.mean_latency_s.to_string(),
            r.min_latency_s.to_string(),
            r.max_latency_s.to_string(),
            r.stddev_latency_s.to_string(),
            opt(r
                .per_layer_time_s
                .as_ref()
                .map(|v| v.iter().map(f64::to_string).collect::<Vec<_>>().join(";"))),
            r.mac_total.to_string(),
            r.memory_estimate_bytes.to_string(),
            r.predicted_class.to_string(),
            opt(r.peak_rss_bytes.map(|v| v.to_string())),
            opt(r.hostname.clone()),
            opt(r.timestamp_unix.map(|v| v.to_string())),
            opt(r.model_sha256.clone()),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Peak resident set size of this process (Linux `VmHWM`).
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
