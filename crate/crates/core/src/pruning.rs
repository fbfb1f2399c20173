//! Activity-driven structural pruning.
//!
//! A LIF layer is a pruning *site* when it is fed (directly or through max
//! pooling) by a conv or linear layer, and its spikes reach a conv or linear
//! consumer through nothing but pooling and flattening. Conv-fed sites are
//! pruned per output channel: every LIF neuron of channel `c` belongs to
//! filter `c`. Linear-fed sites are pruned per neuron.
//!
//! Removing a group deletes the producing rows (filter or weight row plus bias
//! entry) and the matching inputs of the consumer: input channel `c` of a conv,
//! or the columns `c*H*W .. (c+1)*H*W` of a linear layer behind a flatten
//! (channel-major flatten order). Pooling and LIF layers in between shrink
//! implicitly because they are shape-driven.
//!
//! With threshold 0 every removed group emitted no spikes on the profiled
//! inputs, so every removed consumer term was `w * 0`. The kernels add terms in
//! a fixed order starting from the bias, so the pruned network reproduces the
//! original outputs bit for bit on those inputs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::events::FrameSequence;
use crate::model::{Conv2dSpec, Layer, LinearSpec, Network, ShapeTrace};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerProfile {
    pub layer_index: usize,
    /// One entry per neuron in flattened layer order.
    pub counts: Vec<u64>,
}

/// Spike counts of every LIF layer, summed over samples and steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeProfile {
    pub samples_profiled: usize,
    pub layers: Vec<LayerProfile>,
}

impl SpikeProfile {
    fn empty(net: &Network, trace: &ShapeTrace) -> Self {
        let layers = net
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Lif(_)))
            .map(|(i, _)| LayerProfile {
                layer_index: i,
                counts: vec![0; trace.layers[i].output.numel()],
            })
            .collect();
        SpikeProfile {
            samples_profiled: 0,
            layers,
        }
    }

    pub fn layer(&self, layer_index: usize) -> Option<&LayerProfile> {
        self.layers.iter().find(|l| l.layer_index == layer_index)
    }

    /// Adds another profile of the same network into this one.
    pub fn merge(&mut self, other: &SpikeProfile) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Argument("profiles cover different layer sets".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.layer_index != b.layer_index || a.counts.len() != b.counts.len() {
                return Err(Error::Argument(format!(
                    "profile layer {} does not line up with layer {}",
                    a.layer_index, b.layer_index
                )));
            }
            for (x, y) in a.counts.iter_mut().zip(&b.counts) {
                *x += y;
            }
        }
        self.samples_profiled += other.samples_profiled;
        Ok(())
    }

    pub fn total_spikes(&self) -> u64 {
        self.layers.iter().flat_map(|l| &l.counts).sum()
    }

    /// Neurons with a zero count, over all layers.
    pub fn silent_neurons(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.counts).filter(|&&c| c == 0).count()
    }
}

/// Runs every sample and records how often each LIF neuron fired.
pub fn profile_spikes(net: &Network, dataset: &[FrameSequence]) -> Result<SpikeProfile> {
    if dataset.is_empty() {
        return Err(Error::Argument("profiling dataset is empty".into()));
    }
    let trace = net.validate()?;
    let mut profile = SpikeProfile::empty(net, &trace);
    let mut slot = vec![usize::MAX; net.layers.len()];
    for (k, l) in profile.layers.iter().enumerate() {
        slot[l.layer_index] = k;
    }

    let mut engine = Engine::new(net)?;
    for sample in dataset {
        let layers = &mut profile.layers;
        let mut record = |_step: usize, layer: usize, spikes: &[f32]| {
            for (c, &s) in layers[slot[layer]].counts.iter_mut().zip(spikes) {
                *c += s as u64;
            }
        };
        engine.run_observed(sample, &mut record)?;
    }
    profile.samples_profiled = dataset.len();
    Ok(profile)
}

/// [`profile_spikes`] split across `jobs` threads. Partial profiles are merged
/// by summation, so the result equals the single-threaded one.
pub fn profile_spikes_parallel(net: &Network, dataset: &[FrameSequence], jobs: usize) -> Result<SpikeProfile> {
    if dataset.is_empty() {
        return Err(Error::Argument("profiling dataset is empty".into()));
    }
    let jobs = jobs.clamp(1, dataset.len());
    if jobs == 1 {
        return profile_spikes(net, dataset);
    }
    let chunk = dataset.len().div_ceil(jobs);
    let parts: Vec<Result<SpikeProfile>> = std::thread::scope(|scope| {
        let handles: Vec<_> = dataset
            .chunks(chunk)
            .map(|part| scope.spawn(move || profile_spikes(net, part)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Internal("profiling worker panicked".into())))
            })
            .collect()
    });
    let mut parts = parts.into_iter();
    let mut total = parts.next().expect("at least one chunk")?;
    for part in parts {
        total.merge(&part?)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalKind {
    ConvChannels,
    Neurons,
}

/// Outputs to delete from one weighted layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRemoval {
    /// Index of the conv or linear layer whose outputs are removed.
    pub layer_index: usize,
    pub kind: RemovalKind,
    /// Ascending, unique.
    pub remove: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrunePlan {
    pub layers: Vec<LayerRemoval>,
    pub threshold: u64,
    pub samples_profiled: usize,
}

impl PrunePlan {
    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(|l| l.remove.is_empty())
    }

    pub fn removed_count(&self) -> usize {
        self.layers.iter().map(|l| l.remove.len()).sum()
    }

    /// Input-side removals implied for each downstream consumer layer.
    pub fn input_removals(&self, net: &Network) -> Result<Vec<InputRemoval>> {
        let trace = net.validate()?;
        let sites = find_sites(net, &trace);
        self.layers
            .iter()
            .map(|r| {
                let site = match_site(&sites, r)?;
                Ok(InputRemoval {
                    layer_index: site.consumer,
                    inputs: site.consumer_inputs(&r.remove),
                })
            })
            .collect()
    }
}

/// Inputs (conv input channels or linear columns) removed from a consumer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputRemoval {
    pub layer_index: usize,
    pub inputs: Vec<usize>,
}

/// How a channel's per-neuron counts collapse into one activity value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Sum,
    Max,
}

/// A prunable LIF layer together with its producer and consumer.
#[derive(Debug, Clone)]
struct Site {
    lif: usize,
    source: usize,
    kind: RemovalKind,
    groups: usize,
    group_size: usize,
    consumer: usize,
    /// For a linear consumer behind a flatten: columns per group.
    consumer_block: usize,
}

impl Site {
    fn consumer_inputs(&self, removed: &[usize]) -> Vec<usize> {
        removed
            .iter()
            .flat_map(|&g| g * self.consumer_block..(g + 1) * self.consumer_block)
            .collect()
    }
}

fn find_sites(net: &Network, trace: &ShapeTrace) -> Vec<Site> {
    let last = net.layers.len().saturating_sub(1);
    let mut sites = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        if !matches!(layer, Layer::Lif(_)) || i == last {
            continue;
        }
        // producer: walk back over pooling
        let mut src = i;
        while src > 0 && matches!(net.layers[src - 1], Layer::MaxPool2d(_)) {
            src -= 1;
        }
        if src == 0 || !net.layers[src - 1].is_weighted() {
            continue;
        }
        let source = src - 1;

        // consumer: walk forward over pooling and flatten
        let mut consumer = i + 1;
        let mut flatten_at = None;
        while consumer < net.layers.len() {
            match net.layers[consumer] {
                Layer::MaxPool2d(_) => {}
                Layer::Flatten => flatten_at = Some(consumer),
                _ => break,
            }
            consumer += 1;
        }
        if consumer >= net.layers.len() || !net.layers[consumer].is_weighted() {
            continue;
        }

        let lif_dims = trace.layers[i].output.dims();
        let (kind, groups, group_size) = match net.layers[source] {
            Layer::Conv2d(_) => (RemovalKind::ConvChannels, lif_dims[0], lif_dims[1..].iter().product()),
            _ => (RemovalKind::Neurons, lif_dims[0], 1),
        };
        let consumer_block = match (kind, &net.layers[consumer]) {
            (RemovalKind::ConvChannels, Layer::Linear(_)) => {
                // per-channel block size at the flatten input, after any pooling
                let at = flatten_at.expect("linear behind conv output implies a flatten");
                trace.layers[at].input.dims()[1..].iter().product()
            }
            _ => 1,
        };
        sites.push(Site {
            lif: i,
            source,
            kind,
            groups,
            group_size,
            consumer,
            consumer_block,
        });
    }
    sites
}

fn match_site<'a>(sites: &'a [Site], r: &LayerRemoval) -> Result<&'a Site> {
    let site = sites
        .iter()
        .find(|s| s.source == r.layer_index)
        .ok_or_else(|| Error::Plan {
            layer: r.layer_index,
            msg: "layer is not a prunable producer (needs a lif layer and a downstream conv/linear)".into(),
        })?;
    if site.kind != r.kind {
        return Err(Error::Plan {
            layer: r.layer_index,
            msg: format!("plan kind {:?} does not match layer kind {:?}", r.kind, site.kind),
        });
    }
    if r.remove.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Plan {
            layer: r.layer_index,
            msg: "removal indices must be strictly ascending".into(),
        });
    }
    if let Some(&bad) = r.remove.iter().find(|&&g| g >= site.groups) {
        return Err(Error::Plan {
            layer: r.layer_index,
            msg: format!("index {bad} out of range, layer has {}", site.groups),
        });
    }
    if r.remove.len() >= site.groups {
        return Err(Error::Plan {
            layer: r.layer_index,
            msg: format!("removing all {} outputs would empty the layer", site.groups),
        });
    }
    Ok(site)
}

/// Picks every channel (conv-fed sites) or neuron (linear-fed sites) whose
/// summed spike count is `<= threshold`.
pub fn select_prunable(profile: &SpikeProfile, net: &Network, threshold: u64) -> Result<PrunePlan> {
    select_prunable_with(profile, net, threshold, Aggregation::Sum)
}

pub fn select_prunable_with(
    profile: &SpikeProfile,
    net: &Network,
    threshold: u64,
    aggregation: Aggregation,
) -> Result<PrunePlan> {
    let trace = net.validate()?;
    check_profile(profile, net, &trace)?;

    let mut layers = Vec::new();
    for site in find_sites(net, &trace) {
        let counts = &profile.layer(site.lif).expect("checked above").counts;
        let remove: Vec<usize> = counts
            .chunks(site.group_size)
            .enumerate()
            .filter(|(_, group)| {
                let activity = match aggregation {
                    Aggregation::Sum => group.iter().sum::<u64>(),
                    Aggregation::Max => group.iter().copied().max().unwrap_or(0),
                };
                activity <= threshold
            })
            .map(|(g, _)| g)
            .collect();
        if remove.len() == site.groups {
            return Err(Error::Plan {
                layer: site.source,
                msg: format!(
                    "all {} outputs (lif layer {}) are at or below threshold {threshold}; pruning would empty the layer",
                    site.groups, site.lif
                ),
            });
        }
        if !remove.is_empty() {
            layers.push(LayerRemoval {
                layer_index: site.source,
                kind: site.kind,
                remove,
            });
        }
    }
    Ok(PrunePlan {
        layers,
        threshold,
        samples_profiled: profile.samples_profiled,
    })
}

fn check_profile(profile: &SpikeProfile, net: &Network, trace: &ShapeTrace) -> Result<()> {
    let expected = SpikeProfile::empty(net, trace);
    let lines_up = profile.layers.len() == expected.layers.len()
        && profile
            .layers
            .iter()
            .zip(&expected.layers)
            .all(|(a, b)| a.layer_index == b.layer_index && a.counts.len() == b.counts.len());
    if !lines_up {
        return Err(Error::Argument(
            "spike profile does not match the network's lif layers".into(),
        ));
    }
    Ok(())
}

/// Applies a plan, returning a new network.
pub fn prune_network(net: &Network, plan: &PrunePlan) -> Result<Network> {
    let trace = net.validate()?;
    let sites = find_sites(net, &trace);

    let mut drop_out: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); net.layers.len()];
    let mut drop_in: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); net.layers.len()];
    for r in &plan.layers {
        let site = match_site(&sites, r)?;
        if !drop_out[site.source].is_empty() {
            return Err(Error::Plan {
                layer: r.layer_index,
                msg: "layer listed twice in plan".into(),
            });
        }
        drop_out[site.source].extend(r.remove.iter().copied());
        drop_in[site.consumer].extend(site.consumer_inputs(&r.remove));
    }

    let layers = net
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| match layer {
            Layer::Conv2d(c) if !drop_out[i].is_empty() || !drop_in[i].is_empty() => {
                Ok(Layer::Conv2d(shrink_conv(c, &drop_out[i], &drop_in[i])?))
            }
            Layer::Linear(l) if !drop_out[i].is_empty() || !drop_in[i].is_empty() => {
                Ok(Layer::Linear(shrink_linear(l, &drop_out[i], &drop_in[i])?))
            }
            other => Ok(other.clone()),
        })
        .collect::<Result<Vec<_>>>()?;

    let pruned = Network {
        format_version: net.format_version,
        input_shape: net.input_shape.clone(),
        num_steps: net.num_steps,
        layers,
    };
    pruned.validate()?;
    Ok(pruned)
}

fn kept(n: usize, drop: &BTreeSet<usize>) -> Vec<usize> {
    (0..n).filter(|i| !drop.contains(i)).collect()
}

fn shrink_conv(c: &Conv2dSpec, drop_out: &BTreeSet<usize>, drop_in: &BTreeSet<usize>) -> Result<Conv2dSpec> {
    let outs = kept(c.out_channels, drop_out);
    let ins = kept(c.in_channels, drop_in);
    let taps = c.kernel[0] * c.kernel[1];
    let mut weights = Vec::with_capacity(outs.len() * ins.len() * taps);
    for &o in &outs {
        let filter = c.filter(o);
        for &i in &ins {
            weights.extend_from_slice(&filter[i * taps..(i + 1) * taps]);
        }
    }
    let bias = outs.iter().map(|&o| c.bias.data()[o]).collect();
    Conv2dSpec::new(ins.len(), outs.len(), c.kernel, c.stride, c.padding, weights, bias)
}

fn shrink_linear(l: &LinearSpec, drop_out: &BTreeSet<usize>, drop_in: &BTreeSet<usize>) -> Result<LinearSpec> {
    let outs = kept(l.out_features, drop_out);
    let ins = kept(l.in_features, drop_in);
    let mut weights = Vec::with_capacity(outs.len() * ins.len());
    for &o in &outs {
        let row = l.row(o);
        weights.extend(ins.iter().map(|&i| row[i]));
    }
    let bias = outs.iter().map(|&o| l.bias.data()[o]).collect();
    LinearSpec::new(ins.len(), outs.len(), weights, bias)
}

/// Per-step cost of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer_index: usize,
    pub kind: String,
    pub macs: u64,
    /// Max-pool comparisons.
    pub comparisons: u64,
    /// LIF membrane updates.
    pub neuron_updates: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacReport {
    pub layers: Vec<LayerCost>,
    pub conv_macs: u64,
    pub linear_macs: u64,
    pub total_macs: u64,
}

/// Multiply-accumulate counts per time step.
pub fn mac_count(net: &Network) -> Result<MacReport> {
    let trace = net.validate()?;
    let mut layers = Vec::with_capacity(net.layers.len());
    let (mut conv_macs, mut linear_macs) = (0u64, 0u64);
    for (i, (layer, shapes)) in net.layers.iter().zip(&trace.layers).enumerate() {
        let out = shapes.output.numel() as u64;
        let mut cost = LayerCost {
            layer_index: i,
            kind: layer.kind().to_string(),
            macs: 0,
            comparisons: 0,
            neuron_updates: 0,
        };
        match layer {
            Layer::Conv2d(c) => {
                cost.macs = out * (c.in_channels * c.kernel[0] * c.kernel[1]) as u64;
                conv_macs += cost.macs;
            }
            Layer::Linear(l) => {
                cost.macs = (l.out_features * l.in_features) as u64;
                linear_macs += cost.macs;
            }
            Layer::MaxPool2d(p) => cost.comparisons = out * (p.kernel[0] * p.kernel[1]) as u64,
            Layer::Lif(_) => cost.neuron_updates = out,
            Layer::Flatten => {}
        }
        layers.push(cost);
    }
    Ok(MacReport {
        layers,
        conv_macs,
        linear_macs,
        total_macs: conv_macs + linear_macs,
    })
}
