use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;
use sha2::{Digest, Sha256};
use snnrt_core::bench::{bench_with, compare_reports, estimate_memory, peak_rss_bytes, write_csv, BenchOptions};
use snnrt_core::engine::RasterWriter;
use snnrt_core::events::encode_nmnist;
use snnrt_core::fixtures;
use snnrt_core::pruning::{profile_spikes_parallel, select_prunable_with, Aggregation, RemovalKind};
use snnrt_core::{
    bin_to_frames, mac_count, prune_network, save_model, BenchReport, BinningOptions, Engine, FrameSequence,
    InferenceResult, Network, SpikeProfile,
};

use crate::inputs::{
    dataset_files, file_name, label_from_name, read_events, read_model, read_sample, read_text, write_file, CliError,
    CliResult, Context,
};
use crate::{
    Aggregate, BenchArgs, ConvertArgs, FixtureArgs, FixtureKind, Format, ProfileArgs, PruneArgs, RunArgs, ValidateArgs,
};

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("in-memory values serialize")
}

fn percent_change(before: u64, after: u64) -> String {
    if before == 0 {
        return "n/a".into();
    }
    format!("{:+.2}%", (after as f64 - before as f64) / before as f64 * 100.0)
}

// ---------------------------------------------------------------- run

pub fn run(args: RunArgs) -> CliResult<()> {
    let (net, _) = read_model(&args.model)?;
    if let Some(path) = &args.input.events {
        let sample = read_sample(path, &net, &args.frames)?;
        let result = match &args.dump_raster {
            Some(raster) => run_with_raster(&net, &sample, raster)?,
            None => Engine::new(&net)?.run(&sample).context(path.display())?,
        };
        print_single(&result, path, args.format);
        return Ok(());
    }

    let dir = args.input.dataset.as_ref().expect("clap enforces one input");
    if args.dump_raster.is_some() {
        return Err(CliError::Usage("--dump-raster needs a single --events file".into()));
    }
    let mut engine = Engine::new(&net)?;
    let mut rows = Vec::new();
    for path in dataset_files(dir)? {
        let sample = read_sample(&path, &net, &args.frames)?;
        let result = engine.run(&sample).context(path.display())?;
        rows.push((path, result));
    }
    print_dataset(&rows, args.format);
    Ok(())
}

fn run_with_raster(net: &Network, sample: &FrameSequence, raster: &Path) -> CliResult<InferenceResult> {
    let file = File::create(raster).map_err(|source| CliError::File {
        path: raster.to_owned(),
        source,
    })?;
    let io_err = |source| CliError::File {
        path: raster.to_owned(),
        source,
    };
    let mut writer = RasterWriter::new(BufWriter::new(file)).map_err(io_err)?;
    let result = Engine::new(net)?.run_observed(sample, &mut writer)?;
    writer.finish().map_err(io_err)?;
    Ok(result)
}

fn joined(counts: &[u32]) -> String {
    counts.iter().map(u32::to_string).collect::<Vec<_>>().join(";")
}

fn print_single(result: &InferenceResult, path: &Path, format: Format) {
    match format {
        Format::Json => say!("{}", to_json(result)),
        Format::Csv => {
            say!("sample,predicted_class,class_spike_counts");
            say!(
                "{},{},{}",
                file_name(path),
                result.predicted_class,
                joined(&result.class_spike_counts)
            );
        }
        Format::Table => {
            say!("predicted class: {}", result.predicted_class);
            say!("{:>5}  {:>6}", "class", "spikes");
            for (c, n) in result.class_spike_counts.iter().enumerate() {
                say!("{c:>5}  {n:>6}");
            }
            let totals: Vec<String> = result
                .per_layer_spike_totals
                .iter()
                .map(|t| format!("layer {}: {}", t.layer_index, t.spikes))
                .collect();
            say!("spikes per lif layer: {}", totals.join(", "));
        }
    }
}

fn print_dataset(rows: &[(PathBuf, InferenceResult)], format: Format) {
    let labelled: Vec<(usize, usize)> = rows
        .iter()
        .filter_map(|(p, r)| label_from_name(p).map(|l| (l, r.predicted_class)))
        .collect();
    let correct = labelled.iter().filter(|(l, p)| l == p).count();
    let accuracy = (!labelled.is_empty()).then(|| correct as f64 / labelled.len() as f64);

    match format {
        Format::Json => {
            let samples: Vec<_> = rows
                .iter()
                .map(|(p, r)| json!({"file": file_name(p), "label": label_from_name(p), "result": r}))
                .collect();
            say!("{}", to_json(&json!({"samples": samples, "accuracy": accuracy})));
        }
        Format::Csv => {
            say!("sample,label,predicted_class,class_spike_counts");
            for (p, r) in rows {
                let label = label_from_name(p).map_or(String::new(), |l| l.to_string());
                say!(
                    "{},{label},{},{}",
                    file_name(p),
                    r.predicted_class,
                    joined(&r.class_spike_counts)
                );
            }
        }
        Format::Table => {
            let width = rows.iter().map(|(p, _)| file_name(p).len()).max().unwrap_or(6).max(6);
            say!("{:<width$}  {:>5}  {:>9}  counts", "sample", "label", "predicted");
            for (p, r) in rows {
                let label = label_from_name(p).map_or("-".to_string(), |l| l.to_string());
                say!(
                    "{:<width$}  {label:>5}  {:>9}  {:?}",
                    file_name(p),
                    r.predicted_class,
                    r.class_spike_counts
                );
            }
            match accuracy {
                Some(a) => say!(
                    "accuracy: {:.2}% ({correct}/{} labelled samples)",
                    a * 100.0,
                    labelled.len()
                ),
                None => say!("{} samples, no labels in file names", rows.len()),
            }
        }
    }
}

// ---------------------------------------------------------------- profile

pub fn profile(args: ProfileArgs) -> CliResult<()> {
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be >= 1".into()));
    }
    let (net, _) = read_model(&args.model)?;
    let samples = dataset_files(&args.dataset)?
        .iter()
        .map(|p| read_sample(p, &net, &args.frames))
        .collect::<CliResult<Vec<_>>>()?;
    let profile = profile_spikes_parallel(&net, &samples, args.jobs)?;
    write_file(&args.out, to_json(&profile))?;

    let neurons: usize = profile.layers.iter().map(|l| l.counts.len()).sum();
    say!(
        "profiled {} samples: {} lif layers, {} spikes, {}/{neurons} neurons silent",
        profile.samples_profiled,
        profile.layers.len(),
        profile.total_spikes(),
        profile.silent_neurons()
    );
    Ok(())
}

// ---------------------------------------------------------------- prune

fn default_plan_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.plan.json"))
}

pub fn prune(args: PruneArgs) -> CliResult<()> {
    let (net, _) = read_model(&args.model)?;
    let profile: SpikeProfile = serde_json::from_str(&read_text(&args.profile)?).map_err(|e| CliError::Core {
        context: args.profile.display().to_string(),
        source: snnrt_core::Error::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        },
    })?;
    if args.threshold > 0 {
        eprintln!(
            "warning: threshold {} also removes neurons that fired during profiling; outputs may change, re-validate the pruned model",
            args.threshold
        );
    }
    let aggregation = match args.aggregate {
        Aggregate::Sum => Aggregation::Sum,
        Aggregate::Max => Aggregation::Max,
    };
    let plan = select_prunable_with(&profile, &net, args.threshold, aggregation)?;
    let pruned = prune_network(&net, &plan)?;

    write_file(&args.out, save_model(&pruned))?;
    let plan_path = args.plan_out.clone().unwrap_or_else(|| default_plan_path(&args.out));
    write_file(&plan_path, to_json(&plan))?;

    let (mac_before, mac_after) = (mac_count(&net)?, mac_count(&pruned)?);
    let (mem_before, mem_after) = (estimate_memory(&net)?, estimate_memory(&pruned)?);

    if args.format == Format::Json {
        let summary = json!({
            "plan": plan,
            "conv_macs": [mac_before.conv_macs, mac_after.conv_macs],
            "linear_macs": [mac_before.linear_macs, mac_after.linear_macs],
            "total_macs": [mac_before.total_macs, mac_after.total_macs],
            "memory_estimate_bytes": [mem_before.total_bytes, mem_after.total_bytes],
        });
        say!("{}", to_json(&summary));
        return Ok(());
    }

    if plan.is_empty() {
        say!("nothing to prune: no group at or below threshold {}", args.threshold);
        return Ok(());
    }
    let (mut channels, mut channel_total, mut neurons, mut neuron_total) = (0, 0, 0, 0);
    for removal in &plan.layers {
        let total = match &net.layers[removal.layer_index] {
            snnrt_core::Layer::Conv2d(c) => c.out_channels,
            snnrt_core::Layer::Linear(l) => l.out_features,
            _ => 0,
        };
        let unit = match removal.kind {
            RemovalKind::ConvChannels => {
                channels += removal.remove.len();
                channel_total += total;
                "channels"
            }
            RemovalKind::Neurons => {
                neurons += removal.remove.len();
                neuron_total += total;
                "neurons"
            }
        };
        say!(
            "layer {} {}: removed {}/{total} {unit} {:?}",
            removal.layer_index,
            net.layers[removal.layer_index].kind(),
            removal.remove.len(),
            removal.remove
        );
    }
    let mut parts = Vec::new();
    if channel_total > 0 {
        parts.push(format!("removed {channels}/{channel_total} channels"));
    }
    if neuron_total > 0 {
        parts.push(format!("removed {neurons}/{neuron_total} neurons"));
    }
    parts.push(format!(
        "conv MACs {}",
        percent_change(mac_before.conv_macs, mac_after.conv_macs)
    ));
    say!("{}", parts.join(", "));

    say!("{:<14} {:>12} {:>12} {:>9}", "", "before", "after", "change");
    for (name, before, after) in [
        ("conv MACs", mac_before.conv_macs, mac_after.conv_macs),
        ("linear MACs", mac_before.linear_macs, mac_after.linear_macs),
        ("total MACs", mac_before.total_macs, mac_after.total_macs),
        ("memory bytes", mem_before.total_bytes, mem_after.total_bytes),
    ] {
        say!(
            "{name:<14} {before:>12} {after:>12} {:>9}",
            percent_change(before, after)
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- bench

fn hostname() -> Option<String> {
    ["/proc/sys/kernel/hostname", "/etc/hostname"]
        .iter()
        .find_map(|p| std::fs::read_to_string(p).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .or_else(|| std::env::var("HOSTNAME").ok())
}

pub fn bench(args: BenchArgs) -> CliResult<()> {
    if args.runs == 0 {
        return Err(CliError::Usage("--runs must be >= 1".into()));
    }
    let (net, model_bytes) = read_model(&args.model)?;
    let baseline: Option<BenchReport> = match &args.baseline {
        Some(p) => Some(serde_json::from_str(&read_text(p)?).map_err(|e| CliError::Core {
            context: p.display().to_string(),
            source: snnrt_core::Error::Parse {
                line: e.line(),
                column: e.column(),
                msg: e.to_string(),
            },
        })?),
        None => None,
    };
    let sample = read_sample(&args.events, &net, &args.frames)?;
    let opts = BenchOptions {
        runs: args.runs,
        label: args.label.clone(),
        per_layer: args.per_layer,
    };
    let mut report = bench_with(&net, &sample, &opts)?;
    report.model_sha256 = Some(format!("{:x}", Sha256::digest(&model_bytes)));
    report.hostname = hostname();
    report.timestamp_unix = SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs());
    if args.peak_rss {
        report.peak_rss_bytes = peak_rss_bytes();
    }

    let text = match args.format {
        Format::Json => match &baseline {
            Some(b) => to_json(&json!({"report": report, "baseline": b, "comparison": compare_reports(b, &report)})),
            None => to_json(&report),
        },
        Format::Csv => {
            let mut buf = Vec::new();
            let rows: Vec<BenchReport> = baseline.iter().cloned().chain([report.clone()]).collect();
            write_csv(&mut buf, &rows)?;
            String::from_utf8(buf).expect("csv output is UTF-8")
        }
        Format::Table => bench_table(&report, &net, baseline.as_ref()),
    };
    match &args.out {
        Some(path) => write_file(path, text)?,
        None => say!("{}", text.trim_end()),
    }
    Ok(())
}

fn bench_table(r: &BenchReport, net: &Network, baseline: Option<&BenchReport>) -> String {
    let ms = |s: f64| format!("{:.3} ms", s * 1e3);
    let mut out = String::new();
    let mut line = |k: &str, v: String| out.push_str(&format!("{k:<20} {v}\n"));
    if !r.label.is_empty() {
        line("label", r.label.clone());
    }
    line("runs", r.runs.to_string());
    line("mean latency", ms(r.mean_latency_s));
    line("min latency", ms(r.min_latency_s));
    line("max latency", ms(r.max_latency_s));
    line("stddev", ms(r.stddev_latency_s));
    line("MACs per step", r.mac_total.to_string());
    line("memory estimate", format!("{} bytes", r.memory_estimate_bytes));
    line("predicted class", r.predicted_class.to_string());
    if let Some(rss) = r.peak_rss_bytes {
        line("peak RSS", format!("{rss} bytes"));
    }
    if let Some(times) = &r.per_layer_time_s {
        for (i, t) in times.iter().enumerate() {
            line(&format!("  layer {i} {}", net.layers[i].kind()), ms(*t));
        }
    }
    if let Some(b) = baseline {
        let c = compare_reports(b, r);
        let name = if b.label.is_empty() {
            "baseline"
        } else {
            b.label.as_str()
        };
        line(&format!("vs {name}"), format!("{:.2}x speedup", c.speedup));
        line("  MAC ratio", format!("{:.2}", c.mac_ratio));
        line("  memory ratio", format!("{:.2}", c.memory_ratio));
    }
    out
}

// ---------------------------------------------------------------- convert

pub fn convert(args: ConvertArgs) -> CliResult<()> {
    let stream = read_events(&args.events, args.sensor)?;
    let opts = BinningOptions {
        binarize: args.binarize,
        collapse_polarity: args.collapse_polarity,
        fixed_bin_width_us: args.bin_width_us,
    };
    let frames = bin_to_frames(&stream, args.frames, opts).context(args.events.display())?;
    write_file(&args.out, frames.to_json())?;
    say!(
        "{} events -> {:?} frames, bin width {} us",
        stream.len(),
        frames.tensor().dims(),
        frames.bin_width_us()
    );
    Ok(())
}

// ---------------------------------------------------------------- validate

pub fn validate(args: ValidateArgs) -> CliResult<()> {
    let (net, _) = read_model(&args.model)?;
    let trace = net.validate()?;
    let macs = mac_count(&net)?;
    let memory = estimate_memory(&net)?;
    let fmt_shape = |s: &snnrt_core::Shape| format!("{:?}", s.dims());

    match args.format {
        Format::Json => {
            let layers: Vec<_> = trace
                .layers
                .iter()
                .zip(&macs.layers)
                .map(|(l, c)| {
                    json!({
                        "index": l.index,
                        "type": l.kind,
                        "input": l.input.dims(),
                        "output": l.output.dims(),
                        "params": net.layers[l.index].param_count(),
                        "macs": c.macs,
                    })
                })
                .collect();
            let doc = json!({
                "input_shape": net.input_shape.dims(),
                "num_steps": net.num_steps,
                "layers": layers,
                "param_count": net.param_count(),
                "mac_total": macs.total_macs,
                "memory_estimate_bytes": memory.total_bytes,
            });
            say!("{}", to_json(&doc));
        }
        Format::Csv => return Err(CliError::Usage("validate prints table or json".into())),
        Format::Table => {
            say!(
                "{:>3}  {:<10} {:<14} {:<14} {:>9} {:>11}",
                "#",
                "layer",
                "input",
                "output",
                "params",
                "MACs/step"
            );
            for (l, c) in trace.layers.iter().zip(&macs.layers) {
                say!(
                    "{:>3}  {:<10} {:<14} {:<14} {:>9} {:>11}",
                    l.index,
                    l.kind,
                    fmt_shape(&l.input),
                    fmt_shape(&l.output),
                    net.layers[l.index].param_count(),
                    c.macs
                );
            }
            say!(
                "ok: {} layers, {} steps, {} parameters, {} MACs/step, ~{} bytes",
                net.layers.len(),
                net.num_steps,
                net.param_count(),
                macs.total_macs,
                memory.total_bytes
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- fixture

pub fn fixture(args: FixtureArgs) -> CliResult<()> {
    let net = match args.kind {
        FixtureKind::Nmnist => fixtures::nmnist_reference(args.seed),
        FixtureKind::NmnistSilent => fixtures::nmnist_with_silent_filters(args.seed, 6),
        FixtureKind::Stmnist => fixtures::stmnist_dense(args.seed),
        FixtureKind::Toy => fixtures::four_filter_toy(),
    };
    write_file(&args.out, save_model(&net))?;
    say!("wrote {}", args.out.display());

    let Some(dir) = &args.events_dir else {
        return Ok(());
    };
    std::fs::create_dir_all(dir).map_err(|source| CliError::File {
        path: dir.clone(),
        source,
    })?;
    for k in 0..args.samples {
        let (name, bytes) = match args.kind {
            FixtureKind::Nmnist | FixtureKind::NmnistSilent => {
                let stream = fixtures::synthetic_nmnist_events(args.seed * 1000 + k as u64);
                (format!("sample-{k:03}.bin"), encode_nmnist(stream.events())?)
            }
            FixtureKind::Stmnist => {
                let frames =
                    fixtures::random_sparse_frames(args.seed * 1000 + k as u64, net.num_steps, &[1, 10, 10], 0.2);
                (format!("sample-{k:03}.json"), frames.to_json().into_bytes())
            }
            FixtureKind::Toy => {
                let inputs = fixtures::four_filter_inputs();
                (
                    format!("sample-{k:03}.json"),
                    inputs[k % inputs.len()].to_json().into_bytes(),
                )
            }
        };
        let path = dir.join(name);
        let mut f = File::create(&path).map_err(|source| CliError::File {
            path: path.clone(),
            source,
        })?;
        f.write_all(&bytes).map_err(|source| CliError::File { path, source })?;
    }
    say!("wrote {} recordings to {}", args.samples, dir.display());
    Ok(())
}
