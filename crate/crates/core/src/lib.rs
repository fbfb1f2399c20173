//! Spiking neural network inference over event-camera input, per-neuron
//! spike profiling, and activity-driven structural pruning.

pub mod bench;
pub mod engine;
pub mod error;
pub mod events;
pub mod fixtures;
pub mod model;
pub mod pruning;
pub mod tensor;

pub use bench::{bench_inference, compare_reports, estimate_memory, BenchReport};
pub use engine::{run_inference, Engine, InferenceResult};
pub use error::{Error, Result};
pub use events::{bin_to_frames, BinningOptions, Event, EventStream, FrameSequence};
pub use model::{load_model, save_model, Layer, Network};
pub use pruning::{mac_count, profile_spikes, prune_network, select_prunable, PrunePlan, SpikeProfile};
pub use tensor::{Shape, Tensor};
