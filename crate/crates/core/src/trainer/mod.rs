//! Three-phase dual-network training loop, its configuration, metric
//! stream and checkpoints. Joint-network PPO runs through the same loop.

mod checkpoint;
pub mod config;
pub mod metrics;
mod state;

pub use config::{DnaConfig, Mode, NetworkConfig, NoiseConfig};
pub use metrics::{read_jsonl, FileSink, MetricRecord, MetricsSink, NullSink};
pub use state::{
    minibatch_iterator, train, EvalReport, PhaseData, PhaseStats, ProbeSet, TrainerState, AUX_VALUE_HEAD, PI_HEAD,
};
