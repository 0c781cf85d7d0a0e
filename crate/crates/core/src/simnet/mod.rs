//! Deterministic discrete-event simulation of clients, balancers and replicas.

mod engine;
mod latency;
mod log;
mod queue;
mod scenario;

pub use engine::{run, Engine, EngineOptions, RunOutput};
pub use latency::{default_link, LatencyMatrix, LatencySpec, Link, DEFAULT_INTRA_MS};
pub use log::{log_to_string, read_log, write_log, LogEvent, LogRecord};
pub use queue::EventQueue;
pub use scenario::{
    BalancerSettings, BalancerSpec, FailureSpec, OutputSpec, RegionSpec, ReportFormat, Scenario, TraceSource, Variant,
    WorkloadSpec,
};
