//! Sequential leveraging sampling (SLS) for streaming AR(p) time series.
//!
//! The pipeline is: a pilot segment fixes the model order, the precision
//! matrix and baseline estimates ([`pilot`]); the online sampler picks one
//! block of consecutive samples at a time, starting at a leverage-driven
//! Bernoulli trial and stopping once the accumulated regressor information
//! reaches a threshold ([`sampler`]); least squares on the block gives the
//! estimate, pivots and confidence regions ([`estimation`]); the monitor
//! scores every block against the pilot ([`monitor`]).

pub mod bench;
pub mod error;
pub mod estimation;
pub mod io;
pub mod linalg;
pub mod monitor;
pub mod pilot;
pub mod report;
pub mod sampler;
pub mod special;
pub mod stats;
pub mod timeseries;

pub use error::{Result, SlsError};
pub use estimation::{block_ls, BlockEstimate, ConfidenceRegion};
pub use monitor::{Monitor, MonitorVerdict};
pub use pilot::{build_pilot, PilotModel, VarianceConvention};
pub use sampler::{MethodTag, Sampler, SamplerConfig, SamplerEvent, SlsBlock, StartRule};
pub use timeseries::{ArProcessSpec, Innovation, LagVector, LagWindow, Sample, StabilityClass};
