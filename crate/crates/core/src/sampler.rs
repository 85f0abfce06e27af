//! The online block sampler.
//!
//! A [`Sampler`] alternates between two phases. While seeking a start it
//! computes the streaming leverage score `h̃ = zᵀΩ̂z` of every sample and runs
//! an independent Bernoulli trial with success probability `min(h̃, 1)` (or a
//! constant `q` for the uniform baseline). After a success it expands the
//! block one sample at a time, accumulating `‖z_i‖²` from the starting sample
//! on, and emits the block at the first index where the sum reaches the
//! information threshold `c`. The machine then resets and seeks again.
//!
//! Memory outside the active block buffer is the lag window, one scratch
//! regressor and the shared precision matrix: O(p²).

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlsError};
use crate::linalg::quad_form_slice;
use crate::pilot::PilotModel;
use crate::timeseries::{LagWindow, Sample};

pub const DEFAULT_MAX_BLOCK_LEN: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    Leverage,
    Uniform,
    FixedLength,
}

impl MethodTag {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::Leverage => "leverage",
            MethodTag::Uniform => "uniform",
            MethodTag::FixedLength => "fixed_length",
        }
    }
}

impl std::str::FromStr for MethodTag {
    type Err = SlsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leverage" | "sls" => Ok(MethodTag::Leverage),
            "uniform" => Ok(MethodTag::Uniform),
            "fixed_length" | "fixed-length" => Ok(MethodTag::FixedLength),
            other => Err(SlsError::config(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the start of a block is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StartRule {
    /// Bernoulli trial with probability `min(h̃, 1)`.
    Leverage,
    /// Bernoulli trial with constant probability `q`.
    Uniform { q: f64 },
}

impl StartRule {
    pub fn method(&self) -> MethodTag {
        match self {
            StartRule::Leverage => MethodTag::Leverage,
            StartRule::Uniform { .. } => MethodTag::Uniform,
        }
    }

    /// Uniform baseline whose start rate matches the pilot's mean capped
    /// leverage.
    pub fn matched_uniform(pilot: &PilotModel) -> Self {
        StartRule::Uniform {
            q: pilot.start_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub threshold_c: f64,
    pub seed: u64,
    #[serde(default = "default_max_block_len")]
    pub max_block_len: usize,
    /// Multiplier on `h̃` before capping; tunes the start rate.
    #[serde(default = "default_scale")]
    pub leverage_scale: f64,
}

fn default_max_block_len() -> usize {
    DEFAULT_MAX_BLOCK_LEN
}

fn default_scale() -> f64 {
    1.0
}

impl SamplerConfig {
    pub fn new(threshold_c: f64, seed: u64) -> Self {
        Self {
            threshold_c,
            seed,
            max_block_len: DEFAULT_MAX_BLOCK_LEN,
            leverage_scale: 1.0,
        }
    }

    pub fn with_max_block_len(mut self, max_block_len: usize) -> Self {
        self.max_block_len = max_block_len;
        self
    }

    pub fn with_leverage_scale(mut self, scale: f64) -> Self {
        self.leverage_scale = scale;
        self
    }

    pub fn validate(&self, order: usize) -> Result<()> {
        if !(self.threshold_c > 0.0 && self.threshold_c.is_finite()) {
            return Err(SlsError::config(format!(
                "information threshold must be positive, got {}",
                self.threshold_c
            )));
        }
        if self.max_block_len < order + 1 {
            return Err(SlsError::config(format!(
                "max_block_len {} must be at least order + 1 = {}",
                self.max_block_len,
                order + 1
            )));
        }
        if !(self.leverage_scale > 0.0 && self.leverage_scale.is_finite()) {
            return Err(SlsError::config("leverage scale must be positive"));
        }
        Ok(())
    }
}

/// Counter-based uniform generator keyed by `(seed, sample index)`, so any
/// draw can be replayed without the history that preceded it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StartRng {
    seed: u64,
}

impl StartRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Uniform draw in `[0, 1)` for `index`.
    pub fn uniform(&self, index: u64) -> f64 {
        let k = splitmix64(self.seed ^ 0x5851_f42d_4c95_7f2d);
        let bits = splitmix64(k ^ splitmix64(index.wrapping_add(0x2545_f491_4f6c_dd1d)));
        (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `zᵀ Ω̂ z`.
pub fn streaming_leverage(z: &[f64], precision: &DMatrix<f64>) -> Result<f64> {
    let p = z.len();
    if precision.nrows() != p || precision.ncols() != p {
        return Err(SlsError::config(format!(
            "regressor of length {p} against a {}x{} precision matrix",
            precision.nrows(),
            precision.ncols()
        )));
    }
    let mut acc = 0.0;
    for i in 0..p {
        let mut s = 0.0;
        for j in 0..p {
            s += precision[(i, j)] * z[j];
        }
        acc += z[i] * s;
    }
    Ok(acc.max(0.0))
}

/// Bernoulli trial with success probability `min(h, 1)` using the draw for
/// `index`.
pub fn bernoulli_start(h: f64, rng: &StartRng, index: u64) -> bool {
    rng.uniform(index) < h.min(1.0)
}

/// One selected block: `values` holds `[X_{start-p}, ..., X_{stop}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlsBlock {
    pub start: u64,
    pub stop: u64,
    pub order: usize,
    pub values: Vec<f64>,
    pub acc_info: f64,
    pub method: MethodTag,
}

impl SlsBlock {
    /// Number of regression rows, `stop − start + 1`.
    pub fn len(&self) -> usize {
        (self.stop - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() <= self.order
    }

    /// Regression pairs `(z_i, X_i)` for `i = start..=stop`, with `z_i` most
    /// recent lag first.
    pub fn pairs(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        let p = self.order;
        (p..self.values.len()).map(move |t| {
            let z = (1..=p).map(|k| self.values[t - k]).collect();
            (z, self.values[t])
        })
    }

    /// `‖z_i‖²` for each row.
    pub fn info_increments(&self) -> Vec<f64> {
        let p = self.order;
        (p..self.values.len())
            .map(|t| (1..=p).map(|k| self.values[t - k].powi(2)).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    None,
    BlockStarted {
        start: u64,
    },
    BlockCompleted(SlsBlock),
    /// The active block outgrew `max_block_len` and was discarded.
    SafeguardAbort {
        start: u64,
        buffered: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerEvent {
    pub index: u64,
    /// Streaming leverage score of this sample (scaled, uncapped).
    pub leverage: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    SeekingStart,
    Expanding,
}

pub struct Sampler {
    pilot: Arc<PilotModel>,
    cfg: SamplerConfig,
    rule: StartRule,
    rng: StartRng,
    lags: LagWindow,
    z: Vec<f64>,
    phase: Phase,
    block_start: Option<u64>,
    acc_info: f64,
    block: Vec<f64>,
}

impl Sampler {
    pub fn new(pilot: Arc<PilotModel>, cfg: SamplerConfig, rule: StartRule) -> Result<Self> {
        let p = pilot.order();
        cfg.validate(p)?;
        if let StartRule::Uniform { q } = rule {
            if !(0.0..=1.0).contains(&q) {
                return Err(SlsError::config(format!(
                    "uniform start probability must lie in [0, 1], got {q}"
                )));
            }
        }
        Ok(Self {
            rng: StartRng::new(cfg.seed),
            lags: LagWindow::new(p)?,
            z: vec![0.0; p],
            pilot,
            cfg,
            rule,
            phase: Phase::SeekingStart,
            block_start: None,
            acc_info: 0.0,
            block: Vec::new(),
        })
    }

    pub fn pilot(&self) -> &PilotModel {
        &self.pilot
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn rule(&self) -> StartRule {
        self.rule
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn block_start(&self) -> Option<u64> {
        self.block_start
    }

    pub fn acc_info(&self) -> f64 {
        self.acc_info
    }

    /// Feeds a sample into the lag window only (pilot history).
    pub fn prime(&mut self, x: Sample) -> Result<()> {
        if self.phase == Phase::Expanding {
            return Err(SlsError::config(
                "cannot prime a sampler while a block is open",
            ));
        }
        self.lags.push_value(x)
    }

    /// Processes one sample. Returns `None` while the lag window is warming
    /// up; rejected samples leave the state unchanged.
    pub fn step(&mut self, x: Sample) -> Result<Option<SamplerEvent>> {
        if !self.lags.is_warm() {
            self.lags.push_value(x)?;
            return Ok(None);
        }
        if !x.value.is_finite() {
            return Err(SlsError::data(format!(
                "non-finite value {} at index {}",
                x.value, x.index
            )));
        }
        if let Some(expected) = self.lags.next_index() {
            if x.index != expected {
                return Err(SlsError::data(format!(
                    "sample index {} does not follow {}",
                    x.index,
                    expected - 1
                )));
            }
        }
        self.lags.fill_regressor(&mut self.z);
        let leverage = self.cfg.leverage_scale
            * quad_form_slice(self.pilot.precision_row_major(), &self.z).max(0.0);
        let info: f64 = self.z.iter().map(|v| v * v).sum();

        let kind = match self.phase {
            Phase::SeekingStart => {
                let prob = match self.rule {
                    StartRule::Leverage => leverage,
                    StartRule::Uniform { q } => q,
                };
                if bernoulli_start(prob, &self.rng, x.index) {
                    self.phase = Phase::Expanding;
                    self.block_start = Some(x.index);
                    self.block.extend(self.z.iter().rev());
                    self.extend(x, info)
                } else {
                    EventKind::None
                }
            }
            Phase::Expanding => self.extend(x, info),
        };
        self.lags.push_value(x)?;
        Ok(Some(SamplerEvent {
            index: x.index,
            leverage,
            kind,
        }))
    }

    fn extend(&mut self, x: Sample, info: f64) -> EventKind {
        let start = self.block_start.expect("expanding without a start");
        self.block.push(x.value);
        self.acc_info += info;
        if self.block.len() > self.cfg.max_block_len {
            let buffered = self.block.len();
            self.reset();
            return EventKind::SafeguardAbort { start, buffered };
        }
        if self.acc_info >= self.cfg.threshold_c {
            let block = SlsBlock {
                start,
                stop: x.index,
                order: self.pilot.order(),
                values: std::mem::take(&mut self.block),
                acc_info: self.acc_info,
                method: self.rule.method(),
            };
            self.reset();
            return EventKind::BlockCompleted(block);
        }
        if x.index == start {
            EventKind::BlockStarted { start }
        } else {
            EventKind::None
        }
    }

    fn reset(&mut self) {
        self.phase = Phase::SeekingStart;
        self.block_start = None;
        self.acc_info = 0.0;
        self.block = Vec::new();
    }

    /// Bytes held by the sampler excluding the active block buffer.
    pub fn resident_bytes(&self) -> usize {
        let p = self.pilot.order();
        std::mem::size_of::<Self>()
            + self.lags.heap_bytes()
            + self.z.capacity() * std::mem::size_of::<f64>()
            + std::mem::size_of::<PilotModel>()
            // precision is stored as a matrix and as a row-major copy
            + 2 * p * p * std::mem::size_of::<f64>()
            + p * std::mem::size_of::<f64>()
    }

    /// Capacity of the active block buffer in bytes.
    pub fn block_buffer_bytes(&self) -> usize {
        self.block.capacity() * std::mem::size_of::<f64>()
    }
}

/// Deterministic block `[X_{n0}, ..., X_{n0+len-1}]` (0-based positions),
/// i.e. the `len` samples right after a pilot of size `n0`.
pub fn fixed_length_block(stream: &[f64], n0: usize, len: usize, order: usize) -> Result<SlsBlock> {
    if len == 0 || order == 0 {
        return Err(SlsError::config("block length and order must be positive"));
    }
    if n0 < order {
        return Err(SlsError::config(format!(
            "block start {n0} leaves fewer than {order} lags"
        )));
    }
    if stream.len() < n0 + len {
        return Err(SlsError::data(format!(
            "stream of {} samples is shorter than n0 + len = {}",
            stream.len(),
            n0 + len
        )));
    }
    let values = stream[n0 - order..n0 + len].to_vec();
    let mut block = SlsBlock {
        start: n0 as u64,
        stop: (n0 + len - 1) as u64,
        order,
        values,
        acc_info: 0.0,
        method: MethodTag::FixedLength,
    };
    block.acc_info = block.info_increments().iter().sum();
    Ok(block)
}
