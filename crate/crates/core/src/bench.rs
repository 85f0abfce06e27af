//! Monte Carlo harness: simulation grids comparing leverage, uniform and
//! fixed-length blocks, plus normality, coverage, efficiency and
//! pilot-size experiments.
//!
//! Every replicate draws its own seed from `(seed_base, replicate)` and can
//! be replayed alone. All methods of one replicate see the same stream.
//! Replicates run in parallel; results are gathered in replicate order.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlsError};
use crate::estimation::{
    block_ls, confidence_region, normalized_error, pivot_chi2, threshold_for_width, BlockEstimate,
};
use crate::pilot::{build_pilot_with, PilotModel, PilotOptions, VarianceConvention};
use crate::sampler::{
    fixed_length_block, splitmix64, EventKind, MethodTag, Sampler, SamplerConfig, SlsBlock,
    StartRule, DEFAULT_MAX_BLOCK_LEN,
};
use crate::special::{chi2_cdf, normal_cdf};
use crate::stats::{ks_test, mean, median, KsResult};
use crate::timeseries::{ArProcessSpec, ArSimulator, Innovation, Sample};

const CHUNK: usize = 8192;

fn default_p_max() -> usize {
    5
}

fn default_fixed_len() -> usize {
    200
}

fn default_scale() -> f64 {
    1.0
}

fn default_max_block_len() -> usize {
    DEFAULT_MAX_BLOCK_LEN
}

fn all_methods() -> Vec<MethodTag> {
    vec![
        MethodTag::Leverage,
        MethodTag::Uniform,
        MethodTag::FixedLength,
    ]
}

/// One cell of an experiment: a process, a threshold and the replicate plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub process: ArProcessSpec,
    #[serde(default = "all_methods")]
    pub methods: Vec<MethodTag>,
    pub threshold_c: f64,
    pub n0: usize,
    /// Order used for the pilot; `None` selects it by BIC up to `p_max`.
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default = "default_p_max")]
    pub p_max: usize,
    pub n_rep: usize,
    /// Post-pilot samples generated per replicate before giving up;
    /// `None` means `max(50 c, 10⁶)`.
    #[serde(default)]
    pub stream_cap: Option<usize>,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_fixed_len")]
    pub fixed_len: usize,
    /// Start probability of the uniform baseline; `None` matches the pilot's
    /// mean capped leverage.
    #[serde(default)]
    pub uniform_q: Option<f64>,
    #[serde(default = "default_scale")]
    pub leverage_scale: f64,
    #[serde(default = "default_max_block_len")]
    pub max_block_len: usize,
    /// Record wall-clock seconds. Off by default so records are reproducible.
    #[serde(default)]
    pub timing: bool,
}

impl ExperimentSpec {
    pub fn new(process: ArProcessSpec, threshold_c: f64, n0: usize, n_rep: usize) -> Self {
        Self {
            process,
            methods: all_methods(),
            threshold_c,
            n0,
            order: None,
            p_max: default_p_max(),
            n_rep,
            stream_cap: None,
            seed_base: 0,
            fixed_len: default_fixed_len(),
            uniform_q: None,
            leverage_scale: 1.0,
            max_block_len: DEFAULT_MAX_BLOCK_LEN,
            timing: false,
        }
    }

    pub fn with_methods(mut self, methods: Vec<MethodTag>) -> Self {
        self.methods = methods;
        self
    }

    pub fn with_known_order(mut self) -> Self {
        self.order = Some(self.process.order());
        self
    }

    pub fn with_seed_base(mut self, seed_base: u64) -> Self {
        self.seed_base = seed_base;
        self
    }

    pub fn stream_cap(&self) -> usize {
        self.stream_cap
            .unwrap_or_else(|| ((50.0 * self.threshold_c).ceil() as usize).max(1_000_000))
    }

    pub fn pilot_options(&self) -> PilotOptions {
        match self.order {
            Some(p) => PilotOptions::fixed(p),
            None => PilotOptions::bic(self.p_max),
        }
    }

    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        replicate_seed(self.seed_base, replicate)
    }

    pub fn validate(&self) -> Result<()> {
        self.process.validate()?;
        if self.n_rep == 0 {
            return Err(SlsError::config("n_rep must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(SlsError::config("no methods selected"));
        }
        if !(self.threshold_c > 0.0 && self.threshold_c.is_finite()) {
            return Err(SlsError::config(format!(
                "threshold_c must be positive and finite, got {}",
                self.threshold_c
            )));
        }
        let order = self.order.unwrap_or_else(|| self.process.order());
        if order == 0 {
            return Err(SlsError::config("pilot order must be at least 1"));
        }
        if self.n0 <= 10 * order {
            return Err(SlsError::config(format!(
                "n0 = {} must exceed 10·p = {}",
                self.n0,
                10 * order
            )));
        }
        if self.order.is_none() && self.n0 <= self.p_max + 10 {
            return Err(SlsError::config(format!(
                "n0 = {} too small for BIC up to p_max = {}",
                self.n0, self.p_max
            )));
        }
        if self.fixed_len == 0 {
            return Err(SlsError::config("fixed_len must be positive"));
        }
        if let Some(q) = self.uniform_q {
            if !(0.0..=1.0).contains(&q) {
                return Err(SlsError::config(format!("uniform_q {q} outside [0, 1]")));
            }
        }
        SamplerConfig::new(self.threshold_c, 0)
            .with_max_block_len(self.max_block_len)
            .with_leverage_scale(self.leverage_scale)
            .validate(order)
    }
}

pub fn replicate_seed(seed_base: u64, replicate: usize) -> u64 {
    splitmix64(seed_base ^ splitmix64(replicate as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicateStatus {
    Ok,
    /// The sampler safeguard discarded an oversized block.
    Aborted,
    /// The stream cap was reached before a block completed.
    NoBlock,
    /// The pilot fit failed (for example a degenerate pilot).
    PilotFailed,
}

impl ReplicateStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ReplicateStatus::Ok => "ok",
            ReplicateStatus::Aborted => "aborted",
            ReplicateStatus::NoBlock => "no_block",
            ReplicateStatus::PilotFailed => "pilot_failed",
        }
    }
}

/// One replicate-method outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub cell: usize,
    pub beta: Vec<f64>,
    pub threshold_c: f64,
    pub n0: usize,
    pub method: MethodTag,
    pub replicate: usize,
    pub replicate_seed: u64,
    pub status: ReplicateStatus,
    pub order: Option<usize>,
    pub beta_hat: Vec<f64>,
    /// `‖β̂ − β‖²`, zero-padding the shorter vector when orders differ.
    pub mse: Option<f64>,
    pub coord_sq_err: Vec<f64>,
    pub block_len: Option<usize>,
    pub acc_info: Option<f64>,
    /// Post-pilot samples consumed until the block completed or the run
    /// ended.
    pub samples_processed: u64,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: MethodTag,
    pub n_rep: usize,
    pub successes: usize,
    pub failures: usize,
    pub median_mse: Option<f64>,
    pub mean_mse: Option<f64>,
    pub median_block_len: Option<f64>,
    pub median_samples_processed: Option<f64>,
    pub median_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub cell: usize,
    pub spec: ExperimentSpec,
    pub records: Vec<ReplicateRecord>,
    pub summaries: Vec<MethodSummary>,
}

impl ExperimentReport {
    pub fn records_for(&self, method: MethodTag) -> impl Iterator<Item = &ReplicateRecord> {
        self.records.iter().filter(move |r| r.method == method)
    }

    pub fn summary(&self, method: MethodTag) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn mse(&self, method: MethodTag) -> Vec<f64> {
        self.records_for(method).filter_map(|r| r.mse).collect()
    }

    pub fn block_lens(&self, method: MethodTag) -> Vec<f64> {
        self.records_for(method)
            .filter_map(|r| r.block_len)
            .map(|l| l as f64)
            .collect()
    }
}

fn opt_median(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| median(xs))
}

fn summarize(method: MethodTag, records: &[ReplicateRecord]) -> MethodSummary {
    let rs: Vec<&ReplicateRecord> = records.iter().filter(|r| r.method == method).collect();
    let mse: Vec<f64> = rs.iter().filter_map(|r| r.mse).collect();
    let lens: Vec<f64> = rs
        .iter()
        .filter_map(|r| r.block_len)
        .map(|l| l as f64)
        .collect();
    let processed: Vec<f64> = rs
        .iter()
        .filter(|r| r.status == ReplicateStatus::Ok)
        .map(|r| r.samples_processed as f64)
        .collect();
    let secs: Vec<f64> = rs.iter().filter_map(|r| r.seconds).collect();
    let successes = rs
        .iter()
        .filter(|r| r.status == ReplicateStatus::Ok)
        .count();
    MethodSummary {
        method,
        n_rep: rs.len(),
        successes,
        failures: rs.len() - successes,
        median_mse: opt_median(&mse),
        mean_mse: (!mse.is_empty()).then(|| mean(&mse)),
        median_block_len: opt_median(&lens),
        median_samples_processed: opt_median(&processed),
        median_seconds: opt_median(&secs),
    }
}

/// A seeded stream split into the pilot prefix and the live remainder.
struct Stream {
    pilot: Vec<f64>,
    sim: ArSimulator,
}

impl Stream {
    fn open(process: &ArProcessSpec, seed: u64, n0: usize) -> Result<Self> {
        let mut sim = ArSimulator::new(&process.clone().with_seed(seed))?;
        let mut pilot = vec![0.0; n0];
        sim.fill(&mut pilot);
        Ok(Self { pilot, sim })
    }
}

struct BlockOutcome {
    block: SlsBlock,
    est: BlockEstimate,
    samples_processed: u64,
    seconds: f64,
}

enum SeekResult {
    Done(BlockOutcome),
    Failed(ReplicateStatus, u64),
}

/// Runs one sampler over the live stream until its first block completes.
/// Timing covers sampling and the block fit, not stream generation.
#[allow(clippy::too_many_arguments)]
fn seek_block(
    stream: &mut Stream,
    pilot: Arc<PilotModel>,
    rule: StartRule,
    threshold_c: f64,
    sampler_seed: u64,
    spec: &ExperimentSpec,
) -> Result<SeekResult> {
    let cfg = SamplerConfig::new(threshold_c, sampler_seed)
        .with_max_block_len(spec.max_block_len)
        .with_leverage_scale(spec.leverage_scale);
    let mut sampler = Sampler::new(pilot, cfg, rule)?;
    for (i, &v) in stream.pilot.iter().enumerate() {
        sampler.prime(Sample::new(i as u64, v))?;
    }
    let cap = spec.stream_cap();
    let mut buf = vec![0.0; CHUNK];
    let mut next = stream.pilot.len() as u64;
    let mut processed = 0usize;
    let mut seconds = 0.0;
    while processed < cap {
        let m = CHUNK.min(cap - processed);
        stream.sim.fill(&mut buf[..m]);
        let t0 = spec.timing.then(Instant::now);
        for &v in &buf[..m] {
            let event = sampler.step(Sample::new(next, v))?;
            next += 1;
            processed += 1;
            match event.map(|e| e.kind) {
                Some(EventKind::BlockCompleted(block)) => {
                    let est = block_ls(&block, VarianceConvention::default());
                    if let Some(t0) = t0 {
                        seconds += t0.elapsed().as_secs_f64();
                    }
                    return Ok(SeekResult::Done(BlockOutcome {
                        block,
                        est,
                        samples_processed: processed as u64,
                        seconds,
                    }));
                }
                Some(EventKind::SafeguardAbort { .. }) => {
                    return Ok(SeekResult::Failed(
                        ReplicateStatus::Aborted,
                        processed as u64,
                    ));
                }
                _ => {}
            }
        }
        if let Some(t0) = t0 {
            seconds += t0.elapsed().as_secs_f64();
        }
    }
    Ok(SeekResult::Failed(
        ReplicateStatus::NoBlock,
        processed as u64,
    ))
}

fn fixed_block(stream: &mut Stream, order: usize, spec: &ExperimentSpec) -> Result<BlockOutcome> {
    let n0 = stream.pilot.len();
    let mut values = stream.pilot[n0 - order..].to_vec();
    let start = values.len();
    values.resize(order + spec.fixed_len, 0.0);
    stream.sim.fill(&mut values[start..]);
    let t0 = spec.timing.then(Instant::now);
    let mut block = fixed_length_block(&values, order, spec.fixed_len, order)?;
    block.start += (n0 - order) as u64;
    block.stop += (n0 - order) as u64;
    let est = block_ls(&block, VarianceConvention::default());
    let seconds = t0.map_or(0.0, |t| t.elapsed().as_secs_f64());
    Ok(BlockOutcome {
        block,
        est,
        samples_processed: spec.fixed_len as u64,
        seconds,
    })
}

fn squared_errors(beta_hat: &[f64], beta: &[f64]) -> Vec<f64> {
    let k = beta_hat.len().max(beta.len());
    (0..k)
        .map(|i| {
            let a = beta_hat.get(i).copied().unwrap_or(0.0);
            let b = beta.get(i).copied().unwrap_or(0.0);
            (a - b).powi(2)
        })
        .collect()
}

fn method_seed(replicate_seed: u64, method: MethodTag) -> u64 {
    splitmix64(replicate_seed ^ (method as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Runs every method of one replicate on the same seeded stream.
pub fn run_replicate(
    spec: &ExperimentSpec,
    cell: usize,
    replicate: usize,
) -> Result<Vec<ReplicateRecord>> {
    let seed = spec.replicate_seed(replicate);
    let beta = &spec.process.coeffs;
    let base = ReplicateRecord {
        cell,
        beta: beta.clone(),
        threshold_c: spec.threshold_c,
        n0: spec.n0,
        method: MethodTag::Leverage,
        replicate,
        replicate_seed: seed,
        status: ReplicateStatus::PilotFailed,
        order: None,
        beta_hat: Vec::new(),
        mse: None,
        coord_sq_err: Vec::new(),
        block_len: None,
        acc_info: None,
        samples_processed: 0,
        seconds: None,
    };
    let probe = Stream::open(&spec.process, seed, spec.n0)?;
    let pilot = match build_pilot_with(&probe.pilot, &spec.pilot_options()) {
        Ok(p) => Arc::new(p),
        Err(SlsError::Config(msg)) => return Err(SlsError::Config(msg)),
        Err(_) => {
            return Ok(spec
                .methods
                .iter()
                .map(|&method| ReplicateRecord {
                    method,
                    ..base.clone()
                })
                .collect())
        }
    };
    let order = pilot.order();
    let mut out = Vec::with_capacity(spec.methods.len());
    for &method in &spec.methods {
        let mut stream = Stream::open(&spec.process, seed, spec.n0)?;
        let result = match method {
            MethodTag::FixedLength => SeekResult::Done(fixed_block(&mut stream, order, spec)?),
            MethodTag::Leverage | MethodTag::Uniform => {
                let rule = match method {
                    MethodTag::Leverage => StartRule::Leverage,
                    _ => StartRule::Uniform {
                        q: spec.uniform_q.unwrap_or_else(|| {
                            pilot.matched_start_rate(&stream.pilot, spec.leverage_scale)
                        }),
                    },
                };
                seek_block(
                    &mut stream,
                    pilot.clone(),
                    rule,
                    spec.threshold_c,
                    method_seed(seed, method),
                    spec,
                )?
            }
        };
        let mut rec = ReplicateRecord {
            method,
            order: Some(order),
            ..base.clone()
        };
        match result {
            SeekResult::Done(o) => {
                let beta_hat: Vec<f64> = o.est.beta_hat.iter().copied().collect();
                let errs = squared_errors(&beta_hat, beta);
                rec.status = ReplicateStatus::Ok;
                rec.mse = Some(errs.iter().sum());
                rec.coord_sq_err = errs;
                rec.beta_hat = beta_hat;
                rec.block_len = Some(o.block.len());
                rec.acc_info = Some(o.block.acc_info);
                rec.samples_processed = o.samples_processed;
                rec.seconds = spec.timing.then_some(o.seconds);
            }
            SeekResult::Failed(status, processed) => {
                rec.status = status;
                rec.samples_processed = processed;
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Runs all replicates of one cell.
pub fn run_experiment(spec: &ExperimentSpec, cell: usize) -> Result<ExperimentReport> {
    spec.validate()?;
    let per_rep: Vec<Vec<ReplicateRecord>> = (0..spec.n_rep)
        .into_par_iter()
        .map(|r| run_replicate(spec, cell, r))
        .collect::<Result<_>>()?;
    let records: Vec<ReplicateRecord> = per_rep.into_iter().flatten().collect();
    let summaries = spec
        .methods
        .iter()
        .map(|&m| summarize(m, &records))
        .collect();
    Ok(ExperimentReport {
        cell,
        spec: spec.clone(),
        records,
        summaries,
    })
}

pub fn run_grid(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    run_experiment(spec, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub beta: Vec<f64>,
    pub c: f64,
}

/// Declarative grid: shared settings plus a list of `(β, c)` cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub cells: Vec<GridCell>,
    pub innovation: Innovation,
    pub n0: usize,
    pub n_rep: usize,
    #[serde(default = "all_methods")]
    pub methods: Vec<MethodTag>,
    #[serde(default = "default_p_max")]
    pub p_max: usize,
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub stream_cap: Option<usize>,
    #[serde(default = "default_fixed_len")]
    pub fixed_len: usize,
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub uniform_q: Option<f64>,
    #[serde(default = "default_scale")]
    pub leverage_scale: f64,
    #[serde(default = "default_max_block_len")]
    pub max_block_len: usize,
    #[serde(default)]
    pub timing: bool,
}

impl GridConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SlsError::config(format!("grid config: {e}")))
    }

    /// Per-cell specs; each cell gets its own seed base.
    pub fn specs(&self) -> Vec<ExperimentSpec> {
        self.cells
            .iter()
            .enumerate()
            .map(|(k, cell)| {
                let mut process = ArProcessSpec::new(cell.beta.clone(), self.innovation, 0);
                process.burn_in = self.burn_in;
                ExperimentSpec {
                    process,
                    methods: self.methods.clone(),
                    threshold_c: cell.c,
                    n0: self.n0,
                    order: self.order,
                    p_max: self.p_max,
                    n_rep: self.n_rep,
                    stream_cap: self.stream_cap,
                    seed_base: splitmix64(self.seed_base.wrapping_add(k as u64)),
                    fixed_len: self.fixed_len,
                    uniform_q: self.uniform_q,
                    leverage_scale: self.leverage_scale,
                    max_block_len: self.max_block_len,
                    timing: self.timing,
                }
            })
            .collect()
    }

    pub fn run(&self) -> Result<Vec<ExperimentReport>> {
        if self.cells.is_empty() {
            return Err(SlsError::config("grid has no cells"));
        }
        let specs = self.specs();
        for s in &specs {
            s.validate()?;
        }
        specs
            .iter()
            .enumerate()
            .map(|(k, s)| run_experiment(s, k))
            .collect()
    }
}

pub const CSV_HEADER: &str = "cell,beta,threshold_c,n0,method,replicate,replicate_seed,status,order,beta_hat,mse,coord_sq_err,block_len,acc_info,samples_processed,seconds";

fn join(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn opt<T: std::fmt::Debug>(x: Option<T>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

/// One CSV row per replicate-method; vector fields are `;`-separated.
pub fn write_records_csv<W: Write>(mut out: W, reports: &[ExperimentReport]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for rep in reports {
        for r in &rep.records {
            writeln!(
                out,
                "{},{},{:?},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.cell,
                join(&r.beta),
                r.threshold_c,
                r.n0,
                r.method,
                r.replicate,
                r.replicate_seed,
                r.status.as_str(),
                opt(r.order),
                join(&r.beta_hat),
                opt(r.mse),
                join(&r.coord_sq_err),
                opt(r.block_len),
                opt(r.acc_info),
                r.samples_processed,
                opt(r.seconds),
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub beta: Vec<f64>,
    pub threshold_c: f64,
    pub n_rep: usize,
    pub methods: Vec<MethodSummary>,
}

pub fn grid_summary(reports: &[ExperimentReport]) -> Vec<CellSummary> {
    reports
        .iter()
        .map(|r| CellSummary {
            cell: r.cell,
            beta: r.spec.process.coeffs.clone(),
            threshold_c: r.spec.threshold_c,
            n_rep: r.spec.n_rep,
            methods: r.summaries.clone(),
        })
        .collect()
}

/// Pilot and first block of one replicate; `None` records a failure.
type ReplicateBlock = Option<(Arc<PilotModel>, BlockOutcome)>;

/// Draws the first leverage block of every replicate, with the pilot order
/// fixed to the true order.
fn leverage_blocks(
    spec: &ExperimentSpec,
    threshold: impl Fn(&PilotModel) -> Result<f64> + Sync,
) -> Result<Vec<ReplicateBlock>> {
    spec.validate()?;
    let opts = PilotOptions::fixed(spec.process.order());
    (0..spec.n_rep)
        .into_par_iter()
        .map(|r| {
            let seed = spec.replicate_seed(r);
            let mut stream = Stream::open(&spec.process, seed, spec.n0)?;
            let pilot = match build_pilot_with(&stream.pilot, &opts) {
                Ok(p) => Arc::new(p),
                Err(SlsError::Config(m)) => return Err(SlsError::Config(m)),
                Err(_) => return Ok(None),
            };
            let c = threshold(&pilot)?;
            let seed = method_seed(seed, MethodTag::Leverage);
            Ok(
                match seek_block(
                    &mut stream,
                    pilot.clone(),
                    StartRule::Leverage,
                    c,
                    seed,
                    spec,
                )? {
                    SeekResult::Done(o) => Some((pilot, o)),
                    SeekResult::Failed(..) => None,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    /// KS of each coordinate of `(ΓᵀΓ)^{1/2}(β̂ − β)/σ` against N(0, 1).
    pub coords: Vec<KsResult>,
    /// KS of the pivot `(β̂ − β)ᵀΓᵀΓ(β̂ − β)/σ²` against χ²_p.
    pub pivot: KsResult,
    pub successes: usize,
    pub failures: usize,
}

impl NormalityReport {
    pub fn passes(&self, level: f64) -> bool {
        self.coords.iter().all(|k| k.passes(level)) && self.pivot.passes(level)
    }
}

/// Normalized errors and pivots across replicates, with the true σ.
pub fn normality_experiment(spec: &ExperimentSpec) -> Result<NormalityReport> {
    let p = spec.process.order();
    let sigma = spec.process.innovation.std_dev();
    let blocks = leverage_blocks(spec, |_| Ok(spec.threshold_c))?;
    let mut coords = vec![Vec::new(); p];
    let mut pivots = Vec::new();
    for (_, o) in blocks.iter().flatten() {
        let v = normalized_error(&o.est, &spec.process.coeffs)?;
        for k in 0..p {
            coords[k].push(v[k] / sigma);
        }
        pivots.push(pivot_chi2(&o.est, &spec.process.coeffs, sigma * sigma)?);
    }
    let successes = pivots.len();
    Ok(NormalityReport {
        coords: coords.iter().map(|c| ks_test(c, normal_cdf)).collect(),
        pivot: ks_test(&pivots, |x| chi2_cdf(x, p as u32)),
        successes,
        failures: spec.n_rep - successes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: usize,
    pub successes: usize,
    pub failures: usize,
    pub coverage: f64,
    pub mean_threshold: f64,
}

/// Fixed-width regions with `c = σ̂₀² a² / d²` set from each replicate's
/// pilot; `spec.threshold_c` is ignored.
pub fn coverage_experiment(spec: &ExperimentSpec, d: f64, alpha: f64) -> Result<CoverageReport> {
    let p = spec.process.order();
    let blocks = leverage_blocks(spec, |pilot| {
        threshold_for_width(pilot.sigma0_sq(), alpha, d, p)
    })?;
    let mut covered = 0;
    let mut thresholds = Vec::new();
    for (pilot, o) in blocks.iter().flatten() {
        let region = confidence_region(&o.est, d, alpha)?;
        covered += region.contains(&spec.process.coeffs) as usize;
        thresholds.push(threshold_for_width(pilot.sigma0_sq(), alpha, d, p)?);
    }
    let successes = thresholds.len();
    Ok(CoverageReport {
        covered,
        successes,
        failures: spec.n_rep - successes,
        coverage: covered as f64 / successes.max(1) as f64,
        mean_threshold: mean(&thresholds),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub successes: usize,
    pub failures: usize,
    pub mean_len_over_c: f64,
    pub mean_acc_info_over_c: f64,
    /// `mean(len)·(1 − β²)/(c)` for scalar processes with σ = 1 scaling.
    pub mean_scaled_len: Option<f64>,
    /// Blocks violating `c ≤ acc_info ≤ c + max‖z‖²`.
    pub overshoot_violations: usize,
}

pub fn efficiency_experiment(spec: &ExperimentSpec) -> Result<EfficiencyReport> {
    let c = spec.threshold_c;
    let sigma_sq = spec.process.innovation.std_dev().powi(2);
    let blocks = leverage_blocks(spec, |_| Ok(c))?;
    let mut lens = Vec::new();
    let mut accs = Vec::new();
    let mut violations = 0;
    for (_, o) in blocks.iter().flatten() {
        let max_inc = o.block.info_increments().into_iter().fold(0.0, f64::max);
        if !(o.block.acc_info >= c && o.block.acc_info <= c + max_inc) {
            violations += 1;
        }
        lens.push(o.block.len() as f64 / c);
        accs.push(o.block.acc_info / c);
    }
    let successes = lens.len();
    let scaled = match spec.process.coeffs.as_slice() {
        [b] => Some(mean(&lens) * (1.0 - b * b) / sigma_sq),
        _ => None,
    };
    Ok(EfficiencyReport {
        successes,
        failures: spec.n_rep - successes,
        mean_len_over_c: mean(&lens),
        mean_acc_info_over_c: mean(&accs),
        mean_scaled_len: scaled,
        overshoot_violations: violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotSensitivityRow {
    pub n0: usize,
    pub median_mse: Option<f64>,
    pub mse: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotSensitivity {
    pub rows: Vec<PilotSensitivityRow>,
    /// max / min of the per-n0 median MSE.
    pub max_min_ratio: Option<f64>,
}

/// Leverage-only reruns varying `n0`; replicate seeds do not depend on `n0`.
pub fn pilot_sensitivity(base: &ExperimentSpec, n0_grid: &[usize]) -> Result<PilotSensitivity> {
    let mut rows = Vec::with_capacity(n0_grid.len());
    for &n0 in n0_grid {
        let spec = ExperimentSpec {
            n0,
            methods: vec![MethodTag::Leverage],
            ..base.clone()
        };
        let rep = run_experiment(&spec, 0)?;
        rows.push(PilotSensitivityRow {
            n0,
            median_mse: rep.summary(MethodTag::Leverage).and_then(|s| s.median_mse),
            mse: rep.records.iter().map(|r| r.mse).collect(),
        });
    }
    let medians: Vec<f64> = rows.iter().filter_map(|r| r.median_mse).collect();
    let max_min_ratio = (medians.len() == rows.len() && !medians.is_empty()).then(|| {
        medians.iter().cloned().fold(f64::MIN, f64::max)
            / medians.iter().cloned().fold(f64::MAX, f64::min)
    });
    Ok(PilotSensitivity {
        rows,
        max_min_ratio,
    })
}
