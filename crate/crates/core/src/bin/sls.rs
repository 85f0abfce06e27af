use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sls::bench::{grid_summary, write_records_csv, GridConfig};
use sls::io::{write_stream, SampleReader, StreamFormat, StreamSource};
use sls::monitor::{Monitor, MonitorStep, DEFAULT_ALPHA};
use sls::pilot::{build_pilot_with, PilotOptions};
use sls::report::{config_hash, BlockRecord, JsonlWriter, Payload, ReportRecord};
use sls::sampler::{EventKind, DEFAULT_MAX_BLOCK_LEN};
use sls::special::{chi2_quantile, normal_quantile};
use sls::timeseries::{ArSimulator, Sample};
use sls::{
    block_ls, ArProcessSpec, Innovation, PilotModel, Result, Sampler, SamplerConfig, SlsError,
    StartRule, VarianceConvention,
};

#[derive(Parser)]
#[command(
    name = "sls",
    version,
    about = "Sequential leveraging sampling for streaming AR(p) series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an AR(p) stream and write it to a file.
    Simulate(SimulateArgs),
    /// Fit the pilot model on the first n0 samples.
    Pilot(PilotArgs),
    /// Select blocks from a stream and emit block records.
    Sample(SampleArgs),
    /// Score every block against the pilot and emit verdicts.
    Monitor(MonitorArgs),
    /// Run a simulation grid from a JSON config.
    Bench(BenchArgs),
    /// Print a chi-square or standard normal quantile.
    Quantile(QuantileArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum FormatArg {
    Csv,
    F32,
    F64,
}

impl From<FormatArg> for StreamFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => StreamFormat::Csv,
            FormatArg::F32 => StreamFormat::RawF32le,
            FormatArg::F64 => StreamFormat::RawF64le,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum InnovationArg {
    Gaussian,
    T,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// AR coefficients, most recent lag first (comma separated).
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        required = true
    )]
    beta: Vec<f64>,
    #[arg(long, value_enum, default_value = "gaussian")]
    innovation: InnovationArg,
    /// Innovation standard deviation.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Degrees of freedom for t innovations.
    #[arg(long, default_value_t = 4.0)]
    df: f64,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long, env = "SLS_SEED", default_value_t = 0)]
    seed: u64,
    #[serde(skip)]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args, Serialize)]
struct InputArgs {
    /// Input stream; `-` or omitted reads stdin.
    #[serde(skip)]
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

impl InputArgs {
    fn source(&self) -> StreamSource {
        let path = self.input.clone().filter(|p| p.as_os_str() != "-");
        let format = match (self.format, &path) {
            (Some(f), _) => f.into(),
            (None, Some(p)) => StreamFormat::from_path(p),
            (None, None) => StreamFormat::Csv,
        };
        StreamSource {
            format,
            path,
            sample_rate_hz: None,
            channel: String::new(),
        }
    }
}

#[derive(Args, Serialize)]
struct PilotSpecArgs {
    /// Pilot size; the first n0 samples of the input fit the pilot.
    #[arg(long)]
    n0: Option<usize>,
    /// Largest order tried by BIC.
    #[arg(long, default_value_t = 5)]
    pmax: usize,
    /// Fixed order (skips BIC).
    #[arg(long)]
    order: Option<usize>,
    /// Pilot JSONL file from `sls pilot`; the whole input is then live.
    #[serde(skip)]
    #[arg(long, conflicts_with = "n0")]
    pilot: Option<PathBuf>,
}

impl PilotSpecArgs {
    fn options(&self) -> PilotOptions {
        match self.order {
            Some(p) => PilotOptions::fixed(p),
            None => PilotOptions::bic(self.pmax),
        }
    }
}

#[derive(Args, Serialize)]
struct PilotArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    n0: usize,
    #[arg(long, default_value_t = 5)]
    pmax: usize,
    #[arg(long)]
    order: Option<usize>,
    #[serde(skip)]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum MethodArg {
    Leverage,
    Uniform,
}

#[derive(Args, Serialize)]
struct SamplerArgs {
    /// Information threshold c.
    #[arg(long)]
    c: f64,
    #[arg(long, env = "SLS_SEED", default_value_t = 0)]
    seed: u64,
    /// Multiplier on the streaming leverage before capping at 1.
    #[arg(long, default_value_t = 1.0)]
    leverage_scale: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_BLOCK_LEN)]
    max_block_len: usize,
}

impl SamplerArgs {
    fn config(&self) -> SamplerConfig {
        SamplerConfig::new(self.c, self.seed)
            .with_leverage_scale(self.leverage_scale)
            .with_max_block_len(self.max_block_len)
    }
}

#[derive(Args, Serialize)]
struct SampleArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    pilot: PilotSpecArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, value_enum, default_value = "leverage")]
    method: MethodArg,
    /// Start probability for `uniform`; defaults to the pilot's mean
    /// capped leverage.
    #[arg(long)]
    q: Option<f64>,
    #[serde(skip)]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct MonitorArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    pilot: PilotSpecArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Also emit a leverage_point record for every live sample.
    #[arg(long)]
    trace: bool,
    #[serde(skip)]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Record wall-clock seconds (makes outputs machine dependent).
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Chi2,
    Normal,
}

#[derive(Args)]
struct QuantileArgs {
    #[arg(long, value_enum)]
    dist: DistArg,
    #[arg(long)]
    dof: Option<u32>,
    #[arg(long)]
    p: f64,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p.as_os_str() != "-" => {
            Box::new(BufWriter::new(File::create(p).map_err(|e| {
                SlsError::data(format!("cannot create {}: {e}", p.display()))
            })?))
        }
        _ => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn report_summary(samples: u64, rejected: u64) {
    eprintln!(
        "{}",
        serde_json::json!({"summary": {"samples": samples, "rejected_non_finite": rejected}})
    );
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let innovation = match args.innovation {
        InnovationArg::Gaussian => Innovation::Gaussian { sigma: args.sigma },
        InnovationArg::T => Innovation::StudentT {
            df: args.df,
            scale: args.sigma,
        },
    };
    let mut spec = ArProcessSpec::new(args.beta.clone(), innovation, args.seed);
    spec.burn_in = args.burn_in;
    let mut sim = ArSimulator::new(&spec)?;
    let mut values = vec![0.0; args.n];
    sim.fill(&mut values);
    let format = match (args.format, &args.out) {
        (Some(f), _) => f.into(),
        (None, Some(p)) => StreamFormat::from_path(p),
        (None, None) => StreamFormat::Csv,
    };
    write_stream(output(&args.out)?, format, &values)
}

fn read_pilot_file(path: &Path) -> Result<PilotModel> {
    let f = File::open(path)
        .map_err(|e| SlsError::config(format!("cannot open pilot {}: {e}", path.display())))?;
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReportRecord = serde_json::from_str(&line)
            .map_err(|e| SlsError::config(format!("bad pilot record: {e}")))?;
        if let Payload::Pilot(p) = rec.payload {
            return Ok(p);
        }
    }
    Err(SlsError::config(format!(
        "no pilot record in {}",
        path.display()
    )))
}

fn pilot(args: &PilotArgs) -> Result<()> {
    let source = args.input.source();
    let mut reader = source.open()?;
    let values = reader
        .by_ref()
        .take(args.n0)
        .map(|s| s.map(|s| s.value))
        .collect::<Result<Vec<f64>>>()?;
    if values.len() < args.n0 {
        return Err(SlsError::InsufficientData {
            needed: args.n0,
            got: values.len(),
        });
    }
    let opts = match args.order {
        Some(p) => PilotOptions::fixed(p),
        None => PilotOptions::bic(args.pmax),
    };
    let model = build_pilot_with(&values, &opts)?;
    let mut w = JsonlWriter::new(output(&args.out)?, config_hash(args), 0);
    w.write(Payload::Pilot(model))?;
    w.flush()?;
    report_summary(values.len() as u64, reader.rejected());
    Ok(())
}

/// Resolves the pilot for `sample`/`monitor`: either loaded from a file or
/// fitted on the first n0 samples, which then prime the lag window.
struct Live {
    reader: SampleReader<Box<dyn io::Read>>,
    pilot: Arc<PilotModel>,
    prefix: Vec<Sample>,
    fitted: bool,
}

fn open_live(input: &InputArgs, spec: &PilotSpecArgs) -> Result<Live> {
    let mut reader = input.source().open()?;
    if let Some(path) = &spec.pilot {
        return Ok(Live {
            reader,
            pilot: Arc::new(read_pilot_file(path)?),
            prefix: Vec::new(),
            fitted: false,
        });
    }
    let Some(n0) = spec.n0 else {
        return Err(SlsError::config(
            "missing pilot: pass --pilot FILE or --n0 N",
        ));
    };
    let prefix = reader.by_ref().take(n0).collect::<Result<Vec<Sample>>>()?;
    if prefix.len() < n0 {
        return Err(SlsError::InsufficientData {
            needed: n0,
            got: prefix.len(),
        });
    }
    let values: Vec<f64> = prefix.iter().map(|s| s.value).collect();
    let pilot = Arc::new(build_pilot_with(&values, &spec.options())?);
    Ok(Live {
        reader,
        pilot,
        prefix,
        fitted: true,
    })
}

/// Mean capped leverage at the sampler's scale, from the pilot samples when
/// they are at hand.
fn matched_rate(live: &Live, scale: f64) -> f64 {
    if live.fitted {
        let values: Vec<f64> = live.prefix.iter().map(|s| s.value).collect();
        live.pilot.matched_start_rate(&values, scale)
    } else {
        live.pilot.start_rate()
    }
}

fn sample(args: &SampleArgs) -> Result<()> {
    let mut live = open_live(&args.input, &args.pilot)?;
    let rule = match args.method {
        MethodArg::Leverage => StartRule::Leverage,
        MethodArg::Uniform => StartRule::Uniform {
            q: args
                .q
                .unwrap_or_else(|| matched_rate(&live, args.sampler.leverage_scale)),
        },
    };
    let mut sampler = Sampler::new(live.pilot.clone(), args.sampler.config(), rule)?;
    let mut w = JsonlWriter::new(output(&args.out)?, config_hash(args), args.sampler.seed);
    if live.fitted {
        w.write(Payload::Pilot((*live.pilot).clone()))?;
    }
    for x in &live.prefix {
        sampler.prime(*x)?;
    }
    let mut count = live.prefix.len() as u64;
    for x in live.reader.by_ref() {
        let x = x?;
        count += 1;
        match sampler.step(x)?.map(|e| e.kind) {
            Some(EventKind::BlockCompleted(block)) => {
                let est = block_ls(&block, VarianceConvention::default());
                w.write(Payload::Block(BlockRecord::new(&block, &est)))?;
            }
            Some(EventKind::SafeguardAbort { start, .. }) => {
                w.flush()?;
                return Err(SlsError::SafeguardAbort {
                    start,
                    max_block_len: args.sampler.max_block_len,
                });
            }
            _ => {}
        }
    }
    w.flush()?;
    report_summary(count, live.reader.rejected());
    Ok(())
}

fn monitor(args: &MonitorArgs) -> Result<()> {
    let mut live = open_live(&args.input, &args.pilot)?;
    let mut m = Monitor::new(live.pilot.clone(), args.sampler.config(), args.alpha)?;
    let mut w = JsonlWriter::new(output(&args.out)?, config_hash(args), args.sampler.seed);
    if live.fitted {
        w.write(Payload::Pilot((*live.pilot).clone()))?;
    }
    for x in &live.prefix {
        m.prime(*x)?;
    }
    let mut count = live.prefix.len() as u64;
    for x in live.reader.by_ref() {
        let x = x?;
        count += 1;
        let Some(MonitorStep {
            index,
            leverage,
            verdict,
            aborted,
        }) = m.step(x)?
        else {
            continue;
        };
        if args.trace {
            w.write(Payload::LeveragePoint { index, leverage })?;
        }
        if let Some(v) = verdict {
            w.write(Payload::Verdict(v))?;
        }
        if aborted {
            w.flush()?;
            return Err(SlsError::SafeguardAbort {
                start: m.sampler().block_start().unwrap_or(index),
                max_block_len: args.sampler.max_block_len,
            });
        }
    }
    w.flush()?;
    report_summary(count, live.reader.rejected());
    Ok(())
}

fn bench(args: &BenchArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| SlsError::config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut grid = GridConfig::from_json(&text)?;
    grid.timing |= args.timing;
    let reports = grid.run()?;
    fs::create_dir_all(&args.out)?;
    let hash = config_hash(&grid);
    let mut csv = BufWriter::new(File::create(args.out.join("records.csv"))?);
    write_records_csv(&mut csv, &reports)?;
    let mut jsonl = JsonlWriter::new(
        BufWriter::new(File::create(args.out.join("records.jsonl"))?),
        hash.clone(),
        grid.seed_base,
    );
    for r in reports.iter().flat_map(|r| &r.records) {
        jsonl.write(Payload::ExperimentRow(r.clone()))?;
    }
    jsonl.flush()?;
    let summary = serde_json::json!({
        "config_hash": hash,
        "seed_base": grid.seed_base,
        "cells": grid_summary(&reports),
    });
    let mut f = BufWriter::new(File::create(args.out.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut f, &summary).map_err(io::Error::from)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn quantile(args: &QuantileArgs) -> Result<()> {
    let q = match args.dist {
        DistArg::Chi2 => {
            let dof = args
                .dof
                .ok_or_else(|| SlsError::config("--dof is required for chi2"))?;
            chi2_quantile(dof, args.p)?
        }
        DistArg::Normal => normal_quantile(args.p)?,
    };
    println!("{q:?}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Pilot(a) => pilot(a),
        Command::Sample(a) => sample(a),
        Command::Monitor(a) => monitor(a),
        Command::Bench(a) => bench(a),
        Command::Quantile(a) => quantile(a),
    }
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!(
        "{}",
        serde_json::json!({"error": {"kind": kind, "message": message, "exit_code": code}})
    );
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            return fail("config", first.to_string(), 2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string(), e.exit_code() as u8),
    }
}
