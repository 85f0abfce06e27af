//! Stream ingestion and export: CSV, raw little-endian f32 and f64.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlsError};
use crate::timeseries::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamFormat {
    Csv,
    RawF32le,
    RawF64le,
}

impl StreamFormat {
    /// Guess from a file extension: `.f32`, `.f64`/`.bin`, otherwise CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("f32") => StreamFormat::RawF32le,
            Some("f64") | Some("bin") => StreamFormat::RawF64le,
            _ => StreamFormat::Csv,
        }
    }
}

impl std::str::FromStr for StreamFormat {
    type Err = SlsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(StreamFormat::Csv),
            "f32" | "raw_f32le" => Ok(StreamFormat::RawF32le),
            "f64" | "raw_f64le" => Ok(StreamFormat::RawF64le),
            other => Err(SlsError::config(format!("unknown stream format {other:?}"))),
        }
    }
}

/// Where samples come from. `None` path means stdin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSource {
    pub format: StreamFormat,
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub sample_rate_hz: Option<f64>,
    #[serde(default)]
    pub channel: String,
}

impl StreamSource {
    pub fn file(path: impl Into<PathBuf>, format: StreamFormat) -> Self {
        Self {
            format,
            path: Some(path.into()),
            sample_rate_hz: None,
            channel: String::new(),
        }
    }

    pub fn open(&self) -> Result<SampleReader<Box<dyn Read>>> {
        let reader: Box<dyn Read> = match &self.path {
            Some(p) => Box::new(
                File::open(p)
                    .map_err(|e| SlsError::data(format!("cannot open {}: {e}", p.display())))?,
            ),
            None => Box::new(io::stdin()),
        };
        Ok(SampleReader::new(reader, self.format))
    }
}

enum CsvLayout {
    Unknown,
    Column(usize),
}

/// Pull-based reader. Non-finite values are skipped and counted; accepted
/// samples are numbered consecutively from 0.
pub struct SampleReader<R: Read> {
    input: BufReader<R>,
    format: StreamFormat,
    layout: CsvLayout,
    line_no: usize,
    next_index: u64,
    rejected: u64,
    line: String,
}

impl<R: Read> SampleReader<R> {
    pub fn new(input: R, format: StreamFormat) -> Self {
        Self {
            input: BufReader::with_capacity(1 << 16, input),
            format,
            layout: CsvLayout::Unknown,
            line_no: 0,
            next_index: 0,
            rejected: 0,
            line: String::new(),
        }
    }

    /// Count of non-finite values rejected so far.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    fn read_raw(&mut self, width: usize) -> Result<Option<f64>> {
        let mut buf = [0u8; 8];
        let mut filled = 0;
        while filled < width {
            let n = self.input.read(&mut buf[filled..width])?;
            if n == 0 {
                if filled == 0 {
                    return Ok(None);
                }
                return Err(SlsError::data(format!(
                    "truncated raw stream: {filled} trailing bytes after sample {}",
                    self.next_index + self.rejected
                )));
            }
            filled += n;
        }
        Ok(Some(if width == 4 {
            f32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64
        } else {
            f64::from_le_bytes(buf)
        }))
    }

    fn read_csv(&mut self) -> Result<Option<f64>> {
        loop {
            self.line.clear();
            if self.input.read_line(&mut self.line)? == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let row = self.line.trim();
            if row.is_empty() {
                continue;
            }
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if let CsvLayout::Unknown = self.layout {
                let numeric = fields.iter().all(|f| parse_number(f).is_some());
                self.layout = match (fields.len(), numeric) {
                    (1, _) => CsvLayout::Column(0),
                    (2, true) => CsvLayout::Column(1),
                    (2, false) => {
                        let col = fields
                            .iter()
                            .position(|f| f.eq_ignore_ascii_case("value"))
                            .unwrap_or(1);
                        CsvLayout::Column(col)
                    }
                    (n, _) => {
                        return Err(SlsError::data(format!(
                            "line {}: expected \"value\" or \"index,value\" rows, found {n} fields",
                            self.line_no
                        )))
                    }
                };
                if !numeric {
                    // header row
                    continue;
                }
            }
            let CsvLayout::Column(col) = self.layout else {
                unreachable!()
            };
            let expected = if col == 0 && fields.len() == 1 { 1 } else { 2 };
            if fields.len() != expected {
                return Err(SlsError::data(format!(
                    "line {}: expected {expected} fields, found {}",
                    self.line_no,
                    fields.len()
                )));
            }
            for (k, f) in fields.iter().enumerate() {
                if parse_number(f).is_none() {
                    return Err(SlsError::data(format!(
                        "line {}: malformed field {} {f:?}",
                        self.line_no,
                        k + 1
                    )));
                }
            }
            return Ok(parse_number(fields[col]));
        }
    }

    fn next_value(&mut self) -> Result<Option<f64>> {
        match self.format {
            StreamFormat::Csv => self.read_csv(),
            StreamFormat::RawF32le => self.read_raw(4),
            StreamFormat::RawF64le => self.read_raw(8),
        }
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok()
}

impl<R: Read> Iterator for SampleReader<R> {
    type Item = Result<Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.next_value() {
                Ok(Some(v)) if v.is_finite() => {
                    let s = Sample::new(self.next_index, v);
                    self.next_index += 1;
                    return Some(Ok(s));
                }
                Ok(Some(_)) => self.rejected += 1,
                Ok(None) => return None,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

/// Reads an entire source into memory.
pub fn ingest(source: &StreamSource) -> Result<(Vec<Sample>, u64)> {
    let mut reader = source.open()?;
    let samples = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok((samples, reader.rejected()))
}

/// Writes values in `format`. CSV output carries an `index,value` header and
/// shortest round-trip decimal floats.
pub fn write_stream<W: Write>(out: W, format: StreamFormat, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(out);
    match format {
        StreamFormat::Csv => {
            writeln!(w, "index,value")?;
            for (i, v) in values.iter().enumerate() {
                writeln!(w, "{i},{v:?}")?;
            }
        }
        StreamFormat::RawF32le => {
            for v in values {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        StreamFormat::RawF64le => {
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_stream_file(path: &Path, format: StreamFormat, values: &[f64]) -> Result<()> {
    let f = File::create(path)
        .map_err(|e| SlsError::data(format!("cannot create {}: {e}", path.display())))?;
    write_stream(f, format, values)
}
