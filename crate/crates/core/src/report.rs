//! JSONL report records and their schema.
//!
//! Every line is one object carrying `schema_version`, `kind`, the SHA-256
//! `config_hash` of the invocation's configuration and the `seed`, followed
//! by the kind-specific payload. The schema lives in
//! `schema/report.schema.json` and is embedded as [`SCHEMA_JSON`].

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::bench::ReplicateRecord;
use crate::error::Result;
use crate::estimation::BlockEstimate;
use crate::monitor::MonitorVerdict;
use crate::pilot::PilotModel;
use crate::sampler::{MethodTag, SlsBlock};

pub const SCHEMA_VERSION: u32 = 1;
pub const SCHEMA_JSON: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub start: u64,
    pub stop: u64,
    pub len: usize,
    pub method: MethodTag,
    pub acc_info: f64,
    pub beta_hat: Vec<f64>,
    pub sigma_hat_sq: f64,
    pub rank: usize,
    pub degenerate: bool,
}

impl BlockRecord {
    pub fn new(block: &SlsBlock, est: &BlockEstimate) -> Self {
        Self {
            start: block.start,
            stop: block.stop,
            len: block.len(),
            method: block.method,
            acc_info: block.acc_info,
            beta_hat: est.beta_hat.iter().copied().collect(),
            sigma_hat_sq: est.sigma_hat_sq,
            rank: est.rank,
            degenerate: est.degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Pilot(PilotModel),
    Block(BlockRecord),
    Verdict(MonitorVerdict),
    LeveragePoint { index: u64, leverage: f64 },
    ExperimentRow(ReplicateRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub payload: Payload,
}

/// Hex SHA-256 of the compact JSON encoding of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("configuration serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Writes records as JSON lines, stamping each with the hash and seed.
pub struct JsonlWriter<W: Write> {
    out: W,
    config_hash: String,
    seed: u64,
    written: u64,
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(out: W, config_hash: String, seed: u64) -> Self {
        Self {
            out,
            config_hash,
            seed,
            written: 0,
        }
    }

    pub fn write(&mut self, payload: Payload) -> Result<()> {
        let record = ReportRecord {
            schema_version: SCHEMA_VERSION,
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            payload,
        };
        serde_json::to_writer(&mut self.out, &record).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

fn type_matches(value: &Value, ty: &str) -> bool {
    match ty {
        "integer" => value.is_u64() || value.is_i64(),
        "number" => value.is_number(),
        "string" => value.is_string(),
        "boolean" => value.is_boolean(),
        "array" => value.is_array(),
        "object" => value.is_object(),
        "null" => value.is_null(),
        _ => false,
    }
}

fn check_type(name: &str, value: &Value, rule: &Value) -> std::result::Result<(), String> {
    let ok = match &rule["type"] {
        Value::String(t) => type_matches(value, t),
        Value::Array(ts) => ts
            .iter()
            .filter_map(Value::as_str)
            .any(|t| type_matches(value, t)),
        _ => true,
    };
    if !ok {
        return Err(format!("field {name:?} has wrong type: {value}"));
    }
    if let (Some(items), Some(Value::String(t))) = (value.as_array(), rule["items"].get("type")) {
        if let Some(bad) = items.iter().find(|v| !type_matches(v, t)) {
            return Err(format!("field {name:?} has a non-{t} item {bad}"));
        }
    }
    Ok(())
}

fn check_object(
    obj: &serde_json::Map<String, Value>,
    rules: &Value,
) -> std::result::Result<(), String> {
    for req in rules["required"].as_array().into_iter().flatten() {
        let name = req.as_str().unwrap_or_default();
        if !obj.contains_key(name) {
            return Err(format!("missing required field {name:?}"));
        }
    }
    if let Some(props) = rules["properties"].as_object() {
        for (name, rule) in props {
            if let Some(v) = obj.get(name) {
                check_type(name, v, rule)?;
            }
        }
    }
    Ok(())
}

/// Checks a parsed record against the embedded schema: common fields, the
/// branch selected by `kind`, required fields and field types.
pub fn validate_record(value: &Value) -> std::result::Result<(), String> {
    let schema: Value = serde_json::from_str(SCHEMA_JSON).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("record is not an object")?;
    check_object(obj, &schema)?;
    if obj["schema_version"] != schema["schema_version"] {
        return Err(format!(
            "unsupported schema_version {}",
            obj["schema_version"]
        ));
    }
    let kind = obj["kind"].as_str().unwrap_or_default();
    let branch = schema["oneOf"]
        .as_array()
        .into_iter()
        .flatten()
        .find(|b| b["properties"]["kind"]["const"] == kind)
        .ok_or_else(|| format!("unknown kind {kind:?}"))?;
    check_object(obj, branch)
}
