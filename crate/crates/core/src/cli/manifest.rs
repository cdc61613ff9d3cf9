use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Everything needed to rerun a command and get the same outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub params: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], params: serde_json::Value, threads: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME"),
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: argv.to_vec(),
            params,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            threads,
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("JSON encoding: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
