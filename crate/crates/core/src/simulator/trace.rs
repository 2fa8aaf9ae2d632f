//! JSON-lines run trace.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TraceLevel {
    Off,
    /// Arrivals, exits, resequencing decisions and conflicts.
    #[default]
    Summary,
    /// Also per-step vehicle states and per-solve diagnostics.
    Full,
}

impl TraceLevel {
    pub fn label(self) -> &'static str {
        match self {
            TraceLevel::Off => "off",
            TraceLevel::Summary => "summary",
            TraceLevel::Full => "full",
        }
    }
}

impl fmt::Display for TraceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TraceLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(TraceLevel::Off),
            "summary" => Ok(TraceLevel::Summary),
            "full" => Ok(TraceLevel::Full),
            other => Err(format!("unknown trace level `{other}` (expected off, summary or full)")),
        }
    }
}

/// In-memory JSONL buffer. Each record is one line.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    level: TraceLevel,
    buf: Vec<u8>,
    records: usize,
}

impl Trace {
    pub fn new(level: TraceLevel) -> Self {
        Self {
            level,
            buf: Vec::new(),
            records: 0,
        }
    }

    pub fn level(&self) -> TraceLevel {
        self.level
    }

    pub fn enabled(&self, at: TraceLevel) -> bool {
        at != TraceLevel::Off && self.level >= at
    }

    /// Appends `record` if the trace level is at least `at`.
    pub fn emit<T: Serialize>(&mut self, at: TraceLevel, record: &T) {
        if !self.enabled(at) {
            return;
        }
        serde_json::to_writer(&mut self.buf, record).expect("trace record serializes");
        self.buf.push(b'\n');
        self.records += 1;
    }

    pub fn records(&self) -> usize {
        self.records
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}
