//! JSON-lines metrics stream: one record per event, emitted in cycle order.

use crate::channel::Disposition;
use crate::dpr::FunctionId;
use crate::monitor::SafetyAction;
use serde::Serialize;
use std::io::Write;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub cycle: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Uplink {
        region: String,
        source: FunctionId,
        bytes: usize,
    },
    Denial {
        source: FunctionId,
        destination: FunctionId,
        region: String,
    },
    CrcFail {
        location: String,
        detail: String,
    },
    Stale {
        region: String,
    },
    Gap {
        region: String,
    },
    SafetyTransition {
        mode: String,
        actions: Vec<SafetyAction>,
    },
    FaultInjected {
        channel: String,
        disposition: Disposition,
        flipped_bits: u32,
        bytes: usize,
    },
}

/// Serializes records as one JSON object per line.
pub struct MetricsWriter<W: Write> {
    out: W,
    pub records_written: u64,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        MetricsWriter {
            out,
            records_written: 0,
        }
    }

    pub fn emit(&mut self, record: &MetricsRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.records_written += 1;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
