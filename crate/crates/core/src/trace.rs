//! Per-step, per-source separation diagnostics.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the trace CSV. `si_sdr` is empty when no references
/// were supplied.
pub const TRACE_COLUMNS: [&str; 11] = [
    "step",
    "source",
    "loss",
    "loss_time",
    "loss_group",
    "loss_stft",
    "gamma",
    "grad_norm",
    "guidance_bound",
    "x0_energy",
    "si_sdr",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub source: usize,
    /// Weighted reconstruction loss of the shared estimate at this step.
    pub loss: f64,
    pub loss_time: f64,
    pub loss_group: f64,
    pub loss_stft: f64,
    pub gamma: f64,
    pub grad_norm: f64,
    /// NaN when the conditional gradient vanished.
    pub guidance_bound: f64,
    pub x0_energy: f64,
    pub si_sdr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GuidanceTrace {
    pub records: Vec<TraceRecord>,
}

impl GuidanceTrace {
    pub fn push(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of one source, in reverse-step order.
    pub fn source(&self, k: usize) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.source == k)
    }

    /// Distinct steps in recorded order.
    pub fn steps(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for r in &self.records {
            if out.last() != Some(&r.step) {
                out.push(r.step);
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.records {
            wr.serialize(r).map_err(csv_err)?;
        }
        if self.records.is_empty() {
            wr.write_record(TRACE_COLUMNS).map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Parses a trace. The first ten columns are required; `si_sdr` may be
    /// absent.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers().map_err(csv_err)?.clone();
        for col in &TRACE_COLUMNS[..10] {
            if !headers.iter().any(|h| h == *col) {
                return Err(Error::Schema(format!("trace is missing column {col:?}")));
            }
        }
        let mut records = Vec::new();
        for row in rd.deserialize() {
            records.push(row.map_err(csv_err)?);
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Schema(format!("trace csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: usize, source: usize) -> TraceRecord {
        TraceRecord {
            step,
            source,
            loss: 1.5,
            loss_time: 1.0,
            loss_group: 0.125,
            loss_stft: 3.0,
            gamma: 0.25,
            grad_norm: 2.0,
            guidance_bound: -0.5,
            x0_energy: 7.0,
            si_sdr: if source == 0 { Some(3.5) } else { None },
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut t = GuidanceTrace::default();
        for step in (0..3).rev() {
            t.push(record(step, 0));
            t.push(record(step, 1));
        }
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRACE_COLUMNS.join(","));
        assert_eq!(GuidanceTrace::read_csv(&buf[..]).unwrap(), t);
        assert_eq!(t.steps(), vec![2, 1, 0]);
        assert_eq!(t.source(1).count(), 3);
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let text = "step,source,loss,loss_time,loss_group,loss_stft,gamma,grad_norm,x0_energy\n0,0,1,1,1,1,1,1,1\n";
        match GuidanceTrace::read_csv(text.as_bytes()) {
            Err(Error::Schema(m)) => assert!(m.contains("guidance_bound")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_trace_still_has_header() {
        let mut buf = Vec::new();
        GuidanceTrace::default().write_csv(&mut buf).unwrap();
        assert!(GuidanceTrace::read_csv(&buf[..]).unwrap().is_empty());
    }
}
