//! Line-oriented event trace shared by the election harness and simulator.
//!
//! One record per line, tab-separated: `slot round kind node details`.
//! Field order is stable so traces can be diffed.

use std::fmt;
use std::io::{self, Write};

use crate::topology::NodeId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub slot: u64,
    pub round: u64,
    pub kind: &'static str,
    pub node: Option<NodeId>,
    pub details: String,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t", self.slot, self.round, self.kind)?;
        match self.node {
            Some(n) => write!(f, "{n}")?,
            None => f.write_str("-")?,
        }
        write!(f, "\t{}", self.details)
    }
}

pub trait TraceSink {
    fn record(&mut self, rec: TraceRecord);
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _rec: TraceRecord) {}
}

/// Keeps records in memory.
#[derive(Debug, Default)]
pub struct VecSink {
    pub records: Vec<TraceRecord>,
}

impl TraceSink for VecSink {
    fn record(&mut self, rec: TraceRecord) {
        self.records.push(rec);
    }
}

impl VecSink {
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            writeln!(w, "{r}")?;
        }
        Ok(())
    }
}

/// Streams records to a writer. The first I/O error is kept and later
/// records are dropped.
pub struct WriterSink<W: Write> {
    writer: W,
    error: Option<io::Error>,
}

impl<W: Write> WriterSink<W> {
    pub fn new(writer: W) -> Self {
        WriterSink { writer, error: None }
    }

    pub fn finish(mut self) -> io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.writer.flush()?;
        Ok(self.writer)
    }
}

impl<W: Write> TraceSink for WriterSink<W> {
    fn record(&mut self, rec: TraceRecord) {
        if self.error.is_none() {
            if let Err(e) = writeln!(self.writer, "{rec}") {
                self.error = Some(e);
            }
        }
    }
}

/// Parses one trace line back into its five fields.
pub fn split_line(line: &str) -> Option<[&str; 5]> {
    let mut it = line.splitn(5, '\t');
    Some([it.next()?, it.next()?, it.next()?, it.next()?, it.next()?])
}
