//! Trajectory writers.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde_json::json;

use crate::spec::SCHEMA;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

pub fn open(out: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

/// Row-at-a-time trajectory output with an optional failure record.
pub trait Sink {
    fn header(&mut self, columns: &[String]) -> io::Result<()>;
    fn row(&mut self, values: &[f64]) -> io::Result<()>;
    fn failure(&mut self, step: usize, message: &str) -> io::Result<()>;
    fn finish(&mut self) -> io::Result<()>;
}

/// Every value as `{:.16e}`: 17 significant digits, exact round trip.
pub fn fmt_value(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct CsvSink<W: Write> {
    w: W,
}

impl<W: Write> CsvSink<W> {
    pub fn new(w: W) -> Self {
        CsvSink { w }
    }
}

impl<W: Write> Sink for CsvSink<W> {
    fn header(&mut self, columns: &[String]) -> io::Result<()> {
        writeln!(self.w, "{}", columns.join(","))
    }

    fn row(&mut self, values: &[f64]) -> io::Result<()> {
        let cells: Vec<String> = values.iter().map(|&v| fmt_value(v)).collect();
        writeln!(self.w, "{}", cells.join(","))
    }

    fn failure(&mut self, step: usize, message: &str) -> io::Result<()> {
        writeln!(self.w, "# failure at step {step}: {}", message.replace('\n', " "))?;
        self.w.flush()
    }

    fn finish(&mut self) -> io::Result<()> {
        self.w.flush()
    }
}

pub struct JsonSink<W: Write> {
    w: W,
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    failure: Option<serde_json::Value>,
}

impl<W: Write> JsonSink<W> {
    pub fn new(w: W) -> Self {
        JsonSink { w, columns: Vec::new(), rows: Vec::new(), failure: None }
    }

    fn write_out(&mut self) -> io::Result<()> {
        let doc = json!({
            "schema": SCHEMA,
            "columns": self.columns,
            "rows": self.rows,
            "status": if self.failure.is_some() { "failed" } else { "ok" },
            "failure": self.failure,
        });
        serde_json::to_writer_pretty(&mut self.w, &doc)?;
        writeln!(self.w)?;
        self.w.flush()
    }
}

impl<W: Write> Sink for JsonSink<W> {
    fn header(&mut self, columns: &[String]) -> io::Result<()> {
        self.columns = columns.to_vec();
        Ok(())
    }

    fn row(&mut self, values: &[f64]) -> io::Result<()> {
        self.rows.push(values.to_vec());
        Ok(())
    }

    fn failure(&mut self, step: usize, message: &str) -> io::Result<()> {
        self.failure = Some(json!({ "step": step, "message": message }));
        self.write_out()
    }

    fn finish(&mut self) -> io::Result<()> {
        self.write_out()
    }
}

/// Writes a JSON report document.
pub fn write_report(out: Option<&Path>, doc: &serde_json::Value) -> io::Result<()> {
    let mut w = open(out)?;
    serde_json::to_writer_pretty(&mut w, doc)?;
    writeln!(w)?;
    w.flush()
}
