//! Long-format metric stream: one `(iteration, interactions, metric, value)`
//! record per reading, written as JSON lines and CSV.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iteration: usize,
    pub interactions: u64,
    pub metric: String,
    pub value: f64,
}

pub trait MetricsSink {
    fn record(&mut self, rec: &MetricRecord) -> Result<()>;

    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

impl MetricsSink for Vec<MetricRecord> {
    fn record(&mut self, rec: &MetricRecord) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _rec: &MetricRecord) -> Result<()> {
        Ok(())
    }
}

/// Writes `metrics.jsonl` and `metrics.csv` side by side.
pub struct FileSink {
    jsonl: BufWriter<File>,
    csv: csv::Writer<BufWriter<File>>,
}

impl FileSink {
    pub fn create(dir: &Path) -> Result<Self> {
        Self::open(dir, false)
    }

    /// With `append`, extend existing files (a resumed run) instead of
    /// truncating them; the CSV header is written only into an empty file.
    pub fn open(dir: &Path, append: bool) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| {
            OpenOptions::new()
                .create(true)
                .write(true)
                .append(append)
                .truncate(!append)
                .open(dir.join(name))
        };
        let jsonl = BufWriter::new(open("metrics.jsonl")?);
        let csv_file = open("metrics.csv")?;
        let has_header = csv_file.metadata()?.len() > 0;
        let csv = csv::WriterBuilder::new()
            .has_headers(!has_header)
            .from_writer(BufWriter::new(csv_file));
        Ok(Self { jsonl, csv })
    }
}

impl MetricsSink for FileSink {
    fn record(&mut self, rec: &MetricRecord) -> Result<()> {
        serde_json::to_writer(&mut self.jsonl, rec)?;
        self.jsonl.write_all(b"\n")?;
        self.csv.serialize(rec)?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.jsonl.flush()?;
        self.csv.flush()?;
        Ok(())
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Helper that stamps iteration and interaction counts onto each value.
pub(crate) struct Emitter<'a> {
    pub sink: &'a mut dyn MetricsSink,
    pub iteration: usize,
    pub interactions: u64,
}

impl Emitter<'_> {
    pub fn emit(&mut self, metric: &str, value: f64) -> Result<()> {
        self.sink.record(&MetricRecord {
            iteration: self.iteration,
            interactions: self.interactions,
            metric: metric.to_string(),
            value,
        })
    }
}
