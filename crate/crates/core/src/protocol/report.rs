use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricName {
    #[serde(rename = "M")]
    M,
    #[serde(rename = "M_pool")]
    MPool,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::M => "M",
            Self::MPool => "M_pool",
        }
    }
}

/// One CSV row: a metric for one (strategy, experience, class), averaged
/// over probes. `experience` is the 0-based index of the last experience
/// trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub strategy: String,
    pub experience: usize,
    pub class: usize,
    pub metric_name: MetricName,
    pub value: f64,
    pub is_target_class: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DriftReport {
    records: Vec<DriftRecord>,
}

impl DriftReport {
    pub fn new(records: Vec<DriftRecord>) -> Result<Self> {
        let report = Self { records };
        report.validate()?;
        Ok(report)
    }

    /// Every value is finite and non-negative, and each (strategy,
    /// experience, metric) covers the same set of classes `0..C`.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::Format {
            what: "drift report".into(),
            reason,
        };
        if let Some(r) = self.records.iter().find(|r| !(r.value >= 0.0) || !r.value.is_finite()) {
            return Err(bad(format!("invalid value {} for {} class {}", r.value, r.strategy, r.class)));
        }
        let c = self.num_classes();
        for s in self.strategies() {
            for e in self.experiences(&s) {
                for m in self.metrics() {
                    let mut classes: Vec<usize> = self.rows(&s, e, m).map(|r| r.class).collect();
                    if classes.is_empty() {
                        continue;
                    }
                    classes.sort_unstable();
                    if classes != (0..c).collect::<Vec<_>>() {
                        return Err(bad(format!("{s} experience {e} {} does not cover {c} classes", m.as_str())));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn records(&self) -> &[DriftRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.records.iter().map(|r| r.class + 1).max().unwrap_or(0)
    }

    /// Strategy names in first-appearance order.
    pub fn strategies(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.strategy) {
                out.push(r.strategy.clone());
            }
        }
        out
    }

    pub fn experiences(&self, strategy: &str) -> Vec<usize> {
        let mut out: Vec<usize> = self.records.iter().filter(|r| r.strategy == strategy).map(|r| r.experience).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn metrics(&self) -> Vec<MetricName> {
        let mut out: Vec<MetricName> = self.records.iter().map(|r| r.metric_name).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn target_classes(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.records.iter().filter(|r| r.is_target_class).map(|r| r.class).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn rows<'a>(&'a self, strategy: &'a str, experience: usize, metric: MetricName) -> impl Iterator<Item = &'a DriftRecord> {
        self.records
            .iter()
            .filter(move |r| r.strategy == strategy && r.experience == experience && r.metric_name == metric)
    }

    pub fn value(&self, strategy: &str, experience: usize, class: usize, metric: MetricName) -> Option<f64> {
        self.rows(strategy, experience, metric).find(|r| r.class == class).map(|r| r.value)
    }

    /// Mean of `metric` over `classes` for one strategy and experience.
    pub fn mean_over(&self, strategy: &str, experience: usize, classes: &[usize], metric: MetricName) -> Option<f64> {
        let vals: Option<Vec<f64>> = classes.iter().map(|&c| self.value(strategy, experience, c, metric)).collect();
        let vals = vals?;
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Last experience index present for `strategy`.
    pub fn final_experience(&self, strategy: &str) -> Option<usize> {
        self.experiences(strategy).last().copied()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format {
            what: "drift CSV".into(),
            reason: e.to_string(),
        })
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let records = r.deserialize().collect::<std::result::Result<Vec<DriftRecord>, _>>().map_err(csv_err)?;
        Self::new(records)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format {
        what: "drift CSV".into(),
        reason: e.to_string(),
    }
}

/// Accuracy of one strategy's snapshot on one experience's test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub strategy: String,
    pub experience_trained: usize,
    pub experience_evaluated: usize,
    pub accuracy: f64,
}

pub fn write_accuracy_csv<W: Write>(rows: &[AccuracyRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format {
        what: "accuracy CSV".into(),
        reason: e.to_string(),
    })
}
