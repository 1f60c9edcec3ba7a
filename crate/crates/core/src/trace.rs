//! Raw accelerometer traces, labeled datasets and the trace CSV format.
//!
//! CSV schema (UTF-8, one row per sample):
//!
//! ```text
//! trace_id,label,subject,t,ax,ay,az
//! ```
//!
//! `t` is in seconds, accelerations in g unless the loader is told the file
//! holds m/s².

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::STANDARD_GRAVITY;

/// Sensor sanity bound in g; rows beyond it are treated as corrupt.
pub const MAX_ABS_G: f64 = 16.0;

pub const CSV_HEADER: [&str; 7] = ["trace_id", "label", "subject", "t", "ax", "ay", "az"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccelSample {
    pub t: f64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
}

impl AccelSample {
    pub fn new(t: f64, ax: f64, ay: f64, az: f64) -> Result<Self> {
        let s = AccelSample { t, ax, ay, az };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if !self.t.is_finite() || self.t < 0.0 {
            return Err(Error::invalid(format!("timestamp {} must be finite and non-negative", self.t)));
        }
        for v in self.accel() {
            if !v.is_finite() || v.abs() > MAX_ABS_G {
                return Err(Error::invalid(format!(
                    "acceleration component {v} outside the ±{MAX_ABS_G} g sensor range"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn accel(&self) -> [f64; 3] {
        [self.ax, self.ay, self.az]
    }
}

/// An ordered, validated sequence of samples: at least two, strictly
/// increasing timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TraceRepr", into = "TraceRepr")]
pub struct Trace {
    samples: Vec<AccelSample>,
    pub id: Option<String>,
    pub label: Option<String>,
    pub subject: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct TraceRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subject: Option<String>,
    samples: Vec<AccelSample>,
}

impl TryFrom<TraceRepr> for Trace {
    type Error = Error;
    fn try_from(r: TraceRepr) -> Result<Self> {
        let mut t = Trace::new(r.samples)?;
        t.id = r.id;
        t.label = r.label;
        t.subject = r.subject;
        Ok(t)
    }
}

impl From<Trace> for TraceRepr {
    fn from(t: Trace) -> Self {
        TraceRepr { id: t.id, label: t.label, subject: t.subject, samples: t.samples }
    }
}

impl Trace {
    pub fn new(samples: Vec<AccelSample>) -> Result<Self> {
        Self::validate(&samples).map_err(|message| Error::InvalidTrace {
            trace: "<unnamed>".into(),
            message,
        })?;
        Ok(Trace { samples, id: None, label: None, subject: None })
    }

    /// Builds a trace from `[t, ax, ay, az]` rows.
    pub fn from_rows(rows: &[[f64; 4]]) -> Result<Self> {
        let samples = rows
            .iter()
            .map(|r| AccelSample::new(r[0], r[1], r[2], r[3]))
            .collect::<Result<Vec<_>>>()?;
        Trace::new(samples)
    }

    fn validate(samples: &[AccelSample]) -> std::result::Result<(), String> {
        if samples.len() < 2 {
            return Err(format!("needs at least 2 samples, got {}", samples.len()));
        }
        for s in samples {
            s.check().map_err(|e| e.to_string())?;
        }
        if let Some(w) = samples.windows(2).find(|w| w[1].t <= w[0].t) {
            return Err(format!(
                "timestamps must be strictly increasing ({} then {})",
                w[0].t, w[1].t
            ));
        }
        Ok(())
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_subject(mut self, subject: impl Into<String>) -> Self {
        self.subject = Some(subject.into());
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn samples(&self) -> &[AccelSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        self.samples.iter().map(AccelSample::accel).collect()
    }

    pub fn duration(&self) -> f64 {
        self.samples[self.samples.len() - 1].t - self.samples[0].t
    }

    /// Centered moving average over `window` samples (window clipped at the
    /// ends). Timestamps are kept.
    pub fn smoothed(&self, window: usize) -> Trace {
        if window <= 1 {
            return self.clone();
        }
        let half = window / 2;
        let n = self.samples.len();
        let samples = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half).min(n - 1);
                let mut acc = [0.0; 3];
                for s in &self.samples[lo..=hi] {
                    let a = s.accel();
                    for k in 0..3 {
                        acc[k] += a[k];
                    }
                }
                let m = (hi - lo + 1) as f64;
                AccelSample { t: self.samples[i].t, ax: acc[0] / m, ay: acc[1] / m, az: acc[2] / m }
            })
            .collect();
        Trace { samples, ..self.clone() }
    }

    fn name(&self) -> String {
        self.id.clone().unwrap_or_else(|| "<unnamed>".into())
    }
}

/// A collection of traces with the source they came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub traces: Vec<Trace>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(traces: Vec<Trace>, provenance: impl Into<String>) -> Self {
        Dataset { traces, provenance: provenance.into() }
    }

    /// Gesture labels in order of first appearance.
    pub fn labels(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for t in &self.traces {
            if let Some(l) = &t.label {
                if !seen.contains(l) {
                    seen.push(l.clone());
                }
            }
        }
        seen
    }

    pub fn traces_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Trace> + 'a {
        self.traces.iter().filter(move |t| t.label.as_deref() == Some(label))
    }

    pub fn total_samples(&self) -> usize {
        self.traces.iter().map(Trace::len).sum()
    }

    /// Checks the training preconditions: every trace labeled and every label
    /// backed by at least two traces.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.traces.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if let Some(t) = self.traces.iter().find(|t| t.label.is_none()) {
            return Err(Error::InvalidTrace { trace: t.name(), message: "trace is unlabeled".into() });
        }
        for label in self.labels() {
            let n = self.traces_for(&label).count();
            if n < 2 {
                return Err(Error::invalid(format!(
                    "gesture `{label}` has {n} trace(s); at least 2 are needed"
                )));
            }
        }
        Ok(())
    }

    /// Subset containing only the given labels (in dataset order).
    pub fn with_labels(&self, labels: &[String]) -> Dataset {
        Dataset {
            traces: self
                .traces
                .iter()
                .filter(|t| t.label.as_ref().is_some_and(|l| labels.contains(l)))
                .cloned()
                .collect(),
            provenance: self.provenance.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Units {
    #[default]
    G,
    MetersPerSecondSquared,
}

/// Loads a trace CSV from disk. See the module docs for the schema.
pub fn load_traces(path: impl AsRef<Path>) -> Result<Dataset> {
    load_traces_with(path, Units::G)
}

pub fn load_traces_with(path: impl AsRef<Path>, units: Units) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut ds = read_traces(file, units)?;
    ds.provenance = path.display().to_string();
    Ok(ds)
}

/// Parses trace CSV from any reader. Rows are grouped by `trace_id`; traces
/// appear in order of first occurrence and keep their row order.
pub fn read_traces<R: Read>(reader: R, units: Units) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(e, 1))?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    let scale = match units {
        Units::G => 1.0,
        Units::MetersPerSecondSquared => 1.0 / STANDARD_GRAVITY,
    };

    struct Pending {
        id: String,
        label: Option<String>,
        subject: Option<String>,
        samples: Vec<AccelSample>,
        first_line: u64,
    }
    let mut order: Vec<Pending> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows = 0usize;

    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(e, line)
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("field `{}` is not a number: `{}`", CSV_HEADER[i], &rec[i]),
            })
        };
        let t = num(3)?;
        let (ax, ay, az) = (num(4)? * scale, num(5)? * scale, num(6)? * scale);
        let sample = AccelSample::new(t, ax, ay, az)
            .map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(Error::Parse { line, message: "empty trace_id".into() });
        }
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(Pending {
                id: id.clone(),
                label: opt(&rec[1]),
                subject: opt(&rec[2]),
                samples: Vec::new(),
                first_line: line,
            });
            order.len() - 1
        });
        let p = &mut order[slot];
        if p.label != opt(&rec[1]) {
            return Err(Error::Parse {
                line,
                message: format!("trace `{id}` changes label mid-trace"),
            });
        }
        p.samples.push(sample);
        rows += 1;
    }

    let mut traces = Vec::with_capacity(order.len());
    for p in order {
        Trace::validate(&p.samples).map_err(|message| Error::InvalidTrace {
            trace: p.id.clone(),
            message: format!("{message} (trace starts at line {})", p.first_line),
        })?;
        traces.push(Trace { samples: p.samples, id: Some(p.id), label: p.label, subject: p.subject });
    }
    let ds = Dataset { traces, provenance: String::new() };
    debug_assert_eq!(ds.total_samples(), rows);
    Ok(ds)
}

fn csv_err(e: csv::Error, line: u64) -> Error {
    Error::Parse { line, message: e.to_string() }
}

/// Writes traces in the CSV schema. Traces without an id get `trace-<n>`.
pub fn write_traces<W: Write>(writer: W, traces: &[Trace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(io)?;
    for (n, tr) in traces.iter().enumerate() {
        let id = tr.id.clone().unwrap_or_else(|| format!("trace-{n}"));
        let label = tr.label.as_deref().unwrap_or("");
        let subject = tr.subject.as_deref().unwrap_or("");
        for s in &tr.samples {
            w.write_record([
                id.as_str(),
                label,
                subject,
                &s.t.to_string(),
                &s.ax.to_string(),
                &s.ay.to_string(),
                &s.az.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_traces(path: impl AsRef<Path>, traces: &[Trace]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_traces(std::io::BufWriter::new(file), traces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Dataset> {
        read_traces(s.as_bytes(), Units::G)
    }

    #[test]
    fn single_three_row_trace() {
        let ds = parse(
            "trace_id,label,subject,t,ax,ay,az\n\
             a,O,s1,0.0,0.1,0.0,-1.0\n\
             a,O,s1,0.02,0.2,0.0,-1.0\n\
             a,O,s1,0.04,0.1,0.1,-0.9\n",
        )
        .unwrap();
        assert_eq!(ds.labels(), vec!["O".to_string()]);
        assert_eq!(ds.traces.len(), 1);
        assert_eq!(ds.traces[0].len(), 3);
        assert_eq!(ds.traces[0].samples()[1].ax, 0.2);
    }

    #[test]
    fn backwards_timestamp_names_trace() {
        let err = parse(
            "trace_id,label,subject,t,ax,ay,az\n\
             a,O,,0.0,0,0,-1\n\
             bad,O,,0.0,0,0,-1\n\
             bad,O,,0.1,0,0,-1\n\
             bad,O,,0.05,0,0,-1\n\
             a,O,,0.1,0,0,-1\n",
        )
        .unwrap_err();
        match err {
            Error::InvalidTrace { trace, .. } => assert_eq!(trace, "bad"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse(
            "trace_id,label,subject,t,ax,ay,az\n\
             a,O,,0.0,0,0,-1\n\
             a,O,,0.1,zero,0,-1\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn wrong_field_count_is_parse_error() {
        let err = parse("trace_id,label,subject,t,ax,ay,az\na,O,,0.0,0,0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn out_of_range_row_rejected() {
        let err = parse("trace_id,label,subject,t,ax,ay,az\na,O,,0.0,0,0,-17\na,O,,0.1,0,0,-1\n")
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn metric_units_are_converted() {
        let ds = read_traces(
            "trace_id,label,subject,t,ax,ay,az\na,O,,0,0,0,-9.80665\na,O,,0.1,0,0,-9.80665\n".as_bytes(),
            Units::MetersPerSecondSquared,
        )
        .unwrap();
        assert_eq!(ds.traces[0].samples()[0].az, -1.0);
    }

    #[test]
    fn interleaved_rows_group_by_id() {
        let ds = parse(
            "trace_id,label,subject,t,ax,ay,az\n\
             a,O,,0.0,0,0,-1\nb,N,,0.0,0,0,-1\na,O,,0.1,0,0,-1\nb,N,,0.1,0,0,-1\nb,N,,0.2,0,0,-1\n",
        )
        .unwrap();
        assert_eq!(ds.traces.len(), 2);
        assert_eq!(ds.total_samples(), 5);
        assert_eq!(ds.traces[1].len(), 3);
    }

    #[test]
    fn training_validation_needs_two_per_label() {
        let t = Trace::from_rows(&[[0.0, 0.0, 0.0, -1.0], [0.1, 0.0, 0.0, -1.0]]).unwrap();
        let ds = Dataset::new(vec![t.clone().with_label("O")], "mem");
        assert!(ds.validate_for_training().is_err());
        let ds = Dataset::new(vec![t.clone().with_label("O"), t.with_label("O")], "mem");
        ds.validate_for_training().unwrap();
    }

    #[test]
    fn write_then_read_preserves_rows() {
        let t = Trace::from_rows(&[[0.0, 0.125, 0.0, -1.0], [0.02, 0.3, 1e-7, -0.75]])
            .unwrap()
            .with_label("O")
            .with_subject("s1")
            .with_id("x");
        let mut buf = Vec::new();
        write_traces(&mut buf, std::slice::from_ref(&t)).unwrap();
        let ds = read_traces(buf.as_slice(), Units::G).unwrap();
        assert_eq!(ds.traces[0], t);
    }

    #[test]
    fn smoothing_window_three() {
        let t = Trace::from_rows(&[
            [0.0, 0.0, 0.0, 0.0],
            [0.1, 3.0, 0.0, 0.0],
            [0.2, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        let s = t.smoothed(3);
        assert_eq!(s.samples()[1].ax, 1.0);
        assert_eq!(s.samples()[0].ax, 1.5);
        assert_eq!(s.len(), 3);
    }
}
