//! Dataset evaluation over per-object directories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{metrics, Metrics};
use crate::numeric;
use crate::config::{Config, RunMetadata};
use crate::error::{Error, Result};
use crate::pipeline::{make_transport, run_pipeline, ObjectDir};
use crate::predict::Transport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub mass_kg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRow {
    pub object: String,
    pub predicted_kg: f64,
    pub truth_kg: f64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub object: String,
    pub error: String,
}

/// A published result row shown for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PublishedReference {
    pub label: &'static str,
    pub metrics: Metrics,
}

/// Mass estimation results on the 500-object benchmark as published.
pub const PUBLISHED_REFERENCES: [PublishedReference; 2] = [
    PublishedReference {
        label: "NeRF2Physics",
        metrics: Metrics { ade: 12.725, alde: 0.736, ape: 1.040, mnre: 0.564 },
    },
    PublishedReference {
        label: "published method",
        metrics: Metrics { ade: 9.461, alde: 0.661, ape: 0.767, mnre: 0.576 },
    },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub metadata: RunMetadata,
    pub objects: usize,
    pub succeeded: usize,
    pub rows: Vec<ObjectRow>,
    pub failures: Vec<FailureRecord>,
    /// Mean over successful objects; absent when none succeeded.
    pub mean: Option<Metrics>,
    pub median: Option<Metrics>,
}

/// Object directories under `root`: every subdirectory holding a ground-truth file, sorted by name.
pub fn object_dirs(root: &Path, config: &Config) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() && path.join(&config.paths.ground_truth).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn evaluate_object(dir: &Path, config: &Config, transport: Option<&dyn Transport>) -> Result<ObjectRow> {
    let obj = ObjectDir::new(dir, config);
    let truth: GroundTruth = crate::io_util::read_json(&obj.input(&config.paths.ground_truth))?;
    let owned;
    let transport = match transport {
        Some(t) => Some(t),
        None => {
            owned = make_transport(&obj.config)?;
            owned.as_ref().map(|t| t as &dyn Transport)
        }
    };
    let mass = run_pipeline(&obj, transport)?;
    Ok(ObjectRow { object: obj.name(), predicted_kg: mass.m, truth_kg: truth.mass_kg, metrics: metrics(mass.m, truth.mass_kg)? })
}

/// Mean and median of each metric over the rows.
pub fn aggregate(rows: &[ObjectRow]) -> Option<(Metrics, Metrics)> {
    if rows.is_empty() {
        return None;
    }
    let mut mean = [0.0; 4];
    let mut med = [0.0; 4];
    for k in 0..4 {
        let col: Vec<f64> = rows.iter().map(|r| r.metrics.values()[k]).collect();
        mean[k] = numeric::mean(&col);
        med[k] = numeric::median(&col);
    }
    Some((Metrics::from_values(mean), Metrics::from_values(med)))
}

/// Run the full pipeline on every object under `root` and score it against its ground truth.
///
/// `subset` restricts the run to the named object directories. Per-object failures become
/// failure records.
pub fn evaluate_dataset(
    root: &Path,
    config: &Config,
    subset: Option<&[String]>,
    transport: Option<&(dyn Transport + Sync)>,
) -> Result<DatasetReport> {
    config.validate()?;
    let mut dirs = object_dirs(root, config)?;
    if let Some(ids) = subset {
        dirs.retain(|d| d.file_name().is_some_and(|n| ids.iter().any(|id| n == id.as_str())));
    }
    if dirs.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let results: Vec<(String, Result<ObjectRow>)> = dirs
        .par_iter()
        .map(|d| {
            let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let t = transport.map(|t| t as &dyn Transport);
            (name, evaluate_object(d, config, t))
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (object, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::warn!("{object}: {e}");
                failures.push(FailureRecord { object, error: e.to_string() });
            }
        }
    }
    let agg = aggregate(&rows);
    Ok(DatasetReport {
        metadata: RunMetadata::new(&config.effective()),
        objects: dirs.len(),
        succeeded: rows.len(),
        rows,
        failures,
        mean: agg.map(|a| a.0),
        median: agg.map(|a| a.1),
    })
}

impl DatasetReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Validation(format!("csv: {e}"));
        w.write_record(["object", "predicted_kg", "truth_kg", "ade", "alde", "ape", "mnre"]).map_err(csv_err)?;
        let mut write = |name: &str, pred: String, truth: String, m: &Metrics| {
            let mut rec = vec![name.to_string(), pred, truth];
            rec.extend(m.values().iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)
        };
        for r in &self.rows {
            write(&r.object, r.predicted_kg.to_string(), r.truth_kg.to_string(), &r.metrics)?;
        }
        if let (Some(mean), Some(median)) = (&self.mean, &self.median) {
            write("mean", String::new(), String::new(), mean)?;
            write("median", String::new(), String::new(), median)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Validation(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Write `report.json` and `report.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        crate::io_util::write_json(&dir.join("report.json"), self)?;
        crate::io_util::write_file(&dir.join("report.csv"), self.to_csv()?.as_bytes())
    }

    /// Plain-text table of the aggregate, optionally followed by the published reference rows.
    pub fn render_table(&self, with_reference: bool) -> String {
        let mut out = String::new();
        let line = |out: &mut String, label: &str, m: &Metrics| {
            let _ = writeln!(out, "{label:<20} {:>10.3} {:>8.3} {:>8.3} {:>8.3}", m.ade, m.alde, m.ape, m.mnre);
        };
        let _ = writeln!(out, "{:<20} {:>10} {:>8} {:>8} {:>8}", "", "ADE", "ALDE", "APE", "MnRE");
        for r in &self.rows {
            line(&mut out, &r.object, &r.metrics);
        }
        if let (Some(mean), Some(median)) = (&self.mean, &self.median) {
            line(&mut out, "mean", mean);
            line(&mut out, "median", median);
        }
        let _ = writeln!(out, "{} of {} objects succeeded", self.succeeded, self.objects);
        for f in &self.failures {
            let _ = writeln!(out, "failed: {}: {}", f.object, f.error);
        }
        if with_reference {
            let _ = writeln!(out, "reference (500-object benchmark, as published):");
            for r in &PUBLISHED_REFERENCES {
                line(&mut out, r.label, &r.metrics);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, m: f64, y: f64) -> ObjectRow {
        ObjectRow { object: name.into(), predicted_kg: m, truth_kg: y, metrics: metrics(m, y).unwrap() }
    }

    #[test]
    fn aggregate_is_hand_average() {
        let rows = [row("a", 2.0, 4.0), row("b", 3.0, 3.0)];
        let (mean, median) = aggregate(&rows).unwrap();
        assert_eq!(mean.ade, 1.0);
        assert_eq!(mean.ape, 0.25);
        assert_eq!(mean.mnre, 0.75);
        assert_eq!(median.mnre, 0.75);
        assert!(aggregate(&[]).is_none());
    }

    #[test]
    fn footer_only_on_request() {
        let report = DatasetReport {
            metadata: RunMetadata::new(&Config::default()),
            objects: 1,
            succeeded: 1,
            rows: vec![row("a", 1.0, 1.0)],
            failures: vec![],
            mean: aggregate(&[row("a", 1.0, 1.0)]).map(|a| a.0),
            median: aggregate(&[row("a", 1.0, 1.0)]).map(|a| a.1),
        };
        assert!(!report.render_table(false).contains("12.725"));
        let t = report.render_table(true);
        assert!(t.contains("12.725") && t.contains("9.461"));
        let csv = report.to_csv().unwrap();
        assert!(csv.starts_with("object,predicted_kg"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(evaluate_dataset(dir.path(), &Config::default(), None, None), Err(Error::Empty(_))));
    }
}
