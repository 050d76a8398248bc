//! Run manifests and the comparison report built from them.

use std::collections::BTreeMap;

use convmpt_core::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::eval::{CvReport, Grid, OvaCvReport};
use crate::io::sha256_hex;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub path: String,
    /// SHA-256 of the parsed contents, independent of the file format.
    pub fingerprint: String,
    pub bags: usize,
    pub dim: usize,
    pub positives: Option<usize>,
    pub classes: Option<Vec<String>>,
    pub labels_remapped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model_path: String,
    pub model_sha256: String,
    pub train_pos_at_top: f64,
    pub iterations: usize,
    pub certified: bool,
    pub early_stopped: bool,
    pub dual_ascent_violations: usize,
    pub filter_descent_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    Train(TrainOutcome),
    CrossValidation(CvReport),
    OneVsAll(OvaCvReport),
}

/// Wall-clock measurements. Kept out of the content hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub per_fold_seconds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    /// Arguments after the program name.
    pub command: Vec<String>,
    pub method: String,
    pub config: TrainConfig,
    pub seed: u64,
    pub grid: Option<Grid>,
    pub dataset: DatasetInfo,
    pub outcome: Outcome,
    pub content_hash: String,
    pub timings: Option<Timings>,
}

impl RunManifest {
    /// Hash of everything except `content_hash` and `timings`.
    pub fn compute_hash(&self) -> String {
        let mut bare = self.clone();
        bare.content_hash.clear();
        bare.timings = None;
        sha256_hex(&serde_json::to_vec(&bare).expect("manifest serializes"))
    }

    pub fn seal(&mut self) {
        self.content_hash = self.compute_hash();
    }

    pub fn to_json(&self) -> CliResult<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> CliResult<RunManifest> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(MANIFEST_FORMAT_VERSION) => Ok(serde_json::from_value(value)?),
            Some(v) => Err(CliError::Format(format!(
                "manifest format version {v} is not supported (expected {MANIFEST_FORMAT_VERSION})"
            ))),
            None => Err(CliError::Format("manifest has no format_version".into())),
        }
    }

    /// `(metric name, folds, summary)` for the report table.
    fn headline(&self) -> (&'static str, usize, f64, f64) {
        match &self.outcome {
            Outcome::Train(t) => ("train_pos_at_top", 0, t.train_pos_at_top, 0.0),
            Outcome::CrossValidation(r) => ("cv_pos_at_top", r.folds, r.summary.mean, r.summary.stderr),
            Outcome::OneVsAll(r) => ("ova_macro_cv_pos_at_top", r.folds, r.summary.mean, r.summary.stderr),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub dataset: String,
    pub metric: String,
    pub folds: usize,
    pub mean: f64,
    pub stderr: f64,
    pub fingerprint: String,
    /// Another manifest names the same dataset with different contents.
    pub fingerprint_mismatch: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

pub fn build_report(manifests: &[RunManifest]) -> CliResult<Report> {
    if manifests.is_empty() {
        return Err(CliError::Usage("report needs at least one manifest".into()));
    }
    let mut prints: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for m in manifests {
        let seen = prints.entry(m.dataset.name.as_str()).or_default();
        if !seen.contains(&m.dataset.fingerprint.as_str()) {
            seen.push(&m.dataset.fingerprint);
        }
    }
    let mut warnings = Vec::new();
    for (name, fps) in &prints {
        if fps.len() > 1 {
            warnings.push(format!("dataset `{name}` appears with {} different fingerprints", fps.len()));
        }
    }
    for m in manifests {
        if m.compute_hash() != m.content_hash {
            warnings.push(format!("manifest for {} on `{}` fails its content hash", m.method, m.dataset.name));
        }
    }
    let rows = manifests
        .iter()
        .map(|m| {
            let (metric, folds, mean, stderr) = m.headline();
            ReportRow {
                method: m.method.clone(),
                dataset: m.dataset.name.clone(),
                metric: metric.to_string(),
                folds,
                mean,
                stderr,
                fingerprint: m.dataset.fingerprint.clone(),
                fingerprint_mismatch: prints[m.dataset.name.as_str()].len() > 1,
            }
        })
        .collect();
    Ok(Report { format_version: MANIFEST_FORMAT_VERSION, rows, warnings })
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "dataset", "metric", "folds", "mean", "stderr", "fingerprint", "fingerprint_mismatch"])
            .expect("in-memory csv");
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.dataset.clone(),
                r.metric.clone(),
                r.folds.to_string(),
                format!("{:.6}", r.mean),
                format!("{:.6}", r.stderr),
                r.fingerprint.clone(),
                r.fingerprint_mismatch.to_string(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }

    pub fn to_json(&self) -> CliResult<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}
