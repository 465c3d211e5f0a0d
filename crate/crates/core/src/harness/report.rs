use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GridPoint, Mode, Selection};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub pretrain_seconds: f64,
    pub tune_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub label: String,
    pub mode: Mode,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub grid_point: GridPoint,
    pub selection: Selection,
    /// Selecting by test accuracy follows the end-to-end protocol but leaks
    /// test labels into model choice.
    pub selection_uses_test_labels: bool,
    pub grid_points_evaluated: usize,
    /// Grid points dropped because a seed failed numerically.
    #[serde(default)]
    pub grid_points_failed: usize,
    pub pretrain_trainable: usize,
    pub downstream_encoder_trainable: usize,
    pub downstream_prompt_trainable: usize,
    pub downstream_trainable: usize,
    pub peak_memory_bytes: usize,
    pub timing: Timing,
}

impl RunReport {
    /// The report with wall-clock fields zeroed, for reproducibility checks.
    pub fn numeric_payload(&self) -> RunReport {
        RunReport { timing: Timing { pretrain_seconds: 0.0, tune_seconds: 0.0 }, ..self.clone() }
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::Config(format!("unknown report format {other:?} (json, csv)"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub reports: Vec<RunReport>,
}

pub const CSV_HEADER: &str = "label,mode,dataset,seed,accuracy,mean,std,lr,weight_decay,hidden,rank,alpha,\
pretrain_trainable,downstream_trainable,peak_memory_bytes";

pub fn report_json(reports: &[RunReport]) -> Result<String> {
    let file = ReportFile { schema_version: SCHEMA_VERSION, reports: reports.to_vec() };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Config(e.to_string()))
}

/// One row per (report, seed).
pub fn report_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let g = &r.grid_point;
        for (seed, acc) in r.seeds.iter().zip(&r.accuracies) {
            out.push_str(&format!(
                "{},{},{},{seed},{acc},{},{},{},{},{},{},{},{},{},{}\n",
                r.label,
                r.mode,
                r.dataset,
                r.mean,
                r.std,
                g.lr,
                g.weight_decay,
                g.hidden,
                g.rank,
                g.alpha,
                r.pretrain_trainable,
                r.downstream_trainable,
                r.peak_memory_bytes
            ));
        }
    }
    out
}

pub fn emit_report(reports: &[RunReport], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let body = match format {
        ReportFormat::Json => report_json(reports)?,
        ReportFormat::Csv => report_csv(reports),
    };
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(body.as_bytes()).map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Ablation;

    fn report(mode: Mode, seeds: Vec<u64>, acc: Vec<f64>) -> RunReport {
        let (mean, std) = mean_std(&acc);
        RunReport {
            schema_version: SCHEMA_VERSION,
            label: mode.to_string(),
            mode,
            dataset: "toy".into(),
            seeds,
            accuracies: acc,
            mean,
            std,
            grid_point: GridPoint { lr: 1e-4, weight_decay: 2.5e-6, hidden: 128, rank: 8, alpha: 0.3 },
            selection: Selection::TestAccuracy,
            selection_uses_test_labels: true,
            grid_points_evaluated: 1,
            grid_points_failed: 0,
            pretrain_trainable: 10,
            downstream_encoder_trainable: 5,
            downstream_prompt_trainable: 2,
            downstream_trainable: 7,
            peak_memory_bytes: 1234,
            timing: Timing { pretrain_seconds: 0.1, tune_seconds: 0.2 },
        }
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn json_roundtrip_exact() {
        let rs = vec![report(Mode::Dagprompt, vec![1, 2], vec![0.1 + 0.2, 1.0 / 3.0])];
        let text = report_json(&rs).unwrap();
        let back: ReportFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.schema_version, SCHEMA_VERSION);
        assert_eq!(back.reports, rs);
        assert!(text.contains("\"schema_version\""));
    }

    #[test]
    fn csv_rows_per_mode_and_seed() {
        let rs = vec![
            report(Mode::Dagprompt, vec![1, 2, 3], vec![0.5, 0.6, 0.7]),
            report(Mode::Ablation(Ablation::NoGlora), vec![1, 2, 3], vec![0.4, 0.5, 0.6]),
        ];
        let csv = report_csv(&rs);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 6);
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[4].starts_with("no_glora,no_glora,toy,1,0.4,"));
    }

    #[test]
    fn emit_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let rs = vec![report(Mode::ScratchGcn, vec![0], vec![0.25])];
        emit_report(&rs, dir.path().join("r.json"), ReportFormat::Json).unwrap();
        emit_report(&rs, dir.path().join("r.csv"), ReportFormat::Csv).unwrap();
        assert!(fs::read_to_string(dir.path().join("r.csv")).unwrap().contains("scratch_gcn"));
        let err = emit_report(&rs, dir.path().join("missing/r.json"), ReportFormat::Json).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
