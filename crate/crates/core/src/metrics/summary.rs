use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MetricLog, Stage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTimeMs {
    pub virtual_train: f64,
    pub meta_train: f64,
    pub actual_train: f64,
}

/// Aggregate of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub peak_accuracy: Option<f64>,
    pub stage_time_ms: StageTimeMs,
    pub mean_grad_std: Option<f64>,
    /// Mean Meta-Train time of the all-layers baseline over this run's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
    pub config_digest: String,
}

pub fn summarize(log: &MetricLog, all_layers_baseline: Option<&MetricLog>, config_digest: &str) -> Summary {
    let meta_train = log.mean_stage_ms(Stage::MetaTrain);
    let speedup = all_layers_baseline.and_then(|b| {
        let base = b.mean_stage_ms(Stage::MetaTrain);
        (meta_train > 0.0 && base > 0.0).then(|| base / meta_train)
    });
    let mean_grad_std = (!log.grad_stats.is_empty()).then(|| {
        log.grad_stats.iter().map(|s| s.grad_std).sum::<f64>() / log.grad_stats.len() as f64
    });
    Summary {
        peak_accuracy: log.peak_accuracy(),
        stage_time_ms: StageTimeMs {
            virtual_train: log.mean_stage_ms(Stage::VirtualTrain),
            meta_train,
            actual_train: log.mean_stage_ms(Stage::ActualTrain),
        },
        mean_grad_std,
        speedup,
        config_digest: config_digest.to_string(),
    }
}

pub fn write_summary_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("serialising {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// One strategy's line of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: String,
    pub peak_accuracy: Option<f64>,
    pub meta_train_ms: f64,
    pub speedup: Option<f64>,
    pub mean_grad_std: Option<f64>,
}

pub const ABLATION_HEADER: [&str; 5] = ["strategy", "peak_accuracy", "meta_train_ms", "speedup", "mean_grad_std"];

pub fn write_ablation_csv(rows: &[AblationRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    w.write_record(ABLATION_HEADER).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
