//! Everything a training run records: per-stage wall time, meta-gradient
//! statistics, gate activity, evaluations and example-weight histograms.

mod io;
mod summary;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_dir, write_dir, SCHEMA_LINE_PREFIX, SCHEMA_VERSION};
pub use summary::{
    summarize, write_ablation_csv, write_summary_json, AblationRow, StageTimeMs, Summary,
    ABLATION_HEADER,
};

/// Default sliding window for meta-gradient statistics.
pub const DEFAULT_GRAD_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    VirtualTrain,
    MetaTrain,
    ActualTrain,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::VirtualTrain, Stage::MetaTrain, Stage::ActualTrain];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::VirtualTrain => "virtual_train",
            Stage::MetaTrain => "meta_train",
            Stage::ActualTrain => "actual_train",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub iteration: u64,
    pub stage: Stage,
    pub wall_nanos: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaGradStats {
    pub iteration: u64,
    pub grad_norm: f64,
    /// Mean over coordinates of the per-coordinate standard deviation in the window.
    pub grad_std: f64,
    pub active_layers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub iteration: u64,
    pub layer: usize,
    pub soft: f64,
    pub hard: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

/// Example weights over `[0, 1]` split by clean and noisy examples.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightHistogram {
    pub iteration: u64,
    pub clean: Vec<u64>,
    pub noisy: Vec<u64>,
}

impl WeightHistogram {
    pub fn from_weights(iteration: u64, weights: &[f64], clean_flags: &[bool], bins: usize) -> Result<Self> {
        if bins == 0 || weights.len() != clean_flags.len() {
            return Err(Error::dim("histogram needs bins and one flag per weight"));
        }
        let mut clean = vec![0; bins];
        let mut noisy = vec![0; bins];
        for (&w, &is_clean) in weights.iter().zip(clean_flags) {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Validation(format!("weight {w} outside [0, 1]")));
            }
            let b = ((w * bins as f64) as usize).min(bins - 1);
            if is_clean {
                clean[b] += 1;
            } else {
                noisy[b] += 1;
            }
        }
        Ok(WeightHistogram {
            iteration,
            clean,
            noisy,
        })
    }

    pub fn bins(&self) -> usize {
        self.clean.len()
    }
}

/// Append-only record of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricLog {
    pub timings: Vec<StageTiming>,
    pub grad_stats: Vec<MetaGradStats>,
    pub gates: Vec<GateRecord>,
    pub evals: Vec<EvalRecord>,
    pub histograms: Vec<WeightHistogram>,
}

fn check_order(last: Option<u64>, iteration: u64, what: &str) -> Result<()> {
    match last {
        Some(prev) if iteration < prev => Err(Error::Validation(format!(
            "{what} iteration {iteration} precedes recorded iteration {prev}"
        ))),
        _ => Ok(()),
    }
}

impl MetricLog {
    pub fn record_timing(&mut self, iteration: u64, stage: Stage, wall_nanos: u64) -> Result<()> {
        check_order(self.timings.last().map(|t| t.iteration), iteration, "timing")?;
        self.timings.push(StageTiming {
            iteration,
            stage,
            wall_nanos,
        });
        Ok(())
    }

    pub fn record_grad_stats(&mut self, stats: MetaGradStats) -> Result<()> {
        check_order(self.grad_stats.last().map(|s| s.iteration), stats.iteration, "gradient")?;
        if !(stats.grad_std >= 0.0) {
            return Err(Error::Validation("gradient std must be non-negative".into()));
        }
        self.grad_stats.push(stats);
        Ok(())
    }

    pub fn record_gates(&mut self, iteration: u64, gates: &[(usize, f64, bool)]) -> Result<()> {
        check_order(self.gates.last().map(|g| g.iteration), iteration, "gate")?;
        self.gates.extend(gates.iter().map(|&(layer, soft, hard)| GateRecord {
            iteration,
            layer,
            soft,
            hard,
        }));
        Ok(())
    }

    pub fn record_eval(&mut self, record: EvalRecord) -> Result<()> {
        check_order(self.evals.last().map(|e| e.iteration), record.iteration, "evaluation")?;
        self.evals.push(record);
        Ok(())
    }

    pub fn record_histogram(&mut self, hist: WeightHistogram) -> Result<()> {
        check_order(self.histograms.last().map(|h| h.iteration), hist.iteration, "histogram")?;
        self.histograms.push(hist);
        Ok(())
    }

    /// Mean wall time of a stage in milliseconds, 0 when never recorded.
    pub fn mean_stage_ms(&self, stage: Stage) -> f64 {
        let times: Vec<u64> = self
            .timings
            .iter()
            .filter(|t| t.stage == stage)
            .map(|t| t.wall_nanos)
            .collect();
        if times.is_empty() {
            0.0
        } else {
            times.iter().map(|&t| t as f64).sum::<f64>() / times.len() as f64 / 1e6
        }
    }

    pub fn peak_accuracy(&self) -> Option<f64> {
        self.evals.iter().map(|e| e.test_accuracy).reduce(f64::max)
    }

    /// Log with wall times dropped, for comparisons that must ignore timing.
    pub fn without_timings(&self) -> MetricLog {
        MetricLog {
            timings: Vec::new(),
            ..self.clone()
        }
    }
}

/// Per-coordinate mean and standard deviation over the last `width` vectors.
#[derive(Debug, Clone)]
pub struct GradWindow {
    width: usize,
    buffer: VecDeque<Vec<f64>>,
}

impl GradWindow {
    pub fn new(width: usize) -> Self {
        GradWindow {
            width: width.max(1),
            buffer: VecDeque::new(),
        }
    }

    pub fn push(&mut self, grad: &[f64]) {
        if self.buffer.len() == self.width {
            self.buffer.pop_front();
        }
        self.buffer.push_back(grad.to_vec());
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Population mean and standard deviation per coordinate (Welford updates).
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let dim = self.buffer.front().map_or(0, Vec::len);
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for (count, g) in self.buffer.iter().enumerate() {
            let c = (count + 1) as f64;
            for k in 0..dim {
                let delta = g[k] - mean[k];
                mean[k] += delta / c;
                m2[k] += delta * (g[k] - mean[k]);
            }
        }
        let n = self.buffer.len().max(1) as f64;
        let std = m2.iter().map(|v| (v / n).max(0.0).sqrt()).collect();
        (mean, std)
    }

    /// Mean of the per-coordinate standard deviations.
    pub fn mean_std(&self) -> f64 {
        let (_, std) = self.moments();
        if std.is_empty() {
            0.0
        } else {
            std.iter().sum::<f64>() / std.len() as f64
        }
    }
}

/// A [`MetricLog`] plus the sliding window feeding its gradient statistics.
#[derive(Debug, Clone)]
pub struct Recorder {
    pub log: MetricLog,
    window: GradWindow,
}

impl Recorder {
    pub fn new(window: usize) -> Self {
        Recorder {
            log: MetricLog::default(),
            window: GradWindow::new(window),
        }
    }

    pub fn record_meta_grad(&mut self, iteration: u64, grad: &[f64], active_layers: usize) -> Result<()> {
        self.window.push(grad);
        let grad_norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.log.record_grad_stats(MetaGradStats {
            iteration,
            grad_norm,
            grad_std: self.window.mean_std(),
            active_layers,
        })
    }

    pub fn into_log(self) -> MetricLog {
        self.log
    }
}
