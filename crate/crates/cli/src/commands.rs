use std::path::{Path, PathBuf};

use famus_core::datagen::write_csv;
use famus_core::metrics::{summarize, write_ablation_csv, write_dir, write_summary_json, AblationRow, Summary};
use famus_core::{run_training, GatingStrategy, TrainReport};

use crate::config::{ExperimentConfig, NOISE_CONVENTION};
use crate::{CliError, Common};

pub fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    if !path.is_file() {
        return Err(CliError::Config(format!("config file {} does not exist", path.display())));
    }
    let cfg = ExperimentConfig::load(path)?.resolve(common.seed, common.out.clone())?;
    let out = match &cfg.out {
        Some(o) => o.clone(),
        None => PathBuf::from("runs").join(path.file_stem().unwrap_or_default()),
    };
    Ok((cfg, out))
}

fn base_dir(common: &Common) -> PathBuf {
    common
        .config
        .as_ref()
        .and_then(|p| p.parent())
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_snapshot(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let path = out.join("config.resolved.toml");
    let text = format!("# {NOISE_CONVENTION}\n{}", cfg.to_toml()?);
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))
}

fn strategy_dir(out: &Path, strategy: GatingStrategy) -> PathBuf {
    out.join(strategy.to_string().replace(':', "_"))
}

/// Runs every strategy, writing each run's metrics and summary.
fn run_all(common: &Common) -> Result<(ExperimentConfig, PathBuf, Vec<(GatingStrategy, TrainReport)>), CliError> {
    let (cfg, out) = load(common)?;
    let (dataset, network) = cfg.require_training()?;
    let ds = dataset.build(cfg.seed, &base_dir(common))?;
    write_snapshot(&cfg, &out)?;
    let mut reports = Vec::new();
    for &strategy in &cfg.strategies {
        eprintln!("running {strategy} for {} iterations", cfg.train.iterations);
        let report = run_training(&cfg.train, strategy, &network.widths, network.activation, &ds)?;
        write_dir(&report.log, strategy_dir(&out, strategy))?;
        reports.push((strategy, report));
    }
    Ok((cfg, out, reports))
}

fn summaries(cfg: &ExperimentConfig, reports: &[(GatingStrategy, TrainReport)]) -> Result<Vec<Summary>, CliError> {
    let digest = cfg.digest()?;
    let baseline = reports.iter().find(|(s, _)| *s == GatingStrategy::AllLayers).map(|(_, r)| &r.log);
    Ok(reports.iter().map(|(_, r)| summarize(&r.log, baseline, &digest)).collect())
}

pub fn train(common: &Common) -> Result<(), CliError> {
    let (cfg, out, reports) = run_all(common)?;
    let sums = summaries(&cfg, &reports)?;
    for ((strategy, _), summary) in reports.iter().zip(&sums) {
        write_summary_json(summary, strategy_dir(&out, *strategy).join("summary.json"))?;
        println!(
            "{strategy}: peak accuracy {}, meta-train {:.2} ms{}",
            summary.peak_accuracy.map_or("n/a".into(), |a| format!("{a:.4}")),
            summary.stage_time_ms.meta_train,
            summary.speedup.map_or(String::new(), |s| format!(", speedup {s:.2}x"))
        );
    }
    if reports.len() > 1 {
        let table: serde_json::Map<String, serde_json::Value> = reports
            .iter()
            .zip(&sums)
            .map(|((s, _), sum)| (s.to_string(), serde_json::to_value(sum).expect("summary serialises")))
            .collect();
        write_summary_json(&table, out.join("comparison.json"))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn ablate(common: &Common) -> Result<(), CliError> {
    let (cfg, out, reports) = run_all(common)?;
    let sums = summaries(&cfg, &reports)?;
    let rows: Vec<AblationRow> = reports
        .iter()
        .zip(&sums)
        .map(|((s, _), sum)| AblationRow {
            strategy: s.to_string(),
            peak_accuracy: sum.peak_accuracy,
            meta_train_ms: sum.stage_time_ms.meta_train,
            speedup: sum.speedup,
            mean_grad_std: sum.mean_grad_std,
        })
        .collect();
    let path = out.join("ablation.csv");
    write_ablation_csv(&rows, &path)?;
    for r in &rows {
        println!(
            "{:<14} peak {:>7} meta-train {:>9.2} ms speedup {:>6} grad std {}",
            r.strategy,
            r.peak_accuracy.map_or("n/a".into(), |a| format!("{a:.4}")),
            r.meta_train_ms,
            r.speedup.map_or("n/a".into(), |s| format!("{s:.2}")),
            r.mean_grad_std.map_or("n/a".into(), |s| format!("{s:.3e}")),
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn datagen(common: &Common) -> Result<(), CliError> {
    let (cfg, out) = load(common)?;
    let dataset = cfg.dataset.as_ref().ok_or_else(|| CliError::Config("missing [dataset] section".into()))?;
    let ds = dataset.build(cfg.seed, &base_dir(common))?;
    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    for (name, set) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        write_csv(set, out.join(format!("{name}.csv")))?;
    }
    write_snapshot(&cfg, &out)?;
    println!(
        "wrote {} train ({:.1}% noisy), {} val, {} test examples to {}",
        ds.train.len(),
        100.0 * ds.train.noisy_fraction(),
        ds.val.len(),
        ds.test.len(),
        out.display()
    );
    Ok(())
}
