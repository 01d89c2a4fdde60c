//! Comparison harness: one closed-loop run against one fixed baseline per
//! composition, each scored by the linear probe. Results append to a CSV so
//! repeated sweeps accumulate under distinct run ids.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{extract_features, linear_probe, ProbeConfig};
use crate::trainer::{fixed_baseline, pretrain, TrainResult};

/// One comparison row.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub run_id: u32,
    pub method: String,
    /// Composition holding the largest sub-batch in the last epoch.
    pub final_comp: usize,
    pub top1: f32,
}

const HEADER: &str = "run_id,method,final_comp,top1";

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("");
    let name = if ext.is_empty() {
        format!("{stem}{suffix}")
    } else {
        format!("{stem}{suffix}.{ext}")
    };
    path.with_file_name(name)
}

/// Largest last-epoch sub-batch, ties toward the lowest index.
fn final_composition(result: &TrainResult) -> usize {
    let sizes = &result.stats.last().expect("at least one epoch").sizes;
    let mut best = 0usize;
    for (i, &s) in sizes.iter().enumerate() {
        if s > sizes[best] {
            best = i;
        }
    }
    best
}

fn probe_top1(cfg: &TrainConfig, dataset: &Dataset, result: &TrainResult) -> Result<f32> {
    let (features, labels) = extract_features(&result.checkpoint.pair.query, dataset)?;
    let probe_cfg = ProbeConfig {
        epochs: cfg.probe_epochs,
        lr: cfg.probe_lr,
        batch: cfg.probe_batch,
        seed: cfg.seed,
        holdout: 0.2,
    };
    let out = linear_probe(&features, &labels, dataset.num_classes() as usize, &probe_cfg)?;
    Ok(out.top1)
}

fn next_run_id(path: &Path) -> Result<u32> {
    if !path.exists() {
        return Ok(0);
    }
    let text = std::fs::read_to_string(path)?;
    let max = text
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').next())
        .filter_map(|s| s.parse::<u32>().ok())
        .max();
    Ok(max.map_or(0, |m| m + 1))
}

/// Runs the adaptive pretrain plus one fixed baseline per composition,
/// probes every checkpoint, and appends the comparison rows.
pub fn ablate(cfg: &TrainConfig, dataset: &Dataset) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let run_id = next_run_id(&cfg.ablation_out)?;
    let mut rows = Vec::with_capacity(1 + cfg.n_comps());

    let mut adaptive_cfg = cfg.clone();
    adaptive_cfg.metrics_out = with_suffix(&cfg.metrics_out, "_adaptive");
    adaptive_cfg.checkpoint_out = with_suffix(&cfg.checkpoint_out, "_adaptive");
    let adaptive = pretrain(&adaptive_cfg, dataset)?;
    rows.push(AblationRow {
        run_id,
        method: "adaptive".into(),
        final_comp: final_composition(&adaptive),
        top1: probe_top1(cfg, dataset, &adaptive)?,
    });

    for comp in 0..cfg.n_comps() {
        let mut fixed_cfg = cfg.clone();
        let tag = format!("_fixed{comp}");
        fixed_cfg.metrics_out = with_suffix(&cfg.metrics_out, &tag);
        fixed_cfg.checkpoint_out = with_suffix(&cfg.checkpoint_out, &tag);
        let fixed = fixed_baseline(&fixed_cfg, dataset, comp)?;
        rows.push(AblationRow {
            run_id,
            method: format!("fixed{comp}"),
            final_comp: comp,
            top1: probe_top1(cfg, dataset, &fixed)?,
        });
    }

    append_rows(&cfg.ablation_out, &rows)?;
    Ok(rows)
}

fn append_rows(path: &Path, rows: &[AblationRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let fresh = !path.exists();
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(file, "{HEADER}")?;
    }
    for row in rows {
        writeln!(file, "{},{},{},{}", row.run_id, row.method, row.final_comp, row.top1)?;
    }
    Ok(())
}

/// Reads an ablation CSV back, for reporting and tests.
pub fn read_ablation(path: &Path) -> Result<Vec<AblationRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, head)) if head == HEADER => {}
        _ => return Err(Error::Csv { line: 1, message: "bad ablation header".into() }),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Csv {
                line: idx + 1,
                message: format!("{} fields, expected 4", fields.len()),
            });
        }
        let bad = |what: &str| Error::Csv { line: idx + 1, message: format!("bad {what}") };
        rows.push(AblationRow {
            run_id: fields[0].parse().map_err(|_| bad("run_id"))?,
            method: fields[1].to_string(),
            final_comp: fields[2].parse().map_err(|_| bad("final_comp"))?,
            top1: fields[3].parse().map_err(|_| bad("top1"))?,
        });
    }
    Ok(rows)
}
