//! Per-epoch training statistics and their CSV form.
//!
//! The CSV is the run's deterministic audit trail: every field is a pure
//! function of (config, seed), so identical runs produce byte-identical
//! files. Wall-clock timing is kept in memory and printed to the console,
//! never written into the CSV. One row per epoch; floats use the shortest
//! round-trip formatting; compositions without data record `NaN`.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Everything recorded about one epoch.
#[derive(Debug, Clone)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: u32,
    /// Allocation probabilities used this epoch.
    pub probs: Vec<f32>,
    /// Controller scores that produced those probabilities.
    pub scores: Vec<f32>,
    /// Realized per-composition sample counts.
    pub sizes: Vec<usize>,
    /// Mean pretext accuracy per composition; NaN when it saw no data.
    pub acc: Vec<f32>,
    /// Mean loss per composition; NaN when it saw no data.
    pub mean_loss: Vec<f32>,
    /// Probability-weighted total loss.
    pub total_loss: f32,
    /// Population standard deviation of the probabilities.
    pub p_std: f32,
    /// Wall-clock seconds; reported on the console, not serialized.
    pub seconds: f64,
}

/// Population standard deviation of a probability vector.
pub fn prob_std(p: &[f32]) -> f32 {
    let n = p.len() as f32;
    let mean = p.iter().sum::<f32>() / n;
    (p.iter().map(|&v| (v - mean) * (v - mean)).sum::<f32>() / n).sqrt()
}

pub fn header(n_comps: usize) -> String {
    let mut cols = vec!["epoch".to_string()];
    let block = |name: &str| (0..n_comps).map(move |i| format!("{name}_{i}")).collect::<Vec<_>>();
    cols.extend(block("comp_id"));
    cols.extend(block("p"));
    cols.extend(block("score"));
    cols.extend(block("size"));
    cols.extend(block("acc"));
    cols.extend(block("mean_loss"));
    cols.push("total_loss".into());
    cols.push("p_std".into());
    cols.join(",")
}

pub fn row(stats: &EpochStats) -> String {
    let mut fields = vec![stats.epoch.to_string()];
    fields.extend((0..stats.probs.len()).map(|i| i.to_string()));
    fields.extend(stats.probs.iter().map(|v| v.to_string()));
    fields.extend(stats.scores.iter().map(|v| v.to_string()));
    fields.extend(stats.sizes.iter().map(|v| v.to_string()));
    fields.extend(stats.acc.iter().map(|v| v.to_string()));
    fields.extend(stats.mean_loss.iter().map(|v| v.to_string()));
    fields.push(stats.total_loss.to_string());
    fields.push(stats.p_std.to_string());
    fields.join(",")
}

/// Appends one row per epoch as training progresses, so partial metrics
/// survive a failed run.
pub struct MetricsWriter {
    out: BufWriter<std::fs::File>,
    n_comps: usize,
}

impl MetricsWriter {
    pub fn create(path: &Path, n_comps: usize) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{}", header(n_comps))?;
        out.flush()?;
        Ok(MetricsWriter { out, n_comps })
    }

    pub fn append(&mut self, stats: &EpochStats) -> Result<()> {
        if stats.probs.len() != self.n_comps {
            return Err(Error::Shape(format!(
                "stats for {} compositions in a {}-composition file",
                stats.probs.len(),
                self.n_comps
            )));
        }
        writeln!(self.out, "{}", row(stats))?;
        self.out.flush()?;
        Ok(())
    }
}

/// Parsed metrics file.
#[derive(Debug, Clone)]
pub struct MetricsTable {
    pub n_comps: usize,
    pub rows: Vec<EpochStats>,
}

pub fn read_metrics(path: &Path) -> Result<MetricsTable> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (_, head) = lines
        .next()
        .ok_or(Error::Csv { line: 1, message: "empty metrics file".into() })?;
    let n_cols = head.split(',').count();
    if n_cols < 9 || (n_cols - 3) % 6 != 0 {
        return Err(Error::Csv {
            line: 1,
            message: format!("header has {n_cols} columns, not 3 + 6n"),
        });
    }
    let n_comps = (n_cols - 3) / 6;
    if head != header(n_comps) {
        return Err(Error::Csv { line: 1, message: "unrecognized header".into() });
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cols {
            return Err(Error::Csv {
                line: lineno,
                message: format!("{} fields, expected {n_cols}", fields.len()),
            });
        }
        let mut pos = 0usize;
        let mut next = || {
            let f = fields[pos];
            pos += 1;
            f
        };
        let parse_u32 = |s: &str, what: &str| -> Result<u32> {
            s.parse().map_err(|_| Error::Csv {
                line: lineno,
                message: format!("bad {what}: `{s}`"),
            })
        };
        let parse_f32 = |s: &str, what: &str| -> Result<f32> {
            s.parse().map_err(|_| Error::Csv {
                line: lineno,
                message: format!("bad {what}: `{s}`"),
            })
        };

        let epoch = parse_u32(next(), "epoch")?;
        for i in 0..n_comps {
            let id = parse_u32(next(), "comp_id")?;
            if id as usize != i {
                return Err(Error::Csv {
                    line: lineno,
                    message: format!("comp_id column {i} holds {id}"),
                });
            }
        }
        let mut block = |what: &str| -> Result<Vec<f32>> {
            (0..n_comps).map(|_| parse_f32(next(), what)).collect()
        };
        let probs = block("p")?;
        let scores = block("score")?;
        let sizes: Vec<usize> = {
            let vals = block("size")?;
            vals.iter().map(|&v| v as usize).collect()
        };
        let acc = block("acc")?;
        let mean_loss = block("mean_loss")?;
        let total_loss = parse_f32(next(), "total_loss")?;
        let p_std = parse_f32(next(), "p_std")?;

        rows.push(EpochStats {
            epoch,
            probs,
            scores,
            sizes,
            acc,
            mean_loss,
            total_loss,
            p_std,
            seconds: 0.0,
        });
    }

    Ok(MetricsTable { n_comps, rows })
}
