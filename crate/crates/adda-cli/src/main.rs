//! `adda` — pretrain, probe, ablate, plot, and generate data.

mod report;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adda_core::ablation;
use adda_core::checkpoint::load_checkpoint;
use adda_core::config::TrainConfig;
use adda_core::data::{self, GenParams};
use adda_core::error::{Error, Result};
use adda_core::eval::{extract_features, linear_probe, ProbeConfig};
use adda_core::metrics::read_metrics;
use adda_core::trainer;

#[derive(Parser)]
#[command(name = "adda", version, about = "Feedback-driven augmentation scheduling for contrastive pretraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run closed-loop pretraining from a config file.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Linear classification on a checkpoint's frozen features.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 50)]
        probe_epochs: u32,
        /// Where the result row is appended.
        #[arg(long, default_value = "probe.csv")]
        out: PathBuf,
    },
    /// Adaptive run plus one fixed baseline per composition, each probed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render metric plots (SVG) from a metrics CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic labeled dataset.
    GenData {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 500)]
        per_class: usize,
        /// Image size as HxW, e.g. 16x16.
        #[arg(long, default_value = "16x16")]
        hw: String,
        #[arg(long)]
        out: PathBuf,
        /// `easy` also writes a ready-made 3-composition config next to
        /// the dataset.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Pretrain { config, seed, resume } => cmd_pretrain(&config, seed, resume),
        Command::Probe { checkpoint, dataset, probe_epochs, out } => {
            cmd_probe(&checkpoint, &dataset, probe_epochs, &out)
        }
        Command::Ablate { config } => cmd_ablate(&config),
        Command::Report { metrics, out } => cmd_report(&metrics, &out),
        Command::GenData { classes, per_class, hw, out, scenario, seed } => {
            cmd_gen_data(classes, per_class, &hw, &out, scenario.as_deref(), seed)
        }
    }
}

fn load_config_dataset(path: &PathBuf, seed: Option<u64>) -> Result<(TrainConfig, data::Dataset)> {
    let mut cfg = TrainConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let Some(dataset_path) = cfg.dataset.clone() else {
        return Err(Error::Config("config is missing the `dataset` key".into()));
    };
    let dataset = data::load_dataset(&dataset_path)?;
    Ok((cfg, dataset))
}

fn cmd_pretrain(config: &PathBuf, seed: Option<u64>, resume: Option<PathBuf>) -> Result<()> {
    let (cfg, dataset) = load_config_dataset(config, seed)?;
    let result = match resume {
        Some(ckpt_path) => {
            let start = load_checkpoint(&ckpt_path)?;
            trainer::resume(&cfg, &dataset, start)?
        }
        None => trainer::pretrain(&cfg, &dataset)?,
    };
    println!(
        "done: {} epochs, checkpoint {}, metrics {}",
        result.checkpoint.epoch,
        cfg.checkpoint_out.display(),
        cfg.metrics_out.display()
    );
    Ok(())
}

fn cmd_probe(
    checkpoint: &PathBuf,
    dataset_path: &PathBuf,
    probe_epochs: u32,
    out: &PathBuf,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let dataset = data::load_dataset(dataset_path)?;
    let (features, labels) = extract_features(&ck.pair.query, &dataset)?;
    let probe_cfg = ProbeConfig { epochs: probe_epochs, ..ProbeConfig::default() };
    let outcome = linear_probe(&features, &labels, dataset.num_classes() as usize, &probe_cfg)?;

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let fresh = !out.exists();
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(out)?;
    if fresh {
        writeln!(file, "checkpoint,probe_epochs,top1")?;
    }
    writeln!(file, "{},{},{}", checkpoint.display(), probe_epochs, outcome.top1)?;
    println!("top1 {} ({} probe epochs) -> {}", outcome.top1, probe_epochs, out.display());
    Ok(())
}

fn cmd_ablate(config: &PathBuf) -> Result<()> {
    let (cfg, dataset) = load_config_dataset(config, None)?;
    let rows = ablation::ablate(&cfg, &dataset)?;
    println!("run_id  method      final_comp  top1");
    for row in &rows {
        println!(
            "{:>6}  {:<10}  {:>10}  {:.4}",
            row.run_id, row.method, row.final_comp, row.top1
        );
    }
    println!("appended to {}", cfg.ablation_out.display());
    Ok(())
}

fn cmd_report(metrics: &PathBuf, out: &PathBuf) -> Result<()> {
    let table = read_metrics(metrics)?;
    let written = report::write_plots(&table, out)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_gen_data(
    classes: usize,
    per_class: usize,
    hw: &str,
    out: &PathBuf,
    scenario: Option<&str>,
    seed: u64,
) -> Result<()> {
    let (h, w) = hw
        .split_once('x')
        .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
        .ok_or_else(|| Error::Config(format!("--hw must look like 16x16, got `{hw}`")))?;
    let params = GenParams { num_classes: classes, per_class, height: h, width: w };

    match scenario {
        None => {
            let ds = data::generate_synthetic(params, seed)?;
            data::save_dataset(&ds, out)?;
            println!("wrote {} ({} images)", out.display(), ds.len());
        }
        Some("easy") => {
            let (ds, _) = data::easy_scenario(params, seed)?;
            data::save_dataset(&ds, out)?;
            let conf_path = out.with_extension("easy.conf");
            std::fs::write(&conf_path, easy_config_text(out, seed))?;
            println!(
                "wrote {} ({} images) and scenario config {}",
                out.display(),
                ds.len(),
                conf_path.display()
            );
        }
        Some(other) => {
            return Err(Error::Config(format!(
                "unknown scenario `{other}` (available: easy)"
            )))
        }
    }
    Ok(())
}

/// Config text matching `data::easy_scenario_comps`, pointed at the dataset.
fn easy_config_text(dataset: &PathBuf, seed: u64) -> String {
    let comps = data::easy_scenario_comps();
    let mut text = String::new();
    text.push_str("# closed-loop testbed: composition 0 produces identical views\n");
    text.push_str(&format!("dataset = {}\n", dataset.display()));
    text.push_str(&format!("seed = {seed}\n"));
    text.push_str("epochs = 30\n");
    text.push_str(&format!("n_comps = {}\n", comps.len()));
    for (i, c) in comps.iter().enumerate() {
        text.push_str(&format!("comp.{i}.crop_min = {}\n", c.crop_min));
        text.push_str(&format!("comp.{i}.crop_max = {}\n", c.crop_max));
        text.push_str(&format!("comp.{i}.jitter_freq = {}\n", c.jitter_freq));
        text.push_str(&format!("comp.{i}.jitter_strength = {}\n", c.jitter_strength));
        text.push_str(&format!("comp.{i}.grayscale_freq = {}\n", c.grayscale_freq));
        text.push_str(&format!("comp.{i}.blur_freq = {}\n", c.blur_freq));
        text.push_str(&format!("comp.{i}.blur_sigma_min = {}\n", c.blur_sigma_min));
        text.push_str(&format!("comp.{i}.blur_sigma_max = {}\n", c.blur_sigma_max));
        text.push_str(&format!("comp.{i}.flip_freq = {}\n", c.flip_freq));
    }
    text
}
