//! Command-line wiring: dataset generation, training, and evaluation with
//! config files, flag overrides, and self-describing output directories.
//!
//! Every run writes `resolved.json` (the effective config, loadable again
//! via --config) and `inputs.json` (sha256 of every input file) next to its
//! outputs, so any artifact can be reproduced from its snapshot.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::evaluation::{
    alpha_shape_baseline, dump_rollout_json, evaluate_model, normalized_benefit, rollout,
    Grounding, MetricReport,
};
use crate::graph::ConnectivityConfig;
use crate::model::{load_model, save_model};
use crate::training::{fit, TrainConfig};
use crate::truthsim::{
    load_dataset, save_dataset, Dataset, DatasetConfig, SplitCounts, Trajectory,
};
use crate::{Error, Result};

#[derive(Parser)]
#[command(name = "groundsim", version, about = "Learned mesh dynamics with point-cloud grounding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic soft-body dataset (train/val/test splits).
    Generate(GenerateArgs),
    /// Train a dynamics model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint: per-k rollouts, m+10 loss, baseline, benefit.
    Evaluate(EvaluateArgs),
}

/// Entry point shared by the binary; installs the worker pool, then runs
/// the chosen subcommand.
pub fn run(cli: &Cli) -> Result<()> {
    init_worker_pool()?;
    match &cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    }
}

/// Honor GROUNDSIM_WORKERS for the rayon pool size; unset keeps the default
/// (one worker per core).
fn init_worker_pool() -> Result<()> {
    let Ok(value) = std::env::var("GROUNDSIM_WORKERS") else {
        return Ok(());
    };
    let workers: usize = value
        .parse()
        .map_err(|_| Error::Config(format!("GROUNDSIM_WORKERS='{value}' is not a number")))?;
    if workers == 0 {
        return Err(Error::Config("GROUNDSIM_WORKERS must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(())
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Dataset preset: plate-small (64/16/16) or plate-full (675/135/135).
    #[arg(long, default_value = "plate-small", conflicts_with = "config")]
    pub preset: String,
    /// JSON config (same schema as the resolved.json this command writes).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; all per-trajectory seeds derive from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training-split trajectory count.
    #[arg(long)]
    pub trajectories: Option<usize>,
    #[arg(long)]
    pub val_trajectories: Option<usize>,
    #[arg(long)]
    pub test_trajectories: Option<usize>,
    /// Recorded steps per trajectory.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Observation noise std override.
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "dataset")]
    pub out: PathBuf,
}

fn preset_dataset(name: &str) -> Result<DatasetConfig> {
    let counts = match name {
        "plate-small" => SplitCounts { train: 64, val: 16, test: 16 },
        "plate-full" => SplitCounts { train: 675, val: 135, test: 135 },
        other => {
            return Err(Error::Config(format!(
                "unknown dataset preset '{other}'; use plate-small or plate-full"
            )))
        }
    };
    Ok(DatasetConfig {
        scenario: Default::default(),
        camera: Default::default(),
        counts,
        master_seed: 0,
    })
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => read_json_config::<DatasetConfig>(path)?,
        None => preset_dataset(&args.preset)?,
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(n) = args.trajectories {
        cfg.counts.train = n;
    }
    if let Some(n) = args.val_trajectories {
        cfg.counts.val = n;
    }
    if let Some(n) = args.test_trajectories {
        cfg.counts.test = n;
    }
    if let Some(steps) = args.steps {
        cfg.scenario.steps = steps;
    }
    if let Some(std) = args.noise_std {
        cfg.camera.noise_std = std;
    }
    if cfg.counts.train == 0 {
        return Err(Error::Config("at least one training trajectory is required".into()));
    }
    cfg.scenario.validate()?;
    cfg.camera.validate()?;

    let dataset = Dataset::generate(cfg.clone())?;
    save_dataset(&dataset, &args.out)?;
    write_snapshot(&args.out, &cfg, &[])?;

    for (name, split) in
        [("train", &dataset.train), ("val", &dataset.val), ("test", &dataset.test)]
    {
        let hist = material_histogram(split);
        println!(
            "{name}: {} trajectories x {} steps (auxetic {}, neutral {}, incompressible {})",
            split.len(),
            cfg.scenario.steps,
            hist[0],
            hist[1],
            hist[2]
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn material_histogram(split: &[Trajectory]) -> [usize; 3] {
    let mut hist = [0usize; 3];
    for traj in split {
        hist[traj.material.index()] += 1;
    }
    hist
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory written by `generate`.
    #[arg(long, default_value = "dataset")]
    pub dataset: PathBuf,
    /// Hyperparameter preset: desk (latent 32, 3 blocks) or full (128, 5).
    #[arg(long, default_value = "desk", conflicts_with = "config")]
    pub preset: String,
    /// Model variant: ggns (grounded), mgn (world edges, never grounded),
    /// or mgn-material (mgn plus the true material as a node feature).
    #[arg(long)]
    pub variant: Option<String>,
    /// JSON config (same schema as the resolved.json this command writes).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub imputation_prob: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Latent width override.
    #[arg(long)]
    pub latent: Option<usize>,
    /// Message-passing block count override.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

fn preset_train(name: &str) -> Result<TrainConfig> {
    match name {
        "desk" => Ok(TrainConfig::desk(0)),
        "full" => Ok(TrainConfig::full(0)),
        other => Err(Error::Config(format!(
            "unknown training preset '{other}'; use desk or full"
        ))),
    }
}

fn apply_variant(cfg: &mut TrainConfig, variant: &str) -> Result<()> {
    match variant {
        "ggns" => {
            cfg.connectivity = ConnectivityConfig::full_graph();
            cfg.model.edge_partitioning = false;
            cfg.imputation_prob = 0.5;
            cfg.material_feature = false;
        }
        "mgn" | "mgn-material" => {
            cfg.connectivity = ConnectivityConfig::mgn_world();
            cfg.model.edge_partitioning = true;
            cfg.imputation_prob = 0.0;
            cfg.material_feature = variant == "mgn-material";
        }
        other => {
            return Err(Error::Config(format!(
                "unknown variant '{other}'; use ggns, mgn, or mgn-material"
            )))
        }
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => read_json_config::<TrainConfig>(path)?,
        None => preset_train(&args.preset)?,
    };
    if let Some(variant) = &args.variant {
        apply_variant(&mut cfg, variant)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.max_epochs {
        cfg.max_epochs = n;
    }
    if let Some(n) = args.batch_size {
        cfg.batch_size = n;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(std) = args.noise_std {
        cfg.noise_std = std;
    }
    if let Some(p) = args.imputation_prob {
        cfg.imputation_prob = p;
    }
    if let Some(n) = args.patience {
        cfg.patience = n;
    }
    if let Some(n) = args.latent {
        cfg.model.latent_width = n;
    }
    if let Some(n) = args.blocks {
        cfg.model.message_passing_blocks = n;
    }
    cfg.validate()?;

    let dataset = load_dataset(&args.dataset)?;
    std::fs::create_dir_all(&args.out)?;
    let (params, report) = fit(&dataset, &cfg)?;

    let stem = args.out.join("checkpoint");
    save_model(&params, &stem)?;
    std::fs::write(
        args.out.join("checkpoint.train.json"),
        serde_json::to_string_pretty(&cfg)?,
    )?;
    report.write_csv(&args.out.join("training.csv"))?;
    report.write_json(&args.out.join("training.json"))?;
    write_snapshot(&args.out, &cfg, &dataset_files(&args.dataset))?;

    println!(
        "trained {} params for {} epochs ({} grounded / {} ungrounded samples)",
        report.param_count, report.epochs_run, report.grounded_samples, report.ungrounded_samples
    );
    match (report.best_epoch, report.best_val_loss) {
        (Some(epoch), Some(loss)) => println!("best validation loss {loss:.6e} at epoch {epoch}"),
        _ => println!("no validation epochs ran; checkpoint holds the initial parameters"),
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Dataset directory; evaluation uses its test split.
    #[arg(long, default_value = "dataset")]
    pub dataset: PathBuf,
    /// Checkpoint stem as written by train (e.g. run/checkpoint).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON config (same schema as the resolved.json this command writes).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated grounding intervals, e.g. 1,2,5,inf.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<String>>,
    /// Grounded prefix length for the m+10 metric.
    #[arg(long)]
    pub m: Option<usize>,
    /// IoU raster resolution.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Alpha for the reconstruction baseline.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Voxel cell for baseline subsampling (0 = clouds as stored).
    #[arg(long)]
    pub subsample_cell: Option<f64>,
    /// Dump the first test rollout per grounding as JSON.
    #[arg(long)]
    pub dump_rollouts: bool,
    /// Output directory.
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

/// Evaluation settings as written to resolved.json.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: Vec<String>,
    pub m: usize,
    pub resolution: usize,
    pub alpha: f64,
    pub subsample_cell: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { k: vec!["1".into(), "5".into(), "inf".into()], m: 5, resolution: 512, alpha: 0.45, subsample_cell: 0.0 }
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => read_json_config::<EvalConfig>(path)?,
        None => EvalConfig::default(),
    };
    if let Some(k) = &args.k {
        cfg.k = k.clone();
    }
    if let Some(m) = args.m {
        cfg.m = m;
    }
    if let Some(r) = args.resolution {
        cfg.resolution = r;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(c) = args.subsample_cell {
        cfg.subsample_cell = c;
    }
    let groundings: Vec<Grounding> =
        cfg.k.iter().map(|s| Grounding::parse(s)).collect::<Result<_>>()?;
    if groundings.is_empty() {
        return Err(Error::Config("at least one grounding interval is required".into()));
    }
    if cfg.resolution == 0 {
        return Err(Error::Config("resolution must be positive".into()));
    }

    let params = load_model(&args.checkpoint).map_err(|e| match e {
        Error::Io(io) => Error::format(args.checkpoint.display().to_string(), io.to_string()),
        other => other,
    })?;
    let train_cfg_path = args.checkpoint.with_extension("train.json");
    let train_cfg_text = std::fs::read_to_string(&train_cfg_path)
        .map_err(|e| Error::format(train_cfg_path.display().to_string(), e.to_string()))?;
    let train_cfg: TrainConfig = serde_json::from_str(&train_cfg_text)
        .map_err(|e| Error::format(train_cfg_path.display().to_string(), e.to_string()))?;
    let dataset = load_dataset(&args.dataset)?;
    if dataset.test.is_empty() {
        return Err(Error::Config("dataset has no test trajectories".into()));
    }
    std::fs::create_dir_all(&args.out)?;

    let mut summary_rows = Vec::new();
    let mut mse_by_k: Vec<(usize, f64)> = Vec::new();
    let mut ungrounded_mse = None;
    for grounding in &groundings {
        let report = evaluate_model(
            &params,
            &dataset.test,
            *grounding,
            cfg.m,
            &train_cfg.connectivity,
            train_cfg.material_feature,
            cfg.resolution,
        )?;
        let label = grounding.label();
        report.write_csv(&args.out.join(format!("metrics_k{label}.csv")))?;
        report.write_json(&args.out.join(format!("metrics_k{label}.json")))?;
        print_metric_line(&report);
        match grounding {
            Grounding::Every(k) => mse_by_k.push((*k, report.mean_rollout_mse)),
            Grounding::Never => ungrounded_mse = Some(report.mean_rollout_mse),
        }
        if args.dump_rollouts {
            let material_slot =
                train_cfg.material_feature.then(|| dataset.test[0].material.nu());
            let result = rollout(
                &params,
                &dataset.test[0],
                *grounding,
                &train_cfg.connectivity,
                material_slot,
            )?;
            dump_rollout_json(&result, &args.out.join(format!("rollout_k{label}.json")))?;
        }
        summary_rows.push(serde_json::json!({
            "k": label,
            "mean_rollout_mse": report.mean_rollout_mse,
            "std_rollout_mse": report.std_rollout_mse,
            "mean_rollout_iou": report.mean_rollout_iou,
            "mean_m_plus_10": report.mean_m_plus_10,
            "diverged": report.diverged_count,
        }));
    }

    let baseline_mean = write_baseline(&dataset.test, &cfg, &args.out)?;
    println!("alpha-shape baseline: mean IoU {baseline_mean:.4}");

    // The benefit curve needs the ungrounded reference; run it as an extra
    // pass when inf was not among the requested intervals.
    let mut benefit_json = serde_json::Value::Null;
    if mse_by_k.iter().any(|&(k, _)| k == 1) {
        let ungrounded = match ungrounded_mse {
            Some(u) => u,
            None => {
                let report = evaluate_model(
                    &params,
                    &dataset.test,
                    Grounding::Never,
                    cfg.m,
                    &train_cfg.connectivity,
                    train_cfg.material_feature,
                    cfg.resolution,
                )?;
                println!("(ungrounded reference for the benefit curve)");
                print_metric_line(&report);
                ungrounded_mse = Some(report.mean_rollout_mse);
                report.mean_rollout_mse
            }
        };
        mse_by_k.sort_unstable_by_key(|&(k, _)| k);
        let curve = normalized_benefit(&mse_by_k, ungrounded)?;
        let mut csv = String::from("k,normalized_benefit\n");
        for (k, benefit) in &curve {
            match benefit {
                Some(b) => csv.push_str(&format!("{k},{b}\n")),
                None => csv.push_str(&format!("{k},\n")),
            }
        }
        std::fs::write(args.out.join("benefit.csv"), csv)?;
        benefit_json = serde_json::json!(curve
            .iter()
            .map(|(k, b)| serde_json::json!({ "k": k, "benefit": b }))
            .collect::<Vec<_>>());
    } else {
        println!("skipping benefit curve: k=1 not evaluated");
    }

    let summary = serde_json::json!({
        "per_k": summary_rows,
        "baseline_mean_iou": baseline_mean,
        "normalized_benefit": benefit_json,
        "ungrounded_mse": ungrounded_mse,
        "m": cfg.m,
        "test_trajectories": dataset.test.len(),
    });
    std::fs::write(args.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;

    let mut inputs = dataset_files(&args.dataset);
    inputs.push(args.checkpoint.with_extension("gsckpt"));
    inputs.push(args.checkpoint.with_extension("json"));
    inputs.push(train_cfg_path);
    write_snapshot(&args.out, &cfg, &inputs)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn print_metric_line(report: &MetricReport) {
    println!(
        "k={}: rollout_mse {:.6e} (std {:.2e}), iou {:.4}, m+10 {:.6e}, diverged {}",
        report.grounding,
        report.mean_rollout_mse,
        report.std_rollout_mse,
        report.mean_rollout_iou,
        report.mean_m_plus_10,
        report.diverged_count
    );
}

/// Per-trajectory, per-step baseline IoU; returns the mean over scored
/// steps. Degenerate steps leave the iou column empty.
fn write_baseline(test: &[Trajectory], cfg: &EvalConfig, out: &Path) -> Result<f64> {
    let mut csv = String::from("trajectory,step,iou\n");
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut skipped = 0usize;
    for (i, traj) in test.iter().enumerate() {
        let per_step =
            alpha_shape_baseline(traj, cfg.alpha, cfg.subsample_cell, cfg.resolution)?;
        for (step, iou) in per_step.iter().enumerate() {
            match iou {
                Some(v) => {
                    csv.push_str(&format!("{i},{step},{v}\n"));
                    sum += v;
                    count += 1;
                }
                None => {
                    csv.push_str(&format!("{i},{step},\n"));
                    skipped += 1;
                }
            }
        }
    }
    std::fs::write(out.join("baseline.csv"), &csv)?;
    let mean = if count > 0 { sum / count as f64 } else { f64::NAN };
    let json = serde_json::json!({
        "alpha": cfg.alpha,
        "subsample_cell": cfg.subsample_cell,
        "resolution": cfg.resolution,
        "mean_iou": mean,
        "scored_steps": count,
        "skipped_steps": skipped,
    });
    std::fs::write(out.join("baseline.json"), serde_json::to_string_pretty(&json)?)?;
    Ok(mean)
}

/// A user-supplied config file that cannot be read or parsed is a
/// configuration error (exit 2), not an I/O failure.
fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn dataset_files(dir: &Path) -> Vec<PathBuf> {
    ["dataset.json", "train.gst", "val.gst", "test.gst"]
        .iter()
        .map(|name| dir.join(name))
        .collect()
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// The self-describing part of every artifact directory: the effective
/// config and content hashes of all file inputs.
fn write_snapshot<T: Serialize>(out: &Path, config: &T, inputs: &[PathBuf]) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("resolved.json"), serde_json::to_string_pretty(config)?)?;
    let mut hashes = BTreeMap::new();
    for path in inputs {
        hashes.insert(path.display().to_string(), sha256_file(path)?);
    }
    std::fs::write(out.join("inputs.json"), serde_json::to_string_pretty(&hashes)?)?;
    Ok(())
}
