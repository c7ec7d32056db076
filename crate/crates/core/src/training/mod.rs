//! Next-step supervised training: Gaussian input noise with corrected
//! targets, per-sample point-cloud imputation, Adam, and early stopping on
//! a validation split that averages grounded and ungrounded branches.

use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::{encode_state, extend_with_point_cloud, ConnectivityConfig, SimGraph};
use crate::model::{forward, ModelConfig, ModelParams};
use crate::seeds::substream;
use crate::tensor::{AdamState, Tape, Tensor};
use crate::truthsim::{Dataset, SystemState, Trajectory};
use crate::{Error, Result};


/// Everything that shapes one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub connectivity: ConnectivityConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Std of the Gaussian noise added to input mesh positions.
    pub noise_std: f64,
    /// Probability that a training sample sees its point cloud.
    pub imputation_prob: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Feed the material parameter as a mesh node feature.
    pub material_feature: bool,
}

impl TrainConfig {
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            model: ModelConfig::desk(),
            connectivity: ConnectivityConfig::full_graph(),
            batch_size: 32,
            learning_rate: 5e-4,
            noise_std: 0.01,
            imputation_prob: 0.5,
            max_epochs: 10,
            patience: 20,
            seed,
            material_feature: false,
        }
    }

    pub fn full(seed: u64) -> Self {
        TrainConfig { model: ModelConfig::full(), max_epochs: 400, ..TrainConfig::desk(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.connectivity.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive and finite".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be >= 0 and finite".into()));
        }
        if !(0.0..=1.0).contains(&self.imputation_prob) {
            return Err(Error::Config("imputation_prob must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-epoch losses and counters from one `fit` call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    /// Training samples that saw their point cloud / that did not.
    pub grounded_samples: usize,
    pub ungrounded_samples: usize,
    pub param_count: usize,
    pub wall_seconds: f64,
    /// Validation is 1-step MSE, not rollout-based.
    pub validation_kind: String,
}

impl TrainReport {
    /// One row per epoch: epoch, train_loss, val_loss.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for (e, (t, v)) in self.train_losses.iter().zip(&self.val_losses).enumerate() {
            out.push_str(&format!("{e},{t},{v}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Add i.i.d. Gaussian noise to every mesh position; the caller recomputes
/// targets against the noised positions so the model learns to correct it.
pub fn add_training_noise(
    state: &SystemState,
    std: f64,
    rng: &mut ChaCha12Rng,
) -> Result<SystemState> {
    if std == 0.0 {
        return Ok(state.clone());
    }
    let normal = Normal::new(0.0, std)
        .map_err(|e| Error::Config(format!("bad noise std {std}: {e}")))?;
    let mut vertices = state.mesh.vertices.clone();
    for v in &mut vertices {
        v.x += normal.sample(rng);
        v.y += normal.sample(rng);
    }
    let mut noised = state.clone();
    noised.mesh = state.mesh.with_vertices(vertices)?;
    Ok(noised)
}

/// A graph plus supervision rows, ready to merge into a batch.
struct PreparedSample {
    graph: SimGraph,
    /// Mesh rows under supervision (non-static vertices).
    local_rows: Vec<usize>,
    /// Target displacement per supervised row.
    targets: Tensor,
    grounded: bool,
}

fn material_slot(config: &TrainConfig, traj: &Trajectory) -> Option<f64> {
    config.material_feature.then(|| traj.material.nu())
}

/// Build one training sample: noise the input, flip the imputation coin,
/// encode, and compute corrected targets. Draw counts are fixed per sample
/// so the RNG stream stays aligned regardless of outcomes.
fn prepare_train_sample(
    traj: &Trajectory,
    step: usize,
    config: &TrainConfig,
    rng: &mut ChaCha12Rng,
) -> Result<PreparedSample> {
    let state = &traj.states[step];
    let next = &traj.states[step + 1];
    let noised = add_training_noise(state, config.noise_std, rng)?;
    let grounded = rng.random::<f64>() < config.imputation_prob;

    let mut graph = encode_state(&noised, &config.connectivity, material_slot(config, traj))?;
    if grounded {
        graph = extend_with_point_cloud(&graph, &traj.clouds[step], &config.connectivity)?;
    }
    let (local_rows, targets) = supervision(&noised, next);
    Ok(PreparedSample { graph, local_rows, targets, grounded })
}

/// Clean validation sample for one branch (grounded or not).
fn prepare_val_sample(
    traj: &Trajectory,
    step: usize,
    config: &TrainConfig,
    grounded: bool,
) -> Result<PreparedSample> {
    let state = &traj.states[step];
    let next = &traj.states[step + 1];
    let mut graph = encode_state(state, &config.connectivity, material_slot(config, traj))?;
    if grounded {
        graph = extend_with_point_cloud(&graph, &traj.clouds[step], &config.connectivity)?;
    }
    let (local_rows, targets) = supervision(state, next);
    Ok(PreparedSample { graph, local_rows, targets, grounded })
}

/// Mean and scale of the displacement targets over all supervised rows of
/// the train split. Targets are noise-corrected during training, so the
/// scale folds in the noise variance; degenerate dimensions fall back to
/// unit scale.
fn target_scaling(train: &[Trajectory], noise_std: f64) -> ([f64; 2], [f64; 2]) {
    let mut sum = [0.0f64; 2];
    let mut sumsq = [0.0f64; 2];
    let mut n = 0usize;
    for traj in train {
        for w in traj.states.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            for i in 0..a.mesh.vertices.len() {
                if a.static_mask[i] {
                    continue;
                }
                let d = b.mesh.vertices[i] - a.mesh.vertices[i];
                for (c, v) in [d.x, d.y].into_iter().enumerate() {
                    sum[c] += v;
                    sumsq[c] += v * v;
                }
                n += 1;
            }
        }
    }
    if n == 0 {
        return ([0.0; 2], [1.0; 2]);
    }
    let mut mean = [0.0; 2];
    let mut std = [1.0; 2];
    for c in 0..2 {
        mean[c] = sum[c] / n as f64;
        let var = (sumsq[c] / n as f64 - mean[c] * mean[c]).max(0.0);
        let s = (var + noise_std * noise_std).sqrt();
        std[c] = if s > 1e-9 { s } else { 1.0 };
    }
    (mean, std)
}

/// Supervised rows (non-static mesh vertices) and their displacement targets.
fn supervision(input: &SystemState, next: &SystemState) -> (Vec<usize>, Tensor) {
    let rows: Vec<usize> =
        (0..input.mesh.vertices.len()).filter(|&i| !input.static_mask[i]).collect();
    let mut targets = Tensor::zeros(rows.len(), 2);
    for (r, &i) in rows.iter().enumerate() {
        let d = next.mesh.vertices[i] - input.mesh.vertices[i];
        targets.set(r, 0, d.x);
        targets.set(r, 1, d.y);
    }
    (rows, targets)
}

/// Forward one merged batch; returns (loss, gradients) with gradients only
/// when `trainable`.
fn run_batch(
    params: &ModelParams,
    batch: &[PreparedSample],
    trainable: bool,
) -> Result<(f64, Option<Vec<Tensor>>)> {
    let graphs: Vec<SimGraph> = batch.iter().map(|s| s.graph.clone()).collect();
    let (merged, offsets) = SimGraph::merge(&graphs);
    let mut output_rows = Vec::new();
    let mut targets = Vec::new();
    for (sample, &offset) in batch.iter().zip(&offsets) {
        output_rows.extend(sample.local_rows.iter().map(|&r| r + offset));
        targets.push(&sample.targets);
    }
    // The decoder learns standardized displacements (see ModelConfig).
    let target = params.config.standardize_targets(&Tensor::vcat(&targets)?)?;

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, trainable);
    let out = forward(&bound, &mut tape, &merged, Rc::new(output_rows))?;
    let target_id = tape.leaf(target);
    let loss_id = tape.mse_loss(out, target_id)?;
    let loss = tape.value(loss_id).item();
    // Positions live in a unit-scale box, so any loss this large means the
    // optimization blew up even if no value overflowed to infinity yet.
    const LOSS_DIVERGENCE_CAP: f64 = 1e12;
    if !loss.is_finite() || loss > LOSS_DIVERGENCE_CAP {
        return Err(Error::Diverged(format!("training loss {loss} is out of control")));
    }
    if !trainable {
        return Ok((loss, None));
    }
    let grads = tape.backward(loss_id);
    Ok((loss, Some(bound.gradients(&grads, params))))
}

/// Mean 1-step MSE over both branches (with and without clouds), no noise.
pub fn validation_loss(
    params: &ModelParams,
    trajectories: &[Trajectory],
    config: &TrainConfig,
) -> Result<f64> {
    let mut weighted = 0.0;
    let mut total_rows = 0usize;
    let mut batch: Vec<PreparedSample> = Vec::new();
    let mut flush = |batch: &mut Vec<PreparedSample>| -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let rows: usize = batch.iter().map(|s| s.targets.rows()).sum();
        let (loss, _) = run_batch(params, batch, false)?;
        weighted += loss * rows as f64;
        total_rows += rows;
        batch.clear();
        Ok(())
    };
    for traj in trajectories {
        for step in 0..traj.states.len().saturating_sub(1) {
            for grounded in [true, false] {
                batch.push(prepare_val_sample(traj, step, config, grounded)?);
                if batch.len() == config.batch_size {
                    flush(&mut batch)?;
                }
            }
        }
    }
    flush(&mut batch)?;
    if total_rows == 0 {
        return Err(Error::Config("validation split has no usable samples".into()));
    }
    Ok(weighted / total_rows as f64)
}

/// Train on the dataset's train split with early stopping on the validation
/// split; returns the best-validation parameters and the full report.
pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    if dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(Error::Config("training needs non-empty train and val splits".into()));
    }
    let start = Instant::now();
    let mut model_cfg = config.model.clone();
    let (out_mean, out_std) = target_scaling(&dataset.train, config.noise_std);
    model_cfg.out_mean = out_mean;
    model_cfg.out_std = out_std;
    let mut params = ModelParams::init(model_cfg, config.seed)?;
    let shapes: Vec<(usize, usize)> =
        params.visit().iter().map(|(_, t)| t.shape()).collect();
    let mut adam = AdamState::new(&shapes, config.learning_rate);

    let samples: Vec<(usize, usize)> = dataset
        .train
        .iter()
        .enumerate()
        .flat_map(|(t, traj)| (0..traj.states.len() - 1).map(move |s| (t, s)))
        .collect();
    if samples.is_empty() {
        return Err(Error::Config("train split has no step pairs".into()));
    }

    let mut report = TrainReport {
        epochs_run: 0,
        train_losses: Vec::new(),
        val_losses: Vec::new(),
        best_epoch: None,
        best_val_loss: None,
        grounded_samples: 0,
        ungrounded_samples: 0,
        param_count: params.param_count(),
        wall_seconds: 0.0,
        validation_kind: "1-step MSE, mean of grounded and ungrounded branches".into(),
    };
    let mut best_params = params.clone();
    let mut epochs_since_best = 0usize;

    for epoch in 0..config.max_epochs {
        let mut order = samples.clone();
        order.shuffle(&mut substream(config.seed, &format!("shuffle/epoch{epoch}")));
        let mut noise_rng = substream(config.seed, &format!("noise/epoch{epoch}"));

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let prepared: Vec<PreparedSample> = chunk
                .iter()
                .map(|&(t, s)| prepare_train_sample(&dataset.train[t], s, config, &mut noise_rng))
                .collect::<Result<_>>()?;
            for sample in &prepared {
                if sample.grounded {
                    report.grounded_samples += 1;
                } else {
                    report.ungrounded_samples += 1;
                }
            }
            let (loss, grads) = run_batch(&params, &prepared, true)?;
            let grads = grads.expect("trainable batch returns gradients");
            let mut handles = params.visit_mut();
            let mut refs: Vec<&mut Tensor> =
                handles.iter_mut().map(|(_, t)| &mut **t).collect();
            adam.step(&mut refs, &grads)?;
            loss_sum += loss;
            batches += 1;
        }
        report.train_losses.push(loss_sum / batches as f64);

        let val = validation_loss(&params, &dataset.val, config)?;
        report.val_losses.push(val);
        report.epochs_run = epoch + 1;

        if report.best_val_loss.is_none_or(|best| val < best) {
            report.best_val_loss = Some(val);
            report.best_epoch = Some(epoch);
            best_params = params.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.patience {
                break;
            }
        }
    }

    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok((best_params, report))
}
