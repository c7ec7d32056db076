//! Rollouts with every-k point-cloud grounding and the evaluation metrics:
//! rollout MSE, m+10-step loss, rollout IoU, the alpha-shape baseline, and
//! the normalized benefit curve.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{alpha_shape, polygon_iou, voxel_subsample};
use crate::graph::ConnectivityConfig;
use crate::model::{predict_step, ModelParams};
use crate::truthsim::{SystemState, Trajectory};
use crate::vec2::Vec2;
use crate::{Error, Result};

#[cfg(test)]
mod tests;

/// MSE charged to steps a diverged rollout never produced: the squared
/// diameter of the scene window ([-1.2, 1.2] squared per axis).
pub const DIVERGENCE_MSE_CAP: f64 = 11.52;

/// How often the rollout sees a point cloud.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Grounding {
    /// Cloud at steps 0, k, 2k, ...
    Every(usize),
    /// Never grounded (cloud-free inference).
    Never,
}

impl Grounding {
    pub fn validate(&self) -> Result<()> {
        if let Grounding::Every(k) = self {
            if *k == 0 {
                return Err(Error::Config("grounding interval k must be >= 1".into()));
            }
        }
        Ok(())
    }

    fn grounded_at(&self, step: usize) -> bool {
        match self {
            Grounding::Every(k) => step % k == 0,
            Grounding::Never => false,
        }
    }

    /// Parse "inf" or a positive integer.
    pub fn parse(text: &str) -> Result<Self> {
        if text.eq_ignore_ascii_case("inf") {
            return Ok(Grounding::Never);
        }
        let k: usize = text
            .parse()
            .map_err(|_| Error::Config(format!("grounding must be a positive integer or 'inf', got {text:?}")))?;
        let g = Grounding::Every(k);
        g.validate()?;
        Ok(g)
    }

    pub fn label(&self) -> String {
        match self {
            Grounding::Every(k) => k.to_string(),
            Grounding::Never => "inf".into(),
        }
    }
}

/// A predicted state sequence; truncated early if the model diverged.
#[derive(Clone, Debug)]
pub struct RolloutResult {
    /// states[0] is the ground-truth initial state.
    pub states: Vec<SystemState>,
    /// Step index at which positions stopped being finite, if any.
    pub diverged_at: Option<usize>,
}

fn state_is_finite(state: &SystemState) -> bool {
    state.mesh.vertices.iter().all(|p| p.is_finite())
}

/// Roll out with an arbitrary stepper; the schedule decides which steps see
/// the trajectory's recorded point cloud.
pub fn rollout_with<F>(
    traj: &Trajectory,
    grounding: Grounding,
    mut step: F,
) -> Result<RolloutResult>
where
    F: FnMut(&SystemState, Option<&[Vec2]>) -> Result<SystemState>,
{
    grounding.validate()?;
    let total = traj.states.len();
    let mut states = Vec::with_capacity(total);
    states.push(traj.states[0].clone());
    let mut diverged_at = None;
    for i in 0..total.saturating_sub(1) {
        let cloud = grounding.grounded_at(i).then(|| traj.clouds[i].as_slice());
        let next = match step(&states[i], cloud) {
            Ok(next) if state_is_finite(&next) => next,
            Ok(_) | Err(Error::Diverged(_)) => {
                diverged_at = Some(i + 1);
                break;
            }
            Err(e) => return Err(e),
        };
        states.push(next);
    }
    Ok(RolloutResult { states, diverged_at })
}

/// Roll the learned model out from the trajectory's initial state. Ground
/// truth is never fed back; only point clouds are.
pub fn rollout(
    params: &ModelParams,
    traj: &Trajectory,
    grounding: Grounding,
    conn: &ConnectivityConfig,
    material_slot: Option<f64>,
) -> Result<RolloutResult> {
    rollout_with(traj, grounding, |state, cloud| {
        predict_step(params, state, cloud, conn, material_slot)
    })
}

/// Mean squared per-node-per-dimension position error, averaged over the
/// steps after the initial state.
pub fn rollout_mse(pred: &[SystemState], truth: &[SystemState]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "prediction has {} states, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::Config("need at least one predicted step".into()));
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(truth).skip(1) {
        total += step_mse(p, t)?;
    }
    Ok(total / (pred.len() - 1) as f64)
}

fn step_mse(pred: &SystemState, truth: &SystemState) -> Result<f64> {
    let n = truth.mesh.vertices.len();
    if pred.mesh.vertices.len() != n {
        return Err(Error::Shape("mesh size mismatch between prediction and truth".into()));
    }
    let mut sum = 0.0;
    for (p, t) in pred.mesh.vertices.iter().zip(&truth.mesh.vertices) {
        let d = *p - *t;
        sum += d.x * d.x + d.y * d.y;
    }
    Ok(sum / (2 * n) as f64)
}

/// Like `rollout_mse` but charges `DIVERGENCE_MSE_CAP` for steps a truncated
/// rollout never produced.
pub fn rollout_mse_capped(result: &RolloutResult, truth: &[SystemState]) -> Result<f64> {
    if truth.len() < 2 {
        return Err(Error::Config("need at least one truth step".into()));
    }
    let mut total = 0.0;
    for (i, t) in truth.iter().enumerate().skip(1) {
        total += match result.states.get(i) {
            Some(p) => step_mse(p, t)?.min(DIVERGENCE_MSE_CAP),
            None => DIVERGENCE_MSE_CAP,
        };
    }
    Ok(total / (truth.len() - 1) as f64)
}

/// Mean IoU between predicted and true mesh boundaries over the steps after
/// the initial state. Missing (diverged) steps count as 0.
pub fn rollout_iou(result: &RolloutResult, truth: &[SystemState], resolution: usize) -> Result<f64> {
    if truth.len() < 2 {
        return Err(Error::Config("need at least one truth step".into()));
    }
    let mut total = 0.0;
    for (i, t) in truth.iter().enumerate().skip(1) {
        if let Some(p) = result.states.get(i) {
            let pred_loops = p.mesh.boundary_loops();
            let true_loops = t.mesh.boundary_loops();
            total += polygon_iou(&pred_loops, &true_loops, resolution);
        }
    }
    Ok(total / (truth.len() - 1) as f64)
}

/// m+10 protocol with an arbitrary stepper: from every start offset, m
/// grounded steps, then 10 ungrounded ones scored against truth. Returns the
/// mean over the 10-step windows of all offsets.
pub fn m_plus_10_loss_with<F>(traj: &Trajectory, m: usize, mut step: F) -> Result<f64>
where
    F: FnMut(&SystemState, Option<&[Vec2]>) -> Result<SystemState>,
{
    let total = traj.states.len();
    if total < m + 11 {
        return Err(Error::Config(format!(
            "trajectory has {total} states, the m+10 protocol needs at least {}",
            m + 11
        )));
    }
    let mut window_losses = Vec::new();
    for offset in 0..=(total - 1 - m - 10) {
        let mut state = traj.states[offset].clone();
        let mut diverged = false;
        for j in 0..m {
            let t = offset + j;
            match step(&state, Some(traj.clouds[t].as_slice())) {
                Ok(next) if state_is_finite(&next) => state = next,
                Ok(_) | Err(Error::Diverged(_)) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let mut sum = 0.0;
        for j in 0..10 {
            let t = offset + m + j + 1;
            if !diverged {
                match step(&state, None) {
                    Ok(next) if state_is_finite(&next) => state = next,
                    Ok(_) | Err(Error::Diverged(_)) => diverged = true,
                    Err(e) => return Err(e),
                }
            }
            sum += if diverged {
                DIVERGENCE_MSE_CAP
            } else {
                step_mse(&state, &traj.states[t])?.min(DIVERGENCE_MSE_CAP)
            };
        }
        window_losses.push(sum / 10.0);
    }
    Ok(window_losses.iter().sum::<f64>() / window_losses.len() as f64)
}

/// m+10 loss of the learned model on one trajectory.
pub fn m_plus_10_loss(
    params: &ModelParams,
    traj: &Trajectory,
    m: usize,
    conn: &ConnectivityConfig,
    material_slot: Option<f64>,
) -> Result<f64> {
    m_plus_10_loss_with(traj, m, |state, cloud| {
        predict_step(params, state, cloud, conn, material_slot)
    })
}

/// Per-step IoU of the alpha shape of each recorded cloud against the true
/// boundary. Degenerate clouds yield None (flagged skip). `subsample_cell`
/// of 0 uses the clouds as stored.
pub fn alpha_shape_baseline(
    traj: &Trajectory,
    alpha: f64,
    subsample_cell: f64,
    resolution: usize,
) -> Result<Vec<Option<f64>>> {
    let mut per_step = Vec::with_capacity(traj.states.len());
    for (state, cloud) in traj.states.iter().zip(&traj.clouds) {
        let points =
            if subsample_cell > 0.0 { voxel_subsample(cloud, subsample_cell) } else { cloud.clone() };
        let loops = match alpha_shape(&points, alpha) {
            Ok(loops) => loops,
            Err(Error::DegenerateGeometry(_)) => {
                per_step.push(None);
                continue;
            }
            Err(e) => return Err(e),
        };
        if loops.is_empty() {
            per_step.push(None);
            continue;
        }
        let truth_loops = state.mesh.boundary_loops();
        per_step.push(Some(polygon_iou(&loops, &truth_loops, resolution)));
    }
    Ok(per_step)
}

/// Normalized benefit of grounding every k steps:
/// (ungrounded - mse(k)) / (ungrounded - mse(1)). None when the denominator
/// is degenerate.
pub fn normalized_benefit(
    mse_by_k: &[(usize, f64)],
    mse_ungrounded: f64,
) -> Result<Vec<(usize, Option<f64>)>> {
    let mse_1 = mse_by_k
        .iter()
        .find(|(k, _)| *k == 1)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Config("normalized benefit needs k=1 in the table".into()))?;
    let denom = mse_ungrounded - mse_1;
    Ok(mse_by_k
        .iter()
        .map(|&(k, mse)| {
            let benefit = (denom.is_finite() && denom > 0.0)
                .then(|| (mse_ungrounded - mse) / denom);
            (k, benefit)
        })
        .collect())
}

/// Metrics of one test trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub trajectory: usize,
    pub rollout_mse: f64,
    pub rollout_iou: f64,
    pub m_plus_10: f64,
    pub diverged: bool,
}

/// Aggregated evaluation of one model at one grounding setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub grounding: String,
    pub m: usize,
    pub resolution: usize,
    pub per_trajectory: Vec<TrajectoryMetrics>,
    pub mean_rollout_mse: f64,
    pub std_rollout_mse: f64,
    pub mean_rollout_iou: f64,
    pub std_rollout_iou: f64,
    pub mean_m_plus_10: f64,
    pub std_m_plus_10: f64,
    pub diverged_count: usize,
    pub wall_seconds: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricReport {
    /// Build a report from per-trajectory rows, computing all aggregates.
    pub fn from_rows(
        grounding: &Grounding,
        m: usize,
        resolution: usize,
        per_trajectory: Vec<TrajectoryMetrics>,
        wall_seconds: f64,
    ) -> Result<Self> {
        if per_trajectory.is_empty() {
            return Err(Error::Config("metric report needs at least one trajectory".into()));
        }
        let collect = |f: fn(&TrajectoryMetrics) -> f64| -> Vec<f64> {
            per_trajectory.iter().map(f).collect()
        };
        let (mean_rollout_mse, std_rollout_mse) = mean_std(&collect(|r| r.rollout_mse));
        let (mean_rollout_iou, std_rollout_iou) = mean_std(&collect(|r| r.rollout_iou));
        let (mean_m_plus_10, std_m_plus_10) = mean_std(&collect(|r| r.m_plus_10));
        Ok(MetricReport {
            grounding: grounding.label(),
            m,
            resolution,
            diverged_count: per_trajectory.iter().filter(|r| r.diverged).count(),
            per_trajectory,
            mean_rollout_mse,
            std_rollout_mse,
            mean_rollout_iou,
            std_rollout_iou,
            mean_m_plus_10,
            std_m_plus_10,
            wall_seconds,
        })
    }

    /// True when every aggregate equals recomputation from the rows.
    pub fn aggregates_consistent(&self) -> bool {
        let rebuilt = MetricReport::from_rows(
            &Grounding::Every(1),
            self.m,
            self.resolution,
            self.per_trajectory.clone(),
            self.wall_seconds,
        );
        match rebuilt {
            Ok(r) => {
                r.mean_rollout_mse.to_bits() == self.mean_rollout_mse.to_bits()
                    && r.std_rollout_mse.to_bits() == self.std_rollout_mse.to_bits()
                    && r.mean_rollout_iou.to_bits() == self.mean_rollout_iou.to_bits()
                    && r.std_rollout_iou.to_bits() == self.std_rollout_iou.to_bits()
                    && r.mean_m_plus_10.to_bits() == self.mean_m_plus_10.to_bits()
                    && r.std_m_plus_10.to_bits() == self.std_m_plus_10.to_bits()
                    && r.diverged_count == self.diverged_count
            }
            Err(_) => false,
        }
    }

    /// One row per trajectory.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("trajectory,rollout_mse,rollout_iou,m_plus_10,diverged\n");
        for r in &self.per_trajectory {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.trajectory, r.rollout_mse, r.rollout_iou, r.m_plus_10, r.diverged
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Evaluate a model over a test split at one grounding setting; trajectories
/// run in parallel with frozen parameters.
pub fn evaluate_model(
    params: &ModelParams,
    test: &[Trajectory],
    grounding: Grounding,
    m: usize,
    conn: &ConnectivityConfig,
    material_feature: bool,
    resolution: usize,
) -> Result<MetricReport> {
    grounding.validate()?;
    let start = std::time::Instant::now();
    let rows: Vec<TrajectoryMetrics> = test
        .par_iter()
        .enumerate()
        .map(|(i, traj)| -> Result<TrajectoryMetrics> {
            let material_slot = material_feature.then(|| traj.material.nu());
            let result = rollout(params, traj, grounding, conn, material_slot)?;
            Ok(TrajectoryMetrics {
                trajectory: i,
                rollout_mse: rollout_mse_capped(&result, &traj.states)?,
                rollout_iou: rollout_iou(&result, &traj.states, resolution)?,
                m_plus_10: m_plus_10_loss(params, traj, m, conn, material_slot)?,
                diverged: result.diverged_at.is_some(),
            })
        })
        .collect::<Result<_>>()?;
    MetricReport::from_rows(&grounding, m, resolution, rows, start.elapsed().as_secs_f64())
}

/// Dump a rollout as JSON for external visualization: per-step vertices,
/// collider, and the fixed topology.
pub fn dump_rollout_json(result: &RolloutResult, path: &Path) -> Result<()> {
    let first = result
        .states
        .first()
        .ok_or_else(|| Error::Config("empty rollout".into()))?;
    let value = serde_json::json!({
        "triangles": first.mesh.triangles,
        "diverged_at": result.diverged_at,
        "steps": result.states.iter().map(|s| serde_json::json!({
            "vertices": s.mesh.vertices,
            "collider_center": s.collider.center,
            "collider_radius": s.collider.radius,
        })).collect::<Vec<_>>(),
    });
    std::fs::write(path, serde_json::to_string(&value)?)?;
    Ok(())
}
