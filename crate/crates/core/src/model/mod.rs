//! Message-passing network over encoded simulator graphs: linear encoders,
//! residual edge/node update blocks, and a velocity decoder for mesh nodes.

use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::graph::{EdgeKind, SimGraph, EDGE_FEATURE_WIDTH, NODE_FEATURE_WIDTH};
use crate::seeds::substream;
use crate::tensor::{load_checkpoint, save_checkpoint, Gradients, Tape, Tensor, ValueId};
use crate::truthsim::SystemState;
use crate::{Error, Result};
use rand::Rng;

#[cfg(test)]
mod tests;

/// Network architecture knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_width: usize,
    pub message_passing_blocks: usize,
    /// Hidden layers per MLP; encoders stay purely linear regardless.
    pub mlp_hidden_layers: usize,
    pub leaky_slope: f64,
    /// Learn separate edge-update weights for mesh edges vs all other edges.
    pub edge_partitioning: bool,
    /// Per-dimension mean of the displacement targets the decoder learns.
    /// Training fills these from data; identity means raw world units.
    #[serde(default = "zeros2")]
    pub out_mean: [f64; 2],
    /// Per-dimension scale of the displacement targets (see `out_mean`).
    #[serde(default = "ones2")]
    pub out_std: [f64; 2],
}

fn zeros2() -> [f64; 2] {
    [0.0, 0.0]
}

fn ones2() -> [f64; 2] {
    [1.0, 1.0]
}

impl ModelConfig {
    /// Small network that trains in minutes on one core.
    pub fn desk() -> Self {
        ModelConfig {
            latent_width: 32,
            message_passing_blocks: 3,
            mlp_hidden_layers: 1,
            leaky_slope: 0.01,
            edge_partitioning: false,
            out_mean: zeros2(),
            out_std: ones2(),
        }
    }

    /// Reference size: latent 128, five message-passing blocks.
    pub fn full() -> Self {
        ModelConfig {
            latent_width: 128,
            message_passing_blocks: 5,
            mlp_hidden_layers: 1,
            leaky_slope: 0.01,
            edge_partitioning: false,
            out_mean: zeros2(),
            out_std: ones2(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_width == 0 || self.message_passing_blocks == 0 {
            return Err(Error::Config("latent width and block count must be positive".into()));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Config("leaky slope must be finite".into()));
        }
        for c in 0..2 {
            if !self.out_mean[c].is_finite() || !self.out_std[c].is_finite() || self.out_std[c] <= 0.0 {
                return Err(Error::Config(format!(
                    "output scaling must be finite with positive std, got mean {:?} std {:?}",
                    self.out_mean, self.out_std
                )));
            }
        }
        Ok(())
    }

    /// Map world-unit displacement rows to the standardized targets the
    /// decoder learns.
    pub fn standardize_targets(&self, t: &Tensor) -> Result<Tensor> {
        self.affine_outputs(t, |v, c| (v - self.out_mean[c]) / self.out_std[c])
    }

    /// Inverse of [`standardize_targets`](Self::standardize_targets),
    /// applied to decoder outputs before integration.
    pub fn destandardize_outputs(&self, t: &Tensor) -> Result<Tensor> {
        self.affine_outputs(t, |v, c| v * self.out_std[c] + self.out_mean[c])
    }

    fn affine_outputs(&self, t: &Tensor, f: impl Fn(f64, usize) -> f64) -> Result<Tensor> {
        if t.cols() != 2 {
            return Err(Error::Shape(format!("expected 2 output columns, got {}", t.cols())));
        }
        let mut out = t.clone();
        for r in 0..out.rows() {
            for c in 0..2 {
                out.set(r, c, f(t.get(r, c), c));
            }
        }
        Ok(out)
    }

    fn edge_groups(&self) -> usize {
        if self.edge_partitioning {
            2
        } else {
            1
        }
    }
}

/// One affine map, weight is input-by-output.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn zeros(input: usize, output: usize) -> Self {
        Linear { weight: Tensor::zeros(input, output), bias: Tensor::zeros(1, output) }
    }
}

/// Stack of affine maps with leaky ReLU between them (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    fn zeros(input: usize, hidden: usize, output: usize, hidden_layers: usize) -> Self {
        let mut layers = Vec::new();
        let mut width = input;
        for _ in 0..hidden_layers {
            layers.push(Linear::zeros(width, hidden));
            width = hidden;
        }
        layers.push(Linear::zeros(width, output));
        Mlp { layers }
    }
}

/// Weights of one message-passing block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    /// One MLP per edge group (a single group unless partitioning is on).
    pub edge_mlps: Vec<Mlp>,
    pub node_mlp: Mlp,
}

/// All learnable weights plus the architecture that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub node_encoder: Linear,
    pub edge_encoder: Linear,
    pub blocks: Vec<BlockParams>,
    pub decoder: Mlp,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let l = config.latent_width;
        let h = config.mlp_hidden_layers;
        let blocks = (0..config.message_passing_blocks)
            .map(|_| BlockParams {
                edge_mlps: (0..config.edge_groups())
                    .map(|_| Mlp::zeros(3 * l, l, l, h))
                    .collect(),
                node_mlp: Mlp::zeros(2 * l, l, l, h),
            })
            .collect();
        Ok(ModelParams {
            node_encoder: Linear::zeros(NODE_FEATURE_WIDTH, l),
            edge_encoder: Linear::zeros(EDGE_FEATURE_WIDTH, l),
            blocks,
            decoder: Mlp::zeros(l, l, 2, h),
            config,
        })
    }

    /// Fresh weights: uniform(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ModelParams::zeros(config)?;
        let mut rng = substream(seed, "init");
        for (name, tensor) in params.visit_mut() {
            if name.ends_with(".bias") {
                continue;
            }
            let limit = (6.0 / tensor.rows() as f64).sqrt();
            for v in tensor.as_mut_slice() {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(params)
    }

    /// Named tensors in a fixed order shared by checkpoints and gradients.
    pub fn visit(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        visit_linear(&mut out, "node_encoder", &self.node_encoder);
        visit_linear(&mut out, "edge_encoder", &self.edge_encoder);
        for (b, block) in self.blocks.iter().enumerate() {
            for (g, mlp) in block.edge_mlps.iter().enumerate() {
                visit_mlp(&mut out, &format!("blocks.{b}.edge_mlps.{g}"), mlp);
            }
            visit_mlp(&mut out, &format!("blocks.{b}.node_mlp"), &block.node_mlp);
        }
        visit_mlp(&mut out, "decoder", &self.decoder);
        out
    }

    /// Mutable counterpart of `visit`, same names and order.
    pub fn visit_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        push_linear_mut(&mut out, "node_encoder", &mut self.node_encoder);
        push_linear_mut(&mut out, "edge_encoder", &mut self.edge_encoder);
        for (b, block) in self.blocks.iter_mut().enumerate() {
            for (g, mlp) in block.edge_mlps.iter_mut().enumerate() {
                push_mlp_mut(&mut out, &format!("blocks.{b}.edge_mlps.{g}"), mlp);
            }
            push_mlp_mut(&mut out, &format!("blocks.{b}.node_mlp"), &mut block.node_mlp);
        }
        push_mlp_mut(&mut out, "decoder", &mut self.decoder);
        out
    }

    pub fn param_count(&self) -> usize {
        self.visit().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Register every tensor on a tape; `trainable` controls gradient flow.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let ids = self
            .visit()
            .into_iter()
            .map(|(_, t)| if trainable { tape.param(t.clone()) } else { tape.leaf(t.clone()) })
            .collect();
        BoundModel { config: self.config.clone(), ids }
    }
}

fn visit_linear<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, lin: &'a Linear) {
    out.push((format!("{prefix}.weight"), &lin.weight));
    out.push((format!("{prefix}.bias"), &lin.bias));
}

fn visit_mlp<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, mlp: &'a Mlp) {
    for (i, lin) in mlp.layers.iter().enumerate() {
        visit_linear(out, &format!("{prefix}.layers.{i}"), lin);
    }
}

fn push_linear_mut<'a>(out: &mut Vec<(String, &'a mut Tensor)>, prefix: &str, lin: &'a mut Linear) {
    out.push((format!("{prefix}.weight"), &mut lin.weight));
    out.push((format!("{prefix}.bias"), &mut lin.bias));
}

fn push_mlp_mut<'a>(out: &mut Vec<(String, &'a mut Tensor)>, prefix: &str, mlp: &'a mut Mlp) {
    for (i, lin) in mlp.layers.iter_mut().enumerate() {
        push_linear_mut(out, &format!("{prefix}.layers.{i}"), lin);
    }
}

/// Tape-registered handles of all model tensors, in `visit` order.
pub struct BoundModel {
    config: ModelConfig,
    ids: Vec<ValueId>,
}

impl BoundModel {
    /// Gradients in `visit` order; unused tensors get zero gradients.
    pub fn gradients(&self, grads: &Gradients, params: &ModelParams) -> Vec<Tensor> {
        self.ids
            .iter()
            .zip(params.visit())
            .map(|(&id, (_, t))| {
                grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
            })
            .collect()
    }
}

/// Walks the bound tensors in the same order `visit` produced them.
struct IdCursor<'a> {
    ids: &'a [ValueId],
    next: usize,
}

impl<'a> IdCursor<'a> {
    fn take(&mut self) -> ValueId {
        let id = self.ids[self.next];
        self.next += 1;
        id
    }

    fn linear(&mut self) -> (ValueId, ValueId) {
        (self.take(), self.take())
    }

    fn mlp(&mut self, layers: usize) -> Vec<(ValueId, ValueId)> {
        (0..layers).map(|_| self.linear()).collect()
    }
}

fn apply_linear(tape: &mut Tape, x: ValueId, (w, b): (ValueId, ValueId)) -> Result<ValueId> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

fn apply_mlp(
    tape: &mut Tape,
    x: ValueId,
    layers: &[(ValueId, ValueId)],
    slope: f64,
) -> Result<ValueId> {
    let mut h = x;
    for (i, &layer) in layers.iter().enumerate() {
        h = apply_linear(tape, h, layer)?;
        if i + 1 < layers.len() {
            h = tape.leaky_relu(h, slope);
        }
    }
    Ok(h)
}

/// Run the network on one (possibly batched) graph. Returns predicted
/// per-step displacements for `output_rows`, shape (rows, 2).
pub fn forward(
    bound: &BoundModel,
    tape: &mut Tape,
    graph: &SimGraph,
    output_rows: Rc<Vec<usize>>,
) -> Result<ValueId> {
    let cfg = &bound.config;
    let mlp_len = cfg.mlp_hidden_layers + 1;
    let mut cursor = IdCursor { ids: &bound.ids, next: 0 };
    let node_encoder = cursor.linear();
    let edge_encoder = cursor.linear();
    let blocks: Vec<(Vec<Vec<(ValueId, ValueId)>>, Vec<(ValueId, ValueId)>)> = (0..cfg
        .message_passing_blocks)
        .map(|_| {
            let edge_mlps = (0..cfg.edge_groups()).map(|_| cursor.mlp(mlp_len)).collect();
            let node_mlp = cursor.mlp(mlp_len);
            (edge_mlps, node_mlp)
        })
        .collect();
    let decoder = cursor.mlp(mlp_len);
    debug_assert_eq!(cursor.next, bound.ids.len());

    let node_input = tape.leaf(graph.node_feature_tensor());
    let edge_input = tape.leaf(graph.edge_feature_tensor());
    let mut node_latent = apply_linear(tape, node_input, node_encoder)?;
    let mut edge_latent = apply_linear(tape, edge_input, edge_encoder)?;

    let senders = Rc::new(graph.senders.clone());
    let receivers = Rc::new(graph.receivers.clone());
    let groups: Vec<Rc<Vec<usize>>> = if cfg.edge_partitioning {
        let by_kind = graph.edges_by_kind();
        let mesh = by_kind[EdgeKind::MeshMesh.index()].clone();
        let mut rest = Vec::new();
        for (k, group) in by_kind.into_iter().enumerate() {
            if k != EdgeKind::MeshMesh.index() {
                rest.extend(group);
            }
        }
        rest.sort_unstable();
        vec![Rc::new(mesh), Rc::new(rest)]
    } else {
        Vec::new()
    };

    for (edge_mlps, node_mlp) in &blocks {
        let recv = tape.gather_rows(node_latent, receivers.clone())?;
        let send = tape.gather_rows(node_latent, senders.clone())?;
        let edge_in = tape.concat_cols(&[recv, send, edge_latent])?;

        let update = if cfg.edge_partitioning {
            let mut partial = Vec::new();
            for (mlp, idx) in edge_mlps.iter().zip(&groups) {
                let sub = tape.gather_rows(edge_in, idx.clone())?;
                let out = apply_mlp(tape, sub, mlp, cfg.leaky_slope)?;
                partial.push(tape.scatter_sum(out, idx.clone(), graph.edge_count())?);
            }
            let mut total = partial[0];
            for &p in &partial[1..] {
                total = tape.add(total, p)?;
            }
            total
        } else {
            apply_mlp(tape, edge_in, &edge_mlps[0], cfg.leaky_slope)?
        };
        edge_latent = tape.add(edge_latent, update)?;

        let agg = tape.scatter_mean(edge_latent, receivers.clone(), graph.node_count())?;
        let node_in = tape.concat_cols(&[node_latent, agg])?;
        let node_update = apply_mlp(tape, node_in, node_mlp, cfg.leaky_slope)?;
        node_latent = tape.add(node_latent, node_update)?;
    }

    let masked = tape.gather_rows(node_latent, output_rows)?;
    apply_mlp(tape, masked, &decoder, cfg.leaky_slope)
}

/// Advance a state by predicted displacements: static vertices stay put
/// bitwise, the collider follows its script.
pub fn integrate(state: &SystemState, displacements: &Tensor) -> Result<SystemState> {
    let n = state.mesh.vertices.len();
    if displacements.shape() != (n, 2) {
        return Err(Error::Shape(format!(
            "expected {n}x2 displacements, got {:?}",
            displacements.shape()
        )));
    }
    let mut vertices = state.mesh.vertices.clone();
    for i in 0..n {
        if !state.static_mask[i] {
            vertices[i].x += displacements.get(i, 0);
            vertices[i].y += displacements.get(i, 1);
        }
    }
    let mut next = state.clone();
    next.mesh = state.mesh.with_vertices(vertices)?;
    next.velocities = vec![crate::Vec2::ZERO; n];
    next.collider.center = state.collider.center + state.collider.velocity * state.step_dt;
    Ok(next)
}

/// One inference step: encode, run the network, integrate.
pub fn predict_step(
    params: &ModelParams,
    state: &SystemState,
    cloud: Option<&[crate::Vec2]>,
    conn: &crate::graph::ConnectivityConfig,
    material_slot: Option<f64>,
) -> Result<SystemState> {
    let mut graph = crate::graph::encode_state(state, conn, material_slot)?;
    if let Some(points) = cloud {
        graph = crate::graph::extend_with_point_cloud(&graph, points, conn)?;
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let rows = Rc::new((0..graph.mesh_node_count).collect::<Vec<_>>());
    let out = forward(&bound, &mut tape, &graph, rows)?;
    let displacements = params.config.destandardize_outputs(tape.value(out))?;
    integrate(state, &displacements)
}

/// Write `<stem>.gsckpt` (tensors) and `<stem>.json` (architecture).
pub fn save_model(params: &ModelParams, stem: &Path) -> Result<()> {
    let entries: Vec<(String, &Tensor)> = params.visit();
    save_checkpoint(&stem.with_extension("gsckpt"), &entries)?;
    let manifest = serde_json::to_string_pretty(&params.config)?;
    std::fs::write(stem.with_extension("json"), manifest)?;
    Ok(())
}

/// Inverse of `save_model`; checks names and shapes tensor by tensor.
pub fn load_model(stem: &Path) -> Result<ModelParams> {
    let manifest_path = stem.with_extension("json");
    let manifest = std::fs::read_to_string(&manifest_path)?;
    let config: ModelConfig = serde_json::from_str(&manifest)?;
    let mut params = ModelParams::zeros(config)?;
    let loaded = load_checkpoint(&stem.with_extension("gsckpt"))?;
    let expected: Vec<String> = params.visit().into_iter().map(|(n, _)| n).collect();
    if loaded.len() != expected.len() {
        return Err(Error::format(
            stem.with_extension("gsckpt").display().to_string(),
            format!("checkpoint has {} tensors, model needs {}", loaded.len(), expected.len()),
        ));
    }
    for ((name, tensor), (loaded_name, loaded_tensor)) in
        params.visit_mut().into_iter().zip(loaded)
    {
        if name != loaded_name {
            return Err(Error::format(
                stem.with_extension("gsckpt").display().to_string(),
                format!("expected tensor {name}, found {loaded_name}"),
            ));
        }
        if tensor.shape() != loaded_tensor.shape() {
            return Err(Error::format(
                stem.with_extension("gsckpt").display().to_string(),
                format!(
                    "tensor {name}: expected shape {:?}, found {:?}",
                    tensor.shape(),
                    loaded_tensor.shape()
                ),
            ));
        }
        *tensor = loaded_tensor;
    }
    Ok(params)
}
