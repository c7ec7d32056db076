//! Graph encoding of simulator states: mesh, collider, and optional point
//! cloud nodes joined by typed radius edges, with fixed-width feature rows.

use serde::{Deserialize, Serialize};

use crate::geometry::{radius_neighbors, radius_neighbors_self};
use crate::tensor::Tensor;
use crate::truthsim::SystemState;
use crate::vec2::Vec2;
use crate::{Error, Result};


/// Width of one node feature row.
pub const NODE_FEATURE_WIDTH: usize = 7;
/// Width of one edge feature row.
pub const EDGE_FEATURE_WIDTH: usize = 12;

/// What a graph node represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Mesh = 0,
    Collider = 1,
    Point = 2,
}

/// Edge types, named sender-to-receiver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    MeshMesh = 0,
    ColliderMesh = 1,
    WorldMeshMesh = 2,
    PointPoint = 3,
    PointMesh = 4,
    MeshPoint = 5,
}

impl EdgeKind {
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Which edge sets to build and at what radii. A radius of zero disables the
/// corresponding edge set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityConfig {
    /// Point-to-point edges within the observed cloud.
    pub point_point_radius: f64,
    /// Bidirectional edges between cloud points and mesh vertices.
    pub mesh_point_radius: f64,
    /// Proximity edges among mesh and collider nodes that are not already
    /// connected by mesh topology.
    pub world_radius: f64,
    /// Bidirectional edges between collider surface samples and mesh
    /// vertices.
    pub collider_radius: f64,
}

impl ConnectivityConfig {
    /// Distinct radii for point-point and mesh-point edges, collider edges on.
    pub fn full_graph() -> Self {
        ConnectivityConfig {
            point_point_radius: 0.1,
            mesh_point_radius: 0.08,
            world_radius: 0.0,
            collider_radius: 0.08,
        }
    }

    /// One shared radius for every proximity edge set.
    pub fn equal_radii() -> Self {
        ConnectivityConfig {
            point_point_radius: 0.2,
            mesh_point_radius: 0.2,
            world_radius: 0.0,
            collider_radius: 0.2,
        }
    }

    /// No point-point edges; cloud couples only through mesh-point edges.
    pub fn reduced() -> Self {
        ConnectivityConfig {
            point_point_radius: 0.0,
            mesh_point_radius: 0.08,
            world_radius: 0.0,
            collider_radius: 0.08,
        }
    }

    /// Cloud-blind baseline: world edges handle all contact coupling.
    pub fn mgn_world() -> Self {
        ConnectivityConfig {
            point_point_radius: 0.0,
            mesh_point_radius: 0.0,
            world_radius: 0.35,
            collider_radius: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("point_point_radius", self.point_point_radius),
            ("mesh_point_radius", self.mesh_point_radius),
            ("world_radius", self.world_radius),
            ("collider_radius", self.collider_radius),
        ] {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {r}")));
            }
        }
        Ok(())
    }
}

/// A typed graph over one simulator state, ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct SimGraph {
    pub node_kinds: Vec<NodeKind>,
    /// Current world position of every node.
    pub positions: Vec<Vec2>,
    /// Row-major node features, `NODE_FEATURE_WIDTH` per node.
    pub node_features: Vec<f64>,
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    pub edge_kinds: Vec<EdgeKind>,
    /// Row-major edge features, `EDGE_FEATURE_WIDTH` per edge.
    pub edge_features: Vec<f64>,
    /// Nodes 0..mesh_node_count are the mesh vertices the network predicts.
    pub mesh_node_count: usize,
}

impl SimGraph {
    pub fn node_count(&self) -> usize {
        self.node_kinds.len()
    }

    pub fn edge_count(&self) -> usize {
        self.senders.len()
    }

    pub fn node_feature_tensor(&self) -> Tensor {
        Tensor::from_vec(self.node_count(), NODE_FEATURE_WIDTH, self.node_features.clone())
            .expect("node feature row width is fixed")
    }

    pub fn edge_feature_tensor(&self) -> Tensor {
        Tensor::from_vec(self.edge_count(), EDGE_FEATURE_WIDTH, self.edge_features.clone())
            .expect("edge feature row width is fixed")
    }

    /// Edge indices grouped by kind, preserving construction order.
    pub fn edges_by_kind(&self) -> [Vec<usize>; EdgeKind::COUNT] {
        let mut groups: [Vec<usize>; EdgeKind::COUNT] = Default::default();
        for (e, kind) in self.edge_kinds.iter().enumerate() {
            groups[kind.index()].push(e);
        }
        groups
    }

    /// Disjoint union of several graphs; returns the merged graph and the
    /// node index offset of each input.
    pub fn merge(graphs: &[SimGraph]) -> (SimGraph, Vec<usize>) {
        let mut out = SimGraph {
            node_kinds: Vec::new(),
            positions: Vec::new(),
            node_features: Vec::new(),
            senders: Vec::new(),
            receivers: Vec::new(),
            edge_kinds: Vec::new(),
            edge_features: Vec::new(),
            mesh_node_count: 0,
        };
        let mut offsets = Vec::with_capacity(graphs.len());
        for g in graphs {
            let base = out.node_count();
            offsets.push(base);
            out.node_kinds.extend_from_slice(&g.node_kinds);
            out.positions.extend_from_slice(&g.positions);
            out.node_features.extend_from_slice(&g.node_features);
            out.senders.extend(g.senders.iter().map(|&s| s + base));
            out.receivers.extend(g.receivers.iter().map(|&r| r + base));
            out.edge_kinds.extend_from_slice(&g.edge_kinds);
            out.edge_features.extend_from_slice(&g.edge_features);
        }
        (out, offsets)
    }

    /// Compact JSON dump for debugging and the browser demo.
    pub fn to_debug_json(&self) -> serde_json::Value {
        serde_json::json!({
            "nodes": self
                .node_kinds
                .iter()
                .zip(&self.positions)
                .map(|(k, p)| serde_json::json!({"kind": k, "x": p.x, "y": p.y}))
                .collect::<Vec<_>>(),
            "edges": (0..self.edge_count())
                .map(|e| serde_json::json!({
                    "sender": self.senders[e],
                    "receiver": self.receivers[e],
                    "kind": self.edge_kinds[e],
                }))
                .collect::<Vec<_>>(),
            "mesh_node_count": self.mesh_node_count,
        })
    }

    fn push_node(&mut self, kind: NodeKind, pos: Vec2, features: [f64; NODE_FEATURE_WIDTH]) {
        self.node_kinds.push(kind);
        self.positions.push(pos);
        self.node_features.extend_from_slice(&features);
    }

    fn push_edge(&mut self, kind: EdgeKind, sender: usize, receiver: usize, mesh_rest: Option<(Vec2, Vec2)>) {
        let world = self.positions[sender] - self.positions[receiver];
        let mut row = [0.0; EDGE_FEATURE_WIDTH];
        row[kind.index()] = 1.0;
        row[6] = world.x;
        row[7] = world.y;
        row[8] = world.norm();
        if let Some((rest_s, rest_r)) = mesh_rest {
            let mesh = rest_s - rest_r;
            row[9] = mesh.x;
            row[10] = mesh.y;
            row[11] = mesh.norm();
        }
        self.senders.push(sender);
        self.receivers.push(receiver);
        self.edge_kinds.push(kind);
        self.edge_features.extend_from_slice(&row);
    }
}

fn node_feature_row(
    kind: NodeKind,
    is_static: bool,
    scripted_motion: Vec2,
    material_slot: f64,
) -> [f64; NODE_FEATURE_WIDTH] {
    let mut row = [0.0; NODE_FEATURE_WIDTH];
    row[kind as usize] = 1.0;
    row[3] = if is_static { 1.0 } else { 0.0 };
    row[4] = scripted_motion.x;
    row[5] = scripted_motion.y;
    row[6] = material_slot;
    row
}

/// Evenly spaced samples of the collider circle, spaced like mesh edges.
pub fn sample_collider_surface(center: Vec2, radius: f64, spacing: f64) -> Vec<Vec2> {
    let circumference = 2.0 * std::f64::consts::PI * radius;
    let count = if spacing > 0.0 {
        ((circumference / spacing).ceil() as usize).max(8)
    } else {
        8
    };
    (0..count)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            center + Vec2::new(theta.cos(), theta.sin()) * radius
        })
        .collect()
}

/// Encode one state into a graph: mesh vertices first, collider samples
/// after. `material_slot` fills the last node feature of mesh vertices when
/// the model is told the material.
pub fn encode_state(
    state: &SystemState,
    conn: &ConnectivityConfig,
    material_slot: Option<f64>,
) -> Result<SimGraph> {
    conn.validate()?;
    let mesh = &state.mesh;
    let n = mesh.vertices.len();
    if state.static_mask.len() != n {
        return Err(Error::Shape(format!(
            "static mask has {} entries for {} vertices",
            state.static_mask.len(),
            n
        )));
    }

    let mut g = SimGraph {
        node_kinds: Vec::new(),
        positions: Vec::new(),
        node_features: Vec::new(),
        senders: Vec::new(),
        receivers: Vec::new(),
        edge_kinds: Vec::new(),
        edge_features: Vec::new(),
        mesh_node_count: n,
    };

    let slot = material_slot.unwrap_or(0.0);
    for (i, &p) in mesh.vertices.iter().enumerate() {
        g.push_node(
            NodeKind::Mesh,
            p,
            node_feature_row(NodeKind::Mesh, state.static_mask[i], Vec2::ZERO, slot),
        );
    }

    // The collider moves by a scripted displacement per recorded step.
    let scripted = state.collider.velocity * state.step_dt;
    let samples = sample_collider_surface(
        state.collider.center,
        state.collider.radius,
        mesh.mean_rest_edge_length(),
    );
    for &p in &samples {
        g.push_node(
            NodeKind::Collider,
            p,
            node_feature_row(NodeKind::Collider, false, scripted, 0.0),
        );
    }

    // Mesh topology edges carry rest-space offsets alongside world offsets.
    for &(u, v) in &mesh.edges {
        g.push_edge(EdgeKind::MeshMesh, u, v, Some((mesh.rest[u], mesh.rest[v])));
        g.push_edge(EdgeKind::MeshMesh, v, u, Some((mesh.rest[v], mesh.rest[u])));
    }

    if conn.collider_radius > 0.0 {
        for (ci, mi) in radius_neighbors(&samples, &mesh.vertices, conn.collider_radius) {
            g.push_edge(EdgeKind::ColliderMesh, n + ci, mi, None);
            g.push_edge(EdgeKind::ColliderMesh, mi, n + ci, None);
        }
    }

    if conn.world_radius > 0.0 {
        // Proximity edges among mesh and collider nodes, skipping pairs the
        // mesh already connects and collider-collider pairs.
        let all: Vec<Vec2> = g.positions.clone();
        for (i, j) in radius_neighbors_self(&all, conn.world_radius) {
            let both_collider = i >= n && j >= n;
            let topological = i < n && j < n && mesh.edges.contains(&(i.min(j), i.max(j)));
            if both_collider || topological {
                continue;
            }
            g.push_edge(EdgeKind::WorldMeshMesh, i, j, None);
            g.push_edge(EdgeKind::WorldMeshMesh, j, i, None);
        }
    }

    Ok(g)
}

/// Extend an encoded graph with an observed point cloud: point nodes plus
/// point-point and point-mesh edges at the configured radii.
pub fn extend_with_point_cloud(
    base: &SimGraph,
    cloud: &[Vec2],
    conn: &ConnectivityConfig,
) -> Result<SimGraph> {
    conn.validate()?;
    let mut g = base.clone();
    let first_point = g.node_count();
    for &p in cloud {
        g.push_node(NodeKind::Point, p, node_feature_row(NodeKind::Point, false, Vec2::ZERO, 0.0));
    }

    if conn.point_point_radius > 0.0 {
        for (i, j) in radius_neighbors_self(cloud, conn.point_point_radius) {
            g.push_edge(EdgeKind::PointPoint, first_point + i, first_point + j, None);
            g.push_edge(EdgeKind::PointPoint, first_point + j, first_point + i, None);
        }
    }

    if conn.mesh_point_radius > 0.0 {
        let mesh_positions = &base.positions[..base.mesh_node_count];
        for (pi, mi) in radius_neighbors(cloud, mesh_positions, conn.mesh_point_radius) {
            g.push_edge(EdgeKind::PointMesh, first_point + pi, mi, None);
            g.push_edge(EdgeKind::MeshPoint, mi, first_point + pi, None);
        }
    }

    Ok(g)
}
