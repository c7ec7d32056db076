use std::rc::Rc;

use super::*;
use crate::graph::{ConnectivityConfig, NodeKind, SimGraph};
use crate::truthsim::{generate_trajectory, CameraConfig, ScenarioConfig};
use crate::Vec2;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        latent_width: 4,
        message_passing_blocks: 2,
        mlp_hidden_layers: 1,
        ..ModelConfig::desk()
    }
}

/// A hand-built 3-node graph: two mesh vertices and one collider sample.
fn tiny_graph() -> SimGraph {
    let mut rng = crate::seeds::substream(77, "tiny-graph");
    use rand::Rng;
    let node_features: Vec<f64> = (0..3 * crate::graph::NODE_FEATURE_WIDTH)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let edge_features: Vec<f64> = (0..3 * crate::graph::EDGE_FEATURE_WIDTH)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    SimGraph {
        node_kinds: vec![NodeKind::Mesh, NodeKind::Mesh, NodeKind::Collider],
        positions: vec![Vec2::new(0.0, 0.0), Vec2::new(0.1, 0.0), Vec2::new(0.0, 0.2)],
        node_features,
        senders: vec![0, 1, 2],
        receivers: vec![1, 0, 0],
        edge_kinds: vec![
            crate::graph::EdgeKind::MeshMesh,
            crate::graph::EdgeKind::MeshMesh,
            crate::graph::EdgeKind::ColliderMesh,
        ],
        edge_features,
        mesh_node_count: 2,
    }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn ref_linear(x: &[Vec<f64>], w: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..w.cols())
                .map(|j| {
                    let mut acc = 0.0;
                    for k in 0..w.rows() {
                        acc += row[k] * w.get(k, j);
                    }
                    acc + b.get(0, j)
                })
                .collect()
        })
        .collect()
}

fn ref_leaky(x: &[Vec<f64>], slope: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| row.iter().map(|&v| if v < 0.0 { slope * v } else { v }).collect())
        .collect()
}

fn ref_mlp(x: &[Vec<f64>], mlp: &Mlp, slope: f64) -> Vec<Vec<f64>> {
    let mut h = x.to_vec();
    for (i, lin) in mlp.layers.iter().enumerate() {
        h = ref_linear(&h, &lin.weight, &lin.bias);
        if i + 1 < mlp.layers.len() {
            h = ref_leaky(&h, slope);
        }
    }
    h
}

/// Plain-loop reimplementation of the full forward pass.
fn ref_forward(params: &ModelParams, graph: &SimGraph, output_rows: &[usize]) -> Vec<Vec<f64>> {
    let slope = params.config.leaky_slope;
    let mut node = ref_linear(
        &rows(&graph.node_feature_tensor()),
        &params.node_encoder.weight,
        &params.node_encoder.bias,
    );
    let mut edge = ref_linear(
        &rows(&graph.edge_feature_tensor()),
        &params.edge_encoder.weight,
        &params.edge_encoder.bias,
    );
    let latent = params.config.latent_width;

    for block in &params.blocks {
        let edge_in: Vec<Vec<f64>> = (0..graph.edge_count())
            .map(|e| {
                let mut row = node[graph.receivers[e]].clone();
                row.extend_from_slice(&node[graph.senders[e]]);
                row.extend_from_slice(&edge[e]);
                row
            })
            .collect();
        let update = ref_mlp(&edge_in, &block.edge_mlps[0], slope);
        for e in 0..edge.len() {
            for c in 0..latent {
                edge[e][c] += update[e][c];
            }
        }

        let mut agg = vec![vec![0.0; latent]; graph.node_count()];
        let mut counts = vec![0usize; graph.node_count()];
        for e in 0..graph.edge_count() {
            let r = graph.receivers[e];
            counts[r] += 1;
            for c in 0..latent {
                agg[r][c] += edge[e][c];
            }
        }
        for (row, &count) in agg.iter_mut().zip(&counts) {
            if count > 0 {
                for v in row.iter_mut() {
                    *v /= count as f64;
                }
            }
        }

        let node_in: Vec<Vec<f64>> = (0..graph.node_count())
            .map(|i| {
                let mut row = node[i].clone();
                row.extend_from_slice(&agg[i]);
                row
            })
            .collect();
        let update = ref_mlp(&node_in, &block.node_mlp, slope);
        for i in 0..node.len() {
            for c in 0..latent {
                node[i][c] += update[i][c];
            }
        }
    }

    let masked: Vec<Vec<f64>> = output_rows.iter().map(|&i| node[i].clone()).collect();
    ref_mlp(&masked, &params.decoder, slope)
}

fn run_forward(params: &ModelParams, graph: &SimGraph, output_rows: Vec<usize>) -> Tensor {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let out = forward(&bound, &mut tape, graph, Rc::new(output_rows)).unwrap();
    tape.value(out).clone()
}

#[test]
fn forward_matches_loop_reference_bitwise() {
    let params = ModelParams::init(tiny_config(), 5).unwrap();
    let graph = tiny_graph();
    let got = run_forward(&params, &graph, vec![0, 1]);
    let want = ref_forward(&params, &graph, &[0, 1]);
    assert_eq!(got.shape(), (2, 2));
    for i in 0..2 {
        for j in 0..2 {
            assert_eq!(
                got.get(i, j).to_bits(),
                want[i][j].to_bits(),
                "output ({i},{j}): {} vs {}",
                got.get(i, j),
                want[i][j]
            );
        }
    }
}

#[test]
fn forward_is_deterministic_across_tapes() {
    let params = ModelParams::init(tiny_config(), 9).unwrap();
    let graph = tiny_graph();
    let a = run_forward(&params, &graph, vec![0, 1]);
    let b = run_forward(&params, &graph, vec![0, 1]);
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

fn model_loss(params: &ModelParams, graph: &SimGraph, target: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let rows = Rc::new((0..graph.mesh_node_count).collect::<Vec<_>>());
    let out = forward(&bound, &mut tape, graph, rows).unwrap();
    let t = tape.leaf(target.clone());
    let loss = tape.mse_loss(out, t).unwrap();
    tape.value(loss).item()
}

#[test]
fn model_gradients_match_finite_differences() {
    let params = ModelParams::init(tiny_config(), 3).unwrap();
    let graph = tiny_graph();
    let target = Tensor::from_rows(&[&[0.3, -0.2], &[-0.1, 0.4]]);

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let rows = Rc::new((0..graph.mesh_node_count).collect::<Vec<_>>());
    let out = forward(&bound, &mut tape, &graph, rows).unwrap();
    let t = tape.leaf(target.clone());
    let loss = tape.mse_loss(out, t).unwrap();
    let grads = tape.backward(loss);
    let analytic = bound.gradients(&grads, &params);

    let h = 1e-5;
    let named = params.visit();
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for (ti, (name, tensor)) in named.iter().enumerate() {
        // Sample a few coordinates per tensor.
        let stride = (tensor.numel() / 3).max(1);
        for k in (0..tensor.numel()).step_by(stride) {
            let mut plus = params.clone();
            plus.visit_mut()[ti].1.as_mut_slice()[k] += h;
            let mut minus = params.clone();
            minus.visit_mut()[ti].1.as_mut_slice()[k] -= h;
            let numeric =
                (model_loss(&plus, &graph, &target) - model_loss(&minus, &graph, &target))
                    / (2.0 * h);
            let got = analytic[ti].as_slice()[k];
            let denom = numeric.abs().max(got.abs()).max(1e-8);
            let rel = (numeric - got).abs() / denom;
            worst = worst.max(rel);
            assert!(rel < 1e-6, "{name}[{k}]: analytic {got:.3e}, numeric {numeric:.3e}");
            checked += 1;
        }
    }
    assert!(checked > 50, "only {checked} coordinates checked");
    println!("checked {checked} coordinates, worst relative error {worst:.2e}");
}

#[test]
fn parameter_count_matches_closed_form() {
    let count = |l: usize, blocks: usize, groups: usize| {
        let lin = |i: usize, o: usize| i * o + o;
        let mlp1 = |i: usize, o: usize| lin(i, l) + lin(l, o);
        lin(7, l) + lin(12, l) + blocks * (groups * mlp1(3 * l, l) + mlp1(2 * l, l)) + mlp1(l, 2)
    };
    let plain = ModelParams::zeros(tiny_config()).unwrap();
    assert_eq!(plain.param_count(), count(4, 2, 1));

    let mut cfg = tiny_config();
    cfg.edge_partitioning = true;
    let split = ModelParams::zeros(cfg).unwrap();
    assert_eq!(split.param_count(), count(4, 2, 2));

    let desk = ModelParams::zeros(ModelConfig::desk()).unwrap();
    assert_eq!(desk.param_count(), count(32, 3, 1));
    let full = ModelParams::zeros(ModelConfig::full()).unwrap();
    assert_eq!(full.param_count(), count(128, 5, 1));
}

#[test]
fn init_is_seeded_and_bounded() {
    let a = ModelParams::init(tiny_config(), 11).unwrap();
    let b = ModelParams::init(tiny_config(), 11).unwrap();
    let c = ModelParams::init(tiny_config(), 12).unwrap();
    for ((_, ta), (_, tb)) in a.visit().iter().zip(b.visit().iter()) {
        for (x, y) in ta.as_slice().iter().zip(tb.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    assert_ne!(
        a.node_encoder.weight.as_slice(),
        c.node_encoder.weight.as_slice(),
        "different seeds must differ"
    );
    for (name, t) in a.visit() {
        if name.ends_with(".bias") {
            assert!(t.as_slice().iter().all(|&v| v == 0.0), "{name} should be zero");
        } else {
            let limit = (6.0 / t.rows() as f64).sqrt();
            assert!(t.as_slice().iter().all(|&v| v.abs() < limit), "{name} exceeds bound");
            assert!(t.as_slice().iter().any(|&v| v != 0.0), "{name} left at zero");
        }
    }
}

#[test]
fn partitioned_model_handles_empty_groups() {
    let mut cfg = tiny_config();
    cfg.edge_partitioning = true;
    let params = ModelParams::init(cfg, 2).unwrap();
    // Strip the graph down to mesh edges only: the non-mesh group is empty.
    let mut graph = tiny_graph();
    graph.senders.truncate(2);
    graph.receivers.truncate(2);
    graph.edge_kinds.truncate(2);
    graph.edge_features.truncate(2 * crate::graph::EDGE_FEATURE_WIDTH);
    let out = run_forward(&params, &graph, vec![0, 1]);
    assert!(out.is_finite());
    assert_eq!(out.shape(), (2, 2));
}

#[test]
fn save_and_load_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("model");
    let mut cfg = tiny_config();
    cfg.edge_partitioning = true;
    let params = ModelParams::init(cfg, 21).unwrap();
    save_model(&params, &stem).unwrap();
    let loaded = load_model(&stem).unwrap();
    assert_eq!(loaded.config, params.config);
    for ((na, ta), (nb, tb)) in params.visit().iter().zip(loaded.visit().iter()) {
        assert_eq!(na, nb);
        assert_eq!(ta.shape(), tb.shape());
        for (x, y) in ta.as_slice().iter().zip(tb.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn load_rejects_mismatched_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("model");
    let params = ModelParams::init(tiny_config(), 1).unwrap();
    save_model(&params, &stem).unwrap();
    // Rewrite the manifest with a wider latent: shapes no longer match.
    let mut wrong = tiny_config();
    wrong.latent_width = 8;
    std::fs::write(stem.with_extension("json"), serde_json::to_string(&wrong).unwrap()).unwrap();
    assert!(load_model(&stem).is_err());
}

#[test]
fn integrate_pins_static_vertices_bitwise() {
    let cfg = ScenarioConfig::default();
    let traj = generate_trajectory(&cfg, &CameraConfig::default(), 15).unwrap();
    let state = &traj.states[10];
    let n = state.mesh.vertices.len();
    let mut disp = Tensor::zeros(n, 2);
    for i in 0..n {
        disp.set(i, 0, 0.01);
        disp.set(i, 1, -0.02);
    }
    let next = integrate(state, &disp).unwrap();
    for i in 0..n {
        if state.static_mask[i] {
            assert_eq!(next.mesh.vertices[i].x.to_bits(), state.mesh.vertices[i].x.to_bits());
            assert_eq!(next.mesh.vertices[i].y.to_bits(), state.mesh.vertices[i].y.to_bits());
        } else {
            assert!((next.mesh.vertices[i].x - state.mesh.vertices[i].x - 0.01).abs() < 1e-15);
            assert!((next.mesh.vertices[i].y - state.mesh.vertices[i].y + 0.02).abs() < 1e-15);
        }
    }
    let scripted = state.collider.velocity * state.step_dt;
    assert_eq!(next.collider.center.x, state.collider.center.x + scripted.x);
    assert_eq!(next.collider.center.y, state.collider.center.y + scripted.y);

    let bad = Tensor::zeros(n + 1, 2);
    assert!(integrate(state, &bad).is_err());
}

#[test]
fn output_scaling_round_trips_and_shifts_predictions() {
    let mut cfg = tiny_config();
    cfg.out_mean = [0.5, -0.25];
    cfg.out_std = [2.0, 0.125];
    let mut t = Tensor::zeros(3, 2);
    for r in 0..3 {
        t.set(r, 0, r as f64 - 1.0);
        t.set(r, 1, 0.5 * r as f64);
    }
    let std = cfg.standardize_targets(&t).unwrap();
    assert_eq!(std.get(1, 0), (0.0 - 0.5) / 2.0);
    assert_eq!(std.get(2, 1), (1.0 + 0.25) / 0.125);
    let back = cfg.destandardize_outputs(&std).unwrap();
    for r in 0..3 {
        for c in 0..2 {
            assert!((back.get(r, c) - t.get(r, c)).abs() < 1e-15);
        }
    }
    assert!(cfg.standardize_targets(&Tensor::zeros(2, 3)).is_err());

    let mut bad = cfg.clone();
    bad.out_std = [0.0, 1.0];
    assert!(bad.validate().is_err());

    // An all-zero model decodes exactly out_mean: every free vertex moves
    // by the configured mean displacement.
    let scenario = ScenarioConfig::default();
    let traj = generate_trajectory(&scenario, &CameraConfig::default(), 2).unwrap();
    let state = &traj.states[0];
    let params = ModelParams::zeros(cfg).unwrap();
    let next =
        predict_step(&params, state, None, &ConnectivityConfig::full_graph(), None).unwrap();
    for i in 0..state.mesh.vertices.len() {
        if !state.static_mask[i] {
            let d = next.mesh.vertices[i] - state.mesh.vertices[i];
            assert!((d.x - 0.5).abs() < 1e-15, "dx {}", d.x);
            assert!((d.y + 0.25).abs() < 1e-15, "dy {}", d.y);
        }
    }
}

#[test]
fn predict_step_runs_on_real_scenes() {
    let cfg = ScenarioConfig::default();
    let traj = generate_trajectory(&cfg, &CameraConfig::default(), 4).unwrap();
    let params = ModelParams::init(ModelConfig::desk(), 8).unwrap();
    let conn = ConnectivityConfig::full_graph();
    let state = &traj.states[5];

    let grounded = predict_step(&params, state, Some(&traj.clouds[5]), &conn, None).unwrap();
    let ungrounded = predict_step(&params, state, None, &conn, None).unwrap();
    assert!(grounded.mesh.vertices.iter().all(|p| p.is_finite()));
    assert!(ungrounded.mesh.vertices.iter().all(|p| p.is_finite()));
    // The cloud changes the graph, so predictions differ.
    assert_ne!(grounded.mesh.vertices, ungrounded.mesh.vertices);

    let again = predict_step(&params, state, Some(&traj.clouds[5]), &conn, None).unwrap();
    for (a, b) in grounded.mesh.vertices.iter().zip(&again.mesh.vertices) {
        assert_eq!(a.x.to_bits(), b.x.to_bits());
        assert_eq!(a.y.to_bits(), b.y.to_bits());
    }
}
