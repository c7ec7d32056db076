use super::*;
use crate::geometry::TriMesh;
use crate::model::{ModelConfig, ModelParams};
use crate::truthsim::{
    generate_trajectory, CameraConfig, Collider, MaterialClass, ScenarioConfig,
};

/// A 3-node toy trajectory whose vertices all drift +0.1 in x per step.
fn toy_trajectory(steps: usize) -> Trajectory {
    let rest = vec![Vec2::new(0.0, 0.0), Vec2::new(0.2, 0.0), Vec2::new(0.0, 0.2)];
    let mesh = TriMesh::new(rest.clone(), vec![[0, 1, 2]]).unwrap();
    let states: Vec<SystemState> = (0..steps)
        .map(|t| {
            let shifted: Vec<Vec2> =
                rest.iter().map(|p| Vec2::new(p.x + 0.1 * t as f64, p.y)).collect();
            SystemState {
                mesh: mesh.with_vertices(shifted).unwrap(),
                velocities: vec![Vec2::ZERO; 3],
                static_mask: vec![false; 3],
                collider: Collider {
                    center: Vec2::new(5.0, 5.0),
                    radius: 0.1,
                    velocity: Vec2::ZERO,
                },
                step_dt: 0.02,
            }
        })
        .collect();
    Trajectory {
        clouds: vec![Vec::new(); states.len()],
        states,
        material: MaterialClass::Neutral,
        seed: 0,
    }
}

/// Scripted stepper: every vertex moves +0.05 in x, clouds ignored.
fn half_speed_step(state: &SystemState, _cloud: Option<&[Vec2]>) -> Result<SystemState> {
    let moved: Vec<Vec2> =
        state.mesh.vertices.iter().map(|p| Vec2::new(p.x + 0.05, p.y)).collect();
    let mut next = state.clone();
    next.mesh = state.mesh.with_vertices(moved)?;
    Ok(next)
}

#[test]
fn rollout_mse_matches_flat_loop_oracle() {
    let traj = toy_trajectory(6);
    let mut rng = crate::seeds::substream(1, "eval-mse");
    use rand::Rng;
    let pred: Vec<SystemState> = traj
        .states
        .iter()
        .map(|s| {
            let scattered: Vec<Vec2> = s
                .mesh
                .vertices
                .iter()
                .map(|p| Vec2::new(p.x + rng.random_range(-0.1..0.1), p.y + rng.random_range(-0.1..0.1)))
                .collect();
            let mut out = s.clone();
            out.mesh = s.mesh.with_vertices(scattered).unwrap();
            out
        })
        .collect();

    let got = rollout_mse(&pred, &traj.states).unwrap();
    let mut sum = 0.0;
    let mut count = 0.0;
    for (p, t) in pred.iter().zip(&traj.states).skip(1) {
        for (a, b) in p.mesh.vertices.iter().zip(&t.mesh.vertices) {
            sum += (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y);
            count += 2.0;
        }
    }
    let per_step_nodes = 2.0 * traj.states[0].mesh.vertices.len() as f64;
    let oracle = (sum / per_step_nodes) / (pred.len() - 1) as f64;
    let _ = count;
    assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
}

#[test]
fn rollout_mse_trivial_cases() {
    let traj = toy_trajectory(5);
    assert_eq!(rollout_mse(&traj.states, &traj.states).unwrap(), 0.0);

    // Constant offset of delta on every coordinate gives exactly delta^2.
    let delta = 0.03;
    let offset: Vec<SystemState> = traj
        .states
        .iter()
        .map(|s| {
            let moved: Vec<Vec2> =
                s.mesh.vertices.iter().map(|p| Vec2::new(p.x + delta, p.y + delta)).collect();
            let mut out = s.clone();
            out.mesh = s.mesh.with_vertices(moved).unwrap();
            out
        })
        .collect();
    let got = rollout_mse(&offset, &traj.states).unwrap();
    assert!((got - delta * delta).abs() < 1e-15);

    let short = &traj.states[..4];
    assert!(rollout_mse(short, &traj.states).is_err());
}

#[test]
fn grounding_schedule_anchors_at_step_zero() {
    let traj = toy_trajectory(10);
    for (grounding, expected) in [
        (Grounding::Every(1), vec![true; 9]),
        (
            Grounding::Every(3),
            vec![true, false, false, true, false, false, true, false, false],
        ),
        (Grounding::Never, vec![false; 9]),
    ] {
        let mut seen = Vec::new();
        rollout_with(&traj, grounding, |state, cloud| {
            seen.push(cloud.is_some());
            half_speed_step(state, cloud)
        })
        .unwrap();
        assert_eq!(seen, expected, "{grounding:?}");
    }
    assert!(Grounding::Every(0).validate().is_err());
    assert_eq!(Grounding::parse("inf").unwrap(), Grounding::Never);
    assert_eq!(Grounding::parse("5").unwrap(), Grounding::Every(5));
    assert!(Grounding::parse("0").is_err());
    assert!(Grounding::parse("-1").is_err());
}

#[test]
fn predicted_collider_tracks_the_script_bitwise() {
    let cfg = ScenarioConfig::default();
    let traj = generate_trajectory(&cfg, &CameraConfig::default(), 21).unwrap();
    let params = ModelParams::init(
        ModelConfig {
            latent_width: 8,
            message_passing_blocks: 1,
            mlp_hidden_layers: 1,
            ..ModelConfig::desk()
        },
        3,
    )
    .unwrap();
    let conn = ConnectivityConfig::full_graph();
    let result = rollout(&params, &traj, Grounding::Every(5), &conn, None).unwrap();
    assert!(result.diverged_at.is_none());
    for (p, t) in result.states.iter().zip(&traj.states) {
        assert_eq!(p.collider.center.x.to_bits(), t.collider.center.x.to_bits());
        assert_eq!(p.collider.center.y.to_bits(), t.collider.center.y.to_bits());
    }
}

#[test]
fn m_plus_10_matches_hand_computed_values() {
    let traj = toy_trajectory(12);
    // One window (offset 0), m=1: after a grounded step the model is at
    // offset 0.05; scored steps t=2..11 have per-coordinate gap 0.05*t on x.
    // step_mse = (0.05 t)^2 / 2, so the mean over the window is
    // 0.00125 * (sum of t^2 for t=2..11) / 10 = 0.00125 * 505 / 10.
    let got = m_plus_10_loss_with(&traj, 1, half_speed_step).unwrap();
    let want = 0.00125 * 505.0 / 10.0;
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");

    // m=0: two windows (offsets 0 and 1), both sum t^2 over 1..10.
    let got = m_plus_10_loss_with(&traj, 0, half_speed_step).unwrap();
    let want = 0.00125 * 385.0 / 10.0;
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");

    // Perfect model scores zero.
    let perfect = |state: &SystemState, _: Option<&[Vec2]>| -> Result<SystemState> {
        let moved: Vec<Vec2> =
            state.mesh.vertices.iter().map(|p| Vec2::new(p.x + 0.1, p.y)).collect();
        let mut next = state.clone();
        next.mesh = state.mesh.with_vertices(moved)?;
        Ok(next)
    };
    let got = m_plus_10_loss_with(&traj, 1, perfect).unwrap();
    assert!(got < 1e-24, "perfect model scored {got}");

    // Too short for the protocol.
    let short = toy_trajectory(10);
    assert!(m_plus_10_loss_with(&short, 0, half_speed_step).is_err());
}

#[test]
fn divergence_is_truncated_flagged_and_capped() {
    let traj = toy_trajectory(8);
    let exploding = |state: &SystemState, _: Option<&[Vec2]>| -> Result<SystemState> {
        let moved: Vec<Vec2> = state
            .mesh
            .vertices
            .iter()
            .map(|p| Vec2::new(p.x * 1e200 * 1e200, p.y))
            .collect();
        let mut next = state.clone();
        next.mesh = state.mesh.with_vertices(moved)?;
        Ok(next)
    };
    let result = rollout_with(&traj, Grounding::Never, exploding).unwrap();
    assert_eq!(result.diverged_at, Some(1));
    assert_eq!(result.states.len(), 1);
    let mse = rollout_mse_capped(&result, &traj.states).unwrap();
    assert!(
        (mse - DIVERGENCE_MSE_CAP).abs() < 1e-12,
        "every scored step gets the cap: {mse}"
    );
    let iou = rollout_iou(&result, &traj.states, 64).unwrap();
    assert_eq!(iou, 0.0, "missing steps contribute zero IoU");
}

#[test]
fn rollout_iou_trivial_cases() {
    let traj = toy_trajectory(4);
    let identical = RolloutResult { states: traj.states.clone(), diverged_at: None };
    assert_eq!(rollout_iou(&identical, &traj.states, 128).unwrap(), 1.0);

    let shifted: Vec<SystemState> = traj
        .states
        .iter()
        .map(|s| {
            let moved: Vec<Vec2> =
                s.mesh.vertices.iter().map(|p| Vec2::new(p.x + 2.0, p.y)).collect();
            let mut out = s.clone();
            out.mesh = s.mesh.with_vertices(moved).unwrap();
            out
        })
        .collect();
    let disjoint = RolloutResult { states: shifted, diverged_at: None };
    assert_eq!(rollout_iou(&disjoint, &traj.states, 128).unwrap(), 0.0);
}

#[test]
fn ungrounded_rollout_is_bitwise_plain_inference() {
    let mut cfg = ScenarioConfig::default();
    cfg.steps = 6;
    let traj = generate_trajectory(&cfg, &CameraConfig::default(), 33).unwrap();
    let params = ModelParams::init(
        ModelConfig {
            latent_width: 8,
            message_passing_blocks: 1,
            mlp_hidden_layers: 1,
            ..ModelConfig::desk()
        },
        9,
    )
    .unwrap();
    let conn = ConnectivityConfig::full_graph();
    let result = rollout(&params, &traj, Grounding::Never, &conn, None).unwrap();

    let mut state = traj.states[0].clone();
    for step in 1..traj.states.len() {
        state = crate::model::predict_step(&params, &state, None, &conn, None).unwrap();
        for (a, b) in result.states[step].mesh.vertices.iter().zip(&state.mesh.vertices) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }
    }
}

#[test]
fn alpha_baseline_reconstructs_full_coverage_clouds() {
    // Full coverage: surround cameras, no noise, and a parked collider so
    // no part of the boundary is ever occluded by contact.
    let mut cfg = ScenarioConfig::default();
    cfg.collider_speed = 0.0;
    cfg.steps = 12;
    let mut cam = CameraConfig::surround();
    cam.noise_std = 0.0;
    let traj = generate_trajectory(&cfg, &cam, 2).unwrap();
    let per_step = alpha_shape_baseline(&traj, 0.45, 0.0, 256).unwrap();
    assert_eq!(per_step.len(), traj.states.len());
    for (step, iou) in per_step.iter().enumerate() {
        let iou = iou.expect("no degenerate steps");
        assert!(iou > 0.9, "step {step}: baseline IoU {iou:.3}");
    }

    // No learned parameters: a second run is bitwise identical.
    let again = alpha_shape_baseline(&traj, 0.45, 0.0, 256).unwrap();
    for (a, b) in per_step.iter().zip(&again) {
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }

    // An empty cloud is a flagged skip, not an error.
    let mut broken = traj.clone();
    broken.clouds[3].clear();
    let with_skip = alpha_shape_baseline(&broken, 0.45, 0.0, 256).unwrap();
    assert!(with_skip[3].is_none());
    assert!(with_skip[2].is_some());
}

#[test]
fn normalized_benefit_curve_cases() {
    let table = vec![(1, 1.0), (5, 2.0), (10, 3.0)];
    let curve = normalized_benefit(&table, 3.0).unwrap();
    assert_eq!(curve[0], (1, Some(1.0)));
    assert_eq!(curve[1], (5, Some(0.5)));
    assert_eq!(curve[2], (10, Some(0.0)));

    // Degenerate denominator: grounding does not beat ungrounded.
    let flat = normalized_benefit(&[(1, 3.0), (5, 3.0)], 3.0).unwrap();
    assert!(flat.iter().all(|(_, b)| b.is_none()));

    assert!(normalized_benefit(&[(5, 2.0)], 3.0).is_err(), "k=1 row is required");
}

#[test]
fn metric_report_aggregates_and_files_round_trip() {
    let rows = vec![
        TrajectoryMetrics {
            trajectory: 0,
            rollout_mse: 0.5,
            rollout_iou: 0.9,
            m_plus_10: 0.2,
            diverged: false,
        },
        TrajectoryMetrics {
            trajectory: 1,
            rollout_mse: 1.5,
            rollout_iou: 0.7,
            m_plus_10: 0.4,
            diverged: true,
        },
    ];
    let report =
        MetricReport::from_rows(&Grounding::Every(2), 1, 128, rows, 0.1).unwrap();
    assert_eq!(report.grounding, "2");
    assert_eq!(report.mean_rollout_mse, 1.0);
    assert_eq!(report.mean_rollout_iou, 0.8);
    assert_eq!(report.diverged_count, 1);
    assert!((report.std_rollout_mse - (0.5f64 * 0.5 * 2.0).sqrt()).abs() < 1e-15);
    assert!(report.aggregates_consistent());

    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("metrics.csv");
    let json_path = dir.path().join("metrics.json");
    report.write_csv(&csv_path).unwrap();
    report.write_json(&json_path).unwrap();
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let parsed: MetricReport =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(parsed, report);
    assert!(parsed.aggregates_consistent());
}

#[test]
fn evaluate_model_smoke() {
    let mut cfg = ScenarioConfig::default();
    cfg.steps = 12;
    let trajs: Vec<Trajectory> = (0..2)
        .map(|i| generate_trajectory(&cfg, &CameraConfig::default(), 40 + i).unwrap())
        .collect();
    let params = ModelParams::init(
        ModelConfig {
            latent_width: 8,
            message_passing_blocks: 1,
            mlp_hidden_layers: 1,
            ..ModelConfig::desk()
        },
        5,
    )
    .unwrap();
    let conn = ConnectivityConfig::full_graph();
    let report =
        evaluate_model(&params, &trajs, Grounding::Every(1), 1, &conn, false, 128).unwrap();
    assert_eq!(report.per_trajectory.len(), 2);
    assert!(report.aggregates_consistent());
    assert!(report.mean_rollout_mse.is_finite());

    let dir = tempfile::tempdir().unwrap();
    let rollout_path = dir.path().join("rollout.json");
    let result = rollout(&params, &trajs[0], Grounding::Never, &conn, None).unwrap();
    dump_rollout_json(&result, &rollout_path).unwrap();
    let dump: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&rollout_path).unwrap()).unwrap();
    assert_eq!(dump["steps"].as_array().unwrap().len(), result.states.len());
}
