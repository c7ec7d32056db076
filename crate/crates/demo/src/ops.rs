//! Plain-Rust demo operations returning JSON strings; the wasm bindings in
//! the crate root are thin wrappers so everything here is testable natively.

use groundsim::geometry::{alpha_shape, polygon_iou};
use groundsim::graph::{encode_state, extend_with_point_cloud, ConnectivityConfig};
use groundsim::truthsim::{
    generate_trajectory, generate_trajectory_with_material, CameraConfig, MaterialClass,
    ScenarioConfig, Trajectory,
};
use groundsim::{Error, Result};

/// Longest episode the page will simulate in one call.
const MAX_STEPS: usize = 300;

pub fn material_label(m: MaterialClass) -> &'static str {
    match m {
        MaterialClass::Auxetic => "auxetic",
        MaterialClass::Neutral => "neutral",
        MaterialClass::Incompressible => "incompressible",
    }
}

fn parse_material(name: &str) -> Result<Option<MaterialClass>> {
    match name {
        "auto" => Ok(None),
        "auxetic" => Ok(Some(MaterialClass::Auxetic)),
        "neutral" => Ok(Some(MaterialClass::Neutral)),
        "incompressible" => Ok(Some(MaterialClass::Incompressible)),
        other => Err(Error::Config(format!(
            "unknown material {other:?}; use auto, auxetic, neutral, or incompressible"
        ))),
    }
}

fn parse_preset(name: &str) -> Result<ConnectivityConfig> {
    match name {
        "full" => Ok(ConnectivityConfig::full_graph()),
        "equal" => Ok(ConnectivityConfig::equal_radii()),
        "reduced" => Ok(ConnectivityConfig::reduced()),
        "mgn" => Ok(ConnectivityConfig::mgn_world()),
        other => Err(Error::Config(format!(
            "unknown connectivity preset {other:?}; use full, equal, reduced, or mgn"
        ))),
    }
}

/// Simulate one episode for the page: default cameras or a surround rig,
/// with the material either drawn from the seed or forced.
pub fn build_trajectory(
    seed: u64,
    material: &str,
    steps: usize,
    surround: bool,
    noise_std: f64,
) -> Result<Trajectory> {
    if steps > MAX_STEPS {
        return Err(Error::Config(format!("steps {steps} exceeds the demo cap of {MAX_STEPS}")));
    }
    if !(0.0..=0.05).contains(&noise_std) {
        return Err(Error::Config(format!("noise_std {noise_std} must be in [0, 0.05]")));
    }
    let cfg = ScenarioConfig { steps, ..ScenarioConfig::default() };
    let mut cam = if surround { CameraConfig::surround() } else { CameraConfig::default() };
    cam.noise_std = noise_std;
    match parse_material(material)? {
        None => generate_trajectory(&cfg, &cam, seed),
        Some(m) => generate_trajectory_with_material(&cfg, &cam, seed, m),
    }
}

fn check_step(traj: &Trajectory, step: usize) -> Result<()> {
    if step >= traj.states.len() {
        return Err(Error::IndexOutOfRange { index: step, len: traj.states.len() });
    }
    Ok(())
}

fn points_json(points: &[groundsim::Vec2]) -> serde_json::Value {
    serde_json::Value::Array(
        points.iter().map(|p| serde_json::json!([p.x, p.y])).collect(),
    )
}

/// One recorded state as JSON: mesh, collider, observed cloud.
pub fn frame_json(traj: &Trajectory, step: usize) -> Result<String> {
    check_step(traj, step)?;
    let state = &traj.states[step];
    let mesh = &state.mesh;
    let value = serde_json::json!({
        "step": step,
        "steps": traj.states.len(),
        "material": material_label(traj.material),
        "nu": traj.material.nu(),
        "vertices": points_json(&mesh.vertices),
        "static": state.static_mask,
        "triangles": mesh.triangles,
        "boundary": mesh.boundary_edges,
        "collider": {
            "x": state.collider.center.x,
            "y": state.collider.center.y,
            "radius": state.collider.radius,
            "vx": state.collider.velocity.x,
            "vy": state.collider.velocity.y,
        },
        "cloud": points_json(&traj.clouds[step]),
    });
    Ok(value.to_string())
}

/// Alpha-shape reconstruction of the observed cloud at one step, with its
/// IoU against the true plate silhouette. Degenerate shapes yield an empty
/// loop list and a null IoU.
pub fn reconstruction_json(
    traj: &Trajectory,
    step: usize,
    alpha: f64,
    resolution: usize,
) -> Result<String> {
    check_step(traj, step)?;
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("alpha {alpha} must be positive")));
    }
    if resolution < 16 {
        return Err(Error::Config(format!("resolution {resolution} is below the minimum of 16")));
    }
    let cloud = &traj.clouds[step];
    let value = match alpha_shape(cloud, alpha) {
        Ok(loops) => {
            let truth = traj.states[step].mesh.boundary_loops();
            let iou = polygon_iou(&loops, &truth, resolution);
            serde_json::json!({
                "alpha": alpha,
                "loops": loops.iter().map(|l| points_json(l)).collect::<Vec<_>>(),
                "iou": iou,
            })
        }
        Err(Error::DegenerateGeometry(_)) => {
            serde_json::json!({ "alpha": alpha, "loops": [], "iou": null })
        }
        Err(e) => return Err(e),
    };
    Ok(value.to_string())
}

/// The encoded graph at one step under a named connectivity preset, with
/// per-kind edge counts for the legend.
pub fn graph_json(
    traj: &Trajectory,
    step: usize,
    preset: &str,
    with_cloud: bool,
) -> Result<String> {
    check_step(traj, step)?;
    let conn = parse_preset(preset)?;
    let state = &traj.states[step];
    let mut graph = encode_state(state, &conn, None)?;
    if with_cloud {
        graph = extend_with_point_cloud(&graph, &traj.clouds[step], &conn)?;
    }
    let mut value = graph.to_debug_json();
    let by_kind = graph.edges_by_kind();
    let names = ["MeshMesh", "ColliderMesh", "WorldMeshMesh", "PointPoint", "PointMesh", "MeshPoint"];
    let counts: serde_json::Map<String, serde_json::Value> = names
        .iter()
        .enumerate()
        .map(|(k, name)| (name.to_string(), serde_json::json!(by_kind[k].len())))
        .collect();
    value["edge_counts"] = serde_json::Value::Object(counts);
    value["preset"] = serde_json::json!(preset);
    Ok(value.to_string())
}
