//! Synthetic ground truth: a 2D trapezoidal soft plate indented by a rigid
//! circular collider.
//!
//! The plate is a structured triangle mesh driven by edge springs, a
//! per-triangle area-preservation term scaled by the material's Poisson-like
//! ratio, and a stiff penalty contact against the collider. Integration is
//! semi-implicit Euler with several substeps per recorded frame and heavy
//! velocity damping, so deformation tracks the collider quasistatically and
//! settles once loading stops. No gravity: the rest state is an exact
//! equilibrium, bitwise stable under stepping.
//!
//! Point clouds come from simulated range sensors: rays fanned from fixed
//! origins hit the plate boundary (the collider occludes but never produces
//! points), get per-coordinate Gaussian noise, and are voxel-subsampled.

mod dataset;

pub use dataset::{load_dataset, save_dataset, Dataset, DatasetConfig, SplitCounts};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ray_circle_intersection, ray_segment_intersection, voxel_subsample, TriMesh};
use crate::seeds;
use crate::vec2::Vec2;

/// The three material classes, equally likely in generated data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaterialClass {
    /// Contracts laterally when compressed (nu = -0.9).
    Auxetic,
    /// No area coupling to speak of (nu = 0.0).
    Neutral,
    /// Strongly area-preserving, bulges sideways (nu = 0.49).
    Incompressible,
}

impl MaterialClass {
    pub const ALL: [MaterialClass; 3] =
        [MaterialClass::Auxetic, MaterialClass::Neutral, MaterialClass::Incompressible];

    pub fn nu(self) -> f64 {
        match self {
            MaterialClass::Auxetic => -0.9,
            MaterialClass::Neutral => 0.0,
            MaterialClass::Incompressible => 0.49,
        }
    }

    pub fn index(self) -> usize {
        match self {
            MaterialClass::Auxetic => 0,
            MaterialClass::Neutral => 1,
            MaterialClass::Incompressible => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        MaterialClass::ALL
            .get(i)
            .copied()
            .ok_or(Error::IndexOutOfRange { index: i, len: 3 })
    }
}

/// Stiffness and integration constants of the truth simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    pub node_mass: f64,
    pub spring_stiffness: f64,
    /// Area-preservation stiffness; the effective coefficient is scaled by
    /// (1 + nu), so auxetic material nearly ignores it.
    pub area_stiffness: f64,
    /// Contact stiffness as a multiple of the spring stiffness.
    pub contact_stiffness_factor: f64,
    /// Exponential velocity decay rate (per unit time).
    pub damping_rate: f64,
    /// Integrator substeps per recorded frame.
    pub substeps: usize,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            node_mass: 1.0,
            spring_stiffness: 300.0,
            area_stiffness: 3000.0,
            contact_stiffness_factor: 400.0,
            damping_rate: 40.0,
            substeps: 10,
        }
    }
}

/// Scenario randomization and episode layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Vertices per side of the structured plate grid.
    pub grid: usize,
    pub base_half_width: f64,
    pub top_half_width: f64,
    pub base_y: f64,
    pub height: f64,
    /// Uniform jitter applied independently to each corner coordinate.
    pub corner_jitter: f64,
    /// Collider radius as a fraction of the top edge length, sampled from a
    /// symmetric triangular distribution over this range.
    pub collider_radius_frac: (f64, f64),
    /// Gap between the collider surface and the plate top at step 0.
    pub collider_clearance: f64,
    /// Downward collider speed in world units per unit time.
    pub collider_speed: f64,
    /// Recorded states per trajectory.
    pub steps: usize,
    /// Time between recorded states.
    pub dt: f64,
    pub physics: PhysicsParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            grid: 9,
            base_half_width: 0.55,
            top_half_width: 0.375,
            base_y: -0.6,
            height: 0.8,
            corner_jitter: 0.06,
            collider_radius_frac: (0.15, 0.60),
            collider_clearance: 0.05,
            collider_speed: 0.5,
            steps: 50,
            dt: 0.02,
            physics: PhysicsParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 2 {
            return Err(Error::Config(format!("grid {} must be at least 2", self.grid)));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt {} must be positive", self.dt)));
        }
        if self.physics.substeps == 0 {
            return Err(Error::Config("substeps must be positive".into()));
        }
        let (lo, hi) = self.collider_radius_frac;
        if !(0.0 < lo && lo <= hi) {
            return Err(Error::Config(format!(
                "collider radius fraction range ({lo}, {hi}) is invalid"
            )));
        }
        Ok(())
    }
}

/// The rigid circular collider with its scripted constant velocity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Collider {
    pub center: Vec2,
    pub radius: f64,
    /// World units per unit time; known to the predictor.
    pub velocity: Vec2,
}

/// Everything that defines the system at one instant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemState {
    pub mesh: TriMesh,
    /// Per-vertex velocities in world units per unit time.
    pub velocities: Vec<Vec2>,
    /// Pinned vertices (the plate's bottom row).
    pub static_mask: Vec<bool>,
    pub collider: Collider,
    /// Duration of one recorded step; the learned integrator advances the
    /// collider by velocity * step_dt.
    pub step_dt: f64,
}

/// One episode: recorded states, the point cloud observed at each state,
/// and the material class.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<SystemState>,
    pub clouds: Vec<Vec<Vec2>>,
    pub material: MaterialClass,
    pub seed: u64,
}

/// Range sensor layout and post-processing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub origins: Vec<Vec2>,
    pub rays_per_camera: usize,
    /// Per-coordinate Gaussian noise on hit points.
    pub noise_std: f64,
    /// Voxel cell for subsampling the merged cloud (0 disables).
    pub voxel_cell: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            origins: vec![Vec2::new(0.0, 1.1), Vec2::new(-1.1, -0.25), Vec2::new(1.1, -0.25)],
            rays_per_camera: 512,
            noise_std: 0.005,
            voxel_cell: 0.05,
        }
    }
}

impl CameraConfig {
    /// Cameras surrounding the scene, for full-coverage observations.
    pub fn surround() -> Self {
        CameraConfig {
            origins: vec![
                Vec2::new(0.0, 1.1),
                Vec2::new(-1.1, -0.25),
                Vec2::new(1.1, -0.25),
                Vec2::new(0.0, -1.1),
            ],
            ..CameraConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.origins.is_empty() {
            return Err(Error::Config("at least one camera origin is required".into()));
        }
        if self.rays_per_camera < 8 {
            return Err(Error::Config(format!(
                "rays_per_camera {} is below the minimum of 8",
                self.rays_per_camera
            )));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Build the structured trapezoid mesh: `grid` x `grid` vertices laid out
/// bottom row first, interpolated bilinearly between the four corners, with
/// alternating cell diagonals so the mesh has no global shear bias.
fn trapezoid_mesh(bl: Vec2, br: Vec2, tl: Vec2, tr: Vec2, grid: usize) -> Result<TriMesh> {
    let n = grid;
    let mut verts = Vec::with_capacity(n * n);
    for row in 0..n {
        let t = row as f64 / (n - 1) as f64;
        let left = bl.lerp(tl, t);
        let right = br.lerp(tr, t);
        for col in 0..n {
            let s = col as f64 / (n - 1) as f64;
            verts.push(left.lerp(right, s));
        }
    }
    let at = |row: usize, col: usize| row * n + col;
    let mut tris = Vec::with_capacity(2 * (n - 1) * (n - 1));
    for row in 0..n - 1 {
        for col in 0..n - 1 {
            let (v00, v10) = (at(row, col), at(row, col + 1));
            let (v01, v11) = (at(row + 1, col), at(row + 1, col + 1));
            if (row + col) % 2 == 0 {
                tris.push([v00, v10, v11]);
                tris.push([v00, v11, v01]);
            } else {
                tris.push([v00, v10, v01]);
                tris.push([v10, v11, v01]);
            }
        }
    }
    TriMesh::new(verts, tris)
}

/// Sample a fresh scenario: jittered trapezoid plate at rest, material
/// class, and a collider poised above the top edge. Deterministic in `seed`;
/// the draw order (8 corner coordinates, material, 2 radius draws, start
/// position) is fixed.
pub fn generate_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<(SystemState, MaterialClass)> {
    cfg.validate()?;
    let mut rng = seeds::substream(seed, "scenario");
    let j = cfg.corner_jitter;
    let mut jitter = |v: Vec2| {
        let dx = if j > 0.0 { rng.random_range(-j..j) } else { 0.0 };
        let dy = if j > 0.0 { rng.random_range(-j..j) } else { 0.0 };
        v + Vec2::new(dx, dy)
    };
    let top_y = cfg.base_y + cfg.height;
    let bl = jitter(Vec2::new(-cfg.base_half_width, cfg.base_y));
    let br = jitter(Vec2::new(cfg.base_half_width, cfg.base_y));
    let tl = jitter(Vec2::new(-cfg.top_half_width, top_y));
    let tr = jitter(Vec2::new(cfg.top_half_width, top_y));

    let material = MaterialClass::ALL[rng.random_range(0..3)];

    let top_edge = tl.dist(tr);
    let (lo, hi) = cfg.collider_radius_frac;
    // Symmetric triangular distribution: mean of two uniforms.
    let frac = lo + (hi - lo) * 0.5 * (rng.random_range(0.0..1.0) + rng.random_range(0.0..1.0));
    let radius = frac * top_edge;

    let start_x = rng.random_range(tl.x.min(tr.x)..tl.x.max(tr.x));
    let start_y = tl.y.max(tr.y) + radius + cfg.collider_clearance;

    let mesh = trapezoid_mesh(bl, br, tl, tr, cfg.grid)?;
    let count = mesh.vertices.len();
    let static_mask: Vec<bool> = (0..count).map(|i| i < cfg.grid).collect();
    let state = SystemState {
        mesh,
        velocities: vec![Vec2::ZERO; count],
        static_mask,
        collider: Collider {
            center: Vec2::new(start_x, start_y),
            radius,
            velocity: Vec2::new(0.0, -cfg.collider_speed),
        },
        step_dt: cfg.dt,
    };
    Ok((state, material))
}

/// Elastic energy (springs + area term) of a state; kinetic energy excluded.
pub fn elastic_energy(s: &SystemState, nu: f64, phys: &PhysicsParams) -> f64 {
    let mesh = &s.mesh;
    let mut e = 0.0;
    for &(u, v) in &mesh.edges {
        let rest = mesh.rest[u].dist(mesh.rest[v]);
        let len = mesh.vertices[u].dist(mesh.vertices[v]);
        let d = len - rest;
        e += 0.5 * phys.spring_stiffness * d * d;
    }
    let k_area = phys.area_stiffness * (1.0 + nu);
    for t in &mesh.triangles {
        let a0 = triangle_area(mesh.rest[t[0]], mesh.rest[t[1]], mesh.rest[t[2]]);
        let a = triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        let d = a - a0;
        e += 0.5 * k_area * d * d / a0;
    }
    e
}

fn triangle_area(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    0.5 * (b - a).cross(c - a)
}

/// Advance the truth dynamics by one recorded frame of duration `dt`,
/// internally split into substeps. Pure function of the input state.
pub fn step_truth(s: &SystemState, nu: f64, dt: f64, phys: &PhysicsParams) -> Result<SystemState> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt {dt} must be positive")));
    }
    let mut state = s.clone();
    let sub_dt = dt / phys.substeps as f64;
    let n = state.mesh.vertices.len();
    let mut forces = vec![Vec2::ZERO; n];
    let decay = (-phys.damping_rate * sub_dt).exp();
    let k_contact = phys.contact_stiffness_factor * phys.spring_stiffness;
    let k_area = phys.area_stiffness * (1.0 + nu);

    for sub in 0..phys.substeps {
        // Interpolated collider position; the stored end-of-step center is
        // written once below so it matches the learned integrator bitwise.
        let collider_center = s.collider.center
            + s.collider.velocity * (dt * sub as f64 / phys.substeps as f64);
        for f in &mut forces {
            *f = Vec2::ZERO;
        }
        let mesh = &state.mesh;

        for &(u, v) in &mesh.edges {
            let rest = mesh.rest[u].dist(mesh.rest[v]);
            let delta = mesh.vertices[v] - mesh.vertices[u];
            let len = delta.norm();
            if len <= f64::MIN_POSITIVE {
                continue;
            }
            let f = delta * (phys.spring_stiffness * (len - rest) / len);
            forces[u] += f;
            forces[v] -= f;
        }

        for t in &mesh.triangles {
            let (i, j, k) = (t[0], t[1], t[2]);
            let a0 = triangle_area(mesh.rest[i], mesh.rest[j], mesh.rest[k]);
            let a = triangle_area(mesh.vertices[i], mesh.vertices[j], mesh.vertices[k]);
            let coef = -k_area * (a - a0) / a0;
            forces[i] += (mesh.vertices[k] - mesh.vertices[j]).perp() * (0.5 * coef);
            forces[j] += (mesh.vertices[i] - mesh.vertices[k]).perp() * (0.5 * coef);
            forces[k] += (mesh.vertices[j] - mesh.vertices[i]).perp() * (0.5 * coef);
        }

        let radius = state.collider.radius;
        for (i, f) in forces.iter_mut().enumerate() {
            let d = mesh.vertices[i] - collider_center;
            let dist = d.norm();
            if dist < radius {
                let normal = if dist > 1e-12 { d * (1.0 / dist) } else { Vec2::new(0.0, 1.0) };
                *f += normal * (k_contact * (radius - dist));
            }
        }

        let inv_mass = 1.0 / phys.node_mass;
        for i in 0..n {
            if state.static_mask[i] {
                state.velocities[i] = Vec2::ZERO;
                continue;
            }
            let v = (state.velocities[i] + forces[i] * (sub_dt * inv_mass)) * decay;
            state.velocities[i] = v;
            state.mesh.vertices[i] += v * sub_dt;
        }
    }
    // Single scripted advance, the same expression the learned integrator
    // uses, so predicted collider tracks differ from truth by nothing.
    state.collider.center = s.collider.center + s.collider.velocity * dt;

    for (i, p) in state.mesh.vertices.iter().enumerate() {
        if !p.is_finite() || p.x.abs() > 10.0 || p.y.abs() > 10.0 {
            return Err(Error::Diverged(format!(
                "vertex {i} at ({}, {}) after a truth step",
                p.x, p.y
            )));
        }
    }
    Ok(state)
}

/// Fan of ray directions from `origin` covering the plate region.
fn ray_directions(origin: Vec2, count: usize) -> Vec<Vec2> {
    let center = Vec2::new(0.0, -0.2);
    let corners = [
        Vec2::new(-1.0, -0.75),
        Vec2::new(1.0, -0.75),
        Vec2::new(1.0, 0.35),
        Vec2::new(-1.0, 0.35),
    ];
    let base = {
        let d = center - origin;
        d.y.atan2(d.x)
    };
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for c in corners {
        let d = c - origin;
        let mut ang = d.y.atan2(d.x) - base;
        while ang > std::f64::consts::PI {
            ang -= std::f64::consts::TAU;
        }
        while ang < -std::f64::consts::PI {
            ang += std::f64::consts::TAU;
        }
        lo = lo.min(ang);
        hi = hi.max(ang);
    }
    (0..count)
        .map(|k| {
            let t = (k as f64 + 0.5) / count as f64;
            let ang = base + lo + (hi - lo) * t;
            Vec2::new(ang.cos(), ang.sin())
        })
        .collect()
}

/// Simulated range scan of the plate boundary. Rays that reach the collider
/// first are occluded and yield nothing. Hit points get Gaussian noise, and
/// the merged cloud is voxel-subsampled. Draws from `rng` only for rays
/// that hit, in camera-then-ray order.
pub fn observe_point_cloud(
    s: &SystemState,
    cam: &CameraConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Vec2>> {
    cam.validate()?;
    let noise = if cam.noise_std > 0.0 {
        Some(Normal::new(0.0, cam.noise_std).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mesh = &s.mesh;
    let mut points = Vec::new();
    for &origin in &cam.origins {
        for dir in ray_directions(origin, cam.rays_per_camera) {
            let mut t_hit = f64::INFINITY;
            for &(u, v) in &mesh.boundary_edges {
                if let Some(t) =
                    ray_segment_intersection(origin, dir, mesh.vertices[u], mesh.vertices[v])
                {
                    t_hit = t_hit.min(t);
                }
            }
            if !t_hit.is_finite() {
                continue;
            }
            if let Some(t_col) =
                ray_circle_intersection(origin, dir, s.collider.center, s.collider.radius)
            {
                if t_col < t_hit {
                    continue;
                }
            }
            let mut p = origin + dir * t_hit;
            if let Some(n) = &noise {
                p.x += n.sample(rng);
                p.y += n.sample(rng);
            }
            points.push(p);
        }
    }
    Ok(voxel_subsample(&points, cam.voxel_cell))
}

/// Generate a full episode: scenario at `seed`, `cfg.steps` recorded states,
/// and a point cloud per state.
pub fn generate_trajectory(
    cfg: &ScenarioConfig,
    cam: &CameraConfig,
    seed: u64,
) -> Result<Trajectory> {
    let (initial, material) = generate_scenario(cfg, seed)?;
    rollout_truth(cfg, cam, seed, initial, material)
}

/// Same scenario geometry and observation stream as [`generate_trajectory`],
/// but with the material class forced instead of drawn, so two calls with one
/// seed and different materials yield matched pairs that differ only in nu.
pub fn generate_trajectory_with_material(
    cfg: &ScenarioConfig,
    cam: &CameraConfig,
    seed: u64,
    material: MaterialClass,
) -> Result<Trajectory> {
    let (initial, _) = generate_scenario(cfg, seed)?;
    rollout_truth(cfg, cam, seed, initial, material)
}

fn rollout_truth(
    cfg: &ScenarioConfig,
    cam: &CameraConfig,
    seed: u64,
    initial: SystemState,
    material: MaterialClass,
) -> Result<Trajectory> {
    let mut cloud_rng = seeds::substream(seed, "clouds");
    let mut states = Vec::with_capacity(cfg.steps);
    let mut clouds = Vec::with_capacity(cfg.steps);
    clouds.push(observe_point_cloud(&initial, cam, &mut cloud_rng)?);
    states.push(initial);
    for step in 1..cfg.steps {
        let next = step_truth(&states[step - 1], material.nu(), cfg.dt, &cfg.physics)?;
        clouds.push(observe_point_cloud(&next, cam, &mut cloud_rng)?);
        states.push(next);
    }
    Ok(Trajectory { states, clouds, material, seed })
}

#[cfg(test)]
mod tests;
