//! wasm-bindgen bindings for the browser demo: simulate an episode, then
//! query frames, alpha-shape reconstructions, and encoded graphs as JSON.

use wasm_bindgen::prelude::*;

pub mod ops;

use groundsim::truthsim::Trajectory;

fn js_err(e: groundsim::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// One simulated episode held in wasm memory; all queries are read-only.
#[wasm_bindgen]
pub struct Demo {
    traj: Trajectory,
}

#[wasm_bindgen]
impl Demo {
    /// Simulate an episode. `material` is `auto` to draw from the seed, or
    /// one of `auxetic`, `neutral`, `incompressible`; `surround` adds a
    /// fourth camera below the scene for full coverage.
    #[wasm_bindgen(constructor)]
    pub fn new(
        seed: u32,
        material: &str,
        steps: u32,
        surround: bool,
        noise_std: f64,
    ) -> Result<Demo, JsError> {
        let traj = ops::build_trajectory(seed as u64, material, steps as usize, surround, noise_std)
            .map_err(js_err)?;
        Ok(Demo { traj })
    }

    /// Number of recorded states.
    pub fn step_count(&self) -> u32 {
        self.traj.states.len() as u32
    }

    /// Material class of this episode.
    pub fn material(&self) -> String {
        ops::material_label(self.traj.material).to_string()
    }

    /// Mesh, collider, and observed cloud at one step, as JSON.
    pub fn frame(&self, step: u32) -> Result<String, JsError> {
        ops::frame_json(&self.traj, step as usize).map_err(js_err)
    }

    /// Alpha-shape reconstruction of the step's cloud with IoU against the
    /// true silhouette, as JSON.
    pub fn reconstruction(&self, step: u32, alpha: f64, resolution: u32) -> Result<String, JsError> {
        ops::reconstruction_json(&self.traj, step as usize, alpha, resolution as usize)
            .map_err(js_err)
    }

    /// Encoded graph at one step under a connectivity preset (`full`,
    /// `equal`, `reduced`, `mgn`), optionally extended with the cloud.
    pub fn graph(&self, step: u32, preset: &str, with_cloud: bool) -> Result<String, JsError> {
        ops::graph_json(&self.traj, step as usize, preset, with_cloud).map_err(js_err)
    }
}
