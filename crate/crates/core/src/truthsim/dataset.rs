//! On-disk dataset: three split files of packed trajectories plus a JSON
//! sidecar with the generating configuration.
//!
//! Split file layout, little-endian: 8-byte magic, u32 version, u64
//! trajectory count, then per trajectory the header (seed, material, step
//! count, vertex/triangle counts, step_dt), rest positions, static mask,
//! triangles, collider radius, and per step the vertex positions, collider
//! pose and the observed point cloud. Mesh connectivity is rebuilt from the
//! triangles on load; velocities are not stored (the encoder never reads
//! them and recorded step 0 starts at rest).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TriMesh;
use crate::seeds;
use crate::truthsim::{
    generate_trajectory, CameraConfig, Collider, MaterialClass, ScenarioConfig, SystemState,
    Trajectory,
};
use crate::vec2::Vec2;

const MAGIC: &[u8; 8] = b"GSTRAJ01";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub scenario: ScenarioConfig,
    pub camera: CameraConfig,
    pub counts: SplitCounts,
    pub master_seed: u64,
}

#[derive(Debug)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Dataset {
    /// Generate all three splits. Each trajectory gets an independent seed
    /// derived from (master_seed, split, index), so the result is identical
    /// regardless of worker count or scheduling.
    pub fn generate(config: DatasetConfig) -> Result<Dataset> {
        config.scenario.validate()?;
        config.camera.validate()?;
        let gen_split = |name: &str, count: usize| -> Result<Vec<Trajectory>> {
            (0..count)
                .into_par_iter()
                .map(|i| {
                    let seed =
                        seeds::derive_seed(config.master_seed, &format!("data/{name}/{i}"));
                    generate_trajectory(&config.scenario, &config.camera, seed)
                })
                .collect()
        };
        Ok(Dataset {
            train: gen_split("train", config.counts.train)?,
            val: gen_split("val", config.counts.val)?,
            test: gen_split("test", config.counts.test)?,
            config,
        })
    }
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&ds.config)?;
    std::fs::write(dir.join("dataset.json"), json)?;
    write_split(&dir.join("train.gst"), &ds.train)?;
    write_split(&dir.join("val.gst"), &ds.val)?;
    write_split(&dir.join("test.gst"), &ds.test)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let json_path = dir.join("dataset.json");
    let json = std::fs::read_to_string(&json_path)
        .map_err(|e| Error::format(json_path.display().to_string(), e.to_string()))?;
    let config: DatasetConfig = serde_json::from_str(&json)?;
    let ds = Dataset {
        train: read_split(&dir.join("train.gst"), &config)?,
        val: read_split(&dir.join("val.gst"), &config)?,
        test: read_split(&dir.join("test.gst"), &config)?,
        config,
    };
    Ok(ds)
}

fn write_split(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(trajectories.len() as u64).to_le_bytes())?;
    for traj in trajectories {
        let first = traj.states.first().ok_or_else(|| {
            Error::format(path.display().to_string(), "empty trajectory")
        })?;
        let mesh = &first.mesh;
        w.write_all(&traj.seed.to_le_bytes())?;
        w.write_all(&(traj.material.index() as u8).to_le_bytes())?;
        w.write_all(&(traj.states.len() as u64).to_le_bytes())?;
        w.write_all(&(mesh.rest.len() as u64).to_le_bytes())?;
        w.write_all(&(mesh.triangles.len() as u64).to_le_bytes())?;
        w.write_all(&first.step_dt.to_le_bytes())?;
        for p in &mesh.rest {
            write_vec2(&mut w, *p)?;
        }
        for &s in &first.static_mask {
            w.write_all(&[s as u8])?;
        }
        for t in &mesh.triangles {
            for &v in t {
                w.write_all(&(v as u64).to_le_bytes())?;
            }
        }
        w.write_all(&first.collider.radius.to_le_bytes())?;
        for (state, cloud) in traj.states.iter().zip(&traj.clouds) {
            for p in &state.mesh.vertices {
                write_vec2(&mut w, *p)?;
            }
            write_vec2(&mut w, state.collider.center)?;
            write_vec2(&mut w, state.collider.velocity)?;
            w.write_all(&(cloud.len() as u64).to_le_bytes())?;
            for p in cloud {
                write_vec2(&mut w, *p)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_split(path: &Path, config: &DatasetConfig) -> Result<Vec<Trajectory>> {
    let display = path.display().to_string();
    let bad = |detail: &str| Error::format(display.clone(), detail);
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("file too short for header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic, not a trajectory file"));
    }
    let version = read_u32(&mut r).map_err(|_| bad("truncated version"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = read_u64(&mut r).map_err(|_| bad("truncated count"))? as usize;
    if count > 1 << 24 {
        return Err(bad(&format!("implausible trajectory count {count}")));
    }

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let seed = read_u64(&mut r).map_err(|_| bad("truncated seed"))?;
        let mut mat = [0u8; 1];
        r.read_exact(&mut mat).map_err(|_| bad("truncated material"))?;
        let material = MaterialClass::from_index(mat[0] as usize)
            .map_err(|_| bad(&format!("unknown material index {}", mat[0])))?;
        let steps = read_u64(&mut r).map_err(|_| bad("truncated steps"))? as usize;
        let verts = read_u64(&mut r).map_err(|_| bad("truncated vertex count"))? as usize;
        let tris = read_u64(&mut r).map_err(|_| bad("truncated triangle count"))? as usize;
        if steps == 0 || steps > 1 << 20 || verts > 1 << 22 || tris > 1 << 22 {
            return Err(bad("implausible trajectory header"));
        }
        let step_dt = read_f64(&mut r).map_err(|_| bad("truncated step_dt"))?;
        let mut rest = Vec::with_capacity(verts);
        for _ in 0..verts {
            rest.push(read_vec2(&mut r).map_err(|_| bad("truncated rest positions"))?);
        }
        let mut static_mask = Vec::with_capacity(verts);
        for _ in 0..verts {
            let mut b = [0u8; 1];
            r.read_exact(&mut b).map_err(|_| bad("truncated static mask"))?;
            static_mask.push(b[0] != 0);
        }
        let mut triangles = Vec::with_capacity(tris);
        for _ in 0..tris {
            let mut t = [0usize; 3];
            for slot in &mut t {
                *slot = read_u64(&mut r).map_err(|_| bad("truncated triangles"))? as usize;
            }
            triangles.push(t);
        }
        let radius = read_f64(&mut r).map_err(|_| bad("truncated radius"))?;
        let topology = TriMesh::new(rest, triangles)?;

        let mut states = Vec::with_capacity(steps);
        let mut clouds = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut positions = Vec::with_capacity(verts);
            for _ in 0..verts {
                positions.push(read_vec2(&mut r).map_err(|_| bad("truncated positions"))?);
            }
            let center = read_vec2(&mut r).map_err(|_| bad("truncated collider center"))?;
            let velocity = read_vec2(&mut r).map_err(|_| bad("truncated collider velocity"))?;
            let cloud_len = read_u64(&mut r).map_err(|_| bad("truncated cloud length"))? as usize;
            if cloud_len > 1 << 24 {
                return Err(bad("implausible cloud length"));
            }
            let mut cloud = Vec::with_capacity(cloud_len);
            for _ in 0..cloud_len {
                cloud.push(read_vec2(&mut r).map_err(|_| bad("truncated cloud"))?);
            }
            states.push(SystemState {
                mesh: topology.with_vertices(positions)?,
                velocities: vec![Vec2::ZERO; verts],
                static_mask: static_mask.clone(),
                collider: Collider { center, radius, velocity },
                step_dt,
            });
            clouds.push(cloud);
        }
        out.push(Trajectory { states, clouds, material, seed });
    }

    // The sidecar promises counts; a mismatch means the directory was
    // assembled from different runs.
    let expected = if display.ends_with("train.gst") {
        config.counts.train
    } else if display.ends_with("val.gst") {
        config.counts.val
    } else {
        config.counts.test
    };
    if out.len() != expected {
        return Err(bad(&format!(
            "split holds {} trajectories but dataset.json promises {expected}",
            out.len()
        )));
    }
    Ok(out)
}

fn write_vec2(w: &mut impl Write, v: Vec2) -> std::io::Result<()> {
    w.write_all(&v.x.to_le_bytes())?;
    w.write_all(&v.y.to_le_bytes())
}

fn read_vec2(r: &mut impl Read) -> std::io::Result<Vec2> {
    Ok(Vec2::new(read_f64(r)?, read_f64(r)?))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
