//! Geometry kit: neighbor search, voxel subsampling, hulls, alpha shapes,
//! rasterized polygon IoU, triangle meshes and raycasting helpers.
//!
//! Everything here is deterministic: outputs are sorted by index or voxel
//! coordinate, never by hash iteration order.

mod delaunay;

pub use delaunay::{circumradius, min_enclosing_radius, triangulate};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec2::Vec2;

/// Half-extent of the fixed rasterization window. Scenes live in the unit
/// task box; the margin keeps mildly bulging geometry from being clipped.
pub const RASTER_HALF_EXTENT: f64 = 1.2;

/// Twice the smallest triangle area a mesh accepts; slivers below this are
/// degenerate for simulation purposes.
const MIN_TRIANGLE_AREA2: f64 = 1e-15;

fn grid_key(p: Vec2, cell: f64) -> (i64, i64) {
    ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
}

/// All pairs (i, j) with |a[i] - b[j]| <= radius, sorted ascending.
/// Uses a uniform grid with cell size = radius, so each query point only
/// inspects its 3x3 cell neighborhood.
pub fn radius_neighbors(a: &[Vec2], b: &[Vec2], radius: f64) -> Vec<(usize, usize)> {
    radius_pairs(a, b, radius, false)
}

/// Ordered pairs (i, j), i != j, with |p[i] - p[j]| <= radius. Both (i, j)
/// and (j, i) are returned for a matching pair.
pub fn radius_neighbors_self(points: &[Vec2], radius: f64) -> Vec<(usize, usize)> {
    radius_pairs(points, points, radius, true)
}

fn radius_pairs(a: &[Vec2], b: &[Vec2], radius: f64, skip_same: bool) -> Vec<(usize, usize)> {
    if radius < 0.0 || a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    // radius 0 still matches exactly coincident points; any positive cell
    // size works for the lookup then.
    let cell = if radius > 0.0 { radius } else { 1.0 };
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (j, p) in b.iter().enumerate() {
        buckets.entry(grid_key(*p, cell)).or_default().push(j);
    }
    let r2 = radius * radius;
    let mut out = Vec::new();
    for (i, p) in a.iter().enumerate() {
        let (kx, ky) = grid_key(*p, cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(candidates) = buckets.get(&(kx + dx, ky + dy)) else { continue };
                for &j in candidates {
                    if skip_same && i == j {
                        continue;
                    }
                    if p.dist_sq(b[j]) <= r2 {
                        out.push((i, j));
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Replace each occupied voxel of an axis-aligned grid (anchored at the
/// origin, `cell` wide) by the centroid of its member points. Output is
/// sorted by voxel coordinate. A non-positive cell size disables
/// subsampling and returns the input unchanged.
pub fn voxel_subsample(points: &[Vec2], cell: f64) -> Vec<Vec2> {
    if cell <= 0.0 {
        return points.to_vec();
    }
    let mut voxels: BTreeMap<(i64, i64), (Vec2, usize)> = BTreeMap::new();
    for p in points {
        let slot = voxels.entry(grid_key(*p, cell)).or_insert((Vec2::ZERO, 0));
        slot.0 += *p;
        slot.1 += 1;
    }
    voxels.into_values().map(|(sum, n)| sum * (1.0 / n as f64)).collect()
}

/// Convex hull by Andrew's monotone chain, counterclockwise, first vertex
/// not repeated. Collinear boundary points are dropped. Degenerate inputs
/// (fewer than 3 distinct points, all collinear) return fewer than 3 points.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_unstable_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    fn turn(chain: &[Vec2], p: Vec2) -> f64 {
        let b = chain[chain.len() - 1];
        let a = chain[chain.len() - 2];
        (b - a).cross(p - a)
    }
    let mut lower: Vec<Vec2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && turn(&lower, p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vec2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && turn(&upper, p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Alpha shape: keep Delaunay triangles whose smallest enclosing ball has
/// radius <= alpha, return the boundary of their union as ordered vertex
/// loops. The outer loop winds counterclockwise, holes clockwise. With
/// alpha at least the point-set diameter this reproduces the convex hull.
/// Degenerate inputs or an alpha below the point spacing give an empty set
/// rather than an error.
pub fn alpha_shape(points: &[Vec2], alpha: f64) -> Result<Vec<Vec<Vec2>>> {
    if points.len() < 3 {
        return Ok(Vec::new());
    }
    let tris = match triangulate(points) {
        Ok(t) => t,
        Err(Error::DegenerateGeometry(_)) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let kept: Vec<[usize; 3]> = tris
        .into_iter()
        .filter(|t| min_enclosing_radius(points[t[0]], points[t[1]], points[t[2]]) <= alpha)
        .collect();
    if kept.is_empty() {
        return Ok(Vec::new());
    }
    let boundary = boundary_directed_edges(&kept);
    Ok(walk_loops(&boundary)?
        .into_iter()
        .map(|ring| ring.into_iter().map(|v| points[v]).collect())
        .collect())
}

/// Directed edges that belong to exactly one triangle, oriented as they
/// appear in their (CCW) triangle.
fn boundary_directed_edges(tris: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut count: HashMap<(usize, usize), u32> = HashMap::new();
    for t in tris {
        for k in 0..3 {
            let (u, v) = (t[k], t[(k + 1) % 3]);
            *count.entry((u.min(v), u.max(v))).or_insert(0) += 1;
        }
    }
    let mut out = Vec::new();
    for t in tris {
        for k in 0..3 {
            let (u, v) = (t[k], t[(k + 1) % 3]);
            if count[&(u.min(v), u.max(v))] == 1 {
                out.push((u, v));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Chain directed edges into closed loops. Every boundary vertex of a
/// consistently oriented triangle union has equal in/out degree, so greedy
/// walking (always the smallest unused successor) closes each loop; loops
/// start from the smallest unused start vertex. An unbalanced graph, which
/// only a degenerate complex can produce, is reported as an error.
fn walk_loops(edges: &[(usize, usize)]) -> Result<Vec<Vec<usize>>> {
    let mut successors: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(u, v) in edges {
        successors.entry(u).or_default().insert(v);
    }
    let mut loops = Vec::new();
    loop {
        let Some((&start, _)) = successors.iter().find(|(_, s)| !s.is_empty()) else {
            break;
        };
        let mut ring = vec![start];
        let mut at = start;
        loop {
            let next = successors
                .get_mut(&at)
                .and_then(|s| s.pop_first())
                .ok_or_else(|| {
                    Error::DegenerateGeometry("unclosable boundary loop".into())
                })?;
            if next == start {
                break;
            }
            ring.push(next);
            at = next;
        }
        loops.push(ring);
    }
    Ok(loops)
}

/// Occupancy bitmap of a polygon set (even-odd rule) on a res x res grid
/// over the fixed raster window. Cell centers are sampled.
pub fn rasterize_loops(loops: &[Vec<Vec2>], res: usize) -> Vec<bool> {
    let mut mask = vec![false; res * res];
    let w = RASTER_HALF_EXTENT;
    let cell = 2.0 * w / res as f64;
    let mut crossings: Vec<f64> = Vec::new();
    for row in 0..res {
        let y = -w + (row as f64 + 0.5) * cell;
        crossings.clear();
        for ring in loops {
            let n = ring.len();
            if n < 3 {
                continue;
            }
            for k in 0..n {
                let p = ring[k];
                let q = ring[(k + 1) % n];
                if (p.y > y) != (q.y > y) {
                    crossings.push(p.x + (y - p.y) * (q.x - p.x) / (q.y - p.y));
                }
            }
        }
        crossings.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in crossings.chunks_exact(2) {
            // Cell centers strictly between the two crossings.
            let lo = (((pair[0] + w) / cell - 0.5).floor() as i64 + 1).max(0);
            let hi = ((((pair[1] + w) / cell - 0.5).ceil() as i64) - 1).min(res as i64 - 1);
            for col in lo..=hi {
                mask[row * res + col as usize] = true;
            }
        }
    }
    mask
}

/// Intersection-over-union of two polygon sets, measured on a shared
/// res x res rasterization. Two empty sets count as identical (1.0).
pub fn polygon_iou(a: &[Vec<Vec2>], b: &[Vec<Vec2>], res: usize) -> f64 {
    let ma = rasterize_loops(a, res);
    let mb = rasterize_loops(b, res);
    let mut inter = 0usize;
    let mut union = 0usize;
    for (x, y) in ma.iter().zip(&mb) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// A triangle mesh with rest-space (material) coordinates alongside current
/// world positions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Vec2>,
    /// Undeformed coordinates, fixed at construction.
    pub rest: Vec<Vec2>,
    /// CCW index triples.
    pub triangles: Vec<[usize; 3]>,
    /// Undirected unique edges, (lo, hi), sorted.
    pub edges: Vec<(usize, usize)>,
    /// Directed boundary edges winding CCW around the mesh.
    pub boundary_edges: Vec<(usize, usize)>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec2>, mut triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for t in &mut triangles {
            for &v in t.iter() {
                if v >= n {
                    return Err(Error::IndexOutOfRange { index: v, len: n });
                }
            }
            let area2 = (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
            if area2.abs() < MIN_TRIANGLE_AREA2 {
                return Err(Error::DegenerateGeometry(format!(
                    "zero-area triangle {t:?}"
                )));
            }
            if area2 < 0.0 {
                t.swap(1, 2);
            }
        }
        let mut edge_set: BTreeSet<(usize, usize)> = BTreeSet::new();
        for t in &triangles {
            for k in 0..3 {
                let (u, v) = (t[k], t[(k + 1) % 3]);
                edge_set.insert((u.min(v), u.max(v)));
            }
        }
        let boundary_edges = boundary_directed_edges(&triangles);
        Ok(TriMesh {
            rest: vertices.clone(),
            vertices,
            triangles,
            edges: edge_set.into_iter().collect(),
            boundary_edges,
        })
    }

    /// Same topology and rest shape, new current positions.
    pub fn with_vertices(&self, vertices: Vec<Vec2>) -> Result<TriMesh> {
        if vertices.len() != self.rest.len() {
            return Err(Error::Shape(format!(
                "{} positions for a mesh with {} vertices",
                vertices.len(),
                self.rest.len()
            )));
        }
        Ok(TriMesh {
            vertices,
            rest: self.rest.clone(),
            triangles: self.triangles.clone(),
            edges: self.edges.clone(),
            boundary_edges: self.boundary_edges.clone(),
        })
    }

    /// Boundary polygon(s) at current vertex positions.
    pub fn boundary_loops(&self) -> Vec<Vec<Vec2>> {
        walk_loops(&self.boundary_edges)
            .expect("constructed meshes are consistently oriented")
            .into_iter()
            .map(|ring| ring.into_iter().map(|v| self.vertices[v]).collect())
            .collect()
    }

    pub fn mean_rest_edge_length(&self) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        let total: f64 = self.edges.iter().map(|&(u, v)| self.rest[u].dist(self.rest[v])).sum();
        total / self.edges.len() as f64
    }
}

/// Build a roughly uniform triangle mesh filling the convex hull of a point
/// set: hull edges are subdivided at the target spacing and an interior grid
/// at the same spacing is triangulated together with them.
pub fn mesh_from_hull(points: &[Vec2], target_edge: f64) -> Result<TriMesh> {
    if !(target_edge > 0.0) {
        return Err(Error::Config(format!("target edge {target_edge} must be positive")));
    }
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(Error::DegenerateGeometry(
            "hull has fewer than 3 vertices".into(),
        ));
    }

    let mut verts: Vec<Vec2> = Vec::new();
    for k in 0..hull.len() {
        let a = hull[k];
        let b = hull[(k + 1) % hull.len()];
        let segments = (a.dist(b) / target_edge).ceil().max(1.0) as usize;
        for s in 0..segments {
            verts.push(a.lerp(b, s as f64 / segments as f64));
        }
    }

    // Interior grid, anchored at the hull bounding box corner. Points too
    // close to the boundary would make sliver triangles, so require some
    // clearance.
    let (mut min, mut max) = (hull[0], hull[0]);
    for p in &hull {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    let clearance = 0.35 * target_edge;
    let cols = ((max.x - min.x) / target_edge).round() as i64;
    let rows = ((max.y - min.y) / target_edge).round() as i64;
    for j in 0..=rows {
        for i in 0..=cols {
            let p = Vec2::new(min.x + i as f64 * target_edge, min.y + j as f64 * target_edge);
            if distance_inside_hull(&hull, p) >= clearance {
                verts.push(p);
            }
        }
    }

    // Defend against duplicates where grid points coincide with hull points.
    let mut unique: Vec<Vec2> = Vec::with_capacity(verts.len());
    for v in verts {
        if !unique.iter().any(|u| u.dist_sq(v) < 1e-18) {
            unique.push(v);
        }
    }

    // Hull subdivision leaves near-collinear triples; the exact-arithmetic
    // triangulation keeps their slivers, which are degenerate as mesh
    // elements. Dropping any triangle subset keeps the boundary walkable.
    let tris: Vec<[usize; 3]> = triangulate(&unique)?
        .into_iter()
        .filter(|t| {
            (unique[t[1]] - unique[t[0]])
                .cross(unique[t[2]] - unique[t[0]])
                .abs()
                >= MIN_TRIANGLE_AREA2
        })
        .collect();
    TriMesh::new(unique, tris)
}

/// Smallest distance from `p` to the hull boundary, negative outside.
/// The hull must wind CCW.
fn distance_inside_hull(hull: &[Vec2], p: Vec2) -> f64 {
    let mut dist = f64::INFINITY;
    for k in 0..hull.len() {
        let a = hull[k];
        let b = hull[(k + 1) % hull.len()];
        let len = a.dist(b);
        if len <= f64::MIN_POSITIVE {
            continue;
        }
        dist = dist.min((b - a).cross(p - a) / len);
    }
    dist
}

/// Distance along the ray `origin + t * dir` (t > 0) to segment [a, b], if
/// they intersect. `dir` need not be normalized.
pub fn ray_segment_intersection(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let v = b - a;
    let denom = dir.cross(v);
    if denom.abs() < 1e-15 {
        return None;
    }
    let w = a - origin;
    let t = w.cross(v) / denom;
    let s = w.cross(dir) / denom;
    if t > 1e-12 && (0.0..=1.0).contains(&s) {
        Some(t)
    } else {
        None
    }
}

/// Distance along the ray to the first intersection with a circle, if any.
pub fn ray_circle_intersection(origin: Vec2, dir: Vec2, center: Vec2, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let a = dir.norm_sq();
    if a <= f64::MIN_POSITIVE {
        return None;
    }
    let half_b = oc.dot(dir);
    let c = oc.norm_sq() - radius * radius;
    let disc = half_b * half_b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sqrt_d = disc.sqrt();
    let t1 = (-half_b - sqrt_d) / a;
    if t1 > 1e-12 {
        return Some(t1);
    }
    let t2 = (-half_b + sqrt_d) / a;
    if t2 > 1e-12 {
        return Some(t2);
    }
    None
}
