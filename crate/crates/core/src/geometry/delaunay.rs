//! Incremental Delaunay triangulation (Bowyer-Watson).
//!
//! Points are inserted one at a time; triangles whose circumcircle strictly
//! contains the new point are removed and the cavity is re-fanned. The three
//! bootstrap vertices are treated symbolically as points at infinity, so
//! their in-circle tests reduce to orientation tests. This avoids the
//! classic finite-super-triangle artifact where hull slivers with huge
//! circumcircles go missing. The in-circle and orientation predicates are
//! exact (adaptive-precision arithmetic), so cavities stay star-shaped even
//! on exactly collinear or cocircular inputs; exact ties count as outside
//! and resolve deterministically by insertion order.

use robust::Coord;

use crate::error::{Error, Result};
use crate::vec2::Vec2;

/// Directions of the three symbolic far vertices, counterclockwise.
const FAR_DIRS: [Vec2; 3] = [
    Vec2 { x: 0.0, y: 1.0 },
    Vec2 { x: -0.8660254037844386, y: -0.5 },
    Vec2 { x: 0.8660254037844386, y: -0.5 },
];

fn coord(p: Vec2) -> Coord<f64> {
    Coord { x: p.x, y: p.y }
}

/// Exact in-circle predicate: positive when `p` lies strictly inside the
/// circumcircle of CCW triangle (a, b, c), negative when strictly outside,
/// exactly zero on the circle.
pub(crate) fn in_circle(a: Vec2, b: Vec2, c: Vec2, p: Vec2) -> f64 {
    robust::incircle(coord(a), coord(b), coord(c), coord(p))
}

/// Exact orientation: positive when p is strictly left of the directed line
/// a -> b, zero when exactly collinear.
pub(crate) fn orientation(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    robust::orient2d(coord(a), coord(b), coord(p))
}

/// True only when p is strictly left of the directed line a -> b.
fn strictly_left(a: Vec2, b: Vec2, p: Vec2) -> bool {
    orientation(a, b, p) > 0.0
}

fn signed_area2(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

/// Circumcircle radius of a triangle; infinite for (near-)collinear corners.
pub fn circumradius(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    let area2 = signed_area2(a, b, c).abs();
    if area2 <= f64::MIN_POSITIVE {
        return f64::INFINITY;
    }
    (a.dist(b) * b.dist(c) * c.dist(a)) / (2.0 * area2)
}

/// Radius of the smallest ball enclosing the triangle: the circumradius for
/// acute triangles, half the longest edge for right and obtuse ones. Unlike
/// the raw circumradius this is bounded by the point-set diameter, so sliver
/// triangles do not blow up the alpha-shape filter.
pub fn min_enclosing_radius(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    let (ab, bc, ca) = (a.dist_sq(b), b.dist_sq(c), c.dist_sq(a));
    let longest = ab.max(bc).max(ca);
    let others = ab + bc + ca - longest;
    if longest >= others {
        longest.sqrt() * 0.5
    } else {
        circumradius(a, b, c)
    }
}

/// Does the circumcircle of `tri` strictly contain `p`? Vertices with index
/// >= n are the symbolic far vertices; with one far vertex the circle
/// degenerates to the half-plane left of the remaining real edge, with two
/// it degenerates to a half-plane through the single real vertex, oriented
/// by the two far directions.
fn circumcircle_contains(tri: [usize; 3], p: Vec2, points: &[Vec2], n: usize) -> bool {
    let far_count = tri.iter().filter(|&&v| v >= n).count();
    match far_count {
        0 => in_circle(points[tri[0]], points[tri[1]], points[tri[2]], p) > 0.0,
        1 => {
            let k = (0..3).find(|&k| tri[k] >= n).unwrap();
            let v0 = points[tri[(k + 1) % 3]];
            let v1 = points[tri[(k + 2) % 3]];
            strictly_left(v0, v1, p)
        }
        2 => {
            // Wedge between two far directions at the single real vertex.
            // Plain f64 here: the test only routes hull fans, is a pure
            // function of its inputs (deterministic), and exact ties are
            // broken toward outside by the strict comparison.
            let k = (0..3).find(|&k| tri[k] < n).unwrap();
            let u = points[tri[k]];
            let a = FAR_DIRS[tri[(k + 1) % 3] - n];
            let b = FAR_DIRS[tri[(k + 2) % 3] - n];
            (u - p).cross(a - b) > 0.0
        }
        _ => true,
    }
}

/// Delaunay triangulation of a 2D point set. Returns CCW triangles as index
/// triples into `points`, in a canonical sorted order. Duplicate and
/// exactly collinear-on-hull points are skipped and simply do not appear in
/// any triangle. Fails when no triangle at all can be formed (fewer than
/// three distinct points, or all points collinear).
pub fn triangulate(points: &[Vec2]) -> Result<Vec<[usize; 3]>> {
    if points.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "triangulation needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::DegenerateGeometry("non-finite point".into()));
    }

    let n = points.len();
    let mut tris: Vec<[usize; 3]> = vec![[n, n + 1, n + 2]];
    let mut bad: Vec<usize> = Vec::new();
    let mut edge_count: std::collections::HashMap<(usize, usize), i32> =
        std::collections::HashMap::new();
    let mut boundary: Vec<(usize, usize)> = Vec::new();

    for pi in 0..n {
        let p = points[pi];
        bad.clear();
        for (ti, t) in tris.iter().enumerate() {
            if circumcircle_contains(*t, p, points, n) {
                bad.push(ti);
            }
        }
        if bad.is_empty() {
            // A duplicate of an existing vertex (everything ties): leave the
            // triangulation alone.
            continue;
        }

        // Directed edges of the cavity boundary appear in exactly one bad
        // triangle. Bad triangles are CCW, so these edges wind CCW around
        // the cavity and fanning to p keeps orientation.
        edge_count.clear();
        for &ti in &bad {
            let t = tris[ti];
            for k in 0..3 {
                let (u, v) = (t[k], t[(k + 1) % 3]);
                *edge_count.entry((u.min(v), u.max(v))).or_insert(0) += 1;
            }
        }
        boundary.clear();
        for &ti in &bad {
            let t = tris[ti];
            for k in 0..3 {
                let (u, v) = (t[k], t[(k + 1) % 3]);
                if edge_count[&(u.min(v), u.max(v))] == 1 {
                    boundary.push((u, v));
                }
            }
        }

        for &ti in bad.iter().rev() {
            tris.swap_remove(ti);
        }
        for &(u, v) in &boundary {
            // A point exactly on a hull edge would fan into a zero-area
            // triangle; skip that edge (the region it spans has no area).
            if u < n && v < n && orientation(points[u], points[v], p) == 0.0 {
                continue;
            }
            tris.push([u, v, pi]);
        }
    }

    let mut out: Vec<[usize; 3]> = tris
        .into_iter()
        .filter(|t| t.iter().all(|&v| v < n))
        .filter(|t| orientation(points[t[0]], points[t[1]], points[t[2]]) > 0.0)
        .collect();
    if out.is_empty() {
        return Err(Error::DegenerateGeometry(
            "all points collinear or coincident".into(),
        ));
    }
    // Canonical order: smallest vertex first within each triangle (rotation
    // preserves orientation), then sorted, so output is stable regardless of
    // internal bookkeeping.
    for t in &mut out {
        let k = (0..3).min_by_key(|&k| t[k]).unwrap();
        t.rotate_left(k);
    }
    out.sort_unstable();
    Ok(out)
}
