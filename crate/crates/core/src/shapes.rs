//! Closed triangle meshes for analytic and procedural shapes.

use crate::geometry::Mesh;
use glam::DVec3;
use std::collections::HashMap;
use std::f64::consts::TAU;

/// Six times the signed volume enclosed by a closed mesh; positive when the
/// faces are wound outward.
pub fn signed_volume6(mesh: &Mesh) -> f64 {
    mesh.faces
        .iter()
        .map(|&[a, b, c]| {
            mesh.vertices[a].dot(mesh.vertices[b].cross(mesh.vertices[c]))
        })
        .sum()
}

/// Flips every face if the mesh is wound inward.
pub fn orient_outward(mut mesh: Mesh) -> Mesh {
    if signed_volume6(&mesh) < 0.0 {
        for f in &mut mesh.faces {
            f.swap(1, 2);
        }
    }
    mesh
}

pub fn cuboid(min: DVec3, max: DVec3) -> Mesh {
    box_union(&[(min, max)])
}

/// Surface of revolution about the y axis, closed by flat caps.
///
/// `profile` lists `(height, radius)` rings with strictly increasing height.
pub fn revolution(profile: &[(f64, f64)], segments: usize) -> Mesh {
    let segments = segments.max(3);
    let mut vertices = Vec::with_capacity(profile.len() * segments + 2);
    for &(y, r) in profile {
        for k in 0..segments {
            let a = TAU * k as f64 / segments as f64;
            vertices.push(DVec3::new(r * a.cos(), y, r * a.sin()));
        }
    }
    let ring = |j: usize, k: usize| j * segments + k % segments;
    let mut faces = Vec::new();
    for j in 0..profile.len().saturating_sub(1) {
        for k in 0..segments {
            let (a, b, c, d) = (ring(j, k), ring(j, k + 1), ring(j + 1, k + 1), ring(j + 1, k));
            faces.push([a, d, c]);
            faces.push([a, c, b]);
        }
    }
    let bottom = vertices.len();
    vertices.push(DVec3::new(0.0, profile[0].0, 0.0));
    let top = vertices.len();
    vertices.push(DVec3::new(0.0, profile[profile.len() - 1].0, 0.0));
    let last = profile.len() - 1;
    for k in 0..segments {
        faces.push([bottom, ring(0, k), ring(0, k + 1)]);
        faces.push([top, ring(last, k + 1), ring(last, k)]);
    }
    orient_outward(Mesh { vertices, faces })
}

/// Closed cylinder of the given radius about the y axis.
pub fn cylinder(radius: f64, y0: f64, y1: f64, segments: usize) -> Mesh {
    revolution(&[(y0, radius), (y1, radius)], segments)
}

/// Torus about the z axis centred at the origin.
pub fn torus(major: f64, minor: f64, major_segments: usize, minor_segments: usize) -> Mesh {
    let (nu, nv) = (major_segments.max(3), minor_segments.max(3));
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = TAU * i as f64 / nu as f64;
        for j in 0..nv {
            let v = TAU * j as f64 / nv as f64;
            let r = major + minor * v.cos();
            vertices.push(DVec3::new(r * u.cos(), r * u.sin(), minor * v.sin()));
        }
    }
    let idx = |i: usize, j: usize| (i % nu) * nv + j % nv;
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    orient_outward(Mesh { vertices, faces })
}

/// Capped tube of radius `tube` swept along a circular arc.
///
/// The arc lies in the plane spanned by `u` (unit, perpendicular to
/// `v`) and `v`, centred at `center`, running from angle `-span` to `span`
/// measured from `u` toward `v`.
pub fn tube_arc(
    center: DVec3,
    u: DVec3,
    v: DVec3,
    radius: f64,
    span: f64,
    tube: f64,
    path_segments: usize,
    ring_segments: usize,
) -> Mesh {
    let w = u.cross(v);
    let (np, nr) = (path_segments.max(1) + 1, ring_segments.max(3));
    let mut vertices = Vec::with_capacity(np * nr + 2);
    let mut path = Vec::with_capacity(np);
    for i in 0..np {
        let a = -span + 2.0 * span * i as f64 / (np - 1) as f64;
        let radial = u * a.cos() + v * a.sin();
        let p = center + radial * radius;
        path.push(p);
        for k in 0..nr {
            let b = TAU * k as f64 / nr as f64;
            vertices.push(p + (radial * b.cos() + w * b.sin()) * tube);
        }
    }
    let idx = |i: usize, k: usize| i * nr + k % nr;
    let mut faces = Vec::new();
    for i in 0..np - 1 {
        for k in 0..nr {
            let (a, b, c, d) = (idx(i, k), idx(i, k + 1), idx(i + 1, k + 1), idx(i + 1, k));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    let start = vertices.len();
    vertices.push(path[0]);
    let end = vertices.len();
    vertices.push(path[np - 1]);
    for k in 0..nr {
        faces.push([start, idx(0, k + 1), idx(0, k)]);
        faces.push([end, idx(np - 1, k), idx(np - 1, k + 1)]);
    }
    orient_outward(Mesh { vertices, faces })
}

/// Boundary of the union of axis-aligned boxes, built on the grid induced by
/// all box coordinates so that touching boxes share vertices.
pub fn box_union(boxes: &[(DVec3, DVec3)]) -> Mesh {
    let breaks = |axis: usize| -> Vec<f64> {
        let mut v: Vec<f64> = boxes
            .iter()
            .flat_map(|(lo, hi)| [lo[axis], hi[axis]])
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let grid = [breaks(0), breaks(1), breaks(2)];
    let dims = [grid[0].len() - 1, grid[1].len() - 1, grid[2].len() - 1];
    let filled = |c: [i64; 3]| -> bool {
        if (0..3).any(|a| c[a] < 0 || c[a] >= dims[a] as i64) {
            return false;
        }
        let center = DVec3::new(
            0.5 * (grid[0][c[0] as usize] + grid[0][c[0] as usize + 1]),
            0.5 * (grid[1][c[1] as usize] + grid[1][c[1] as usize + 1]),
            0.5 * (grid[2][c[2] as usize] + grid[2][c[2] as usize + 1]),
        );
        boxes.iter().any(|(lo, hi)| {
            center.cmpgt(*lo).all() && center.cmplt(*hi).all()
        })
    };

    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut mesh = Mesh::default();
    let mut vertex = |g: [usize; 3], mesh: &mut Mesh| -> usize {
        *index.entry(g).or_insert_with(|| {
            mesh.vertices
                .push(DVec3::new(grid[0][g[0]], grid[1][g[1]], grid[2][g[2]]));
            mesh.vertices.len() - 1
        })
    };

    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let cell = [i as i64, j as i64, k as i64];
                if !filled(cell) {
                    continue;
                }
                for axis in 0..3 {
                    for side in [0usize, 1] {
                        let mut nb = cell;
                        nb[axis] += if side == 1 { 1 } else { -1 };
                        if filled(nb) {
                            continue;
                        }
                        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                        let base = [i, j, k];
                        let corner = |d1: usize, d2: usize| {
                            let mut g = base;
                            g[axis] += side;
                            g[a1] += d1;
                            g[a2] += d2;
                            g
                        };
                        let q = [
                            vertex(corner(0, 0), &mut mesh),
                            vertex(corner(1, 0), &mut mesh),
                            vertex(corner(1, 1), &mut mesh),
                            vertex(corner(0, 1), &mut mesh),
                        ];
                        // (a1, a2, axis) is right-handed, so this winding faces +axis
                        if side == 1 {
                            mesh.faces.push([q[0], q[1], q[2]]);
                            mesh.faces.push([q[0], q[2], q[3]]);
                        } else {
                            mesh.faces.push([q[0], q[2], q[1]]);
                            mesh.faces.push([q[0], q[3], q[2]]);
                        }
                    }
                }
            }
        }
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn edge_use_counts(mesh: &Mesh) -> HashMap<(usize, usize), i32> {
        let mut counts = HashMap::new();
        for f in &mesh.faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                *counts.entry((a, b)).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Closed and consistently oriented: every directed edge appears once and
    /// its reverse appears once.
    fn assert_closed_oriented(mesh: &Mesh) {
        let counts = edge_use_counts(mesh);
        for (&(a, b), &n) in &counts {
            assert_eq!(n, 1, "directed edge {a}->{b} used {n} times");
            assert_eq!(counts.get(&(b, a)), Some(&1), "edge {a}->{b} has no twin");
        }
        assert!(signed_volume6(mesh) > 0.0);
    }

    #[test]
    fn cuboid_volume_and_closure() {
        let m = cuboid(DVec3::ZERO, DVec3::new(1.0, 2.0, 3.0));
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.faces.len(), 12);
        assert_closed_oriented(&m);
        assert!((signed_volume6(&m) / 6.0 - 6.0).abs() < 1e-12);
    }

    #[test]
    fn primitives_are_closed() {
        assert_closed_oriented(&cylinder(0.3, 0.0, 1.0, 48));
        assert_closed_oriented(&torus(0.4, 0.1, 48, 16));
        assert_closed_oriented(&tube_arc(
            DVec3::ZERO,
            DVec3::X,
            DVec3::Y,
            0.2,
            1.2,
            0.03,
            16,
            10,
        ));
        assert_closed_oriented(&revolution(&[(0.0, 0.2), (0.5, 0.4), (1.0, 0.1)], 32));
    }

    #[test]
    fn box_union_merges_overlaps() {
        let m = box_union(&[
            (DVec3::ZERO, DVec3::new(2.0, 1.0, 1.0)),
            (DVec3::new(1.0, 0.0, 0.0), DVec3::new(2.0, 2.0, 1.0)),
        ]);
        assert_closed_oriented(&m);
        // L-shaped prism: area 3, depth 1
        assert!((signed_volume6(&m) / 6.0 - 3.0).abs() < 1e-12);
    }
}
