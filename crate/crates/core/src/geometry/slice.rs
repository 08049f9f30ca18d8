use super::{resample_loop, GeometryError, Loop, Mesh, PlaneList, Result, SlicePlane};
use glam::{DVec2, DVec3};
use std::collections::HashMap;

/// Default endpoint chaining tolerance for unit-cube-normalized meshes.
pub const DEFAULT_CHAIN_TOL: f64 = 1e-6;

/// Offset applied to vertices lying exactly on a slice plane.
const ON_PLANE_NUDGE: f64 = 1e-9;

/// Intersects `mesh` with every plane and returns, per plane, the closed loops
/// resampled to `points_per_loop` points. Planes that miss the mesh yield an
/// empty list.
pub fn slice_mesh(
    mesh: &Mesh,
    planes: &PlaneList,
    chain_tol: f64,
    points_per_loop: usize,
) -> Result<Vec<Vec<Loop>>> {
    if mesh.is_empty() {
        return Err(GeometryError::InvalidInput("mesh has no faces".into()));
    }
    if !(chain_tol > 0.0) {
        return Err(GeometryError::InvalidInput(format!(
            "chain tolerance must be positive, got {chain_tol}"
        )));
    }
    planes
        .iter()
        .enumerate()
        .map(|(index, plane)| slice_plane(mesh, plane, index, chain_tol, points_per_loop))
        .collect()
}

fn slice_plane(
    mesh: &Mesh,
    plane: &SlicePlane,
    index: usize,
    chain_tol: f64,
    points_per_loop: usize,
) -> Result<Vec<Loop>> {
    let mut positions = mesh.vertices.clone();
    let mut dist: Vec<f64> = positions.iter().map(|&v| plane.offset(v)).collect();
    for (d, p) in dist.iter_mut().zip(positions.iter_mut()) {
        if *d == 0.0 {
            *p += plane.normal * ON_PLANE_NUDGE;
            *d = plane.offset(*p);
        }
    }

    let mut nodes: Vec<DVec3> = Vec::new();
    let mut by_edge: HashMap<(usize, usize), usize> = HashMap::new();
    let mut segments: Vec<[usize; 2]> = Vec::new();
    let mut crossing = |i: usize, j: usize, nodes: &mut Vec<DVec3>| -> usize {
        let key = (i.min(j), i.max(j));
        *by_edge.entry(key).or_insert_with(|| {
            let (a, b) = key;
            let t = dist[a] / (dist[a] - dist[b]);
            nodes.push(positions[a] + (positions[b] - positions[a]) * t);
            nodes.len() - 1
        })
    };

    for face in &mesh.faces {
        let above = face.map(|v| dist[v] > 0.0);
        if above[0] == above[1] && above[1] == above[2] {
            continue;
        }
        let mut ends = [0usize; 2];
        let mut k = 0;
        for e in 0..3 {
            let (i, j) = (face[e], face[(e + 1) % 3]);
            if above[e] != above[(e + 1) % 3] {
                ends[k] = crossing(i, j, &mut nodes);
                k += 1;
            }
        }
        segments.push(ends);
    }
    if segments.is_empty() {
        return Ok(Vec::new());
    }

    let root = weld(&nodes, chain_tol);
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    let mut edges: Vec<[usize; 2]> = Vec::with_capacity(segments.len());
    for [a, b] in segments {
        let (ra, rb) = (root[a], root[b]);
        if ra == rb {
            continue;
        }
        adjacency[ra].push(edges.len());
        adjacency[rb].push(edges.len());
        edges.push([ra, rb]);
    }

    for (node, adj) in adjacency.iter().enumerate() {
        if !adj.is_empty() && adj.len() != 2 {
            let p = nodes[node];
            return Err(GeometryError::NonManifoldSlice {
                plane: index,
                detail: format!(
                    "contour vertex at ({:.6}, {:.6}, {:.6}) has {} incident segments",
                    p.x,
                    p.y,
                    p.z,
                    adj.len()
                ),
            });
        }
    }

    let mut used = vec![false; edges.len()];
    let mut loops = Vec::new();
    for start_edge in 0..edges.len() {
        if used[start_edge] {
            continue;
        }
        let start = edges[start_edge][0];
        let mut polyline: Vec<DVec2> = Vec::new();
        let mut node = start;
        let mut edge = start_edge;
        loop {
            used[edge] = true;
            polyline.push(plane.project(nodes[node]));
            let [a, b] = edges[edge];
            node = if a == node { b } else { a };
            if node == start {
                break;
            }
            let adj = &adjacency[node];
            edge = if adj[0] == edge { adj[1] } else { adj[0] };
        }
        let lp = resample_loop(&polyline, points_per_loop).map_err(|e| {
            GeometryError::NonManifoldSlice {
                plane: index,
                detail: e.to_string(),
            }
        })?;
        loops.push(lp);
    }
    Ok(loops)
}

/// Union-find over points closer than `tol`, bucketed on a `tol`-sized grid.
fn weld(points: &[DVec3], tol: f64) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..points.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let cell = |p: DVec3| -> (i64, i64, i64) {
        let c = (p / tol).floor();
        (c.x as i64, c.y as i64, c.z as i64)
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in points.iter().enumerate() {
        let (cx, cy, cz) = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in bucket {
                            if points[j].distance(p) <= tol {
                                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                                if ri != rj {
                                    parent[ri.max(rj)] = ri.min(rj);
                                }
                            }
                        }
                    }
                }
            }
        }
        grid.entry((cx, cy, cz)).or_default().push(i);
    }
    (0..points.len()).map(|i| find(&mut parent, i)).collect()
}
