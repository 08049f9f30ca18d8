//! Oriented point clouds from loop sequences, for external surface
//! reconstruction, plus PLY I/O and Chamfer distance.

use crate::geometry::{
    centroid, point_in_loop, sample_closed_polyline, signed_area, Loop, SlicePlane,
};
use crate::sequence::{LoopSequence, SequenceError};
use glam::{DVec2, DVec3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ReconError {
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error("PLY line {line}: {message}")]
    Ply { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ReconError> = std::result::Result<T, E>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OrientedPointCloud {
    pub points: Vec<DVec3>,
    pub normals: Vec<DVec3>,
}

impl OrientedPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: DVec3, normal: DVec3) {
        self.points.push(point);
        self.normals.push(normal);
    }

    pub fn extend(&mut self, other: &OrientedPointCloud) {
        self.points.extend_from_slice(&other.points);
        self.normals.extend_from_slice(&other.normals);
    }
}

/// Which part of a cloud came from which token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoopSpan {
    pub token: usize,
    pub plane: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoopCloud {
    pub cloud: OrientedPointCloud,
    pub spans: Vec<LoopSpan>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalParams {
    pub samples_per_loop: usize,
    /// Blend weight toward ∓n on the first/last occupied planes.
    pub boundary_tilt: f64,
}

impl Default for NormalParams {
    fn default() -> Self {
        Self {
            samples_per_loop: 64,
            boundary_tilt: 0.5,
        }
    }
}

/// Outward in-plane normal of the edge direction `d`; `ccw` is the loop's
/// orientation.
fn outward(d: DVec2, ccw: bool) -> DVec2 {
    let n = if ccw {
        DVec2::new(d.y, -d.x)
    } else {
        DVec2::new(-d.y, d.x)
    };
    n.normalize_or_zero()
}

/// Arc-length samples of one loop with outward in-plane normals. Samples that
/// fall on a vertex take the bisector of the two adjacent edge normals.
pub fn loop_samples(points: &[DVec2], count: usize) -> Vec<(DVec2, DVec2)> {
    let n = points.len();
    if n < 2 || count == 0 {
        return Vec::new();
    }
    let ccw = signed_area(points) > 0.0;
    let edge_normal = |i: usize| outward(points[(i + 1) % n] - points[i % n], ccw);
    sample_closed_polyline(points, count)
        .into_iter()
        .map(|s| {
            let normal = if s.t <= 1e-9 {
                let prev = edge_normal((s.segment + n - 1) % n);
                (prev + edge_normal(s.segment)).normalize_or(edge_normal(s.segment))
            } else if s.t >= 1.0 - 1e-9 {
                let next = edge_normal((s.segment + 1) % n);
                (next + edge_normal(s.segment)).normalize_or(edge_normal(s.segment))
            } else {
                edge_normal(s.segment)
            };
            (s.point, normal)
        })
        .collect()
}

fn tilt(in_plane: DVec3, axis: DVec3, weight: f64) -> DVec3 {
    ((1.0 - weight) * in_plane + weight * axis).normalize_or(axis)
}

/// Samples every loop of the sequence and assigns each sample a unit normal.
///
/// Interior planes get purely in-plane outward normals; samples on the first
/// (last) occupied plane are blended toward −n (+n) by `boundary_tilt`.
pub fn estimate_normals(seq: &LoopSequence, params: NormalParams) -> Result<LoopCloud> {
    let planes = seq.plane_indices()?;
    let (Some(&first), Some(&last)) = (planes.first(), planes.last()) else {
        return Ok(LoopCloud::default());
    };
    let axis = seq.planes.normal();
    let per_token: Vec<Vec<(DVec3, DVec3)>> = seq
        .tokens
        .par_iter()
        .zip(&planes)
        .map(|(token, &p)| {
            let plane: &SlicePlane = &seq.planes[p];
            let lp = token.to_loop();
            loop_samples(&lp.points, params.samples_per_loop)
                .into_iter()
                .map(|(q, n2)| {
                    let n = plane.direction_to_world(n2);
                    let n = if p == first {
                        tilt(n, -axis, params.boundary_tilt)
                    } else if p == last {
                        tilt(n, axis, params.boundary_tilt)
                    } else {
                        n.normalize_or(axis)
                    };
                    (plane.from_plane_coords(q), n)
                })
                .collect()
        })
        .collect();
    let mut out = LoopCloud::default();
    for (token, (samples, &plane)) in per_token.into_iter().zip(&planes).enumerate() {
        out.spans.push(LoopSpan {
            token,
            plane,
            start: out.cloud.len(),
            len: samples.len(),
        });
        for (p, n) in samples {
            out.cloud.push(p, n);
        }
    }
    Ok(out)
}

/// Nesting depth of each loop among its plane-mates: the number of other loops
/// that contain a strict majority of its vertices.
pub fn nesting_depths(loops: &[Loop]) -> Vec<usize> {
    loops
        .iter()
        .enumerate()
        .map(|(i, inner)| {
            loops
                .iter()
                .enumerate()
                .filter(|&(j, outer)| {
                    j != i && {
                        let inside = inner
                            .points
                            .iter()
                            .filter(|&&q| point_in_loop(&outer.points, q))
                            .count();
                        2 * inside > inner.points.len()
                    }
                })
                .count()
        })
        .collect()
}

/// Per-token nesting depth within each plane.
pub fn token_depths(seq: &LoopSequence) -> Result<Vec<usize>> {
    let planes = seq.plane_indices()?;
    let mut depths = vec![0; seq.len()];
    let mut start = 0;
    while start < planes.len() {
        let end = (start..planes.len())
            .find(|&k| planes[k] != planes[start])
            .unwrap_or(planes.len());
        let loops: Vec<Loop> = seq.tokens[start..end].iter().map(|t| t.to_loop()).collect();
        for (k, d) in nesting_depths(&loops).into_iter().enumerate() {
            depths[start + k] = d;
        }
        start = end;
    }
    Ok(depths)
}

/// Negates the in-plane normal component of every loop at odd nesting depth
/// (inner surfaces). Applying it twice restores the input.
pub fn flip_inner_loops(seq: &LoopSequence, cloud: &mut LoopCloud) -> Result<()> {
    let depths = token_depths(seq)?;
    let axis = seq.planes.normal();
    for span in &cloud.spans {
        if depths[span.token] % 2 == 1 {
            for n in &mut cloud.cloud.normals[span.start..span.start + span.len] {
                let along = n.dot(axis) * axis;
                *n = along - (*n - along);
            }
        }
    }
    Ok(())
}

/// Rejection-samples the material region of the first and last occupied planes
/// at `density` points per unit area. Bottom normals are −n, top normals +n.
///
/// A sample proposed in a loop's bounding box is kept when it lies inside an
/// odd number of that plane's loops and inside the proposing loop. Outer loops
/// that receive no sample get their centroid instead.
pub fn cap_fill(seq: &LoopSequence, density: f64, seed: u64) -> Result<OrientedPointCloud> {
    let planes = seq.plane_indices()?;
    let mut out = OrientedPointCloud::default();
    let (Some(&first), Some(&last)) = (planes.first(), planes.last()) else {
        return Ok(out);
    };
    let axis = seq.planes.normal();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let caps: &[(usize, f64)] = if first == last {
        &[(first, -1.0)]
    } else {
        &[(first, -1.0), (last, 1.0)]
    };
    for &(plane_index, sign) in caps {
        let loops: Vec<Loop> = seq
            .tokens
            .iter()
            .zip(&planes)
            .filter(|(_, &p)| p == plane_index)
            .map(|(t, _)| t.to_loop())
            .collect();
        let depths = nesting_depths(&loops);
        let plane = &seq.planes[plane_index];
        let normal = sign * axis;
        for (lp, depth) in loops.iter().zip(&depths) {
            if lp.points.is_empty() {
                continue;
            }
            let (lo, hi) = lp.points.iter().fold(
                (DVec2::splat(f64::INFINITY), DVec2::splat(f64::NEG_INFINITY)),
                |(lo, hi), &p| (lo.min(p), hi.max(p)),
            );
            let size = hi - lo;
            let proposals = (size.x * size.y * density.max(0.0)).round() as usize;
            let mut accepted = 0;
            for _ in 0..proposals {
                let q = lo + DVec2::new(rng.random::<f64>() * size.x, rng.random::<f64>() * size.y);
                if !point_in_loop(&lp.points, q) {
                    continue;
                }
                let covering = loops.iter().filter(|l| point_in_loop(&l.points, q)).count();
                if covering % 2 == 1 {
                    out.push(plane.from_plane_coords(q), normal);
                    accepted += 1;
                }
            }
            if accepted == 0 && depth % 2 == 0 {
                out.push(plane.from_plane_coords(centroid(&lp.points)), normal);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudParams {
    pub normals: NormalParams,
    /// Cap samples per unit area; 0 disables cap filling.
    pub cap_density: f64,
    pub seed: u64,
}

impl Default for CloudParams {
    fn default() -> Self {
        Self {
            normals: NormalParams::default(),
            cap_density: 2000.0,
            seed: 0,
        }
    }
}

/// Full pipeline: loop samples with normals, inner-loop flipping, caps.
pub fn oriented_cloud(seq: &LoopSequence, params: CloudParams) -> Result<OrientedPointCloud> {
    let mut loops = estimate_normals(seq, params.normals)?;
    flip_inner_loops(seq, &mut loops)?;
    let mut cloud = loops.cloud;
    if params.cap_density > 0.0 {
        cloud.extend(&cap_fill(seq, params.cap_density, params.seed)?);
    }
    Ok(cloud)
}

/// ASCII PLY with 9 significant digits per value.
pub fn ply_string(cloud: &OrientedPointCloud) -> String {
    let mut out = String::with_capacity(64 + cloud.len() * 96);
    out.push_str("ply\nformat ascii 1.0\ncomment oriented point cloud\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    for p in ["x", "y", "z", "nx", "ny", "nz"] {
        let _ = writeln!(out, "property double {p}");
    }
    out.push_str("end_header\n");
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        let _ = writeln!(
            out,
            "{:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e}",
            p.x, p.y, p.z, n.x, n.y, n.z
        );
    }
    out
}

pub fn export_ply(cloud: &OrientedPointCloud, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ply_string(cloud))?;
    Ok(())
}

fn ply_err(line: usize, message: impl Into<String>) -> ReconError {
    ReconError::Ply {
        line,
        message: message.into(),
    }
}

/// Parses the ASCII PLY layout written by [`ply_string`].
pub fn parse_ply(text: &str) -> Result<OrientedPointCloud> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(ply_err(1, "missing `ply` magic")),
    }
    let mut count = None;
    let mut properties = Vec::new();
    loop {
        let (i, line) = lines.next().ok_or_else(|| ply_err(0, "missing end_header"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] if *fmt != "ascii" => {
                return Err(ply_err(i + 1, format!("unsupported format `{fmt}`")))
            }
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|e| ply_err(i + 1, e.to_string()))?)
            }
            ["property", _, name] => properties.push(name.to_string()),
            _ => {}
        }
    }
    let expected = ["x", "y", "z", "nx", "ny", "nz"];
    if properties != expected {
        return Err(ply_err(0, format!("expected properties {expected:?}, got {properties:?}")));
    }
    let count = count.ok_or_else(|| ply_err(0, "missing vertex element"))?;
    let mut cloud = OrientedPointCloud::default();
    for _ in 0..count {
        let (i, line) = lines
            .next()
            .ok_or_else(|| ply_err(0, format!("expected {count} vertices, got {}", cloud.len())))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e: std::num::ParseFloatError| ply_err(i + 1, e.to_string()))?;
        if v.len() != 6 {
            return Err(ply_err(i + 1, format!("expected 6 values, got {}", v.len())));
        }
        cloud.push(DVec3::new(v[0], v[1], v[2]), DVec3::new(v[3], v[4], v[5]));
    }
    Ok(cloud)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<OrientedPointCloud> {
    parse_ply(&std::fs::read_to_string(path)?)
}

fn mean_nearest_sq(from: &[DVec3], to: &[DVec3]) -> f64 {
    let total: f64 = from
        .par_iter()
        .map(|a| {
            to.iter()
                .map(|b| a.distance_squared(*b))
                .fold(f64::INFINITY, f64::min)
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    total / from.len() as f64
}

/// Symmetric squared Chamfer distance: the mean squared nearest-neighbour
/// distance from `a` to `b` plus the same from `b` to `a`. Two empty clouds
/// are at distance 0; one empty cloud is infinitely far from anything.
pub fn chamfer(a: &[DVec3], b: &[DVec3]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 0.0,
        (true, false) | (false, true) => f64::INFINITY,
        _ => mean_nearest_sq(a, b) + mean_nearest_sq(b, a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chamfer_hand_values() {
        let a = [DVec3::ZERO];
        let b = [DVec3::new(0.1, 0.0, 0.0)];
        assert!((chamfer(&a, &b) - 0.02).abs() < 1e-15);
        assert_eq!(chamfer(&a, &a), 0.0);
        assert_eq!(chamfer(&[], &[]), 0.0);
        assert!(chamfer(&a, &[]).is_infinite());
    }

    #[test]
    fn ply_rejects_bad_input() {
        assert!(parse_ply("obj\n").is_err());
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nproperty double nx\nproperty double ny\nproperty double nz\nend_header\n1 2 3\n";
        assert!(matches!(parse_ply(text), Err(ReconError::Ply { line: 11, .. })));
    }

    #[test]
    fn vertex_samples_use_bisector() {
        let square = [
            DVec2::new(0.0, 0.0),
            DVec2::new(0.0, 1.0),
            DVec2::new(1.0, 1.0),
            DVec2::new(1.0, 0.0),
        ];
        let s = loop_samples(&square, 4);
        let expected = DVec2::new(-1.0, -1.0).normalize();
        assert!((s[0].1 - expected).length() < 1e-12);
    }
}
