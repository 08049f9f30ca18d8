//! Planar slicing of triangle meshes into closed loops.
//!
//! A [`SlicePlane`] carries its own right-handed frame so every loop can be
//! stored as 2D coordinates. [`slice_mesh`] intersects a [`Mesh`] with each
//! plane of a [`PlaneList`], chains the intersection segments into closed
//! polylines and turns every polyline into a canonical, resampled [`Loop`].

mod obj;
mod polygon;
mod slice;

pub use obj::{parse_obj, read_obj, write_obj};
pub use polygon::{
    canonicalize_loop, centroid, perimeter, point_in_loop, resample_loop, sample_closed_polyline,
    signed_area, ClosedSample,
};
pub use slice::{slice_mesh, DEFAULT_CHAIN_TOL};

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Default number of points per resampled loop.
pub const DEFAULT_LOOP_POINTS: usize = 32;

const UNIT_TOL: f64 = 1e-9;
const ON_PLANE_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("point is {offset:.3e} away from the plane")]
    OffPlane { offset: f64 },
    #[error("open contour on plane {plane}: {detail}")]
    NonManifoldSlice { plane: usize, detail: String },
    #[error("degenerate loop: {0}")]
    DegenerateLoop(String),
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    FaceIndex { face: usize, index: usize, count: usize },
    #[error("OBJ line {line}: {message}")]
    Obj { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// Indexed triangle set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<DVec3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    /// Builds a mesh, checking that every face index is in range.
    pub fn new(vertices: Vec<DVec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let count = vertices.len();
        for (face, tri) in faces.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i >= count) {
                return Err(GeometryError::FaceIndex { face, index, count });
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty() || self.vertices.is_empty()
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> Option<(DVec3, DVec3)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        )
    }

    /// Appends another mesh as a separate component.
    pub fn append(&mut self, other: &Mesh) {
        let offset = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces.extend(
            other
                .faces
                .iter()
                .map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]),
        );
    }

    pub fn triangle(&self, face: usize) -> [DVec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }
}

/// World axis used for slicing schedules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> DVec3 {
        match self {
            Axis::X => DVec3::X,
            Axis::Y => DVec3::Y,
            Axis::Z => DVec3::Z,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(GeometryError::InvalidInput(format!("unknown axis `{other}`"))),
        }
    }
}

/// A plane with an orthonormal, right-handed in-plane frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlicePlane {
    pub origin: DVec3,
    pub normal: DVec3,
    pub basis_x: DVec3,
    pub basis_y: DVec3,
}

/// Builds the deterministic frame for a plane.
///
/// The x axis is `normalize(a × normal)` where `a` is the world axis least
/// aligned with the normal (first one wins on ties); the y axis completes the
/// right-handed triple `(x, y, normal)`.
pub fn plane_basis(normal: DVec3, origin: DVec3) -> Result<SlicePlane> {
    let len = normal.length();
    if !len.is_finite() || len == 0.0 {
        return Err(GeometryError::InvalidInput("zero-length plane normal".into()));
    }
    if (len - 1.0).abs() > UNIT_TOL {
        return Err(GeometryError::InvalidInput(format!(
            "plane normal must be unit length, got |n| = {len}"
        )));
    }
    if !origin.is_finite() {
        return Err(GeometryError::InvalidInput("non-finite plane origin".into()));
    }
    let abs = normal.abs();
    let axis = if abs.x <= abs.y && abs.x <= abs.z {
        DVec3::X
    } else if abs.y <= abs.z {
        DVec3::Y
    } else {
        DVec3::Z
    };
    let basis_x = axis.cross(normal).normalize();
    let basis_y = normal.cross(basis_x);
    Ok(SlicePlane {
        origin,
        normal,
        basis_x,
        basis_y,
    })
}

impl SlicePlane {
    /// Signed distance of `p` along the plane normal.
    pub fn offset(&self, p: DVec3) -> f64 {
        (p - self.origin).dot(self.normal)
    }

    pub fn to_plane_coords(&self, p: DVec3) -> Result<DVec2> {
        let offset = self.offset(p);
        if offset.abs() >= ON_PLANE_TOL {
            return Err(GeometryError::OffPlane { offset });
        }
        Ok(self.project(p))
    }

    /// In-plane coordinates of `p` without the on-plane check.
    pub fn project(&self, p: DVec3) -> DVec2 {
        let d = p - self.origin;
        DVec2::new(d.dot(self.basis_x), d.dot(self.basis_y))
    }

    pub fn from_plane_coords(&self, q: DVec2) -> DVec3 {
        self.origin + q.x * self.basis_x + q.y * self.basis_y
    }

    /// Maps an in-plane direction to world space.
    pub fn direction_to_world(&self, d: DVec2) -> DVec3 {
        d.x * self.basis_x + d.y * self.basis_y
    }
}

/// Ordered, evenly spaced planes sharing one normal.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneList {
    planes: Vec<SlicePlane>,
}

impl PlaneList {
    pub fn new(planes: Vec<SlicePlane>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| GeometryError::InvalidInput("plane list is empty".into()))?;
        let normal = first.normal;
        for pair in planes.windows(2) {
            if pair[1].normal != normal {
                return Err(GeometryError::InvalidInput(
                    "all planes in a list must share one normal".into(),
                ));
            }
            if (pair[1].origin - pair[0].origin).dot(normal) <= 0.0 {
                return Err(GeometryError::InvalidInput(
                    "plane origins must be strictly increasing along the normal".into(),
                ));
            }
        }
        Ok(Self { planes })
    }

    /// `count` planes with normal `axis`, evenly spaced over `[lo, hi]`.
    pub fn along_axis(axis: Axis, count: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::along_direction(axis.unit(), count, lo, hi)
    }

    pub fn along_direction(normal: DVec3, count: usize, lo: f64, hi: f64) -> Result<Self> {
        if count == 0 {
            return Err(GeometryError::InvalidInput("plane count must be positive".into()));
        }
        if count > 1 && lo >= hi {
            return Err(GeometryError::InvalidInput(format!(
                "plane range must satisfy low < high, got [{lo}, {hi}]"
            )));
        }
        let step = if count > 1 {
            (hi - lo) / (count - 1) as f64
        } else {
            0.0
        };
        let planes = (0..count)
            .map(|i| {
                let t = if i + 1 == count && count > 1 {
                    hi
                } else {
                    lo + step * i as f64
                };
                plane_basis(normal, normal * t)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(planes)
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn normal(&self) -> DVec3 {
        self.planes[0].normal
    }

    pub fn planes(&self) -> &[SlicePlane] {
        &self.planes
    }

    pub fn get(&self, index: usize) -> Option<&SlicePlane> {
        self.planes.get(index)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SlicePlane> {
        self.planes.iter()
    }
}

impl std::ops::Index<usize> for PlaneList {
    type Output = SlicePlane;

    fn index(&self, index: usize) -> &SlicePlane {
        &self.planes[index]
    }
}

/// Compact description of an evenly spaced, axis-aligned plane list.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneSchedule {
    pub axis: Axis,
    pub count: usize,
    pub range: [f64; 2],
}

impl PlaneSchedule {
    /// Planes centred in `count` equal bins of `[0, 1]`.
    pub fn centered(axis: Axis, count: usize) -> Self {
        let half = 0.5 / count.max(1) as f64;
        Self {
            axis,
            count,
            range: [half, 1.0 - half],
        }
    }

    pub fn planes(&self) -> Result<PlaneList> {
        PlaneList::along_axis(self.axis, self.count, self.range[0], self.range[1])
    }
}

/// A closed planar loop in its plane's 2D frame. The last point connects back
/// to the first; the endpoint is never duplicated.
#[derive(Clone, Debug, PartialEq)]
pub struct Loop {
    pub points: Vec<DVec2>,
}

impl Loop {
    pub fn new(points: Vec<DVec2>) -> Self {
        Self { points }
    }

    /// Canonicalizes `points` (start vertex and orientation) without resampling.
    pub fn canonical(points: &[DVec2]) -> Result<Self> {
        Ok(Self::new(canonicalize_loop(points)?))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.points)
    }

    pub fn contains(&self, q: DVec2) -> bool {
        point_in_loop(&self.points, q)
    }

    pub fn centroid(&self) -> DVec2 {
        centroid(&self.points)
    }

    /// Lifts the loop into world space through `plane`.
    pub fn to_world(&self, plane: &SlicePlane) -> Vec<DVec3> {
        self.points
            .iter()
            .map(|&q| plane.from_plane_coords(q))
            .collect()
    }
}
