use super::{GeometryError, Loop, Result};
use glam::DVec2;
use std::cmp::Ordering;

const COLLINEAR_TOL: f64 = 1e-12;
const BOUNDARY_TOL: f64 = 1e-12;

/// Shoelace area; positive for counterclockwise loops.
pub fn signed_area(points: &[DVec2]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

pub fn perimeter(points: &[DVec2]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| points[i].distance(points[(i + 1) % n]))
        .sum()
}

/// Vertex average.
pub fn centroid(points: &[DVec2]) -> DVec2 {
    if points.is_empty() {
        return DVec2::ZERO;
    }
    points.iter().copied().sum::<DVec2>() / points.len() as f64
}

fn on_segment(q: DVec2, a: DVec2, b: DVec2) -> bool {
    let ab = b - a;
    let len = ab.length();
    if len == 0.0 {
        return q.distance(a) <= BOUNDARY_TOL;
    }
    let cross = ab.perp_dot(q - a);
    if cross.abs() > BOUNDARY_TOL * len.max(1.0) {
        return false;
    }
    let t = (q - a).dot(ab);
    t >= -BOUNDARY_TOL && t <= len * len + BOUNDARY_TOL
}

/// Even-odd ray casting; points on the boundary count as inside.
pub fn point_in_loop(points: &[DVec2], q: DVec2) -> bool {
    let n = points.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = points[i];
        let b = points[j];
        if on_segment(q, a, b) {
            return true;
        }
        if (a.y > q.y) != (b.y > q.y) {
            let x = (b.x - a.x) * (q.y - a.y) / (b.y - a.y) + a.x;
            if q.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn start_key(a: DVec2, b: DVec2) -> Ordering {
    (a.x + a.y)
        .total_cmp(&(b.x + b.y))
        .then(a.x.total_cmp(&b.x))
        .then(a.y.total_cmp(&b.y))
}

fn triangle_area(a: DVec2, b: DVec2, c: DVec2) -> f64 {
    0.5 * (b - a).perp_dot(c - a)
}

/// Rotates the loop to start at the minimum `x + y` vertex (ties: min x, then
/// min y) and orients it clockwise.
///
/// Orientation follows the first three points: of the two traversals that
/// start at the canonical vertex, the one whose first triangle turns clockwise
/// wins. When that is ambiguous (collinear, or both or neither turning
/// clockwise) the whole-loop signed area decides.
pub fn canonicalize_loop(points: &[DVec2]) -> Result<Vec<DVec2>> {
    let n = points.len();
    if n < 3 {
        return Err(GeometryError::DegenerateLoop(format!(
            "need at least 3 points, got {n}"
        )));
    }
    let start = (0..n)
        .min_by(|&a, &b| start_key(points[a], points[b]))
        .expect("non-empty");
    let forward: Vec<DVec2> = (0..n).map(|k| points[(start + k) % n]).collect();
    let backward: Vec<DVec2> = (0..n).map(|k| points[(start + n - k) % n]).collect();

    let cw_forward = triangle_area(forward[0], forward[1], forward[2]) < -COLLINEAR_TOL;
    let cw_backward = triangle_area(backward[0], backward[1], backward[2]) < -COLLINEAR_TOL;
    let keep_forward = match (cw_forward, cw_backward) {
        (true, false) => true,
        (false, true) => false,
        _ => signed_area(&forward) <= 0.0,
    };
    Ok(if keep_forward { forward } else { backward })
}

/// One arc-length sample on a closed polyline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosedSample {
    pub point: DVec2,
    /// Index of the edge `(segment, segment + 1)` the sample lies on.
    pub segment: usize,
    /// Parameter along that edge in `[0, 1)`.
    pub t: f64,
}

/// `count` samples uniformly spaced by arc length, the first at `points[0]`.
pub fn sample_closed_polyline(points: &[DVec2], count: usize) -> Vec<ClosedSample> {
    let n = points.len();
    if n == 0 || count == 0 {
        return Vec::new();
    }
    let lengths: Vec<f64> = (0..n)
        .map(|i| points[i].distance(points[(i + 1) % n]))
        .collect();
    let total: f64 = lengths.iter().sum();
    let mut out = Vec::with_capacity(count);
    let mut segment = 0;
    let mut walked = 0.0;
    for k in 0..count {
        let target = total * k as f64 / count as f64;
        while segment + 1 < n && walked + lengths[segment] <= target {
            walked += lengths[segment];
            segment += 1;
        }
        let len = lengths[segment];
        let t = if len > 0.0 {
            ((target - walked) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let a = points[segment];
        let b = points[(segment + 1) % n];
        out.push(ClosedSample {
            point: if t == 0.0 { a } else { a + (b - a) * t },
            segment,
            t,
        });
    }
    out
}

fn dedup_closed(points: &[DVec2]) -> Vec<DVec2> {
    let mut out: Vec<DVec2> = Vec::with_capacity(points.len());
    for &p in points {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    while out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

/// Resamples a closed polyline to `count` points evenly spaced by arc length,
/// starting at its canonical start vertex, and canonicalizes the result.
pub fn resample_loop(polyline: &[DVec2], count: usize) -> Result<Loop> {
    if count < 3 {
        return Err(GeometryError::InvalidInput(format!(
            "loops need at least 3 points, requested {count}"
        )));
    }
    let distinct = dedup_closed(polyline);
    if distinct.len() < 3 {
        return Err(GeometryError::DegenerateLoop(format!(
            "{} distinct points",
            distinct.len()
        )));
    }
    let length = perimeter(&distinct);
    if length <= 0.0 || !length.is_finite() {
        return Err(GeometryError::DegenerateLoop("zero perimeter".into()));
    }
    let ordered = canonicalize_loop(&distinct)?;
    let samples: Vec<DVec2> = sample_closed_polyline(&ordered, count)
        .into_iter()
        .map(|s| s.point)
        .collect();
    Loop::canonical(&samples)
}
