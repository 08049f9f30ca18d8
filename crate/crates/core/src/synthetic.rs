//! Dataset preparation: mesh normalization, plane schedules, procedural
//! vases and sofas, OBJ ingestion and `.loopseq` dataset directories.

use crate::geometry::{
    read_obj, slice_mesh, Axis, GeometryError, Mesh, PlaneList, PlaneSchedule, DEFAULT_CHAIN_TOL,
};
use crate::sequence::{encode_sequence, read_loopseq_file, write_loopseq_file, LoopSequence};
use crate::shapes::{box_union, revolution, tube_arc};
use glam::DVec3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error("{rejected} of {total} shapes were rejected; first reason: {reason}")]
    Quality {
        rejected: usize,
        total: usize,
        reason: String,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sequence(#[from] crate::sequence::SequenceError),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Vase,
    Sofa,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub category: Category,
    pub num_shapes: usize,
    pub plane_count: usize,
    pub slice_axis: Axis,
    pub plane_range: [f64; 2],
    #[serde(rename = "N")]
    pub n_points: usize,
    pub seed: u64,
    pub max_seq_len: usize,
    /// Source directory of `.obj` files for the `custom` category.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obj_dir: Option<PathBuf>,
    #[serde(default = "default_chain_tol")]
    pub chain_tol: f64,
}

fn default_chain_tol() -> f64 {
    DEFAULT_CHAIN_TOL
}

impl DatasetConfig {
    /// 40 planes along +y, sequences of at most 135 loops.
    pub fn vase(num_shapes: usize, seed: u64) -> Self {
        Self::procedural(Category::Vase, num_shapes, seed, Axis::Y, 40, 135)
    }

    /// 32 planes along +x, sequences of at most 121 loops.
    pub fn sofa(num_shapes: usize, seed: u64) -> Self {
        Self::procedural(Category::Sofa, num_shapes, seed, Axis::X, 32, 121)
    }

    fn procedural(
        category: Category,
        num_shapes: usize,
        seed: u64,
        axis: Axis,
        plane_count: usize,
        max_seq_len: usize,
    ) -> Self {
        let schedule = PlaneSchedule::centered(axis, plane_count);
        Self {
            category,
            num_shapes,
            plane_count,
            slice_axis: axis,
            plane_range: schedule.range,
            n_points: crate::geometry::DEFAULT_LOOP_POINTS,
            seed,
            max_seq_len,
            obj_dir: None,
            chain_tol: DEFAULT_CHAIN_TOL,
        }
    }

    /// Same category defaults with a different plane count.
    pub fn with_planes(mut self, plane_count: usize) -> Self {
        let schedule = PlaneSchedule::centered(self.slice_axis, plane_count);
        self.plane_count = plane_count;
        self.plane_range = schedule.range;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(DatasetError::Config(m));
        if self.plane_count < 2 {
            return fail(format!("plane_count must be at least 2, got {}", self.plane_count));
        }
        let [lo, hi] = self.plane_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return fail(format!("plane_range must satisfy low < high, got [{lo}, {hi}]"));
        }
        if self.max_seq_len < self.plane_count {
            return fail(format!(
                "max_seq_len {} is below plane_count {}",
                self.max_seq_len, self.plane_count
            ));
        }
        if self.n_points < 3 {
            return fail(format!("N must be at least 3, got {}", self.n_points));
        }
        if !(self.chain_tol > 0.0) {
            return fail("chain_tol must be positive".into());
        }
        if self.category == Category::Custom && self.obj_dir.is_none() {
            return fail("custom datasets need obj_dir".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> PlaneSchedule {
        PlaneSchedule {
            axis: self.slice_axis,
            count: self.plane_count,
            range: self.plane_range,
        }
    }
}

/// Evenly spaced planes over the configured range.
pub fn make_plane_schedule(cfg: &DatasetConfig) -> Result<PlaneList> {
    cfg.validate()?;
    Ok(cfg.schedule().planes()?)
}

/// Uniformly scales and translates a mesh so its bounding box is centred in
/// `[0, 1]^3` with the longest side exactly 1.
pub fn normalize_mesh(mesh: &Mesh) -> Result<Mesh, GeometryError> {
    let (lo, hi) = mesh
        .bounds()
        .ok_or_else(|| GeometryError::InvalidInput("cannot normalize an empty mesh".into()))?;
    let extent = (hi - lo).max_element();
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(GeometryError::DegenerateLoop(
            "mesh has zero extent".into(),
        ));
    }
    let center = 0.5 * (lo + hi);
    let scale = 1.0 / extent;
    let half = DVec3::splat(0.5);
    Ok(Mesh {
        vertices: mesh
            .vertices
            .iter()
            .map(|&v| (v - center) * scale + half)
            .collect(),
        faces: mesh.faces.clone(),
    })
}

const VASE_RINGS: usize = 61;
const VASE_SEGMENTS: usize = 48;
const MIN_RADIUS: f64 = 0.05;
const MAX_RADIUS: f64 = 0.45;
const MAX_REACH: f64 = 0.48;

/// A curved handle: a tube along a vertical arc whose ends sit inside the body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandleParams {
    /// Direction around the y axis in radians.
    pub azimuth: f64,
    /// Radial distance of the arc centre from the y axis.
    pub offset: f64,
    pub height: f64,
    pub radius: f64,
    /// Half-angle of the arc in radians.
    pub span: f64,
    pub tube: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaseParams {
    /// Radii at evenly spaced heights from bottom (y = 0) to top (y = 1).
    pub control_radii: Vec<f64>,
    pub handles: Vec<HandleParams>,
}

fn smoothstep(s: f64) -> f64 {
    s * s * (3.0 - 2.0 * s)
}

impl VaseParams {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let k = rng.random_range(4..=8);
        let control_radii = (0..k)
            .map(|_| rng.random_range(MIN_RADIUS..=MAX_RADIUS))
            .collect();
        let mut params = Self {
            control_radii,
            handles: Vec::new(),
        };
        if rng.random_bool(0.5) {
            let count = rng.random_range(1..=2);
            let base = rng.random_range(0.0..2.0 * PI);
            for h in 0..count {
                let azimuth = base + PI * h as f64;
                if let Some(handle) = params.sample_handle(rng, azimuth) {
                    params.handles.push(handle);
                }
            }
        }
        params
    }

    /// Tries a few random arcs and keeps the first whose ends are buried in the
    /// body while its middle protrudes.
    fn sample_handle<R: Rng + ?Sized>(&self, rng: &mut R, azimuth: f64) -> Option<HandleParams> {
        for _ in 0..24 {
            let span = rng.random_range(40f64.to_radians()..80f64.to_radians());
            let radius = rng.random_range(0.1..0.25);
            let tube = rng.random_range(0.02..0.04);
            let half_height = radius * span.sin();
            let (lo, hi) = (0.08 + half_height + tube, 0.92 - half_height - tube);
            if lo >= hi {
                continue;
            }
            let height = rng.random_range(lo..hi);
            let end_r = self
                .radius_at(height - half_height)
                .min(self.radius_at(height + half_height));
            let offset = end_r - tube - 0.015 - radius * span.cos();
            let handle = HandleParams {
                azimuth,
                offset,
                height,
                radius,
                span,
                tube,
            };
            if self.handle_fits(&handle) {
                return Some(handle);
            }
        }
        None
    }

    fn handle_fits(&self, h: &HandleParams) -> bool {
        if h.offset + h.radius + h.tube > MAX_REACH {
            return false;
        }
        // the middle of the arc must clear the body so slices see a second loop
        h.offset + h.radius - h.tube > self.radius_at(h.height) * 1.02 + 0.01
    }

    /// Body radius at height `y` in `[0, 1]`.
    pub fn radius_at(&self, y: f64) -> f64 {
        let r = &self.control_radii;
        if r.len() == 1 {
            return r[0];
        }
        let t = y.clamp(0.0, 1.0) * (r.len() - 1) as f64;
        let k = (t.floor() as usize).min(r.len() - 2);
        let s = smoothstep(t - k as f64);
        (r[k] + (r[k + 1] - r[k]) * s).clamp(MIN_RADIUS, MAX_RADIUS)
    }

    /// Height interval over which handle `index` sits outside the body.
    pub fn handle_heights(&self, index: usize) -> Option<(f64, f64)> {
        let h = self.handles.get(index)?;
        let d = h.radius * h.span.sin();
        Some((h.height - d, h.height + d))
    }
}

/// Surface of revolution about y with optional tube handles. Height spans
/// exactly `[0, 1]`.
pub fn generate_vase(params: &VaseParams) -> Mesh {
    let mut params = params.clone();
    if params.control_radii.is_empty() {
        params.control_radii.push(0.25);
    }
    for r in &mut params.control_radii {
        *r = r.clamp(MIN_RADIUS, MAX_RADIUS);
    }
    let profile: Vec<(f64, f64)> = (0..VASE_RINGS)
        .map(|j| {
            let y = j as f64 / (VASE_RINGS - 1) as f64;
            (y, params.radius_at(y))
        })
        .collect();
    let mut mesh = revolution(&profile, VASE_SEGMENTS);
    for h in &params.handles {
        let u = DVec3::new(h.azimuth.cos(), 0.0, h.azimuth.sin());
        let center = DVec3::new(0.0, h.height, 0.0) + u * h.offset;
        let arc = tube_arc(center, u, DVec3::Y, h.radius, h.span, h.tube.max(1e-3), 24, 12);
        mesh.append(&arc);
    }
    mesh
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SofaParams {
    /// Depth of the seat along z.
    pub depth: f64,
    pub seat_height: f64,
    pub back_height: f64,
    pub back_thickness: f64,
    /// Armrests as `(at_end_x, width, height)`; `at_end_x` selects `x = 1`.
    pub arms: Vec<(bool, f64, f64)>,
    /// Optional chaise extension as `(at_end_x, width, depth)` along −z.
    pub extension: Option<(bool, f64, f64)>,
}

impl SofaParams {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let depth = rng.random_range(0.35..0.55);
        let seat_height = rng.random_range(0.2..0.35);
        let back_height = rng.random_range(seat_height + 0.25..0.8);
        let back_thickness = rng.random_range(0.07..0.14);
        let arm_count = rng.random_range(0..=2usize);
        let arm_sides: &[bool] = match arm_count {
            0 => &[],
            1 => {
                if rng.random_bool(0.5) {
                    &[true]
                } else {
                    &[false]
                }
            }
            _ => &[false, true],
        };
        let arms = arm_sides
            .iter()
            .map(|&side| {
                let width = rng.random_range(0.06..0.14);
                let height = rng.random_range(seat_height + 0.08..back_height - 0.05);
                (side, width, height)
            })
            .collect();
        let extension = rng.random_bool(0.3).then(|| {
            let side = rng.random_bool(0.5);
            (side, rng.random_range(0.25..0.45), rng.random_range(0.2..0.35))
        });
        Self {
            depth,
            seat_height,
            back_height,
            back_thickness,
            arms,
            extension,
        }
    }

    /// Clamps every dimension into a range that keeps x the longest extent and
    /// the boxes non-degenerate.
    pub fn clamped(&self) -> Self {
        let depth = self.depth.clamp(0.2, 0.6);
        let seat_height = self.seat_height.clamp(0.1, 0.4);
        let back_height = self.back_height.clamp(seat_height + 0.1, 0.9);
        let back_thickness = self.back_thickness.clamp(0.03, depth * 0.5);
        let arms = self
            .arms
            .iter()
            .take(2)
            .map(|&(side, w, h)| (side, w.clamp(0.03, 0.2), h.clamp(seat_height + 0.02, back_height)))
            .collect();
        let extension = self
            .extension
            .map(|(side, w, d)| (side, w.clamp(0.1, 0.6), d.clamp(0.05, 0.95 - depth)));
        Self {
            depth,
            seat_height,
            back_height,
            back_thickness,
            arms,
            extension,
        }
    }
}

/// Union of axis-aligned boxes: seat, backrest at +z, armrests at the x ends
/// and an optional extension toward −z. Length along x is exactly 1.
pub fn generate_sofa(params: &SofaParams) -> Mesh {
    let p = params.clamped();
    let mut boxes = vec![
        (DVec3::ZERO, DVec3::new(1.0, p.seat_height, p.depth)),
        (
            DVec3::new(0.0, 0.0, p.depth - p.back_thickness),
            DVec3::new(1.0, p.back_height, p.depth),
        ),
    ];
    for &(side, w, h) in &p.arms {
        let (x0, x1) = if side { (1.0 - w, 1.0) } else { (0.0, w) };
        boxes.push((DVec3::new(x0, 0.0, 0.0), DVec3::new(x1, h, p.depth)));
    }
    if let Some((side, w, d)) = p.extension {
        let (x0, x1) = if side { (1.0 - w, 1.0) } else { (0.0, w) };
        boxes.push((DVec3::new(x0, 0.0, -d), DVec3::new(x1, p.seat_height, 0.0)));
    }
    box_union(&boxes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Vase(VaseParams),
    Sofa(SofaParams),
    Obj { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeRecord {
    pub id: String,
    pub sequence: LoopSequence,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    pub mean_len: f64,
    pub max_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: DatasetConfig,
    pub ids: Vec<String>,
    pub stats: DatasetStats,
    #[serde(default)]
    pub rejected: Vec<Rejection>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SHAPES_DIR: &str = "shapes";

/// Per-shape RNG: one ChaCha stream per shape index under the dataset seed.
pub fn shape_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Slices a (not yet normalized) mesh and encodes it, rejecting open
/// contours, missed planes and over-long sequences.
pub fn mesh_to_sequence(mesh: &Mesh, cfg: &DatasetConfig, planes: &PlaneList) -> Result<LoopSequence, String> {
    let mesh = normalize_mesh(mesh).map_err(|e| e.to_string())?;
    let per_plane =
        slice_mesh(&mesh, planes, cfg.chain_tol, cfg.n_points).map_err(|e| e.to_string())?;
    if let Some(missed) = per_plane.iter().position(|l| l.is_empty()) {
        return Err(format!("plane {missed} does not intersect the shape"));
    }
    let seq = encode_sequence(&per_plane, cfg.slice_axis, planes).map_err(|e| e.to_string())?;
    if seq.len() > cfg.max_seq_len {
        return Err(format!(
            "sequence length {} exceeds max_seq_len {}",
            seq.len(),
            cfg.max_seq_len
        ));
    }
    Ok(seq)
}

struct Candidate {
    id: String,
    provenance: Provenance,
    mesh: std::result::Result<Mesh, String>,
}

fn candidates(cfg: &DatasetConfig) -> Result<Vec<Candidate>> {
    match cfg.category {
        Category::Vase => Ok((0..cfg.num_shapes)
            .into_par_iter()
            .map(|i| {
                let params = VaseParams::sample(&mut shape_rng(cfg.seed, i));
                Candidate {
                    id: format!("vase-{i:05}"),
                    mesh: Ok(generate_vase(&params)),
                    provenance: Provenance::Vase(params),
                }
            })
            .collect()),
        Category::Sofa => Ok((0..cfg.num_shapes)
            .into_par_iter()
            .map(|i| {
                let params = SofaParams::sample(&mut shape_rng(cfg.seed, i));
                Candidate {
                    id: format!("sofa-{i:05}"),
                    mesh: Ok(generate_sofa(&params)),
                    provenance: Provenance::Sofa(params),
                }
            })
            .collect()),
        Category::Custom => {
            let dir = cfg.obj_dir.as_ref().expect("validated");
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj")))
                .collect();
            paths.sort();
            if cfg.num_shapes > 0 {
                paths.truncate(cfg.num_shapes);
            }
            Ok(paths
                .into_par_iter()
                .map(|path| Candidate {
                    id: path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    mesh: read_obj(&path).map_err(|e| e.to_string()),
                    provenance: Provenance::Obj { path },
                })
                .collect())
        }
    }
}

/// Generates (or ingests) shapes, slices and encodes them. Output order follows
/// shape ids regardless of thread scheduling.
pub fn build_records(cfg: &DatasetConfig) -> Result<(Vec<ShapeRecord>, Vec<Rejection>)> {
    let planes = make_plane_schedule(cfg)?;
    let results: Vec<_> = candidates(cfg)?
        .into_par_iter()
        .map(|c| {
            let seq = c.mesh.and_then(|m| mesh_to_sequence(&m, cfg, &planes));
            match seq {
                Ok(sequence) => Ok(ShapeRecord {
                    id: c.id,
                    sequence,
                    provenance: c.provenance,
                }),
                Err(reason) => Err(Rejection { id: c.id, reason }),
            }
        })
        .collect();
    let total = results.len();
    let (mut records, mut rejected) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(rej) => rejected.push(rej),
        }
    }
    if total == 0 || rejected.len() * 2 > total {
        return Err(DatasetError::Quality {
            rejected: rejected.len(),
            total,
            reason: rejected
                .first()
                .map_or_else(|| "no input shapes".into(), |r| r.reason.clone()),
        });
    }
    Ok((records, rejected))
}

pub fn stats(records: &[ShapeRecord]) -> DatasetStats {
    let lens: Vec<usize> = records.iter().map(|r| r.sequence.len()).collect();
    DatasetStats {
        count: lens.len(),
        mean_len: if lens.is_empty() {
            0.0
        } else {
            lens.iter().sum::<usize>() as f64 / lens.len() as f64
        },
        max_len: lens.iter().copied().max().unwrap_or(0),
    }
}

/// Builds the dataset and writes `manifest.json` plus `shapes/<id>.loopseq`
/// under `out_dir`.
pub fn build_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<(Vec<ShapeRecord>, Manifest)> {
    let (records, rejected) = build_records(cfg)?;
    let shapes = out_dir.join(SHAPES_DIR);
    std::fs::create_dir_all(&shapes)?;
    records.par_iter().try_for_each(|r| {
        write_loopseq_file(&r.sequence, shapes.join(format!("{}.loopseq", r.id)))
    })?;
    let manifest = Manifest {
        config: cfg.clone(),
        ids: records.iter().map(|r| r.id.clone()).collect(),
        stats: stats(&records),
        rejected,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(out_dir.join(MANIFEST_FILE), text + "\n")?;
    Ok((records, manifest))
}

/// Reads a dataset directory written by [`build_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<LoopSequence>)> {
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let seqs = manifest
        .ids
        .iter()
        .map(|id| read_loopseq_file(dir.join(SHAPES_DIR).join(format!("{id}.loopseq"))))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((manifest, seqs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_cube() {
        let m = crate::shapes::cuboid(DVec3::splat(-2.0), DVec3::splat(2.0));
        let n = normalize_mesh(&m).unwrap();
        let (lo, hi) = n.bounds().unwrap();
        assert_eq!(lo, DVec3::ZERO);
        assert_eq!(hi, DVec3::ONE);
        let again = normalize_mesh(&n).unwrap();
        for (a, b) in again.vertices.iter().zip(&n.vertices) {
            assert!((*a - *b).abs().max_element() <= 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_flat_points() {
        let m = Mesh::new(vec![DVec3::ONE; 3], vec![[0, 1, 2]]).unwrap();
        assert!(normalize_mesh(&m).is_err());
    }

    #[test]
    fn schedule_spacing() {
        let cfg = DatasetConfig::vase(1, 0);
        let planes = make_plane_schedule(&cfg).unwrap();
        assert_eq!(planes.len(), 40);
        for w in planes.planes().windows(2) {
            assert!(((w[1].origin.y - w[0].origin.y) - 0.025).abs() < 1e-12);
        }
        let mut two = cfg.clone();
        two.plane_count = 2;
        two.plane_range = [0.2, 0.7];
        let planes = make_plane_schedule(&two).unwrap();
        assert_eq!(planes[0].origin.y, 0.2);
        assert_eq!(planes[1].origin.y, 0.7);
        assert_eq!(DatasetConfig::sofa(1, 0).plane_count, 32);
    }

    #[test]
    fn config_validation() {
        let mut cfg = DatasetConfig::vase(1, 0);
        cfg.plane_count = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = DatasetConfig::vase(1, 0);
        cfg.plane_range = [0.5, 0.5];
        assert!(cfg.validate().is_err());
        let mut cfg = DatasetConfig::vase(1, 0);
        cfg.max_seq_len = 10;
        assert!(cfg.validate().is_err());
        let json = serde_json::to_string(&DatasetConfig::vase(3, 9)).unwrap();
        assert!(json.contains("\"N\":32"));
        let back: DatasetConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, DatasetConfig::vase(3, 9));
    }

    #[test]
    fn sampled_handles_satisfy_constraints() {
        let mut with_handles = 0;
        for i in 0..200 {
            let p = VaseParams::sample(&mut shape_rng(11, i));
            assert!((4..=8).contains(&p.control_radii.len()));
            for h in &p.handles {
                with_handles += 1;
                assert!(h.offset + h.radius + h.tube <= MAX_REACH + 1e-12);
                let (lo, hi) = (
                    h.height - h.radius * h.span.sin(),
                    h.height + h.radius * h.span.sin(),
                );
                assert!(lo - h.tube > 0.0 && hi + h.tube < 1.0);
            }
        }
        assert!(with_handles > 30, "only {with_handles} handles in 200 vases");
    }
}
