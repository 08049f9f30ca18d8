//! Flat token sequences of loops with level-up flags.
//!
//! Every loop becomes one token: `2N` in-plane coordinates followed by a
//! binary flag that is set when the loop is the first one on a new plane.
//! Walking the flags from a "no plane" state recovers the plane of every loop.

use crate::geometry::{plane_basis, signed_area, Axis, Loop, PlaneList};
use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::io::{BufRead, Write};

/// Version written in every `.loopseq` header.
pub const LOOPSEQ_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SequenceError {
    #[error("shape has no loops on any plane")]
    EmptyShape,
    #[error("{loops} planes of loops given but only {planes} planes exist")]
    TooManyPlanes { loops: usize, planes: usize },
    #[error("token {index} has level-up flag 0 before any plane was introduced")]
    OrphanLoop { index: usize },
    #[error("token {index} introduces plane {plane} but only {planes} planes exist")]
    PlaneOverflow {
        index: usize,
        plane: usize,
        planes: usize,
    },
    #[error("expected {expected} values, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("sequence has {len} tokens, more than the maximum {max}")]
    TooLong { len: usize, max: usize },
    #[error("token {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("unsupported .loopseq version {found} (expected {LOOPSEQ_VERSION})")]
    Version { found: u32 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SequenceError> = std::result::Result<T, E>;

/// One time step: a loop's coordinates plus its level-up flag.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopToken {
    /// `[x_1, y_1, ..., x_N, y_N]` in the owning plane's frame.
    pub coords: Vec<f64>,
    pub level_up: bool,
}

impl LoopToken {
    pub fn new(lp: &Loop, level_up: bool) -> Self {
        Self {
            coords: lp.points.iter().flat_map(|p| [p.x, p.y]).collect(),
            level_up,
        }
    }

    /// The end-of-sequence marker: all coordinates zero, flag set.
    pub fn eos(n_points: usize) -> Self {
        Self {
            coords: vec![0.0; 2 * n_points],
            level_up: true,
        }
    }

    pub fn n_points(&self) -> usize {
        self.coords.len() / 2
    }

    pub fn to_loop(&self) -> Loop {
        Loop::new(
            self.coords
                .chunks_exact(2)
                .map(|c| DVec2::new(c[0], c[1]))
                .collect(),
        )
    }

    /// Packed `2N + 1` vector with the flag as the last entry.
    pub fn pack(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.coords.len() + 1);
        v.extend_from_slice(&self.coords);
        v.push(if self.level_up { 1.0 } else { 0.0 });
        v
    }

    pub fn max_abs_coord(&self) -> f64 {
        self.coords.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

pub fn token_pack(lp: &Loop, level_up: bool) -> Vec<f64> {
    LoopToken::new(lp, level_up).pack()
}

/// Inverse of [`token_pack`]; the flag entry is binarized at 0.5.
pub fn token_unpack(v: &[f64], n_points: usize) -> Result<(Loop, bool)> {
    let expected = 2 * n_points + 1;
    if v.len() != expected {
        return Err(SequenceError::Shape {
            expected,
            actual: v.len(),
        });
    }
    let token = LoopToken {
        coords: v[..2 * n_points].to_vec(),
        level_up: v[2 * n_points] >= 0.5,
    };
    Ok((token.to_loop(), token.level_up))
}

/// The ordered tokens of one shape together with the planes they live on.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopSequence {
    pub n_points: usize,
    pub axis: Axis,
    pub planes: PlaneList,
    pub tokens: Vec<LoopToken>,
}

impl LoopSequence {
    pub fn new(n_points: usize, axis: Axis, planes: PlaneList) -> Self {
        Self {
            n_points,
            axis,
            planes,
            tokens: Vec::new(),
        }
    }

    pub fn plane_count(&self) -> usize {
        self.planes.len()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn level_ups(&self) -> usize {
        self.tokens.iter().filter(|t| t.level_up).count()
    }

    pub fn token_dim(&self) -> usize {
        2 * self.n_points + 1
    }

    /// Checks the structural invariants; `max_len` bounds the token count.
    pub fn validate(&self, max_len: Option<usize>) -> Result<()> {
        if let Some(max) = max_len {
            if self.tokens.len() > max {
                return Err(SequenceError::TooLong {
                    len: self.tokens.len(),
                    max,
                });
            }
        }
        for (index, t) in self.tokens.iter().enumerate() {
            if t.coords.len() != 2 * self.n_points {
                return Err(SequenceError::Shape {
                    expected: 2 * self.n_points,
                    actual: t.coords.len(),
                });
            }
            if t.coords.iter().any(|c| !c.is_finite()) {
                return Err(SequenceError::NonFinite { index });
            }
        }
        assign_planes(
            &self.tokens.iter().map(|t| t.level_up).collect::<Vec<_>>(),
            self.plane_count(),
        )?;
        Ok(())
    }

    /// Plane index of every token.
    pub fn plane_indices(&self) -> Result<Vec<usize>> {
        assign_planes(
            &self.tokens.iter().map(|t| t.level_up).collect::<Vec<_>>(),
            self.plane_count(),
        )
    }

    /// All loop vertices lifted into world space.
    pub fn world_points(&self) -> Result<Vec<DVec3>> {
        let planes = self.plane_indices()?;
        Ok(self
            .tokens
            .iter()
            .zip(planes)
            .flat_map(|(t, p)| t.to_loop().to_world(&self.planes[p]))
            .collect())
    }
}

/// Walks level-up flags from the "no plane" state and returns the plane index
/// of each token.
pub fn assign_planes(flags: &[bool], plane_count: usize) -> Result<Vec<usize>> {
    let mut current: Option<usize> = None;
    flags
        .iter()
        .enumerate()
        .map(|(index, &up)| {
            if up {
                let next = current.map_or(0, |c| c + 1);
                if next >= plane_count {
                    return Err(SequenceError::PlaneOverflow {
                        index,
                        plane: next,
                        planes: plane_count,
                    });
                }
                current = Some(next);
            }
            current.ok_or(SequenceError::OrphanLoop { index })
        })
        .collect()
}

fn within_plane_order(a: &Loop, b: &Loop) -> Ordering {
    let (aa, ab) = (signed_area(&a.points).abs(), signed_area(&b.points).abs());
    ab.total_cmp(&aa).then_with(|| {
        let (pa, pb) = (a.points.first(), b.points.first());
        match (pa, pb) {
            (Some(pa), Some(pb)) => pa.x.total_cmp(&pb.x).then(pa.y.total_cmp(&pb.y)),
            _ => a.points.len().cmp(&b.points.len()),
        }
    })
}

/// Flattens per-plane loops into a token sequence.
///
/// Within a plane, loops are ordered by descending absolute area (ties by
/// start vertex); the first carries the level-up flag. Empty planes emit
/// nothing.
pub fn encode_sequence(
    per_plane_loops: &[Vec<Loop>],
    axis: Axis,
    planes: &PlaneList,
) -> Result<LoopSequence> {
    if per_plane_loops.len() > planes.len() {
        return Err(SequenceError::TooManyPlanes {
            loops: per_plane_loops.len(),
            planes: planes.len(),
        });
    }
    let n_points = per_plane_loops
        .iter()
        .flatten()
        .map(|l| l.len())
        .next()
        .ok_or(SequenceError::EmptyShape)?;
    let mut seq = LoopSequence::new(n_points, axis, planes.clone());
    for loops in per_plane_loops {
        let mut ordered: Vec<&Loop> = loops.iter().collect();
        ordered.sort_by(|a, b| within_plane_order(a, b));
        for (k, lp) in ordered.into_iter().enumerate() {
            if lp.len() != n_points {
                return Err(SequenceError::Shape {
                    expected: n_points,
                    actual: lp.len(),
                });
            }
            seq.tokens.push(LoopToken::new(lp, k == 0));
        }
    }
    Ok(seq)
}

/// Recovers the loops on each plane. Only nonempty planes receive loops, in
/// order of appearance, so re-encoding a decoded sequence needs the same
/// plane skipping as the original (see [`decode_sequence_by_plane`]).
pub fn decode_sequence(seq: &LoopSequence) -> Result<Vec<Vec<Loop>>> {
    let planes = seq.plane_indices()?;
    let mut out = vec![Vec::new(); seq.plane_count()];
    for (t, p) in seq.tokens.iter().zip(planes) {
        out[p].push(t.to_loop());
    }
    Ok(out)
}

/// Same as [`decode_sequence`] but returns `(plane_index, loops)` only for
/// occupied planes.
pub fn decode_sequence_by_plane(seq: &LoopSequence) -> Result<Vec<(usize, Vec<Loop>)>> {
    Ok(decode_sequence(seq)?
        .into_iter()
        .enumerate()
        .filter(|(_, loops)| !loops.is_empty())
        .collect())
}

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    version: u32,
    #[serde(rename = "N")]
    n: usize,
    plane_count: usize,
    axis: Axis,
    plane_origins: Vec<[f64; 3]>,
    plane_normal: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct TokenRecord {
    coords: Vec<f64>,
    level_up: u8,
}

/// Writes the newline-delimited JSON `.loopseq` form.
pub fn write_loopseq<W: Write>(seq: &LoopSequence, mut out: W) -> Result<()> {
    let header = HeaderRecord {
        version: LOOPSEQ_VERSION,
        n: seq.n_points,
        plane_count: seq.plane_count(),
        axis: seq.axis,
        plane_origins: seq.planes.iter().map(|p| p.origin.to_array()).collect(),
        plane_normal: seq.planes.normal().to_array(),
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for (index, t) in seq.tokens.iter().enumerate() {
        if t.coords.iter().any(|c| !c.is_finite()) {
            return Err(SequenceError::NonFinite { index });
        }
        let rec = TokenRecord {
            coords: t.coords.clone(),
            level_up: t.level_up as u8,
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_loopseq_string(seq: &LoopSequence) -> Result<String> {
    let mut buf = Vec::new();
    write_loopseq(seq, &mut buf)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

fn parse_err(line: usize, message: impl ToString) -> SequenceError {
    SequenceError::Parse {
        line,
        message: message.to_string(),
    }
}

/// Reads a `.loopseq` stream. Errors carry 1-based line numbers.
pub fn read_loopseq<R: BufRead>(input: R) -> Result<LoopSequence> {
    let mut lines = input.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header record"))?;
    let first = first?;
    let header: HeaderRecord = serde_json::from_str(&first).map_err(|e| parse_err(1, e))?;
    if header.version != LOOPSEQ_VERSION {
        return Err(SequenceError::Version {
            found: header.version,
        });
    }
    if header.n < 3 {
        return Err(parse_err(1, format!("N must be at least 3, got {}", header.n)));
    }
    if header.plane_origins.len() != header.plane_count {
        return Err(parse_err(
            1,
            format!(
                "plane_count {} disagrees with {} plane origins",
                header.plane_count,
                header.plane_origins.len()
            ),
        ));
    }
    let normal = DVec3::from_array(header.plane_normal);
    let planes = header
        .plane_origins
        .iter()
        .map(|o| plane_basis(normal, DVec3::from_array(*o)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .and_then(PlaneList::new)
        .map_err(|e| parse_err(1, e))?;
    let mut seq = LoopSequence::new(header.n, header.axis, planes);

    for (i, line) in lines {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TokenRecord = serde_json::from_str(&line).map_err(|e| parse_err(line_no, e))?;
        if rec.coords.len() != 2 * header.n {
            return Err(parse_err(
                line_no,
                format!("expected {} coordinates, got {}", 2 * header.n, rec.coords.len()),
            ));
        }
        if rec.level_up > 1 {
            return Err(parse_err(line_no, "level_up must be 0 or 1"));
        }
        seq.tokens.push(LoopToken {
            coords: rec.coords,
            level_up: rec.level_up == 1,
        });
    }
    Ok(seq)
}

pub fn from_loopseq_str(text: &str) -> Result<LoopSequence> {
    read_loopseq(text.as_bytes())
}

pub fn read_loopseq_file(path: impl AsRef<std::path::Path>) -> Result<LoopSequence> {
    let file = std::fs::File::open(path)?;
    read_loopseq(std::io::BufReader::new(file))
}

pub fn write_loopseq_file(seq: &LoopSequence, path: impl AsRef<std::path::Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_loopseq(seq, &mut w)?;
    w.flush()?;
    Ok(())
}
