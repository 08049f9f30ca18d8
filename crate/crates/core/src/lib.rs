//! Geometry and data plumbing for loop-based shape modelling.
//!
//! Shapes are represented as ordered sequences of planar cross-sectional
//! loops. This crate covers everything around the neural model:
//!
//! - [`geometry`]: slicing meshes into canonical, resampled loops
//! - [`sequence`]: the token sequence with level-up flags and its file format
//! - [`synthetic`]: procedural vase/sofa datasets and OBJ ingestion
//! - [`recon`]: oriented point clouds, PLY export and Chamfer distance

pub mod geometry;
pub mod recon;
pub mod sequence;
pub mod shapes;
pub mod synthetic;

pub use geometry::{Axis, GeometryError, Loop, Mesh, PlaneList, PlaneSchedule, SlicePlane};
pub use sequence::{LoopSequence, LoopToken, SequenceError};
