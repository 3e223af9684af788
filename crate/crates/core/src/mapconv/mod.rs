//! Mesh to shared-map conversion.
//!
//! A triangle mesh of the environment becomes an unsigned distance field
//! (exact point-to-triangle distances through a BVH), gets its sign from a
//! flood fill that seals the interior, and is finally cut horizontally into
//! an occupancy grid. The grid keeps the mesh frame's X-Y origin, so a 2D
//! coordinate means the same place in both.

mod distance;
mod mesh;
mod occupancy;
mod sdf;
pub mod shapes;

use thiserror::Error;

pub use distance::{point_triangle_distance_sq, unsigned_distance, DistanceGrid, GridSpec, TriangleBvh};
pub use mesh::{load_mesh, load_mesh_file, triangle_area, LoadedMesh, MeshFormat, TriangleMesh, DEGENERATE_AREA};
pub use occupancy::{extract_slice, Cell, OccupancyGrid, SliceConfig};
pub use sdf::{sign_by_flood_fill, SdfGrid};

pub const DEFAULT_RESOLUTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("ParseError at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("ParseError at line {line}: NonTriangleFace with {vertices} vertices")]
    NonTriangleFace { line: usize, vertices: usize },
    #[error("EmptyMesh: no non-degenerate triangles")]
    EmptyMesh,
    #[error("InvalidMesh: {0}")]
    InvalidMesh(String),
    #[error("InvalidGrid: {0}")]
    InvalidGrid(String),
    #[error("SliceOutOfRange: z = {z} outside [{min}, {max}]")]
    SliceOutOfRange { z: f64, min: f64, max: f64 },
    #[error("Io: {0}")]
    Io(String),
}

/// Full pipeline on a lattice that covers the mesh with a one-voxel margin.
pub fn build_sdf(mesh: &TriangleMesh, resolution: f64) -> Result<SdfGrid, MapError> {
    let (lo, hi) = mesh.bounds().ok_or(MapError::EmptyMesh)?;
    let spec = GridSpec::covering(lo, hi, resolution, 1)?;
    Ok(sign_by_flood_fill(&unsigned_distance(mesh, &spec)?))
}

pub fn convert(mesh: &TriangleMesh, resolution: f64, slice: &SliceConfig) -> Result<OccupancyGrid, MapError> {
    extract_slice(&build_sdf(mesh, resolution)?, slice)
}
