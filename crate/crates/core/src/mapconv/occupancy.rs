use serde::{Deserialize, Serialize};

use super::{MapError, SdfGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

impl Cell {
    pub fn to_char(self) -> char {
        match self {
            Cell::Free => '.',
            Cell::Occupied => '#',
            Cell::Unknown => '?',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            '.' => Some(Cell::Free),
            '#' => Some(Cell::Occupied),
            '?' => Some(Cell::Unknown),
            _ => None,
        }
    }
}

/// Planar occupancy raster. `origin` is the world XY of cell (0, 0)'s
/// center; cells are stored row-major with `iy` selecting the row.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
}

#[derive(Serialize, Deserialize)]
struct GridFile {
    origin: [f64; 2],
    resolution: f64,
    width: usize,
    height: usize,
    cells: String,
}

impl OccupancyGrid {
    pub fn new(
        origin: [f64; 2],
        resolution: f64,
        width: usize,
        height: usize,
        cells: Vec<Cell>,
    ) -> Result<Self, MapError> {
        if cells.len() != width * height {
            return Err(MapError::InvalidGrid(format!(
                "{} cells for {width}x{height}",
                cells.len()
            )));
        }
        if !(resolution > 0.0 && resolution.is_finite()) || !origin.iter().all(|v| v.is_finite()) {
            return Err(MapError::InvalidGrid("bad origin or resolution".into()));
        }
        Ok(Self {
            origin,
            resolution,
            width,
            height,
            cells,
        })
    }

    pub fn filled(origin: [f64; 2], resolution: f64, width: usize, height: usize, cell: Cell) -> Self {
        Self::new(origin, resolution, width, height, vec![cell; width * height])
            .expect("consistent dimensions")
    }

    /// Parses an ASCII picture, top row first (highest `iy`).
    pub fn from_rows(origin: [f64; 2], resolution: f64, rows: &[&str]) -> Result<Self, MapError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut cells = vec![Cell::Unknown; width * height];
        for (r, row) in rows.iter().enumerate() {
            let iy = height - 1 - r;
            if row.chars().count() != width {
                return Err(MapError::InvalidGrid(format!("row {r} has a different width")));
            }
            for (ix, ch) in row.chars().enumerate() {
                cells[iy * width + ix] = Cell::from_char(ch)
                    .ok_or_else(|| MapError::InvalidGrid(format!("bad cell character {ch:?}")))?;
            }
        }
        Self::new(origin, resolution, width, height, cells)
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn get(&self, ix: usize, iy: usize) -> Cell {
        self.cells[iy * self.width + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, cell: Cell) {
        self.cells[iy * self.width + ix] = cell;
    }

    pub fn in_bounds(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height
    }

    /// Cell containing world point `(x, y)`, if inside the grid.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let ix = ((x - self.origin[0]) / self.resolution).round();
        let iy = ((y - self.origin[1]) / self.resolution).round();
        if !ix.is_finite() || !iy.is_finite() {
            return None;
        }
        self.in_bounds(ix as i64, iy as i64)
            .then_some((ix as usize, iy as usize))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + ix as f64 * self.resolution,
            self.origin[1] + iy as f64 * self.resolution,
        ]
    }

    pub fn cell_at(&self, x: f64, y: f64) -> Cell {
        self.world_to_cell(x, y)
            .map_or(Cell::Unknown, |(ix, iy)| self.get(ix, iy))
    }

    pub fn count(&self, cell: Cell) -> usize {
        self.cells.iter().filter(|c| **c == cell).count()
    }

    pub fn to_json(&self) -> String {
        let file = GridFile {
            origin: self.origin,
            resolution: self.resolution,
            width: self.width,
            height: self.height,
            cells: self.cells.iter().map(|c| c.to_char()).collect(),
        };
        serde_json::to_string(&file).expect("grid serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MapError> {
        let file: GridFile =
            serde_json::from_str(text).map_err(|e| MapError::InvalidGrid(e.to_string()))?;
        let cells = file
            .cells
            .chars()
            .map(|c| Cell::from_char(c).ok_or_else(|| MapError::InvalidGrid(format!("bad cell {c:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(file.origin, file.resolution, file.width, file.height, cells)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceConfig {
    /// World Z of the slice plane (m).
    pub z_height: f64,
    /// Cells whose signed distance is at most this are occupied (m).
    pub occupied_band: f64,
}

impl SliceConfig {
    /// Slice at `z_height` with the band set to one voxel.
    pub fn new(z_height: f64, resolution: f64) -> Self {
        Self {
            z_height,
            occupied_band: resolution,
        }
    }
}

/// Horizontal cut through the SDF at `cfg.z_height`, linearly interpolated
/// between the two nearest voxel layers. The grid keeps the SDF's XY origin
/// and resolution.
pub fn extract_slice(sdf: &SdfGrid, cfg: &SliceConfig) -> Result<OccupancyGrid, MapError> {
    let spec = sdf.spec;
    let [nx, ny, nz] = spec.dims;
    let z_min = spec.origin.z;
    let z_max = z_min + (nz - 1) as f64 * spec.resolution;
    let out_of_range = || MapError::SliceOutOfRange {
        z: cfg.z_height,
        min: z_min,
        max: z_max,
    };
    if !(cfg.occupied_band >= 0.0) {
        return Err(MapError::InvalidGrid(format!("occupied band {}", cfg.occupied_band)));
    }
    let f = (cfg.z_height - z_min) / spec.resolution;
    let eps = 1e-9;
    if !f.is_finite() || f < -eps || f > (nz - 1) as f64 + eps {
        return Err(out_of_range());
    }
    let f = f.clamp(0.0, (nz - 1) as f64);
    let k0 = (f.floor() as usize).min(nz.saturating_sub(2));
    let k1 = (k0 + 1).min(nz - 1);
    let w = f - k0 as f64;

    let mut cells = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let lo = sdf.get(ix, iy, k0);
            let v = if k1 == k0 {
                lo
            } else {
                (1.0 - w) * lo + w * sdf.get(ix, iy, k1)
            };
            cells.push(if !v.is_finite() {
                Cell::Unknown
            } else if v <= cfg.occupied_band {
                Cell::Occupied
            } else {
                Cell::Free
            });
        }
    }
    OccupancyGrid::new([spec.origin.x, spec.origin.y], spec.resolution, nx, ny, cells)
}
