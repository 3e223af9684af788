use std::collections::VecDeque;

use crate::geometry::Vec3;

use super::{DistanceGrid, GridSpec};

/// Signed distance samples: positive outside, negative inside.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl SdfGrid {
    pub fn origin(&self) -> Vec3 {
        self.spec.origin
    }

    pub fn resolution(&self) -> f64 {
        self.spec.resolution
    }

    pub fn dims(&self) -> [usize; 3] {
        self.spec.dims
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.spec.index(ix, iy, iz)]
    }

    pub fn inside_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_sign_negative()).count()
    }
}

/// Labels voxels by flood fill from the lattice boundary.
///
/// A voxel is outside when it connects to the boundary through 6-adjacent
/// voxels whose unsigned distance exceeds half a voxel; everything else is
/// inside. Magnitudes are kept, only the sign changes.
pub fn sign_by_flood_fill(distances: &DistanceGrid) -> SdfGrid {
    let spec = distances.spec;
    let [nx, ny, nz] = spec.dims;
    let blocked = spec.resolution / 2.0;
    let passable = |idx: usize| distances.values[idx] > blocked;

    let mut outside = vec![false; spec.len()];
    let mut queue = VecDeque::new();
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let on_boundary =
                    ix == 0 || iy == 0 || iz == 0 || ix == nx - 1 || iy == ny - 1 || iz == nz - 1;
                let idx = spec.index(ix, iy, iz);
                if on_boundary && passable(idx) {
                    outside[idx] = true;
                    queue.push_back(idx);
                }
            }
        }
    }

    while let Some(idx) = queue.pop_front() {
        let [ix, iy, iz] = spec.coords(idx);
        let mut visit = |jx: usize, jy: usize, jz: usize| {
            let j = spec.index(jx, jy, jz);
            if !outside[j] && passable(j) {
                outside[j] = true;
                queue.push_back(j);
            }
        };
        if ix > 0 {
            visit(ix - 1, iy, iz);
        }
        if ix + 1 < nx {
            visit(ix + 1, iy, iz);
        }
        if iy > 0 {
            visit(ix, iy - 1, iz);
        }
        if iy + 1 < ny {
            visit(ix, iy + 1, iz);
        }
        if iz > 0 {
            visit(ix, iy, iz - 1);
        }
        if iz + 1 < nz {
            visit(ix, iy, iz + 1);
        }
    }

    let values = distances
        .values
        .iter()
        .zip(&outside)
        .map(|(&d, &out)| if out { d } else { -d })
        .collect();
    SdfGrid { spec, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapconv::{shapes::box_mesh, unsigned_distance, TriangleMesh};

    #[test]
    fn hollow_box_encloses_center() {
        // 5³ lattice with a 3³ shell of surface voxels around the center.
        let spec = GridSpec::new(Vec3::zeros(), 1.0, [5, 5, 5]).unwrap();
        let mut values = vec![1.0; spec.len()];
        for iz in 1..4 {
            for iy in 1..4 {
                for ix in 1..4 {
                    values[spec.index(ix, iy, iz)] = if (ix, iy, iz) == (2, 2, 2) { 1.0 } else { 0.0 };
                }
            }
        }
        let sdf = sign_by_flood_fill(&DistanceGrid { spec, values });
        assert_eq!(sdf.get(2, 2, 2), -1.0);
        assert_eq!(sdf.get(0, 0, 0), 1.0);
        assert_eq!(sdf.inside_count(), 27);
    }

    #[test]
    fn diagonal_gaps_do_not_leak() {
        // Shell voxels only touch diagonally at one corner: still sealed under
        // 6-connectivity.
        let spec = GridSpec::new(Vec3::zeros(), 1.0, [5, 5, 5]).unwrap();
        let mut values = vec![1.0; spec.len()];
        for iz in 1..4 {
            for iy in 1..4 {
                for ix in 1..4 {
                    if (ix, iy, iz) != (2, 2, 2) {
                        values[spec.index(ix, iy, iz)] = 0.0;
                    }
                }
            }
        }
        values[spec.index(1, 1, 1)] = 1.0;
        let sdf = sign_by_flood_fill(&DistanceGrid { spec, values });
        assert!(sdf.get(1, 1, 1) > 0.0);
        assert!(sdf.get(2, 2, 2) < 0.0);
    }

    #[test]
    fn open_triangle_has_no_interior() {
        let tri = TriangleMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap()
        .mesh;
        let spec = GridSpec::covering(Vec3::zeros(), Vec3::new(1.0, 1.0, 0.0), 0.1, 2).unwrap();
        let d = unsigned_distance(&tri, &spec).unwrap();
        let sdf = sign_by_flood_fill(&d);
        for (s, u) in sdf.values.iter().zip(&d.values) {
            assert_eq!(s.is_sign_negative(), *u <= 0.05, "{s} {u}");
            assert_eq!(s.abs(), *u);
        }
    }

    #[test]
    fn cube_interior_is_negative() {
        let cube = box_mesh(Vec3::repeat(-0.5), Vec3::repeat(0.5));
        let spec = GridSpec::covering(Vec3::repeat(-0.5), Vec3::repeat(0.5), 0.1, 1).unwrap();
        let sdf = sign_by_flood_fill(&unsigned_distance(&cube, &spec).unwrap());
        // Centers -0.5, -0.4, .., 0.5 lie in the closed cube: eleven per axis.
        assert_eq!(sdf.inside_count(), 1331);
        assert!(sdf.get(6, 6, 6) < 0.0);
        assert!(sdf.get(0, 6, 6) > 0.0);
    }
}
