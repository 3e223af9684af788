use rayon::prelude::*;

use crate::geometry::Vec3;

use super::{MapError, TriangleMesh};

/// Regular voxel lattice. `origin` is the center of voxel (0, 0, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Vec3,
    pub resolution: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: Vec3, resolution: f64, dims: [usize; 3]) -> Result<Self, MapError> {
        if !(resolution > 0.0 && resolution.is_finite()) || dims.contains(&0) {
            return Err(MapError::InvalidGrid(format!(
                "resolution {resolution}, dims {dims:?}"
            )));
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(MapError::InvalidGrid("non-finite origin".into()));
        }
        Ok(Self {
            origin,
            resolution,
            dims,
        })
    }

    /// Smallest lattice whose voxel centers cover `[lo, hi]` plus `margin`
    /// voxels on every side. Voxel `margin` along each axis sits on `lo`.
    pub fn covering(lo: Vec3, hi: Vec3, resolution: f64, margin: usize) -> Result<Self, MapError> {
        let mut dims = [0usize; 3];
        for k in 0..3 {
            let span = ((hi[k] - lo[k]) / resolution - 1e-9).ceil().max(0.0) as usize;
            dims[k] = span + 1 + 2 * margin;
        }
        Self::new(lo - Vec3::repeat(margin as f64 * resolution), resolution, dims)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index, x fastest.
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let ix = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [ix, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        self.origin + Vec3::new(ix as f64, iy as f64, iz as f64) * self.resolution
    }

    /// Whether every voxel center within `margin` voxels of the lattice
    /// boundary lies outside the box `[lo, hi]` grown by `margin` voxels.
    pub fn covers_with_margin(&self, lo: &Vec3, hi: &Vec3, margin: usize) -> bool {
        let pad = margin as f64 * self.resolution - 1e-9;
        (0..3).all(|k| {
            let last = self.origin[k] + (self.dims[k] - 1) as f64 * self.resolution;
            self.origin[k] <= lo[k] - pad && last >= hi[k] + pad
        })
    }
}

/// Unsigned distance samples on a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl DistanceGrid {
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.spec.index(ix, iy, iz)]
    }
}

/// Squared distance from `p` to triangle `abc`, by Voronoi-region
/// classification of the closest point.
pub fn point_triangle_distance_sq(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm_squared();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm_squared();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm_squared();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm_squared();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm_squared();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm_squared();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm_squared()
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            lo: self.lo.inf(&o.lo),
            hi: self.hi.sup(&o.hi),
        }
    }

    fn distance_sq(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.lo[k] {
                self.lo[k] - p[k]
            } else if p[k] > self.hi[k] {
                p[k] - self.hi[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

enum Node {
    Leaf { bounds: Aabb, first: usize, count: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_SIZE: usize = 4;

/// Bounding-volume hierarchy over a mesh's triangles for exact nearest
/// surface queries.
pub struct TriangleBvh {
    tris: Vec<[Vec3; 3]>,
    nodes: Vec<Node>,
}

impl TriangleBvh {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let mut tris: Vec<[Vec3; 3]> = (0..mesh.triangles().len()).map(|i| mesh.triangle(i)).collect();
        let mut nodes = Vec::new();
        if !tris.is_empty() {
            let n = tris.len();
            Self::build_range(&mut tris, 0, n, &mut nodes);
        }
        Self { tris, nodes }
    }

    fn tri_bounds(t: &[Vec3; 3]) -> Aabb {
        let mut b = Aabb::empty();
        t.iter().for_each(|v| b.grow(v));
        b
    }

    fn build_range(tris: &mut [[Vec3; 3]], first: usize, count: usize, nodes: &mut Vec<Node>) -> usize {
        let slice = &mut tris[first..first + count];
        let bounds = slice
            .iter()
            .map(Self::tri_bounds)
            .fold(Aabb::empty(), |acc, b| acc.union(&b));
        let me = nodes.len();
        if count <= LEAF_SIZE {
            nodes.push(Node::Leaf { bounds, first, count });
            return me;
        }
        let centroid = |t: &[Vec3; 3]| (t[0] + t[1] + t[2]) / 3.0;
        let mut cb = Aabb::empty();
        slice.iter().for_each(|t| cb.grow(&centroid(t)));
        let extent = cb.hi - cb.lo;
        let axis = extent.imax();
        let mid = count / 2;
        slice.select_nth_unstable_by(mid, |a, b| {
            centroid(a)[axis].total_cmp(&centroid(b)[axis])
        });
        // Placeholder, patched once the children exist.
        nodes.push(Node::Leaf { bounds, first, count });
        let left = Self::build_range(tris, first, mid, nodes);
        let right = Self::build_range(tris, first + mid, count - mid, nodes);
        nodes[me] = Node::Inner { bounds, left, right };
        me
    }

    /// Exact distance from `p` to the closest triangle.
    pub fn distance(&self, p: &Vec3) -> f64 {
        if self.nodes.is_empty() {
            return f64::INFINITY;
        }
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().distance_sq(p) >= best {
                continue;
            }
            match *node {
                Node::Leaf { first, count, .. } => {
                    for t in &self.tris[first..first + count] {
                        best = best.min(point_triangle_distance_sq(p, &t[0], &t[1], &t[2]));
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().distance_sq(p);
                    let dr = self.nodes[right].bounds().distance_sq(p);
                    // Nearer child on top of the stack.
                    if dl < dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best.sqrt()
    }
}

/// Exact unsigned distance from every voxel center to the mesh surface.
///
/// Voxels are evaluated in parallel; each value depends only on its own
/// center, so the result does not depend on the worker count.
pub fn unsigned_distance(mesh: &TriangleMesh, spec: &GridSpec) -> Result<DistanceGrid, MapError> {
    if mesh.is_empty() {
        return Err(MapError::EmptyMesh);
    }
    let bvh = TriangleBvh::build(mesh);
    let values = (0..spec.len())
        .into_par_iter()
        .map(|idx| {
            let [ix, iy, iz] = spec.coords(idx);
            bvh.distance(&spec.center(ix, iy, iz))
        })
        .collect();
    Ok(DistanceGrid { spec: *spec, values })
}
