use std::path::Path;

use crate::geometry::Vec3;

use super::MapError;

/// Triangles with area at or below this are dropped on load (m²).
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(Self::Obj),
            "ply" => Some(Self::Ply),
            _ => None,
        }
    }
}

/// An indexed triangle soup with finite coordinates, in-range indices and
/// no zero-area faces.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedMesh {
    pub mesh: TriangleMesh,
    pub dropped_faces: usize,
}

impl TriangleMesh {
    /// Validates the raw arrays, dropping degenerate faces.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<LoadedMesh, MapError> {
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(MapError::InvalidMesh("non-finite vertex".into()));
        }
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(MapError::InvalidMesh(format!("index out of range in {t:?}")));
        }
        let before = triangles.len();
        let triangles: Vec<_> = triangles
            .into_iter()
            .filter(|t| triangle_area(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]) > DEGENERATE_AREA)
            .collect();
        Ok(LoadedMesh {
            dropped_faces: before - triangles.len(),
            mesh: Self { vertices, triangles },
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Axis-aligned bounds of the referenced vertices.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut it = self.triangles.iter().flatten().map(|&i| self.vertices[i]);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.inf(&v), hi.sup(&v))))
    }

    /// Concatenates meshes; components stay disconnected.
    pub fn merge(parts: &[TriangleMesh]) -> TriangleMesh {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for p in parts {
            let base = vertices.len();
            vertices.extend_from_slice(&p.vertices);
            triangles.extend(p.triangles.iter().map(|t| t.map(|i| i + base)));
        }
        TriangleMesh { vertices, triangles }
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
        }
        for t in &self.triangles {
            out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        out
    }
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

pub fn load_mesh(bytes: &[u8], format: MeshFormat) -> Result<LoadedMesh, MapError> {
    let text = std::str::from_utf8(bytes).map_err(|e| MapError::ParseError {
        line: 0,
        message: format!("not UTF-8 text: {e}"),
    })?;
    match format {
        MeshFormat::Obj => parse_obj(text),
        MeshFormat::Ply => parse_ply(text),
    }
}

pub fn load_mesh_file(path: &Path) -> Result<LoadedMesh, MapError> {
    let format = MeshFormat::from_path(path).ok_or_else(|| MapError::ParseError {
        line: 0,
        message: format!("{}: unknown mesh extension (expected .obj or .ply)", path.display()),
    })?;
    let bytes = std::fs::read(path).map_err(|e| MapError::Io(format!("{}: {e}", path.display())))?;
    load_mesh(&bytes, format)
}

fn parse_error(line: usize, message: impl Into<String>) -> MapError {
    MapError::ParseError {
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, MapError> {
    tok.parse::<f64>()
        .map_err(|_| parse_error(line, format!("bad number {tok:?}")))
}

fn parse_obj(text: &str) -> Result<LoadedMesh, MapError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let coords: Vec<&str> = toks.collect();
                if coords.len() < 3 {
                    return Err(parse_error(line, "vertex needs 3 coordinates"));
                }
                vertices.push(Vec3::new(
                    parse_f64(coords[0], line)?,
                    parse_f64(coords[1], line)?,
                    parse_f64(coords[2], line)?,
                ));
            }
            Some("f") => {
                let refs: Vec<&str> = toks.collect();
                if refs.len() != 3 {
                    return Err(MapError::NonTriangleFace {
                        line,
                        vertices: refs.len(),
                    });
                }
                let mut tri = [0usize; 3];
                for (slot, r) in tri.iter_mut().zip(&refs) {
                    let idx_tok = r.split('/').next().unwrap_or("");
                    let idx: i64 = idx_tok
                        .parse()
                        .map_err(|_| parse_error(line, format!("bad face index {r:?}")))?;
                    // OBJ is 1-based; negative indices count back from the end.
                    let resolved = if idx > 0 {
                        idx - 1
                    } else {
                        vertices.len() as i64 + idx
                    };
                    if idx == 0 || resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(parse_error(line, format!("face index {idx} out of range")));
                    }
                    *slot = resolved as usize;
                }
                faces.push(tri);
            }
            // vt, vn, o, g, s, usemtl, mtllib, blank lines
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

enum PlyProp {
    Scalar(String),
    List(String),
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProp>,
}

fn parse_ply(text: &str) -> Result<LoadedMesh, MapError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_error(1, "missing 'ply' magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let (line, l) = lines
            .next()
            .ok_or_else(|| parse_error(0, "unterminated PLY header"))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(parse_error(line, format!("unsupported PLY format {other}")))
            }
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_error(line, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", _, _, name] => elements
                .last_mut()
                .ok_or_else(|| parse_error(line, "property before element"))?
                .props
                .push(PlyProp::List(name.to_string())),
            ["property", _, name] => elements
                .last_mut()
                .ok_or_else(|| parse_error(line, "property before element"))?
                .props
                .push(PlyProp::Scalar(name.to_string())),
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(parse_error(line, format!("unexpected header line {l:?}"))),
        }
    }

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let (line, l) = lines
                .next()
                .ok_or_else(|| parse_error(0, format!("missing {} records", el.name)))?;
            let toks: Vec<&str> = l.split_whitespace().collect();
            let mut pos = 0;
            let mut xyz = [None; 3];
            for prop in &el.props {
                match prop {
                    PlyProp::Scalar(name) => {
                        let tok = toks.get(pos).ok_or_else(|| parse_error(line, "too few values"))?;
                        pos += 1;
                        if el.name == "vertex" {
                            let slot = match name.as_str() {
                                "x" => Some(0),
                                "y" => Some(1),
                                "z" => Some(2),
                                _ => None,
                            };
                            if let Some(s) = slot {
                                xyz[s] = Some(parse_f64(tok, line)?);
                            }
                        }
                    }
                    PlyProp::List(name) => {
                        let n: usize = toks
                            .get(pos)
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| parse_error(line, "bad list length"))?;
                        let items = toks
                            .get(pos + 1..pos + 1 + n)
                            .ok_or_else(|| parse_error(line, "too few list values"))?;
                        pos += 1 + n;
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            if n != 3 {
                                return Err(MapError::NonTriangleFace { line, vertices: n });
                            }
                            let mut tri = [0usize; 3];
                            for (slot, tok) in tri.iter_mut().zip(items) {
                                *slot = tok
                                    .parse()
                                    .map_err(|_| parse_error(line, format!("bad index {tok:?}")))?;
                            }
                            faces.push((line, tri));
                        }
                    }
                }
            }
            if el.name == "vertex" {
                match xyz {
                    [Some(x), Some(y), Some(z)] => vertices.push(Vec3::new(x, y, z)),
                    _ => return Err(parse_error(line, "vertex without x/y/z")),
                }
            }
        }
    }
    if let Some((line, _)) = faces.iter().find(|(_, t)| t.iter().any(|&i| i >= vertices.len())) {
        return Err(parse_error(*line, "face index out of range"));
    }
    TriangleMesh::new(vertices, faces.into_iter().map(|(_, t)| t).collect())
}
