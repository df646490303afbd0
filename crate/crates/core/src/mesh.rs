//! Conforming tetrahedral meshes of axis-aligned boxes.
//!
//! Each hexahedral cell is split into six tetrahedra sharing the cell's main
//! diagonal (Kuhn split). All cells use the same orientation, so faces of
//! neighboring cells carry matching diagonals and the mesh is conforming, and
//! uniform refinement simply rebuilds with doubled cell counts. A plain-text
//! import path is provided for externally generated meshes.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("degenerate box: bounds must be nondegenerate and cell counts >= 1")]
    DegenerateBox,
    #[error("tetrahedron {0} has nonpositive volume")]
    DegenerateTet(usize),
    #[error("face shared by more than two tetrahedra; mesh is not conforming")]
    NonConforming,
    #[error("uniform refinement requires a box-generated mesh")]
    RefineUnsupported,
    #[error("mesh io: {0}")]
    Io(#[from] std::io::Error),
    #[error("mesh parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Provenance of a structured box mesh, kept for refinement and fast point
/// location.
#[derive(Debug, Clone, Copy)]
pub struct BoxInfo {
    /// `[[xmin, xmax], [ymin, ymax], [zmin, zmax]]`
    pub bounds: [[f64; 2]; 3],
    pub cells: [usize; 3],
}

/// Oriented triangular face on the domain boundary.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryFace {
    /// Owning tetrahedron.
    pub tet: usize,
    /// Local index of the opposite vertex within the owning tetrahedron.
    pub local_face: usize,
    /// Global vertex indices of the face corners.
    pub vertices: [usize; 3],
    /// Outward unit normal.
    pub normal: [f64; 3],
    pub area: f64,
}

#[derive(Debug, Clone)]
pub struct TetMesh {
    pub vertices: Vec<[f64; 3]>,
    pub tets: Vec<[usize; 4]>,
    pub boundary_faces: Vec<BoundaryFace>,
    /// Max element diameter (largest vertex-pair distance over all tets).
    pub h: f64,
    pub box_info: Option<BoxInfo>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Signed volume of the tetrahedron `(a, b, c, d)`.
pub fn signed_volume(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> f64 {
    dot(sub(b, a), cross(sub(c, a), sub(d, a))) / 6.0
}

impl TetMesh {
    /// Uniform Kuhn-split mesh of the box `bounds` with `cells = (nx, ny, nz)`
    /// hexahedral cells per axis, six tetrahedra per cell.
    pub fn build_box_mesh(bounds: [[f64; 2]; 3], cells: [usize; 3]) -> Result<Self, MeshError> {
        if cells.iter().any(|&n| n == 0) || bounds.iter().any(|b| !(b[1] > b[0])) {
            return Err(MeshError::DegenerateBox);
        }
        let [nx, ny, nz] = cells;
        let d = [
            (bounds[0][1] - bounds[0][0]) / nx as f64,
            (bounds[1][1] - bounds[1][0]) / ny as f64,
            (bounds[2][1] - bounds[2][0]) / nz as f64,
        ];
        let np = [nx + 1, ny + 1, nz + 1];
        let vid = |i: usize, j: usize, k: usize| i + np[0] * (j + np[1] * k);
        let mut vertices = Vec::with_capacity(np[0] * np[1] * np[2]);
        for k in 0..np[2] {
            for j in 0..np[1] {
                for i in 0..np[0] {
                    vertices.push([
                        bounds[0][0] + i as f64 * d[0],
                        bounds[1][0] + j as f64 * d[1],
                        bounds[2][0] + k as f64 * d[2],
                    ]);
                }
            }
        }
        // all permutations of (0,1,2): each yields one tet along the main diagonal
        const PERMS: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut tets = Vec::with_capacity(6 * nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    for perm in PERMS {
                        let mut corner = [i, j, k];
                        let mut ids = [vid(i, j, k), 0, 0, 0];
                        for (step, &axis) in perm.iter().enumerate() {
                            corner[axis] += 1;
                            ids[step + 1] = vid(corner[0], corner[1], corner[2]);
                        }
                        let mut t = ids;
                        if signed_volume(
                            vertices[t[0]],
                            vertices[t[1]],
                            vertices[t[2]],
                            vertices[t[3]],
                        ) < 0.0
                        {
                            t.swap(2, 3);
                        }
                        tets.push(t);
                    }
                }
            }
        }
        Self::assemble(vertices, tets, Some(BoxInfo { bounds, cells }))
    }

    /// Builds a mesh from raw arrays, fixing orientation and extracting the
    /// boundary. Fails on degenerate tets or non-conforming face sharing.
    pub fn from_raw(vertices: Vec<[f64; 3]>, tets: Vec<[usize; 4]>) -> Result<Self, MeshError> {
        let mut tets = tets;
        for (l, t) in tets.iter_mut().enumerate() {
            let vol = signed_volume(
                vertices[t[0]],
                vertices[t[1]],
                vertices[t[2]],
                vertices[t[3]],
            );
            if vol == 0.0 || !vol.is_finite() {
                return Err(MeshError::DegenerateTet(l));
            }
            if vol < 0.0 {
                t.swap(2, 3);
            }
        }
        Self::assemble(vertices, tets, None)
    }

    fn assemble(
        vertices: Vec<[f64; 3]>,
        tets: Vec<[usize; 4]>,
        box_info: Option<BoxInfo>,
    ) -> Result<Self, MeshError> {
        for (l, t) in tets.iter().enumerate() {
            let vol = signed_volume(
                vertices[t[0]],
                vertices[t[1]],
                vertices[t[2]],
                vertices[t[3]],
            );
            if !(vol > 0.0) {
                return Err(MeshError::DegenerateTet(l));
            }
        }
        let boundary_faces = extract_boundary(&vertices, &tets)?;
        let mut h: f64 = 0.0;
        for t in &tets {
            for a in 0..4 {
                for b in (a + 1)..4 {
                    h = h.max(norm(sub(vertices[t[a]], vertices[t[b]])));
                }
            }
        }
        Ok(Self {
            vertices,
            tets,
            boundary_faces,
            h,
            box_info,
        })
    }

    /// Rebuilds with doubled cell counts; halves `h` exactly for box meshes.
    pub fn refine_uniform(&self) -> Result<Self, MeshError> {
        let info = self.box_info.ok_or(MeshError::RefineUnsupported)?;
        Self::build_box_mesh(
            info.bounds,
            [info.cells[0] * 2, info.cells[1] * 2, info.cells[2] * 2],
        )
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn tet_vertices(&self, t: usize) -> [[f64; 3]; 4] {
        let ids = self.tets[t];
        [
            self.vertices[ids[0]],
            self.vertices[ids[1]],
            self.vertices[ids[2]],
            self.vertices[ids[3]],
        ]
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        let v = self.tet_vertices(t);
        signed_volume(v[0], v[1], v[2], v[3])
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.num_tets()).map(|t| self.tet_volume(t)).sum()
    }

    pub fn boundary_area(&self) -> f64 {
        self.boundary_faces.iter().map(|f| f.area).sum()
    }

    /// Barycentric coordinates of `point` w.r.t. tetrahedron `t`.
    pub fn barycentric(&self, t: usize, point: [f64; 3]) -> [f64; 4] {
        let v = self.tet_vertices(t);
        let vol = signed_volume(v[0], v[1], v[2], v[3]);
        [
            signed_volume(point, v[1], v[2], v[3]) / vol,
            signed_volume(v[0], point, v[2], v[3]) / vol,
            signed_volume(v[0], v[1], point, v[3]) / vol,
            signed_volume(v[0], v[1], v[2], point) / vol,
        ]
    }

    /// Containing tetrahedron and barycentric coordinates, structured fast
    /// path for box meshes with a linear-scan fallback.
    pub fn locate_point(&self, point: [f64; 3]) -> Option<(usize, [f64; 4])> {
        const TOL: f64 = 1e-10;
        if let Some(info) = self.box_info {
            let mut cell = [0usize; 3];
            for a in 0..3 {
                let w = (info.bounds[a][1] - info.bounds[a][0]) / info.cells[a] as f64;
                let raw = (point[a] - info.bounds[a][0]) / w;
                if raw < -TOL || raw > info.cells[a] as f64 + TOL {
                    return None;
                }
                cell[a] = (raw.floor() as isize).clamp(0, info.cells[a] as isize - 1) as usize;
            }
            let lin = cell[0] + info.cells[0] * (cell[1] + info.cells[1] * cell[2]);
            let mut best: Option<(usize, [f64; 4], f64)> = None;
            for t in 6 * lin..6 * (lin + 1) {
                let b = self.barycentric(t, point);
                let worst = b.iter().fold(f64::INFINITY, |m, &x| m.min(x));
                if worst >= -TOL {
                    return Some((t, b));
                }
                if best.map_or(true, |(_, _, w)| worst > w) {
                    best = Some((t, b, worst));
                }
            }
            // roundoff at cell interfaces: accept the least-negative candidate
            if let Some((t, b, w)) = best {
                if w >= -1e-8 {
                    return Some((t, b));
                }
            }
            return None;
        }
        for t in 0..self.num_tets() {
            let b = self.barycentric(t, point);
            if b.iter().all(|&x| x >= -TOL) {
                return Some((t, b));
            }
        }
        None
    }

    /// Plain-text export: header, vertex count, vertices, tet count, tets.
    pub fn export_text(&self, w: &mut impl Write) -> Result<(), MeshError> {
        writeln!(w, "tetmesh v1")?;
        writeln!(w, "{}", self.num_vertices())?;
        for v in &self.vertices {
            writeln!(w, "{:.17e} {:.17e} {:.17e}", v[0], v[1], v[2])?;
        }
        writeln!(w, "{}", self.num_tets())?;
        for t in &self.tets {
            writeln!(w, "{} {} {} {}", t[0], t[1], t[2], t[3])?;
        }
        Ok(())
    }

    /// Imports the plain-text format; returns the mesh and any quality
    /// warnings (boundary quasi-uniformity).
    pub fn import_text(path: &Path) -> Result<(Self, Vec<String>), MeshError> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String), MeshError> {
            loop {
                match lines.next() {
                    Some((n, Ok(l))) => {
                        if !l.trim().is_empty() {
                            return Ok((n + 1, l));
                        }
                    }
                    Some((n, Err(e))) => {
                        return Err(MeshError::Parse {
                            line: n + 1,
                            message: e.to_string(),
                        })
                    }
                    None => {
                        return Err(MeshError::Parse {
                            line: 0,
                            message: format!("unexpected end of file, expected {what}"),
                        })
                    }
                }
            }
        };
        let (line, header) = next("header")?;
        if header.trim() != "tetmesh v1" {
            return Err(MeshError::Parse {
                line,
                message: format!("expected 'tetmesh v1', got '{}'", header.trim()),
            });
        }
        let (line, nv) = next("vertex count")?;
        let nv: usize = nv.trim().parse().map_err(|e| MeshError::Parse {
            line,
            message: format!("vertex count: {e}"),
        })?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (line, row) = next("vertex")?;
            let mut it = row.split_whitespace().map(|s| s.parse::<f64>());
            let mut v = [0.0; 3];
            for entry in &mut v {
                *entry = it
                    .next()
                    .ok_or(MeshError::Parse {
                        line,
                        message: "expected 3 coordinates".into(),
                    })?
                    .map_err(|e| MeshError::Parse {
                        line,
                        message: e.to_string(),
                    })?;
            }
            vertices.push(v);
        }
        let (line, nt) = next("tet count")?;
        let nt: usize = nt.trim().parse().map_err(|e| MeshError::Parse {
            line,
            message: format!("tet count: {e}"),
        })?;
        let mut tets = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (line, row) = next("tet")?;
            let mut it = row.split_whitespace().map(|s| s.parse::<usize>());
            let mut t = [0usize; 4];
            for entry in &mut t {
                *entry = it
                    .next()
                    .ok_or(MeshError::Parse {
                        line,
                        message: "expected 4 vertex indices".into(),
                    })?
                    .map_err(|e| MeshError::Parse {
                        line,
                        message: e.to_string(),
                    })?;
                if *entry >= nv {
                    return Err(MeshError::Parse {
                        line,
                        message: format!("vertex index {entry} out of range"),
                    });
                }
            }
            tets.push(t);
        }
        let mesh = Self::from_raw(vertices, tets)?;
        let mut warnings = Vec::new();
        let areas: Vec<f64> = mesh.boundary_faces.iter().map(|f| f.area).collect();
        if let (Some(&min), Some(&max)) = (
            areas.iter().min_by(|a, b| a.partial_cmp(b).unwrap()),
            areas.iter().max_by(|a, b| a.partial_cmp(b).unwrap()),
        ) {
            if max > 10.0 * min {
                warnings.push(format!(
                    "boundary triangulation is far from quasi-uniform: face areas span [{min:.3e}, {max:.3e}]"
                ));
            }
        }
        Ok((mesh, warnings))
    }
}

/// Local faces of a tetrahedron, `FACES[l]` is opposite local vertex `l`.
pub const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

fn extract_boundary(
    vertices: &[[f64; 3]],
    tets: &[[usize; 4]],
) -> Result<Vec<BoundaryFace>, MeshError> {
    let mut keyed: Vec<([usize; 3], usize, usize)> = Vec::with_capacity(4 * tets.len());
    for (t, tet) in tets.iter().enumerate() {
        for (l, face) in TET_FACES.iter().enumerate() {
            let mut key = [tet[face[0]], tet[face[1]], tet[face[2]]];
            key.sort_unstable();
            keyed.push((key, t, l));
        }
    }
    keyed.sort_unstable_by_key(|e| e.0);
    let mut boundary = Vec::new();
    let mut i = 0;
    while i < keyed.len() {
        let mut j = i + 1;
        while j < keyed.len() && keyed[j].0 == keyed[i].0 {
            j += 1;
        }
        match j - i {
            1 => {
                let (_, t, l) = keyed[i];
                boundary.push(make_boundary_face(vertices, tets, t, l));
            }
            2 => {}
            _ => return Err(MeshError::NonConforming),
        }
        i = j;
    }
    boundary.sort_unstable_by_key(|f| (f.tet, f.local_face));
    Ok(boundary)
}

fn make_boundary_face(
    vertices: &[[f64; 3]],
    tets: &[[usize; 4]],
    t: usize,
    l: usize,
) -> BoundaryFace {
    let tet = tets[t];
    let ids = [
        tet[TET_FACES[l][0]],
        tet[TET_FACES[l][1]],
        tet[TET_FACES[l][2]],
    ];
    let a = vertices[ids[0]];
    let b = vertices[ids[1]];
    let c = vertices[ids[2]];
    let n = cross(sub(b, a), sub(c, a));
    let len = norm(n);
    let mut normal = [n[0] / len, n[1] / len, n[2] / len];
    // orient away from the opposite vertex
    let opp = vertices[tet[l]];
    let centroid = [
        (a[0] + b[0] + c[0]) / 3.0,
        (a[1] + b[1] + c[1]) / 3.0,
        (a[2] + b[2] + c[2]) / 3.0,
    ];
    if dot(normal, sub(centroid, opp)) < 0.0 {
        normal = [-normal[0], -normal[1], -normal[2]];
    }
    BoundaryFace {
        tet: t,
        local_face: l,
        vertices: ids,
        normal,
        area: 0.5 * len,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const UNIT: [[f64; 2]; 3] = [[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]];

    #[test]
    fn box_mesh_counts_and_h() {
        let m = TetMesh::build_box_mesh(UNIT, [1, 1, 1]).unwrap();
        assert_eq!(m.num_tets(), 6);
        assert_eq!(m.num_vertices(), 8);
        assert_relative_eq!(m.h, 3f64.sqrt(), max_relative = 1e-14);

        let m = TetMesh::build_box_mesh(UNIT, [2, 2, 2]).unwrap();
        assert_eq!(m.num_tets(), 48);
        assert_eq!(m.num_vertices(), 27);
        assert_relative_eq!(m.h, 3f64.sqrt() / 2.0, max_relative = 1e-14);

        assert!(TetMesh::build_box_mesh(UNIT, [0, 1, 1]).is_err());
        assert!(TetMesh::build_box_mesh([[0.0, 0.0], [0.0, 1.0], [0.0, 1.0]], [1, 1, 1]).is_err());
    }

    #[test]
    fn volumes_and_positivity() {
        for cells in [[1, 1, 1], [2, 3, 1], [4, 4, 4]] {
            let m = TetMesh::build_box_mesh(UNIT, cells).unwrap();
            for t in 0..m.num_tets() {
                assert!(m.tet_volume(t) > 0.0);
            }
            assert_relative_eq!(m.total_volume(), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn refinement_doubles_counts_and_halves_h() {
        let m = TetMesh::build_box_mesh(UNIT, [1, 1, 1]).unwrap();
        let r = m.refine_uniform().unwrap();
        assert_eq!(r.num_tets(), 48);
        assert_eq!(r.num_vertices(), 27);
        assert_relative_eq!(r.h, m.h / 2.0, max_relative = 1e-14);
        let rr = r.refine_uniform().unwrap();
        assert_eq!(rr.num_vertices(), 125); // (2n+1)^3 with n=2
    }

    #[test]
    fn boundary_tiles_surface() {
        let m = TetMesh::build_box_mesh(UNIT, [2, 2, 2]).unwrap();
        assert_relative_eq!(m.boundary_area(), 6.0, max_relative = 1e-12);
        for f in &m.boundary_faces {
            assert_relative_eq!(
                f.normal[0].hypot(f.normal[1]).hypot(f.normal[2]),
                1.0,
                epsilon = 1e-12
            );
            // outwardness: normal points from tet centroid toward face centroid
            let tv = m.tet_vertices(f.tet);
            let tc = [
                (tv[0][0] + tv[1][0] + tv[2][0] + tv[3][0]) / 4.0,
                (tv[0][1] + tv[1][1] + tv[2][1] + tv[3][1]) / 4.0,
                (tv[0][2] + tv[1][2] + tv[2][2] + tv[3][2]) / 4.0,
            ];
            let fv: Vec<[f64; 3]> = f.vertices.iter().map(|&v| m.vertices[v]).collect();
            let fc = [
                (fv[0][0] + fv[1][0] + fv[2][0]) / 3.0,
                (fv[0][1] + fv[1][1] + fv[2][1]) / 3.0,
                (fv[0][2] + fv[1][2] + fv[2][2]) / 3.0,
            ];
            let d = [fc[0] - tc[0], fc[1] - tc[1], fc[2] - tc[2]];
            assert!(f.normal[0] * d[0] + f.normal[1] * d[1] + f.normal[2] * d[2] > 0.0);
        }

        let slab = TetMesh::build_box_mesh([[0.0, 10.0], [0.0, 10.0], [-1.0, 1.0]], [5, 5, 1]).unwrap();
        assert_relative_eq!(slab.boundary_area(), 280.0, max_relative = 1e-12);
    }

    #[test]
    fn interior_faces_shared_by_two_and_diagonals_compatible() {
        let m = TetMesh::build_box_mesh(UNIT, [2, 2, 2]).unwrap();
        // count faces: every face appears once (boundary) or twice (interior)
        let mut keyed: Vec<[usize; 3]> = Vec::new();
        for tet in &m.tets {
            for face in TET_FACES {
                let mut key = [tet[face[0]], tet[face[1]], tet[face[2]]];
                key.sort_unstable();
                keyed.push(key);
            }
        }
        keyed.sort_unstable();
        let mut counts = Vec::new();
        let mut i = 0;
        while i < keyed.len() {
            let mut j = i + 1;
            while j < keyed.len() && keyed[j] == keyed[i] {
                j += 1;
            }
            counts.push(j - i);
            i = j;
        }
        assert!(counts.iter().all(|&c| c == 1 || c == 2));
        let n_boundary = counts.iter().filter(|&&c| c == 1).count();
        assert_eq!(n_boundary, m.boundary_faces.len());
        // compatible diagonals: every singly-counted face lies on the box surface
        for f in &m.boundary_faces {
            let on_surface = (0..3).any(|a| {
                f.vertices
                    .iter()
                    .all(|&v| (m.vertices[v][a] - 0.0).abs() < 1e-14)
                    || f.vertices
                        .iter()
                        .all(|&v| (m.vertices[v][a] - 1.0).abs() < 1e-14)
            });
            assert!(on_surface, "interior face with mismatched diagonal: {:?}", f.vertices);
        }
    }

    #[test]
    fn point_location() {
        let m = TetMesh::build_box_mesh(UNIT, [3, 3, 3]).unwrap();
        let pts = [
            [0.1, 0.2, 0.3],
            [0.999, 0.001, 0.5],
            [0.0, 0.0, 0.0],
            [1.0, 1.0, 1.0],
            [1.0 / 3.0, 2.0 / 3.0, 0.5],
        ];
        for p in pts {
            let (t, b) = m.locate_point(p).expect("point should be inside");
            assert!(b.iter().all(|&x| x >= -1e-8));
            let v = m.tet_vertices(t);
            for a in 0..3 {
                let rec = b[0] * v[0][a] + b[1] * v[1][a] + b[2] * v[2][a] + b[3] * v[3][a];
                assert_relative_eq!(rec, p[a], epsilon = 1e-12);
            }
        }
        assert!(m.locate_point([1.5, 0.5, 0.5]).is_none());
    }

    #[test]
    fn text_roundtrip() {
        let m = TetMesh::build_box_mesh(UNIT, [2, 1, 1]).unwrap();
        let dir = std::env::temp_dir().join("sp3fem_mesh_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.tetmesh");
        let mut buf = Vec::new();
        m.export_text(&mut buf).unwrap();
        std::fs::write(&path, &buf).unwrap();
        let (re, warnings) = TetMesh::import_text(&path).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(re.num_vertices(), m.num_vertices());
        assert_eq!(re.num_tets(), m.num_tets());
        assert_relative_eq!(re.total_volume(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(re.boundary_area(), 6.0, max_relative = 1e-12);
        // imported meshes cannot be uniformly refined
        assert!(matches!(re.refine_uniform(), Err(MeshError::RefineUnsupported)));
    }
}
