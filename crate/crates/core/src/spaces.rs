//! Global continuous Lagrange spaces over a tetrahedral mesh and discrete
//! fields on them.
//!
//! Degrees of freedom are attached to mesh entities (vertices, edges, faces,
//! cell interiors). Nodes shared by adjacent cells resolve to the same global
//! dof through canonical orderings based on global vertex indices, which gives
//! `C^0` continuity without any geometric hashing.

use std::sync::Arc;

use thiserror::Error;

use crate::elements::{ElementError, ReferenceElement};
use crate::mesh::TetMesh;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error(transparent)]
    Element(#[from] ElementError),
    #[error("point {0:?} lies outside the mesh")]
    PointOutsideMesh([f64; 3]),
    #[error("mass solve failed during projection: {0}")]
    SingularMass(String),
}

/// Physical unit carried by a field, purely informational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FieldUnit {
    Kelvin,
    Intensity,
    #[default]
    Dimensionless,
}

/// Affine geometry of one tetrahedron: physical map, Jacobian, gradient map.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub origin: [f64; 3],
    /// Columns are the edge vectors `v1-v0, v2-v0, v3-v0`.
    pub jac: [[f64; 3]; 3],
    pub det: f64,
    /// Inverse transpose of the Jacobian; maps reference gradients to physical.
    pub inv_jt: [[f64; 3]; 3],
}

impl ElementGeometry {
    pub fn new(mesh: &TetMesh, t: usize) -> Self {
        let v = mesh.tet_vertices(t);
        let jac = [
            [v[1][0] - v[0][0], v[2][0] - v[0][0], v[3][0] - v[0][0]],
            [v[1][1] - v[0][1], v[2][1] - v[0][1], v[3][1] - v[0][1]],
            [v[1][2] - v[0][2], v[2][2] - v[0][2], v[3][2] - v[0][2]],
        ];
        let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
            - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
            + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
        let inv = |r: usize, c: usize| {
            let (r1, r2) = match r {
                0 => (1, 2),
                1 => (2, 0),
                _ => (0, 1),
            };
            let (c1, c2) = match c {
                0 => (1, 2),
                1 => (2, 0),
                _ => (0, 1),
            };
            (jac[c1][r1] * jac[c2][r2] - jac[c1][r2] * jac[c2][r1]) / det
        };
        // inv_jt[i][j] = (J^{-1})[j][i]
        let mut inv_jt = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                inv_jt[i][j] = inv(j, i);
            }
        }
        Self {
            origin: v[0],
            jac,
            det,
            inv_jt,
        }
    }

    #[inline]
    pub fn to_physical(&self, r: [f64; 3]) -> [f64; 3] {
        let mut x = self.origin;
        for i in 0..3 {
            x[i] += self.jac[i][0] * r[0] + self.jac[i][1] * r[1] + self.jac[i][2] * r[2];
        }
        x
    }

    /// Maps a reference gradient to a physical gradient.
    #[inline]
    pub fn grad_to_physical(&self, g: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = self.inv_jt[i][0] * g[0] + self.inv_jt[i][1] * g[1] + self.inv_jt[i][2] * g[2];
        }
        out
    }
}

/// Scalar continuous Lagrange space of given degree over a shared mesh.
#[derive(Debug)]
pub struct FemSpace {
    pub mesh: Arc<TetMesh>,
    pub degree: usize,
    pub element: ReferenceElement,
    pub num_dofs: usize,
    /// Flattened `num_tets x dim` cell-to-global dof map.
    cell_dofs: Vec<usize>,
    /// Nodal coordinates per global dof.
    pub dof_coords: Vec<[f64; 3]>,
    /// Per boundary face: local node indices of the owning cell on that face.
    pub boundary_face_nodes: Vec<Vec<usize>>,
    /// Sorted global dofs supported on the boundary.
    pub boundary_dofs: Vec<usize>,
    pub(crate) pattern_cache: std::sync::OnceLock<crate::assembly::CsrMatrix>,
}

impl FemSpace {
    pub fn new(mesh: Arc<TetMesh>, degree: usize) -> Result<Arc<Self>, SpaceError> {
        let element = ReferenceElement::new(degree)?;
        let p = degree;
        let nb = element.dim();
        let ntets = mesh.num_tets();

        // unique edges and faces keyed by sorted global vertex indices
        let mut edge_keys: Vec<[usize; 2]> = Vec::with_capacity(6 * ntets);
        let mut face_keys: Vec<[usize; 3]> = Vec::with_capacity(4 * ntets);
        const LOCAL_EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];
        for tet in &mesh.tets {
            for e in LOCAL_EDGES {
                let mut k = [tet[e[0]], tet[e[1]]];
                k.sort_unstable();
                edge_keys.push(k);
            }
            for f in crate::mesh::TET_FACES {
                let mut k = [tet[f[0]], tet[f[1]], tet[f[2]]];
                k.sort_unstable();
                face_keys.push(k);
            }
        }
        edge_keys.sort_unstable();
        edge_keys.dedup();
        face_keys.sort_unstable();
        face_keys.dedup();

        let per_edge = p.saturating_sub(1);
        let per_face = if p >= 3 { (p - 1) * (p - 2) / 2 } else { 0 };
        let per_cell = if p >= 4 { (p - 1) * (p - 2) * (p - 3) / 6 } else { 0 };

        let nv = mesh.num_vertices();
        let edge_base = nv;
        let face_base = edge_base + per_edge * edge_keys.len();
        let cell_base = face_base + per_face * face_keys.len();
        let num_dofs = cell_base + per_cell * ntets;

        let edge_id = |k: [usize; 2]| edge_keys.binary_search(&k).expect("edge key");
        let face_id = |k: [usize; 3]| face_keys.binary_search(&k).expect("face key");

        let mut cell_dofs = vec![0usize; ntets * nb];
        let mut dof_coords = vec![[f64::NAN; 3]; num_dofs];
        for (t, tet) in mesh.tets.iter().enumerate() {
            let geo = ElementGeometry::new(&mesh, t);
            let mut interior_counter = 0usize;
            for (n, idx) in element.multi_indices.iter().enumerate() {
                let support: Vec<usize> = (0..4).filter(|&k| idx[k] > 0).collect();
                let dof = match support.len() {
                    1 => tet[support[0]],
                    2 => {
                        let (a, b) = (support[0], support[1]);
                        let (ga, gb) = (tet[a], tet[b]);
                        let key = [ga.min(gb), ga.max(gb)];
                        // weight attached to the larger global vertex
                        let w_max = if ga > gb { idx[a] } else { idx[b] };
                        edge_base + per_edge * edge_id(key) + (w_max - 1)
                    }
                    3 => {
                        let mut gw: Vec<(usize, usize)> =
                            support.iter().map(|&k| (tet[k], idx[k])).collect();
                        gw.sort_unstable();
                        let key = [gw[0].0, gw[1].0, gw[2].0];
                        let (w1, w2) = (gw[0].1, gw[1].1);
                        // lexicographic position of (w1, w2) in {w >= 1, w1+w2 <= p-1}
                        let mut pos = 0usize;
                        for u in 1..w1 {
                            pos += p - 1 - u;
                        }
                        pos += w2 - 1;
                        face_base + per_face * face_id(key) + pos
                    }
                    _ => {
                        let dof = cell_base + per_cell * t + interior_counter;
                        interior_counter += 1;
                        dof
                    }
                };
                cell_dofs[t * nb + n] = dof;
                let x = geo.to_physical(element.nodes[n]);
                debug_assert!(
                    dof_coords[dof][0].is_nan()
                        || (dof_coords[dof][0] - x[0]).abs()
                            + (dof_coords[dof][1] - x[1]).abs()
                            + (dof_coords[dof][2] - x[2]).abs()
                            < 1e-9 * (1.0 + mesh.h),
                    "inconsistent dof coordinate"
                );
                dof_coords[dof] = x;
            }
        }

        let mut boundary_face_nodes = Vec::with_capacity(mesh.boundary_faces.len());
        let mut boundary_dofs = Vec::new();
        for bf in &mesh.boundary_faces {
            let nodes: Vec<usize> = element
                .multi_indices
                .iter()
                .enumerate()
                .filter(|(_, idx)| idx[bf.local_face] == 0)
                .map(|(n, _)| n)
                .collect();
            for &n in &nodes {
                boundary_dofs.push(cell_dofs[bf.tet * nb + n]);
            }
            boundary_face_nodes.push(nodes);
        }
        boundary_dofs.sort_unstable();
        boundary_dofs.dedup();

        Ok(Arc::new(Self {
            mesh,
            degree,
            element,
            num_dofs,
            cell_dofs,
            dof_coords,
            boundary_face_nodes,
            boundary_dofs,
            pattern_cache: std::sync::OnceLock::new(),
        }))
    }

    #[inline]
    pub fn cell_dofs(&self, t: usize) -> &[usize] {
        let nb = self.element.dim();
        &self.cell_dofs[t * nb..(t + 1) * nb]
    }

    pub fn dims_per_cell(&self) -> usize {
        self.element.dim()
    }
}

/// Coefficient vector of a discrete function on a [`FemSpace`].
#[derive(Debug, Clone)]
pub struct FemField {
    pub space: Arc<FemSpace>,
    pub coeffs: Vec<f64>,
    pub unit: FieldUnit,
}

impl FemField {
    pub fn zeros(space: &Arc<FemSpace>) -> Self {
        Self {
            space: space.clone(),
            coeffs: vec![0.0; space.num_dofs],
            unit: FieldUnit::default(),
        }
    }

    pub fn from_coeffs(space: &Arc<FemSpace>, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), space.num_dofs);
        Self {
            space: space.clone(),
            coeffs,
            unit: FieldUnit::default(),
        }
    }

    /// Nodal interpolant: coefficients are function values at the dof nodes.
    pub fn interpolate(space: &Arc<FemSpace>, f: impl Fn([f64; 3]) -> f64) -> Self {
        let coeffs = space.dof_coords.iter().map(|&x| f(x)).collect();
        Self {
            space: space.clone(),
            coeffs,
            unit: FieldUnit::default(),
        }
    }

    pub fn with_unit(mut self, unit: FieldUnit) -> Self {
        self.unit = unit;
        self
    }

    /// Value at a reference point of a given cell.
    pub fn eval_local(&self, t: usize, ref_point: [f64; 3]) -> f64 {
        let nb = self.space.element.dim();
        let mut vals = vec![0.0; nb];
        self.space.element.eval_basis(ref_point, &mut vals);
        let dofs = self.space.cell_dofs(t);
        vals.iter()
            .zip(dofs)
            .map(|(v, &d)| v * self.coeffs[d])
            .sum()
    }

    /// Physical gradient at a reference point of a given cell.
    pub fn eval_gradient_local(&self, t: usize, ref_point: [f64; 3]) -> [f64; 3] {
        let nb = self.space.element.dim();
        let mut grads = vec![[0.0; 3]; nb];
        self.space.element.eval_gradients(ref_point, &mut grads);
        let geo = ElementGeometry::new(&self.space.mesh, t);
        let dofs = self.space.cell_dofs(t);
        let mut g = [0.0; 3];
        for (gr, &d) in grads.iter().zip(dofs) {
            let c = self.coeffs[d];
            g[0] += c * gr[0];
            g[1] += c * gr[1];
            g[2] += c * gr[2];
        }
        geo.grad_to_physical(g)
    }

    /// Value at a physical point (locates the containing cell).
    pub fn evaluate(&self, point: [f64; 3]) -> Result<f64, SpaceError> {
        let (t, b) = self
            .space
            .mesh
            .locate_point(point)
            .ok_or(SpaceError::PointOutsideMesh(point))?;
        Ok(self.eval_local(t, [b[1], b[2], b[3]]))
    }

    /// Gradient at a physical point.
    pub fn evaluate_gradient(&self, point: [f64; 3]) -> Result<[f64; 3], SpaceError> {
        let (t, b) = self
            .space
            .mesh
            .locate_point(point)
            .ok_or(SpaceError::PointOutsideMesh(point))?;
        Ok(self.eval_gradient_local(t, [b[1], b[2], b[3]]))
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |m, &c| m.max(c.abs()))
    }

    pub fn max(&self) -> f64 {
        self.coeffs.iter().fold(f64::NEG_INFINITY, |m, &c| m.max(c))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

/// L2 projection `Q_h u`: solves `M c = (u, basis_i)` on the given space.
///
/// The load is integrated with the space's default projection exactness
/// (`2p + 6`) unless overridden.
pub fn l2_project(
    space: &Arc<FemSpace>,
    u: impl Fn([f64; 3]) -> f64 + Sync,
    exactness: Option<usize>,
) -> Result<FemField, SpaceError> {
    let d = exactness.unwrap_or(2 * space.degree + 6);
    let mass = crate::assembly::assemble_mass(space);
    let rhs = crate::assembly::assemble_volume_load(space, d, |x, _| u(x));
    let solver = crate::solver::LinearSolver::default();
    let coeffs = solver
        .solve(&mass, &rhs)
        .map_err(|e| SpaceError::SingularMass(e.to_string()))?;
    Ok(FemField::from_coeffs(space, coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TET_FACES;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const UNIT: [[f64; 2]; 3] = [[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]];

    fn unit_mesh(n: usize) -> Arc<TetMesh> {
        Arc::new(TetMesh::build_box_mesh(UNIT, [n, n, n]).unwrap())
    }

    #[test]
    fn dof_counts_on_structured_meshes() {
        // Kuhn meshes of the unit cube: P_p lattice is the (p n + 1)^3 grid
        for n in [1usize, 2, 3] {
            for p in 1..=4 {
                let space = FemSpace::new(unit_mesh(n), p).unwrap();
                assert_eq!(space.num_dofs, (p * n + 1).pow(3), "n={n} p={p}");
            }
        }
    }

    #[test]
    fn shared_entities_get_shared_dofs() {
        let space = FemSpace::new(unit_mesh(2), 3).unwrap();
        // every dof coordinate is consistent and no dof is orphaned
        assert!(space.dof_coords.iter().all(|c| c[0].is_finite()));
        let mut seen = vec![false; space.num_dofs];
        for t in 0..space.mesh.num_tets() {
            for &d in space.cell_dofs(t) {
                seen[d] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn continuity_across_interior_faces() {
        let mesh = unit_mesh(2);
        let space = FemSpace::new(mesh.clone(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let field = FemField::from_coeffs(
            &space,
            (0..space.num_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );

        // pair interior faces
        let mut keyed: Vec<([usize; 3], usize, usize)> = Vec::new();
        for (t, tet) in mesh.tets.iter().enumerate() {
            for (l, f) in TET_FACES.iter().enumerate() {
                let mut key = [tet[f[0]], tet[f[1]], tet[f[2]]];
                key.sort_unstable();
                keyed.push((key, t, l));
            }
        }
        keyed.sort_unstable_by_key(|e| e.0);
        let mut tested = 0;
        let mut i = 0;
        while i + 1 < keyed.len() {
            if keyed[i].0 == keyed[i + 1].0 {
                let key = keyed[i].0;
                // random point on the face via barycentric sample
                for _ in 0..3 {
                    let mut w = [
                        rng.gen_range(0.01..1.0),
                        rng.gen_range(0.01..1.0),
                        rng.gen_range(0.01..1.0),
                    ];
                    let s: f64 = w.iter().sum();
                    w.iter_mut().for_each(|x| *x /= s);
                    let pt = [
                        w[0] * mesh.vertices[key[0]][0]
                            + w[1] * mesh.vertices[key[1]][0]
                            + w[2] * mesh.vertices[key[2]][0],
                        w[0] * mesh.vertices[key[0]][1]
                            + w[1] * mesh.vertices[key[1]][1]
                            + w[2] * mesh.vertices[key[2]][1],
                        w[0] * mesh.vertices[key[0]][2]
                            + w[1] * mesh.vertices[key[1]][2]
                            + w[2] * mesh.vertices[key[2]][2],
                    ];
                    let mut vals = Vec::new();
                    for &(_, t, _) in &keyed[i..i + 2] {
                        let b = mesh.barycentric(t, pt);
                        vals.push(field.eval_local(t, [b[1], b[2], b[3]]));
                    }
                    assert!(
                        (vals[0] - vals[1]).abs() < 1e-10,
                        "discontinuity {} vs {}",
                        vals[0],
                        vals[1]
                    );
                    tested += 1;
                }
                i += 2;
            } else {
                i += 1;
            }
        }
        assert!(tested >= 200, "tested only {tested} face points");
    }

    #[test]
    fn linear_fields_reproduce_exactly() {
        let space = FemSpace::new(unit_mesh(2), 1).unwrap();
        let f = |x: [f64; 3]| 2.0 * x[0] - 3.0 * x[1] + 0.5 * x[2] + 1.0;
        let field = FemField::interpolate(&space, f);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            assert_relative_eq!(field.evaluate(p).unwrap(), f(p), epsilon = 1e-12);
            let g = field.evaluate_gradient(p).unwrap();
            assert_relative_eq!(g[0], 2.0, epsilon = 1e-11);
            assert_relative_eq!(g[1], -3.0, epsilon = 1e-11);
            assert_relative_eq!(g[2], 0.5, epsilon = 1e-11);
        }
        // constant field
        let c = FemField::interpolate(&space, |_| 4.25);
        assert_relative_eq!(c.evaluate([0.3, 0.7, 0.2]).unwrap(), 4.25, epsilon = 1e-13);
        assert!(c.evaluate([2.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn l2_projection_reproduces_polynomials_and_is_idempotent() {
        let space = FemSpace::new(unit_mesh(2), 2).unwrap();
        let u = |x: [f64; 3]| 1.0 + x[0] + x[1] * x[2] + x[0] * x[0];
        let proj = l2_project(&space, u, None).unwrap();
        let nodal = FemField::interpolate(&space, u);
        for (a, b) in proj.coeffs.iter().zip(&nodal.coeffs) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        // idempotence: project the projection (evaluated as a function)
        let again = l2_project(&space, |x| proj.evaluate(x).unwrap(), None).unwrap();
        for (a, b) in again.coeffs.iter().zip(&proj.coeffs) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn l2_projection_orthogonality_and_optimality() {
        let space = FemSpace::new(unit_mesh(2), 2).unwrap();
        let u = |x: [f64; 3]| {
            (2.0 * std::f64::consts::PI * x[0]).sin()
                * (2.0 * std::f64::consts::PI * x[1]).sin()
                * (2.0 * std::f64::consts::PI * x[2]).sin()
        };
        let d = 2 * space.degree + 6;
        let proj = l2_project(&space, u, Some(d)).unwrap();
        // orthogonality against the assembled mass and the same-rule load
        let mass = crate::assembly::assemble_mass(&space);
        let load = crate::assembly::assemble_volume_load(&space, d, |x, _| u(x));
        let mc = mass.mul_vec(&proj.coeffs);
        let norm_u = crate::assembly::integrate_volume(&space.mesh, d, |x| u(x) * u(x)).sqrt();
        for i in 0..space.num_dofs {
            assert!(
                (load[i] - mc[i]).abs() <= 1e-10 * norm_u,
                "orthogonality residual at dof {i}: {}",
                load[i] - mc[i]
            );
        }
        // projection beats nodal interpolation in L2
        let nodal = FemField::interpolate(&space, u);
        let err = |f: &FemField| {
            crate::assembly::integrate_volume_local(&space.mesh, d, |t, r, x| {
                let e = f.eval_local(t, r) - u(x);
                e * e
            })
            .sqrt()
        };
        assert!(err(&proj) <= err(&nodal) + 1e-12);
    }
}
