//! Sparse operators and load vectors of the weak formulation: mass,
//! anisotropic diffusion, boundary mass, black-body loads with Jacobians,
//! manufactured sources and the 2x2 radiative moment system.
//!
//! Element loops run in parallel into per-element buffers and are scattered
//! sequentially in element order, so assembled values are deterministic
//! regardless of worker count.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::elements::QuadratureRule;
use crate::mesh::TetMesh;
use crate::model::{ConductivityModel, Mat3, ModelError, PhysicalParams};
use crate::spaces::{ElementGeometry, FemField, FemSpace};

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    /// Builds the sparsity pattern from per-cell row/column dof lists.
    pub fn pattern(
        nrows: usize,
        ncols: usize,
        cells: impl Iterator<Item = (Vec<usize>, Vec<usize>)>,
    ) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); nrows];
        for (rdofs, cdofs) in cells {
            for &r in &rdofs {
                rows[r].extend_from_slice(&cdofs);
            }
        }
        let mut row_offsets = Vec::with_capacity(nrows + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
            col_indices.extend_from_slice(r);
            row_offsets.push(col_indices.len());
        }
        let nnz = col_indices.len();
        Self {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values: vec![0.0; nnz],
        }
    }

    /// Square pattern of a space's cell couplings, cached on the space.
    pub fn square_pattern(space: &FemSpace) -> Self {
        space
            .pattern_cache
            .get_or_init(|| {
                let n = space.mesh.num_tets();
                Self::pattern(
                    space.num_dofs,
                    space.num_dofs,
                    (0..n).map(|t| (space.cell_dofs(t).to_vec(), space.cell_dofs(t).to_vec())),
                )
            })
            .clone()
    }

    pub fn zeroed_like(&self) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v = 0.0);
        m
    }

    #[inline]
    pub fn add_at(&mut self, row: usize, col: usize, value: f64) {
        let lo = self.row_offsets[row];
        let hi = self.row_offsets[row + 1];
        match self.col_indices[lo..hi].binary_search(&col) {
            Ok(k) => self.values[lo + k] += value,
            Err(_) => panic!("entry ({row}, {col}) outside sparsity pattern"),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let lo = self.row_offsets[row];
        let hi = self.row_offsets[row + 1];
        match self.col_indices[lo..hi].binary_search(&col) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut sum = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                sum += self.values[k] * x[self.col_indices[k]];
            }
            *yi = sum;
        });
    }

    /// Adds `scale * other` assuming `other`'s pattern is contained in ours.
    pub fn add_scaled(&mut self, other: &CsrMatrix, scale: f64) {
        assert_eq!(self.nrows, other.nrows);
        for row in 0..self.nrows {
            let (slo, shi) = (self.row_offsets[row], self.row_offsets[row + 1]);
            for k in other.row_offsets[row]..other.row_offsets[row + 1] {
                let col = other.col_indices[k];
                match self.col_indices[slo..shi].binary_search(&col) {
                    Ok(j) => self.values[slo + j] += scale * other.values[k],
                    Err(_) => panic!("pattern mismatch in add_scaled at ({row}, {col})"),
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    /// Largest absolute asymmetry `max |A_ij - A_ji|`; for tests on small meshes.
    pub fn symmetry_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for row in 0..self.nrows {
            for k in self.row_offsets[row]..self.row_offsets[row + 1] {
                let col = self.col_indices[k];
                err = err.max((self.values[k] - self.get(col, row)).abs());
            }
        }
        err
    }

    /// MatrixMarket coordinate format dump.
    pub fn write_matrix_market(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for row in 0..self.nrows {
            for k in self.row_offsets[row]..self.row_offsets[row + 1] {
                writeln!(w, "{} {} {:.17e}", row + 1, self.col_indices[k] + 1, self.values[k])?;
            }
        }
        Ok(())
    }
}

/// Basis values and reference gradients tabulated at quadrature points.
#[derive(Debug, Clone)]
pub struct BasisTables {
    pub rule: QuadratureRule,
    pub nb: usize,
    /// `vals[q * nb + i]`
    pub vals: Vec<f64>,
    /// `grads[q * nb + i]`
    pub grads: Vec<[f64; 3]>,
}

impl BasisTables {
    pub fn volume(space: &FemSpace, exactness: usize) -> Self {
        let rule = QuadratureRule::tetrahedron(exactness).expect("volume rule");
        Self::at_points(space, rule)
    }

    fn at_points(space: &FemSpace, rule: QuadratureRule) -> Self {
        let nb = space.element.dim();
        let nq = rule.len();
        let mut vals = vec![0.0; nq * nb];
        let mut grads = vec![[0.0; 3]; nq * nb];
        for (q, &pt) in rule.points.iter().enumerate() {
            space
                .element
                .eval_basis(pt, &mut vals[q * nb..(q + 1) * nb]);
            space
                .element
                .eval_gradients(pt, &mut grads[q * nb..(q + 1) * nb]);
        }
        Self { rule, nb, vals, grads }
    }
}

/// Deterministic parallel element loop: computes per-element data in parallel,
/// scatters sequentially in element order.
pub fn for_each_element<T: Send>(
    n: usize,
    compute: impl Fn(usize) -> T + Sync + Send,
    mut scatter: impl FnMut(usize, T),
) {
    let results: Vec<T> = (0..n).into_par_iter().map(compute).collect();
    for (e, r) in results.into_iter().enumerate() {
        scatter(e, r);
    }
}

fn scatter_local_matrix(
    matrix: &mut CsrMatrix,
    rows: &[usize],
    cols: &[usize],
    local: &[f64],
) {
    let nc = cols.len();
    for (a, &r) in rows.iter().enumerate() {
        for (b, &c) in cols.iter().enumerate() {
            matrix.add_at(r, c, local[a * nc + b]);
        }
    }
}

/// Mass matrix `M_ij = (basis_j, basis_i)_0`.
pub fn assemble_mass(space: &FemSpace) -> CsrMatrix {
    let tables = BasisTables::volume(space, 2 * space.degree);
    let mut matrix = CsrMatrix::square_pattern(space);
    let nb = tables.nb;
    for_each_element(
        space.mesh.num_tets(),
        |t| {
            let geo = ElementGeometry::new(&space.mesh, t);
            let det = geo.det.abs();
            let mut local = vec![0.0; nb * nb];
            for (q, &w) in tables.rule.weights.iter().enumerate() {
                let scale = w * det;
                let nv = &tables.vals[q * nb..(q + 1) * nb];
                for a in 0..nb {
                    let na = scale * nv[a];
                    for b in a..nb {
                        local[a * nb + b] += na * nv[b];
                    }
                }
            }
            for a in 0..nb {
                for b in 0..a {
                    local[a * nb + b] = local[b * nb + a];
                }
            }
            local
        },
        |t, local| {
            let dofs = space.cell_dofs(t);
            scatter_local_matrix(&mut matrix, dofs, dofs, &local);
        },
    );
    matrix
}

/// Rectangular mass `M_ij = (col_basis_j, row_basis_i)_0` between two spaces
/// on the same mesh.
pub fn assemble_cross_mass(row_space: &FemSpace, col_space: &FemSpace) -> CsrMatrix {
    assert!(Arc::ptr_eq(&row_space.mesh, &col_space.mesh));
    let exactness = row_space.degree + col_space.degree;
    let rows_t = BasisTables::volume(row_space, exactness);
    let cols_t = BasisTables::volume(col_space, exactness);
    let n = row_space.mesh.num_tets();
    let mut matrix = CsrMatrix::pattern(
        row_space.num_dofs,
        col_space.num_dofs,
        (0..n).map(|t| {
            (
                row_space.cell_dofs(t).to_vec(),
                col_space.cell_dofs(t).to_vec(),
            )
        }),
    );
    let (nr, nc) = (rows_t.nb, cols_t.nb);
    for_each_element(
        n,
        |t| {
            let det = ElementGeometry::new(&row_space.mesh, t).det.abs();
            let mut local = vec![0.0; nr * nc];
            for (q, &w) in rows_t.rule.weights.iter().enumerate() {
                let scale = w * det;
                let rv = &rows_t.vals[q * nr..(q + 1) * nr];
                let cv = &cols_t.vals[q * nc..(q + 1) * nc];
                for a in 0..nr {
                    let na = scale * rv[a];
                    for b in 0..nc {
                        local[a * nc + b] += na * cv[b];
                    }
                }
            }
            local
        },
        |t, local| {
            scatter_local_matrix(
                &mut matrix,
                row_space.cell_dofs(t),
                col_space.cell_dofs(t),
                &local,
            );
        },
    );
    matrix
}

/// Diffusion matrix `K_ij = (A grad basis_j, grad basis_i)_0` for a constant
/// SPD tensor.
pub fn assemble_diffusion_const(space: &FemSpace, tensor: Mat3) -> CsrMatrix {
    assemble_diffusion_fn(space, 2 * (space.degree - 1).max(1), |_| tensor)
}

/// Diffusion matrix for a position-dependent tensor.
pub fn assemble_diffusion_fn(
    space: &FemSpace,
    exactness: usize,
    tensor: impl Fn([f64; 3]) -> Mat3 + Sync,
) -> CsrMatrix {
    let tables = BasisTables::volume(space, exactness);
    let mut matrix = CsrMatrix::square_pattern(space);
    let nb = tables.nb;
    for_each_element(
        space.mesh.num_tets(),
        |t| {
            let geo = ElementGeometry::new(&space.mesh, t);
            let det = geo.det.abs();
            let mut local = vec![0.0; nb * nb];
            let mut phys_grads = vec![[0.0f64; 3]; nb];
            for (q, &w) in tables.rule.weights.iter().enumerate() {
                let x = geo.to_physical(tables.rule.points[q]);
                let a_mat = tensor(x);
                for i in 0..nb {
                    phys_grads[i] = geo.grad_to_physical(tables.grads[q * nb + i]);
                }
                let scale = w * det;
                for a in 0..nb {
                    let ga = phys_grads[a];
                    let aga = [
                        a_mat[0][0] * ga[0] + a_mat[0][1] * ga[1] + a_mat[0][2] * ga[2],
                        a_mat[1][0] * ga[0] + a_mat[1][1] * ga[1] + a_mat[1][2] * ga[2],
                        a_mat[2][0] * ga[0] + a_mat[2][1] * ga[1] + a_mat[2][2] * ga[2],
                    ];
                    for b in a..nb {
                        let gb = phys_grads[b];
                        local[a * nb + b] +=
                            scale * (aga[0] * gb[0] + aga[1] * gb[1] + aga[2] * gb[2]);
                    }
                }
            }
            for a in 0..nb {
                for b in 0..a {
                    local[a * nb + b] = local[b * nb + a];
                }
            }
            local
        },
        |t, local| {
            let dofs = space.cell_dofs(t);
            scatter_local_matrix(&mut matrix, dofs, dofs, &local);
        },
    );
    matrix
}

/// Diffusion matrix with the conduction tensor evaluated at the current
/// temperature iterate, `K_ij = (M(T_h) grad basis_j, grad basis_i)_0`.
///
/// Positivity of the diagonal entries is enforced at every quadrature point.
pub fn assemble_diffusion_temperature(
    space: &FemSpace,
    t_field: &FemField,
    model: &ConductivityModel,
    exactness: usize,
) -> Result<CsrMatrix, ModelError> {
    assert!(Arc::ptr_eq(&space.mesh, &t_field.space.mesh));
    let tables = BasisTables::volume(space, exactness);
    let t_tables = BasisTables::volume(&t_field.space, exactness);
    let mut matrix = CsrMatrix::square_pattern(space);
    let nb = tables.nb;
    let nbt = t_tables.nb;
    let mut first_err: Option<ModelError> = None;
    for_each_element(
        space.mesh.num_tets(),
        |t| -> Result<Vec<f64>, ModelError> {
            let geo = ElementGeometry::new(&space.mesh, t);
            let det = geo.det.abs();
            let t_dofs = t_field.space.cell_dofs(t);
            let mut local = vec![0.0; nb * nb];
            let mut phys_grads = vec![[0.0f64; 3]; nb];
            for (q, &w) in tables.rule.weights.iter().enumerate() {
                let tv = &t_tables.vals[q * nbt..(q + 1) * nbt];
                let temp: f64 = tv
                    .iter()
                    .zip(t_dofs)
                    .map(|(v, &d)| v * t_field.coeffs[d])
                    .sum();
                let a_mat = crate::model::tensor_m(temp, model)?;
                for i in 0..nb {
                    phys_grads[i] = geo.grad_to_physical(tables.grads[q * nb + i]);
                }
                let scale = w * det;
                for a in 0..nb {
                    let ga = phys_grads[a];
                    let aga = [
                        a_mat[0][0] * ga[0] + a_mat[0][1] * ga[1] + a_mat[0][2] * ga[2],
                        a_mat[1][0] * ga[0] + a_mat[1][1] * ga[1] + a_mat[1][2] * ga[2],
                        a_mat[2][0] * ga[0] + a_mat[2][1] * ga[1] + a_mat[2][2] * ga[2],
                    ];
                    for b in a..nb {
                        let gb = phys_grads[b];
                        local[a * nb + b] +=
                            scale * (aga[0] * gb[0] + aga[1] * gb[1] + aga[2] * gb[2]);
                    }
                }
            }
            for a in 0..nb {
                for b in 0..a {
                    local[a * nb + b] = local[b * nb + a];
                }
            }
            Ok(local)
        },
        |t, local| match local {
            Ok(local) => {
                let dofs = space.cell_dofs(t);
                scatter_local_matrix(&mut matrix, dofs, dofs, &local);
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        },
    );
    match first_err {
        None => Ok(matrix),
        Some(e) => Err(e),
    }
}

/// Action `y_i = (M(T_h) grad T_h, grad basis_i)_0` without assembling a matrix.
pub fn diffusion_apply_temperature(
    t_field: &FemField,
    model: &ConductivityModel,
    exactness: usize,
) -> Result<Vec<f64>, ModelError> {
    let space = &t_field.space;
    let tables = BasisTables::volume(space, exactness);
    let nb = tables.nb;
    let mut out = vec![0.0; space.num_dofs];
    let mut first_err: Option<ModelError> = None;
    for_each_element(
        space.mesh.num_tets(),
        |t| -> Result<Vec<f64>, ModelError> {
            let geo = ElementGeometry::new(&space.mesh, t);
            let det = geo.det.abs();
            let dofs = space.cell_dofs(t);
            let mut local = vec![0.0; nb];
            let mut phys_grads = vec![[0.0f64; 3]; nb];
            for (q, &w) in tables.rule.weights.iter().enumerate() {
                let nv = &tables.vals[q * nb..(q + 1) * nb];
                let temp: f64 = nv
                    .iter()
                    .zip(dofs)
                    .map(|(v, &d)| v * t_field.coeffs[d])
                    .sum();
                let a_mat = crate::model::tensor_m(temp, model)?;
                let mut grad_t = [0.0; 3];
                for i in 0..nb {
                    phys_grads[i] = geo.grad_to_physical(tables.grads[q * nb + i]);
                    let c = t_field.coeffs[dofs[i]];
                    grad_t[0] += c * phys_grads[i][0];
                    grad_t[1] += c * phys_grads[i][1];
                    grad_t[2] += c * phys_grads[i][2];
                }
                let flux = [
                    a_mat[0][0] * grad_t[0] + a_mat[0][1] * grad_t[1] + a_mat[0][2] * grad_t[2],
                    a_mat[1][0] * grad_t[0] + a_mat[1][1] * grad_t[1] + a_mat[1][2] * grad_t[2],
                    a_mat[2][0] * grad_t[0] + a_mat[2][1] * grad_t[1] + a_mat[2][2] * grad_t[2],
                ];
                let scale = w * det;
                for (a, l) in local.iter_mut().enumerate() {
                    let g = phys_grads[a];
                    *l += scale * (flux[0] * g[0] + flux[1] * g[1] + flux[2] * g[2]);
                }
            }
            Ok(local)
        },
        |t, local| match local {
            Ok(local) => {
                for (a, &d) in space.cell_dofs(t).iter().enumerate() {
                    out[d] += local[a];
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        },
    );
    match first_err {
        None => Ok(out),
        Some(e) => Err(e),
    }
}

struct FaceQuadrature {
    /// Physical points per face quadrature node.
    points: Vec<[f64; 3]>,
    /// Owning-cell reference coordinates of those nodes.
    ref_points: Vec<[f64; 3]>,
    /// Physical weights (include the doubled face area).
    weights: Vec<f64>,
}

fn face_quadrature(mesh: &TetMesh, face_idx: usize, rule: &QuadratureRule) -> FaceQuadrature {
    let bf = &mesh.boundary_faces[face_idx];
    let a = mesh.vertices[bf.vertices[0]];
    let b = mesh.vertices[bf.vertices[1]];
    let c = mesh.vertices[bf.vertices[2]];
    let geo = ElementGeometry::new(mesh, bf.tet);
    let scale = 2.0 * bf.area; // reference triangle has area 1/2
    let mut points = Vec::with_capacity(rule.len());
    let mut ref_points = Vec::with_capacity(rule.len());
    let mut weights = Vec::with_capacity(rule.len());
    for (pt, &w) in rule.points.iter().zip(&rule.weights) {
        let (u, v) = (pt[0], pt[1]);
        let x = [
            a[0] + u * (b[0] - a[0]) + v * (c[0] - a[0]),
            a[1] + u * (b[1] - a[1]) + v * (c[1] - a[1]),
            a[2] + u * (b[2] - a[2]) + v * (c[2] - a[2]),
        ];
        // reference coordinates within the owning tet: r = J^{-1} (x - v0)
        let d = [x[0] - geo.origin[0], x[1] - geo.origin[1], x[2] - geo.origin[2]];
        let r = [
            geo.inv_jt[0][0] * d[0] + geo.inv_jt[1][0] * d[1] + geo.inv_jt[2][0] * d[2],
            geo.inv_jt[0][1] * d[0] + geo.inv_jt[1][1] * d[1] + geo.inv_jt[2][1] * d[2],
            geo.inv_jt[0][2] * d[0] + geo.inv_jt[1][2] * d[1] + geo.inv_jt[2][2] * d[2],
        ];
        points.push(x);
        ref_points.push(r);
        weights.push(w * scale);
    }
    FaceQuadrature {
        points,
        ref_points,
        weights,
    }
}

/// Boundary mass `B_ij = coefficient * int_Gamma basis_j basis_i`.
pub fn assemble_boundary_mass(space: &FemSpace, coefficient: f64) -> CsrMatrix {
    let rule = QuadratureRule::triangle(2 * space.degree).expect("face rule");
    let mut matrix = CsrMatrix::square_pattern(space);
    let nb = space.element.dim();
    for_each_element(
        space.mesh.boundary_faces.len(),
        |fidx| {
            let fq = face_quadrature(&space.mesh, fidx, &rule);
            let nodes = &space.boundary_face_nodes[fidx];
            let nf = nodes.len();
            let mut vals = vec![0.0; nb];
            let mut local = vec![0.0; nf * nf];
            for (q, &w) in fq.weights.iter().enumerate() {
                space.element.eval_basis(fq.ref_points[q], &mut vals);
                for (ai, &a) in nodes.iter().enumerate() {
                    let na = coefficient * w * vals[a];
                    for (bi, &b) in nodes.iter().enumerate() {
                        local[ai * nf + bi] += na * vals[b];
                    }
                }
            }
            local
        },
        |fidx, local| {
            let bf = &space.mesh.boundary_faces[fidx];
            let dofs = space.cell_dofs(bf.tet);
            let nodes = &space.boundary_face_nodes[fidx];
            let rows: Vec<usize> = nodes.iter().map(|&n| dofs[n]).collect();
            scatter_local_matrix(&mut matrix, &rows, &rows, &local);
        },
    );
    matrix
}

/// Generic boundary load `b_i = int_Gamma g(x, n) basis_i`.
pub fn assemble_boundary_load(
    space: &FemSpace,
    exactness: usize,
    g: impl Fn([f64; 3], [f64; 3]) -> f64 + Sync,
) -> Vec<f64> {
    let rule = QuadratureRule::triangle(exactness).expect("face rule");
    let nb = space.element.dim();
    let mut out = vec![0.0; space.num_dofs];
    for_each_element(
        space.mesh.boundary_faces.len(),
        |fidx| {
            let bf = &space.mesh.boundary_faces[fidx];
            let fq = face_quadrature(&space.mesh, fidx, &rule);
            let nodes = &space.boundary_face_nodes[fidx];
            let mut vals = vec![0.0; nb];
            let mut local = vec![0.0; nodes.len()];
            for (q, &w) in fq.weights.iter().enumerate() {
                space.element.eval_basis(fq.ref_points[q], &mut vals);
                let gw = w * g(fq.points[q], bf.normal);
                for (ai, &a) in nodes.iter().enumerate() {
                    local[ai] += gw * vals[a];
                }
            }
            local
        },
        |fidx, local| {
            let bf = &space.mesh.boundary_faces[fidx];
            let dofs = space.cell_dofs(bf.tet);
            for (ai, &n) in space.boundary_face_nodes[fidx].iter().enumerate() {
                out[dofs[n]] += local[ai];
            }
        },
    );
    out
}

/// Boundary load `<f(T_h), basis_i>` and optionally its Jacobian
/// `<f'(T_h) basis_j, basis_i>`, evaluated on the trace of the temperature field.
pub fn assemble_boundary_blackbody(
    space: &FemSpace,
    t_field: &FemField,
    params: &PhysicalParams,
    exactness: usize,
    with_jacobian: bool,
) -> (Vec<f64>, Option<CsrMatrix>) {
    assert!(Arc::ptr_eq(&space.mesh, &t_field.space.mesh));
    let rule = QuadratureRule::triangle(exactness).expect("face rule");
    let nb = space.element.dim();
    let nbt = t_field.space.element.dim();
    let same_space = std::ptr::eq(space as *const FemSpace, Arc::as_ptr(&t_field.space));
    let mut out = vec![0.0; space.num_dofs];
    let mut jac = with_jacobian.then(|| CsrMatrix::square_pattern(space));
    for_each_element(
        space.mesh.boundary_faces.len(),
        |fidx| {
            let fq = face_quadrature(&space.mesh, fidx, &rule);
            let nodes = &space.boundary_face_nodes[fidx];
            let nf = nodes.len();
            let t_dofs = t_field.space.cell_dofs(space.mesh.boundary_faces[fidx].tet);
            let mut vals = vec![0.0; nb];
            let mut t_vals = vec![0.0; nbt];
            let mut local = vec![0.0; nf];
            let mut local_jac = vec![0.0; if with_jacobian { nf * nf } else { 0 }];
            for (q, &w) in fq.weights.iter().enumerate() {
                space.element.eval_basis(fq.ref_points[q], &mut vals);
                let temp = if same_space {
                    vals.iter()
                        .zip(t_dofs)
                        .map(|(v, &d)| v * t_field.coeffs[d])
                        .sum()
                } else {
                    t_field
                        .space
                        .element
                        .eval_basis(fq.ref_points[q], &mut t_vals);
                    t_vals
                        .iter()
                        .zip(t_dofs)
                        .map(|(v, &d)| v * t_field.coeffs[d])
                        .sum()
                };
                let f = w * params.black_body(temp);
                for (ai, &a) in nodes.iter().enumerate() {
                    local[ai] += f * vals[a];
                }
                if with_jacobian {
                    let fp = w * params.black_body_deriv(temp);
                    for (ai, &a) in nodes.iter().enumerate() {
                        let na = fp * vals[a];
                        for (bi, &b) in nodes.iter().enumerate() {
                            local_jac[ai * nf + bi] += na * vals[b];
                        }
                    }
                }
            }
            (local, local_jac)
        },
        |fidx, (local, local_jac)| {
            let bf = &space.mesh.boundary_faces[fidx];
            let dofs = space.cell_dofs(bf.tet);
            let nodes = &space.boundary_face_nodes[fidx];
            for (ai, &n) in nodes.iter().enumerate() {
                out[dofs[n]] += local[ai];
            }
            if let Some(jac) = jac.as_mut() {
                let rows: Vec<usize> = nodes.iter().map(|&n| dofs[n]).collect();
                scatter_local_matrix(jac, &rows, &rows, &local_jac);
            }
        },
    );
    (out, jac)
}

/// Generic volume load `b_i = int f(x, cell) basis_i`.
pub fn assemble_volume_load(
    space: &FemSpace,
    exactness: usize,
    f: impl Fn([f64; 3], usize) -> f64 + Sync,
) -> Vec<f64> {
    let tables = BasisTables::volume(space, exactness);
    let nb = tables.nb;
    let mut out = vec![0.0; space.num_dofs];
    for_each_element(
        space.mesh.num_tets(),
        |t| {
            let geo = ElementGeometry::new(&space.mesh, t);
            let det = geo.det.abs();
            let mut local = vec![0.0; nb];
            for (q, &w) in tables.rule.weights.iter().enumerate() {
                let x = geo.to_physical(tables.rule.points[q]);
                let fw = w * det * f(x, t);
                let nv = &tables.vals[q * nb..(q + 1) * nb];
                for (a, l) in local.iter_mut().enumerate() {
                    *l += fw * nv[a];
                }
            }
            local
        },
        |t, local| {
            for (a, &d) in space.cell_dofs(t).iter().enumerate() {
                out[d] += local[a];
            }
        },
    );
    out
}

/// Volume load `b_i = int f(T_h) basis_i` on `space` (which may differ from the
/// temperature space) and optionally the Jacobian `J_ij = int f'(T_h) basis_j basis_i`
/// (same-space only).
pub fn assemble_blackbody_load(
    space: &FemSpace,
    t_field: &FemField,
    params: &PhysicalParams,
    exactness: usize,
    with_jacobian: bool,
) -> (Vec<f64>, Option<CsrMatrix>) {
    assert!(Arc::ptr_eq(&space.mesh, &t_field.space.mesh));
    let same_space = std::ptr::eq(space as *const FemSpace, Arc::as_ptr(&t_field.space));
    assert!(!with_jacobian || same_space);
    let tables = BasisTables::volume(space, exactness);
    let t_tables = if same_space {
        None
    } else {
        Some(BasisTables::volume(&t_field.space, exactness))
    };
    let nb = tables.nb;
    let mut out = vec![0.0; space.num_dofs];
    let mut jac = with_jacobian.then(|| CsrMatrix::square_pattern(space));
    for_each_element(
        space.mesh.num_tets(),
        |t| {
            let geo = ElementGeometry::new(&space.mesh, t);
            let det = geo.det.abs();
            let t_dofs = t_field.space.cell_dofs(t);
            let mut local = vec![0.0; nb];
            let mut local_jac = vec![0.0; if with_jacobian { nb * nb } else { 0 }];
            for (q, &w) in tables.rule.weights.iter().enumerate() {
                let nv = &tables.vals[q * nb..(q + 1) * nb];
                let temp: f64 = match &t_tables {
                    None => nv
                        .iter()
                        .zip(t_dofs)
                        .map(|(v, &d)| v * t_field.coeffs[d])
                        .sum(),
                    Some(tt) => {
                        let tv = &tt.vals[q * tt.nb..(q + 1) * tt.nb];
                        tv.iter()
                            .zip(t_dofs)
                            .map(|(v, &d)| v * t_field.coeffs[d])
                            .sum()
                    }
                };
                let scale = w * det;
                let f = scale * params.black_body(temp);
                for (a, l) in local.iter_mut().enumerate() {
                    *l += f * nv[a];
                }
                if with_jacobian {
                    let fp = scale * params.black_body_deriv(temp);
                    for a in 0..nb {
                        let na = fp * nv[a];
                        for b in a..nb {
                            local_jac[a * nb + b] += na * nv[b];
                        }
                    }
                }
            }
            if with_jacobian {
                for a in 0..nb {
                    for b in 0..a {
                        local_jac[a * nb + b] = local_jac[b * nb + a];
                    }
                }
            }
            (local, local_jac)
        },
        |t, (local, local_jac)| {
            let dofs = space.cell_dofs(t);
            for (a, &d) in dofs.iter().enumerate() {
                out[d] += local[a];
            }
            if let Some(jac) = jac.as_mut() {
                scatter_local_matrix(jac, dofs, dofs, &local_jac);
            }
        },
    );
    (out, jac)
}

/// Manufactured volume loads for the temperature and both moment equations
/// in one sweep: the source closure returns `(S_T, [S_phi1, S_phi2])` so
/// shared subexpressions are evaluated once per quadrature point.
pub fn assemble_fused_mms_loads(
    t_space: &FemSpace,
    phi_space: &FemSpace,
    exactness: usize,
    f: impl Fn([f64; 3]) -> (f64, [f64; 2]) + Sync + Send,
) -> (Vec<f64>, [Vec<f64>; 2]) {
    assert!(Arc::ptr_eq(&t_space.mesh, &phi_space.mesh));
    let t_tables = BasisTables::volume(t_space, exactness);
    let p_tables = BasisTables::volume(phi_space, exactness);
    let (nt, np) = (t_tables.nb, p_tables.nb);
    let mut out_t = vec![0.0; t_space.num_dofs];
    let mut out_phi = [vec![0.0; phi_space.num_dofs], vec![0.0; phi_space.num_dofs]];
    for_each_element(
        t_space.mesh.num_tets(),
        |t| {
            let geo = ElementGeometry::new(&t_space.mesh, t);
            let det = geo.det.abs();
            let mut local_t = vec![0.0; nt];
            let mut local_p = vec![0.0; 2 * np];
            for (q, &w) in t_tables.rule.weights.iter().enumerate() {
                let x = geo.to_physical(t_tables.rule.points[q]);
                let (st, sp) = f(x);
                let scale = w * det;
                let tv = &t_tables.vals[q * nt..(q + 1) * nt];
                let fw = scale * st;
                for (a, l) in local_t.iter_mut().enumerate() {
                    *l += fw * tv[a];
                }
                let pv = &p_tables.vals[q * np..(q + 1) * np];
                for j in 0..2 {
                    let fw = scale * sp[j];
                    for a in 0..np {
                        local_p[j * np + a] += fw * pv[a];
                    }
                }
            }
            (local_t, local_p)
        },
        |t, (local_t, local_p)| {
            for (a, &d) in t_space.cell_dofs(t).iter().enumerate() {
                out_t[d] += local_t[a];
            }
            for (a, &d) in phi_space.cell_dofs(t).iter().enumerate() {
                out_phi[0][d] += local_p[a];
                out_phi[1][d] += local_p[np + a];
            }
        },
    );
    (out_t, out_phi)
}

/// Quadrature of a pointwise function over the mesh volume.
pub fn integrate_volume(mesh: &TetMesh, exactness: usize, f: impl Fn([f64; 3]) -> f64 + Sync) -> f64 {
    integrate_volume_local(mesh, exactness, |_, _, x| f(x))
}

/// Quadrature over the volume with access to the owning cell and reference
/// point, for integrands built from discrete fields.
pub fn integrate_volume_local(
    mesh: &TetMesh,
    exactness: usize,
    f: impl Fn(usize, [f64; 3], [f64; 3]) -> f64 + Sync,
) -> f64 {
    let rule = QuadratureRule::tetrahedron(exactness).expect("volume rule");
    let partial: Vec<f64> = (0..mesh.num_tets())
        .into_par_iter()
        .map(|t| {
            let geo = ElementGeometry::new(mesh, t);
            let det = geo.det.abs();
            rule.points
                .iter()
                .zip(&rule.weights)
                .map(|(&r, &w)| w * det * f(t, r, geo.to_physical(r)))
                .sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

/// Quadrature of a pointwise function over the domain boundary.
pub fn integrate_boundary(
    mesh: &TetMesh,
    exactness: usize,
    f: impl Fn([f64; 3]) -> f64 + Sync,
) -> f64 {
    integrate_boundary_local(mesh, exactness, |_, _, x| f(x))
}

/// Boundary quadrature with owning-cell reference coordinates.
pub fn integrate_boundary_local(
    mesh: &TetMesh,
    exactness: usize,
    f: impl Fn(usize, [f64; 3], [f64; 3]) -> f64 + Sync,
) -> f64 {
    let rule = QuadratureRule::triangle(exactness).expect("face rule");
    let partial: Vec<f64> = (0..mesh.boundary_faces.len())
        .into_par_iter()
        .map(|fidx| {
            let tet = mesh.boundary_faces[fidx].tet;
            let fq = face_quadrature(mesh, fidx, &rule);
            fq.ref_points
                .iter()
                .zip(&fq.points)
                .zip(&fq.weights)
                .map(|((&r, &x), &w)| w * f(tet, r, x))
                .sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

/// The 2x2 block operator of the radiative moment system.
///
/// Block `(j, j)` is `tau^2 mu_j^2 K_L + k0 M + (tau/3) mu_j^2 alpha_j B`;
/// block `(1, 2)` couples with `(tau/3) mu_1^2 beta_2 B` and `(2, 1)` with
/// `(tau/3) mu_2^2 beta_1 B`. The matrix is constant along a run.
pub struct RadiativeSystem {
    pub phi_space: Arc<FemSpace>,
    pub matrix: CsrMatrix,
    /// `int_Gamma psi_i` per dof, for the constant `eta_j f(T_m)` boundary data.
    pub boundary_ones: Vec<f64>,
    pub params: PhysicalParams,
    /// Quadrature exactness for the `f(T_h)` volume load.
    pub load_exactness: usize,
}

/// Concatenates four blocks (patterns may differ) into one 2n x 2n CSR.
fn block_2x2(n: usize, blocks: [(&CsrMatrix, f64); 4]) -> CsrMatrix {
    // blocks in order (0,0), (0,1), (1,0), (1,1) with scale factors
    let mut row_offsets = Vec::with_capacity(2 * n + 1);
    row_offsets.push(0usize);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    for brow in 0..2 {
        let (left, right) = (&blocks[2 * brow], &blocks[2 * brow + 1]);
        for i in 0..n {
            for (m, shift) in [(left, 0usize), (right, n)] {
                let (mat, s) = (m.0, m.1);
                for k in mat.row_offsets[i]..mat.row_offsets[i + 1] {
                    col_indices.push(mat.col_indices[k] + shift);
                    values.push(s * mat.values[k]);
                }
            }
            row_offsets.push(col_indices.len());
        }
    }
    CsrMatrix {
        nrows: 2 * n,
        ncols: 2 * n,
        row_offsets,
        col_indices,
        values,
    }
}

pub fn build_radiative_system(
    phi_space: &Arc<FemSpace>,
    params: &PhysicalParams,
    theta: f64,
    load_exactness: usize,
) -> Result<RadiativeSystem, ModelError> {
    let l_tensor = crate::model::tensor_l(params, theta)?;
    let k_l = assemble_diffusion_const(phi_space, l_tensor);
    let mass = assemble_mass(phi_space);
    let bmass = assemble_boundary_mass(phi_space, 1.0);
    let n = phi_space.num_dofs;
    let tau3 = params.tau / 3.0;
    let mu = [params.mu1, params.mu2];
    let alpha_j = [params.alpha1, params.alpha2];
    let beta_cross = [params.beta2, params.beta1]; // block (1,2) uses beta2, (2,1) beta1
    let mut diag = Vec::with_capacity(2);
    for j in 0..2 {
        let mut d = k_l.clone();
        d.scale(params.tau * params.tau * mu[j] * mu[j]);
        d.add_scaled(&mass, params.k0);
        d.add_scaled(&bmass, tau3 * mu[j] * mu[j] * alpha_j[j]);
        diag.push(d);
    }
    let matrix = block_2x2(
        n,
        [
            (&diag[0], 1.0),
            (&bmass, tau3 * mu[0] * mu[0] * beta_cross[0]),
            (&bmass, tau3 * mu[1] * mu[1] * beta_cross[1]),
            (&diag[1], 1.0),
        ],
    );
    let boundary_ones = assemble_boundary_load(phi_space, 2 * phi_space.degree, |_, _| 1.0);
    Ok(RadiativeSystem {
        phi_space: phi_space.clone(),
        matrix,
        boundary_ones,
        params: params.clone(),
        load_exactness,
    })
}

impl RadiativeSystem {
    /// Right-hand side driven by a discrete temperature field:
    /// `(tau/3) mu_j^2 eta_j <f(T_m), psi> + 4 pi k0 (f(T_h), psi)`.
    pub fn rhs_from_field(&self, t_field: &FemField) -> Vec<f64> {
        let (fload, _) = assemble_blackbody_load(
            &self.phi_space,
            t_field,
            &self.params,
            self.load_exactness,
            false,
        );
        self.compose_rhs(&fload)
    }

    /// Right-hand side driven by a pointwise temperature function (used by the
    /// initialization, where the initial datum is known in closed form).
    pub fn rhs_from_fn(&self, t0: impl Fn([f64; 3]) -> f64 + Sync) -> Vec<f64> {
        let p = self.params.clone();
        let fload = assemble_volume_load(&self.phi_space, self.load_exactness, |x, _| {
            p.black_body(t0(x))
        });
        self.compose_rhs(&fload)
    }

    fn compose_rhs(&self, fload: &[f64]) -> Vec<f64> {
        let n = self.phi_space.num_dofs;
        let p = &self.params;
        let f_amb = p.black_body(p.t_m);
        let tau3 = p.tau / 3.0;
        let mu = [p.mu1, p.mu2];
        let eta = [p.eta1, p.eta2];
        let four_pi_k0 = 4.0 * std::f64::consts::PI * p.k0;
        let mut rhs = vec![0.0; 2 * n];
        for j in 0..2 {
            let c_eta = tau3 * mu[j] * mu[j] * eta[j] * f_amb;
            for i in 0..n {
                rhs[j * n + i] = four_pi_k0 * fload[i] + c_eta * self.boundary_ones[i];
            }
        }
        rhs
    }

}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const UNIT: [[f64; 2]; 3] = [[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]];

    fn unit_space(n: usize, p: usize) -> Arc<FemSpace> {
        let mesh = Arc::new(TetMesh::build_box_mesh(UNIT, [n, n, n]).unwrap());
        FemSpace::new(mesh, p).unwrap()
    }

    fn reference_tet_space(p: usize) -> Arc<FemSpace> {
        let mesh = Arc::new(
            TetMesh::from_raw(
                vec![
                    [0.0, 0.0, 0.0],
                    [1.0, 0.0, 0.0],
                    [0.0, 1.0, 0.0],
                    [0.0, 0.0, 1.0],
                ],
                vec![[0, 1, 2, 3]],
            )
            .unwrap(),
        );
        FemSpace::new(mesh, p).unwrap()
    }

    #[test]
    fn mass_row_sums_and_reference_values() {
        let space = unit_space(2, 2);
        let m = assemble_mass(&space);
        let total: f64 = m.values.iter().sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
        assert!(m.symmetry_error() < 1e-14);

        // P1 on the reference tet: M_ii = 1/60, M_ij = 1/120
        let s1 = reference_tet_space(1);
        let m1 = assemble_mass(&s1);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 / 60.0 } else { 1.0 / 120.0 };
                assert_relative_eq!(m1.get(i, j), expect, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn mass_is_spd() {
        let space = unit_space(2, 2);
        let m = assemble_mass(&space);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..space.num_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let quad: f64 = m.mul_vec(&x).iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!(quad > 0.0);
        }
    }

    #[test]
    fn diffusion_kernel_and_linear_energy() {
        let space = unit_space(2, 2);
        let k = assemble_diffusion_const(&space, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(k.symmetry_error() < 1e-13);
        let ones = vec![1.0; space.num_dofs];
        for v in k.mul_vec(&ones) {
            assert!(v.abs() < 1e-12);
        }
        // u = x: int |grad u|^2 over the unit cube = 1
        let u = FemField::interpolate(&space, |x| x[0]);
        let ku = k.mul_vec(&u.coeffs);
        let energy: f64 = ku.iter().zip(&u.coeffs).map(|(a, b)| a * b).sum();
        assert_relative_eq!(energy, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn rotated_tensor_matches_rotated_frame() {
        // theta rotation of the diagonal tensor equals rotating a linear field
        let space = unit_space(2, 2);
        let theta = std::f64::consts::FRAC_PI_4;
        let model = crate::model::ConductivityModel {
            theta,
            m11: crate::model::Polynomial::constant(2.0),
            m22: crate::model::Polynomial::constant(5.0),
            m33: crate::model::Polynomial::constant(9.0),
        };
        let m_rot = crate::model::tensor_m(0.0, &model).unwrap();
        let k_rot = assemble_diffusion_const(&space, m_rot);
        // direction d rotated by P(theta): energy of u = d.x under rotated tensor
        // equals energy of u = (P^T d).x under the diagonal tensor
        let p = crate::model::rotation_matrix(theta);
        let d = [0.3, -0.7, 0.55];
        let dt = [
            p[0][0] * d[0] + p[1][0] * d[1] + p[2][0] * d[2],
            p[0][1] * d[0] + p[1][1] * d[1] + p[2][1] * d[2],
            p[0][2] * d[0] + p[1][2] * d[1] + p[2][2] * d[2],
        ];
        let u = FemField::interpolate(&space, |x| d[0] * x[0] + d[1] * x[1] + d[2] * x[2]);
        let e_rot: f64 = k_rot
            .mul_vec(&u.coeffs)
            .iter()
            .zip(&u.coeffs)
            .map(|(a, b)| a * b)
            .sum();
        // analytic: |Omega| * (M_diag d') . d'
        let expect = 2.0 * dt[0] * dt[0] + 5.0 * dt[1] * dt[1] + 9.0 * dt[2] * dt[2];
        assert_relative_eq!(e_rot, expect, max_relative = 1e-12);
    }

    #[test]
    fn boundary_mass_constants_and_interior_rows() {
        let space = unit_space(2, 2);
        let b = assemble_boundary_mass(&space, 1.0);
        assert!(b.symmetry_error() < 1e-13);
        let ones = vec![1.0; space.num_dofs];
        let total: f64 = b.mul_vec(&ones).iter().sum();
        assert_relative_eq!(total, 6.0, max_relative = 1e-12);
        // rows of interior dofs vanish
        let boundary: std::collections::HashSet<usize> =
            space.boundary_dofs.iter().copied().collect();
        for i in 0..space.num_dofs {
            if !boundary.contains(&i) {
                for k in b.row_offsets[i]..b.row_offsets[i + 1] {
                    assert_eq!(b.values[k], 0.0);
                }
            }
        }
        // linear scaling in the coefficient
        let b3 = assemble_boundary_mass(&space, 3.0);
        for (v3, v1) in b3.values.iter().zip(&b.values) {
            assert_relative_eq!(*v3, 3.0 * v1, epsilon = 1e-14);
        }
    }

    #[test]
    fn blackbody_load_values_and_jacobian_fd() {
        let space = unit_space(1, 2);
        let params = PhysicalParams::default();
        let zero = FemField::zeros(&space);
        let (load, _) = assemble_blackbody_load(&space, &zero, &params, 4 * 2, false);
        assert!(load.iter().all(|&v| v == 0.0));

        let t300 = FemField::interpolate(&space, |_| 300.0);
        let (load, jac) = assemble_blackbody_load(&space, &t300, &params, 4 * 2, true);
        let total: f64 = load.iter().sum();
        assert_relative_eq!(total, 459.27, max_relative = 1e-12);
        let jac = jac.unwrap();
        assert!(jac.symmetry_error() < 1e-12);

        // directional finite differences of the load match the Jacobian
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base: Vec<f64> = (0..space.num_dofs).map(|_| rng.gen_range(200.0..2000.0)).collect();
        let t = FemField::from_coeffs(&space, base.clone());
        let (_, jac) = assemble_blackbody_load(&space, &t, &params, 8, true);
        let jac = jac.unwrap();
        for _ in 0..20 {
            let dir: Vec<f64> = (0..space.num_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let eps = 1e-3;
            let tp = FemField::from_coeffs(
                &space,
                base.iter().zip(&dir).map(|(b, d)| b + eps * d).collect(),
            );
            let tm = FemField::from_coeffs(
                &space,
                base.iter().zip(&dir).map(|(b, d)| b - eps * d).collect(),
            );
            let (lp, _) = assemble_blackbody_load(&space, &tp, &params, 8, false);
            let (lm, _) = assemble_blackbody_load(&space, &tm, &params, 8, false);
            let jd = jac.mul_vec(&dir);
            for i in 0..space.num_dofs {
                let fd = (lp[i] - lm[i]) / (2.0 * eps);
                let scale = jd[i].abs().max(1e-8);
                assert!(
                    (jd[i] - fd).abs() / scale < 1e-6,
                    "dof {i}: J.d = {} vs fd {}",
                    jd[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn volume_load_partition_of_unity() {
        let space = unit_space(2, 3);
        let zero = assemble_volume_load(&space, 4, |_, _| 0.0);
        assert!(zero.iter().all(|&v| v == 0.0));
        let one = assemble_volume_load(&space, 4, |_, _| 1.0);
        let total: f64 = one.iter().sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn mms_source_quadrature_refinement() {
        // a transcendental source integrated at the working exactness matches
        // a much finer rule to tight relative accuracy
        let space = unit_space(2, 2);
        let src = |x: [f64; 3]| {
            let s = (2.0 * std::f64::consts::PI * x[0]).sin()
                * (2.0 * std::f64::consts::PI * x[1]).sin()
                * (2.0 * std::f64::consts::PI * x[2]).sin();
            (12.0 * std::f64::consts::PI * std::f64::consts::PI + 1.0) * s
        };
        let coarse = assemble_volume_load(&space, 14, |x, _| src(x));
        let fine = assemble_volume_load(&space, 30, |x, _| src(x));
        let norm: f64 = fine.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff: f64 = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff / norm < 1e-9, "relative quadrature deviation {}", diff / norm);
    }

    #[test]
    fn integrate_helpers() {
        let mesh = Arc::new(TetMesh::build_box_mesh(UNIT, [2, 2, 2]).unwrap());
        let vol = integrate_volume(&mesh, 2, |_| 1.0);
        assert_relative_eq!(vol, 1.0, max_relative = 1e-13);
        let area = integrate_boundary(&mesh, 2, |_| 1.0);
        assert_relative_eq!(area, 6.0, max_relative = 1e-13);
        let xint = integrate_volume(&mesh, 3, |x| x[0]);
        assert_relative_eq!(xint, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn cross_mass_against_constant_fields() {
        let mesh = Arc::new(TetMesh::build_box_mesh(UNIT, [2, 2, 2]).unwrap());
        let t_space = FemSpace::new(mesh.clone(), 2).unwrap();
        let phi_space = FemSpace::new(mesh, 1).unwrap();
        let mx = assemble_cross_mass(&t_space, &phi_space);
        let ones_phi = vec![1.0; phi_space.num_dofs];
        let total: f64 = mx.mul_vec(&ones_phi).iter().sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn matrix_market_dump() {
        let space = reference_tet_space(1);
        let m = assemble_mass(&space);
        let mut buf = Vec::new();
        m.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("%%MatrixMarket"));
        assert!(text.lines().count() == 2 + m.nnz());
    }
}
