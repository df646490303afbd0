//! Dense brute-force reference implementations used by the oracle tests.
//!
//! Everything here is computed from exact monomial integral formulas on the
//! reference simplex: basis functions are expanded into trivariate monomials,
//! products are integrated term by term, boundary integrals restrict the
//! polynomials to reference faces. No quadrature, no sparse storage, no reuse
//! of the production assembly paths.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use sp3fem::elements::{tet_monomial_integral, tri_monomial_integral, ReferenceElement};
use sp3fem::mesh::TetMesh;
use sp3fem::model::{Mat3, PhysicalParams};
use sp3fem::spaces::{ElementGeometry, FemSpace};

/// Trivariate polynomial as a monomial-exponent map.
#[derive(Debug, Clone, Default)]
pub struct Poly3 {
    pub terms: BTreeMap<(u8, u8, u8), f64>,
}

impl Poly3 {
    pub fn constant(c: f64) -> Self {
        let mut p = Self::default();
        if c != 0.0 {
            p.terms.insert((0, 0, 0), c);
        }
        p
    }

    /// Linear polynomial `c0 + cx x + cy y + cz z`.
    pub fn linear(c0: f64, cx: f64, cy: f64, cz: f64) -> Self {
        let mut p = Self::default();
        for (key, v) in [
            ((0, 0, 0), c0),
            ((1, 0, 0), cx),
            ((0, 1, 0), cy),
            ((0, 0, 1), cz),
        ] {
            if v != 0.0 {
                p.terms.insert(key, v);
            }
        }
        p
    }

    pub fn add_assign(&mut self, other: &Poly3, scale: f64) {
        for (&k, &v) in &other.terms {
            *self.terms.entry(k).or_insert(0.0) += scale * v;
        }
    }

    pub fn mul(&self, other: &Poly3) -> Poly3 {
        let mut out = Poly3::default();
        for (&(a1, b1, c1), &v1) in &self.terms {
            for (&(a2, b2, c2), &v2) in &other.terms {
                *out.terms.entry((a1 + a2, b1 + b2, c1 + c2)).or_insert(0.0) += v1 * v2;
            }
        }
        out
    }

    pub fn pow(&self, n: usize) -> Poly3 {
        let mut out = Poly3::constant(1.0);
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }

    pub fn deriv(&self, axis: usize) -> Poly3 {
        let mut out = Poly3::default();
        for (&(a, b, c), &v) in &self.terms {
            let e = [a, b, c][axis];
            if e > 0 {
                let mut k = [a, b, c];
                k[axis] -= 1;
                *out.terms.entry((k[0], k[1], k[2])).or_insert(0.0) += v * e as f64;
            }
        }
        out
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        self.terms
            .iter()
            .map(|(&(a, b, c), &v)| {
                v * x[0].powi(a as i32) * x[1].powi(b as i32) * x[2].powi(c as i32)
            })
            .sum()
    }

    /// Exact integral over the reference tetrahedron.
    pub fn integrate_ref_tet(&self) -> f64 {
        self.terms
            .iter()
            .map(|(&(a, b, c), &v)| v * tet_monomial_integral(a as usize, b as usize, c as usize))
            .sum()
    }

    /// Substitutes affine forms `x = x0 + xu u + xv v` (same for y, z),
    /// producing a bivariate polynomial in `(u, v)`.
    pub fn restrict(&self, origin: [f64; 3], du: [f64; 3], dv: [f64; 3]) -> Poly2 {
        let axes: Vec<Poly2> = (0..3)
            .map(|i| Poly2::linear(origin[i], du[i], dv[i]))
            .collect();
        let mut out = Poly2::default();
        for (&(a, b, c), &v) in &self.terms {
            let mut term = Poly2::constant(v);
            for (axis, &e) in [a, b, c].iter().enumerate() {
                for _ in 0..e {
                    term = term.mul(&axes[axis]);
                }
            }
            out.add_assign(&term, 1.0);
        }
        out
    }
}

/// Bivariate polynomial for face restrictions.
#[derive(Debug, Clone, Default)]
pub struct Poly2 {
    pub terms: BTreeMap<(u8, u8), f64>,
}

impl Poly2 {
    pub fn constant(c: f64) -> Self {
        let mut p = Self::default();
        if c != 0.0 {
            p.terms.insert((0, 0), c);
        }
        p
    }

    pub fn linear(c0: f64, cu: f64, cv: f64) -> Self {
        let mut p = Self::default();
        for (k, v) in [((0, 0), c0), ((1, 0), cu), ((0, 1), cv)] {
            if v != 0.0 {
                p.terms.insert(k, v);
            }
        }
        p
    }

    pub fn add_assign(&mut self, other: &Poly2, scale: f64) {
        for (&k, &v) in &other.terms {
            *self.terms.entry(k).or_insert(0.0) += scale * v;
        }
    }

    pub fn mul(&self, other: &Poly2) -> Poly2 {
        let mut out = Poly2::default();
        for (&(a1, b1), &v1) in &self.terms {
            for (&(a2, b2), &v2) in &other.terms {
                *out.terms.entry((a1 + a2, b1 + b2)).or_insert(0.0) += v1 * v2;
            }
        }
        out
    }

    pub fn pow(&self, n: usize) -> Poly2 {
        let mut out = Poly2::constant(1.0);
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }

    /// Exact integral over the reference triangle.
    pub fn integrate_ref_tri(&self) -> f64 {
        self.terms
            .iter()
            .map(|(&(a, b), &v)| v * tri_monomial_integral(a as usize, b as usize))
            .sum()
    }
}

/// Reference-coordinate basis polynomials of a Lagrange element.
pub fn basis_polynomials(element: &ReferenceElement) -> Vec<Poly3> {
    let p = element.degree as f64;
    let lam = [
        Poly3::linear(1.0, -1.0, -1.0, -1.0),
        Poly3::linear(0.0, 1.0, 0.0, 0.0),
        Poly3::linear(0.0, 0.0, 1.0, 0.0),
        Poly3::linear(0.0, 0.0, 0.0, 1.0),
    ];
    element
        .multi_indices
        .iter()
        .map(|idx| {
            let mut poly = Poly3::constant(1.0);
            for k in 0..4 {
                for m in 0..idx[k] {
                    // factor (p lam_k - m) / (i_k - m)
                    let mut factor = lam[k].clone();
                    factor
                        .terms
                        .values_mut()
                        .for_each(|v| *v *= p / (idx[k] - m) as f64);
                    *factor.terms.entry((0, 0, 0)).or_insert(0.0) -=
                        m as f64 / (idx[k] - m) as f64;
                    poly = poly.mul(&factor);
                }
            }
            poly
        })
        .collect()
}

/// Dense exact-assembly oracle over a full space.
pub struct DenseOracle {
    pub space: Arc<FemSpace>,
    pub basis: Vec<Poly3>,
    /// Physical gradient polynomials per tet and basis function.
    pub grads: Vec<Vec<[Poly3; 3]>>,
    pub dets: Vec<f64>,
}

impl DenseOracle {
    pub fn new(space: &Arc<FemSpace>) -> Self {
        let basis = basis_polynomials(&space.element);
        let ref_grads: Vec<[Poly3; 3]> = basis
            .iter()
            .map(|b| [b.deriv(0), b.deriv(1), b.deriv(2)])
            .collect();
        let mut grads = Vec::new();
        let mut dets = Vec::new();
        for t in 0..space.mesh.num_tets() {
            let geo = ElementGeometry::new(&space.mesh, t);
            dets.push(geo.det.abs());
            let per_tet: Vec<[Poly3; 3]> = ref_grads
                .iter()
                .map(|g| {
                    std::array::from_fn(|i| {
                        let mut out = Poly3::default();
                        for j in 0..3 {
                            out.add_assign(&g[j], geo.inv_jt[i][j]);
                        }
                        out
                    })
                })
                .collect();
            grads.push(per_tet);
        }
        Self {
            space: space.clone(),
            basis,
            grads,
            dets,
        }
    }

    pub fn n(&self) -> usize {
        self.space.num_dofs
    }

    /// Temperature polynomial of a coefficient vector on one tet.
    pub fn field_poly(&self, coeffs: &[f64], t: usize) -> Poly3 {
        let mut poly = Poly3::default();
        for (a, &dof) in self.space.cell_dofs(t).iter().enumerate() {
            poly.add_assign(&self.basis[a], coeffs[dof]);
        }
        poly
    }

    pub fn mass(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for t in 0..self.space.mesh.num_tets() {
            let dofs = self.space.cell_dofs(t);
            for (a, &ga) in dofs.iter().enumerate() {
                for (b, &gb) in dofs.iter().enumerate() {
                    m[(ga, gb)] +=
                        self.dets[t] * self.basis[a].mul(&self.basis[b]).integrate_ref_tet();
                }
            }
        }
        m
    }

    pub fn diffusion(&self, tensor: Mat3) -> DMatrix<f64> {
        let n = self.n();
        let mut k = DMatrix::zeros(n, n);
        for t in 0..self.space.mesh.num_tets() {
            let dofs = self.space.cell_dofs(t);
            for (a, &ga) in dofs.iter().enumerate() {
                for (b, &gb) in dofs.iter().enumerate() {
                    let mut acc = 0.0;
                    for i in 0..3 {
                        for j in 0..3 {
                            if tensor[i][j] != 0.0 {
                                acc += tensor[i][j]
                                    * self.grads[t][b][j]
                                        .mul(&self.grads[t][a][i])
                                        .integrate_ref_tet();
                            }
                        }
                    }
                    k[(ga, gb)] += self.dets[t] * acc;
                }
            }
        }
        k
    }

    /// Face restriction of a reference-coordinate polynomial, with the
    /// physical area factor for surface integration.
    fn face_restrictions(&self, fidx: usize) -> (Vec<Poly2>, f64, usize) {
        let bf = &self.space.mesh.boundary_faces[fidx];
        let tet = self.space.mesh.tets[bf.tet];
        // reference corners of the face's vertices, in stored order
        let ref_corner = |global: usize| -> [f64; 3] {
            let local = tet.iter().position(|&v| v == global).unwrap();
            match local {
                0 => [0.0, 0.0, 0.0],
                1 => [1.0, 0.0, 0.0],
                2 => [0.0, 1.0, 0.0],
                _ => [0.0, 0.0, 1.0],
            }
        };
        let a = ref_corner(bf.vertices[0]);
        let b = ref_corner(bf.vertices[1]);
        let c = ref_corner(bf.vertices[2]);
        let du = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let dv = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let restricted: Vec<Poly2> = self
            .basis
            .iter()
            .map(|p| p.restrict(a, du, dv))
            .collect();
        (restricted, 2.0 * bf.area, bf.tet)
    }

    pub fn boundary_mass(&self, coefficient: f64) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for fidx in 0..self.space.mesh.boundary_faces.len() {
            let (restricted, scale, t) = self.face_restrictions(fidx);
            let dofs = self.space.cell_dofs(t);
            for (a, &ga) in dofs.iter().enumerate() {
                for (b, &gb) in dofs.iter().enumerate() {
                    m[(ga, gb)] += coefficient
                        * scale
                        * restricted[a].mul(&restricted[b]).integrate_ref_tri();
                }
            }
        }
        m
    }

    /// `int_Gamma basis_i` per dof.
    pub fn boundary_ones(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.n());
        for fidx in 0..self.space.mesh.boundary_faces.len() {
            let (restricted, scale, t) = self.face_restrictions(fidx);
            for (a, &ga) in self.space.cell_dofs(t).iter().enumerate() {
                v[ga] += scale * restricted[a].integrate_ref_tri();
            }
        }
        v
    }

    /// Volume black-body load and Jacobian for a coefficient vector.
    pub fn blackbody(&self, coeffs: &[f64], params: &PhysicalParams) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n();
        let mut load = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, n);
        for t in 0..self.space.mesh.num_tets() {
            let temp = self.field_poly(coeffs, t);
            let t3 = temp.pow(3);
            let t4 = t3.mul(&temp);
            let dofs = self.space.cell_dofs(t);
            for (a, &ga) in dofs.iter().enumerate() {
                load[ga] +=
                    self.dets[t] * params.c_bs * t4.mul(&self.basis[a]).integrate_ref_tet();
                for (b, &gb) in dofs.iter().enumerate() {
                    jac[(ga, gb)] += self.dets[t]
                        * 4.0
                        * params.c_bs
                        * t3.mul(&self.basis[a]).mul(&self.basis[b]).integrate_ref_tet();
                }
            }
        }
        (load, jac)
    }

    /// Boundary black-body load `<f(T), basis_i>`.
    pub fn boundary_blackbody(&self, coeffs: &[f64], params: &PhysicalParams) -> DVector<f64> {
        let mut load = DVector::zeros(self.n());
        for fidx in 0..self.space.mesh.boundary_faces.len() {
            let (restricted, scale, t) = self.face_restrictions(fidx);
            let dofs = self.space.cell_dofs(t);
            let mut temp = Poly2::default();
            for (a, &dof) in dofs.iter().enumerate() {
                temp.add_assign(&restricted[a], coeffs[dof]);
            }
            let t4 = temp.pow(4);
            for (a, &ga) in dofs.iter().enumerate() {
                load[ga] += scale * params.c_bs * t4.mul(&restricted[a]).integrate_ref_tri();
            }
        }
        load
    }

    /// Volume load of a pointwise polynomial function given in physical
    /// coordinates (supplied per tet as a reference polynomial).
    pub fn cross_mass(&self, col: &DenseOracle) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n(), col.n());
        for t in 0..self.space.mesh.num_tets() {
            let rows = self.space.cell_dofs(t);
            let cols = col.space.cell_dofs(t);
            for (a, &ga) in rows.iter().enumerate() {
                for (b, &gb) in cols.iter().enumerate() {
                    m[(ga, gb)] +=
                        self.dets[t] * self.basis[a].mul(&col.basis[b]).integrate_ref_tet();
                }
            }
        }
        m
    }

    /// Load of `f(T_h)` tested against this oracle's space, where the
    /// temperature lives on another space over the same mesh.
    pub fn blackbody_cross(
        &self,
        t_oracle: &DenseOracle,
        coeffs: &[f64],
        params: &PhysicalParams,
    ) -> DVector<f64> {
        let mut load = DVector::zeros(self.n());
        for t in 0..self.space.mesh.num_tets() {
            let temp = t_oracle.field_poly(coeffs, t);
            let t4 = temp.pow(4);
            for (a, &ga) in self.space.cell_dofs(t).iter().enumerate() {
                load[ga] +=
                    self.dets[t] * params.c_bs * t4.mul(&self.basis[a]).integrate_ref_tet();
            }
        }
        load
    }
}

/// Dense 2x2-block radiative operator and the constant part of its
/// right-hand side.
pub struct DenseRadiative {
    pub matrix: DMatrix<f64>,
    pub eta_rhs: DVector<f64>,
    pub n: usize,
}

pub fn dense_radiative(
    oracle: &DenseOracle,
    params: &PhysicalParams,
    theta: f64,
) -> DenseRadiative {
    let n = oracle.n();
    let l = sp3fem::model::tensor_l(params, theta).unwrap();
    let k_l = oracle.diffusion(l);
    let mass = oracle.mass();
    let bmass = oracle.boundary_mass(1.0);
    let bones = oracle.boundary_ones();
    let mu = [params.mu1, params.mu2];
    let alpha_j = [params.alpha1, params.alpha2];
    let beta_cross = [params.beta2, params.beta1];
    let eta = [params.eta1, params.eta2];
    let tau3 = params.tau / 3.0;
    let mut matrix = DMatrix::zeros(2 * n, 2 * n);
    let mut eta_rhs = DVector::zeros(2 * n);
    for j in 0..2 {
        let diag = &k_l * (params.tau * params.tau * mu[j] * mu[j])
            + &mass * params.k0
            + &bmass * (tau3 * mu[j] * mu[j] * alpha_j[j]);
        let off = &bmass * (tau3 * mu[j] * mu[j] * beta_cross[j]);
        for r in 0..n {
            for c in 0..n {
                matrix[(j * n + r, j * n + c)] = diag[(r, c)];
                matrix[(j * n + r, (1 - j) * n + c)] = off[(r, c)];
            }
        }
        let c_eta = tau3 * mu[j] * mu[j] * eta[j] * params.black_body(params.t_m);
        for r in 0..n {
            eta_rhs[j * n + r] = c_eta * bones[r];
        }
    }
    DenseRadiative { matrix, eta_rhs, n }
}

/// Damped Newton with a finite-difference Jacobian on a dense residual.
pub fn dense_damped_newton(
    residual: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    x0: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> DVector<f64> {
    let mut x = x0;
    let n = x.len();
    let mut r = residual(&x);
    let scale0 = r.norm().max(tol);
    for _ in 0..max_iter {
        if r.norm() <= tol * scale0 + 1e-13 {
            return x;
        }
        // finite-difference Jacobian, column by column
        let mut jac = DMatrix::zeros(n, n);
        for c in 0..n {
            let h = 1e-6 * x[c].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let rp = residual(&xp);
            let rm = residual(&xm);
            for rdx in 0..n {
                jac[(rdx, c)] = (rp[rdx] - rm[rdx]) / (2.0 * h);
            }
        }
        let delta = jac.lu().solve(&(-&r)).expect("dense oracle jacobian solve");
        // damping: halve until the residual stops growing
        let mut lambda = 1.0;
        for _ in 0..40 {
            let cand = &x + &delta * lambda;
            let rc = residual(&cand);
            if rc.norm() <= r.norm() * (1.0 - 0.25 * lambda) || rc.norm() < tol * scale0 {
                x = cand;
                r = rc;
                break;
            }
            lambda *= 0.5;
        }
    }
    assert!(
        r.norm() <= tol * scale0 * 10.0,
        "dense oracle Newton stalled at residual {}",
        r.norm()
    );
    x
}

/// One- and two-tet meshes for oracle comparisons.
pub fn one_tet_mesh() -> Arc<TetMesh> {
    Arc::new(
        TetMesh::from_raw(
            vec![
                [0.0, 0.0, 0.0],
                [1.1, 0.1, 0.0],
                [-0.1, 0.9, 0.2],
                [0.1, 0.2, 1.3],
            ],
            vec![[0, 1, 2, 3]],
        )
        .unwrap(),
    )
}

pub fn two_tet_mesh() -> Arc<TetMesh> {
    Arc::new(
        TetMesh::from_raw(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.1],
                [0.0, 1.0, 0.0],
                [0.1, 0.1, 1.0],
                [1.1, 1.2, 0.9],
            ],
            vec![[0, 1, 2, 3], [1, 2, 3, 4]],
        )
        .unwrap(),
    )
}
