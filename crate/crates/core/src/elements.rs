//! Reference-tetrahedron Lagrange bases of arbitrary degree and quadrature
//! rules of declared polynomial exactness.
//!
//! Quadrature is built from tensor Gauss-Legendre rules collapsed onto the
//! simplex (Duffy transform), so all weights are positive and any exactness
//! degree is available. The reference tetrahedron is `{x,y,z >= 0, x+y+z <= 1}`,
//! the reference triangle `{x,y >= 0, x+y <= 1}`.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ElementError {
    #[error("unsupported basis degree {0} (supported range 1..=6)")]
    UnsupportedDegree(usize),
    #[error("unsupported quadrature exactness {0} (supported up to {1})")]
    UnsupportedExactness(usize, usize),
}

pub const MAX_DEGREE: usize = 6;
pub const MAX_EXACTNESS: usize = 60;

/// Gauss-Legendre nodes and weights on [0, 1].
fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        // initial guess on [-1, 1], refined by Newton on P_n
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[k] = 0.5 * (1.0 - x); // descending roots -> ascending nodes
        weights[k] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureDomain {
    Tetrahedron,
    Triangle,
}

/// Positive-weight quadrature rule on the reference tetrahedron or triangle,
/// exact for polynomials of total degree at most `exactness`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub domain: QuadratureDomain,
    pub exactness: usize,
    /// Reference coordinates; triangle rules use the first two components.
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Collapsed tensor rule on the tetrahedron, exact to total degree `d`.
    pub fn tetrahedron(d: usize) -> Result<Self, ElementError> {
        if d > MAX_EXACTNESS {
            return Err(ElementError::UnsupportedExactness(d, MAX_EXACTNESS));
        }
        // Pullback of a degree-d monomial has degree d+2 in u, d+1 in v, d in w.
        let n = (d + 4) / 2;
        let (x, w) = gauss_legendre_01(n);
        let mut points = Vec::with_capacity(n * n * n);
        let mut weights = Vec::with_capacity(n * n * n);
        for (u, wu) in x.iter().zip(&w) {
            for (v, wv) in x.iter().zip(&w) {
                for (t, wt) in x.iter().zip(&w) {
                    let jac = (1.0 - u) * (1.0 - u) * (1.0 - v);
                    points.push([*u, v * (1.0 - u), t * (1.0 - u) * (1.0 - v)]);
                    weights.push(wu * wv * wt * jac);
                }
            }
        }
        Ok(Self {
            domain: QuadratureDomain::Tetrahedron,
            exactness: d,
            points,
            weights,
        })
    }

    /// Collapsed tensor rule on the triangle, exact to total degree `d`.
    pub fn triangle(d: usize) -> Result<Self, ElementError> {
        if d > MAX_EXACTNESS {
            return Err(ElementError::UnsupportedExactness(d, MAX_EXACTNESS));
        }
        let n = (d + 3) / 2;
        let (x, w) = gauss_legendre_01(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (u, wu) in x.iter().zip(&w) {
            for (v, wv) in x.iter().zip(&w) {
                points.push([*u, v * (1.0 - u), 0.0]);
                weights.push(wu * wv * (1.0 - u));
            }
        }
        Ok(Self {
            domain: QuadratureDomain::Triangle,
            exactness: d,
            points,
            weights,
        })
    }
}

/// Exact integral of `x^a y^b z^c` over the reference tetrahedron:
/// `a! b! c! / (a+b+c+3)!`.
pub fn tet_monomial_integral(a: usize, b: usize, c: usize) -> f64 {
    // 1 / [ (a+b+c+3)! / (a! b! c!) ] computed as a product to stay in range
    let mut denom = 1.0;
    let mut k = 0usize;
    for top in [a, b, c] {
        for j in 1..=top {
            k += 1;
            denom *= k as f64 / j as f64;
        }
    }
    for _ in 0..3 {
        k += 1;
        denom *= k as f64;
    }
    1.0 / denom
}

/// Exact integral of `x^a y^b` over the reference triangle: `a! b! / (a+b+2)!`.
pub fn tri_monomial_integral(a: usize, b: usize) -> f64 {
    let mut denom = 1.0;
    let mut k = 0usize;
    for top in [a, b] {
        for j in 1..=top {
            k += 1;
            denom *= k as f64 / j as f64;
        }
    }
    for _ in 0..2 {
        k += 1;
        denom *= k as f64;
    }
    1.0 / denom
}

/// Equispaced Lagrange basis on the reference tetrahedron.
///
/// Nodes are the barycentric lattice `|i| = p`; the basis is the classical
/// product form `N_i(lambda) = prod_k prod_{m < i_k} (p lambda_k - m)/(i_k - m)`
/// which is nodal (Kronecker) on the lattice.
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    pub degree: usize,
    /// Barycentric multi-indices `(i0, i1, i2, i3)` with `|i| = p`.
    pub multi_indices: Vec<[usize; 4]>,
    /// Node positions in reference coordinates `(i1, i2, i3)/p`.
    pub nodes: Vec<[f64; 3]>,
}

impl ReferenceElement {
    pub fn new(degree: usize) -> Result<Self, ElementError> {
        if degree < 1 || degree > MAX_DEGREE {
            return Err(ElementError::UnsupportedDegree(degree));
        }
        let p = degree;
        let mut multi_indices = Vec::new();
        let mut nodes = Vec::new();
        for i3 in 0..=p {
            for i2 in 0..=(p - i3) {
                for i1 in 0..=(p - i3 - i2) {
                    let i0 = p - i1 - i2 - i3;
                    multi_indices.push([i0, i1, i2, i3]);
                    nodes.push([i1 as f64 / p as f64, i2 as f64 / p as f64, i3 as f64 / p as f64]);
                }
            }
        }
        Ok(Self {
            degree,
            multi_indices,
            nodes,
        })
    }

    /// Number of basis functions `(p+1)(p+2)(p+3)/6`.
    pub fn dim(&self) -> usize {
        self.multi_indices.len()
    }

    /// Values of all basis functions at a reference point.
    pub fn eval_basis(&self, point: [f64; 3], out: &mut [f64]) {
        let p = self.degree as f64;
        let lam = [
            1.0 - point[0] - point[1] - point[2],
            point[0],
            point[1],
            point[2],
        ];
        for (n, idx) in self.multi_indices.iter().enumerate() {
            let mut v = 1.0;
            for k in 0..4 {
                let ik = idx[k];
                for m in 0..ik {
                    v *= (p * lam[k] - m as f64) / (ik - m) as f64;
                }
            }
            out[n] = v;
        }
    }

    /// Reference gradients of all basis functions at a reference point.
    pub fn eval_gradients(&self, point: [f64; 3], out: &mut [[f64; 3]]) {
        let p = self.degree as f64;
        let lam = [
            1.0 - point[0] - point[1] - point[2],
            point[0],
            point[1],
            point[2],
        ];
        for (n, idx) in self.multi_indices.iter().enumerate() {
            // per-coordinate factor values and derivatives
            let mut f = [1.0f64; 4];
            let mut df = [0.0f64; 4];
            for k in 0..4 {
                let ik = idx[k];
                for m in 0..ik {
                    let num = p * lam[k] - m as f64;
                    let den = (ik - m) as f64;
                    df[k] = (df[k] * num + f[k] * p) / den;
                    f[k] *= num / den;
                }
            }
            let mut dlam = [0.0f64; 4];
            for k in 0..4 {
                let mut prod = df[k];
                for j in 0..4 {
                    if j != k {
                        prod *= f[j];
                    }
                }
                dlam[k] = prod;
            }
            out[n] = [dlam[1] - dlam[0], dlam[2] - dlam[0], dlam[3] - dlam[0]];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ref_point(rng: &mut impl Rng) -> [f64; 3] {
        loop {
            let x: f64 = rng.gen_range(0.0..1.0);
            let y: f64 = rng.gen_range(0.0..1.0);
            let z: f64 = rng.gen_range(0.0..1.0);
            if x + y + z <= 1.0 {
                return [x, y, z];
            }
        }
    }

    #[test]
    fn basis_dimensions() {
        assert_eq!(ReferenceElement::new(1).unwrap().dim(), 4);
        assert_eq!(ReferenceElement::new(3).unwrap().dim(), 20);
        assert_eq!(ReferenceElement::new(4).unwrap().dim(), 35);
        assert!(ReferenceElement::new(0).is_err());
        assert!(ReferenceElement::new(7).is_err());
    }

    #[test]
    fn kronecker_partition_of_unity_gradient_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for p in 1..=MAX_DEGREE {
            let elem = ReferenceElement::new(p).unwrap();
            let nb = elem.dim();
            let mut vals = vec![0.0; nb];
            for (j, &node) in elem.nodes.iter().enumerate() {
                elem.eval_basis(node, &mut vals);
                for (i, &v) in vals.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (v - expect).abs() < 1e-11,
                        "p={p} basis {i} at node {j}: {v}"
                    );
                }
            }
            let mut grads = vec![[0.0; 3]; nb];
            for _ in 0..20 {
                let pt = random_ref_point(&mut rng);
                elem.eval_basis(pt, &mut vals);
                let sum: f64 = vals.iter().sum();
                assert!((sum - 1.0).abs() < 1e-11, "p={p} partition of unity: {sum}");
                elem.eval_gradients(pt, &mut grads);
                for d in 0..3 {
                    let gsum: f64 = grads.iter().map(|g| g[d]).sum();
                    assert!(gsum.abs() < 1e-10, "p={p} gradient sum: {gsum}");
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for p in 1..=MAX_DEGREE {
            let elem = ReferenceElement::new(p).unwrap();
            let nb = elem.dim();
            let mut grads = vec![[0.0; 3]; nb];
            let mut vp = vec![0.0; nb];
            let mut vm = vec![0.0; nb];
            for _ in 0..5 {
                let pt = random_ref_point(&mut rng);
                elem.eval_gradients(pt, &mut grads);
                let h = 1e-6;
                for d in 0..3 {
                    let mut pp = pt;
                    let mut pm = pt;
                    pp[d] += h;
                    pm[d] -= h;
                    elem.eval_basis(pp, &mut vp);
                    elem.eval_basis(pm, &mut vm);
                    for i in 0..nb {
                        let fd = (vp[i] - vm[i]) / (2.0 * h);
                        let scale = grads[i][d].abs().max(1.0);
                        assert!(
                            (grads[i][d] - fd).abs() / scale < 1e-5,
                            "p={p} grad[{i}][{d}]: {} vs fd {}",
                            grads[i][d],
                            fd
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn tet_quadrature_monomial_exactness() {
        for d in [1, 2, 4, 8, 12, 20] {
            let rule = QuadratureRule::tetrahedron(d).unwrap();
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for a in 0..=d {
                for b in 0..=(d - a) {
                    for c in 0..=(d - a - b) {
                        let exact = tet_monomial_integral(a, b, c);
                        let num: f64 = rule
                            .points
                            .iter()
                            .zip(&rule.weights)
                            .map(|(p, w)| {
                                w * p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32)
                            })
                            .sum();
                        assert!(
                            (num - exact).abs() / exact.abs() < 1e-11,
                            "d={d} monomial ({a},{b},{c}): {num} vs {exact}"
                        );
                    }
                }
            }
        }
        assert!(QuadratureRule::tetrahedron(MAX_EXACTNESS + 1).is_err());
    }

    #[test]
    fn tri_quadrature_monomial_exactness() {
        for d in [1, 2, 5, 9, 14, 20] {
            let rule = QuadratureRule::triangle(d).unwrap();
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for a in 0..=d {
                for b in 0..=(d - a) {
                    let exact = tri_monomial_integral(a, b);
                    let num: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                        .sum();
                    assert!(
                        (num - exact).abs() / exact.abs() < 1e-11,
                        "d={d} monomial ({a},{b}): {num} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn reference_measures() {
        let tet = QuadratureRule::tetrahedron(2).unwrap();
        let vol: f64 = tet.weights.iter().sum();
        assert_relative_eq!(vol, 1.0 / 6.0, max_relative = 1e-14);
        let xint: f64 = tet
            .points
            .iter()
            .zip(&tet.weights)
            .map(|(p, w)| w * p[0])
            .sum();
        assert_relative_eq!(xint, 1.0 / 24.0, max_relative = 1e-13);

        let tri = QuadratureRule::triangle(2).unwrap();
        let area: f64 = tri.weights.iter().sum();
        assert_relative_eq!(area, 0.5, max_relative = 1e-14);
        let xy: f64 = tri
            .points
            .iter()
            .zip(&tri.weights)
            .map(|(p, w)| w * p[0] * p[1])
            .sum();
        assert_relative_eq!(xy, 1.0 / 24.0, max_relative = 1e-13);
    }

    #[test]
    fn random_polynomial_integration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &d in &[3usize, 6, 9] {
            let rule = QuadratureRule::tetrahedron(d).unwrap();
            // random polynomial of total degree d
            let mut terms = Vec::new();
            for a in 0..=d {
                for b in 0..=(d - a) {
                    for c in 0..=(d - a - b) {
                        terms.push((a, b, c, rng.gen_range(-1.0..1.0)));
                    }
                }
            }
            let exact: f64 = terms
                .iter()
                .map(|&(a, b, c, co)| co * tet_monomial_integral(a, b, c))
                .sum();
            let num: f64 = rule
                .points
                .iter()
                .zip(&rule.weights)
                .map(|(p, w)| {
                    let val: f64 = terms
                        .iter()
                        .map(|&(a, b, c, co)| {
                            co * p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32)
                        })
                        .sum();
                    w * val
                })
                .sum();
            assert_relative_eq!(num, exact, max_relative = 1e-11);
        }
    }
}
