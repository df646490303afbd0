//! Physical parameters, the black-body nonlinearity and the anisotropic
//! tensors of the SP3 radiation-conduction model.
//!
//! The temperature equation couples to two radiative moments `phi_1`, `phi_2`
//! through the closure constants `alpha_j`, `beta_j`, `gamma_j`, `mu_j`,
//! `eta_j`. Conduction is governed by the rotated tensor `M(T)` with
//! temperature-dependent diagonal, radiative diffusion by the constant
//! rotated tensor `L`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stefan-Boltzmann constant.
pub const STEFAN_BOLTZMANN: f64 = 5.67e-8;

/// 3x3 matrix stored row-major.
pub type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("conductivity m_{index}{index}(T) = {value} is not positive at T = {temperature}")]
    NonPositiveConductivity {
        index: usize,
        value: f64,
        temperature: f64,
    },
    #[error("degenerate opacity: k0 + sigma_{index} = {value} must be positive")]
    DegenerateOpacity { index: usize, value: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Scalar coefficients of the SP3 model.
///
/// The ten closure constants default to their tabulated values; the remaining
/// scalars default to the accuracy-benchmark configuration (`k0 = tau = 1`,
/// vanishing surface emissivity and convection, isotropic scattering off).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicalParams {
    /// Absorption coefficient (1/length).
    pub k0: f64,
    /// Diffusion scale.
    pub tau: f64,
    /// Hemispheric surface emissivity.
    pub alpha: f64,
    /// Convective heat transfer coefficient.
    pub c_m: f64,
    /// Ambient temperature (K).
    pub t_m: f64,
    /// Directional scattering coefficients `[sigma_1, sigma_2, sigma_3]`.
    pub sigma_scatter: [f64; 3],
    /// Stefan-Boltzmann constant.
    pub c_bs: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub eta1: f64,
    pub eta2: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            k0: 1.0,
            tau: 1.0,
            alpha: 0.0,
            c_m: 0.0,
            t_m: 300.0,
            sigma_scatter: [0.0; 3],
            c_bs: STEFAN_BOLTZMANN,
            alpha1: 2.3984,
            alpha2: 1.1432,
            beta1: 4.71e-2,
            beta2: 1.612e-1,
            gamma1: -1.6221e4,
            gamma2: 3.0617,
            mu1: 5.888e-3,
            mu2: 1.4915,
            eta1: 3.21656e1,
            eta2: 1.49583e1,
        }
    }
}

impl PhysicalParams {
    /// Checks the structural invariants: positive scales, nondegenerate
    /// `gamma_2 - gamma_1`, nonnegative scattering, and the admissibility
    /// bound on `k0`.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.tau > 0.0) {
            return Err(ModelError::InvalidParams(format!("tau = {} must be > 0", self.tau)));
        }
        if !(self.k0 > 0.0) {
            return Err(ModelError::InvalidParams(format!("k0 = {} must be > 0", self.k0)));
        }
        if self.c_m < 0.0 || self.alpha < 0.0 {
            return Err(ModelError::InvalidParams(
                "c_m and alpha must be nonnegative".into(),
            ));
        }
        if self.sigma_scatter.iter().any(|&s| s < 0.0) {
            return Err(ModelError::InvalidParams(
                "scattering coefficients must be nonnegative".into(),
            ));
        }
        if self.gamma2 == self.gamma1 {
            return Err(ModelError::InvalidParams(
                "gamma2 must differ from gamma1".into(),
            ));
        }
        let report = check_admissibility(self);
        if !report.pass {
            return Err(ModelError::InvalidParams(format!(
                "k0 = {} violates the admissibility bound {} (tau = {})",
                self.k0, report.threshold, self.tau
            )));
        }
        Ok(())
    }

    /// Black-body spectral intensity `f(T) = c_bs T^4`.
    #[inline]
    pub fn black_body(&self, temperature: f64) -> f64 {
        let t2 = temperature * temperature;
        self.c_bs * t2 * t2
    }

    /// Derivative `f'(T) = 4 c_bs T^3`.
    #[inline]
    pub fn black_body_deriv(&self, temperature: f64) -> f64 {
        4.0 * self.c_bs * temperature * temperature * temperature
    }

    /// Coefficient `k0 / tau^2 / (gamma2 - gamma1)` multiplying the moment
    /// combination `gamma2 phi_1 - gamma1 phi_2` in the temperature equation.
    #[inline]
    pub fn gamma_coupling(&self) -> f64 {
        self.k0 / (self.tau * self.tau * (self.gamma2 - self.gamma1))
    }
}

/// Outcome of the `k0 > (tau/6) max{...}` admissibility check.
#[derive(Debug, Clone, Copy)]
pub struct AdmissibilityReport {
    pub threshold: f64,
    pub k0: f64,
    pub pass: bool,
}

/// Evaluates the stability requirement on the absorption coefficient:
/// `k0` must exceed `(tau/6) max{beta1^2 mu2^2 / alpha2, beta2^2 mu1^2 / alpha1}`.
pub fn check_admissibility(params: &PhysicalParams) -> AdmissibilityReport {
    let a = params.beta1 * params.beta1 * params.mu2 * params.mu2 / params.alpha2;
    let b = params.beta2 * params.beta2 * params.mu1 * params.mu1 / params.alpha1;
    let threshold = params.tau / 6.0 * a.max(b);
    AdmissibilityReport {
        threshold,
        k0: params.k0,
        pass: params.k0 > threshold,
    }
}

/// Polynomial in one variable, coefficients in ascending degree order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn constant(c: f64) -> Self {
        Polynomial(vec![c])
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn eval_deriv(&self, x: f64) -> f64 {
        self.0
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c)
    }

    pub fn degree(&self) -> usize {
        self.0
            .iter()
            .rposition(|&c| c != 0.0)
            .unwrap_or(0)
    }

    pub fn is_constant(&self) -> bool {
        self.degree() == 0
    }
}

/// Anisotropic thermal conductivity `M(T) = P(theta) diag(m_jj(T)) P(theta)^T`.
///
/// The diagonal entries are polynomials in the temperature so that exact
/// derivatives are available; positivity is checked at evaluation time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConductivityModel {
    /// Rotation angle in the (y, z) plane, radians.
    pub theta: f64,
    pub m11: Polynomial,
    pub m22: Polynomial,
    pub m33: Polynomial,
}

impl ConductivityModel {
    /// Identity conductivity (isotropic, unit, temperature-independent).
    pub fn identity() -> Self {
        Self {
            theta: 0.0,
            m11: Polynomial::constant(1.0),
            m22: Polynomial::constant(1.0),
            m33: Polynomial::constant(1.0),
        }
    }

    /// True when `M` does not depend on the temperature.
    pub fn is_constant(&self) -> bool {
        self.m11.is_constant() && self.m22.is_constant() && self.m33.is_constant()
    }

    /// Largest polynomial degree among the diagonal entries.
    pub fn max_degree(&self) -> usize {
        self.m11.degree().max(self.m22.degree()).max(self.m33.degree())
    }

    /// Diagonal entries `(m11, m22, m33)` at a temperature with positivity check.
    pub fn diagonal(&self, temperature: f64) -> Result<[f64; 3], ModelError> {
        let d = [
            self.m11.eval(temperature),
            self.m22.eval(temperature),
            self.m33.eval(temperature),
        ];
        for (j, &v) in d.iter().enumerate() {
            if !(v > 0.0) {
                return Err(ModelError::NonPositiveConductivity {
                    index: j + 1,
                    value: v,
                    temperature,
                });
            }
        }
        Ok(d)
    }
}

/// Rotation `P(theta)` acting in the (y, z) plane.
pub fn rotation_matrix(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rotate_diagonal(theta: f64, diag: [f64; 3]) -> Mat3 {
    let p = rotation_matrix(theta);
    // P diag P^T
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, entry) in row.iter_mut().enumerate() {
            let mut sum = 0.0;
            for (k, &d) in diag.iter().enumerate() {
                sum += p[i][k] * d * p[j][k];
            }
            *entry = sum;
        }
    }
    out
}

/// Conduction tensor `M(T) = P(theta) diag(m_jj(T)) P(theta)^T`; symmetric
/// positive definite with spectrum `{m_jj(T)}`.
pub fn tensor_m(temperature: f64, model: &ConductivityModel) -> Result<Mat3, ModelError> {
    Ok(rotate_diagonal(model.theta, model.diagonal(temperature)?))
}

/// Temperature derivative `dM/dT`, same rotation applied to `m'_jj(T)`.
pub fn tensor_m_deriv(temperature: f64, model: &ConductivityModel) -> Mat3 {
    let d = [
        model.m11.eval_deriv(temperature),
        model.m22.eval_deriv(temperature),
        model.m33.eval_deriv(temperature),
    ];
    rotate_diagonal(model.theta, d)
}

/// Radiative diffusion tensor `L = P(theta) diag(1/(3(k0+sigma_i))) P(theta)^T`.
pub fn tensor_l(params: &PhysicalParams, theta: f64) -> Result<Mat3, ModelError> {
    let mut diag = [0.0; 3];
    for (i, entry) in diag.iter_mut().enumerate() {
        let denom = params.k0 + params.sigma_scatter[i];
        if !(denom > 0.0) {
            return Err(ModelError::DegenerateOpacity {
                index: i + 1,
                value: denom,
            });
        }
        *entry = 1.0 / (3.0 * denom);
    }
    Ok(rotate_diagonal(theta, diag))
}
