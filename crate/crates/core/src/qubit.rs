//! Two-level operator algebra in the fixed basis (|g>, |e>).
//!
//! `sigma_minus |e> = |g>`, and the Bloch z axis points at the ground state:
//! `<sigma_z> = 2 rho_gg - 1`.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PqsError, Result};

const TRACE_TOL: f64 = 1e-10;
const HERMITIAN_TOL: f64 = 1e-10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// 2x2 complex matrix. Used for density matrices, effect matrices and
/// (non-Hermitian) measurement operators alike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitOperator {
    pub gg: Complex64,
    pub ge: Complex64,
    pub eg: Complex64,
    pub ee: Complex64,
}

impl QubitOperator {
    pub const fn new(gg: Complex64, ge: Complex64, eg: Complex64, ee: Complex64) -> Self {
        Self { gg, ge, eg, ee }
    }

    pub const fn from_real(gg: f64, ge: f64, eg: f64, ee: f64) -> Self {
        Self {
            gg: Complex64::new(gg, 0.0),
            ge: Complex64::new(ge, 0.0),
            eg: Complex64::new(eg, 0.0),
            ee: Complex64::new(ee, 0.0),
        }
    }

    pub const fn zero() -> Self {
        Self::new(ZERO, ZERO, ZERO, ZERO)
    }

    pub const fn identity() -> Self {
        Self::new(ONE, ZERO, ZERO, ONE)
    }

    /// `identity / 2`, the normalized "no information" state or effect.
    pub const fn maximally_mixed() -> Self {
        Self::from_real(0.5, 0.0, 0.0, 0.5)
    }

    pub const fn ground() -> Self {
        Self::from_real(1.0, 0.0, 0.0, 0.0)
    }

    pub const fn excited() -> Self {
        Self::from_real(0.0, 0.0, 0.0, 1.0)
    }

    /// `|g><e|`
    pub const fn sigma_minus() -> Self {
        Self::from_real(0.0, 1.0, 0.0, 0.0)
    }

    /// `|e><g|`
    pub const fn sigma_plus() -> Self {
        Self::from_real(0.0, 0.0, 1.0, 0.0)
    }

    pub const fn sigma_x() -> Self {
        Self::from_real(0.0, 1.0, 1.0, 0.0)
    }

    pub const fn sigma_y() -> Self {
        Self::new(ZERO, Complex64::new(0.0, -1.0), Complex64::new(0.0, 1.0), ZERO)
    }

    pub const fn sigma_z() -> Self {
        Self::from_real(1.0, 0.0, 0.0, -1.0)
    }

    /// Projector on `|theta> = cos(theta/2)|g> + sin(theta/2)|e>`, Bloch vector
    /// `(sin theta, 0, cos theta)`.
    pub fn from_theta(theta: f64) -> Self {
        let (s, c) = (theta / 2.0).sin_cos();
        Self::from_real(c * c, c * s, c * s, s * s)
    }

    /// `(1 + x sx + y sy + z sz) / 2`
    pub fn from_bloch(b: BlochVector) -> Self {
        Self::new(
            Complex64::new(0.5 * (1.0 + b.z), 0.0),
            Complex64::new(0.5 * b.x, -0.5 * b.y),
            Complex64::new(0.5 * b.x, 0.5 * b.y),
            Complex64::new(0.5 * (1.0 - b.z), 0.0),
        )
    }

    pub fn trace(&self) -> Complex64 {
        self.gg + self.ee
    }

    pub fn adjoint(&self) -> Self {
        Self::new(self.gg.conj(), self.eg.conj(), self.ge.conj(), self.ee.conj())
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.gg * k, self.ge * k, self.eg * k, self.ee * k)
    }

    pub fn scale_complex(&self, k: Complex64) -> Self {
        Self::new(self.gg * k, self.ge * k, self.eg * k, self.ee * k)
    }

    /// Largest absolute deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        (self.ge - self.eg.conj())
            .norm()
            .max(self.gg.im.abs())
            .max(self.ee.im.abs())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// Nearest Hermitian matrix, `(A + A^dag) / 2`.
    pub fn hermitian_part(&self) -> Self {
        let ge = 0.5 * (self.ge + self.eg.conj());
        Self::new(
            Complex64::new(self.gg.re, 0.0),
            ge,
            ge.conj(),
            Complex64::new(self.ee.re, 0.0),
        )
    }

    /// `Tr(self * other)`
    pub fn trace_product(&self, other: &Self) -> Complex64 {
        self.gg * other.gg + self.ge * other.eg + self.eg * other.ge + self.ee * other.ee
    }

    /// `Tr(sigma_u * self)` for the three Pauli operators, without any
    /// normalization or validation.
    pub fn pauli_expectations(&self) -> BlochVector {
        BlochVector {
            x: (self.ge + self.eg).re,
            y: (Complex64::i() * (self.ge - self.eg)).re,
            z: (self.gg - self.ee).re,
        }
    }

    /// Bloch vector of a unit-trace Hermitian operator.
    pub fn to_bloch(&self) -> Result<BlochVector> {
        if !self.is_hermitian(HERMITIAN_TOL) {
            return Err(PqsError::InvalidOperator(format!(
                "not Hermitian (error {:.3e})",
                self.hermiticity_error()
            )));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(PqsError::InvalidOperator(format!(
                "trace {tr} is not 1 within {TRACE_TOL:e}"
            )));
        }
        Ok(self.pauli_expectations())
    }

    /// Divide by the (real) trace. Fails for non-positive trace.
    pub fn normalized(&self) -> Result<Self> {
        let tr = self.trace().re;
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(PqsError::InvalidOperator(format!(
                "cannot normalize operator with trace {tr}"
            )));
        }
        Ok(self.scale(1.0 / tr))
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let h = self.hermitian_part();
        let mean = 0.5 * (h.gg.re + h.ee.re);
        let half_gap = (0.25 * (h.gg.re - h.ee.re).powi(2) + h.ge.norm_sqr()).sqrt();
        [mean - half_gap, mean + half_gap]
    }

    pub fn purity(&self) -> f64 {
        self.trace_product(self).re
    }

    /// Nearest physical (unit-trace, positive semidefinite) operator: take the
    /// Hermitian part, floor eigenvalues at zero and renormalize. For a qubit
    /// this is a radial clip of the Bloch vector onto the unit ball.
    pub fn project_physical(&self) -> Self {
        let h = self.hermitian_part();
        let tr = h.trace().re;
        if !(tr > 0.0) || !tr.is_finite() {
            return Self::maximally_mixed();
        }
        let b = h.scale(1.0 / tr).pauli_expectations();
        Self::from_bloch(b.clipped_to_ball())
    }
}

impl Default for QubitOperator {
    fn default() -> Self {
        Self::zero()
    }
}

impl Add for QubitOperator {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.gg + o.gg, self.ge + o.ge, self.eg + o.eg, self.ee + o.ee)
    }
}

impl Sub for QubitOperator {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.gg - o.gg, self.ge - o.ge, self.eg - o.eg, self.ee - o.ee)
    }
}

impl Mul for QubitOperator {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.gg * o.gg + self.ge * o.eg,
            self.gg * o.ge + self.ge * o.ee,
            self.eg * o.gg + self.ee * o.eg,
            self.eg * o.ge + self.ee * o.ee,
        )
    }
}

impl Mul<f64> for QubitOperator {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        self.scale(k)
    }
}

/// Real Bloch vector `(<sx>, <sy>, <sz>)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Vector in the x-z plane.
    pub const fn xz(x: f64, z: f64) -> Self {
        Self { x, y: 0.0, z }
    }

    pub fn from_theta(theta: f64) -> Self {
        Self::xz(theta.sin(), theta.cos())
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, o: &Self) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn clipped_to_ball(self) -> Self {
        let n = self.norm();
        if n > 1.0 {
            Self::new(self.x / n, self.y / n, self.z / n)
        } else {
            self
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// A pure preparation `|theta>` in the x-z plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreparedState {
    pub theta: f64,
}

impl PreparedState {
    pub fn new(theta: f64) -> Self {
        Self { theta }
    }

    pub fn operator(&self) -> QubitOperator {
        QubitOperator::from_theta(self.theta)
    }

    pub fn bloch(&self) -> BlochVector {
        BlochVector::from_theta(self.theta)
    }
}
