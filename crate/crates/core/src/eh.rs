//! Non-linear energy-harvesting transfer curves.
//!
//! Two parametric models are supported: a logistic curve saturating at `M`
//! and a sensitivity-threshold curve that is exactly zero below `p0`. Besides
//! forward evaluation each model provides the received RF power needed to
//! reach a harvested-power target, which is what the optimizer constrains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{quadratic_form, ComplexVector, HermitianMatrix};

/// Exponent arguments are clamped to this magnitude before `exp`.
const EXP_CLAMP: f64 = 700.0;

fn exp_clamped(x: f64) -> f64 {
    x.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
}

/// Logistic model: `M / (1 + exp(-a (p - b)))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticParams {
    /// Saturation power (W).
    pub m: f64,
    /// Steepness (1/W).
    pub a: f64,
    /// Midpoint (W).
    pub b: f64,
}

/// Sensitivity model with hard zero below `p0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityParams {
    /// Saturation power (W).
    pub m: f64,
    /// Steepness (1/W).
    pub c: f64,
    /// Offset, dimensionless.
    pub n: f64,
    /// Sensitivity threshold (W).
    pub p0: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self { m: 0.024, a: 150.0, b: 0.014 }
    }
}

impl Default for SensitivityParams {
    fn default() -> Self {
        Self { m: 0.024, c: 150.0, n: 2.1, p0: 0.0064 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EhModel {
    Logistic(LogisticParams),
    Sensitivity(SensitivityParams),
}

impl LogisticParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0) {
            return Err(Error::OutOfRange { what: "logistic M", value: self.m });
        }
        if !(self.a > 0.0) {
            return Err(Error::OutOfRange { what: "logistic a", value: self.a });
        }
        if !(self.b >= 0.0) {
            return Err(Error::OutOfRange { what: "logistic b", value: self.b });
        }
        Ok(())
    }

    /// `Omega = 1 / (1 + exp(a b))`, the logistic value at zero input
    /// normalized by `M`.
    pub fn omega(&self) -> f64 {
        1.0 / (1.0 + exp_clamped(self.a * self.b))
    }
}

impl SensitivityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0) {
            return Err(Error::OutOfRange { what: "sensitivity M", value: self.m });
        }
        if !(self.c > 0.0) {
            return Err(Error::OutOfRange { what: "sensitivity c", value: self.c });
        }
        if !(self.p0 >= 0.0) {
            return Err(Error::OutOfRange { what: "sensitivity p0", value: self.p0 });
        }
        let e0 = (-self.c * self.p0 + self.n).exp();
        if !e0.is_finite() || e0 <= 0.0 {
            return Err(Error::OutOfRange { what: "exp(-c p0 + n)", value: e0 });
        }
        Ok(())
    }

    /// `exp(-c p0 + n)`
    pub fn e0(&self) -> f64 {
        exp_clamped(-self.c * self.p0 + self.n)
    }
}

impl EhModel {
    pub fn saturation(&self) -> f64 {
        match self {
            EhModel::Logistic(p) => p.m,
            EhModel::Sensitivity(p) => p.m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EhModel::Logistic(p) => p.validate(),
            EhModel::Sensitivity(p) => p.validate(),
        }
    }

    /// Harvested power used as the optimization objective: `psi` for the
    /// logistic model, `theta` for the sensitivity model.
    pub fn harvested(&self, p: f64) -> f64 {
        match self {
            EhModel::Logistic(m) => psi(p, m),
            EhModel::Sensitivity(m) => theta(p, m),
        }
    }

    /// Exact received power needed to harvest `tau`.
    pub fn inverse(&self, tau: f64) -> Result<f64> {
        match self {
            EhModel::Logistic(m) => psi_inverse(tau, m),
            EhModel::Sensitivity(m) => theta_inverse(tau, m),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            EhModel::Logistic(_) => "model1",
            EhModel::Sensitivity(_) => "model2",
        }
    }
}

/// Total RF power at an energy receiver: `g^† W g + q^† W_p q`.
pub fn received_rf_power(
    g: &ComplexVector,
    q: &ComplexVector,
    w: &HermitianMatrix,
    w_p: &HermitianMatrix,
) -> Result<f64> {
    Ok(quadratic_form(w, g)? + quadratic_form(w_p, q)?)
}

pub fn psi(p: f64, m: &LogisticParams) -> f64 {
    m.m / (1.0 + exp_clamped(-m.a * (p - m.b)))
}

/// Zero-shifted logistic: `(psi(p) - M Omega) / (1 - Omega)`, so that
/// `phi(0) = 0`.
pub fn phi(p: f64, m: &LogisticParams) -> f64 {
    let omega = m.omega();
    (psi(p, m) - m.m * omega) / (1.0 - omega)
}

pub fn theta(p: f64, m: &SensitivityParams) -> f64 {
    if p <= m.p0 {
        return 0.0;
    }
    let e0 = m.e0();
    let v = m.m / e0 * ((1.0 + e0) / (1.0 + exp_clamped(-m.c * p + m.n)) - 1.0);
    v.max(0.0)
}

pub fn psi_inverse(tau: f64, m: &LogisticParams) -> Result<f64> {
    if !(tau > 0.0 && tau < m.m) {
        return Err(Error::OutOfRange { what: "logistic target tau", value: tau });
    }
    Ok(m.b + (tau.ln() - (m.m - tau).ln()) / m.a)
}

/// Received-power threshold with `ln tau` replaced by its tangent at
/// `tau_m`. Never below [`psi_inverse`], equal to it when `tau_m == tau`.
pub fn lambda_linearized(tau: f64, tau_m: f64, m: &LogisticParams) -> Result<f64> {
    if !(tau > 0.0 && tau < m.m) {
        return Err(Error::OutOfRange { what: "logistic target tau", value: tau });
    }
    if !(tau_m > 0.0 && tau_m < m.m) {
        return Err(Error::OutOfRange { what: "linearization point tau_m", value: tau_m });
    }
    Ok(tau_m.ln() / m.a + (tau - tau_m) / (m.a * tau_m) + m.b - (m.m - tau).ln() / m.a)
}

/// Received power at which `theta` reaches `tau`; `p0` for `tau = 0`.
pub fn theta_inverse(tau: f64, m: &SensitivityParams) -> Result<f64> {
    if !(tau >= 0.0 && tau < m.m) {
        return Err(Error::OutOfRange { what: "sensitivity target tau", value: tau });
    }
    let e0 = m.e0();
    Ok(m.p0 + ((m.m + tau * e0).ln() - (m.m - tau).ln()) / m.c)
}
