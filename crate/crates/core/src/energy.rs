//! Bending, length and proximity energies with their first variations along
//! constant-speed perturbations.

use serde::{Deserialize, Serialize};

use crate::curve::{check_grid, constant_speed_deviation, length, phi1_from_density, ClosedCurve, VectorField};
use crate::error::{FlowError, Result};
use crate::spectral::{self, antideriv, deriv, deriv2};
use crate::tolerance::TOL_AC;
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct EnergyParams {
    p: f64,
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    p: f64,
    lambda: f64,
}

impl TryFrom<RawParams> for EnergyParams {
    type Error = FlowError;
    fn try_from(r: RawParams) -> Result<Self> {
        EnergyParams::new(r.p, r.lambda)
    }
}

impl From<EnergyParams> for RawParams {
    fn from(e: EnergyParams) -> Self {
        RawParams { p: e.p, lambda: e.lambda }
    }
}

impl EnergyParams {
    pub fn new(p: f64, lambda: f64) -> Result<Self> {
        if !(p >= 2.0 && p.is_finite()) {
            return Err(FlowError::InvalidParameter(format!("exponent p = {p} must be at least 2")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(FlowError::InvalidParameter(format!("length weight λ = {lambda} must be positive")));
        }
        Ok(EnergyParams { p, lambda })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Radius of the circle that is critical for the total energy, ((p−1)/(pλ))^{1/p}.
    pub fn stationary_radius(&self) -> f64 {
        ((self.p - 1.0) / (self.p * self.lambda)).powf(1.0 / self.p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub bending: f64,
    pub len: f64,
    pub total: f64,
}

fn signed_pow(v: f64, e: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum() * v.abs().powf(e)
    }
}

/// (1/p)∫|κ|^p |γ_x| dx, valid for any immersed parametrization.
pub fn bending_energy(curve: &ClosedCurve, params: &EnergyParams) -> f64 {
    let p = params.p;
    let t = deriv(curve.samples());
    let a = deriv2(curve.samples());
    let sum: f64 = t
        .iter()
        .zip(&a)
        .map(|(&t, &a)| {
            let s = t.norm();
            (a.dot(t.rot()) / (s * s * s)).abs().powf(p) * s
        })
        .sum();
    sum / (p * t.len() as f64)
}

/// (1/(p𝓛^{2p−1}))∫|γ_xx|^p dx, the form that holds on constant-speed curves.
pub fn bending_energy_ac(curve: &ClosedCurve, params: &EnergyParams) -> f64 {
    let p = params.p;
    let len = length(curve);
    let a = deriv2(curve.samples());
    let mean = a.iter().map(|v| v.norm().powf(p)).sum::<f64>() / a.len() as f64;
    mean / (p * len.powf(2.0 * p - 1.0))
}

pub fn total_energy(curve: &ClosedCurve, params: &EnergyParams) -> EnergyBreakdown {
    let bending = bending_energy(curve, params);
    let len = length(curve);
    EnergyBreakdown { bending, len, total: bending + params.lambda * len }
}

/// (𝓛(prev)/(2τ))∫|γ − prev|² dx.
pub fn penalty(gamma: &ClosedCurve, prev: &ClosedCurve, tau: f64) -> Result<f64> {
    check_grid(gamma.grid_size(), prev.grid_size())?;
    check_tau(tau)?;
    let n = gamma.grid_size() as f64;
    let sq: f64 = gamma
        .samples()
        .iter()
        .zip(prev.samples())
        .map(|(&a, &b)| (a - b).norm_sq())
        .sum();
    Ok(length(prev) / (2.0 * tau) * sq / n)
}

pub fn step_functional(gamma: &ClosedCurve, prev: &ClosedCurve, tau: f64, params: &EnergyParams) -> Result<f64> {
    Ok(total_energy(gamma, params).total + penalty(gamma, prev, tau)?)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(FlowError::InvalidParameter(format!("time step τ = {tau} must be positive")))
    }
}

pub(crate) fn check_constant_speed(gamma: &ClosedCurve, tol: f64) -> Result<()> {
    let deviation = constant_speed_deviation(gamma);
    if deviation > tol {
        Err(FlowError::NotConstantSpeed { deviation, tol })
    } else {
        Ok(())
    }
}

/// Nodal data of the discrete bending energy needed by its derivative.
struct BendingTerms {
    /// Pairs with η_xx.
    second: Vec<Vec2>,
    /// Pairs with η_x.
    first: Vec<Vec2>,
}

fn bending_terms(gamma: &ClosedCurve, p: f64) -> BendingTerms {
    let t = deriv(gamma.samples());
    let a = deriv2(gamma.samples());
    let mut second = Vec::with_capacity(t.len());
    let mut first = Vec::with_capacity(t.len());
    for (&t, &a) in t.iter().zip(&a) {
        let s = t.norm();
        let q = a.dot(t.rot());
        let w = signed_pow(q, p - 1.0) / s.powf(3.0 * p - 1.0);
        let c = (3.0 * p - 1.0) / p * q.abs().powf(p) / s.powf(3.0 * p + 1.0);
        second.push(t.rot() * w);
        first.push(a.rot() * -w - t * c);
    }
    BendingTerms { second, first }
}

/// The tangential correction η + Φ₁(γ,η)·γ_x that keeps the perturbation at constant speed.
fn lifted(gamma: &ClosedCurve, eta: &VectorField) -> Vec<Vec2> {
    let t = deriv(gamma.samples());
    let de = deriv(&eta.values);
    let b: Vec<f64> = t.iter().zip(&de).map(|(t, e)| t.dot(*e)).collect();
    let phi = phi1_from_density(&b, length(gamma));
    eta.values.iter().zip(&t).zip(&phi).map(|((&e, &t), &f)| e + t * f).collect()
}

fn bending_differential(gamma: &ClosedCurve, z: &[Vec2], p: f64) -> f64 {
    let terms = bending_terms(gamma, p);
    spectral::pair(&terms.second, &deriv2(z)) + spectral::pair(&terms.first, &deriv(z))
}

fn length_differential_raw(gamma: &ClosedCurve, z: &[Vec2]) -> f64 {
    let t = deriv(gamma.samples());
    let unit: Vec<Vec2> = t.iter().map(|&v| v * (1.0 / v.norm())).collect();
    spectral::pair(&unit, &deriv(z))
}

/// d/dδ E_p(μ(δ)) at δ = 0 for the constant-speed perturbation μ of γ in direction η.
pub fn first_variation_bending(gamma: &ClosedCurve, eta: &VectorField, params: &EnergyParams) -> Result<f64> {
    check_grid(gamma.grid_size(), eta.grid_size())?;
    check_constant_speed(gamma, TOL_AC)?;
    Ok(bending_differential(gamma, &lifted(gamma, eta), params.p))
}

/// d/dδ 𝓛(μ(δ)) at δ = 0.
pub fn first_variation_length(gamma: &ClosedCurve, eta: &VectorField) -> Result<f64> {
    check_grid(gamma.grid_size(), eta.grid_size())?;
    check_constant_speed(gamma, TOL_AC)?;
    Ok(length_differential_raw(gamma, &lifted(gamma, eta)))
}

/// d/dδ 𝓛(γ + δη) at δ = 0, with no reparametrization: ∫ γ_x·η_x/|γ_x| dx.
pub fn length_differential(gamma: &ClosedCurve, eta: &VectorField) -> Result<f64> {
    check_grid(gamma.grid_size(), eta.grid_size())?;
    Ok(length_differential_raw(gamma, &eta.values))
}

/// d/dδ P(μ(δ), prev) at δ = 0: 𝓛(prev)∫((γ − prev)/τ)·(η + Φ₁(γ,η)γ_x) dx.
pub fn first_variation_penalty(
    gamma: &ClosedCurve,
    prev: &ClosedCurve,
    eta: &VectorField,
    tau: f64,
) -> Result<f64> {
    check_grid(gamma.grid_size(), eta.grid_size())?;
    check_grid(gamma.grid_size(), prev.grid_size())?;
    check_tau(tau)?;
    check_constant_speed(gamma, TOL_AC)?;
    let z = lifted(gamma, eta);
    let scale = length(prev) / tau;
    let diff: Vec<Vec2> = gamma.samples().iter().zip(prev.samples()).map(|(&a, &b)| (a - b) * scale).collect();
    Ok(spectral::pair(&diff, &z))
}

/// Grid gradient of G = E_p + λ𝓛 + P for unconstrained nodal moves.
pub(crate) fn free_gradient(gamma: &ClosedCurve, prev: &ClosedCurve, tau: f64, params: &EnergyParams) -> Vec<Vec2> {
    let terms = bending_terms(gamma, params.p);
    let bend2 = deriv2(&terms.second);
    let t = deriv(gamma.samples());
    let lam = params.lambda;
    let first: Vec<Vec2> = terms
        .first
        .iter()
        .zip(&t)
        .map(|(&f, &t)| f + t * (lam / t.norm()))
        .collect();
    let bend1 = deriv(&first);
    let scale = length(prev) / tau;
    gamma
        .samples()
        .iter()
        .zip(prev.samples())
        .zip(bend2.iter().zip(&bend1))
        .map(|((&g, &q), (&b2, &b1))| b2 - b1 + (g - q) * scale)
        .collect()
}

/// Adds the adjoint of the tangential correction: returns r with
/// ⟨r, η⟩ = ⟨f, η + Φ₁(γ,η)γ_x⟩ for every η.
pub(crate) fn lift_gradient(gamma: &ClosedCurve, f: &[Vec2]) -> Vec<Vec2> {
    let t = deriv(gamma.samples());
    let len = length(gamma);
    let mut w: Vec<f64> = f.iter().zip(&t).map(|(f, t)| f.dot(*t)).collect();
    let total: f64 = w.iter().sum();
    w[0] -= total;
    let c = antideriv(&w);
    let scale = 1.0 / (len * len);
    let ct: Vec<Vec2> = c.iter().zip(&t).map(|(&c, &t)| t * (c * scale)).collect();
    f.iter().zip(deriv(&ct)).map(|(&f, d)| f - d).collect()
}

/// Grid representative g of η ↦ dE_p + λd𝓛 + dP along constant-speed perturbations,
/// i.e. ⟨g, η⟩ equals the sum of the three first variations.
pub fn gradient_step_functional(
    gamma: &ClosedCurve,
    prev: &ClosedCurve,
    tau: f64,
    params: &EnergyParams,
) -> Result<VectorField> {
    check_grid(gamma.grid_size(), prev.grid_size())?;
    check_tau(tau)?;
    check_constant_speed(gamma, TOL_AC)?;
    Ok(VectorField::new(lift_gradient(gamma, &free_gradient(gamma, prev, tau, params))))
}
