//! Closed planar curves sampled on the uniform periodic grid, their
//! calculus, and the constant-speed machinery.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::spectral::{self, antideriv, antideriv_vec, cumulative, deriv, deriv2};
use crate::tolerance::{DEGENERACY_FLOOR, TOL_REPARAM};
use crate::vec2::Vec2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        ScalarField { values }
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Self {
        ScalarField::new((0..n).map(|j| f(j as f64 / n as f64)).collect())
    }

    pub fn grid_size(&self) -> usize {
        self.values.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    pub values: Vec<Vec2>,
}

impl VectorField {
    pub fn new(values: Vec<Vec2>) -> Self {
        VectorField { values }
    }

    pub fn zeros(n: usize) -> Self {
        VectorField::new(vec![Vec2::ZERO; n])
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> Vec2) -> Self {
        VectorField::new((0..n).map(|j| f(j as f64 / n as f64)).collect())
    }

    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    pub fn scaled(&self, s: f64) -> VectorField {
        VectorField::new(self.values.iter().map(|&v| v * s).collect())
    }

    /// Grid L² pairing (1/N) Σ a_j·b_j.
    pub fn pair(&self, other: &VectorField) -> f64 {
        spectral::pair(&self.values, &other.values)
    }

    pub fn l2_norm(&self) -> f64 {
        spectral::l2_norm(&self.values)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// N samples γ(j/N) of a closed immersed curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct ClosedCurve {
    samples: Vec<Vec2>,
}

impl TryFrom<Vec<Vec2>> for ClosedCurve {
    type Error = FlowError;
    fn try_from(samples: Vec<Vec2>) -> Result<Self> {
        ClosedCurve::new(samples)
    }
}

impl From<ClosedCurve> for Vec<Vec2> {
    fn from(c: ClosedCurve) -> Self {
        c.samples
    }
}

impl ClosedCurve {
    pub fn new(samples: Vec<Vec2>) -> Result<Self> {
        if samples.len() < 8 {
            return Err(FlowError::GridTooSmall(samples.len()));
        }
        if let Some(j) = samples.iter().position(|p| !p.is_finite()) {
            return Err(FlowError::NonFinite(j));
        }
        let speeds: Vec<f64> = deriv(&samples).iter().map(|t| t.norm()).collect();
        let len = spectral::mean(&speeds);
        let floor = DEGENERACY_FLOOR * len;
        if let Some((node, &speed)) = speeds
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .filter(|(_, &s)| !(s >= floor && s > 0.0))
        {
            return Err(FlowError::DegenerateCurve { node, speed, floor });
        }
        Ok(ClosedCurve { samples })
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> Vec2) -> Result<Self> {
        ClosedCurve::new((0..n).map(|j| f(j as f64 / n as f64)).collect())
    }

    /// Uniform samples of the counterclockwise circle of radius `r` about `center`.
    pub fn circle(n: usize, r: f64, center: Vec2) -> Result<Self> {
        ClosedCurve::from_fn(n, |x| center + Vec2::new((2.0 * PI * x).cos(), (2.0 * PI * x).sin()) * r)
    }

    pub fn samples(&self) -> &[Vec2] {
        &self.samples
    }

    pub fn grid_size(&self) -> usize {
        self.samples.len()
    }

    /// γ + δη, checked for immersion.
    pub fn displaced(&self, eta: &VectorField, delta: f64) -> Result<ClosedCurve> {
        check_grid(self.grid_size(), eta.grid_size())?;
        ClosedCurve::new(self.samples.iter().zip(&eta.values).map(|(&p, &e)| p + e * delta).collect())
    }

    pub fn translated(&self, c: Vec2) -> ClosedCurve {
        ClosedCurve { samples: self.samples.iter().map(|&p| p + c).collect() }
    }

    pub fn scaled(&self, s: f64) -> Result<ClosedCurve> {
        ClosedCurve::new(self.samples.iter().map(|&p| p * s).collect())
    }

    /// Same image traversed backwards from the same base point.
    pub fn reversed(&self) -> ClosedCurve {
        let n = self.grid_size();
        ClosedCurve { samples: (0..n).map(|j| self.samples[(n - j) % n]).collect() }
    }

    pub fn centroid(&self) -> Vec2 {
        let n = self.grid_size() as f64;
        self.samples.iter().fold(Vec2::ZERO, |acc, &p| acc + p) * (1.0 / n)
    }

    pub fn as_field(&self) -> VectorField {
        VectorField::new(self.samples.clone())
    }
}

pub(crate) fn check_grid(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(FlowError::GridMismatch(a, b))
    }
}

pub fn d1(curve: &ClosedCurve) -> VectorField {
    VectorField::new(deriv(curve.samples()))
}

pub fn d2(curve: &ClosedCurve) -> VectorField {
    VectorField::new(deriv2(curve.samples()))
}

pub fn d1_field(v: &VectorField) -> VectorField {
    VectorField::new(deriv(&v.values))
}

pub fn d2_field(v: &VectorField) -> VectorField {
    VectorField::new(deriv2(&v.values))
}

pub fn speeds(curve: &ClosedCurve) -> Vec<f64> {
    deriv(curve.samples()).iter().map(|t| t.norm()).collect()
}

pub fn length(curve: &ClosedCurve) -> f64 {
    spectral::mean(&speeds(curve))
}

/// Signed curvature (γ_xx·Rγ_x)/|γ_x|³.
pub fn curvature(curve: &ClosedCurve) -> ScalarField {
    let t = deriv(curve.samples());
    let a = deriv2(curve.samples());
    ScalarField::new(
        t.iter()
            .zip(&a)
            .map(|(&t, &a)| a.dot(t.rot()) / t.norm().powi(3))
            .collect(),
    )
}

/// max_j | |γ_x(x_j)| − 𝓛 | / 𝓛.
pub fn constant_speed_deviation(curve: &ClosedCurve) -> f64 {
    let s = speeds(curve);
    let len = spectral::mean(&s);
    s.iter().map(|&v| (v - len).abs()).fold(0.0, f64::max) / len
}

#[derive(Clone, Copy, Debug)]
pub struct ReparamOptions {
    /// Largest deviation accepted as success.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ReparamOptions {
    fn default() -> Self {
        ReparamOptions { tol: TOL_REPARAM, max_iters: 50 }
    }
}

/// Iteration stops early once the deviation is at this level.
const REPARAM_FLOOR: f64 = 1e-13;

pub fn reparametrize_constant_speed(curve: &ClosedCurve) -> Result<ClosedCurve> {
    reparametrize_with(curve, ReparamOptions::default())
}

/// Repeats the one-shot arclength map until the nodal speeds agree.
/// Keeps the best iterate and stops as soon as a step fails to improve.
pub fn reparametrize_with(curve: &ClosedCurve, opts: ReparamOptions) -> Result<ClosedCurve> {
    let mut best = curve.clone();
    let mut dev = constant_speed_deviation(&best);
    for _ in 0..opts.max_iters {
        if dev <= REPARAM_FLOOR {
            break;
        }
        let next = constant_speed_step(&best)?;
        let next_dev = constant_speed_deviation(&next);
        if next_dev >= dev {
            break;
        }
        best = next;
        dev = next_dev;
    }
    if dev > opts.tol {
        return Err(FlowError::ReparamNotConverged { deviation: dev, tol: opts.tol });
    }
    Ok(best)
}

/// One application of the arclength map: Ψ(x) = (1/𝓛)∫₀ˣ|γ_x|, output γ∘Ψ⁻¹ at the nodes.
///
/// Ψ is the trigonometric cumulative integral of the nodal speeds, inverted on
/// its cubic Hermite interpolant (nodal slopes |γ_x|/𝓛). γ is evaluated by
/// quintic Hermite interpolation from nodal values, d1 and d2, so the map is
/// C² and its derivative at a constant-speed curve is η ↦ η + Φ₁(γ,η)·γ_x.
pub fn constant_speed_step(curve: &ClosedCurve) -> Result<ClosedCurve> {
    let g = curve.samples();
    let n = g.len();
    let h = 1.0 / n as f64;
    let t = deriv(g);
    let a = deriv2(g);
    let s: Vec<f64> = t.iter().map(|v| v.norm()).collect();
    let len = spectral::mean(&s);
    let mut psi: Vec<f64> = cumulative(&s).iter().map(|c| c / len).collect();
    psi[0] = 0.0;
    psi.push(1.0);
    if let Some(j) = (0..n).find(|&j| psi[j + 1] <= psi[j]) {
        return Err(FlowError::NonMonotoneProfile(j));
    }
    let slope = |j: usize| s[j % n] / len;

    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    for j in 0..n {
        let x = j as f64 * h;
        while k + 1 < n && psi[k + 1] <= x {
            k += 1;
        }
        let u = invert_cubic_hermite(psi[k], psi[k + 1], slope(k) * h, slope(k + 1) * h, x);
        let k1 = (k + 1) % n;
        out.push(quintic_hermite(
            [g[k], g[k1]],
            [t[k] * h, t[k1] * h],
            [a[k] * (h * h), a[k1] * (h * h)],
            u,
        ));
    }
    ClosedCurve::new(out)
}

/// The constrained perturbation δ ↦ μ(δ): γ + δη mapped back to constant speed
/// by a single application of the arclength map.
pub fn constrained_perturbation(gamma: &ClosedCurve, eta: &VectorField, delta: f64) -> Result<ClosedCurve> {
    constant_speed_step(&gamma.displaced(eta, delta)?)
}

fn cubic_hermite(p0: f64, p1: f64, m0: f64, m1: f64, u: f64) -> (f64, f64) {
    let u2 = u * u;
    let u3 = u2 * u;
    let val = (2.0 * u3 - 3.0 * u2 + 1.0) * p0
        + (u3 - 2.0 * u2 + u) * m0
        + (-2.0 * u3 + 3.0 * u2) * p1
        + (u3 - u2) * m1;
    let der = (6.0 * u2 - 6.0 * u) * p0
        + (3.0 * u2 - 4.0 * u + 1.0) * m0
        + (-6.0 * u2 + 6.0 * u) * p1
        + (3.0 * u2 - 2.0 * u) * m1;
    (val, der)
}

/// Solve H(u) = x on [0, 1] where H(0) = p0 ≤ x < p1 = H(1). Newton with a bisection guard.
fn invert_cubic_hermite(p0: f64, p1: f64, m0: f64, m1: f64, x: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut u = ((x - p0) / (p1 - p0)).clamp(0.0, 1.0);
    for _ in 0..100 {
        let (val, der) = cubic_hermite(p0, p1, m0, m1, u);
        let f = val - x;
        if f == 0.0 {
            return u;
        }
        if f < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let mut next = if der > 0.0 { u - f / der } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 1e-16 {
            return next;
        }
        u = next;
    }
    u
}

/// Quintic Hermite on a unit segment; derivative data pre-scaled by the segment width.
fn quintic_hermite(p: [Vec2; 2], m: [Vec2; 2], c: [Vec2; 2], u: f64) -> Vec2 {
    let u2 = u * u;
    let u3 = u2 * u;
    let u4 = u3 * u;
    let u5 = u4 * u;
    let h0 = 1.0 - 10.0 * u3 + 15.0 * u4 - 6.0 * u5;
    let h1 = u - 6.0 * u3 + 8.0 * u4 - 3.0 * u5;
    let h2 = 0.5 * u2 - 1.5 * u3 + 1.5 * u4 - 0.5 * u5;
    let h3 = 0.5 * u3 - u4 + 0.5 * u5;
    let h4 = -4.0 * u3 + 7.0 * u4 - 3.0 * u5;
    let h5 = 10.0 * u3 - 15.0 * u4 + 6.0 * u5;
    p[0] * h0 + m[0] * h1 + c[0] * h2 + c[1] * h3 + m[1] * h4 + p[1] * h5
}

/// Φ₁(γ,η) = (1/𝓛²)(x ∫₀¹ γ_x·η_x − ∫₀ˣ γ_x·η_x) at the nodes.
pub fn phi1_field(gamma: &ClosedCurve, eta: &VectorField) -> Result<ScalarField> {
    check_grid(gamma.grid_size(), eta.grid_size())?;
    let t = deriv(gamma.samples());
    let de = deriv(&eta.values);
    let b: Vec<f64> = t.iter().zip(&de).map(|(t, e)| t.dot(*e)).collect();
    Ok(ScalarField::new(phi1_from_density(&b, length(gamma))))
}

/// The cumulative-integral part of Φ₁ given b = γ_x·η_x; the linear term cancels.
pub(crate) fn phi1_from_density(b: &[f64], len: f64) -> Vec<f64> {
    let s = antideriv(b);
    let s0 = s[0];
    let scale = 1.0 / (len * len);
    s.iter().map(|v| -(v - s0) * scale).collect()
}

/// The pair of test fields built from ψ:
/// φ₁ = ∫₀ˣ∫₀^ξ ψ + xα + x²β, φ₂ = ∫₀ˣ ψ + 2xβ,
/// β = −½∫ψ, α = −β − ∫₀¹∫₀^ξ ψ.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFnPair {
    pub phi1: VectorField,
    pub phi2: VectorField,
    pub alpha: Vec2,
    pub beta: Vec2,
    /// Largest endpoint gap φ(1) − φ(0) of the two fields before periodic folding.
    pub closure_mismatch: f64,
}

pub fn build_testfn_pair(psi: &VectorField) -> TestFnPair {
    let n = psi.grid_size();
    let m = psi.values.iter().fold(Vec2::ZERO, |acc, &v| acc + v) * (1.0 / n as f64);
    // ∫₀ˣ ψ = m·x + P(x) with P periodic.
    let sp = antideriv_vec(&psi.values);
    let p: Vec<Vec2> = sp.iter().map(|&v| v - sp[0]).collect();
    let p_mean = p.iter().fold(Vec2::ZERO, |acc, &v| acc + v) * (1.0 / n as f64);
    let beta = m * -0.5;
    // ∫₀¹∫₀^ξ ψ = m/2 + mean(P).
    let double_at_one = m * 0.5 + p_mean;
    let alpha = -beta - double_at_one;
    let sq = antideriv_vec(&p);
    let phi1: Vec<Vec2> = sq.iter().map(|&v| v - sq[0]).collect();
    let gap1 = (double_at_one + alpha + beta).norm();
    let gap2 = (m + beta * 2.0).norm();
    TestFnPair {
        phi1: VectorField::new(phi1),
        phi2: VectorField::new(p),
        alpha,
        beta,
        closure_mismatch: gap1.max(gap2),
    }
}

/// Measured sides of max{‖φ₁‖_{C¹}, ‖φ₂‖∞, |α|, |β|} ≤ (7/2)‖ψ‖_{L¹} and ‖φ₂′‖_{Lʳ} ≤ 2‖ψ‖_{Lʳ}.
#[derive(Clone, Copy, Debug)]
pub struct TestFnBounds {
    pub sup_side: f64,
    pub l1_psi: f64,
    pub lr_dphi2: f64,
    pub lr_psi: f64,
}

impl TestFnBounds {
    pub fn holds(&self) -> bool {
        self.sup_side <= 3.5 * self.l1_psi * (1.0 + 1e-12) + 1e-14
            && self.lr_dphi2 <= 2.0 * self.lr_psi * (1.0 + 1e-12) + 1e-14
    }

    pub fn holds_strictly(&self) -> bool {
        self.sup_side < 3.5 * self.l1_psi && self.lr_dphi2 < 2.0 * self.lr_psi
    }
}

pub fn testfn_bounds(psi: &VectorField, pair: &TestFnPair, r: f64) -> TestFnBounds {
    let sup = |v: &[Vec2]| v.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let lr = |v: &[Vec2]| (v.iter().map(|p| p.norm().powf(r)).sum::<f64>() / v.len() as f64).powf(1.0 / r);
    // φ₁′ = ∫₀ˣψ + α + 2xβ = φ₂ + α and φ₂′ = ψ + 2β.
    let dphi1: Vec<Vec2> = pair.phi2.values.iter().map(|&v| v + pair.alpha).collect();
    let dphi2: Vec<Vec2> = psi.values.iter().map(|&v| v + pair.beta * 2.0).collect();
    let c1 = sup(&pair.phi1.values) + sup(&dphi1);
    let sup_side = c1
        .max(sup(&pair.phi2.values))
        .max(pair.alpha.norm())
        .max(pair.beta.norm());
    TestFnBounds {
        sup_side,
        l1_psi: psi.values.iter().map(|p| p.norm()).sum::<f64>() / psi.grid_size() as f64,
        lr_dphi2: lr(&dphi2),
        lr_psi: lr(&psi.values),
    }
}
