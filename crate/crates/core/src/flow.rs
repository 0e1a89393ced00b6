//! Minimizing movements: each step minimizes G(γ) = 𝓔_p(γ) + P(γ, prev)
//! over constant-speed curves, starting from prev.

use serde::{Deserialize, Serialize};

use crate::curve::{
    check_grid, constant_speed_deviation, length, reparametrize_with, ClosedCurve, ReparamOptions,
    VectorField,
};
use crate::energy::{check_constant_speed, free_gradient, lift_gradient, penalty, total_energy, EnergyParams};
use crate::error::{FlowError, Result};
use crate::spectral::{self, multiply_vec};
use crate::tolerance::{ARMIJO_C, BACKTRACK, INNER_MAX_ITERS, INNER_TOL_FACTOR, TOL_AC, TOL_REPARAM};
use crate::vec2::Vec2;
use rustfft::num_complex::Complex64;
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub params: EnergyParams,
    pub grid_size: usize,
    pub tau: f64,
    pub horizon: f64,
    /// Absolute threshold on the projected-gradient L² norm; `None` means
    /// 10⁻⁶·max(1, 𝓔_p(γ₀)).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_tol: Option<f64>,
    #[serde(default = "default_inner_max_iters")]
    pub inner_max_iters: usize,
    #[serde(default = "default_armijo_c")]
    pub armijo_c: f64,
    #[serde(default = "default_backtrack")]
    pub backtrack_factor: f64,
    #[serde(default = "default_tol_reparam")]
    pub tol_reparam: f64,
    #[serde(default = "default_tol_ac")]
    pub tol_ac: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_inner_max_iters() -> usize {
    INNER_MAX_ITERS
}
fn default_armijo_c() -> f64 {
    ARMIJO_C
}
fn default_backtrack() -> f64 {
    BACKTRACK
}
fn default_tol_reparam() -> f64 {
    TOL_REPARAM
}
fn default_tol_ac() -> f64 {
    TOL_AC
}

impl FlowConfig {
    pub fn new(params: EnergyParams, grid_size: usize, tau: f64, horizon: f64) -> Self {
        FlowConfig {
            params,
            grid_size,
            tau,
            horizon,
            inner_tol: None,
            inner_max_iters: INNER_MAX_ITERS,
            armijo_c: ARMIJO_C,
            backtrack_factor: BACKTRACK,
            tol_reparam: TOL_REPARAM,
            tol_ac: TOL_AC,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FlowError::InvalidParameter(msg));
        if self.grid_size < 8 {
            return Err(FlowError::GridTooSmall(self.grid_size));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("τ = {} must be positive", self.tau));
        }
        if !(self.horizon >= self.tau && self.horizon.is_finite()) {
            return bad(format!("horizon T = {} must be at least τ = {}", self.horizon, self.tau));
        }
        if let Some(t) = self.inner_tol {
            if !(t > 0.0) {
                return bad(format!("inner_tol = {t} must be positive"));
            }
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad(format!("armijo_c = {} must lie in (0, 1)", self.armijo_c));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad(format!("backtrack_factor = {} must lie in (0, 1)", self.backtrack_factor));
        }
        if !(self.tol_reparam > 0.0 && self.tol_ac > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.inner_max_iters == 0 {
            return bad("inner_max_iters must be at least 1".into());
        }
        Ok(())
    }

    /// n = ⌈T/τ⌉.
    pub fn step_count(&self) -> usize {
        ((self.horizon / self.tau) - 1e-9).ceil().max(1.0) as usize
    }

    fn resolved_inner_tol(&self, reference_energy: f64) -> f64 {
        self.inner_tol.unwrap_or(INNER_TOL_FACTOR * reference_energy.max(1.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub energy_before: f64,
    pub energy_after: f64,
    pub penalty_value: f64,
    pub inner_iters: usize,
    pub grad_norm_final: f64,
    /// 𝓔_p(γ_{i−1}) − 𝓔_p(γ_i) − P.
    pub dissipation_slack: f64,
    /// Gradient norm reached inner_tol.
    pub converged: bool,
    /// The line search found no admissible step before convergence.
    pub stalled: bool,
    pub deviation: f64,
}

/// Circulant model of the Hessian of G, (𝓛(prev)/τ) + w_b ∂⁴ − w_l ∂²,
/// inverted on the resolved band and zero above it.
fn precondition(gamma: &ClosedCurve, prev_len: f64, tau: f64, params: &EnergyParams, g: &[Vec2]) -> Vec<Vec2> {
    let p = params.p();
    let len = length(gamma);
    let a = spectral::deriv2(gamma.samples());
    let mean_weight = a.iter().map(|v| v.norm().powf(p - 2.0)).sum::<f64>() / a.len() as f64;
    let wb = (p - 1.0) * mean_weight / len.powf(2.0 * p - 1.0);
    let wl = params.lambda() / len;
    let c0 = prev_len / tau;
    let n = g.len();
    multiply_vec(g, &|k| match k {
        Some(k) if spectral::is_resolved(Some(k), n) => {
            let w2 = (2.0 * PI * k).powi(2);
            Complex64::new(1.0 / (c0 + wb * w2 * w2 + wl * w2), 0.0)
        }
        _ => Complex64::new(0.0, 0.0),
    })
}

/// Gradient of G along constant-speed perturbations, restricted to the resolved
/// band. Grid-scale modes are left alone: nodal quadrature aliases them and the
/// discrete G can decrease along them without bound on the continuum side.
fn projected_gradient(gamma: &ClosedCurve, prev: &ClosedCurve, tau: f64, params: &EnergyParams) -> Vec<Vec2> {
    spectral::band_limit(&lift_gradient(gamma, &free_gradient(gamma, prev, tau, params)))
}

fn objective(gamma: &ClosedCurve, prev: &ClosedCurve, tau: f64, params: &EnergyParams) -> f64 {
    total_energy(gamma, params).total + penalty(gamma, prev, tau).unwrap_or(f64::INFINITY)
}

/// Projected gradient descent on G with Armijo backtracking; every trial
/// point is mapped back to constant speed before G is evaluated.
pub fn minimize_step(prev: &ClosedCurve, cfg: &FlowConfig) -> Result<(ClosedCurve, StepRecord)> {
    cfg.validate()?;
    check_grid(cfg.grid_size, prev.grid_size())?;
    check_constant_speed(prev, cfg.tol_ac)?;
    let params = &cfg.params;
    let tau = cfg.tau;
    let energy_before = total_energy(prev, params).total;
    let inner_tol = cfg.resolved_inner_tol(energy_before);
    let prev_len = length(prev);
    let reparam = ReparamOptions { tol: cfg.tol_reparam, ..ReparamOptions::default() };

    let mut gamma = prev.clone();
    let mut g_val = energy_before;
    let mut step = 1.0_f64;
    let mut iters = 0;
    let mut converged = false;
    let mut stalled = false;
    let mut grad = projected_gradient(&gamma, prev, tau, params);
    let mut grad_norm = spectral::l2_norm(&grad);

    while iters < cfg.inner_max_iters {
        if grad_norm <= inner_tol {
            converged = true;
            break;
        }
        let dir = precondition(&gamma, prev_len, tau, params, &grad);
        let slope = spectral::pair(&grad, &dir);
        let mut accepted = None;
        loop {
            let trial: Vec<Vec2> = gamma.samples().iter().zip(&dir).map(|(&x, &d)| x - d * step).collect();
            let candidate = ClosedCurve::new(trial).and_then(|c| reparametrize_with(&c, reparam));
            if let Ok(c) = candidate {
                let val = objective(&c, prev, tau, params);
                if val <= g_val - cfg.armijo_c * step * slope {
                    accepted = Some((c, val));
                    break;
                }
            }
            // Below this the predicted decrease is lost in rounding of G.
            if step * slope < 4.0 * f64::EPSILON * g_val.abs().max(1.0) || step < 1e-14 {
                break;
            }
            step *= cfg.backtrack_factor;
        }
        iters += 1;
        match accepted {
            Some((c, val)) => {
                gamma = c;
                g_val = val;
                step = (step / cfg.backtrack_factor).min(1.0);
                grad = projected_gradient(&gamma, prev, tau, params);
                grad_norm = spectral::l2_norm(&grad);
            }
            None => {
                stalled = true;
                break;
            }
        }
    }
    if !converged && grad_norm <= inner_tol {
        converged = true;
    }

    let energy_after = total_energy(&gamma, params).total;
    let penalty_value = penalty(&gamma, prev, tau)?;
    let record = StepRecord {
        index: 0,
        energy_before,
        energy_after,
        penalty_value,
        inner_iters: iters,
        grad_norm_final: grad_norm,
        dissipation_slack: energy_before - energy_after - penalty_value,
        converged,
        stalled,
        deviation: constant_speed_deviation(&gamma),
    };
    Ok((gamma, record))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub config: FlowConfig,
    pub times: Vec<f64>,
    pub curves: Vec<ClosedCurve>,
    /// records[i − 1] describes the step producing curves[i].
    pub records: Vec<StepRecord>,
    /// The supplied initial curve had to be reparametrized.
    pub init_reparametrized: bool,
    /// Set when the run aborted; the trajectory then holds the steps completed so far.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl Trajectory {
    /// Wraps an explicit curve sequence γ₀, γ₁, … at spacing cfg.tau.
    /// Step records are recomputed from the curves.
    pub fn from_curves(config: FlowConfig, curves: Vec<ClosedCurve>) -> Result<Trajectory> {
        let n = curves.first().map(|c| c.grid_size()).unwrap_or(0);
        for c in &curves {
            check_grid(n, c.grid_size())?;
        }
        let params = config.params;
        let records = curves
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let before = total_energy(&w[0], &params).total;
                let after = total_energy(&w[1], &params).total;
                let pen = penalty(&w[1], &w[0], config.tau)?;
                Ok(StepRecord {
                    index: i + 1,
                    energy_before: before,
                    energy_after: after,
                    penalty_value: pen,
                    inner_iters: 0,
                    grad_norm_final: f64::NAN,
                    dissipation_slack: before - after - pen,
                    converged: true,
                    stalled: false,
                    deviation: constant_speed_deviation(&w[1]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let times = (0..curves.len()).map(|i| i as f64 * config.tau).collect();
        Ok(Trajectory { config, times, curves, records, init_reparametrized: false, failure: None })
    }

    pub fn tau(&self) -> f64 {
        self.config.tau
    }

    /// Number of completed steps.
    pub fn steps(&self) -> usize {
        self.curves.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        self.steps() as f64 * self.tau()
    }

    pub fn initial(&self) -> &ClosedCurve {
        &self.curves[0]
    }

    pub fn terminal(&self) -> &ClosedCurve {
        self.curves.last().expect("trajectory holds the initial curve")
    }

    /// 𝓔_p at every stored curve.
    pub fn energies(&self) -> Vec<f64> {
        self.curves.iter().map(|c| total_energy(c, &self.config.params).total).collect()
    }

    /// V_i = (γ_i − γ_{i−1})/τ.
    pub fn velocity(&self, i: usize) -> Result<VectorField> {
        if i == 0 || i > self.steps() {
            return Err(FlowError::IndexOutOfRange { index: i, max: self.steps() });
        }
        let inv = 1.0 / self.tau();
        Ok(VectorField::new(
            self.curves[i]
                .samples()
                .iter()
                .zip(self.curves[i - 1].samples())
                .map(|(&a, &b)| (a - b) * inv)
                .collect(),
        ))
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let horizon = self.final_time();
        if !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)) {
            return Err(FlowError::TimeOutOfRange { t, horizon });
        }
        Ok(())
    }

    /// Step i with t ∈ ((i−1)τ, iτ]; t = 0 maps to the first step.
    fn step_of(&self, t: f64) -> usize {
        let i = (t / self.tau() - 1e-9).ceil().max(1.0) as usize;
        i.min(self.steps())
    }

    /// γ_{i−1} + (t − (i−1)τ)V_i on [(i−1)τ, iτ].
    pub fn interp_linear(&self, t: f64) -> Result<Vec<Vec2>> {
        self.check_time(t)?;
        let i = self.step_of(t);
        let theta = (t - (i - 1) as f64 * self.tau()) / self.tau();
        if theta == 1.0 {
            return Ok(self.curves[i].samples().to_vec());
        }
        Ok(self.curves[i - 1]
            .samples()
            .iter()
            .zip(self.curves[i].samples())
            .map(|(&a, &b)| a + (b - a) * theta)
            .collect())
    }

    /// (γ̃, Γ̃) = (γ_i, γ_{i−1}) for t ∈ ((i−1)τ, iτ].
    pub fn interp_constant(&self, t: f64) -> Result<(&ClosedCurve, &ClosedCurve)> {
        self.check_time(t)?;
        let i = self.step_of(t);
        Ok((&self.curves[i], &self.curves[i - 1]))
    }
}

/// Runs n = ⌈T/τ⌉ minimizing-movement steps from `init`.
///
/// The initial curve is reparametrized to constant speed when its deviation
/// exceeds tol_reparam. A failing step ends the run; the partial trajectory is
/// returned with `failure` set.
pub fn run_flow(init: &ClosedCurve, cfg: &FlowConfig) -> Result<Trajectory> {
    run_flow_with(init, cfg, |_, _, _| {})
}

/// As [`run_flow`], calling `observe(i, γ_i, record)` after every step.
pub fn run_flow_with(
    init: &ClosedCurve,
    cfg: &FlowConfig,
    mut observe: impl FnMut(usize, &ClosedCurve, &StepRecord),
) -> Result<Trajectory> {
    cfg.validate()?;
    check_grid(cfg.grid_size, init.grid_size())?;
    let (start, init_reparametrized) = if constant_speed_deviation(init) > cfg.tol_reparam {
        let opts = ReparamOptions { tol: cfg.tol_reparam, ..ReparamOptions::default() };
        (reparametrize_with(init, opts)?, true)
    } else {
        (init.clone(), false)
    };
    let mut step_cfg = cfg.clone();
    step_cfg.inner_tol = Some(cfg.resolved_inner_tol(total_energy(&start, &cfg.params).total));

    let n = cfg.step_count();
    let mut traj = Trajectory {
        config: step_cfg.clone(),
        times: vec![0.0],
        curves: vec![start],
        records: Vec::with_capacity(n),
        init_reparametrized,
        failure: None,
    };
    for i in 1..=n {
        match minimize_step(traj.terminal(), &step_cfg) {
            Ok((curve, mut record)) => {
                record.index = i;
                observe(i, &curve, &record);
                traj.times.push(i as f64 * cfg.tau);
                traj.curves.push(curve);
                traj.records.push(record);
            }
            Err(e) => {
                traj.failure = Some(format!("step {i}: {e}"));
                break;
            }
        }
    }
    Ok(traj)
}
