//! Fourier multipliers on the uniform periodic grid x_j = j/N.
//!
//! Every operator here has a real, parity-respecting symbol, so a planar
//! field is transformed in one pass as the complex signal x + iy.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::vec2::Vec2;

type Plans = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<usize, Plans>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plans(n: usize) -> Plans {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry(n)
            .or_insert_with(|| (planner.plan_fft_forward(n), planner.plan_fft_inverse(n)))
            .clone()
    })
}

/// Signed wavenumber of FFT bin `j`; `None` marks the Nyquist bin of an even grid.
pub fn wavenumber(j: usize, n: usize) -> Option<f64> {
    if 2 * j == n {
        None
    } else if 2 * j < n {
        Some(j as f64)
    } else {
        Some(j as f64 - n as f64)
    }
}

fn apply(buf: &mut [Complex64], symbol: &dyn Fn(Option<f64>) -> Complex64) {
    let n = buf.len();
    let (fwd, inv) = plans(n);
    fwd.process(buf);
    for (j, c) in buf.iter_mut().enumerate() {
        *c *= symbol(wavenumber(j, n));
    }
    inv.process(buf);
    let scale = 1.0 / n as f64;
    for c in buf.iter_mut() {
        *c *= scale;
    }
}

/// Apply a real-valued Fourier multiplier to a planar field.
pub fn multiply_vec(v: &[Vec2], symbol: &dyn Fn(Option<f64>) -> Complex64) -> Vec<Vec2> {
    let mut buf: Vec<Complex64> = v.iter().map(|p| Complex64::new(p.x, p.y)).collect();
    apply(&mut buf, symbol);
    buf.iter().map(|c| Vec2::new(c.re, c.im)).collect()
}

/// Apply a real-valued Fourier multiplier to a scalar field.
pub fn multiply_scalar(f: &[f64], symbol: &dyn Fn(Option<f64>) -> Complex64) -> Vec<f64> {
    let mut buf: Vec<Complex64> = f.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    apply(&mut buf, symbol);
    buf.iter().map(|c| c.re).collect()
}

fn d1_symbol(k: Option<f64>) -> Complex64 {
    match k {
        Some(k) => Complex64::new(0.0, 2.0 * PI * k),
        None => Complex64::new(0.0, 0.0),
    }
}

fn d2_symbol(k: Option<f64>, n: usize) -> Complex64 {
    let w = match k {
        Some(k) => 2.0 * PI * k,
        None => PI * n as f64,
    };
    Complex64::new(-w * w, 0.0)
}

fn antideriv_symbol(k: Option<f64>) -> Complex64 {
    match k {
        Some(k) if k != 0.0 => Complex64::new(0.0, -1.0 / (2.0 * PI * k)),
        _ => Complex64::new(0.0, 0.0),
    }
}

/// Wavenumbers kept by the two-thirds rule, |k| < N/3. Products of two
/// resolved fields are then integrated on the grid without aliasing.
pub fn is_resolved(k: Option<f64>, n: usize) -> bool {
    matches!(k, Some(k) if 3.0 * k.abs() < n as f64)
}

/// Orthogonal projection onto the resolved band.
pub fn band_limit(v: &[Vec2]) -> Vec<Vec2> {
    let n = v.len();
    multiply_vec(v, &|k| Complex64::new(if is_resolved(k, n) { 1.0 } else { 0.0 }, 0.0))
}

/// First derivative in x. Antisymmetric; the Nyquist mode is annihilated.
pub fn deriv(v: &[Vec2]) -> Vec<Vec2> {
    multiply_vec(v, &d1_symbol)
}

/// Second derivative in x. Symmetric and negative semidefinite.
pub fn deriv2(v: &[Vec2]) -> Vec<Vec2> {
    let n = v.len();
    multiply_vec(v, &|k| d2_symbol(k, n))
}

pub fn deriv_scalar(f: &[f64]) -> Vec<f64> {
    multiply_scalar(f, &d1_symbol)
}

pub fn deriv2_scalar(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    multiply_scalar(f, &|k| d2_symbol(k, n))
}

/// Zero-mean periodic antiderivative of the zero-mean part of `f`.
/// Antisymmetric with respect to the grid pairing.
pub fn antideriv(f: &[f64]) -> Vec<f64> {
    multiply_scalar(f, &antideriv_symbol)
}

pub fn antideriv_vec(v: &[Vec2]) -> Vec<Vec2> {
    multiply_vec(v, &antideriv_symbol)
}

/// Nodal values of x ↦ ∫₀ˣ f for the trigonometric interpolant of `f`.
pub fn cumulative(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mean = f.iter().sum::<f64>() / n as f64;
    let s = antideriv(f);
    let s0 = s[0];
    s.iter()
        .enumerate()
        .map(|(j, &a)| mean * j as f64 / n as f64 + a - s0)
        .collect()
}

pub fn mean(f: &[f64]) -> f64 {
    f.iter().sum::<f64>() / f.len() as f64
}

/// Grid L² pairing ⟨a, b⟩ = (1/N) Σ a_j·b_j.
pub fn pair(a: &[Vec2], b: &[Vec2]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p.dot(*q)).sum::<f64>() / a.len() as f64
}

pub fn l2_norm(a: &[Vec2]) -> f64 {
    pair(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|j| j as f64 / n as f64).collect()
    }

    #[test]
    fn derivative_of_trig_modes_is_exact() {
        let n = 32;
        let f: Vec<f64> = grid(n).iter().map(|x| (2.0 * PI * 3.0 * x).sin()).collect();
        let df = deriv_scalar(&f);
        let d2f = deriv2_scalar(&f);
        for (j, x) in grid(n).iter().enumerate() {
            let w = 6.0 * PI;
            assert!((df[j] - w * (w * x).cos()).abs() < 1e-11);
            assert!((d2f[j] + w * w * (w * x).sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn cumulative_integrates_constants_and_modes() {
        let n = 16;
        let ones = vec![2.0; n];
        let c = cumulative(&ones);
        for (j, x) in grid(n).iter().enumerate() {
            assert!((c[j] - 2.0 * x).abs() < 1e-14);
        }
        let f: Vec<f64> = grid(n).iter().map(|x| (2.0 * PI * x).cos()).collect();
        let c = cumulative(&f);
        for (j, x) in grid(n).iter().enumerate() {
            assert!((c[j] - (2.0 * PI * x).sin() / (2.0 * PI)).abs() < 1e-14);
        }
    }

    #[test]
    fn derivative_is_antisymmetric() {
        let n = 12;
        let a: Vec<Vec2> = (0..n).map(|j| Vec2::new((j * j % 7) as f64, j as f64 * 0.3)).collect();
        let b: Vec<Vec2> = (0..n).map(|j| Vec2::new((j % 5) as f64, -(j as f64).sqrt())).collect();
        let lhs = pair(&deriv(&a), &b);
        let rhs = -pair(&a, &deriv(&b));
        assert!((lhs - rhs).abs() < 1e-12);
        let lhs2 = pair(&deriv2(&a), &b);
        let rhs2 = pair(&a, &deriv2(&b));
        assert!((lhs2 - rhs2).abs() < 1e-9 * lhs2.abs().max(1.0));
    }

    #[test]
    fn odd_grids_have_no_nyquist_bin() {
        assert_eq!(wavenumber(4, 9), Some(4.0));
        assert_eq!(wavenumber(5, 9), Some(-4.0));
        assert_eq!(wavenumber(4, 8), None);
    }
}
