//! Bessel functions `J_n`, the circle map
//! `F(s₁, s₂) = ∫_0^{2π} e^{i(s₁ sin θ + s₂ cos 2θ)} dθ`, its Jacobian and
//! Newton inverse, and the weighted map `φ₀` built from the first `n₀` circle
//! basis functions.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: i64 = 8;
pub const MAX_ARGUMENT: f64 = 50.0;
/// Series / integral-representation switch point.
pub const SERIES_LIMIT: f64 = 12.0;
pub const INTEGRAL_NODES: usize = 256;
/// Periodic trapezoid nodes for `F` and `φ₀`.
pub const CIRCLE_NODES: usize = 1024;

/// `J_n(x)` for `0 <= n <= 8`, `|x| <= 50`.
pub fn bessel_j(n: i64, x: f64) -> Result<f64> {
    if !(0..=MAX_ORDER).contains(&n) {
        return Err(Error::OrderOutOfRange(n));
    }
    if !(x.abs() <= MAX_ARGUMENT) {
        return Err(Error::ArgumentOutOfRange(x));
    }
    Ok(if x.abs() <= SERIES_LIMIT { series(n as u32, x) } else { integral(n as f64, x) })
}

fn series(n: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = (1..=n).fold(1.0, |t, k| t * half / k as f64);
    let mut sum = term;
    let q = -half * half;
    for k in 1..200u32 {
        term *= q / (k as f64 * (k + n) as f64);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// `(1/π) ∫_0^π cos(nτ - x sin τ) dτ`; the integrand extends to an even
/// periodic analytic function, so the trapezoid rule converges geometrically.
fn integral(n: f64, x: f64) -> f64 {
    let h = PI / INTEGRAL_NODES as f64;
    let g = |t: f64| (n * t - x * t.sin()).cos();
    let inner: f64 = (1..INTEGRAL_NODES).map(|j| g(j as f64 * h)).sum();
    (inner + 0.5 * (g(0.0) + g(PI))) * h / PI
}

/// Smallest positive root of `J₀`, by bisection on `[2, 3]`.
pub fn bessel_j0_root() -> f64 {
    let j0 = |x: f64| series(0, x);
    let (mut lo, mut hi) = (2.0f64, 3.0f64);
    debug_assert!(j0(lo) > 0.0 && j0(hi) < 0.0);
    loop {
        let mid = 0.5 * (lo + hi);
        let v = j0(mid);
        if v.abs() <= 1e-14 || mid <= lo || mid >= hi {
            return mid;
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

fn circle_nodes() -> impl Iterator<Item = f64> {
    (0..CIRCLE_NODES).map(|j| 2.0 * PI * j as f64 / CIRCLE_NODES as f64)
}

fn cis(phase: f64) -> Complex64 {
    let (s, c) = phase.sin_cos();
    Complex64::new(c, s)
}

/// `F(s₁, s₂)`.
pub fn circle_map_f(s1: f64, s2: f64) -> Complex64 {
    let h = 2.0 * PI / CIRCLE_NODES as f64;
    circle_nodes().map(|t| cis(s1 * t.sin() + s2 * (2.0 * t).cos())).sum::<Complex64>() * h
}

/// `(∂₁F, ∂₂F) = (i ∫ sin θ e^{i(…)}, i ∫ cos 2θ e^{i(…)})`.
pub fn circle_map_partials(s1: f64, s2: f64) -> (Complex64, Complex64) {
    let h = 2.0 * PI / CIRCLE_NODES as f64;
    let i = Complex64::new(0.0, 1.0);
    let (mut d1, mut d2) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for t in circle_nodes() {
        let (s, c2) = (t.sin(), (2.0 * t).cos());
        let e = cis(s1 * s + s2 * c2);
        d1 += e * s;
        d2 += e * c2;
    }
    (i * d1 * h, i * d2 * h)
}

/// `[[Re ∂₁F, Re ∂₂F], [Im ∂₁F, Im ∂₂F]]`.
pub fn circle_map_jacobian(s1: f64, s2: f64) -> [[f64; 2]; 2] {
    let (d1, d2) = circle_map_partials(s1, s2);
    [[d1.re, d2.re], [d1.im, d2.im]]
}

pub fn det2(m: &[[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Central-difference Jacobian of `F` with step `h`.
pub fn circle_map_jacobian_fd(s1: f64, s2: f64, h: f64) -> [[f64; 2]; 2] {
    let d1 = (circle_map_f(s1 + h, s2) - circle_map_f(s1 - h, s2)) / (2.0 * h);
    let d2 = (circle_map_f(s1, s2 + h) - circle_map_f(s1, s2 - h)) / (2.0 * h);
    [[d1.re, d2.re], [d1.im, d2.im]]
}

/// Point of the circle map with its Jacobian.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CircleMapPoint {
    pub s1: f64,
    pub s2: f64,
    pub re: f64,
    pub im: f64,
    pub jacobian: Option<[[f64; 2]; 2]>,
}

impl CircleMapPoint {
    pub fn at(s1: f64, s2: f64) -> Self {
        let v = circle_map_f(s1, s2);
        CircleMapPoint { s1, s2, re: v.re, im: v.im, jacobian: Some(circle_map_jacobian(s1, s2)) }
    }
}

/// Newton iteration for `F(s) = target` from `start`. Steps are halved until
/// the residual decreases.
pub fn invert_circle_map(target: Complex64, start: [f64; 2], tol: f64, max_iter: usize) -> Result<[f64; 2]> {
    let mut s = start;
    let mut r = circle_map_f(s[0], s[1]) - target;
    for _ in 0..max_iter {
        if r.norm() <= tol {
            return Ok(s);
        }
        let j = circle_map_jacobian(s[0], s[1]);
        let det = det2(&j);
        if det.abs() < 1e-300 {
            break;
        }
        // solve J δ = -r
        let d0 = (-r.re * j[1][1] + r.im * j[0][1]) / det;
        let d1 = (-r.im * j[0][0] + r.re * j[1][0]) / det;
        let mut step = 1.0;
        loop {
            let trial = [s[0] + step * d0, s[1] + step * d1];
            let rt = circle_map_f(trial[0], trial[1]) - target;
            if rt.norm() < r.norm() || step < 1e-6 {
                s = trial;
                r = rt;
                break;
            }
            step *= 0.5;
        }
    }
    if r.norm() <= tol {
        Ok(s)
    } else {
        Err(Error::NoConvergence)
    }
}

/// Diagnostics emitted by the `bessel-check` command.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BesselCheck {
    pub j0: f64,
    #[serde(rename = "J1_at_j0")]
    pub j1_at_j0: f64,
    #[serde(rename = "J2_at_j0")]
    pub j2_at_j0: f64,
    #[serde(rename = "det_DF")]
    pub det_df: f64,
    /// `(2π)² J₁(j₀) J₂(j₀)`.
    pub det_closed_form: f64,
    pub fd_error: f64,
    pub jacobi_anger_max_error: f64,
    pub inversion_radius: f64,
    pub inversion_targets: usize,
    pub inversion_max_error: f64,
}

pub const FD_STEP: f64 = 1e-5;
pub const INVERSION_TARGETS: usize = 16;
pub const INVERSION_RADIUS_FACTOR: f64 = 0.3;

/// Runs the full set of checks around `(j₀, 0)`.
///
/// The inversion test places 16 points `w_k` in the disc of radius
/// `0.3 |det DF|^{1/2}` around `F(j₀, 0)` (sunflower layout), takes their
/// linearised preimages `p_k = (j₀, 0) + DF⁻¹ (w_k - F(j₀, 0))`, and inverts
/// `F(p_k)` by Newton from `(j₀, 0)`. The error is `max_k |ŝ_k - p_k|`.
pub fn bessel_check() -> Result<BesselCheck> {
    let j0 = bessel_j0_root();
    let j1 = bessel_j(1, j0)?;
    let j2 = bessel_j(2, j0)?;
    let jac = circle_map_jacobian(j0, 0.0);
    let fd = circle_map_jacobian_fd(j0, 0.0, FD_STEP);
    let fd_error = (0..2)
        .flat_map(|r| (0..2).map(move |c| (r, c)))
        .map(|(r, c)| (jac[r][c] - fd[r][c]).abs())
        .fold(0.0, f64::max);
    let mut ja = 0.0f64;
    for k in 0..64 {
        let s = 10.0 * k as f64 / 63.0;
        ja = ja.max((circle_map_f(s, 0.0) - 2.0 * PI * bessel_j(0, s)?).norm());
    }
    let det = det2(&jac);
    let radius = INVERSION_RADIUS_FACTOR * det.abs().sqrt();
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut worst = 0.0f64;
    for k in 0..INVERSION_TARGETS {
        let rho = radius * ((k as f64 + 0.5) / INVERSION_TARGETS as f64).sqrt();
        let w = cis(k as f64 * golden) * rho;
        let p = [
            j0 + (w.re * jac[1][1] - w.im * jac[0][1]) / det,
            (w.im * jac[0][0] - w.re * jac[1][0]) / det,
        ];
        let target = circle_map_f(p[0], p[1]);
        let s = invert_circle_map(target, [j0, 0.0], 1e-13, 50)?;
        worst = worst.max(((s[0] - p[0]).powi(2) + (s[1] - p[1]).powi(2)).sqrt());
    }
    Ok(BesselCheck {
        j0,
        j1_at_j0: j1,
        j2_at_j0: j2,
        det_df: det,
        det_closed_form: 4.0 * PI * PI * j1 * j2,
        fd_error,
        jacobi_anger_max_error: ja,
        inversion_radius: radius,
        inversion_targets: INVERSION_TARGETS,
        inversion_max_error: worst,
    })
}

// ---------------------------------------------------------------------------
// φ₀

/// `(frequency, is_sine)` of the `n`-th basis function (1-based):
/// `sin θ`, `cos 2θ`, `cos θ`, `sin 2θ`, then `sin kθ`, `cos kθ` for `k >= 3`.
pub fn circle_basis_index(n: usize) -> (usize, bool) {
    match n {
        1 => (1, true),
        2 => (2, false),
        3 => (1, false),
        4 => (2, true),
        _ => (3 + (n - 5) / 2, (n - 5) % 2 == 0),
    }
}

/// `Σ_{n <= n₀} h_n(θ)²` with `h_n = k^{-1/2} sin kθ` or `k^{-1/2} cos kθ`.
pub fn basis_square_sum(theta: f64, n0: usize) -> f64 {
    (1..=n0)
        .map(|n| {
            let (k, sine) = circle_basis_index(n);
            let a = k as f64 * theta;
            let v = if sine { a.sin() } else { a.cos() };
            v * v / k as f64
        })
        .sum()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Phi0Eval {
    pub re: f64,
    pub im: f64,
    /// `K_{n₀} = (1/2π) ∫ e^{(β²/2) Σ h_n²}`.
    pub k_n0: f64,
}

impl Phi0Eval {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

fn check_phi0_args(n0: usize, beta: f64) -> Result<()> {
    if n0 < 2 {
        return Err(Error::InvalidConfig(format!("n0 must be at least 2, got {n0}")));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidConfig(format!("beta must lie in [0, 1), got {beta}")));
    }
    Ok(())
}

/// Weight `e^{(β²/2) Σ_{n<=n₀} h_n²}` at the circle nodes.
fn phi0_weights(n0: usize, beta: f64) -> Vec<f64> {
    circle_nodes().map(|t| (0.5 * beta * beta * basis_square_sum(t, n0)).exp()).collect()
}

/// `φ₀(s₁, s₂) = ∫ e^{(β²/2) Σ h_n²} e^{iβ(s₁ h₁ + s₂ h₂)}`.
pub fn phi0_map(s1: f64, s2: f64, n0: usize, beta: f64) -> Result<Phi0Eval> {
    check_phi0_args(n0, beta)?;
    let w = phi0_weights(n0, beta);
    Ok(phi0_with_weights(&w, s1, s2, beta))
}

fn phi0_with_weights(w: &[f64], s1: f64, s2: f64, beta: f64) -> Phi0Eval {
    let h = 2.0 * PI / CIRCLE_NODES as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for (t, wj) in circle_nodes().zip(w) {
        acc += cis(beta * (s1 * t.sin() + s2 * (2.0 * t).cos() / 2f64.sqrt())) * *wj;
    }
    let k = w.iter().sum::<f64>() / CIRCLE_NODES as f64;
    Phi0Eval { re: acc.re * h, im: acc.im * h, k_n0: k }
}

/// Result of comparing `φ₀` with `K_{n₀} F(βs₁, βs₂/√2)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Phi0Comparison {
    pub n0: usize,
    pub beta: f64,
    pub k_n0: f64,
    /// `sup_{|s| <= radius} |φ₀(s) - K F(βs₁, βs₂/√2)| / K` over the probe set.
    pub sup_relative_error: f64,
    /// `sup_θ |e^{(β²/2)Σh²} - K|`.
    pub weight_oscillation: f64,
    pub radius: f64,
    pub probes: usize,
}

/// Probes `|s| <= radius` on a polar lattice (`rings` rings of `per_ring`
/// points plus the origin).
pub fn phi0_compare(n0: usize, beta: f64, radius: f64, rings: usize, per_ring: usize) -> Result<Phi0Comparison> {
    check_phi0_args(n0, beta)?;
    let w = phi0_weights(n0, beta);
    let mut probes = vec![[0.0, 0.0]];
    for r in 1..=rings {
        let rho = radius * r as f64 / rings as f64;
        for a in 0..per_ring {
            let ang = 2.0 * PI * a as f64 / per_ring as f64;
            probes.push([rho * ang.cos(), rho * ang.sin()]);
        }
    }
    let mut k = 0.0;
    let mut sup = 0.0f64;
    for s in &probes {
        let e = phi0_with_weights(&w, s[0], s[1], beta);
        k = e.k_n0;
        let f = circle_map_f(beta * s[0], beta * s[1] / 2f64.sqrt());
        sup = sup.max((e.value() - f * k).norm() / k);
    }
    let osc = w.iter().map(|x| (x - k).abs()).fold(0.0, f64::max);
    Ok(Phi0Comparison {
        n0,
        beta,
        k_n0: k,
        sup_relative_error: sup,
        weight_oscillation: osc,
        radius,
        probes: probes.len(),
    })
}
