//! Phase construction: given `f` and a target `z₀` with `|z₀| < ‖f‖₁`, find a
//! smooth real phase `a` on the grid with `∫ f e^{iβa} = z₀`.
//!
//! The construction has three stages.
//!
//! 1. [`zero_phase`]: `â = v + b` with `v = -arg(f)/β` (so `f e^{iβv} = |f|`)
//!    and `b(x_d) = 2π/(β‖f‖₁) ∫_{lo}^{x_d} m`, where `m` is the marginal of
//!    `|f|` along the last coordinate. `e^{iβb}` winds exactly once while the
//!    mass of `|f|` is swept, so `∫ f e^{iβâ} = 0`.
//! 2. [`smooth_zero_phase`]: `â` may jump where `arg f` does. It is mollified
//!    and two localised perturbations `g₁, g₂` restore the zero with a damped
//!    Newton solve on `η(s) = ∫ f e^{i(β ρ_ε∗â + s₁g₁ + s₂g₂)}`.
//! 3. [`phase_for_target`]: blends `v∗ρ` (modulus near `‖f‖₁`) with the smooth
//!    zero phase (modulus 0), bisects the blend weight for `|∫ f e^{iβb}| =
//!    |z₀|`, then adds a constant to rotate onto `arg z₀`.
//!
//! Integrals use the grid quadrature weights throughout. The mollifier is the
//! unit-mass bump `ρ(x) ∝ exp(-1/(1 - x²))`, applied per axis with zero
//! extension outside the window.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chaos::{interpolate, TestFunction};
use crate::error::{Error, Result};
use crate::grid::{Domain, Grid};
use crate::kernels::bump;
use crate::quad;

/// Solver knobs; the defaults are the documented ones.
#[derive(Clone, Debug)]
pub struct PhaseOptions {
    /// Decreasing mollifier widths tried in turn.
    pub schedule: Vec<f64>,
    pub newton_tol: f64,
    pub max_iter: usize,
    pub trust_radius: f64,
    /// Minimum `|det| / (|θ₁||θ₂|)` for a perturbation pair.
    pub det_threshold: f64,
    /// Targets need `|z₀| < ‖f‖₁ (1 - margin)`.
    pub margin: f64,
    pub scan_points: usize,
    /// Replaces the built-in perturbation dictionary.
    pub dictionary: Option<Vec<Vec<f64>>>,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        PhaseOptions {
            schedule: default_schedule(),
            newton_tol: 1e-10,
            max_iter: 50,
            trust_radius: 2.0,
            det_threshold: 0.1,
            margin: 1e-3,
            scan_points: 64,
            dictionary: None,
        }
    }
}

/// `ε_k = 0.1 · 2^{-k}`, `k = 0..=12`.
pub fn default_schedule() -> Vec<f64> {
    (0..=12).map(|k| 0.1 * 0.5f64.powi(k)).collect()
}

/// A phase on the grid with the diagnostics of how it was obtained.
#[derive(Clone, Debug)]
pub struct PhaseProfile {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
    pub beta: f64,
    /// Mollifier width of the smooth zero phase; `None` for [`zero_phase`].
    pub epsilon: Option<f64>,
    pub s: [f64; 2],
    pub iterations: usize,
    /// `|∫ f e^{iβa} - z₀|` on the grid.
    pub residual: f64,
    pub target: Complex64,
    /// Blend weight found by bisection (targets `z₀ ≠ 0` only).
    pub blend: Option<f64>,
    /// Constant added in the final rotation, `(arg z₀ - arg ∫ f e^{iβb})/β`.
    pub phase_shift: f64,
    /// Dictionary indices of the perturbation pair.
    pub perturbations: Option<(usize, usize)>,
}

/// JSON diagnostics written next to a profile CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseDiagnostics {
    pub target: [f64; 2],
    pub residual: f64,
    pub epsilon: Option<f64>,
    pub s1: f64,
    pub s2: f64,
    pub iterations: usize,
    pub blend: Option<f64>,
    pub phase_shift: f64,
    pub beta: f64,
}

impl PhaseProfile {
    pub fn diagnostics(&self) -> PhaseDiagnostics {
        PhaseDiagnostics {
            target: [self.target.re, self.target.im],
            residual: self.residual,
            epsilon: self.epsilon,
            s1: self.s[0],
            s2: self.s[1],
            iterations: self.iterations,
            blend: self.blend,
            phase_shift: self.phase_shift,
            beta: self.beta,
        }
    }

    /// `x,a` rows (`x0,x1,a` on boxes).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        if self.grid.dim() == 1 {
            writeln!(out, "x,a")?;
        } else {
            writeln!(out, "x0,x1,a")?;
        }
        for (p, a) in self.grid.points().zip(&self.values) {
            for c in p {
                write!(out, "{c:.17e},")?;
            }
            writeln!(out, "{a:.17e}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Oscillation of `βa + arg f` over the support of `f`.
    pub fn oscillation(&self, f: &TestFunction) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for ((a, v), &inside) in self.values.iter().zip(f.values()).zip(f.support()) {
            if inside {
                let t = self.beta * a + v.arg();
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
        if hi >= lo {
            hi - lo
        } else {
            0.0
        }
    }
}

/// Two perturbations and their responses `θ_j = ∫ i f g_j e^{iβa}`.
#[derive(Clone, Debug)]
pub struct PerturbationPair {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub theta1: Complex64,
    pub theta2: Complex64,
    pub indices: (usize, usize),
}

impl PerturbationPair {
    /// `|det [Re θ₁, Re θ₂; Im θ₁, Im θ₂]| / (|θ₁||θ₂|)`.
    pub fn ratio(&self) -> f64 {
        det_ratio(self.theta1, self.theta2)
    }
}

fn det_ratio(a: Complex64, b: Complex64) -> f64 {
    let norm = a.norm() * b.norm();
    if norm == 0.0 {
        0.0
    } else {
        (a.re * b.im - a.im * b.re).abs() / norm
    }
}

/// `w_i f(x_i)` and the evaluation of `∫ f e^{iφ}` for phases `φ`.
struct Integrator {
    c: Vec<Complex64>,
}

impl Integrator {
    fn new(f: &TestFunction) -> Self {
        let w = f.grid().quadrature_weights();
        Integrator { c: f.values().iter().zip(&w).map(|(v, w)| v * w).collect() }
    }

    fn eta(&self, phase: &[f64]) -> Complex64 {
        self.c.iter().zip(phase).map(|(c, p)| c * cis(*p)).sum()
    }

    /// `∫ i f g e^{iφ}`.
    fn response(&self, phase: &[f64], g: &[f64]) -> Complex64 {
        let s: Complex64 = self.c.iter().zip(phase).zip(g).map(|((c, p), g)| c * cis(*p) * *g).sum();
        Complex64::new(-s.im, s.re)
    }
}

fn cis(p: f64) -> Complex64 {
    let (s, c) = p.sin_cos();
    Complex64::new(c, s)
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidConfig(format!("phase construction needs beta > 0, got {beta}")));
    }
    Ok(())
}

/// `-arg(f)/β` on the support, 0 elsewhere.
fn argument_phase(f: &TestFunction, beta: f64) -> Vec<f64> {
    f.values()
        .iter()
        .zip(f.support())
        .map(|(v, &inside)| if inside { -v.arg() / beta } else { 0.0 })
        .collect()
}

/// Number of nodes along the last axis and the stride between lines.
fn last_axis(grid: &Grid) -> (usize, usize, f64) {
    match grid.domain() {
        Domain::Circle { n } | Domain::Interval { n, .. } => (1, n, grid.spacing()[0]),
        Domain::Box { n, .. } => (n[0], n[1], grid.spacing()[1]),
    }
}

/// Unmollified zero phase `â = v + b`.
pub fn zero_phase(f: &TestFunction, beta: f64) -> Result<PhaseProfile> {
    check_beta(beta)?;
    let l1 = f.l1_norm();
    if !(l1 > 0.0) {
        return Err(Error::ZeroFunction);
    }
    let grid = f.grid();
    let (rows, cols, h) = last_axis(grid);
    let abs: Vec<f64> = f.values().iter().map(|v| v.norm()).collect();
    let marginal: Vec<f64> = if rows == 1 {
        abs
    } else {
        let w0 = quad::simpson_weights(rows, grid.spacing()[0]);
        (0..cols).map(|j| (0..rows).map(|i| w0[i] * abs[i * cols + j]).sum()).collect()
    };
    let cumulative = quad::cumulative_integral(&marginal, h);
    let scale = 2.0 * PI / (beta * l1);
    let v = argument_phase(f, beta);
    let values: Vec<f64> = v.iter().enumerate().map(|(i, vi)| vi + scale * cumulative[i % cols]).collect();
    let residual = Integrator::new(f).eta(&scaled(&values, beta)).norm();
    Ok(PhaseProfile {
        grid: Arc::clone(grid),
        values,
        beta,
        epsilon: None,
        s: [0.0; 2],
        iterations: 0,
        residual,
        target: Complex64::new(0.0, 0.0),
        blend: None,
        phase_shift: 0.0,
        perturbations: None,
    })
}

fn scaled(a: &[f64], beta: f64) -> Vec<f64> {
    a.iter().map(|x| beta * x).collect()
}

/// Discrete unit-mass bump of half-width `eps` at spacing `h`.
fn mollifier_stencil(eps: f64, h: f64) -> Vec<f64> {
    let k = (eps / h).ceil() as usize;
    let mut w: Vec<f64> = (0..=2 * k)
        .map(|j| bump((j as f64 - k as f64) * h / eps))
        .collect();
    if w.iter().all(|x| *x == 0.0) {
        return vec![1.0];
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

fn convolve_line(line: &[f64], stencil: &[f64]) -> Vec<f64> {
    let k = (stencil.len() / 2) as isize;
    let n = line.len() as isize;
    (0..n)
        .map(|i| {
            stencil
                .iter()
                .enumerate()
                .map(|(j, w)| {
                    let idx = i + j as isize - k;
                    if (0..n).contains(&idx) {
                        w * line[idx as usize]
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect()
}

/// `ρ_ε ∗ a`, per axis (product mollifier on boxes), zero outside the window.
pub fn mollify(values: &[f64], grid: &Grid, eps: f64) -> Vec<f64> {
    match grid.domain() {
        Domain::Circle { .. } | Domain::Interval { .. } => {
            convolve_line(values, &mollifier_stencil(eps, grid.spacing()[0]))
        }
        Domain::Box { n, .. } => {
            let h = grid.spacing();
            let (rows, cols) = (n[0], n[1]);
            let s1 = mollifier_stencil(eps, h[1]);
            let mut tmp = Vec::with_capacity(values.len());
            for r in values.chunks_exact(cols) {
                tmp.extend(convolve_line(r, &s1));
            }
            let s0 = mollifier_stencil(eps, h[0]);
            let mut out = vec![0.0; values.len()];
            let mut col = vec![0.0; rows];
            for j in 0..cols {
                for i in 0..rows {
                    col[i] = tmp[i * cols + j];
                }
                for (i, v) in convolve_line(&col, &s0).into_iter().enumerate() {
                    out[i * cols + j] = v;
                }
            }
            out
        }
    }
}

/// Sixteen bump-modulated sinusoids `bump · sin(2πk u + φ)`, `k = 1..4`,
/// `φ ∈ {0, π/4, π/2, 3π/4}`, with `u` the position within the extent of
/// `supp f` along the last axis (and a bump across the first axis on boxes).
pub fn perturbation_dictionary(f: &TestFunction) -> Vec<Vec<f64>> {
    let grid = f.grid();
    let d = grid.dim();
    let (mut lo, mut hi) = (vec![f64::INFINITY; d], vec![f64::NEG_INFINITY; d]);
    for (p, &inside) in grid.points().zip(f.support()) {
        if inside {
            for a in 0..d {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    let unit = |x: f64, a: usize| {
        if hi[a] > lo[a] {
            (x - lo[a]) / (hi[a] - lo[a])
        } else {
            0.5
        }
    };
    let peak = 1.0f64.exp();
    let mut dict = Vec::with_capacity(16);
    for k in 1..=4 {
        for q in 0..4 {
            let phi = q as f64 * PI / 4.0;
            dict.push(
                grid.points()
                    .map(|p| {
                        let u = unit(p[d - 1], d - 1);
                        let mut g = peak * bump(2.0 * u - 1.0) * (2.0 * PI * k as f64 * u + phi).sin();
                        if d == 2 {
                            g *= peak * bump(2.0 * unit(p[0], 0) - 1.0);
                        }
                        g
                    })
                    .collect(),
            );
        }
    }
    dict
}

/// Picks the dictionary pair with the largest `|det|` among those whose
/// normalised determinant reaches `threshold`, with responses evaluated at
/// `phase` (already multiplied by `β`).
pub fn select_perturbations(
    f: &TestFunction,
    phase: &[f64],
    dictionary: &[Vec<f64>],
    threshold: f64,
) -> Result<PerturbationPair> {
    let integ = Integrator::new(f);
    select_with(&integ, phase, dictionary, threshold)
}

fn select_with(
    integ: &Integrator,
    phase: &[f64],
    dictionary: &[Vec<f64>],
    threshold: f64,
) -> Result<PerturbationPair> {
    let responses: Vec<Complex64> = dictionary.iter().map(|g| integ.response(phase, g)).collect();
    let mut best: Option<(f64, usize, usize)> = None;
    let mut best_ratio = 0.0f64;
    for i in 0..responses.len() {
        for j in i + 1..responses.len() {
            let (a, b) = (responses[i], responses[j]);
            let ratio = det_ratio(a, b);
            best_ratio = best_ratio.max(ratio);
            let det = (a.re * b.im - a.im * b.re).abs();
            if ratio >= threshold && best.is_none_or(|(d, _, _)| det > d) {
                best = Some((det, i, j));
            }
        }
    }
    let (_, i, j) = best.ok_or(Error::DegeneratePerturbations { best_ratio })?;
    Ok(PerturbationPair {
        g1: dictionary[i].clone(),
        g2: dictionary[j].clone(),
        theta1: responses[i],
        theta2: responses[j],
        indices: (i, j),
    })
}

struct NewtonOutcome {
    s: [f64; 2],
    iterations: usize,
    residual: f64,
}

/// Damped Newton with Armijo backtracking on `½|η|²`, iterates confined to
/// `|s| <= trust_radius`.
fn newton(
    integ: &Integrator,
    base: &[f64],
    pair: &PerturbationPair,
    opts: &PhaseOptions,
) -> Option<NewtonOutcome> {
    let phase_at = |s: [f64; 2]| -> Vec<f64> {
        base.iter()
            .zip(&pair.g1)
            .zip(&pair.g2)
            .map(|((b, g1), g2)| b + s[0] * g1 + s[1] * g2)
            .collect()
    };
    let mut s = [0.0; 2];
    let mut phase = phase_at(s);
    let mut eta = integ.eta(&phase);
    for it in 0..=opts.max_iter {
        if eta.norm() <= opts.newton_tol {
            return Some(NewtonOutcome { s, iterations: it, residual: eta.norm() });
        }
        if it == opts.max_iter {
            break;
        }
        let (d1, d2) = (integ.response(&phase, &pair.g1), integ.response(&phase, &pair.g2));
        let det = d1.re * d2.im - d2.re * d1.im;
        if det.abs() < 1e-300 {
            return None;
        }
        let step = [(-eta.re * d2.im + eta.im * d2.re) / det, (-eta.im * d1.re + eta.re * d1.im) / det];
        let merit = 0.5 * eta.norm_sqr();
        let mut t = 1.0;
        loop {
            let trial = [s[0] + t * step[0], s[1] + t * step[1]];
            if trial[0].hypot(trial[1]) <= opts.trust_radius {
                let p = phase_at(trial);
                let e = integ.eta(&p);
                if 0.5 * e.norm_sqr() <= merit * (1.0 - 2e-4 * t) {
                    s = trial;
                    phase = p;
                    eta = e;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-10 {
                return None;
            }
        }
    }
    None
}

/// Mollified zero phase, corrected by Newton on two perturbations.
pub fn smooth_zero_phase(f: &TestFunction, beta: f64, opts: &PhaseOptions) -> Result<PhaseProfile> {
    let zp = zero_phase(f, beta)?;
    let integ = Integrator::new(f);
    let dictionary = match &opts.dictionary {
        Some(d) => {
            if d.iter().any(|g| g.len() != zp.values.len()) {
                return Err(Error::GridMismatch);
            }
            d.clone()
        }
        None => perturbation_dictionary(f),
    };
    let mut degenerate = None;
    for &eps in &opts.schedule {
        let smooth = mollify(&zp.values, f.grid(), eps);
        let base = scaled(&smooth, beta);
        let pair = match select_with(&integ, &base, &dictionary, opts.det_threshold) {
            Ok(p) => p,
            Err(e) => {
                degenerate = Some(e);
                continue;
            }
        };
        if let Some(out) = newton(&integ, &base, &pair, opts) {
            let values = smooth
                .iter()
                .zip(&pair.g1)
                .zip(&pair.g2)
                .map(|((a, g1), g2)| a + (out.s[0] * g1 + out.s[1] * g2) / beta)
                .collect();
            return Ok(PhaseProfile {
                grid: Arc::clone(f.grid()),
                values,
                beta,
                epsilon: Some(eps),
                s: out.s,
                iterations: out.iterations,
                residual: out.residual,
                target: Complex64::new(0.0, 0.0),
                blend: None,
                phase_shift: 0.0,
                perturbations: Some(pair.indices),
            });
        }
    }
    Err(degenerate.unwrap_or(Error::NoConvergence))
}

/// Smooth phase with `∫ f e^{iβa} = z₀`.
pub fn phase_for_target(f: &TestFunction, beta: f64, z0: Complex64, opts: &PhaseOptions) -> Result<PhaseProfile> {
    check_beta(beta)?;
    let l1 = f.l1_norm();
    if !(l1 > 0.0) {
        return Err(Error::ZeroFunction);
    }
    let limit = l1 * (1.0 - opts.margin);
    let modulus = z0.norm();
    if modulus >= limit {
        return Err(Error::TargetTooLarge { modulus, limit });
    }
    if modulus == 0.0 {
        return smooth_zero_phase(f, beta, opts);
    }
    let a0 = smooth_zero_phase(f, beta, opts)?;
    let integ = Integrator::new(f);
    let v = argument_phase(f, beta);
    // widest mollified argument phase whose modulus still exceeds |z₀|
    let mut start = None;
    for &eps in opts.schedule.iter().chain(std::iter::once(&0.0)) {
        let vs = if eps > 0.0 { mollify(&v, f.grid(), eps) } else { v.clone() };
        if integ.eta(&scaled(&vs, beta)).norm() > modulus {
            start = Some(vs);
            break;
        }
    }
    let vs = start.ok_or(Error::NonUnimodalBracket { modulus })?;
    let blend = |t: f64| -> Vec<f64> {
        vs.iter().zip(&a0.values).map(|(v, a)| (1.0 - t) * v + t * a).collect()
    };
    let mod_at = |t: f64| integ.eta(&scaled(&blend(t), beta)).norm();

    let m = opts.scan_points.max(2);
    let mut bracket = None;
    let mut prev = mod_at(0.0);
    for k in 1..=m {
        let t = k as f64 / m as f64;
        let cur = mod_at(t);
        if prev > modulus && cur <= modulus {
            bracket = Some(((k - 1) as f64 / m as f64, t));
            break;
        }
        prev = cur;
    }
    let (mut lo, mut hi) = bracket.ok_or(Error::NonUnimodalBracket { modulus })?;
    let tol = 1e-14 * l1;
    let mut t = hi;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let mm = mod_at(mid);
        t = mid;
        if (mm - modulus).abs() <= tol {
            break;
        }
        if mm > modulus {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = blend(t);
    let eta = integ.eta(&scaled(&b, beta));
    let shift = (z0.arg() - eta.arg()) / beta;
    let values: Vec<f64> = b.iter().map(|x| x + shift).collect();
    let residual = (integ.eta(&scaled(&values, beta)) - z0).norm();
    Ok(PhaseProfile {
        grid: Arc::clone(f.grid()),
        values,
        beta,
        epsilon: a0.epsilon,
        s: a0.s,
        iterations: a0.iterations,
        residual,
        target: z0,
        blend: Some(t),
        phase_shift: shift,
        perturbations: a0.perturbations,
    })
}

/// `|∫ f e^{iβa} - z₀|` on the refined grid, with `a` interpolated cubically
/// and `f` resampled (built-ins exactly, others by interpolation).
pub fn verify_phase(f: &TestFunction, beta: f64, profile: &PhaseProfile, z0: Complex64) -> Result<f64> {
    if !(**f.grid() == *profile.grid) {
        return Err(Error::GridMismatch);
    }
    let fine = Arc::new(f.grid().refined());
    let f2 = f.resample(Arc::clone(&fine))?;
    let a2 = interpolate(f.grid(), &profile.values, &fine)?;
    Ok((Integrator::new(&f2).eta(&scaled(&a2, beta)) - z0).norm())
}

/// `∫ f e^{iβa}` on the profile's grid.
pub fn phase_integral(f: &TestFunction, beta: f64, values: &[f64]) -> Complex64 {
    Integrator::new(f).eta(&scaled(values, beta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Arc<Grid> {
        Arc::new(Grid::interval(0.0, 1.0, n).unwrap())
    }

    #[test]
    fn zero_phase_examples() {
        let g = unit(1025);
        let one = TestFunction::builtin("one", Arc::clone(&g)).unwrap();
        for beta in [1.0, 2.0] {
            let p = zero_phase(&one, beta).unwrap();
            for (x, a) in g.coords().iter().zip(&p.values) {
                assert!((a - 2.0 * PI * x / beta).abs() < 1e-12);
            }
            assert!(p.residual < 1e-12);
        }
        let ramp = TestFunction::builtin("ramp", unit(4096)).unwrap();
        assert!(zero_phase(&ramp, 1.0).unwrap().residual <= 1e-10);
        let zero = TestFunction::from_real(g, &[0.0; 1025], "zero").unwrap();
        assert!(matches!(zero_phase(&zero, 1.0), Err(Error::ZeroFunction)));
    }

    #[test]
    fn zero_phase_undoes_argument() {
        let g = unit(513);
        let f = TestFunction::from_fn(Arc::clone(&g), |p| cis(3.0 * p[0] * p[0]) * (1.0 + p[0]), "c").unwrap();
        let p = zero_phase(&f, 0.7).unwrap();
        assert!(p.residual < 1e-10);
    }

    #[test]
    fn mollifier_preserves_constants_in_interior() {
        let g = unit(201);
        let m = mollify(&vec![3.0; 201], &g, 0.05);
        for v in &m[20..181] {
            assert!((v - 3.0).abs() < 1e-14);
        }
        assert!(m[0] < 3.0);
        // below the grid spacing the mollifier is the identity
        let x: Vec<f64> = g.coords().to_vec();
        assert_eq!(mollify(&x, &g, 1e-9), x);
    }

    #[test]
    fn unmollified_start_needs_no_correction() {
        let f = TestFunction::builtin("bump", unit(1025)).unwrap();
        let opts = PhaseOptions { schedule: vec![1e-9], ..Default::default() };
        let p = smooth_zero_phase(&f, 1.0, &opts).unwrap();
        assert!(p.s[0].hypot(p.s[1]) <= 1e-3, "{:?}", p.s);
        assert!(p.residual <= 1e-10);
    }

    #[test]
    fn smooth_positive_f_converges_at_first_width() {
        let f = TestFunction::builtin("bump", unit(1025)).unwrap();
        let p = smooth_zero_phase(&f, 1.0, &PhaseOptions::default()).unwrap();
        assert_eq!(p.epsilon, Some(0.1));
        assert!(p.residual <= 1e-10);
    }

    #[test]
    fn step_sign_converges() {
        let f = TestFunction::builtin("step-sign", unit(1025)).unwrap();
        let p = smooth_zero_phase(&f, 1.0, &PhaseOptions::default()).unwrap();
        assert!(p.residual <= 1e-8);
        assert!(verify_phase(&f, 1.0, &p, Complex64::new(0.0, 0.0)).unwrap() <= 1e-9);
        assert!(p.oscillation(&f) > 1e-6);
    }

    #[test]
    fn degenerate_dictionaries() {
        let f = TestFunction::builtin("one", unit(257)).unwrap();
        let g: Vec<f64> = f.grid().coords().iter().map(|x| bump(2.0 * x - 1.0)).collect();
        for dict in [vec![g.clone()], vec![g.clone(), g]] {
            let opts = PhaseOptions { dictionary: Some(dict), ..Default::default() };
            assert!(matches!(
                smooth_zero_phase(&f, 1.0, &opts),
                Err(Error::DegeneratePerturbations { .. })
            ));
        }
    }

    #[test]
    fn target_examples() {
        let f = TestFunction::builtin("one", unit(1025)).unwrap();
        let opts = PhaseOptions::default();
        let z0 = Complex64::new(0.5, 0.0);
        let p = phase_for_target(&f, 1.0, z0, &opts).unwrap();
        assert!(p.residual <= 1e-8);
        assert!(verify_phase(&f, 1.0, &p, z0).unwrap() <= 1e-8);

        let a = phase_for_target(&f, 1.0, Complex64::new(0.0, 0.0), &opts).unwrap();
        let b = smooth_zero_phase(&f, 1.0, &opts).unwrap();
        assert_eq!(a.values, b.values);

        assert!(matches!(
            phase_for_target(&f, 1.0, Complex64::new(1.0, 0.0), &opts),
            Err(Error::TargetTooLarge { .. })
        ));
    }

    #[test]
    fn global_phase_equivariance() {
        let f = TestFunction::builtin("ramp", unit(513)).unwrap();
        let opts = PhaseOptions::default();
        let beta = 0.8;
        let z0 = Complex64::new(0.1, 0.15);
        let alpha = 0.9;
        let p = phase_for_target(&f, beta, z0, &opts).unwrap();
        let q = phase_for_target(&f, beta, z0 * cis(alpha), &opts).unwrap();
        assert_eq!(p.blend, q.blend);
        assert!((q.phase_shift - p.phase_shift - alpha / beta).abs() < 1e-12);
        for (a, b) in p.values.iter().zip(&q.values) {
            assert!((b - a - alpha / beta).abs() < 1e-12);
        }
    }

    #[test]
    fn feasibility_is_scale_invariant() {
        let f = TestFunction::builtin("bump", unit(257)).unwrap();
        let opts = PhaseOptions::default();
        let l1 = f.l1_norm();
        for c in [0.25, 4.0] {
            let cf = f.scaled(Complex64::new(c, 0.0)).unwrap();
            for frac in [0.5, 1.0, 1.2] {
                let a = phase_for_target(&f, 1.0, Complex64::new(frac * l1, 0.0), &opts).is_ok();
                let b = phase_for_target(&cf, 1.0, Complex64::new(c * frac * l1, 0.0), &opts).is_ok();
                assert_eq!(a, b, "c={c} frac={frac}");
            }
        }
    }

    #[test]
    fn mollification_error_is_first_order() {
        let f = TestFunction::builtin("one", unit(4097)).unwrap();
        let zp = zero_phase(&f, 1.0).unwrap();
        let err = |eps: f64| {
            let m = mollify(&zp.values, f.grid(), eps);
            (phase_integral(&f, 1.0, &m) - phase_integral(&f, 1.0, &zp.values)).norm()
        };
        for eps in [0.04, 0.02] {
            let r = err(eps) / err(eps / 2.0);
            assert!((1.5..=2.5).contains(&r), "eps={eps}: ratio {r}");
        }
    }

    #[test]
    fn zero_phase_on_box() {
        let g = Arc::new(Grid::box2([0.0, 0.0], [1.0, 1.0], [41, 41]).unwrap());
        let f = TestFunction::builtin("ramp", Arc::clone(&g)).unwrap();
        let p = zero_phase(&f, 1.0).unwrap();
        // Simpson-level on a coarse grid
        assert!(p.residual < 1e-4, "{}", p.residual);
        let s = smooth_zero_phase(&f, 1.0, &PhaseOptions::default()).unwrap();
        assert!(s.residual <= 1e-10);
    }

    #[test]
    fn profile_csv_and_diagnostics() {
        let f = TestFunction::builtin("one", unit(9)).unwrap();
        let p = zero_phase(&f, 1.0).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,a\n"));
        assert_eq!(text.lines().count(), 10);
        let json = serde_json::to_string(&p.diagnostics()).unwrap();
        assert!(json.contains("\"residual\""));
    }

    #[test]
    fn verify_examples() {
        let f = TestFunction::builtin("one", unit(1025)).unwrap();
        let exact = zero_phase(&f, 1.0).unwrap();
        assert!(verify_phase(&f, 1.0, &exact, Complex64::new(0.0, 0.0)).unwrap() <= 1e-10);
        let mut flat = exact.clone();
        flat.values.iter_mut().for_each(|a| *a = 0.0);
        let r = verify_phase(&f, 1.0, &flat, Complex64::new(0.0, 0.0)).unwrap();
        assert!((r - 1.0).abs() < 1e-14);
    }
}
