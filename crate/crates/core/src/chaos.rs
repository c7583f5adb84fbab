//! Wick-renormalised imaginary chaos.
//!
//! For a truncated field `Γ` with variance profile `σ²`, the chaos tested
//! against `f` is
//!
//! ```text
//! μ(f) = ∫ f(x) e^{iβΓ(x)} e^{β²σ²(x)/2} dx
//! ```
//!
//! evaluated with the grid's quadrature weights (periodic trapezoid on the
//! circle, composite Simpson on intervals and boxes). The Wick factor makes
//! `e^{iβΓ} e^{β²σ²/2}` mean one pointwise, so `E μ(f) = ∫ f`.
//!
//! # Negative Sobolev norms
//!
//! [`sobolev_neg_norm`] uses the ordinary-frequency convention
//! `û(ξ) = ∫ u(x) e^{-2πi x·ξ} dx` and returns
//! `(∫ (1 + |ξ|²)^{-s} |û(ξ)|² dξ)^{1/2}`. Discretely, on a grid of spacing `h`
//! with `n` points per axis, the field is zero-padded to `P = padding · n`
//! points per axis (box side `L = P h`), and
//!
//! ```text
//! û_m = h^d Σ_j u_j e^{-2πi j·m / P},   ξ_m = m / L   (m signed, |m| <= P/2)
//! ‖u‖² = L^{-d} Σ_m (1 + |ξ_m|²)^{-s} |û_m|²
//! ```
//!
//! On the circle no padding is used: with `û_m = (2π/n) Σ_j u_j e^{-i m θ_j}`
//! the norm is `‖u‖² = (2π)^{-1} Σ_m (1 + m²)^{-s} |û_m|²`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Domain, Grid};
use crate::kernels::{bump, CircleKernel, Covariance};
use crate::quad;
use crate::sampler::{FieldSample, FieldTruncation};

/// Complex test function sampled on a grid.
#[derive(Clone, Debug)]
pub struct TestFunction {
    grid: Arc<Grid>,
    values: Vec<Complex64>,
    support: Vec<bool>,
    l1: f64,
    name: String,
}

/// Names accepted by [`TestFunction::builtin`].
pub const BUILTIN_FUNCTIONS: [&str; 4] = ["one", "ramp", "step-sign", "bump"];

impl TestFunction {
    pub fn new(grid: Arc<Grid>, values: Vec<Complex64>, name: impl Into<String>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidConfig(format!(
                "test function has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidConfig("test function has non-finite values".into()));
        }
        let support: Vec<bool> = values.iter().map(|v| v.norm() > 0.0).collect();
        let l1 = grid
            .quadrature_weights()
            .iter()
            .zip(&values)
            .map(|(w, v)| w * v.norm())
            .sum();
        Ok(TestFunction { grid, values, support, l1, name: name.into() })
    }

    pub fn from_real(grid: Arc<Grid>, values: &[f64], name: impl Into<String>) -> Result<Self> {
        Self::new(grid, values.iter().map(|&v| Complex64::new(v, 0.0)).collect(), name)
    }

    /// Evaluates `f` at every grid point.
    pub fn from_fn<F: Fn(&[f64]) -> Complex64>(
        grid: Arc<Grid>,
        f: F,
        name: impl Into<String>,
    ) -> Result<Self> {
        let values = grid.points().map(f).collect();
        Self::new(grid, values, name)
    }

    /// Built-in test functions in the normalised coordinate `t ∈ [0, 1]`
    /// (`θ/2π` on the circle, `(x - lo)/(hi - lo)` on intervals, last axis on
    /// boxes):
    ///
    /// * `one`: `1`
    /// * `ramp`: `t`
    /// * `step-sign`: `+1` on `t < 1/2`, `-1` on `t > 1/2` and `0` at the jumps
    ///   (`t = 1/2`, and `t = 0` on the circle); the midpoint value keeps
    ///   Simpson and trapezoid sums high order when a jump sits on a node
    /// * `bump`: `exp(-1/(1 - (2t - 1)²))` (product over axes on boxes)
    pub fn builtin(name: &str, grid: Arc<Grid>) -> Result<Self> {
        let unit = normalised_coords(&grid);
        let d = grid.dim();
        let periodic = grid.is_periodic();
        let values: Vec<Complex64> = unit
            .chunks_exact(d)
            .map(|t| {
                let last = t[d - 1];
                let v = match name {
                    "one" => 1.0,
                    "ramp" => last,
                    "step-sign" => {
                        if last == 0.5 || (periodic && last == 0.0) {
                            0.0
                        } else if last < 0.5 {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    "bump" => t.iter().map(|&s| bump(2.0 * s - 1.0)).product(),
                    _ => f64::NAN,
                };
                Complex64::new(v, 0.0)
            })
            .collect();
        if !BUILTIN_FUNCTIONS.contains(&name) {
            return Err(Error::InvalidConfig(format!(
                "unknown test function {name:?}; expected one of {BUILTIN_FUNCTIONS:?}"
            )));
        }
        Self::new(grid, values, name)
    }

    /// Reads grid values from a CSV file: one row per grid point holding
    /// `re` or `re,im`. A non-numeric first row is treated as a header.
    pub fn from_csv(path: &Path, grid: Arc<Grid>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<f64>, _> =
                fields.iter().map(|s| s.parse::<f64>()).collect();
            match parsed {
                Ok(nums) if nums.len() == 1 => values.push(Complex64::new(nums[0], 0.0)),
                Ok(nums) if nums.len() == 2 => values.push(Complex64::new(nums[0], nums[1])),
                Ok(nums) => {
                    return Err(Error::Format(format!(
                        "line {}: expected 1 or 2 columns, got {}",
                        lineno + 1,
                        nums.len()
                    )))
                }
                Err(_) if values.is_empty() && lineno == 0 => continue,
                Err(e) => return Err(Error::Format(format!("line {}: {e}", lineno + 1))),
            }
        }
        let name = path.display().to_string();
        Self::new(grid, values, name)
    }

    /// The same function on another grid of the same domain: built-ins are
    /// re-evaluated, anything else is interpolated with cubic Lagrange stencils
    /// (periodically on the circle, per axis on boxes).
    pub fn resample(&self, grid: Arc<Grid>) -> Result<Self> {
        if BUILTIN_FUNCTIONS.contains(&self.name.as_str()) {
            return Self::builtin(&self.name, grid);
        }
        let re: Vec<f64> = self.values.iter().map(|v| v.re).collect();
        let im: Vec<f64> = self.values.iter().map(|v| v.im).collect();
        let re = interpolate(&self.grid, &re, &grid)?;
        let im = interpolate(&self.grid, &im, &grid)?;
        let values = re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect();
        Self::new(grid, values, self.name.clone())
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    /// `‖f‖_{L¹}` by the grid quadrature.
    pub fn l1_norm(&self) -> f64 {
        self.l1
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// `∫ f` by the grid quadrature.
    pub fn integral(&self) -> Complex64 {
        self.grid
            .quadrature_weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| v * w)
            .sum()
    }

    /// `c · f`.
    pub fn scaled(&self, c: Complex64) -> Result<Self> {
        Self::new(
            Arc::clone(&self.grid),
            self.values.iter().map(|v| v * c).collect(),
            format!("{}*{}", c, self.name),
        )
    }

    /// Hex SHA-256 prefix of the grid description and values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&self.grid.domain()).unwrap_or_default().as_bytes());
        for v in &self.values {
            h.update(v.re.to_le_bytes());
            h.update(v.im.to_le_bytes());
        }
        hex(&h.finalize()[..8])
    }
}

/// Cubic interpolation of grid values onto another grid over the same domain.
pub fn interpolate(from: &Grid, values: &[f64], to: &Grid) -> Result<Vec<f64>> {
    match (from.domain(), to.domain()) {
        (Domain::Circle { n }, Domain::Circle { .. }) => {
            let h = 2.0 * PI / n as f64;
            Ok(to
                .coords()
                .iter()
                .map(|&t| {
                    let u = t / h;
                    let i = u.floor() as isize;
                    let at = |k: isize| values[k.rem_euclid(n as isize) as usize];
                    quad::lagrange4(at(i - 1), at(i), at(i + 1), at(i + 2), u - i as f64)
                })
                .collect())
        }
        (Domain::Interval { lo, hi, n }, Domain::Interval { lo: l2, hi: h2, .. })
            if lo == l2 && hi == h2 =>
        {
            let h = (hi - lo) / (n - 1) as f64;
            Ok(to.coords().iter().map(|&x| quad::cubic_interp(values, lo, h, x)).collect())
        }
        (Domain::Box { lo, hi, n }, Domain::Box { lo: l2, hi: h2, n: m }) if lo == l2 && hi == h2 => {
            let h = [(hi[0] - lo[0]) / (n[0] - 1) as f64, (hi[1] - lo[1]) / (n[1] - 1) as f64];
            let h2 = [(hi[0] - lo[0]) / (m[0] - 1) as f64, (hi[1] - lo[1]) / (m[1] - 1) as f64];
            // along the last axis first, then the first
            let mut rows = vec![0.0; n[0] * m[1]];
            for i in 0..n[0] {
                let row = &values[i * n[1]..(i + 1) * n[1]];
                for j in 0..m[1] {
                    rows[i * m[1] + j] = quad::cubic_interp(row, lo[1], h[1], lo[1] + j as f64 * h2[1]);
                }
            }
            let mut out = vec![0.0; m[0] * m[1]];
            let mut col = vec![0.0; n[0]];
            for j in 0..m[1] {
                for i in 0..n[0] {
                    col[i] = rows[i * m[1] + j];
                }
                for i in 0..m[0] {
                    out[i * m[1] + j] = quad::cubic_interp(&col, lo[0], h[0], lo[0] + i as f64 * h2[0]);
                }
            }
            Ok(out)
        }
        _ => Err(Error::GridMismatch),
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Normalised coordinates computed from node indices, so that e.g. the
/// midpoint of an odd-sized interval grid is exactly `1/2`.
fn normalised_coords(grid: &Grid) -> Vec<f64> {
    match grid.domain() {
        Domain::Circle { n } => (0..n).map(|j| j as f64 / n as f64).collect(),
        Domain::Interval { n, .. } => (0..n).map(|j| j as f64 / (n - 1) as f64).collect(),
        Domain::Box { n, .. } => {
            let mut out = Vec::with_capacity(2 * n[0] * n[1]);
            for i in 0..n[0] {
                for j in 0..n[1] {
                    out.push(i as f64 / (n[0] - 1) as f64);
                    out.push(j as f64 / (n[1] - 1) as f64);
                }
            }
            out
        }
    }
}

/// One evaluated chaos integral.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChaosObservable {
    pub re: f64,
    pub im: f64,
    pub beta: f64,
    pub truncation: FieldTruncation,
    pub f_id: String,
    pub stream: u64,
}

impl ChaosObservable {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    /// `‖f‖₁ · max_x e^{β²σ²(x)/2}`, the a priori modulus bound.
    pub fn modulus_bound(f: &TestFunction, variance: &[f64], beta: f64) -> f64 {
        let max_var = variance.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        f.l1_norm() * (0.5 * beta * beta * max_var).exp()
    }
}

/// `e^{β²σ²(x)/2}` at every grid point.
pub fn wick_weight(sample: &FieldSample, beta: f64) -> Vec<f64> {
    wick_weight_profile(&sample.variance, beta)
}

pub fn wick_weight_profile(variance: &[f64], beta: f64) -> Vec<f64> {
    variance.iter().map(|v| (0.5 * beta * beta * v).exp()).collect()
}

fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Precomputed `w_i f(x_i) e^{β²σ²(x_i)/2}`; evaluating a sample is one
/// weighted sum of `e^{iβΓ}`.
#[derive(Clone, Debug)]
pub struct ChaosFunctional {
    beta: f64,
    weighted: Vec<Complex64>,
}

impl ChaosFunctional {
    pub fn new(f: &TestFunction, variance: &[f64], beta: f64) -> Result<Self> {
        if variance.len() != f.values().len() {
            return Err(Error::GridMismatch);
        }
        let weights = f.grid().quadrature_weights();
        let weighted = f
            .values()
            .iter()
            .zip(&weights)
            .zip(variance)
            .map(|((v, w), s2)| v * (w * (0.5 * beta * beta * s2).exp()))
            .collect();
        Ok(ChaosFunctional { beta, weighted })
    }

    pub fn eval(&self, field: &[f64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (c, g) in self.weighted.iter().zip(field) {
            let (s, co) = (self.beta * g).sin_cos();
            acc += c * Complex64::new(co, s);
        }
        acc
    }
}

/// `μ_N(f) = ∫ f e^{iβΓ} e^{β²σ²/2}` for one sample.
pub fn chaos_integral(f: &TestFunction, sample: &FieldSample, beta: f64) -> Result<ChaosObservable> {
    if !same_grid(f.grid(), &sample.grid) {
        return Err(Error::GridMismatch);
    }
    let value = ChaosFunctional::new(f, &sample.variance, beta)?.eval(&sample.values);
    Ok(ChaosObservable {
        re: value.re,
        im: value.im,
        beta,
        truncation: sample.truncation,
        f_id: f.hash(),
        stream: sample.stream,
    })
}

/// Support of `f` dilated by one grid cell (periodic on the circle, 8-neighbour
/// on boxes).
pub fn default_window(f: &TestFunction) -> Vec<bool> {
    let grid = f.grid();
    let support = f.support();
    let n = support.len();
    let mut out = support.to_vec();
    match grid.domain() {
        Domain::Circle { .. } => {
            for i in 0..n {
                if support[i] {
                    out[(i + 1) % n] = true;
                    out[(i + n - 1) % n] = true;
                }
            }
        }
        Domain::Interval { .. } => {
            for i in 0..n {
                if support[i] {
                    if i > 0 {
                        out[i - 1] = true;
                    }
                    if i + 1 < n {
                        out[i + 1] = true;
                    }
                }
            }
        }
        Domain::Box { n: shape, .. } => {
            let (r, c) = (shape[0], shape[1]);
            for i in 0..r {
                for j in 0..c {
                    if !support[i * c + j] {
                        continue;
                    }
                    for di in -1isize..=1 {
                        for dj in -1isize..=1 {
                            let (ii, jj) = (i as isize + di, j as isize + dj);
                            if ii >= 0 && jj >= 0 && (ii as usize) < r && (jj as usize) < c {
                                out[ii as usize * c + jj as usize] = true;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `1_K (f :e^{iβΓ}: - 1)` on the grid; `window` defaults to
/// [`default_window`].
pub fn chaos_field(
    f: &TestFunction,
    sample: &FieldSample,
    beta: f64,
    window: Option<&[bool]>,
) -> Result<Vec<Complex64>> {
    if !same_grid(f.grid(), &sample.grid) {
        return Err(Error::GridMismatch);
    }
    let default;
    let window = match window {
        Some(w) => {
            if w.len() != f.values().len() {
                return Err(Error::GridMismatch);
            }
            w
        }
        None => {
            default = default_window(f);
            &default
        }
    };
    Ok(f.values()
        .iter()
        .zip(&sample.values)
        .zip(sample.variance.iter())
        .zip(window)
        .map(|(((fv, g), s2), &inside)| {
            if inside {
                let (s, c) = (beta * g).sin_cos();
                fv * Complex64::new(c, s) * (0.5 * beta * beta * s2).exp() - 1.0
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// second moments

/// Covariance used in [`second_moment_analytic`].
#[derive(Clone, Copy)]
pub enum MomentKernel<'a> {
    /// Circle field; `modes = None` is the untruncated kernel.
    Circle { modes: Option<usize> },
    /// Any kernel on a non-periodic grid. Bounded kernels use a direct double
    /// quadrature; log-singular ones (d = 1) use product integration.
    General(&'a dyn Covariance),
}

/// `E|μ(f)|² = ∬ f(x) f̄(y) e^{β² C(x, y)} dx dy`.
pub fn second_moment_analytic(f: &TestFunction, kernel: MomentKernel<'_>, beta: f64) -> Result<f64> {
    let beta_sq = beta * beta;
    match kernel {
        MomentKernel::Circle { modes } => {
            if !f.grid().is_periodic() {
                return Err(Error::GridMismatch);
            }
            if modes.is_none() && beta_sq >= 1.0 {
                return Err(Error::DivergentMoment { beta_sq, dim: 1 });
            }
            let coeffs = circle_fourier_coefficients(f);
            let n = coeffs.len();
            let kernel_coeffs = match modes {
                Some(m) => truncated_kernel_coefficients(m, beta_sq, n),
                None => singular_kernel_coefficients(beta_sq, &coeffs),
            };
            Ok(4.0 * PI * PI
                * coeffs
                    .iter()
                    .zip(&kernel_coeffs)
                    .map(|(c, k)| c.norm_sqr() * k)
                    .sum::<f64>())
        }
        MomentKernel::General(k) => {
            if f.grid().is_periodic() {
                return Err(Error::InvalidConfig(
                    "use MomentKernel::Circle for periodic grids".into(),
                ));
            }
            if k.dim() != f.dim() {
                return Err(Error::GridMismatch);
            }
            if k.is_singular() {
                if beta_sq >= f.dim() as f64 {
                    return Err(Error::DivergentMoment { beta_sq, dim: f.dim() });
                }
                product_integration_moment(f, k, beta_sq)
            } else {
                bounded_moment(f, k, beta_sq)
            }
        }
    }
}

/// `f_m = (1/n) Σ_j f(θ_j) e^{-imθ_j}` in FFT order.
fn circle_fourier_coefficients(f: &TestFunction) -> Vec<Complex64> {
    let n = f.values().len();
    let mut buf = f.values().to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter_mut().for_each(|c| *c /= n as f64);
    buf
}

fn signed_index(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Fourier coefficients `K_m = (1/2π) ∫ e^{β² C_N(u)} e^{-imu} du` for the
/// `n` FFT-ordered frequencies of a grid of size `n`.
fn truncated_kernel_coefficients(modes: usize, beta_sq: f64, n: usize) -> Vec<f64> {
    let len = (64 * modes).max(4 * n).max(4096).next_power_of_two();
    let mut planner = FftPlanner::new();
    // C_N(u_j) = Re Σ_k e^{iku_j}/k
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for k in 1..=modes.min(len - 1) {
        buf[k] = Complex64::new(1.0 / k as f64, 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let mut kern: Vec<Complex64> =
        buf.iter().map(|c| Complex64::new((beta_sq * c.re).exp(), 0.0)).collect();
    planner.plan_fft_forward(len).process(&mut kern);
    (0..n)
        .map(|i| {
            let m = signed_index(i, n);
            let idx = m.rem_euclid(len as i64) as usize;
            kern[idx].re / len as f64
        })
        .collect()
}

/// Coefficients of `|2 sin(u/2)|^{-β²}` by adaptive quadrature after the
/// substitution `u = v^q`, `q = 1/(1 - β²)`, which removes the endpoint
/// singularity. Only frequencies where `f` has mass are computed.
fn singular_kernel_coefficients(beta_sq: f64, f_coeffs: &[Complex64]) -> Vec<f64> {
    let n = f_coeffs.len();
    let max = f_coeffs.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
    (0..n)
        .map(|i| {
            if f_coeffs[i].norm_sqr() <= 1e-30 * max {
                return 0.0;
            }
            circle_power_coefficient(beta_sq, signed_index(i, n).unsigned_abs())
        })
        .collect()
}

/// `(1/π) ∫_0^π (2 sin(u/2))^{-β²} cos(m u) du`, the `m`-th Fourier
/// coefficient of `e^{β² C}` for the untruncated circle kernel.
pub fn circle_power_coefficient(beta_sq: f64, m: u64) -> f64 {
    let q = 1.0 / (1.0 - beta_sq);
    let top = PI.powf(1.0 / q);
    let integrand = |v: f64| {
        let u = v.powf(q);
        let ratio = if u < 1e-8 { 1.0 + u * u / 24.0 } else { u / (2.0 * (0.5 * u).sin()) };
        q * ratio.powf(beta_sq) * (m as f64 * u).cos()
    };
    let panels = 8 + 4 * m as usize;
    quad::adaptive_simpson_panels(integrand, 0.0, top, panels, 1e-14) / PI
}

fn bounded_moment(f: &TestFunction, k: &dyn Covariance, beta_sq: f64) -> Result<f64> {
    let grid = f.grid();
    let w = grid.quadrature_weights();
    let v = f.values();
    let h = grid.min_spacing();
    let mut total = 0.0;
    for i in 0..v.len() {
        if v[i].norm() == 0.0 {
            continue;
        }
        let xi = grid.point(i);
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..v.len() {
            if v[j].norm() == 0.0 {
                continue;
            }
            let c = if i == j { k.grid_diagonal(xi, h) } else { k.cov(xi, grid.point(j))? };
            row += v[j].conj() * (w[j] * (beta_sq * c).exp());
        }
        total += (v[i] * row).re * w[i];
    }
    Ok(total)
}

/// Product integration in d = 1: for each node `x_i` the inner integral
/// `∫ f̄(y) e^{β² R(x_i, y)} |x_i - y|^{-β²} dy` uses the piecewise-linear
/// interpolant of the smooth factor against exact moments of the power
/// singularity; the outer integral uses the grid quadrature.
fn product_integration_moment(f: &TestFunction, k: &dyn Covariance, beta_sq: f64) -> Result<f64> {
    let grid = f.grid();
    let (lo, h, n) = match grid.domain() {
        Domain::Interval { lo, hi, n } => (lo, (hi - lo) / (n - 1) as f64, n),
        _ => {
            return Err(Error::InvalidConfig(
                "singular second moments are implemented on intervals only".into(),
            ))
        }
    };
    let w = grid.quadrature_weights();
    let v = f.values();
    let p = beta_sq;
    let mut total = 0.0;
    for i in 0..n {
        if v[i].norm() == 0.0 {
            continue;
        }
        let xi = [lo + i as f64 * h];
        let smooth: Vec<Complex64> = (0..n)
            .map(|j| {
                let yj = [lo + j as f64 * h];
                k.regular_part(&xi, &yj).map(|r| v[j].conj() * (beta_sq * r).exp())
            })
            .collect::<Result<_>>()?;
        let mut inner = Complex64::new(0.0, 0.0);
        for c in 0..n - 1 {
            // cell [y_c, y_{c+1}]; distance from x_i to its near and far ends
            let (near, far, near_is_left) = if c >= i {
                ((c - i) as f64 * h, (c + 1 - i) as f64 * h, true)
            } else {
                ((i - c - 1) as f64 * h, (i - c) as f64 * h, false)
            };
            let j0 = (far.powf(1.0 - p) - near.powf(1.0 - p)) / (1.0 - p);
            let j1 = (far.powf(2.0 - p) - near.powf(2.0 - p)) / (2.0 - p);
            // ∫ (s - near) s^{-p} ds over [near, far]
            let lin = j1 - near * j0;
            let (w_near, w_far) = (j0 - lin / h, lin / h);
            let (near_val, far_val) = if near_is_left {
                (smooth[c], smooth[c + 1])
            } else {
                (smooth[c + 1], smooth[c])
            };
            inner += near_val * w_near + far_val * w_far;
        }
        total += (v[i] * inner).re * w[i];
    }
    Ok(total)
}

/// `E|μ_N(f) - μ_M(f)|² = ∬ f f̄ (e^{β² C_max} - e^{β² C_min})` for the circle
/// field, using `E[μ_N μ̄_M] = ∬ f f̄ e^{β² C_{min(N, M)}}`.
pub fn truncation_gap(n_modes: usize, m_modes: usize, f: &TestFunction, beta: f64) -> Result<f64> {
    if !f.grid().is_periodic() {
        return Err(Error::GridMismatch);
    }
    if n_modes == m_modes {
        return Ok(0.0);
    }
    let (lo, hi) = (n_modes.min(m_modes), n_modes.max(m_modes));
    let coeffs = circle_fourier_coefficients(f);
    let n = coeffs.len();
    let k_lo = truncated_kernel_coefficients(lo, beta * beta, n);
    let k_hi = truncated_kernel_coefficients(hi, beta * beta, n);
    Ok(4.0 * PI * PI
        * coeffs
            .iter()
            .zip(k_hi.iter().zip(&k_lo))
            .map(|(c, (a, b))| c.norm_sqr() * (a - b))
            .sum::<f64>())
}

// ---------------------------------------------------------------------------
// Sobolev norms

/// Order and discretisation of a negative Sobolev norm `H^{-s}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevSpec {
    pub s: f64,
    pub padding: usize,
}

impl SobolevSpec {
    /// `s = d/2 + 0.5`, padding 4.
    pub fn default_for(dim: usize) -> Self {
        SobolevSpec { s: dim as f64 / 2.0 + 0.5, padding: 4 }
    }

    pub fn new(s: f64, padding: usize, dim: usize) -> Result<Self> {
        let spec = SobolevSpec { s, padding };
        spec.validate(dim)?;
        Ok(spec)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.s > dim as f64 / 2.0) {
            return Err(Error::InvalidConfig(format!(
                "Sobolev order s = {} must exceed d/2 = {}",
                self.s,
                dim as f64 / 2.0
            )));
        }
        if self.padding < 4 {
            return Err(Error::InvalidConfig(format!(
                "padding factor must be at least 4, got {}",
                self.padding
            )));
        }
        Ok(())
    }
}

/// `‖u‖_{H^{-s}}` of a grid field; see the module docs for the exact
/// discretisation.
pub fn sobolev_neg_norm(field: &[Complex64], grid: &Grid, spec: &SobolevSpec) -> Result<f64> {
    spec.validate(grid.dim())?;
    if field.len() != grid.len() {
        return Err(Error::GridMismatch);
    }
    let nonzero = |c: &Complex64| c.re != 0.0 || c.im != 0.0;
    let mut planner = FftPlanner::new();
    match grid.domain() {
        Domain::Circle { n } => {
            let h = 2.0 * PI / n as f64;
            let mut buf = field.to_vec();
            planner.plan_fft_forward(n).process(&mut buf);
            let total: f64 = buf
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let m = signed_index(i, n) as f64;
                    (1.0 + m * m).powf(-spec.s) * (c * h).norm_sqr()
                })
                .sum();
            Ok((total / (2.0 * PI)).sqrt())
        }
        Domain::Interval { lo, hi, n } => {
            if nonzero(&field[0]) || nonzero(&field[n - 1]) {
                return Err(Error::SupportTouchesBoundary);
            }
            let h = (hi - lo) / (n - 1) as f64;
            let p = spec.padding * n;
            let len = p as f64 * h;
            let mut buf = vec![Complex64::new(0.0, 0.0); p];
            buf[..n].copy_from_slice(field);
            planner.plan_fft_forward(p).process(&mut buf);
            let total: f64 = buf
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let xi = signed_index(i, p) as f64 / len;
                    (1.0 + xi * xi).powf(-spec.s) * (c * h).norm_sqr()
                })
                .sum();
            Ok((total / len).sqrt())
        }
        Domain::Box { lo, hi, n } => {
            let (r, c) = (n[0], n[1]);
            for i in 0..r {
                for j in 0..c {
                    let edge = i == 0 || j == 0 || i == r - 1 || j == c - 1;
                    if edge && nonzero(&field[i * c + j]) {
                        return Err(Error::SupportTouchesBoundary);
                    }
                }
            }
            let h = [(hi[0] - lo[0]) / (r - 1) as f64, (hi[1] - lo[1]) / (c - 1) as f64];
            let (pr, pc) = (spec.padding * r, spec.padding * c);
            let len = [pr as f64 * h[0], pc as f64 * h[1]];
            let mut buf = vec![Complex64::new(0.0, 0.0); pr * pc];
            for i in 0..r {
                buf[i * pc..i * pc + c].copy_from_slice(&field[i * c..(i + 1) * c]);
            }
            let row_fft = planner.plan_fft_forward(pc);
            for row in buf.chunks_exact_mut(pc) {
                row_fft.process(row);
            }
            let col_fft = planner.plan_fft_forward(pr);
            let mut col = vec![Complex64::new(0.0, 0.0); pr];
            for j in 0..pc {
                for i in 0..pr {
                    col[i] = buf[i * pc + j];
                }
                col_fft.process(&mut col);
                for i in 0..pr {
                    buf[i * pc + j] = col[i];
                }
            }
            let cell = h[0] * h[1];
            let mut total = 0.0;
            for i in 0..pr {
                let xi0 = signed_index(i, pr) as f64 / len[0];
                for j in 0..pc {
                    let xi1 = signed_index(j, pc) as f64 / len[1];
                    total += (1.0 + xi0 * xi0 + xi1 * xi1).powf(-spec.s)
                        * (buf[i * pc + j] * cell).norm_sqr();
                }
            }
            Ok((total / (len[0] * len[1])).sqrt())
        }
    }
}

/// `Σ_{k ≤ modes} cos(k u)/k`, re-exported for callers comparing against the
/// truncated circle covariance.
pub fn truncated_circle_cov(u: f64, modes: usize) -> f64 {
    CircleKernel::partial_sum(u, modes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{SeedCovariance, StarScaleKernel, Truncation};
    use crate::sampler::{sample_circle_field, CircleSampler};

    fn circle(n: usize) -> Arc<Grid> {
        Arc::new(Grid::circle(n).unwrap())
    }

    #[test]
    fn builtins_on_interval() {
        let g = Arc::new(Grid::interval(0.0, 1.0, 101).unwrap());
        let one = TestFunction::builtin("one", Arc::clone(&g)).unwrap();
        assert!((one.l1_norm() - 1.0).abs() < 1e-14);
        let ramp = TestFunction::builtin("ramp", Arc::clone(&g)).unwrap();
        assert!((ramp.l1_norm() - 0.5).abs() < 1e-14);
        let step = TestFunction::builtin("step-sign", Arc::clone(&g)).unwrap();
        assert!(step.integral().norm() < 1e-15);
        assert_eq!(step.values()[50].re, 0.0);
        assert_eq!(step.values()[49].re, 1.0);
        assert_eq!(step.values()[51].re, -1.0);
        assert!(TestFunction::builtin("zigzag", g).is_err());
    }

    #[test]
    fn wick_weight_examples() {
        let s = sample_circle_field(3, 12, 0, 0).unwrap();
        assert!(wick_weight(&s, 0.0).iter().all(|w| *w == 1.0));
        for w in wick_weight(&s, 1.0) {
            assert!((w - (11.0f64 / 12.0).exp()).abs() < 1e-12);
            assert!((w - 2.500_940).abs() < 1e-6);
        }
    }

    #[test]
    fn beta_zero_gives_integral_of_f() {
        let s = sample_circle_field(8, 64, 4, 1).unwrap();
        let f = TestFunction::builtin("ramp", Arc::clone(&s.grid)).unwrap();
        let mu = chaos_integral(&f, &s, 0.0).unwrap();
        assert!((mu.value() - f.integral()).norm() < 1e-13);
    }

    #[test]
    fn zero_field_gives_wick_factor() {
        let sampler = CircleSampler::new(5, 40).unwrap();
        let s = sampler.from_coefficients(&[0.0; 5], &[0.0; 5]).unwrap();
        let f = TestFunction::builtin("one", Arc::clone(&s.grid)).unwrap();
        let beta: f64 = 0.7;
        let h5 = 1.0 + 0.5 + 1.0 / 3.0 + 0.25 + 0.2;
        let mu = chaos_integral(&f, &s, beta).unwrap();
        let expected = 2.0 * PI * (beta * beta * h5 / 2.0).exp();
        assert!((mu.re - expected).abs() < 1e-12 && mu.im.abs() < 1e-12);
    }

    #[test]
    fn grid_mismatch_detected() {
        let s = sample_circle_field(2, 16, 0, 0).unwrap();
        let f = TestFunction::builtin("one", circle(32)).unwrap();
        assert!(matches!(chaos_integral(&f, &s, 0.5), Err(Error::GridMismatch)));
        assert!(matches!(chaos_field(&f, &s, 0.5, None), Err(Error::GridMismatch)));
    }

    #[test]
    fn chaos_field_examples() {
        let sampler = CircleSampler::new(2, 16).unwrap();
        let mut s = sampler.from_coefficients(&[0.0; 2], &[0.0; 2]).unwrap();
        s.variance = vec![0.0; 16].into();
        let one = TestFunction::builtin("one", Arc::clone(&s.grid)).unwrap();
        assert!(chaos_field(&one, &s, 0.8, None).unwrap().iter().all(|c| c.norm() < 1e-15));

        let g = Arc::new(Grid::interval(0.0, 1.0, 21).unwrap());
        let zero = TestFunction::from_real(Arc::clone(&g), &[0.0; 21], "zero").unwrap();
        let window: Vec<bool> = (0..21).map(|i| (5..=15).contains(&i)).collect();
        let field = FieldSample {
            grid: g,
            values: vec![0.3; 21],
            variance: vec![1.0; 21].into(),
            truncation: FieldTruncation::Modes { modes: 1 },
            stream: 0,
        };
        let out = chaos_field(&zero, &field, 0.5, Some(&window)).unwrap();
        for (i, c) in out.iter().enumerate() {
            let expected = if window[i] { -1.0 } else { 0.0 };
            assert_eq!(*c, Complex64::new(expected, 0.0));
        }
    }

    #[test]
    fn chaos_field_modulus_identity() {
        let s = sample_circle_field(16, 64, 9, 3).unwrap();
        let f = TestFunction::from_fn(
            Arc::clone(&s.grid),
            |p| Complex64::new(p[0].cos(), 0.5 * p[0].sin()),
            "osc",
        )
        .unwrap();
        let beta = 0.6;
        let out = chaos_field(&f, &s, beta, None).unwrap();
        for ((c, fv), s2) in out.iter().zip(f.values()).zip(s.variance.iter()) {
            let lhs = (c + 1.0).norm();
            let rhs = fv.norm() * (0.5 * beta * beta * s2).exp();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn default_window_dilates_by_one_cell() {
        let g = Arc::new(Grid::interval(0.0, 1.0, 11).unwrap());
        let vals: Vec<f64> = (0..11).map(|i| if (4..=6).contains(&i) { 1.0 } else { 0.0 }).collect();
        let f = TestFunction::from_real(g, &vals, "box").unwrap();
        let w = default_window(&f);
        let expected: Vec<bool> = (0..11).map(|i| (3..=7).contains(&i)).collect();
        assert_eq!(w, expected);
    }

    #[test]
    fn second_moment_beta_zero_is_squared_integral() {
        let f = TestFunction::builtin("ramp", circle(64)).unwrap();
        let got = second_moment_analytic(&f, MomentKernel::Circle { modes: Some(16) }, 0.0).unwrap();
        assert!((got - f.integral().norm_sqr()).abs() < 1e-9);
        let got = second_moment_analytic(&f, MomentKernel::Circle { modes: None }, 1e-9).unwrap();
        assert!((got - f.integral().norm_sqr()).abs() < 1e-6);
    }

    #[test]
    fn second_moment_divergence() {
        let f = TestFunction::builtin("one", circle(64)).unwrap();
        let r = second_moment_analytic(&f, MomentKernel::Circle { modes: None }, 1.5f64.sqrt());
        assert!(matches!(r, Err(Error::DivergentMoment { .. })));
        // truncated kernels are bounded for every β
        assert!(second_moment_analytic(&f, MomentKernel::Circle { modes: Some(8) }, 1.3).is_ok());
    }

    #[test]
    fn truncated_moment_matches_discrete_double_sum() {
        // the grid double sum with C_N is the quantity Monte Carlo estimates
        let n = 128;
        let g = circle(n);
        let f = TestFunction::builtin("bump", Arc::clone(&g)).unwrap();
        let beta_sq: f64 = 0.36;
        let modes = 16;
        let h = 2.0 * PI / n as f64;
        let mut direct = 0.0;
        for i in 0..n {
            for j in 0..n {
                let u = g.point(i)[0] - g.point(j)[0];
                let c = CircleKernel::partial_sum(u, modes);
                direct += (f.values()[i] * f.values()[j].conj()).re * h * h * (beta_sq * c).exp();
            }
        }
        let got =
            second_moment_analytic(&f, MomentKernel::Circle { modes: Some(modes) }, beta_sq.sqrt())
                .unwrap();
        assert!((got - direct).abs() < 1e-9 * direct, "{got} vs {direct}");
    }

    #[test]
    fn gap_is_zero_for_equal_truncations() {
        let f = TestFunction::builtin("one", circle(64)).unwrap();
        assert_eq!(truncation_gap(8, 8, &f, 0.5).unwrap(), 0.0);
        let a = truncation_gap(8, 16, &f, 0.5).unwrap();
        let b = truncation_gap(16, 8, &f, 0.5).unwrap();
        assert!(a > 0.0 && a == b);
    }

    #[test]
    fn bounded_star_scale_moment_beta_zero() {
        let g = Arc::new(Grid::interval(0.0, 1.0, 33).unwrap());
        let f = TestFunction::builtin("bump", Arc::clone(&g)).unwrap();
        let seed = Arc::new(SeedCovariance::build(0.5).unwrap());
        let k = StarScaleKernel::new(seed, 1.0, Truncation::Finite(2.0)).unwrap();
        let m = second_moment_analytic(&f, MomentKernel::General(&k), 0.0).unwrap();
        assert!((m - f.integral().norm_sqr()).abs() < 1e-12);
        let m = second_moment_analytic(&f, MomentKernel::General(&k), 0.5).unwrap();
        assert!(m > f.integral().norm_sqr());
    }

    #[test]
    fn sobolev_basic_properties() {
        let g = Grid::interval(0.0, 1.0, 65).unwrap();
        let spec = SobolevSpec::default_for(1);
        let zero = vec![Complex64::new(0.0, 0.0); 65];
        assert_eq!(sobolev_neg_norm(&zero, &g, &spec).unwrap(), 0.0);
        let u: Vec<Complex64> = (0..65)
            .map(|i| Complex64::new(bump((i as f64 / 64.0) * 2.0 - 1.0), 0.0))
            .collect();
        let a = sobolev_neg_norm(&u, &g, &spec).unwrap();
        let c = Complex64::new(-1.5, 2.0);
        let cu: Vec<Complex64> = u.iter().map(|v| v * c).collect();
        let b = sobolev_neg_norm(&cu, &g, &spec).unwrap();
        assert!((b - 2.5 * a).abs() < 1e-12 * b);
        let mut touching = u.clone();
        touching[0] = Complex64::new(1.0, 0.0);
        assert!(matches!(
            sobolev_neg_norm(&touching, &g, &spec),
            Err(Error::SupportTouchesBoundary)
        ));
        assert!(SobolevSpec::new(0.5, 4, 1).is_err());
        assert!(SobolevSpec::new(1.0, 2, 1).is_err());
    }

    #[test]
    fn untruncated_circle_moment_matches_gamma_form() {
        use statrs::function::gamma::gamma;
        let f = TestFunction::builtin("one", circle(64)).unwrap();
        for beta_sq in [0.1, 0.5, 0.8] {
            let got = second_moment_analytic(&f, MomentKernel::Circle { modes: None }, f64::sqrt(beta_sq))
                .unwrap();
            let closed = 4.0 * PI * PI * gamma(1.0 - beta_sq) / gamma(1.0 - beta_sq / 2.0).powi(2);
            assert!((got - closed).abs() < 1e-9 * closed, "{beta_sq}: {got} vs {closed}");
        }
    }

    #[test]
    fn higher_fourier_coefficients_match_gamma_form() {
        use statrs::function::gamma::gamma;
        // (1/2π)∫|2 sin(u/2)|^{-a} e^{-imu} du = (-1)^m Γ(1-a) / (Γ(1-a/2+m) Γ(1-a/2-m))
        let a = 0.5;
        for m in 0..5u64 {
            let mf = m as f64;
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            let closed =
                sign * gamma(1.0 - a) / (gamma(1.0 - a / 2.0 + mf) * gamma(1.0 - a / 2.0 - mf));
            let got = circle_power_coefficient(a, m);
            assert!((got - closed).abs() < 1e-10, "m={m}: {got} vs {closed}");
        }
    }

    #[test]
    fn sobolev_indicator_oracle() {
        // ‖1_[0,1]‖²_{H^{-1}} = ∫ sinc²(ξ)/(1+ξ²) dξ = 1 - (1 - e^{-2π})/(2π)
        let n = 4001;
        let g = Grid::interval(-2.0, 3.0, n).unwrap();
        let u: Vec<Complex64> = g
            .points()
            .map(|p| Complex64::new(if (0.0..1.0).contains(&p[0]) { 1.0 } else { 0.0 }, 0.0))
            .collect();
        let spec = SobolevSpec { s: 1.0, padding: 8 };
        let got = sobolev_neg_norm(&u, &g, &spec).unwrap().powi(2);
        let exact = 1.0 - (1.0 - (-2.0 * PI).exp()) / (2.0 * PI);
        assert!((got - exact).abs() < 2e-3, "{got} vs {exact}");
    }

    #[test]
    fn periodic_sobolev_of_constant() {
        // û_0 = 2π, all other modes vanish: ‖1‖² = 2π
        let g = Grid::circle(32).unwrap();
        let u = vec![Complex64::new(1.0, 0.0); 32];
        let got = sobolev_neg_norm(&u, &g, &SobolevSpec::default_for(1)).unwrap();
        assert!((got - (2.0 * PI).sqrt()).abs() < 1e-12);
    }
}
