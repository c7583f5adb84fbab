//! Covariance kernels of log-correlated fields.
//!
//! Three families are provided:
//!
//! * [`LogKernel`]: `C(x, y) = -log|x - y| + g(x, y)` on a box of `R^d`, with a
//!   symmetric regular part `g`.
//! * [`CircleKernel`]: the circle Gaussian free field,
//!   `C(θ, θ') = -log|e^{iθ} - e^{iθ'}| = Σ_{k≥1} cos(k(θ - θ'))/k`, and its
//!   spectral truncations [`TruncatedCircleKernel`].
//! * [`StarScaleKernel`]: `∫_0^t k(e^u (x - y)) (1 - e^{-δu}) du` built from a
//!   compactly supported [`SeedCovariance`] `k`.
//!
//! All kernels are immutable after construction and safe to share between
//! threads.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Separations below this are treated as the diagonal.
pub const DIAGONAL_GUARD: f64 = 1e-14;
/// Number of samples in a stored radial seed profile on `[0, 1]`.
pub const PROFILE_POINTS: usize = 4096;
/// Absolute tolerance of the scale-integral quadrature.
pub const SCALE_INTEGRAL_TOL: f64 = 1e-10;
/// Mean of `-log|u|` over the unit cell `[-1/2, 1/2]^d`, for `d = 1, 2`.
const CELL_LOG_MEAN: [f64; 2] = [1.0 + std::f64::consts::LN_2, 1.061_175_426_882_524_3];

/// Two-point covariance evaluable at grid points.
pub trait Covariance: Send + Sync {
    fn dim(&self) -> usize;

    fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64>;

    /// Whether `cov` diverges on the diagonal.
    fn is_singular(&self) -> bool;

    /// Diagonal entry used when the kernel is sampled on a grid of spacing
    /// `h`. Bounded kernels return their true variance; log-singular ones the
    /// lattice self-variance, i.e. the kernel averaged over a grid cell
    /// ([`lattice_self_variance`] plus the regular part).
    fn grid_diagonal(&self, x: &[f64], h: f64) -> f64 {
        match self.cov(x, x) {
            Ok(v) => v,
            Err(_) => {
                lattice_self_variance(self.dim(), h) + self.regular_part(x, x).unwrap_or(0.0)
            }
        }
    }

    /// `C(x, y) + log|x - y|`, the bounded remainder of a log-singular kernel.
    /// Only meaningful when `is_singular()`; the diagonal value is the limit.
    fn regular_part(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let _ = (x, y);
        Err(Error::InvalidKernel("kernel has no log-singular decomposition".into()))
    }

    /// Stable identifier used for cache keys and reports.
    fn id(&self) -> String;
}

/// `t - (1 - e^{-δt})/δ`: variance of the star-scale field truncated at scale `t`.
pub fn star_scale_variance(delta: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    // -expm1(-δt) = 1 - e^{-δt} without cancellation for small δt
    t + (-delta * t).exp_m1() / delta
}

/// Average of `-log|u|` over a cube of side `h` centred at the origin:
/// `log(1/h) + κ_d` with `κ_1 = 1 + log 2` and `κ_2 ≈ 1.0612`.
pub fn lattice_self_variance(dim: usize, h: f64) -> f64 {
    let kappa = CELL_LOG_MEAN[dim.clamp(1, 2) - 1];
    -h.ln() + kappa
}

fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// log kernel

pub type RegularFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Regular part `g` of a log kernel.
#[derive(Clone)]
pub enum RegularPart {
    Zero,
    Constant(f64),
    Custom { label: String, g: RegularFn },
}

impl RegularPart {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            RegularPart::Zero => 0.0,
            RegularPart::Constant(c) => *c,
            RegularPart::Custom { g, .. } => g(x, y),
        }
    }

    fn label(&self) -> String {
        match self {
            RegularPart::Zero => "zero".into(),
            RegularPart::Constant(c) => format!("const({c})"),
            RegularPart::Custom { label, .. } => label.clone(),
        }
    }
}

impl fmt::Debug for RegularPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// `-log|x - y| + g(x, y)` on the box `[lo, hi]^d`.
#[derive(Clone, Debug)]
pub struct LogKernel {
    dim: usize,
    lo: f64,
    hi: f64,
    g: RegularPart,
}

impl LogKernel {
    /// Pure log kernel (`g ≡ 0`).
    pub fn pure(dim: usize) -> Result<Self> {
        Self::new(dim, 0.0, 1.0, RegularPart::Zero)
    }

    /// Builds the kernel after checking `g` for symmetry on 1000 random pairs
    /// of the box.
    pub fn new(dim: usize, lo: f64, hi: f64, g: RegularPart) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidKernel("dimension must be positive".into()));
        }
        if !(hi > lo) {
            return Err(Error::InvalidKernel(format!("empty domain [{lo}, {hi}]")));
        }
        let kernel = LogKernel { dim, lo, hi, g };
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut x = vec![0.0; dim];
        let mut y = vec![0.0; dim];
        for _ in 0..1000 {
            for i in 0..dim {
                x[i] = rng.random_range(lo..hi);
                y[i] = rng.random_range(lo..hi);
            }
            let a = kernel.g.eval(&x, &y);
            let b = kernel.g.eval(&y, &x);
            if !a.is_finite() || (a - b).abs() > 1e-12 {
                return Err(Error::InvalidKernel(format!(
                    "regular part is not symmetric: g(x,y)={a}, g(y,x)={b}"
                )));
            }
        }
        Ok(kernel)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

impl Covariance for LogKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let r = euclid(x, y);
        if r < DIAGONAL_GUARD {
            return Err(Error::DiagonalSingularity { separation: r });
        }
        Ok(-r.ln() + self.g.eval(x, y))
    }

    fn is_singular(&self) -> bool {
        true
    }

    fn regular_part(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.g.eval(x, y))
    }

    fn id(&self) -> String {
        format!("log:d={}:box=[{},{}]:g={}", self.dim, self.lo, self.hi, self.g.label())
    }
}

// ---------------------------------------------------------------------------
// circle

/// Covariance of the circle GFF; points are angles.
#[derive(Clone, Copy, Debug, Default)]
pub struct CircleKernel;

impl CircleKernel {
    /// `-log(2|sin((θ - θ')/2)|)`.
    pub fn eval(&self, theta: f64, theta_p: f64) -> Result<f64> {
        let chord = (2.0 * (0.5 * (theta - theta_p)).sin()).abs();
        if chord < DIAGONAL_GUARD {
            return Err(Error::DiagonalSingularity { separation: chord });
        }
        Ok(-chord.ln())
    }

    /// `Σ_{k=1}^{modes} cos(k u)/k`.
    pub fn partial_sum(u: f64, modes: usize) -> f64 {
        (1..=modes).map(|k| (k as f64 * u).cos() / k as f64).sum()
    }
}

impl Covariance for CircleKernel {
    fn dim(&self) -> usize {
        1
    }

    fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.eval(x[0], y[0])
    }

    fn is_singular(&self) -> bool {
        true
    }

    /// `log(2π/h)`: with this diagonal every row of the sampled matrix sums
    /// to zero, as the circle field has zero mean.
    fn grid_diagonal(&self, _x: &[f64], h: f64) -> f64 {
        (2.0 * PI / h).ln()
    }

    fn regular_part(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        // -log(2|sin(u/2)|) + log|u| for the shortest angular separation u
        let mut u = (x[0] - y[0]).rem_euclid(2.0 * PI);
        if u > PI {
            u = 2.0 * PI - u;
        }
        if u < 1e-6 {
            return Ok(u * u / 24.0);
        }
        Ok(-(2.0 * (0.5 * u).sin()).ln() + u.ln())
    }

    fn id(&self) -> String {
        "circle".into()
    }
}

/// Circle covariance truncated to the first `modes` Fourier modes.
#[derive(Clone, Copy, Debug)]
pub struct TruncatedCircleKernel {
    pub modes: usize,
}

impl Covariance for TruncatedCircleKernel {
    fn dim(&self) -> usize {
        1
    }

    fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(CircleKernel::partial_sum(x[0] - y[0], self.modes))
    }

    fn is_singular(&self) -> bool {
        false
    }

    fn id(&self) -> String {
        format!("circle-truncated:N={}", self.modes)
    }
}

/// Independent unit-variance values at distinct points.
#[derive(Clone, Copy, Debug, Default)]
pub struct WhiteNoiseKernel {
    pub dim: usize,
}

impl Covariance for WhiteNoiseKernel {
    fn dim(&self) -> usize {
        self.dim.max(1)
    }

    fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(if euclid(x, y) < DIAGONAL_GUARD { 1.0 } else { 0.0 })
    }

    fn is_singular(&self) -> bool {
        false
    }

    fn id(&self) -> String {
        format!("white:d={}", self.dim())
    }
}

// ---------------------------------------------------------------------------
// seed covariance

/// Radial, compactly supported seed covariance with nonnegative Fourier
/// transform, realised as the normalised self-convolution of a smooth bump of
/// radius `width`. Support radius is `2 * width <= 1` and `k(0) = 1`.
#[derive(Clone, Debug)]
pub struct SeedCovariance {
    dim: usize,
    width: f64,
    decay: f64,
    smoothness: u32,
    profile: Vec<f64>,
}

/// `exp(-1/(1 - t²))` on `|t| < 1`, zero outside.
pub fn bump(t: f64) -> f64 {
    let t2 = t * t;
    if t2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t2)).exp()
    }
}

impl SeedCovariance {
    pub fn build(width: f64) -> Result<Self> {
        Self::build_in(1, width)
    }

    /// Seed in dimension `dim` (1 or 2).
    pub fn build_in(dim: usize, width: f64) -> Result<Self> {
        if !(width > 0.0 && width <= 0.5) {
            return Err(Error::InvalidWidth(width));
        }
        let profile = match dim {
            1 => profile_1d(width),
            2 => profile_2d(width),
            _ => {
                return Err(Error::InvalidKernel(format!(
                    "seed covariance supports d in {{1, 2}}, got {dim}"
                )))
            }
        };
        Ok(SeedCovariance {
            dim,
            width,
            // the bump transform decays faster than any power
            decay: (dim as f64 + 1.0) / 2.0 + 1.0,
            smoothness: u32::MAX,
            profile,
        })
    }

    /// Overrides the advertised decay exponent; it must exceed `(d + 1)/2`.
    pub fn with_decay(mut self, s: f64) -> Result<Self> {
        if s <= (self.dim as f64 + 1.0) / 2.0 {
            return Err(Error::InvalidKernel(format!(
                "decay exponent {s} must exceed (d+1)/2 = {}",
                (self.dim as f64 + 1.0) / 2.0
            )));
        }
        self.decay = s;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// Smoothness order (`u32::MAX` stands for C^∞).
    pub fn smoothness(&self) -> u32 {
        self.smoothness
    }

    pub fn support_radius(&self) -> f64 {
        2.0 * self.width
    }

    /// Stored samples at `r_j = j / (PROFILE_POINTS - 1)`.
    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    /// `k` at radius `r`.
    pub fn eval(&self, r: f64) -> f64 {
        let r = r.abs();
        if r >= self.support_radius() || r >= 1.0 {
            return 0.0;
        }
        let h = 1.0 / (PROFILE_POINTS - 1) as f64;
        let v = quad::cubic_interp(&self.profile, 0.0, h, r);
        v.max(0.0)
    }
}

fn profile_1d(width: f64) -> Vec<f64> {
    let h = 1.0 / (PROFILE_POINTS - 1) as f64;
    let half = (width / h).floor() as isize;
    let phi: Vec<f64> = (-half..=half).map(|j| bump(j as f64 * h / width)).collect();
    let len = phi.len() as isize;
    let mut out = vec![0.0; PROFILE_POINTS];
    for (m, slot) in out.iter_mut().enumerate() {
        let m = m as isize;
        if m >= len {
            break;
        }
        // Σ_j phi[j] phi[j + m] (even sequence, so this is the convolution)
        *slot = (0..len - m).map(|j| phi[j as usize] * phi[(j + m) as usize]).sum::<f64>();
    }
    let k0 = out[0];
    out.iter_mut().for_each(|v| *v /= k0);
    out
}

fn profile_2d(width: f64) -> Vec<f64> {
    // 2-d FFT autocorrelation on a padded grid, then read off the x-axis.
    let n = 1024usize;
    let h = 2.0 / n as f64; // the padded box [-1, 1)^2 holds the support 2w <= 1
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        let xi = wrap(i, n) as f64 * h;
        for j in 0..n {
            let yj = wrap(j, n) as f64 * h;
            buf[i * n + j] = Complex64::new(bump((xi * xi + yj * yj).sqrt() / width), 0.0);
        }
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    fft2(&mut buf, n, &*fwd);
    buf.iter_mut().for_each(|c| *c = Complex64::new(c.norm_sqr(), 0.0));
    fft2(&mut buf, n, &*inv);
    let axis: Vec<f64> = (0..=n / 2).map(|j| buf[j].re).collect();
    let k0 = axis[0];
    let axis: Vec<f64> = axis.into_iter().map(|v| v / k0).collect();
    let step = 1.0 / (PROFILE_POINTS - 1) as f64;
    (0..PROFILE_POINTS)
        .map(|j| {
            let r = j as f64 * step;
            if r >= 2.0 * width {
                0.0
            } else {
                quad::cubic_interp(&axis, 0.0, h, r).max(0.0)
            }
        })
        .collect()
}

fn wrap(i: usize, n: usize) -> isize {
    if i < n / 2 {
        i as isize
    } else {
        i as isize - n as isize
    }
}

fn fft2(buf: &mut [Complex64], n: usize, fft: &dyn rustfft::Fft<f64>) {
    for row in buf.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = buf[i * n + j];
        }
        fft.process(&mut col);
        for i in 0..n {
            buf[i * n + j] = col[i];
        }
    }
}

// ---------------------------------------------------------------------------
// star-scale

/// Scale truncation `t` of a star-scale kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Truncation {
    Finite(f64),
    Infinite,
}

impl Truncation {
    pub fn is_finite(&self) -> bool {
        matches!(self, Truncation::Finite(_))
    }

    pub fn value(&self) -> f64 {
        match self {
            Truncation::Finite(t) => *t,
            Truncation::Infinite => f64::INFINITY,
        }
    }
}

impl Serialize for Truncation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Truncation::Finite(t) => s.serialize_f64(*t),
            Truncation::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Truncation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Truncation;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a nonnegative number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Truncation, E> {
                if v.is_nan() || v < 0.0 {
                    return Err(E::custom(format!("truncation must be nonnegative, got {v}")));
                }
                Ok(if v.is_infinite() { Truncation::Infinite } else { Truncation::Finite(v) })
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Truncation, E> {
                Ok(Truncation::Finite(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Truncation, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Truncation, E> {
                match v {
                    "inf" => Ok(Truncation::Infinite),
                    _ => Err(E::custom(format!("expected \"inf\", got {v:?}"))),
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Almost star-scale invariant covariance
/// `∫_0^t k(e^u (x - y)) (1 - e^{-δu}) du`.
#[derive(Clone, Debug)]
pub struct StarScaleKernel {
    seed: Arc<SeedCovariance>,
    delta: f64,
    truncation: Truncation,
}

impl StarScaleKernel {
    pub fn new(seed: Arc<SeedCovariance>, delta: f64, truncation: Truncation) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidKernel(format!("delta must be positive, got {delta}")));
        }
        if let Truncation::Finite(t) = truncation {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidKernel(format!("truncation must be >= 0, got {t}")));
            }
        }
        Ok(StarScaleKernel { seed, delta, truncation })
    }

    pub fn seed(&self) -> &SeedCovariance {
        &self.seed
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    /// Same seed and `δ`, different truncation.
    pub fn with_truncation(&self, truncation: Truncation) -> Self {
        StarScaleKernel { seed: Arc::clone(&self.seed), delta: self.delta, truncation }
    }

    /// Covariance at separation `r`, restricted to scales `u ∈ [u0, u1]`.
    pub fn layer_cov(&self, r: f64, u0: f64, u1: f64) -> f64 {
        if r < DIAGONAL_GUARD {
            return star_scale_variance(self.delta, u1) - star_scale_variance(self.delta, u0);
        }
        let reach = self.seed.support_radius().min(1.0);
        if r >= reach {
            return 0.0;
        }
        let cutoff = (reach / r).ln();
        let hi = u1.min(cutoff);
        if hi <= u0 {
            return 0.0;
        }
        let delta = self.delta;
        let seed = &self.seed;
        quad::adaptive_simpson(
            |u| seed.eval(u.exp() * r) * (-(-delta * u).exp_m1()),
            u0,
            hi,
            SCALE_INTEGRAL_TOL,
        )
    }

    /// Covariance as a function of the separation.
    pub fn cov_at(&self, r: f64) -> Result<f64> {
        if r < DIAGONAL_GUARD {
            return match self.truncation {
                Truncation::Finite(t) => Ok(star_scale_variance(self.delta, t)),
                Truncation::Infinite => Err(Error::DiagonalSingularity { separation: r }),
            };
        }
        if r >= 1.0 {
            return Ok(0.0);
        }
        Ok(self.layer_cov(r, 0.0, self.truncation.value()))
    }
}

impl Covariance for StarScaleKernel {
    fn dim(&self) -> usize {
        self.seed.dim()
    }

    fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.cov_at(euclid(x, y))
    }

    fn is_singular(&self) -> bool {
        !self.truncation.is_finite()
    }

    fn regular_part(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if self.truncation.is_finite() {
            return Err(Error::InvalidKernel("truncated kernel is bounded".into()));
        }
        let r = euclid(x, y).max(1e-9);
        Ok(self.cov_at(r)? + r.ln())
    }

    fn id(&self) -> String {
        let t = match self.truncation {
            Truncation::Finite(t) => format!("{t}"),
            Truncation::Infinite => "inf".into(),
        };
        format!(
            "star-scale:d={}:delta={}:t={}:seed_width={}",
            self.seed.dim(),
            self.delta,
            t,
            self.seed.width()
        )
    }
}

// ---------------------------------------------------------------------------
// JSON specification

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Circle,
    Log,
    StarScale,
}

fn default_d() -> usize {
    1
}
fn default_delta() -> f64 {
    1.0
}
fn default_t() -> Truncation {
    Truncation::Infinite
}
fn default_width() -> f64 {
    0.5
}

/// Serializable kernel description:
/// `{"kind": "circle"|"log"|"star-scale", "d": int, "delta": float, "t": float|"inf", "seed_width": float}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_t")]
    pub t: Truncation,
    #[serde(default = "default_width")]
    pub seed_width: f64,
}

/// A constructed kernel of any supported family.
#[derive(Clone, Debug)]
pub enum Kernel {
    Circle(CircleKernel),
    Log(LogKernel),
    StarScale(StarScaleKernel),
}

impl KernelSpec {
    pub fn circle() -> Self {
        KernelSpec {
            kind: KernelKind::Circle,
            d: 1,
            delta: default_delta(),
            t: Truncation::Infinite,
            seed_width: default_width(),
        }
    }

    pub fn star_scale(d: usize, delta: f64, t: Truncation, seed_width: f64) -> Self {
        KernelSpec { kind: KernelKind::StarScale, d, delta, t, seed_width }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn build(&self) -> Result<Kernel> {
        match self.kind {
            KernelKind::Circle => {
                if self.d != 1 {
                    return Err(Error::InvalidKernel("circle kernel has d = 1".into()));
                }
                Ok(Kernel::Circle(CircleKernel))
            }
            KernelKind::Log => Ok(Kernel::Log(LogKernel::pure(self.d)?)),
            KernelKind::StarScale => {
                let seed = SeedCovariance::build_in(self.d, self.seed_width)?;
                Ok(Kernel::StarScale(StarScaleKernel::new(Arc::new(seed), self.delta, self.t)?))
            }
        }
    }
}

impl Covariance for Kernel {
    fn dim(&self) -> usize {
        match self {
            Kernel::Circle(k) => k.dim(),
            Kernel::Log(k) => k.dim(),
            Kernel::StarScale(k) => k.dim(),
        }
    }

    fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            Kernel::Circle(k) => k.cov(x, y),
            Kernel::Log(k) => k.cov(x, y),
            Kernel::StarScale(k) => k.cov(x, y),
        }
    }

    fn is_singular(&self) -> bool {
        match self {
            Kernel::Circle(k) => k.is_singular(),
            Kernel::Log(k) => k.is_singular(),
            Kernel::StarScale(k) => k.is_singular(),
        }
    }

    fn grid_diagonal(&self, x: &[f64], h: f64) -> f64 {
        match self {
            Kernel::Circle(k) => k.grid_diagonal(x, h),
            Kernel::Log(k) => k.grid_diagonal(x, h),
            Kernel::StarScale(k) => k.grid_diagonal(x, h),
        }
    }

    fn regular_part(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            Kernel::Circle(k) => k.regular_part(x, y),
            Kernel::Log(k) => k.regular_part(x, y),
            Kernel::StarScale(k) => k.regular_part(x, y),
        }
    }

    fn id(&self) -> String {
        match self {
            Kernel::Circle(k) => k.id(),
            Kernel::Log(k) => k.id(),
            Kernel::StarScale(k) => k.id(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(w: f64) -> Arc<SeedCovariance> {
        Arc::new(SeedCovariance::build(w).unwrap())
    }

    #[test]
    fn log_kernel_examples() {
        let k = LogKernel::pure(1).unwrap();
        assert_eq!(k.cov(&[0.25], &[1.25]).unwrap(), 0.0);
        let e = (-1.0f64).exp();
        assert!((k.cov(&[0.0], &[e]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(k.cov(&[0.3], &[0.3]), Err(Error::DiagonalSingularity { .. })));
    }

    #[test]
    fn log_kernel_rejects_asymmetric_regular_part() {
        let g = RegularPart::Custom { label: "skew".into(), g: Arc::new(|x, y| x[0] - 2.0 * y[0]) };
        assert!(matches!(LogKernel::new(1, 0.0, 1.0, g), Err(Error::InvalidKernel(_))));
        let g = RegularPart::Custom { label: "sum".into(), g: Arc::new(|x, y| (x[0] + y[0]).cos()) };
        assert!(LogKernel::new(1, 0.0, 1.0, g).is_ok());
    }

    #[test]
    fn log_kernel_grows_toward_diagonal() {
        let k = LogKernel::pure(2).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for j in 1..30 {
            let r = 0.5f64.powi(j);
            let v = k.cov(&[0.1, 0.1], &[0.1 + r, 0.1]).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn circle_kernel_examples() {
        let k = CircleKernel;
        assert!((k.eval(0.0, PI).unwrap() + 2f64.ln()).abs() < 1e-15);
        assert!(k.eval(0.0, PI / 3.0).unwrap().abs() < 1e-15);
        assert!(matches!(k.eval(1.0, 1.0), Err(Error::DiagonalSingularity { .. })));
        assert!(matches!(k.eval(1.0, 1.0 + 2.0 * PI), Err(Error::DiagonalSingularity { .. })));
    }

    #[test]
    fn circle_kernel_depends_on_difference_mod_two_pi() {
        let k = CircleKernel;
        for (a, b) in [(0.3, 1.9), (2.0, 5.5), (6.0, 0.1)] {
            let v = k.eval(a, b).unwrap();
            assert!((k.eval(a + 2.0 * PI, b).unwrap() - v).abs() < 1e-12);
            assert!((k.eval(a + 0.7, b + 0.7).unwrap() - v).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_examples() {
        let s = SeedCovariance::build(0.5).unwrap();
        assert!((s.eval(0.0) - 1.0).abs() < 1e-15);
        assert_eq!(s.eval(1.0), 0.0);
        assert_eq!(s.eval(1.7), 0.0);
        assert!(matches!(SeedCovariance::build(0.0), Err(Error::InvalidWidth(_))));
        assert!(matches!(SeedCovariance::build(0.6), Err(Error::InvalidWidth(_))));
        let s = SeedCovariance::build(0.25).unwrap();
        assert_eq!(s.eval(0.5), 0.0);
        assert!(s.eval(0.49) >= 0.0);
    }

    #[test]
    fn seed_decay_exponent_validated() {
        let s = SeedCovariance::build(0.3).unwrap();
        assert!(s.clone().with_decay(1.0).is_err());
        assert!(s.with_decay(1.01).is_ok());
    }

    #[test]
    fn seed_2d_profile_is_normalised_and_supported() {
        let s = SeedCovariance::build_in(2, 0.4).unwrap();
        assert!((s.eval(0.0) - 1.0).abs() < 1e-12);
        assert_eq!(s.eval(0.81), 0.0);
        let mut prev = 1.0;
        for j in 1..80 {
            let v = s.eval(j as f64 * 0.01);
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn star_scale_examples() {
        let k = StarScaleKernel::new(seed(0.5), 1.0, Truncation::Finite(1.0)).unwrap();
        assert!((k.cov(&[0.2], &[0.2]).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(k.cov(&[0.0], &[1.0]).unwrap(), 0.0);
        assert_eq!(k.cov(&[0.0], &[1.5]).unwrap(), 0.0);
        let inf = k.with_truncation(Truncation::Infinite);
        assert!(matches!(inf.cov(&[0.2], &[0.2]), Err(Error::DiagonalSingularity { .. })));
        assert!(inf.cov(&[0.2], &[0.25]).unwrap().is_finite());
    }

    #[test]
    fn star_scale_variance_identity() {
        let s = seed(0.5);
        for i in 0..20 {
            let delta = 0.2 + 0.3 * i as f64;
            let t = 0.1 + 0.45 * i as f64;
            let k = StarScaleKernel::new(Arc::clone(&s), delta, Truncation::Finite(t)).unwrap();
            let expected = t - (1.0 - (-delta * t).exp()) / delta;
            assert!((k.cov(&[0.0], &[0.0]).unwrap() - expected).abs() < 1e-10);
            // the layer integral at tiny separation agrees with the identity
            let near = k.layer_cov(1e-9, 0.0, t);
            assert!((near - expected).abs() < 1e-8, "delta={delta} t={t} near={near}");
        }
    }

    #[test]
    fn kernel_spec_json() {
        let spec = KernelSpec::from_json(
            r#"{"kind":"star-scale","d":1,"delta":0.5,"t":"inf","seed_width":0.25}"#,
        )
        .unwrap();
        assert_eq!(spec.kind, KernelKind::StarScale);
        assert_eq!(spec.t, Truncation::Infinite);
        let spec2 = KernelSpec::from_json(&spec.to_json().unwrap()).unwrap();
        assert_eq!(spec, spec2);
        let finite = KernelSpec::from_json(r#"{"kind":"star-scale","t":2}"#).unwrap();
        assert_eq!(finite.t, Truncation::Finite(2.0));
        assert!(KernelSpec::from_json(r#"{"kind":"star-scale","t":"forever"}"#).is_err());
        assert!(KernelSpec::from_json(r#"{"kind":"cone"}"#).is_err());
        let c = KernelSpec::from_json(r#"{"kind":"circle"}"#).unwrap().build().unwrap();
        assert_eq!(c.id(), "circle");
    }
}
