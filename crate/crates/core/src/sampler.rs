//! Samplers for truncated log-correlated fields.
//!
//! * circle GFF via its Fourier series (`A_k sin(kθ) + B_k cos(kθ)) / √k`,
//!   synthesised with an inverse FFT;
//! * arbitrary kernels via a discretised Karhunen-Loeve basis;
//! * star-scale fields as a sum of independent scale layers, each sampled
//!   from its own basis.
//!
//! Every sample is a pure function of `(configuration, seed, stream)`.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Domain, Grid};
use crate::kernels::{star_scale_variance, Covariance, StarScaleKernel, Truncation};
use crate::rng::{self, StreamRng};

/// Ratio between grid size and mode count required by the circle sampler.
pub const ANTI_ALIASING: usize = 4;
/// Eigenvalues below this fraction of the largest are dropped.
pub const RETENTION_TOL: f64 = 1e-12;
/// Negative eigenvalues beyond this fraction of the largest are rejected.
pub const NEGATIVITY_TOL: f64 = 1e-6;

/// How a field was truncated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldTruncation {
    /// Circle Fourier series with `modes` frequencies.
    Modes { modes: usize },
    /// Star-scale field truncated at scale `t`.
    Scale { t: f64 },
    /// Karhunen-Loeve expansion with `modes` retained eigenpairs.
    Basis { modes: usize },
}

impl fmt::Display for FieldTruncation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldTruncation::Modes { modes } => write!(f, "N={modes}"),
            FieldTruncation::Scale { t } => write!(f, "t={t}"),
            FieldTruncation::Basis { modes } => write!(f, "KL m={modes}"),
        }
    }
}

/// One realisation of a truncated field on a grid.
#[derive(Clone, Debug)]
pub struct FieldSample {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
    /// `E[Γ(x_i)^2]`, shared by every sample of the same configuration.
    pub variance: Arc<[f64]>,
    pub truncation: FieldTruncation,
    pub stream: u64,
}

impl FieldSample {
    /// Writes `x,gamma,variance` rows (`x0,x1,...` on 2-d grids).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.grid.dim();
        if d == 1 {
            writeln!(out, "x,gamma,variance")?;
        } else {
            let cols: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
            writeln!(out, "{},gamma,variance", cols.join(","))?;
        }
        for (i, p) in self.grid.points().enumerate() {
            let coords: Vec<String> = p.iter().map(|c| format!("{c:.17e}")).collect();
            writeln!(
                out,
                "{},{:.17e},{:.17e}",
                coords.join(","),
                self.values[i],
                self.variance[i]
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(path)?))
    }
}

fn harmonic(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

// ---------------------------------------------------------------------------
// circle

/// Circle GFF truncated to `modes` frequencies on an `n`-point grid.
#[derive(Clone)]
pub struct CircleSampler {
    grid: Arc<Grid>,
    modes: usize,
    fft: Arc<dyn Fft<f64>>,
    variance: Arc<[f64]>,
}

impl fmt::Debug for CircleSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CircleSampler")
            .field("modes", &self.modes)
            .field("grid", &self.grid.len())
            .finish()
    }
}

impl CircleSampler {
    pub fn new(modes: usize, n: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidConfig("circle sampler needs at least one mode".into()));
        }
        let required = ANTI_ALIASING * modes;
        if n < required {
            return Err(Error::AliasedGrid { modes, grid: n, required });
        }
        let grid = Arc::new(Grid::circle(n)?);
        let fft = FftPlanner::new().plan_fft_inverse(n);
        let variance: Arc<[f64]> = vec![harmonic(modes); n].into();
        Ok(CircleSampler { grid, modes, fft, variance })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn variance(&self) -> &Arc<[f64]> {
        &self.variance
    }

    /// Scratch buffer sized for [`CircleSampler::fill`].
    pub fn scratch(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.grid.len() + self.fft.get_inplace_scratch_len()]
    }

    /// Writes a draw into `out`, consuming `A_1, B_1, A_2, B_2, ...` from `rng`.
    pub fn fill(&self, rng: &mut StreamRng, scratch: &mut [Complex64], out: &mut [f64]) {
        let n = self.grid.len();
        let (buf, fft_scratch) = scratch.split_at_mut(n);
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (k, slot) in buf.iter_mut().enumerate().skip(1).take(self.modes) {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            // Re[(b - i a) e^{ikθ}] = a sin kθ + b cos kθ
            *slot = Complex64::new(b, -a) / (k as f64).sqrt();
        }
        self.synthesize(buf, fft_scratch, out);
    }

    fn synthesize(&self, buf: &mut [Complex64], fft_scratch: &mut [Complex64], out: &mut [f64]) {
        self.fft.process_with_scratch(buf, fft_scratch);
        for (o, c) in out.iter_mut().zip(buf.iter()) {
            *o = c.re;
        }
    }

    pub fn sample(&self, seed: u64, stream: u64) -> FieldSample {
        let mut rng = rng::stream(seed, stream);
        let mut scratch = self.scratch();
        let mut values = vec![0.0; self.grid.len()];
        self.fill(&mut rng, &mut scratch, &mut values);
        FieldSample {
            grid: Arc::clone(&self.grid),
            values,
            variance: Arc::clone(&self.variance),
            truncation: FieldTruncation::Modes { modes: self.modes },
            stream,
        }
    }

    /// Field with prescribed coefficients `A_k = a[k-1]`, `B_k = b[k-1]`.
    pub fn from_coefficients(&self, a: &[f64], b: &[f64]) -> Result<FieldSample> {
        if a.len() != self.modes || b.len() != self.modes {
            return Err(Error::InvalidConfig(format!(
                "expected {} coefficients per family, got {} and {}",
                self.modes,
                a.len(),
                b.len()
            )));
        }
        let n = self.grid.len();
        let mut scratch = self.scratch();
        let (buf, fft_scratch) = scratch.split_at_mut(n);
        for k in 1..=self.modes {
            buf[k] = Complex64::new(b[k - 1], -a[k - 1]) / (k as f64).sqrt();
        }
        let mut values = vec![0.0; n];
        self.synthesize(buf, fft_scratch, &mut values);
        Ok(FieldSample {
            grid: Arc::clone(&self.grid),
            values,
            variance: Arc::clone(&self.variance),
            truncation: FieldTruncation::Modes { modes: self.modes },
            stream: u64::MAX,
        })
    }
}

/// One circle GFF draw with `modes` frequencies on `n` points.
pub fn sample_circle_field(modes: usize, n: usize, seed: u64, stream: u64) -> Result<FieldSample> {
    Ok(CircleSampler::new(modes, n)?.sample(seed, stream))
}

// ---------------------------------------------------------------------------
// Karhunen-Loeve

/// Eigenpairs of a covariance operator discretised with quadrature weights.
#[derive(Clone, Debug)]
pub struct KLBasis {
    grid: Arc<Grid>,
    weights: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// `modes x n`, row `k` holds `f_k(x_i)`.
    eigenvectors: Vec<Vec<f64>>,
    variance: Arc<[f64]>,
    kernel_id: String,
    hash: u64,
}

/// Stable 64-bit key of a kernel/grid/mode-cap combination.
pub fn basis_hash(kernel_id: &str, grid: &Grid, mode_cap: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(kernel_id.as_bytes());
    h.update(serde_json::to_string(&grid.domain()).unwrap_or_default().as_bytes());
    h.update(mode_cap.to_le_bytes());
    let digest = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

impl KLBasis {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvector(&self, k: usize) -> &[f64] {
        &self.eigenvectors[k]
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn variance(&self) -> &Arc<[f64]> {
        &self.variance
    }

    pub fn kernel_id(&self) -> &str {
        &self.kernel_id
    }

    pub fn hash(&self) -> u64 {
        self.hash
    }

    /// `Σ_k λ_k f_k(x_i) f_k(x_j)`.
    pub fn reconstruct(&self, i: usize, j: usize) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.eigenvectors)
            .map(|(l, f)| l * f[i] * f[j])
            .sum()
    }

    /// Field values for prescribed coefficients `A_k`.
    pub fn field_from_coefficients(&self, coeffs: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for ((a, l), f) in coeffs.iter().zip(&self.eigenvalues).zip(&self.eigenvectors) {
            let c = a * l.sqrt();
            if c == 0.0 {
                continue;
            }
            for (o, fi) in out.iter_mut().zip(f) {
                *o += c * fi;
            }
        }
    }

    fn draw(&self, rng: &mut StreamRng, coeffs: &mut [f64]) {
        for c in coeffs.iter_mut() {
            *c = rng.sample(StandardNormal);
        }
    }

    /// Writes a draw into `out` using `coeffs` as scratch (length `modes()`).
    pub fn fill(&self, rng: &mut StreamRng, coeffs: &mut [f64], out: &mut [f64]) {
        self.draw(rng, coeffs);
        self.field_from_coefficients(coeffs, out);
    }

    fn sample_from(&self, stream: u64, coeffs: Vec<f64>) -> FieldSample {
        let mut values = vec![0.0; self.grid.len()];
        self.field_from_coefficients(&coeffs, &mut values);
        FieldSample {
            grid: Arc::clone(&self.grid),
            values,
            variance: Arc::clone(&self.variance),
            truncation: FieldTruncation::Basis { modes: self.modes() },
            stream,
        }
    }

    /// Writes the basis in the binary cache format (see [`KLBasis::load`]).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(self.grid.len() as u64).to_le_bytes())?;
        w.write_all(&(self.modes() as u64).to_le_bytes())?;
        w.write_all(&self.hash.to_le_bytes())?;
        for v in self
            .weights
            .iter()
            .chain(&self.eigenvalues)
            .chain(self.eigenvectors.iter().flatten())
        {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a cache file written by [`KLBasis::save`].
    ///
    /// Layout, all little-endian: 8-byte magic `IMCHKL01`, `n: u64`,
    /// `m: u64`, `kernel hash: u64`, then `n` weights, `m` eigenvalues and
    /// `m * n` eigenvector entries (mode-major) as `f64`.
    pub fn load(path: &Path, grid: Arc<Grid>, kernel_id: &str, mode_cap: usize) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format("not a KL basis cache file".into()));
        }
        let n = read_u64(&mut r)? as usize;
        let m = read_u64(&mut r)? as usize;
        let hash = read_u64(&mut r)?;
        if n != grid.len() {
            return Err(Error::Format(format!("cache has {n} points, grid has {}", grid.len())));
        }
        let expected = basis_hash(kernel_id, &grid, mode_cap);
        if hash != expected {
            return Err(Error::Format(format!(
                "cache hash {hash:016x} does not match kernel hash {expected:016x}"
            )));
        }
        let weights = read_f64s(&mut r, n)?;
        let eigenvalues = read_f64s(&mut r, m)?;
        let mut eigenvectors = Vec::with_capacity(m);
        for _ in 0..m {
            eigenvectors.push(read_f64s(&mut r, n)?);
        }
        let variance = variance_profile(&eigenvalues, &eigenvectors, n);
        Ok(KLBasis {
            grid,
            weights,
            eigenvalues,
            eigenvectors,
            variance,
            kernel_id: kernel_id.to_string(),
            hash,
        })
    }
}

const CACHE_MAGIC: &[u8; 8] = b"IMCHKL01";

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut b = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

fn variance_profile(eigenvalues: &[f64], eigenvectors: &[Vec<f64>], n: usize) -> Arc<[f64]> {
    (0..n)
        .map(|i| eigenvalues.iter().zip(eigenvectors).map(|(l, f)| l * f[i] * f[i]).sum())
        .collect::<Vec<f64>>()
        .into()
}

/// Covariance matrix of `kernel` on the grid, with the diagonal supplied by
/// [`Covariance::grid_diagonal`].
pub fn covariance_matrix<K: Covariance + ?Sized>(kernel: &K, grid: &Grid) -> Result<DMatrix<f64>> {
    let n = grid.len();
    let h = grid.min_spacing();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = grid.point(i);
            (0..n)
                .map(|j| {
                    if j < i {
                        Ok(0.0)
                    } else if i == j {
                        Ok(kernel.grid_diagonal(xi, h))
                    } else {
                        kernel.cov(xi, grid.point(j))
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            c[(i, j)] = rows[i][j];
            c[(j, i)] = rows[i][j];
        }
    }
    Ok(c)
}

/// Karhunen-Loeve decomposition of `kernel` on `grid`, keeping at most
/// `mode_cap` eigenpairs.
///
/// The symmetric matrix `W^{1/2} C W^{1/2}` (trapezoid weights `W`) is
/// diagonalised; eigenvectors are mapped back with `W^{-1/2}` so that they are
/// orthonormal in the weighted inner product.
pub fn kl_decompose<K: Covariance + ?Sized>(
    kernel: &K,
    grid: Arc<Grid>,
    mode_cap: usize,
) -> Result<KLBasis> {
    let n = grid.len();
    if kernel.dim() != grid.dim() {
        return Err(Error::InvalidConfig(format!(
            "kernel dimension {} does not match grid dimension {}",
            kernel.dim(),
            grid.dim()
        )));
    }
    let weights = grid.trapezoid_weights();
    if weights.iter().any(|w| *w <= 0.0) {
        return Err(Error::InvalidConfig("grid has nonpositive quadrature weights".into()));
    }
    let mut a = covariance_matrix(kernel, &grid)?;
    let sq: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] *= sq[i] * sq[j];
        }
    }
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let max = eig.eigenvalues[order[0]];
    let min = eig.eigenvalues[order[n - 1]];
    if !(max > 0.0) || min < -NEGATIVITY_TOL * max {
        return Err(Error::NotPositive { min, max });
    }
    let mut eigenvalues = Vec::new();
    let mut eigenvectors = Vec::new();
    for &k in order.iter().take(mode_cap) {
        let l = eig.eigenvalues[k];
        if l <= RETENTION_TOL * max {
            break;
        }
        let col = eig.eigenvectors.column(k);
        let mut f: Vec<f64> = (0..n).map(|i| col[i] / sq[i]).collect();
        // fix the sign so that the largest-magnitude entry is positive
        let pivot = f.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            f.iter_mut().for_each(|v| *v = -*v);
        }
        eigenvalues.push(l);
        eigenvectors.push(f);
    }
    let variance = variance_profile(&eigenvalues, &eigenvectors, n);
    let kernel_id = kernel.id();
    let hash = basis_hash(&kernel_id, &grid, mode_cap);
    Ok(KLBasis { grid, weights, eigenvalues, eigenvectors, variance, kernel_id, hash })
}

/// [`kl_decompose`] through an on-disk cache directory; files are named by
/// the basis hash.
pub fn kl_decompose_cached<K: Covariance + ?Sized>(
    kernel: &K,
    grid: Arc<Grid>,
    mode_cap: usize,
    cache_dir: &Path,
) -> Result<KLBasis> {
    let hash = basis_hash(&kernel.id(), &grid, mode_cap);
    let path: PathBuf = cache_dir.join(format!("kl-{hash:016x}.bin"));
    if path.exists() {
        if let Ok(b) = KLBasis::load(&path, Arc::clone(&grid), &kernel.id(), mode_cap) {
            return Ok(b);
        }
    }
    let basis = kl_decompose(kernel, grid, mode_cap)?;
    std::fs::create_dir_all(cache_dir)?;
    basis.save(&path)?;
    Ok(basis)
}

/// `Γ = Σ_k A_k √λ_k f_k` with fresh standard Gaussians.
pub fn sample_kl(basis: &KLBasis, seed: u64, stream: u64) -> FieldSample {
    let mut rng = rng::stream(seed, stream);
    let mut coeffs = vec![0.0; basis.modes()];
    basis.draw(&mut rng, &mut coeffs);
    basis.sample_from(stream, coeffs)
}

/// KL field with prescribed coefficients.
pub fn sample_kl_with_coefficients(basis: &KLBasis, coeffs: &[f64]) -> Result<FieldSample> {
    if coeffs.len() != basis.modes() {
        return Err(Error::InvalidConfig(format!(
            "expected {} coefficients, got {}",
            basis.modes(),
            coeffs.len()
        )));
    }
    Ok(basis.sample_from(u64::MAX, coeffs.to_vec()))
}

/// Deterministic additive shift of selected KL coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientShift {
    /// Zero-based mode indices.
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub basis_id: u64,
}

impl CoefficientShift {
    pub fn new(basis: &KLBasis, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::InvalidConfig("shift indices and values differ in length".into()));
        }
        Ok(CoefficientShift { indices, values, basis_id: basis.hash() })
    }
}

/// [`sample_kl`] with `A_k` replaced by `A_k + shift_k` on the shifted modes.
/// The variance profile is that of the unshifted field.
pub fn sample_shifted(
    basis: &KLBasis,
    shift: &CoefficientShift,
    seed: u64,
    stream: u64,
) -> Result<FieldSample> {
    if shift.basis_id != basis.hash() {
        return Err(Error::InvalidConfig("shift was built for a different basis".into()));
    }
    if let Some(&index) = shift.indices.iter().find(|&&i| i >= basis.modes()) {
        return Err(Error::IndexOutOfRange { index, size: basis.modes() });
    }
    let mut rng = rng::stream(seed, stream);
    let mut coeffs = vec![0.0; basis.modes()];
    basis.draw(&mut rng, &mut coeffs);
    for (&i, &v) in shift.indices.iter().zip(&shift.values) {
        coeffs[i] += v;
    }
    Ok(basis.sample_from(stream, coeffs))
}

// ---------------------------------------------------------------------------
// star-scale layers

/// Scale band `[u0, u1]` of a star-scale kernel, itself a bounded covariance.
#[derive(Clone, Debug)]
pub struct StarScaleLayer {
    kernel: StarScaleKernel,
    u0: f64,
    u1: f64,
}

impl Covariance for StarScaleLayer {
    fn dim(&self) -> usize {
        self.kernel.dim()
    }

    fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let r = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        Ok(self.kernel.layer_cov(r, self.u0, self.u1))
    }

    fn is_singular(&self) -> bool {
        false
    }

    fn id(&self) -> String {
        format!("{}:layer=[{},{}]", self.kernel.id(), self.u0, self.u1)
    }
}

/// Star-scale field truncated at finite `t`, sampled as independent layers
/// of unit scale width. Prefixes of the layer sum are coarser truncations of
/// the same field.
#[derive(Clone, Debug)]
pub struct StarScaleSampler {
    grid: Arc<Grid>,
    t: f64,
    layers: Vec<KLBasis>,
    variance: Arc<[f64]>,
}

impl StarScaleSampler {
    pub fn new(kernel: &StarScaleKernel, grid: Arc<Grid>) -> Result<Self> {
        let t = match kernel.truncation() {
            Truncation::Finite(t) => t,
            Truncation::Infinite => {
                return Err(Error::InvalidConfig(
                    "layer sampling needs a finite truncation".into(),
                ))
            }
        };
        let count = (t.ceil() as usize).max(1);
        let width = t / count as f64;
        let layers = (0..count)
            .map(|j| {
                let layer = StarScaleLayer {
                    kernel: kernel.clone(),
                    u0: j as f64 * width,
                    u1: (j + 1) as f64 * width,
                };
                kl_decompose(&layer, Arc::clone(&grid), grid.len())
            })
            .collect::<Result<Vec<_>>>()?;
        let variance: Arc<[f64]> = vec![star_scale_variance(kernel.delta(), t); grid.len()].into();
        Ok(StarScaleSampler { grid, t, layers, variance })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn layers(&self) -> &[KLBasis] {
        &self.layers
    }

    /// Analytic variance `t - (1 - e^{-δt})/δ` at every point.
    pub fn variance(&self) -> &Arc<[f64]> {
        &self.variance
    }

    pub fn coefficient_count(&self) -> usize {
        self.layers.iter().map(KLBasis::modes).sum()
    }

    pub fn fill(&self, rng: &mut StreamRng, coeffs: &mut [f64], layer_buf: &mut [f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for layer in &self.layers {
            let m = layer.modes();
            layer.fill(rng, &mut coeffs[..m], layer_buf);
            for (o, v) in out.iter_mut().zip(layer_buf.iter()) {
                *o += v;
            }
        }
    }

    pub fn sample(&self, seed: u64, stream: u64) -> FieldSample {
        let mut rng = rng::stream(seed, stream);
        let n = self.grid.len();
        let mut coeffs = vec![0.0; self.layers.iter().map(KLBasis::modes).max().unwrap_or(0)];
        let mut buf = vec![0.0; n];
        let mut values = vec![0.0; n];
        self.fill(&mut rng, &mut coeffs, &mut buf, &mut values);
        FieldSample {
            grid: Arc::clone(&self.grid),
            values,
            variance: Arc::clone(&self.variance),
            truncation: FieldTruncation::Scale { t: self.t },
            stream,
        }
    }
}

// ---------------------------------------------------------------------------
// unified sampler

/// Any of the supported field samplers.
#[derive(Clone, Debug)]
pub enum FieldSampler {
    Circle(CircleSampler),
    Kl(KLBasis),
    StarScale(StarScaleSampler),
}

/// Reusable per-worker buffers for [`FieldSampler::fill`].
pub struct SamplerScratch {
    complex: Vec<Complex64>,
    coeffs: Vec<f64>,
    layer: Vec<f64>,
}

impl FieldSampler {
    pub fn grid(&self) -> &Arc<Grid> {
        match self {
            FieldSampler::Circle(s) => s.grid(),
            FieldSampler::Kl(b) => b.grid(),
            FieldSampler::StarScale(s) => s.grid(),
        }
    }

    pub fn variance(&self) -> &Arc<[f64]> {
        match self {
            FieldSampler::Circle(s) => s.variance(),
            FieldSampler::Kl(b) => b.variance(),
            FieldSampler::StarScale(s) => s.variance(),
        }
    }

    pub fn truncation(&self) -> FieldTruncation {
        match self {
            FieldSampler::Circle(s) => FieldTruncation::Modes { modes: s.modes() },
            FieldSampler::Kl(b) => FieldTruncation::Basis { modes: b.modes() },
            FieldSampler::StarScale(s) => FieldTruncation::Scale { t: s.t },
        }
    }

    pub fn scratch(&self) -> SamplerScratch {
        let n = self.grid().len();
        match self {
            FieldSampler::Circle(s) => {
                SamplerScratch { complex: s.scratch(), coeffs: Vec::new(), layer: Vec::new() }
            }
            FieldSampler::Kl(b) => {
                SamplerScratch { complex: Vec::new(), coeffs: vec![0.0; b.modes()], layer: Vec::new() }
            }
            FieldSampler::StarScale(s) => SamplerScratch {
                complex: Vec::new(),
                coeffs: vec![0.0; s.layers.iter().map(KLBasis::modes).max().unwrap_or(0)],
                layer: vec![0.0; n],
            },
        }
    }

    /// Draw for `(seed, stream)` written into `out`.
    pub fn fill(&self, seed: u64, stream: u64, scratch: &mut SamplerScratch, out: &mut [f64]) {
        let mut rng = rng::stream(seed, stream);
        match self {
            FieldSampler::Circle(s) => s.fill(&mut rng, &mut scratch.complex, out),
            FieldSampler::Kl(b) => b.fill(&mut rng, &mut scratch.coeffs, out),
            FieldSampler::StarScale(s) => {
                s.fill(&mut rng, &mut scratch.coeffs, &mut scratch.layer, out)
            }
        }
    }

    pub fn sample(&self, seed: u64, stream: u64) -> FieldSample {
        match self {
            FieldSampler::Circle(s) => s.sample(seed, stream),
            FieldSampler::Kl(b) => sample_kl(b, seed, stream),
            FieldSampler::StarScale(s) => s.sample(seed, stream),
        }
    }
}

/// Grid used for non-periodic fields in `d = 1`: `[0, 1]` with `n` points.
pub fn unit_interval(n: usize) -> Result<Arc<Grid>> {
    Ok(Arc::new(Grid::from_domain(Domain::Interval { lo: 0.0, hi: 1.0, n })?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{CircleKernel, SeedCovariance, WhiteNoiseKernel};
    use std::f64::consts::PI;

    #[test]
    fn circle_variance_is_harmonic_number() {
        let s = sample_circle_field(3, 12, 1, 0).unwrap();
        for v in s.variance.iter() {
            assert!((v - 11.0 / 6.0).abs() < 1e-12);
        }
        assert!(matches!(sample_circle_field(3, 11, 1, 0), Err(Error::AliasedGrid { .. })));
    }

    #[test]
    fn forced_coefficients_give_sine() {
        let s = CircleSampler::new(1, 16).unwrap();
        let f = s.from_coefficients(&[1.0], &[0.0]).unwrap();
        for (p, v) in f.grid.points().zip(&f.values) {
            assert!((v - p[0].sin()).abs() < 1e-14);
        }
        let f = s.from_coefficients(&[0.0], &[2.0]).unwrap();
        for (p, v) in f.grid.points().zip(&f.values) {
            assert!((v - 2.0 * p[0].cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn fft_synthesis_matches_direct_sum() {
        let s = CircleSampler::new(5, 24).unwrap();
        let a = [0.3, -1.0, 0.5, 2.0, -0.7];
        let b = [1.1, 0.2, -0.4, 0.0, 0.9];
        let f = s.from_coefficients(&a, &b).unwrap();
        for (p, v) in f.grid.points().zip(&f.values) {
            let th = p[0];
            let direct: f64 = (1..=5)
                .map(|k| {
                    let kf = k as f64;
                    (a[k - 1] * (kf * th).sin() + b[k - 1] * (kf * th).cos()) / kf.sqrt()
                })
                .sum();
            assert!((v - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn same_stream_same_sample() {
        let s = CircleSampler::new(8, 32).unwrap();
        assert_eq!(s.sample(3, 9).values, s.sample(3, 9).values);
        assert_ne!(s.sample(3, 9).values, s.sample(3, 10).values);
    }

    #[test]
    fn white_noise_basis_has_flat_spectrum() {
        let grid = Arc::new(Grid::circle(32).unwrap());
        let b = kl_decompose(&WhiteNoiseKernel { dim: 1 }, grid, 32).unwrap();
        let l0 = b.eigenvalues()[0];
        assert_eq!(b.modes(), 32);
        for l in b.eigenvalues() {
            assert!((l - l0).abs() < 1e-12 * l0);
        }
    }

    #[test]
    fn basis_is_weighted_orthonormal() {
        let seed = Arc::new(SeedCovariance::build(0.5).unwrap());
        let k = StarScaleKernel::new(seed, 1.0, Truncation::Finite(2.0)).unwrap();
        let b = kl_decompose(&k, unit_interval(65).unwrap(), 65).unwrap();
        for w in b.eigenvalues().windows(2) {
            assert!(w[0] >= w[1]);
        }
        for j in 0..b.modes() {
            for k in 0..b.modes() {
                let ip: f64 = (0..65)
                    .map(|i| b.weights()[i] * b.eigenvector(j)[i] * b.eigenvector(k)[i])
                    .sum();
                let target = if j == k { 1.0 } else { 0.0 };
                assert!((ip - target).abs() < 1e-8, "j={j} k={k} ip={ip}");
            }
        }
    }

    #[test]
    fn circle_kernel_top_eigenvalue_is_pi_twice() {
        let grid = Arc::new(Grid::circle(512).unwrap());
        let b = kl_decompose(&CircleKernel, grid, 4).unwrap();
        let l = b.eigenvalues();
        assert!((l[0] - PI).abs() < 0.05, "top eigenvalue {}", l[0]);
        assert!((l[0] - l[1]).abs() < 1e-9 * l[0]);
        assert!((l[2] - PI / 2.0).abs() < 0.05);
    }

    #[test]
    fn zero_coefficients_give_zero_field() {
        let grid = Arc::new(Grid::circle(16).unwrap());
        let b = kl_decompose(&CircleKernel, grid, 6).unwrap();
        let f = sample_kl_with_coefficients(&b, &vec![0.0; b.modes()]).unwrap();
        assert!(f.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shift_errors() {
        let grid = Arc::new(Grid::circle(16).unwrap());
        let b = kl_decompose(&CircleKernel, grid, 6).unwrap();
        let shift = CoefficientShift::new(&b, vec![6], vec![1.0]).unwrap();
        assert!(matches!(sample_shifted(&b, &shift, 0, 0), Err(Error::IndexOutOfRange { .. })));
        let zero = CoefficientShift::new(&b, vec![0], vec![0.0]).unwrap();
        assert_eq!(sample_shifted(&b, &zero, 5, 2).unwrap().values, sample_kl(&b, 5, 2).values);
    }

    #[test]
    fn cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Arc::new(Grid::circle(24).unwrap());
        let b = kl_decompose_cached(&CircleKernel, Arc::clone(&grid), 10, dir.path()).unwrap();
        let c = kl_decompose_cached(&CircleKernel, grid, 10, dir.path()).unwrap();
        assert_eq!(b.eigenvalues(), c.eigenvalues());
        assert_eq!(b.eigenvector(3), c.eigenvector(3));
        let path = dir.path().join(format!("kl-{:016x}.bin", b.hash()));
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"IMCHKL01");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 24);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), b.modes() as u64);
        assert_eq!(bytes.len(), 32 + 8 * (24 + b.modes() + 24 * b.modes()));
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let s = sample_circle_field(2, 8, 0, 0).unwrap();
        let mut out = Vec::new();
        s.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,gamma,variance");
        assert_eq!(lines.len(), 9);
    }
}
