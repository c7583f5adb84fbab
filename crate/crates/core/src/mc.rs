//! Monte Carlo over chaos ensembles: sampling, 2-d histograms, small-ball
//! probabilities, moment estimates and Sobolev-ball probabilities.
//!
//! Sample `i` always uses RNG stream `i`; work is split into contiguous index
//! blocks whose results are concatenated in block order, and every reduction
//! runs sequentially afterwards with a fixed pairwise association. Results are
//! therefore a pure function of `(config, seed)` for any worker count.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chaos::{chaos_field, default_window, sobolev_neg_norm, ChaosFunctional, SobolevSpec, TestFunction};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::{LogKernel, SeedCovariance, StarScaleKernel, Truncation};
use crate::quad::{pairwise_sum, pairwise_sum_by};
use crate::sampler::{
    kl_decompose, unit_interval, CircleSampler, FieldSample, FieldSampler, FieldTruncation, StarScaleSampler,
};

/// Samples per work block.
pub const BLOCK: usize = 4096;
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    /// Circle GFF truncated at `modes` Fourier modes, on `grid` angles.
    Circle,
    /// Star-scale field on `[0, 1]` truncated at scale `t`.
    StarScale,
    /// Karhunen-Loeve expansion of `log 1/|x - y|` on `[0, 1]` with at most
    /// `modes` eigenpairs.
    KlGrid,
}

impl FieldKind {
    pub fn dim(&self) -> usize {
        1
    }
}

impl std::str::FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(FieldKind::Circle),
            "star-scale" => Ok(FieldKind::StarScale),
            "kl-grid" => Ok(FieldKind::KlGrid),
            _ => Err(Error::InvalidConfig(format!(
                "unknown field kind {s:?}; expected circle, star-scale or kl-grid"
            ))),
        }
    }
}

/// Everything that determines an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub field: FieldKind,
    pub beta: f64,
    pub modes: usize,
    pub grid: usize,
    pub samples: usize,
    pub seed: u64,
    pub workers: usize,
    /// Built-in test function name or CSV path.
    pub f: String,
    /// Star-scale truncation scale.
    pub t: f64,
    /// Star-scale decay rate.
    pub delta: f64,
    /// Star-scale seed bump width.
    pub seed_width: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            field: FieldKind::Circle,
            beta: 0.5,
            modes: 64,
            grid: 256,
            samples: 1000,
            seed: 0,
            workers: 1,
            f: "one".into(),
            t: 4.0,
            delta: 1.0,
            seed_width: 0.5,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.field.dim() as f64;
        if !(self.beta >= 0.0 && self.beta < d.sqrt()) {
            return Err(Error::InvalidConfig(format!(
                "beta = {} outside [0, sqrt(d)) = [0, {})",
                self.beta,
                d.sqrt()
            )));
        }
        if self.samples == 0 {
            return Err(Error::InvalidConfig("samples must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        if self.modes == 0 {
            return Err(Error::InvalidConfig("modes must be at least 1".into()));
        }
        if self.field == FieldKind::Circle && self.grid < 4 * self.modes {
            return Err(Error::AliasedGrid { modes: self.modes, grid: self.grid, required: 4 * self.modes });
        }
        if self.field == FieldKind::StarScale && !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::InvalidConfig(format!("star-scale truncation t = {} must be finite and > 0", self.t)));
        }
        Ok(())
    }

    /// Builds the sampler, test function and integrand.
    pub fn prepare(&self) -> Result<Prepared> {
        self.validate()?;
        let sampler = match self.field {
            FieldKind::Circle => FieldSampler::Circle(CircleSampler::new(self.modes, self.grid)?),
            FieldKind::KlGrid => {
                let grid = unit_interval(self.grid)?;
                FieldSampler::Kl(kl_decompose(&LogKernel::pure(1)?, grid, self.modes)?)
            }
            FieldKind::StarScale => {
                let seed = Arc::new(SeedCovariance::build(self.seed_width)?);
                let kernel = StarScaleKernel::new(seed, self.delta, Truncation::Finite(self.t))?;
                FieldSampler::StarScale(StarScaleSampler::new(&kernel, unit_interval(self.grid)?)?)
            }
        };
        let f = load_test_function(&self.f, Arc::clone(sampler.grid()))?;
        let functional = ChaosFunctional::new(&f, sampler.variance(), self.beta)?;
        Ok(Prepared { sampler, f, functional })
    }
}

/// Built-in name, or a CSV file of grid values.
pub fn load_test_function(spec: &str, grid: Arc<Grid>) -> Result<TestFunction> {
    if crate::chaos::BUILTIN_FUNCTIONS.contains(&spec) {
        TestFunction::builtin(spec, grid)
    } else {
        let path = Path::new(spec);
        if !path.exists() {
            return Err(Error::InvalidConfig(format!(
                "test function {spec:?} is neither a built-in ({:?}) nor an existing file",
                crate::chaos::BUILTIN_FUNCTIONS
            )));
        }
        TestFunction::from_csv(path, grid)
    }
}

/// A configuration made ready to sample.
pub struct Prepared {
    pub sampler: FieldSampler,
    pub f: TestFunction,
    pub functional: ChaosFunctional,
}

fn blocks(total: usize) -> Vec<Range<usize>> {
    (0..total).step_by(BLOCK).map(|s| s..(s + BLOCK).min(total)).collect()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
}

/// Applies `per_sample(stream, field values)` to every sample index in
/// parallel and returns the results in index order.
pub fn map_samples<T, F>(sampler: &FieldSampler, seed: u64, samples: usize, workers: usize, per_sample: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &[f64]) -> T + Sync,
{
    let n = sampler.grid().len();
    let parts: Vec<Vec<T>> = pool(workers)?.install(|| {
        blocks(samples)
            .into_par_iter()
            .map(|range| {
                let mut scratch = sampler.scratch();
                let mut buf = vec![0.0; n];
                range
                    .map(|i| {
                        sampler.fill(seed, i as u64, &mut scratch, &mut buf);
                        per_sample(i as u64, &buf)
                    })
                    .collect()
            })
            .collect()
    });
    Ok(parts.into_iter().flatten().collect())
}

/// `M` samples of `μ_N(f)` with the metadata needed to reproduce them.
#[derive(Clone, Debug)]
pub struct ChaosEnsemble {
    pub config: EnsembleConfig,
    pub truncation: FieldTruncation,
    pub f_id: String,
    /// `∫ f` on the grid, the exact mean.
    pub f_integral: Complex64,
    pub f_l1: f64,
    pub values: Vec<Complex64>,
}

/// Mean with its standard error.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub samples: usize,
    pub mean: [f64; 2],
    /// `sqrt(mean |μ - mean|² / M)`.
    pub standard_error: f64,
    pub expected: [f64; 2],
    /// `|mean - ∫f| / standard_error`.
    pub deviation_in_se: f64,
}

pub fn run_chaos_ensemble(config: &EnsembleConfig) -> Result<ChaosEnsemble> {
    let prep = config.prepare()?;
    let values = map_samples(&prep.sampler, config.seed, config.samples, config.workers, |_, g| {
        prep.functional.eval(g)
    })?;
    Ok(ChaosEnsemble {
        config: config.clone(),
        truncation: prep.sampler.truncation(),
        f_id: prep.f.hash(),
        f_integral: prep.f.integral(),
        f_l1: prep.f.l1_norm(),
        values,
    })
}

/// Complex mean with fixed pairwise association.
pub fn complex_mean(values: &[Complex64]) -> Complex64 {
    let m = values.len() as f64;
    Complex64::new(pairwise_sum_by(values, |z| z.re) / m, pairwise_sum_by(values, |z| z.im) / m)
}

/// `(mean, sqrt(mean |z - mean|² / M))`.
pub fn mean_and_se(values: &[Complex64]) -> (Complex64, f64) {
    let mean = complex_mean(values);
    let m = values.len() as f64;
    let var = pairwise_sum_by(values, |z| (z - mean).norm_sqr()) / (m - 1.0).max(1.0);
    (mean, (var / m).sqrt())
}

impl ChaosEnsemble {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn summary(&self) -> Result<EnsembleSummary> {
        if self.values.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let (mean, se) = mean_and_se(&self.values);
        let dev = (mean - self.f_integral).norm();
        Ok(EnsembleSummary {
            samples: self.values.len(),
            mean: [mean.re, mean.im],
            standard_error: se,
            expected: [self.f_integral.re, self.f_integral.im],
            deviation_in_se: if se > 0.0 { dev / se } else if dev == 0.0 { 0.0 } else { f64::INFINITY },
        })
    }

    /// Binary records `(u64 stream, f64 re, f64 im)`, little-endian, plus a
    /// JSON sidecar (same path with extension `.json`) holding the metadata.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for (i, z) in self.values.iter().enumerate() {
            out.write_all(&(i as u64).to_le_bytes())?;
            out.write_all(&z.re.to_le_bytes())?;
            out.write_all(&z.im.to_le_bytes())?;
        }
        out.flush()?;
        let sidecar = EnsembleSidecar {
            schema: ENSEMBLE_SCHEMA.into(),
            record_layout: "u64 stream, f64 re, f64 im; little-endian".into(),
            records: self.values.len(),
            config: self.config.clone(),
            truncation: self.truncation,
            f_id: self.f_id.clone(),
            f_integral: [self.f_integral.re, self.f_integral.im],
            f_l1: self.f_l1,
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: EnsembleSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        if meta.schema != ENSEMBLE_SCHEMA {
            return Err(Error::Format(format!("unknown ensemble schema {:?}", meta.schema)));
        }
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        if bytes.len() != 24 * meta.records {
            return Err(Error::Format(format!(
                "expected {} records ({} bytes), found {} bytes",
                meta.records,
                24 * meta.records,
                bytes.len()
            )));
        }
        let mut values = Vec::with_capacity(meta.records);
        for (i, rec) in bytes.chunks_exact(24).enumerate() {
            let stream = u64::from_le_bytes(rec[..8].try_into().unwrap());
            if stream != i as u64 {
                return Err(Error::Format(format!("record {i} carries stream {stream}")));
            }
            let re = f64::from_le_bytes(rec[8..16].try_into().unwrap());
            let im = f64::from_le_bytes(rec[16..24].try_into().unwrap());
            values.push(Complex64::new(re, im));
        }
        Ok(ChaosEnsemble {
            config: meta.config,
            truncation: meta.truncation,
            f_id: meta.f_id,
            f_integral: Complex64::new(meta.f_integral[0], meta.f_integral[1]),
            f_l1: meta.f_l1,
            values,
        })
    }

    /// `stream,re,im` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "stream,re,im")?;
        for (i, z) in self.values.iter().enumerate() {
            writeln!(out, "{i},{:.17e},{:.17e}", z.re, z.im)?;
        }
        Ok(())
    }
}

pub const ENSEMBLE_SCHEMA: &str = "imchaos-ensemble/1";

#[derive(Serialize, Deserialize)]
struct EnsembleSidecar {
    schema: String,
    record_layout: String,
    records: usize,
    config: EnsembleConfig,
    truncation: FieldTruncation,
    f_id: String,
    f_integral: [f64; 2],
    f_l1: f64,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

// ---------------------------------------------------------------------------
// coupled truncations

/// Monte Carlo estimate of `E|μ_N - μ_M|²` from coupled circle samples: the
/// `M`-mode field reuses the first `2N` Gaussians of each stream, so `μ_N` is
/// the truncation of the same draw.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapEstimate {
    pub modes: usize,
    pub modes_fine: usize,
    pub samples: usize,
    pub mean: f64,
    pub standard_error: f64,
}

pub fn coupled_gap(config: &EnsembleConfig, modes_fine: usize) -> Result<GapEstimate> {
    if config.field != FieldKind::Circle {
        return Err(Error::InvalidConfig("coupled truncation gaps need the circle field".into()));
    }
    let coarse = config.prepare()?;
    let fine_cfg = EnsembleConfig { modes: modes_fine, ..config.clone() };
    let fine = fine_cfg.prepare()?;
    let n = coarse.sampler.grid().len();
    let gaps = map_samples(&fine.sampler, config.seed, config.samples, config.workers, |stream, g_fine| {
        let mut scratch = coarse.sampler.scratch();
        let mut g = vec![0.0; n];
        coarse.sampler.fill(config.seed, stream, &mut scratch, &mut g);
        (coarse.functional.eval(&g) - fine.functional.eval(g_fine)).norm_sqr()
    })?;
    let m = gaps.len() as f64;
    let mean = pairwise_sum(&gaps) / m;
    let var = pairwise_sum_by(&gaps, |x| (x - mean) * (x - mean)) / (m - 1.0).max(1.0);
    Ok(GapEstimate {
        modes: config.modes,
        modes_fine,
        samples: gaps.len(),
        mean,
        standard_error: (var / m).sqrt(),
    })
}

// ---------------------------------------------------------------------------
// density

/// 2-d histogram of `(Re μ, Im μ)` on `[-R, R)²`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityGrid {
    pub radius: f64,
    pub bins: usize,
    /// Row-major, `counts[i_re * bins + i_im]`.
    pub counts: Vec<u64>,
    pub total: u64,
    pub outside: u64,
    /// `counts / (total · bin area)`.
    pub density: Vec<f64>,
}

impl DensityGrid {
    pub fn bin_width(&self) -> f64 {
        2.0 * self.radius / self.bins as f64
    }

    /// `(i_re, i_im)` of the bin containing `z`, if inside the window.
    pub fn bin_of(&self, z: Complex64) -> Option<(usize, usize)> {
        let w = self.bin_width();
        let a = ((z.re + self.radius) / w).floor();
        let b = ((z.im + self.radius) / w).floor();
        let ok = |v: f64| v >= 0.0 && v < self.bins as f64;
        (ok(a) && ok(b)).then(|| (a as usize, b as usize))
    }

    pub fn bin_centre(&self, i: usize, j: usize) -> Complex64 {
        let w = self.bin_width();
        Complex64::new(-self.radius + (i as f64 + 0.5) * w, -self.radius + (j as f64 + 0.5) * w)
    }

    pub fn density_at(&self, z: Complex64) -> Option<f64> {
        self.bin_of(z).map(|(i, j)| self.density[i * self.bins + j])
    }

    /// Smallest count over bins whose centre lies in `|z| <= r`.
    pub fn min_count_in_disc(&self, r: f64) -> Option<u64> {
        let mut min = None;
        for i in 0..self.bins {
            for j in 0..self.bins {
                if self.bin_centre(i, j).norm() <= r {
                    let c = self.counts[i * self.bins + j];
                    min = Some(min.map_or(c, |m: u64| m.min(c)));
                }
            }
        }
        min
    }

    /// Rows `re_centre,im_centre,count,density`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "re,im,count,density")?;
        for i in 0..self.bins {
            for j in 0..self.bins {
                let c = self.bin_centre(i, j);
                let k = i * self.bins + j;
                writeln!(out, "{:.17e},{:.17e},{},{:.17e}", c.re, c.im, self.counts[k], self.density[k])?;
            }
        }
        Ok(())
    }
}

pub fn density_histogram(values: &[Complex64], radius: f64, bins: usize) -> Result<DensityGrid> {
    if values.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if !(radius > 0.0 && radius.is_finite()) || bins < 2 {
        return Err(Error::InvalidConfig(format!(
            "histogram needs R > 0 and at least 2 bins, got R = {radius}, bins = {bins}"
        )));
    }
    let mut grid = DensityGrid {
        radius,
        bins,
        counts: vec![0; bins * bins],
        total: values.len() as u64,
        outside: 0,
        density: Vec::new(),
    };
    for z in values {
        match grid.bin_of(*z) {
            Some((i, j)) => grid.counts[i * bins + j] += 1,
            None => grid.outside += 1,
        }
    }
    let area = grid.bin_width() * grid.bin_width();
    grid.density = grid.counts.iter().map(|&c| c as f64 / (grid.total as f64 * area)).collect();
    Ok(grid)
}

// ---------------------------------------------------------------------------
// small balls

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    // the exact interval always contains p; guard against rounding at p = 0, 1
    ((centre - half).clamp(0.0, p), (centre + half).clamp(p, 1.0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmallBallEstimate {
    pub z0: [f64; 2],
    pub radii: Vec<f64>,
    pub total: u64,
    pub hits: Vec<u64>,
    pub probabilities: Vec<f64>,
    /// `r^{-2} P̂`.
    pub estimates: Vec<f64>,
    /// Wilson 95% interval of `r^{-2} P`, per radius.
    pub ci: Vec<[f64; 2]>,
}

impl SmallBallEstimate {
    /// Whether the intervals of radii `i` and `j` intersect.
    pub fn overlap(&self, i: usize, j: usize) -> bool {
        self.ci[i][0] <= self.ci[j][1] && self.ci[j][0] <= self.ci[i][1]
    }
}

/// Default small-ball radii.
pub const DEFAULT_RADII: [f64; 3] = [0.4, 0.2, 0.1];

pub fn small_ball(values: &[Complex64], z0: Complex64, radii: &[f64]) -> Result<SmallBallEstimate> {
    if values.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidConfig("radii must be positive and strictly decreasing".into()));
    }
    let total = values.len() as u64;
    let mut hits = vec![0u64; radii.len()];
    for z in values {
        let d = (z - z0).norm();
        for (h, r) in hits.iter_mut().zip(radii) {
            if d < *r {
                *h += 1;
            }
        }
    }
    let mut out = SmallBallEstimate {
        z0: [z0.re, z0.im],
        radii: radii.to_vec(),
        total,
        hits: hits.clone(),
        probabilities: Vec::new(),
        estimates: Vec::new(),
        ci: Vec::new(),
    };
    for (k, r) in hits.iter().zip(radii) {
        let p = *k as f64 / total as f64;
        let (lo, hi) = wilson_interval(*k, total, Z95);
        let s = 1.0 / (r * r);
        out.probabilities.push(p);
        out.estimates.push(p * s);
        out.ci.push([lo * s, hi * s]);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// moments

pub const DIVERGENT_SUSPECT: &str = "divergent-suspect";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentRow {
    pub p: f64,
    /// `(1/M') Σ |μ_i|^p` over each prefix.
    pub values: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// `values[k+1] / values[k]`.
    pub growth: Vec<f64>,
    /// Samples with `μ = 0` left out (negative `p` only), per prefix.
    pub excluded: Vec<u64>,
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentReport {
    pub prefixes: Vec<usize>,
    pub rows: Vec<MomentRow>,
}

impl MomentReport {
    pub fn row(&self, p: f64) -> Option<&MomentRow> {
        self.rows.iter().find(|r| r.p == p)
    }
}

/// `10³, 10⁴, …` up to `m`, then `m` itself.
pub fn default_prefixes(m: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut k = 1000usize;
    while k < m {
        out.push(k);
        k *= 10;
    }
    out.push(m);
    out
}

/// Moment estimates over nested prefixes.
///
/// A row with `p <= -2` is flagged `divergent-suspect` when its estimates
/// never decrease from one prefix to the next and the last exceeds twice the
/// first.
pub fn moment_estimate(values: &[Complex64], ps: &[f64], prefixes: Option<&[usize]>) -> Result<MomentReport> {
    if values.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let prefixes = match prefixes {
        Some(p) => {
            if p.is_empty() || p.iter().any(|&k| k == 0 || k > values.len()) || p.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidConfig(format!(
                    "prefixes must be increasing and within 1..={}",
                    values.len()
                )));
            }
            p.to_vec()
        }
        None => default_prefixes(values.len()),
    };
    let moduli: Vec<f64> = values.iter().map(|z| z.norm()).collect();
    let mut rows = Vec::with_capacity(ps.len());
    for &p in ps {
        let mut row = MomentRow {
            p,
            values: Vec::new(),
            standard_errors: Vec::new(),
            growth: Vec::new(),
            excluded: Vec::new(),
            flags: Vec::new(),
        };
        for &m in &prefixes {
            if p == 0.0 {
                row.values.push(1.0);
                row.standard_errors.push(0.0);
                row.excluded.push(0);
                continue;
            }
            let terms: Vec<f64> = moduli[..m]
                .iter()
                .filter(|&&r| p > 0.0 || r > 0.0)
                .map(|r| r.powf(p))
                .collect();
            let k = terms.len() as f64;
            let mean = pairwise_sum(&terms) / k;
            let var = pairwise_sum_by(&terms, |x| (x - mean) * (x - mean)) / (k - 1.0).max(1.0);
            row.values.push(mean);
            row.standard_errors.push((var / k).sqrt());
            row.excluded.push((m - terms.len()) as u64);
        }
        row.growth = row.values.windows(2).map(|w| w[1] / w[0]).collect();
        let monotone = row.values.windows(2).all(|w| w[1] >= w[0]);
        if p <= -2.0 && row.values.len() >= 2 && monotone && row.values[row.values.len() - 1] > 2.0 * row.values[0] {
            row.flags.push(DIVERGENT_SUSPECT.into());
        }
        rows.push(row);
    }
    Ok(MomentReport { prefixes, rows })
}

// ---------------------------------------------------------------------------
// Sobolev balls

/// `‖1_K (f :e^{iβΓ}: - 1)‖_{H^{-s}}` for each of the configured samples.
pub fn sobolev_norms(config: &EnsembleConfig, spec: &SobolevSpec) -> Result<Vec<f64>> {
    let prep = config.prepare()?;
    let grid = Arc::clone(prep.sampler.grid());
    spec.validate(grid.dim())?;
    let window = default_window(&prep.f);
    let variance = Arc::clone(prep.sampler.variance());
    let truncation = prep.sampler.truncation();
    let norms = map_samples(&prep.sampler, config.seed, config.samples, config.workers, |stream, g| {
        let sample = FieldSample {
            grid: Arc::clone(&grid),
            values: g.to_vec(),
            variance: Arc::clone(&variance),
            truncation,
            stream,
        };
        chaos_field(&prep.f, &sample, config.beta, Some(&window))
            .and_then(|field| sobolev_neg_norm(&field, &grid, spec))
    })?;
    norms.into_iter().collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SobolevBallEstimate {
    pub eta: f64,
    pub s: f64,
    pub total: u64,
    pub hits: u64,
    pub probability: f64,
    pub ci: [f64; 2],
    pub median_norm: f64,
}

/// Fraction of `norms` at most `eta`, with a Wilson interval.
pub fn ball_fraction(norms: &[f64], eta: f64, s: f64) -> Result<SobolevBallEstimate> {
    if norms.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if eta.is_nan() || eta < 0.0 {
        return Err(Error::InvalidConfig(format!("eta must be non-negative, got {eta}")));
    }
    let hits = norms.iter().filter(|&&x| x <= eta).count() as u64;
    let total = norms.len() as u64;
    let (lo, hi) = wilson_interval(hits, total, Z95);
    Ok(SobolevBallEstimate {
        eta,
        s,
        total,
        hits,
        probability: hits as f64 / total as f64,
        ci: [lo, hi],
        median_norm: median(norms),
    })
}

pub fn sobolev_ball_probability(config: &EnsembleConfig, eta: f64, spec: &SobolevSpec) -> Result<SobolevBallEstimate> {
    ball_fraction(&sobolev_norms(config, spec)?, eta, spec.s)
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

// ---------------------------------------------------------------------------
// distribution comparison

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    if lambda < 0.2 {
        // the Kolmogorov tail is 1 to double precision here; its series does not converge at 0
        return (d, 1.0);
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        p += if k % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}
