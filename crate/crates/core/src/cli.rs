//! Command-line front end: argument parsing, validation, dispatch and report
//! emission.
//!
//! Exit codes: 0 success, 1 computational error (a JSON object
//! `{"error": kind, "message": ...}` on stdout), 2 usage error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use clap::{Args, Parser, Subcommand};
use rustfft::num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bessel::{bessel_check, phi0_compare};
use crate::chaos::{hex, second_moment_analytic, truncation_gap, MomentKernel, SobolevSpec, TestFunction};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mc::{
    ball_fraction, coupled_gap, density_histogram, load_test_function, median, moment_estimate, run_chaos_ensemble,
    small_ball, sobolev_norms, ChaosEnsemble, EnsembleConfig, FieldKind,
};
use crate::phase::{phase_for_target, verify_phase, PhaseOptions};
use crate::sampler::unit_interval;

pub const REPORT_SCHEMA: &str = "imchaos-report/1";

#[derive(Parser, Debug)]
#[command(name = "imchaos", version, about = "Imaginary multiplicative chaos simulation toolkit")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// 2-d histogram of (Re μ, Im μ).
    Density {
        #[command(flatten)]
        ens: EnsembleArgs,
        /// Half-width R of the window [-R, R]².
        #[arg(long, default_value_t = 4.0)]
        radius: f64,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        /// Also write `re,im,count,density` rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// r^{-2} P(|μ - z0| < r) with Wilson intervals.
    SmallBall {
        #[command(flatten)]
        ens: EnsembleArgs,
        #[arg(long = "z0-re", default_value_t = 0.0, allow_negative_numbers = true)]
        z0_re: f64,
        #[arg(long = "z0-im", default_value_t = 0.0, allow_negative_numbers = true)]
        z0_im: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1")]
        radii: Vec<f64>,
    },
    /// E|μ|^p over nested sample prefixes.
    Moments {
        #[command(flatten)]
        ens: EnsembleArgs,
        #[arg(long = "p", value_delimiter = ',', default_value = "-2.5,-1.5,-1,0,1,2", allow_negative_numbers = true)]
        p: Vec<f64>,
        /// Prefix sizes (default 10³, 10⁴, … and the full ensemble).
        #[arg(long, value_delimiter = ',')]
        prefixes: Option<Vec<usize>>,
    },
    /// P(‖1_K (f :e^{iβΓ}: - 1)‖_{H^{-s}} <= η).
    SobolevBall {
        #[command(flatten)]
        ens: EnsembleArgs,
        /// Ball radius; defaults to half the empirical median norm.
        #[arg(long)]
        eta: Option<f64>,
        /// Sobolev order s (default d/2 + 1/2).
        #[arg(long = "sobolev-s")]
        sobolev_s: Option<f64>,
        /// Zero-padding factor for non-periodic grids.
        #[arg(long, default_value_t = 4)]
        padding: usize,
    },
    /// Solve ∫ f e^{iβa} = z0 for a smooth phase a on [0, 1].
    PhaseSolve {
        #[arg(long, default_value = "one")]
        f: String,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        #[arg(long, default_value_t = 1025)]
        grid: usize,
        #[arg(long = "z0-re", default_value_t = 0.0, allow_negative_numbers = true)]
        z0_re: f64,
        #[arg(long = "z0-im", default_value_t = 0.0, allow_negative_numbers = true)]
        z0_im: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the `x,a` profile here.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Bessel identities and inversion of the circle map around (j0, 0).
    BesselCheck {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the finite-mode phase map with its Bessel limit.
    Phi0Check {
        #[arg(long, value_delimiter = ',', default_value = "8,32,128")]
        n0: Vec<usize>,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        /// Probe radius in s.
        #[arg(long, default_value_t = 3.0)]
        radius: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw one field realisation.
    SampleField {
        #[command(flatten)]
        ens: EnsembleArgs,
        #[arg(long, default_value_t = 0)]
        stream: u64,
        /// Also write `x,gamma,variance` rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// E|μ_N - μ_M|² analytically and from coupled samples (circle).
    TruncationGap {
        #[command(flatten)]
        ens: EnsembleArgs,
        /// Finer truncation M (default 2N).
        #[arg(long = "modes-fine")]
        modes_fine: Option<usize>,
    },
}

/// Flags shared by every ensemble-based command.
#[derive(Args, Debug, Clone)]
pub struct EnsembleArgs {
    #[arg(long, default_value = "circle")]
    pub field: String,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Truncation N (circle modes or KL eigenpairs).
    #[arg(long, default_value_t = 64)]
    pub modes: usize,
    /// Grid points (default max(256, 4N) on the circle, 256 otherwise).
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Built-in test function (one, ramp, step-sign, bump) or CSV path.
    #[arg(long, default_value = "one")]
    pub f: String,
    /// Star-scale truncation scale.
    #[arg(long, default_value_t = 4.0)]
    pub t: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Compute(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Compute(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Compute(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Compute(e.into())
    }
}

impl EnsembleArgs {
    /// Resolved configuration; out-of-range flags are usage errors naming the
    /// flag.
    fn resolve(&self, grid_modes: usize) -> std::result::Result<EnsembleConfig, Failure> {
        let field: FieldKind = self.field.parse().map_err(|_| {
            Failure::Usage(format!("--field: expected circle, star-scale or kl-grid, got {:?}", self.field))
        })?;
        let d = field.dim() as f64;
        if !(self.beta >= 0.0 && self.beta < d.sqrt()) {
            return Err(Failure::Usage(format!(
                "--beta: {} is outside [0, sqrt(d)) = [0, {}) for --field {}",
                self.beta,
                d.sqrt(),
                self.field
            )));
        }
        if self.samples == 0 {
            return Err(Failure::Usage("--samples: must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Failure::Usage("--workers: must be at least 1".into()));
        }
        if self.modes == 0 {
            return Err(Failure::Usage("--modes: must be at least 1".into()));
        }
        let grid = match (self.grid, field) {
            (Some(g), _) => g,
            (None, FieldKind::Circle) => (4 * grid_modes).max(256),
            (None, _) => 256,
        };
        if field == FieldKind::Circle && grid < 4 * grid_modes {
            return Err(Failure::Usage(format!("--grid: {grid} points alias {grid_modes} modes (need >= {})", 4 * grid_modes)));
        }
        if field != FieldKind::Circle && grid < 2 {
            return Err(Failure::Usage("--grid: need at least 2 points".into()));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Failure::Usage(format!("--t: must be finite and positive, got {}", self.t)));
        }
        if !crate::chaos::BUILTIN_FUNCTIONS.contains(&self.f.as_str()) && !Path::new(&self.f).exists() {
            return Err(Failure::Usage(format!(
                "--f: {:?} is neither a built-in ({}) nor an existing file",
                self.f,
                crate::chaos::BUILTIN_FUNCTIONS.join(", ")
            )));
        }
        Ok(EnsembleConfig {
            field,
            beta: self.beta,
            modes: self.modes,
            grid,
            samples: self.samples,
            seed: self.seed,
            workers: self.workers,
            f: self.f.clone(),
            t: self.t,
            ..Default::default()
        })
    }
}

/// Hash of the library sources compiled into this binary.
pub fn version_hash() -> &'static str {
    static HASH: OnceLock<String> = OnceLock::new();
    HASH.get_or_init(|| {
        let sources = [
            include_str!("bessel.rs"),
            include_str!("chaos.rs"),
            include_str!("cli.rs"),
            include_str!("error.rs"),
            include_str!("grid.rs"),
            include_str!("kernels.rs"),
            include_str!("mc.rs"),
            include_str!("phase.rs"),
            include_str!("quad.rs"),
            include_str!("rng.rs"),
            include_str!("sampler.rs"),
        ];
        let mut h = Sha256::new();
        for s in sources {
            h.update(s.as_bytes());
        }
        format!("{}+{}", env!("CARGO_PKG_VERSION"), &hex(&h.finalize())[..16])
    })
}

/// The embedded config omits execution-only settings (worker count, output
/// paths) so reports depend on nothing but the results-determining inputs.
fn config_json(cfg: &EnsembleConfig) -> Value {
    let mut v = serde_json::to_value(cfg).expect("config serialises");
    if let Value::Object(m) = &mut v {
        m.remove("workers");
        if cfg.field != FieldKind::StarScale {
            m.remove("t");
            m.remove("delta");
            m.remove("seed_width");
        }
    }
    v
}

fn streams_json(cfg: &EnsembleConfig) -> Value {
    json!({ "seed": cfg.seed, "first": 0, "count": cfg.samples, "rule": "sample i uses stream i" })
}

fn report(command: &str, config: Value, result: impl Serialize) -> Value {
    json!({
        "schema": REPORT_SCHEMA,
        "command": command,
        "version": version_hash(),
        "config": config,
        "result": result,
    })
}

fn ensemble_summary(ens: &ChaosEnsemble) -> Result<Value> {
    Ok(serde_json::to_value(ens.summary()?)?)
}

/// Runs one command; returns the report and its one-line summary.
fn dispatch(command: &Command) -> std::result::Result<(Value, String, Option<PathBuf>), Failure> {
    match command {
        Command::Density { ens, radius, bins, csv } => {
            if !(*radius > 0.0 && radius.is_finite()) {
                return Err(Failure::Usage(format!("--radius: must be positive, got {radius}")));
            }
            if *bins < 2 {
                return Err(Failure::Usage(format!("--bins: need at least 2, got {bins}")));
            }
            let cfg = ens.resolve(ens.modes)?;
            let e = run_chaos_ensemble(&cfg)?;
            let h = density_histogram(&e.values, *radius, *bins)?;
            if let Some(path) = csv {
                h.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))?;
            }
            let line = format!(
                "density: {} samples, {}x{} bins on [-{r}, {r}]^2, {} outside",
                h.total, h.bins, h.bins, h.outside, r = h.radius
            );
            let result = json!({
                "window": [-h.radius, h.radius],
                "bins": h.bins,
                "counts": h.counts,
                "total": h.total,
                "outside": h.outside,
                "ensemble": ensemble_summary(&e)?,
            });
            let mut c = config_json(&cfg);
            c["radius"] = json!(radius);
            c["bins"] = json!(bins);
            Ok((report("density", json!({ "ensemble": c, "streams": streams_json(&cfg) }), result), line, ens.out.clone()))
        }
        Command::SmallBall { ens, z0_re, z0_im, radii } => {
            if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Failure::Usage("--radii: must be positive and strictly decreasing".into()));
            }
            let cfg = ens.resolve(ens.modes)?;
            let e = run_chaos_ensemble(&cfg)?;
            let z0 = Complex64::new(*z0_re, *z0_im);
            let sb = small_ball(&e.values, z0, radii)?;
            let line = format!(
                "small-ball: z0 = {}{:+}i, r^-2 P = {:?}",
                z0.re,
                z0.im,
                sb.estimates
            );
            let mut result = serde_json::to_value(&sb)?;
            result["ensemble"] = ensemble_summary(&e)?;
            let mut c = config_json(&cfg);
            c["z0"] = json!([z0_re, z0_im]);
            c["radii"] = json!(radii);
            Ok((report("small-ball", json!({ "ensemble": c, "streams": streams_json(&cfg) }), result), line, ens.out.clone()))
        }
        Command::Moments { ens, p, prefixes } => {
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Failure::Usage("--p: exponents must be finite".into()));
            }
            let cfg = ens.resolve(ens.modes)?;
            if let Some(pre) = prefixes {
                if pre.is_empty() || pre.iter().any(|&k| k == 0 || k > cfg.samples) || pre.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Failure::Usage(format!(
                        "--prefixes: must be increasing and within 1..={}",
                        cfg.samples
                    )));
                }
            }
            let e = run_chaos_ensemble(&cfg)?;
            let m = moment_estimate(&e.values, p, prefixes.as_deref())?;
            let flagged: Vec<f64> = m.rows.iter().filter(|r| !r.flags.is_empty()).map(|r| r.p).collect();
            let line = format!("moments: p = {:?} over prefixes {:?}; flagged {:?}", p, m.prefixes, flagged);
            let mut result = serde_json::to_value(&m)?;
            result["ensemble"] = ensemble_summary(&e)?;
            if cfg.field == FieldKind::Circle {
                let f = load_test_function(&cfg.f, Arc::new(Grid::circle(cfg.grid)?))?;
                result["second_moment_analytic"] =
                    json!(second_moment_analytic(&f, MomentKernel::Circle { modes: Some(cfg.modes) }, cfg.beta)?);
            }
            let mut c = config_json(&cfg);
            c["p"] = json!(p);
            c["prefixes"] = json!(m.prefixes);
            Ok((report("moments", json!({ "ensemble": c, "streams": streams_json(&cfg) }), result), line, ens.out.clone()))
        }
        Command::SobolevBall { ens, eta, sobolev_s, padding } => {
            let cfg = ens.resolve(ens.modes)?;
            let d = cfg.field.dim();
            let s = sobolev_s.unwrap_or(d as f64 / 2.0 + 0.5);
            let spec = SobolevSpec::new(s, *padding, d).map_err(|e| Failure::Usage(format!("--sobolev-s/--padding: {e}")))?;
            if let Some(x) = eta {
                if x.is_nan() || *x < 0.0 {
                    return Err(Failure::Usage(format!("--eta: must be non-negative, got {x}")));
                }
            }
            let norms = sobolev_norms(&cfg, &spec)?;
            let (eta_val, rule) = match eta {
                Some(x) => (*x, "given"),
                None => (0.5 * median(&norms), "half-median"),
            };
            let est = ball_fraction(&norms, eta_val, s)?;
            let line = format!(
                "sobolev-ball: eta = {eta_val:.6}, P = {:.6} [{:.6}, {:.6}]",
                est.probability, est.ci[0], est.ci[1]
            );
            let mut c = config_json(&cfg);
            c["eta_rule"] = json!(rule);
            c["sobolev"] = serde_json::to_value(spec)?;
            Ok((report("sobolev-ball", json!({ "ensemble": c, "streams": streams_json(&cfg) }), est), line, ens.out.clone()))
        }
        Command::PhaseSolve { f, beta, grid, z0_re, z0_im, out, profile } => {
            if !(*beta > 0.0 && beta.is_finite()) {
                return Err(Failure::Usage(format!("--beta: must be positive, got {beta}")));
            }
            if *grid < 5 {
                return Err(Failure::Usage("--grid: need at least 5 points".into()));
            }
            if !crate::chaos::BUILTIN_FUNCTIONS.contains(&f.as_str()) && !Path::new(f).exists() {
                return Err(Failure::Usage(format!("--f: {f:?} is neither a built-in nor an existing file")));
            }
            let tf: TestFunction = load_test_function(f, unit_interval(*grid)?)?;
            let z0 = Complex64::new(*z0_re, *z0_im);
            let p = phase_for_target(&tf, *beta, z0, &PhaseOptions::default())?;
            let check = verify_phase(&tf, *beta, &p, z0)?;
            if let Some(path) = profile {
                p.save_csv(path)?;
            }
            let line = format!(
                "phase-solve: |z0| / ||f||_1 = {:.4}, residual {:.3e}, epsilon {:?}",
                z0.norm() / tf.l1_norm(),
                p.residual,
                p.epsilon
            );
            let mut result = serde_json::to_value(p.diagnostics())?;
            result["l1_norm"] = json!(tf.l1_norm());
            result["verify_residual"] = json!(check);
            result["oscillation"] = json!(p.oscillation(&tf));
            let config = json!({ "f": f, "f_id": tf.hash(), "beta": beta, "grid": grid, "z0": [z0_re, z0_im] });
            Ok((report("phase-solve", config, result), line, out.clone()))
        }
        Command::BesselCheck { out } => {
            let b = bessel_check()?;
            let line = format!(
                "bessel-check: det_DF = {:.12}, fd_error = {:.3e}, inversion_max_error = {:.3e}",
                b.det_df, b.fd_error, b.inversion_max_error
            );
            Ok((report("bessel-check", json!({}), b), line, out.clone()))
        }
        Command::Phi0Check { n0, beta, radius, out } => {
            if n0.is_empty() || n0.iter().any(|&n| n < 2) {
                return Err(Failure::Usage("--n0: each value must be at least 2".into()));
            }
            if !(0.0..1.0).contains(beta) {
                return Err(Failure::Usage(format!("--beta: must lie in [0, 1), got {beta}")));
            }
            if !(*radius > 0.0 && radius.is_finite()) {
                return Err(Failure::Usage(format!("--radius: must be positive, got {radius}")));
            }
            let rows = n0
                .iter()
                .map(|&n| phi0_compare(n, *beta, *radius, PHI0_RINGS, PHI0_PER_RING))
                .collect::<Result<Vec<_>>>()?;
            let errs: Vec<f64> = rows.iter().map(|r| r.sup_relative_error).collect();
            let line = format!("phi0-check: n0 = {n0:?}, sup relative error = {errs:?}");
            let config = json!({ "n0": n0, "beta": beta, "radius": radius, "rings": PHI0_RINGS, "per_ring": PHI0_PER_RING });
            Ok((report("phi0-check", config, json!({ "rows": rows })), line, out.clone()))
        }
        Command::SampleField { ens, stream, csv } => {
            let cfg = EnsembleConfig { samples: 1, ..ens.resolve(ens.modes)? };
            let prep = cfg.prepare()?;
            let sample = prep.sampler.sample(cfg.seed, *stream);
            if let Some(path) = csv {
                sample.save_csv(path)?;
            }
            let n = sample.values.len() as f64;
            let mean = sample.values.iter().sum::<f64>() / n;
            let line = format!("sample-field: {} points, stream {stream}, mean {mean:.6}", sample.values.len());
            let result = json!({
                "stream": stream,
                "truncation": sample.truncation,
                "x": sample.grid.coords(),
                "gamma": sample.values,
                "variance": &*sample.variance,
            });
            let mut c = config_json(&cfg);
            if let Value::Object(m) = &mut c {
                m.remove("samples");
                m.remove("f");
            }
            c["stream"] = json!(stream);
            Ok((report("sample-field", json!({ "field": c }), result), line, ens.out.clone()))
        }
        Command::TruncationGap { ens, modes_fine } => {
            let fine = modes_fine.unwrap_or(2 * ens.modes);
            if fine == 0 {
                return Err(Failure::Usage("--modes-fine: must be at least 1".into()));
            }
            let cfg = ens.resolve(fine.max(ens.modes))?;
            if cfg.field != FieldKind::Circle {
                return Err(Failure::Usage("--field: truncation-gap needs the circle field".into()));
            }
            let f = load_test_function(&cfg.f, Arc::new(Grid::circle(cfg.grid)?))?;
            let analytic = truncation_gap(cfg.modes, fine, &f, cfg.beta)?;
            let mc = coupled_gap(&cfg, fine)?;
            let dev = if mc.standard_error > 0.0 { (mc.mean - analytic).abs() / mc.standard_error } else { 0.0 };
            let line = format!(
                "truncation-gap: N = {}, M = {fine}: analytic {analytic:.6e}, coupled MC {:.6e} ± {:.2e}",
                cfg.modes, mc.mean, mc.standard_error
            );
            let result = json!({ "analytic": analytic, "monte_carlo": mc, "deviation_in_se": dev });
            let mut c = config_json(&cfg);
            c["modes_fine"] = json!(fine);
            Ok((report("truncation-gap", json!({ "ensemble": c, "streams": streams_json(&cfg) }), result), line, ens.out.clone()))
        }
    }
}

pub const PHI0_RINGS: usize = 12;
pub const PHI0_PER_RING: usize = 24;

/// Serialises a report exactly as it is written to disk.
pub fn render(report: &Value) -> String {
    serde_json::to_string_pretty(report).expect("report serialises") + "\n"
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Reports go to `--out` (with a one-line summary on stdout) or,
/// without `--out`, to stdout.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok((report, line, out)) => {
            let text = render(&report);
            match out {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, &text) {
                        return computational(Error::Io(e), stdout);
                    }
                    let _ = writeln!(stdout, "{line} -> {}", path.display());
                }
                None => {
                    let _ = stdout.write_all(text.as_bytes());
                }
            }
            0
        }
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}\n\nFor more information, try '--help'.");
            2
        }
        Err(Failure::Compute(e)) => computational(e, stdout),
    }
}

fn computational(e: Error, stdout: &mut dyn Write) -> i32 {
    let v = json!({ "error": e.kind(), "message": e.to_string() });
    let _ = writeln!(stdout, "{}", serde_json::to_string(&v).expect("error serialises"));
    1
}
