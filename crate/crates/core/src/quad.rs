//! Quadrature, interpolation and summation helpers shared by the other modules.

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Recursion stops at depth 50; intervals that hit the limit contribute their
/// current Richardson-corrected estimate.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson over `[a, b]` after splitting into `panels` equal pieces;
/// useful when the integrand has features much narrower than `b - a`.
pub fn adaptive_simpson_panels<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    panels: usize,
    tol: f64,
) -> f64 {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let per = tol / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = if i + 1 == panels { b } else { lo + h };
            adaptive_simpson(&f, lo, hi, per)
        })
        .sum()
}

/// Composite Simpson weights for `n` equally spaced nodes with spacing `h`.
///
/// Odd `n` gets the classical 1-4-2-...-4-1 rule; even `n >= 4` closes the
/// last three intervals with Simpson's 3/8 rule. `n = 2` falls back to the
/// trapezoid rule.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        2 => vec![0.5 * h, 0.5 * h],
        3 => vec![h / 3.0, 4.0 * h / 3.0, h / 3.0],
        _ => {
            let mut w = vec![0.0; n];
            let simpson_nodes = if n % 2 == 1 { n } else { n - 3 };
            for i in 0..(simpson_nodes - 1) / 2 {
                let j = 2 * i;
                w[j] += h / 3.0;
                w[j + 1] += 4.0 * h / 3.0;
                w[j + 2] += h / 3.0;
            }
            if n % 2 == 0 {
                let j = n - 4;
                w[j] += 3.0 * h / 8.0;
                w[j + 1] += 9.0 * h / 8.0;
                w[j + 2] += 9.0 * h / 8.0;
                w[j + 3] += 3.0 * h / 8.0;
            }
            w
        }
    }
}

/// Trapezoid weights for `n` equally spaced nodes (endpoints included).
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    if n >= 1 {
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
    }
    if n == 1 {
        w[0] = 0.0;
    }
    w
}

/// Cubic (four-point Lagrange) interpolation of samples `values` taken at
/// `x0 + i * h`. Near the ends the stencil shifts inward; outside the sampled
/// range the value is extrapolated from the end stencil.
pub fn cubic_interp(values: &[f64], x0: f64, h: f64, x: f64) -> f64 {
    let n = values.len();
    match n {
        0 => return 0.0,
        1 => return values[0],
        2 | 3 => {
            let t = ((x - x0) / h).clamp(0.0, (n - 1) as f64);
            let i = (t.floor() as usize).min(n - 2);
            let s = t - i as f64;
            return values[i] * (1.0 - s) + values[i + 1] * s;
        }
        _ => {}
    }
    let t = (x - x0) / h;
    let i = (t.floor() as isize).clamp(1, n as isize - 3) as usize;
    let s = t - i as f64;
    let (p0, p1, p2, p3) = (values[i - 1], values[i], values[i + 1], values[i + 2]);
    lagrange4(p0, p1, p2, p3, s)
}

/// Cubic Lagrange interpolation through nodes at -1, 0, 1, 2 evaluated at `s`.
#[inline]
pub fn lagrange4(p0: f64, p1: f64, p2: f64, p3: f64, s: f64) -> f64 {
    let c0 = -s * (s - 1.0) * (s - 2.0) / 6.0;
    let c1 = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0;
    let c2 = -(s + 1.0) * s * (s - 2.0) / 2.0;
    let c3 = (s + 1.0) * s * (s - 1.0) / 6.0;
    c0 * p0 + c1 * p1 + c2 * p2 + c3 * p3
}

/// Cumulative integral of equally spaced samples, returned at every node
/// (first entry 0). Each interval is integrated exactly against the cubic
/// through its four nearest nodes, so the result is fourth-order accurate.
pub fn cumulative_integral(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n < 4 {
        for i in 1..n {
            out[i] = out[i - 1] + 0.5 * h * (values[i - 1] + values[i]);
        }
        return out;
    }
    for i in 1..n {
        // interval [i-1, i]
        let piece = if i == 1 {
            // nodes 0,1,2,3 with interval [0,1]
            h * (9.0 * values[0] + 19.0 * values[1] - 5.0 * values[2] + values[3]) / 24.0
        } else if i == n - 1 {
            h * (values[n - 4] - 5.0 * values[n - 3] + 19.0 * values[n - 2] + 9.0 * values[n - 1])
                / 24.0
        } else {
            h * (-values[i - 2] + 13.0 * values[i - 1] + 13.0 * values[i] - values[i + 1]) / 24.0
        };
        out[i] = out[i - 1] + piece;
    }
    out
}

/// Fixed-order pairwise summation: the association tree depends only on the
/// slice length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise sum of `f(x)` over the slice, same association tree as
/// [`pairwise_sum`].
pub fn pairwise_sum_by<T, F: Fn(&T) -> f64 + Copy>(xs: &[T], f: F) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().map(f).sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum_by(&xs[..mid], f) + pairwise_sum_by(&xs[mid..], f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_recovers_polynomials() {
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12);
        assert!((v - 0.0).abs() < 1e-12);
        let e = adaptive_simpson(|x: f64| x.exp(), 0.0, 1.0, 1e-12);
        assert!((e - (1f64.exp() - 1.0)).abs() < 1e-11);
    }

    #[test]
    fn simpson_weights_integrate_cubics_for_both_parities() {
        for n in [5usize, 6, 9, 10, 33] {
            let h = 1.0 / (n - 1) as f64;
            let w = simpson_weights(n, h);
            let total: f64 = (0..n).map(|i| w[i] * (i as f64 * h).powi(3)).sum();
            assert!((total - 0.25).abs() < 1e-13, "n={n} total={total}");
        }
    }

    #[test]
    fn cumulative_integral_is_exact_on_cubics() {
        let n = 11;
        let h = 0.1;
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * h).powi(3)).collect();
        let c = cumulative_integral(&v, h);
        for (i, ci) in c.iter().enumerate() {
            let x = i as f64 * h;
            assert!((ci - x.powi(4) / 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn cubic_interp_exact_on_cubics() {
        let v: Vec<f64> = (0..8).map(|i| (i as f64 * 0.5).powi(3) - i as f64).collect();
        let x = 1.3;
        let exact = x * x * x - x / 0.5;
        assert!((cubic_interp(&v, 0.0, 0.5, x) - exact).abs() < 1e-12);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }
}
