//! Uniform spatial grids: the periodic circle, closed intervals and 2-d boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Domain {
    /// Angles `2 pi j / n`, `j = 0..n`.
    Circle { n: usize },
    /// Closed interval with both endpoints on the grid.
    Interval { lo: f64, hi: f64, n: usize },
    /// Tensor product of two closed intervals; the last coordinate varies fastest.
    Box {
        lo: [f64; 2],
        hi: [f64; 2],
        n: [usize; 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    domain: Domain,
    coords: Vec<f64>,
}

impl Grid {
    pub fn circle(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig(format!("circle grid needs n >= 2, got {n}")));
        }
        Ok(Self::build(Domain::Circle { n }))
    }

    pub fn interval(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::InvalidConfig(format!(
                "interval grid needs n >= 2 and lo < hi, got n={n}, [{lo}, {hi}]"
            )));
        }
        Ok(Self::build(Domain::Interval { lo, hi, n }))
    }

    pub fn box2(lo: [f64; 2], hi: [f64; 2], n: [usize; 2]) -> Result<Self> {
        if n[0] < 2 || n[1] < 2 || !(hi[0] > lo[0]) || !(hi[1] > lo[1]) {
            return Err(Error::InvalidConfig("degenerate box grid".into()));
        }
        Ok(Self::build(Domain::Box { lo, hi, n }))
    }

    pub fn from_domain(domain: Domain) -> Result<Self> {
        match domain {
            Domain::Circle { n } => Self::circle(n),
            Domain::Interval { lo, hi, n } => Self::interval(lo, hi, n),
            Domain::Box { lo, hi, n } => Self::box2(lo, hi, n),
        }
    }

    fn build(domain: Domain) -> Self {
        let coords = match domain {
            Domain::Circle { n } => (0..n)
                .map(|j| 2.0 * std::f64::consts::PI * j as f64 / n as f64)
                .collect(),
            Domain::Interval { lo, hi, n } => {
                let h = (hi - lo) / (n - 1) as f64;
                (0..n).map(|j| lo + j as f64 * h).collect()
            }
            Domain::Box { lo, hi, n } => {
                let h0 = (hi[0] - lo[0]) / (n[0] - 1) as f64;
                let h1 = (hi[1] - lo[1]) / (n[1] - 1) as f64;
                let mut c = Vec::with_capacity(2 * n[0] * n[1]);
                for i in 0..n[0] {
                    for j in 0..n[1] {
                        c.push(lo[0] + i as f64 * h0);
                        c.push(lo[1] + j as f64 * h1);
                    }
                }
                c
            }
        };
        Grid { domain, coords }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dim(&self) -> usize {
        match self.domain {
            Domain::Box { .. } => 2,
            _ => 1,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.domain, Domain::Circle { .. })
    }

    /// Points per axis.
    pub fn shape(&self) -> Vec<usize> {
        match self.domain {
            Domain::Circle { n } | Domain::Interval { n, .. } => vec![n],
            Domain::Box { n, .. } => n.to_vec(),
        }
    }

    /// Spacing per axis.
    pub fn spacing(&self) -> Vec<f64> {
        match self.domain {
            Domain::Circle { n } => vec![2.0 * std::f64::consts::PI / n as f64],
            Domain::Interval { lo, hi, n } => vec![(hi - lo) / (n - 1) as f64],
            Domain::Box { lo, hi, n } => vec![
                (hi[0] - lo[0]) / (n[0] - 1) as f64,
                (hi[1] - lo[1]) / (n[1] - 1) as f64,
            ],
        }
    }

    /// Smallest axis spacing.
    pub fn min_spacing(&self) -> f64 {
        self.spacing().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Lower corner per axis.
    pub fn origin(&self) -> Vec<f64> {
        match self.domain {
            Domain::Circle { .. } => vec![0.0],
            Domain::Interval { lo, .. } => vec![lo],
            Domain::Box { lo, .. } => lo.to_vec(),
        }
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim())
    }

    /// Flattened coordinates, `dim()` entries per point.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Chaos-integral weights: periodic trapezoid on the circle, composite
    /// Simpson (tensorised in 2-d) on intervals and boxes.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        match self.domain {
            Domain::Circle { n } => vec![2.0 * std::f64::consts::PI / n as f64; n],
            Domain::Interval { n, .. } => quad::simpson_weights(n, self.spacing()[0]),
            Domain::Box { n, .. } => {
                let h = self.spacing();
                tensor(&quad::simpson_weights(n[0], h[0]), &quad::simpson_weights(n[1], h[1]))
            }
        }
    }

    /// Karhunen-Loeve weights: trapezoid on every grid kind.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        match self.domain {
            Domain::Circle { n } => vec![2.0 * std::f64::consts::PI / n as f64; n],
            Domain::Interval { n, .. } => quad::trapezoid_weights(n, self.spacing()[0]),
            Domain::Box { n, .. } => {
                let h = self.spacing();
                tensor(
                    &quad::trapezoid_weights(n[0], h[0]),
                    &quad::trapezoid_weights(n[1], h[1]),
                )
            }
        }
    }

    /// Euclidean distance between two points of this grid's domain; on the
    /// circle this is the chord length between `e^{i x}` and `e^{i y}`.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.domain {
            Domain::Circle { .. } => (2.0 * (0.5 * (x[0] - y[0])).sin()).abs(),
            _ => x
                .iter()
                .zip(y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Same grid at twice the resolution (`2n - 1` points per closed axis,
    /// `2n` on the circle). Every original node stays a node.
    pub fn refined(&self) -> Grid {
        match self.domain {
            Domain::Circle { n } => Self::build(Domain::Circle { n: 2 * n }),
            Domain::Interval { lo, hi, n } => Self::build(Domain::Interval { lo, hi, n: 2 * n - 1 }),
            Domain::Box { lo, hi, n } => Self::build(Domain::Box {
                lo,
                hi,
                n: [2 * n[0] - 1, 2 * n[1] - 1],
            }),
        }
    }
}

fn tensor(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        for &y in b {
            out.push(x * y);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_integrate_constants() {
        let c = Grid::circle(64).unwrap();
        let s: f64 = c.quadrature_weights().iter().sum();
        assert!((s - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        let i = Grid::interval(0.0, 2.0, 10).unwrap();
        assert!((i.quadrature_weights().iter().sum::<f64>() - 2.0).abs() < 1e-13);
        assert!((i.trapezoid_weights().iter().sum::<f64>() - 2.0).abs() < 1e-13);
        let b = Grid::box2([0.0, 0.0], [1.0, 3.0], [5, 8]).unwrap();
        assert!((b.quadrature_weights().iter().sum::<f64>() - 3.0).abs() < 1e-12);
        assert_eq!(b.len(), 40);
        assert_eq!(b.point(9), &[0.25, 3.0 / 7.0][..]);
    }

    #[test]
    fn refinement_keeps_nodes() {
        let g = Grid::interval(0.0, 1.0, 5).unwrap();
        let r = g.refined();
        assert_eq!(r.len(), 9);
        for i in 0..5 {
            assert_eq!(g.point(i), r.point(2 * i));
        }
    }

    #[test]
    fn circle_distance_is_chord() {
        let g = Grid::circle(8).unwrap();
        let d = g.distance(&[0.0], &[std::f64::consts::PI]);
        assert!((d - 2.0).abs() < 1e-15);
    }
}
