//! Quadrature over the inward-pointing unit vectors at a boundary circle.

use std::f64::consts::PI;

use crate::domain::Point;
use crate::error::{Error, Result};
use crate::metric::MetricField;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FanEntry {
    pub x: Point,
    /// Inward unit direction (in the metric).
    pub omega: Point,
    pub weight_sigma: f64,
    pub weight_mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFan {
    pub radius: f64,
    pub n_points: usize,
    pub n_dirs: usize,
    /// Entries ordered point-major: entry `a * n_dirs + b`.
    pub entries: Vec<FanEntry>,
}

/// Resolution of the arclength table used to place boundary points.
const ARC_TABLE: usize = 4096;

impl BoundaryFan {
    /// Product quadrature over the circle of `radius`: points uniform in
    /// metric arclength, directions at midpoints of a uniform partition of the
    /// inward half circle in metric angle.
    pub fn new(metric: &MetricField, radius: f64, n_points: usize, n_dirs: usize) -> Result<Self> {
        if n_points < 4 || n_dirs < 4 {
            return Err(Error::InvalidArgument(format!(
                "fan needs at least 4 points and 4 directions (got {n_points} x {n_dirs})"
            )));
        }
        let (phis, length) = arclength_nodes(metric, radius, n_points);
        let w_sigma = length / n_points as f64 * PI / n_dirs as f64;
        let mut entries = Vec::with_capacity(n_points * n_dirs);
        for phi in phis {
            let x = Point::new(phi.cos(), phi.sin()) * radius;
            let (nu, tau) = metric.circle_frame(&x);
            for b in 0..n_dirs {
                let beta = -PI / 2.0 + (b as f64 + 0.5) * PI / n_dirs as f64;
                let omega = -nu * beta.cos() + tau * beta.sin();
                entries.push(FanEntry { x, omega, weight_sigma: w_sigma, weight_mu: beta.cos() * w_sigma });
            }
        }
        Ok(Self { radius, n_points, n_dirs, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_sigma(&self) -> f64 {
        self.entries.iter().map(|e| e.weight_sigma).sum()
    }

    pub fn total_mu(&self) -> f64 {
        self.entries.iter().map(|e| e.weight_mu).sum()
    }
}

/// Polar angles of `n` points equally spaced in metric arclength, and the
/// metric length of the circle.
pub fn arclength_nodes(metric: &MetricField, radius: f64, n: usize) -> (Vec<f64>, f64) {
    let speed = |phi: f64| {
        let x = Point::new(phi.cos(), phi.sin()) * radius;
        let dx = Point::new(-phi.sin(), phi.cos()) * radius;
        metric.norm(&x, &dx)
    };
    let dphi = 2.0 * PI / ARC_TABLE as f64;
    let mut cumulative = Vec::with_capacity(ARC_TABLE + 1);
    cumulative.push(0.0);
    let mut acc = 0.0;
    for k in 0..ARC_TABLE {
        let a = k as f64 * dphi;
        // Simpson on each table cell.
        acc += dphi / 6.0 * (speed(a) + 4.0 * speed(a + 0.5 * dphi) + speed(a + dphi));
        cumulative.push(acc);
    }
    let length = acc;
    let mut phis = Vec::with_capacity(n);
    let mut cell = 0;
    for a in 0..n {
        let target = length * a as f64 / n as f64;
        while cell + 1 < ARC_TABLE && cumulative[cell + 1] < target {
            cell += 1;
        }
        let (s0, s1) = (cumulative[cell], cumulative[cell + 1]);
        let frac = if s1 > s0 { (target - s0) / (s1 - s0) } else { 0.0 };
        phis.push((cell as f64 + frac) * dphi);
    }
    (phis, length)
}
