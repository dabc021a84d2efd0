//! Computational domains: the unit disc `M` nested in a slightly larger
//! concentric disc `M1`, both sampled on one Cartesian grid.
//!
//! Node `(i, j)` sits at `(i h, j h)` with `|i|, |j| <= half_width`, so the
//! grid is symmetric under reflection through the origin. The grid extends a
//! few nodes past `M1` so that stencils at the outer circle never fall off
//! the array; those margin nodes are flagged [`NodeRegion::Exterior`].

use nalgebra::Vector2;

use crate::error::{Error, Result};

pub type Point = Vector2<f64>;

/// Region flag carried by every grid node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeRegion {
    /// `|x| <= radius_M`.
    Interior,
    /// `radius_M < |x| <= radius_M1`.
    Annulus,
    Exterior,
}

/// Region on which a field is defined; outside it the field holds zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    M,
    M1,
    Annulus,
    /// Every node of the grid (used for one-forms extended by zero).
    Grid,
}

impl Region {
    pub fn contains(self, flag: NodeRegion) -> bool {
        match self {
            Region::M => flag == NodeRegion::Interior,
            Region::M1 => flag != NodeRegion::Exterior,
            Region::Annulus => flag == NodeRegion::Annulus,
            Region::Grid => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::M => "M",
            Region::M1 => "M1",
            Region::Annulus => "annulus",
            Region::Grid => "grid",
        }
    }

    pub fn parse(s: &str) -> Option<Region> {
        match s {
            "M" => Some(Region::M),
            "M1" => Some(Region::M1),
            "annulus" => Some(Region::Annulus),
            "grid" => Some(Region::Grid),
            _ => None,
        }
    }
}

/// Which boundary circle a geodesic or fan refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Circle {
    M,
    M1,
}

const MARGIN: i64 = 3;
const FLAG_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    radius_m: f64,
    radius_m1: f64,
    h: f64,
    half_width: i64,
    flags: Vec<NodeRegion>,
}

impl Domain {
    pub fn new(radius_m: f64, radius_m1: f64, h: f64) -> Result<Self> {
        if !(radius_m > 0.0 && radius_m1 > radius_m && h > 0.0 && h < radius_m) {
            return Err(Error::InvalidArgument(format!(
                "domain needs 0 < h < radius_M < radius_M1 (got h={h}, radius_M={radius_m}, radius_M1={radius_m1})"
            )));
        }
        let half_width = (radius_m1 / h).ceil() as i64 + MARGIN;
        let side = (2 * half_width + 1) as usize;
        let mut flags = Vec::with_capacity(side * side);
        for j in -half_width..=half_width {
            for i in -half_width..=half_width {
                let r = ((i * i + j * j) as f64).sqrt() * h;
                let flag = if r <= radius_m + FLAG_TOL {
                    NodeRegion::Interior
                } else if r <= radius_m1 + FLAG_TOL {
                    NodeRegion::Annulus
                } else {
                    NodeRegion::Exterior
                };
                flags.push(flag);
            }
        }
        Ok(Self { radius_m, radius_m1, h, half_width, flags })
    }

    /// Unit disc inside the disc of radius 1.3.
    pub fn with_spacing(h: f64) -> Result<Self> {
        Self::new(1.0, 1.3, h)
    }

    pub fn radius_m(&self) -> f64 {
        self.radius_m
    }

    pub fn radius_m1(&self) -> f64 {
        self.radius_m1
    }

    pub fn radius(&self, circle: Circle) -> f64 {
        match circle {
            Circle::M => self.radius_m,
            Circle::M1 => self.radius_m1,
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn half_width(&self) -> i64 {
        self.half_width
    }

    /// Number of nodes along one side of the square array.
    pub fn side(&self) -> usize {
        (2 * self.half_width + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn flag(&self, idx: usize) -> NodeRegion {
        self.flags[idx]
    }

    pub fn flags(&self) -> &[NodeRegion] {
        &self.flags
    }

    pub fn in_region(&self, idx: usize, region: Region) -> bool {
        region.contains(self.flags[idx])
    }

    /// Linear index of node `(i, j)`, or `None` off the array.
    pub fn index(&self, i: i64, j: i64) -> Option<usize> {
        let n = self.half_width;
        if i < -n || i > n || j < -n || j > n {
            return None;
        }
        Some(((j + n) as usize) * self.side() + (i + n) as usize)
    }

    pub fn coords(&self, idx: usize) -> (i64, i64) {
        let side = self.side();
        let i = (idx % side) as i64 - self.half_width;
        let j = (idx / side) as i64 - self.half_width;
        (i, j)
    }

    pub fn position(&self, idx: usize) -> Point {
        let (i, j) = self.coords(idx);
        Point::new(i as f64 * self.h, j as f64 * self.h)
    }

    /// Index of the neighbour one step along `axis` (0 = x, 1 = y) in direction `dir` (+1/-1).
    pub fn neighbor(&self, idx: usize, axis: usize, dir: i64) -> Option<usize> {
        let (i, j) = self.coords(idx);
        if axis == 0 {
            self.index(i + dir, j)
        } else {
            self.index(i, j + dir)
        }
    }

    /// Nodes of a region, in storage order.
    pub fn region_nodes(&self, region: Region) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.in_region(k, region)).collect()
    }

    /// Bilinear interpolation stencil at `x`: four `(node, weight)` pairs, or
    /// `None` when `x` falls outside the array.
    pub fn bilinear(&self, x: &Point) -> Option<[(usize, f64); 4]> {
        let n = self.half_width as f64;
        let fx = x.x / self.h + n;
        let fy = x.y / self.h + n;
        let max = (2 * self.half_width) as f64;
        if !(fx >= 0.0 && fy >= 0.0 && fx < max && fy < max) {
            return None;
        }
        let i0 = fx.floor();
        let j0 = fy.floor();
        let tx = fx - i0;
        let ty = fy - j0;
        let side = self.side();
        let base = j0 as usize * side + i0 as usize;
        Some([
            (base, (1.0 - tx) * (1.0 - ty)),
            (base + 1, tx * (1.0 - ty)),
            (base + side, (1.0 - tx) * ty),
            (base + side + 1, tx * ty),
        ])
    }

    pub fn same_grid(&self, other: &Domain) -> bool {
        self.h == other.h
            && self.radius_m == other.radius_m
            && self.radius_m1 == other.radius_m1
            && self.half_width == other.half_width
    }
}
