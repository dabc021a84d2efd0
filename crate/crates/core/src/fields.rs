//! Grid-sampled symmetric 2-tensor fields and one-forms.
//!
//! Both field types store one value per grid node and carry a validity
//! region; nodes outside the region hold exact zeros, which is how fields on
//! `M` are extended by zero to `M1`.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::domain::{Domain, Point, Region};
use crate::error::{Error, Result};
use crate::metric::Mat2;

/// Symmetric tensor stored as `(f11, f12, f22)` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    domain: Arc<Domain>,
    region: Region,
    data: Vec<[f64; 3]>,
}

/// Boundary samples of a one-form.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    pub points: Vec<Point>,
    pub values: Vec<[f64; 2]>,
    /// Largest deviation between `values` and bilinear interpolation of the
    /// grid field, recorded when the trace was attached.
    pub interpolation_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneFormField {
    domain: Arc<Domain>,
    region: Region,
    data: Vec<[f64; 2]>,
    trace: Option<BoundaryTrace>,
}

macro_rules! field_common {
    ($ty:ident, $n:expr, $kind:expr) => {
        impl $ty {
            pub fn domain(&self) -> &Arc<Domain> {
                &self.domain
            }

            pub fn region(&self) -> Region {
                self.region
            }

            pub fn data(&self) -> &[[f64; $n]] {
                &self.data
            }

            pub fn get(&self, idx: usize) -> [f64; $n] {
                self.data[idx]
            }

            /// Sets a node value; writes outside the validity region are ignored.
            pub fn set(&mut self, idx: usize, v: [f64; $n]) {
                if self.domain.in_region(idx, self.region) {
                    self.data[idx] = v;
                }
            }

            pub fn is_zero(&self) -> bool {
                self.data.iter().all(|v| v.iter().all(|c| *c == 0.0))
            }

            /// Copy with validity region `region`; values outside it are zeroed.
            pub fn restrict(&self, region: Region) -> Self {
                let mut out = self.clone();
                out.region = region;
                for (k, v) in out.data.iter_mut().enumerate() {
                    if !(self.domain.in_region(k, region) && self.domain.in_region(k, self.region)) {
                        *v = [0.0; $n];
                    }
                }
                out
            }

            /// Bilinear interpolation at `x`; zero off the grid.
            pub fn interpolate(&self, x: &Point) -> [f64; $n] {
                let mut out = [0.0; $n];
                if let Some(stencil) = self.domain.bilinear(x) {
                    for (k, w) in stencil {
                        let v = &self.data[k];
                        for c in 0..$n {
                            out[c] += w * v[c];
                        }
                    }
                }
                out
            }

            /// `self + alpha * other`, with the union of both regions when
            /// they differ.
            pub fn axpy(&self, alpha: f64, other: &Self) -> Result<Self> {
                if !self.domain.same_grid(&other.domain) {
                    return Err(Error::DomainMismatch);
                }
                let region = union(self.region, other.region);
                let mut out = self.clone();
                out.region = region;
                for (a, b) in out.data.iter_mut().zip(&other.data) {
                    for c in 0..$n {
                        a[c] += alpha * b[c];
                    }
                }
                Ok(out)
            }

            pub fn scale(&self, alpha: f64) -> Self {
                let mut out = self.clone();
                for v in out.data.iter_mut() {
                    for c in v.iter_mut() {
                        *c *= alpha;
                    }
                }
                out
            }

            /// Largest absolute component.
            pub fn max_abs(&self) -> f64 {
                self.data.iter().flatten().fold(0.0_f64, |a, v| a.max(v.abs()))
            }

            /// FIELD v1 text dump.
            pub fn dump(&self) -> String {
                dump_field($kind, &self.domain, self.region, self.data.iter().map(|v| &v[..]))
            }
        }
    };
}

field_common!(SymTensorField, 3, "tensor");
field_common!(OneFormField, 2, "oneform");

fn union(a: Region, b: Region) -> Region {
    use Region::*;
    match (a, b) {
        _ if a == b => a,
        (Grid, _) | (_, Grid) => Grid,
        _ => M1,
    }
}

impl SymTensorField {
    pub fn zeros(domain: Arc<Domain>, region: Region) -> Self {
        let n = domain.len();
        Self { domain, region, data: vec![[0.0; 3]; n] }
    }

    /// Samples `f(x) = (f11, f12, f22)` at the region's nodes.
    pub fn from_fn<F: Fn(&Point) -> [f64; 3]>(domain: Arc<Domain>, region: Region, f: F) -> Self {
        let data = (0..domain.len())
            .map(|k| if domain.in_region(k, region) { f(&domain.position(k)) } else { [0.0; 3] })
            .collect();
        Self { domain, region, data }
    }

    /// Wraps raw node data; values outside `region` are zeroed.
    pub fn from_data(domain: Arc<Domain>, region: Region, mut data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != domain.len() {
            return Err(Error::DomainMismatch);
        }
        for (k, v) in data.iter_mut().enumerate() {
            if !domain.in_region(k, region) {
                *v = [0.0; 3];
            }
        }
        Ok(Self { domain, region, data })
    }

    pub fn matrix(&self, idx: usize) -> Mat2 {
        let [a, b, c] = self.data[idx];
        Mat2::new(a, b, b, c)
    }
}

impl OneFormField {
    pub fn zeros(domain: Arc<Domain>, region: Region) -> Self {
        let n = domain.len();
        Self { domain, region, data: vec![[0.0; 2]; n], trace: None }
    }

    pub fn from_fn<F: Fn(&Point) -> [f64; 2]>(domain: Arc<Domain>, region: Region, f: F) -> Self {
        let data = (0..domain.len())
            .map(|k| if domain.in_region(k, region) { f(&domain.position(k)) } else { [0.0; 2] })
            .collect();
        Self { domain, region, data, trace: None }
    }

    pub fn from_data(domain: Arc<Domain>, region: Region, mut data: Vec<[f64; 2]>) -> Result<Self> {
        if data.len() != domain.len() {
            return Err(Error::DomainMismatch);
        }
        for (k, v) in data.iter_mut().enumerate() {
            if !domain.in_region(k, region) {
                *v = [0.0; 2];
            }
        }
        Ok(Self { domain, region, data, trace: None })
    }

    pub fn trace(&self) -> Option<&BoundaryTrace> {
        self.trace.as_ref()
    }

    /// Attaches boundary samples and records their largest deviation from
    /// the interpolated grid field.
    pub fn with_trace(mut self, points: Vec<Point>, values: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::InvalidArgument("trace points and values differ in length".into()));
        }
        let mut err: f64 = 0.0;
        for (p, v) in points.iter().zip(&values) {
            let i = self.interpolate(p);
            err = err.max((i[0] - v[0]).abs()).max((i[1] - v[1]).abs());
        }
        self.trace = Some(BoundaryTrace { points, values, interpolation_error: err });
        Ok(self)
    }
}

fn dump_field<'a, I: Iterator<Item = &'a [f64]>>(kind: &str, domain: &Domain, region: Region, values: I) -> String {
    let side = domain.side();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "FIELD v1 {kind} {side} {side} {:.16e} {:.16e} {:.16e}",
        domain.h(),
        domain.radius_m(),
        domain.radius_m1()
    );
    for (k, v) in values.enumerate() {
        if !domain.in_region(k, region) {
            continue;
        }
        let (i, j) = domain.coords(k);
        let flag = match domain.flag(k) {
            crate::domain::NodeRegion::Interior => "M",
            crate::domain::NodeRegion::Annulus => "annulus",
            crate::domain::NodeRegion::Exterior => "exterior",
        };
        let _ = write!(out, "{i} {j} {flag}");
        for c in v {
            let _ = write!(out, " {c:.16e}");
        }
        out.push('\n');
    }
    out
}
