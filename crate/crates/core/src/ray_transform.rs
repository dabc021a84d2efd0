//! The geodesic ray transform over a boundary fan.

use std::sync::Arc;

use rayon::prelude::*;
use sprs::{CsMat, TriMat};

use crate::domain::{Domain, Point, Region};
use crate::error::{Error, Result};
use crate::fan::BoundaryFan;
use crate::fields::SymTensorField;
use crate::geodesic::integrate;
use crate::metric::MetricField;

/// One transform value per fan entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RayData {
    pub fan: Arc<BoundaryFan>,
    pub values: Vec<f64>,
}

impl RayData {
    pub fn zeros(fan: Arc<BoundaryFan>) -> Self {
        let n = fan.len();
        Self { fan, values: vec![0.0; n] }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// `‖a‖²_{L²(dμ)}`.
    pub fn norm_mu(&self) -> f64 {
        inner_mu(self, self).unwrap_or(0.0).max(0.0).sqrt()
    }
}

/// `f_ij v^i v^j` from component form.
#[inline]
pub fn contract_velocity(f: &[f64; 3], v: &Point) -> f64 {
    f[0] * v.x * v.x + 2.0 * f[1] * v.x * v.y + f[2] * v.y * v.y
}

/// `If(x, ω) = ∫ f_ij(γ) γ̇^i γ̇^j dt` for every fan entry, integrated to the
/// fan's circle.
pub fn transform(metric: &MetricField, f: &SymTensorField, fan: &Arc<BoundaryFan>, step: f64) -> Result<RayData> {
    let values = fan
        .entries
        .par_iter()
        .map(|e| {
            let mut acc = 0.0;
            integrate(metric, e.x, e.omega, fan.radius, step, |w, x, v| {
                acc += w * contract_velocity(&f.interpolate(x), v);
            })?;
            Ok(acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(RayData { fan: fan.clone(), values })
}

/// `Σ_k a_k b_k weight_μ(k)`.
pub fn inner_mu(a: &RayData, b: &RayData) -> Result<f64> {
    if !(Arc::ptr_eq(&a.fan, &b.fan) || a.fan == b.fan) {
        return Err(Error::FanMismatch { left: a.fan.len(), right: b.fan.len() });
    }
    Ok(a.values.iter().zip(&b.values).zip(&a.fan.entries).map(|((x, y), e)| x * y * e.weight_mu).sum())
}

/// The transform restricted to tensors on a node set, as a sparse matrix
/// with rows indexed by fan entries and columns `3 * node + component`.
#[derive(Debug, Clone)]
pub struct RayMatrix {
    pub matrix: CsMat<f64>,
    pub transpose: CsMat<f64>,
    /// Grid node of each column triple.
    pub nodes: Vec<usize>,
    pub fan: Arc<BoundaryFan>,
}

impl RayMatrix {
    /// Columns are the nodes of `region`; interpolation weights that fall on
    /// other nodes are dropped, which matches applying the transform to
    /// fields that vanish off `region`.
    pub fn new(
        metric: &MetricField,
        domain: &Domain,
        region: Region,
        fan: &Arc<BoundaryFan>,
        step: f64,
    ) -> Result<Self> {
        let nodes = domain.region_nodes(region);
        let mut column = vec![usize::MAX; domain.len()];
        for (c, &k) in nodes.iter().enumerate() {
            column[k] = c;
        }
        let rows = fan
            .entries
            .par_iter()
            .map(|e| {
                let mut row: Vec<(usize, f64)> = Vec::new();
                integrate(metric, e.x, e.omega, fan.radius, step, |w, x, v| {
                    if let Some(st) = domain.bilinear(x) {
                        let comp = [v.x * v.x, 2.0 * v.x * v.y, v.y * v.y];
                        for (k, b) in st {
                            let c = column[k];
                            if c == usize::MAX || b == 0.0 {
                                continue;
                            }
                            for (p, cp) in comp.iter().enumerate() {
                                row.push((3 * c + p, w * b * cp));
                            }
                        }
                    }
                })?;
                row.sort_by_key(|&(c, _)| c);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
                for (c, v) in row {
                    match merged.last_mut() {
                        Some(last) if last.0 == c => last.1 += v,
                        _ => merged.push((c, v)),
                    }
                }
                Ok(merged)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut tri = TriMat::new((fan.len(), 3 * nodes.len()));
        for (r, row) in rows.iter().enumerate() {
            for &(c, v) in row {
                tri.add_triplet(r, c, v);
            }
        }
        let matrix: CsMat<f64> = tri.to_csr();
        let transpose = matrix.transpose_view().to_csr();
        Ok(Self { matrix, transpose, nodes, fan: fan.clone() })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        csr_apply(&self.matrix, x)
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        csr_apply(&self.transpose, y)
    }
}

pub(crate) fn csr_apply(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let indptr = m.indptr();
    let indptr = indptr.raw_storage();
    let indices = m.indices();
    let data = m.data();
    (0..m.rows()).into_par_iter().map(|r| (indptr[r]..indptr[r + 1]).map(|p| data[p] * x[indices[p]]).sum()).collect()
}
